use proptest::prelude::*;

use mmsivae::dataio::{emit, ingest, synthesize, StandardizationStats, SynthSpec};
use mmsivae::fusion::{FusionMethod, FusionSpec};
use mmsivae::gauss::DiagGaussian;
use mmsivae::interpret::{effect_size_maps, select_significant_dims};
use mmsivae::metrics::{bh_fdr, emd_1d};
use mmsivae::numkit::Matrix;
use mmsivae::score::{DeviationRecord, DeviationReport};

fn tiny_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        regions_per_modality: 3,
        n_reference: 6,
        n_holdout: 3,
        stage_names: vec!["s1".into()],
        stage_sizes: vec![3],
        stage_shifts: vec![1.0],
        planted_regions: vec![0],
        ..SynthSpec::default()
    }
}

fn sample(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 1..max)
}

proptest! {
    #[test]
    fn kl_is_nonnegative(
        params in prop::collection::vec((-50.0f64..50.0, -20.0f64..20.0), 1..8)
    ) {
        let (mu, logvar): (Vec<f64>, Vec<f64>) = params.into_iter().unzip();
        let q = DiagGaussian::new(mu, logvar).unwrap();
        prop_assert!(q.kl_to_std_normal() >= 0.0);
    }

    #[test]
    fn fusion_weights_sum_to_one(m in 1usize..7, prior in any::<bool>()) {
        for method in [FusionMethod::Poe, FusionMethod::Moe, FusionMethod::Mopoe] {
            let w = FusionSpec::new(method, m, prior).unwrap().weights();
            prop_assert!(w.iter().all(|&x| x > 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn emd_is_a_symmetric_translation_invariant_metric(a in sample(30), b in sample(30), t in -1e3f64..1e3) {
        let ab = emd_1d(&a, &b).unwrap();
        prop_assert_eq!(ab, emd_1d(&b, &a).unwrap());
        prop_assert_eq!(emd_1d(&a, &a).unwrap(), 0.0);
        let shift = |v: &[f64]| v.iter().map(|x| x + t).collect::<Vec<_>>();
        let shifted = emd_1d(&shift(&a), &shift(&b)).unwrap();
        prop_assert!((ab - shifted).abs() <= 1e-9 * (1.0 + ab));
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn dim_selection_ignores_row_order(
        rows in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 5), 1..20),
        thr in 0.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let mut shuffled = rows.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = select_significant_dims(&rows, thr);
        let b = select_significant_dims(&shuffled, thr);
        // summation order may move a mean across the threshold by one ulp
        let near = |j: usize| {
            let m = rows.iter().map(|r| r[j].abs()).sum::<f64>() / n as f64;
            (m - thr).abs() < 1e-12
        };
        for j in 0..5 {
            if !near(j) {
                prop_assert_eq!(a.contains(&j), b.contains(&j));
            }
        }
    }

    #[test]
    fn effect_map_flags_reproduce_from_p_values(
        z in prop::collection::vec(-3.0f64..3.0, 2 * 3 * 8),
        shift in 0.0f64..3.0,
        q in 0.01f64..0.3,
    ) {
        let header = tiny_spec(0).header();
        let cohorts: Vec<String> = (0..8).map(|i| if i < 4 { "holdout" } else { "s1" }.to_string()).collect();
        let m = Matrix::from_fn(8, 6, |i, j| z[i * 6 + j] + if i >= 4 && j % 3 == 0 { shift } else { 0.0 });
        let map = effect_size_maps(&m, &cohorts, "holdout", &["s1".to_string()], &header, q).unwrap();
        prop_assert_eq!(map.entries.len(), 6);
        for block in map.entries.chunks(3) {
            let ps: Vec<f64> = block.iter().filter_map(|e| e.p).collect();
            let flags = bh_fdr(&ps, q).unwrap();
            let got: Vec<bool> = block.iter().filter(|e| e.p.is_some()).map(|e| e.rejected).collect();
            prop_assert_eq!(got, flags);
            prop_assert!(block.iter().filter(|e| e.p.is_none()).all(|e| !e.rejected));
        }
    }

    #[test]
    fn standardize_round_trips(seed in any::<u64>()) {
        let (batch, header) = synthesize(&tiny_spec(seed)).unwrap();
        let stats = StandardizationStats::fit(&batch, header.reference_tag()).unwrap();
        let z = stats.standardize(&batch).unwrap();
        let back = stats.destandardize(&z).unwrap();
        for (x, y) in batch.modalities.iter().zip(&back.modalities) {
            for (u, v) in x.as_slice().iter().zip(y.as_slice()) {
                prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
        let reference = z.cohort(header.reference_tag());
        for m in &reference.modalities {
            for j in 0..m.cols() {
                let col: Vec<f64> = (0..m.rows()).map(|i| m.get(i, j)).collect();
                prop_assert!(col.iter().sum::<f64>().abs() < 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dataset_csv_round_trips_bitwise(
        values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 2 * 12 * 3)
    ) {
        let (mut batch, header) = synthesize(&tiny_spec(3)).unwrap();
        let n = batch.len();
        for (k, m) in batch.modalities.iter_mut().enumerate() {
            *m = Matrix::from_fn(n, 3, |i, j| values[k * n * 3 + i * 3 + j]);
        }
        let dir = tempfile::tempdir().unwrap();
        emit(dir.path(), &batch, &header).unwrap();
        let (back, header_back) = ingest(dir.path()).unwrap();
        prop_assert_eq!(header_back, header);
        for (x, y) in batch.modalities.iter().zip(&back.modalities) {
            for (u, v) in x.as_slice().iter().zip(y.as_slice()) {
                prop_assert_eq!(u.to_bits(), v.to_bits());
            }
        }
        prop_assert_eq!(back.raw_covariates, batch.raw_covariates);
    }

    #[test]
    fn deviation_report_round_trips_bitwise(
        rows in prop::collection::vec(
            (any::<f64>(), any::<f64>(), prop::collection::vec(any::<f64>(), 2), prop::collection::vec(any::<f64>(), 3)),
            1..6,
        )
    ) {
        let finite = |v: f64| if v.is_finite() { v } else { 0.5 };
        let records: Vec<DeviationRecord> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (a, b, zl, zf))| DeviationRecord {
                subject_id: format!("s{i:03}"),
                cohort: "holdout".into(),
                d_ml: finite(a).abs(),
                d_mf: finite(b).abs(),
                z_ml: zl.into_iter().map(finite).collect(),
                z_mf: zf.into_iter().map(finite).collect(),
                outlier_latent: i % 2 == 0,
                outlier_feature: i % 3 == 0,
            })
            .collect();
        let report = DeviationReport {
            p_level: 0.01,
            latent_threshold: 0.0,
            feature_threshold: 0.0,
            region_names: vec!["a".into(), "b".into(), "c".into()],
            records,
            warnings: Vec::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deviations.csv");
        std::fs::write(&path, report.to_csv().unwrap()).unwrap();
        let back = DeviationReport::read_csv(&path).unwrap();
        prop_assert_eq!(back.p_level, report.p_level);
        prop_assert_eq!(&back.region_names, &report.region_names);
        prop_assert_eq!(&back.records, &report.records);
        prop_assert_eq!(back.to_csv().unwrap(), report.to_csv().unwrap());
    }
}
