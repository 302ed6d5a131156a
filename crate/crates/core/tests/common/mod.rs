//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

pub mod checks;
pub mod cli;
pub mod grad;

/// Trapezoid rule on a uniform grid of `n` points over `[lo, hi]`.
pub fn trapezoid(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (hi - lo) / (n - 1) as f64;
    let mut s = 0.5 * (f(lo) + f(hi));
    for i in 1..n - 1 {
        s += f(lo + i as f64 * h);
    }
    s * h
}

fn normal_log_pdf(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mu) * (x - mu) / var)
}

/// `KL(N(mu, exp(logvar)) || N(0, 1))` by quadrature over `mu ± 20 sd`.
pub fn kl_quadrature_1d(mu: f64, logvar: f64) -> f64 {
    let var = logvar.exp();
    let sd = var.sqrt();
    trapezoid(mu - 20.0 * sd, mu + 20.0 * sd, 40_001, |x| {
        let lq = normal_log_pdf(x, mu, var);
        lq.exp() * (lq - normal_log_pdf(x, 0.0, 1.0))
    })
}

/// Normalized product of 1-D Gaussian densities evaluated on a grid, and the
/// largest absolute difference from `closed(x)` over that grid.
pub fn product_density_linf(experts: &[(f64, f64)], closed: impl Fn(f64) -> f64) -> f64 {
    let lo = experts
        .iter()
        .map(|&(m, v)| m - 15.0 * v.sqrt())
        .fold(f64::INFINITY, f64::min);
    let hi = experts
        .iter()
        .map(|&(m, v)| m + 15.0 * v.sqrt())
        .fold(f64::NEG_INFINITY, f64::max);
    let min_sd = experts
        .iter()
        .map(|&(_, v)| v.sqrt())
        .fold(f64::INFINITY, f64::min);
    let n = (((hi - lo) / (min_sd / 40.0)) as usize).max(2001);
    let log_prod = |x: f64| {
        experts
            .iter()
            .map(|&(m, v)| normal_log_pdf(x, m, v))
            .sum::<f64>()
    };
    let h = (hi - lo) / (n - 1) as f64;
    let peak = (0..n)
        .map(|i| log_prod(lo + i as f64 * h))
        .fold(f64::NEG_INFINITY, f64::max);
    let z = trapezoid(lo, hi, n, |x| (log_prod(x) - peak).exp());
    (0..n)
        .map(|i| {
            let x = lo + i as f64 * h;
            ((log_prod(x) - peak).exp() / z - closed(x)).abs()
        })
        .fold(0.0, f64::max)
}

/// Minimum-cost perfect matching (Hungarian algorithm with potentials).
pub fn assignment_cost(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let inf = f64::INFINITY;
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[p[j] - 1][j - 1]).sum()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Optimal transport between two uniform empirical measures with cost
/// `|x - y|`. Each atom is replicated to a common count `L = lcm(n, m)`, so
/// the transportation LP becomes an assignment problem whose polytope is
/// integral; the assignment optimum is the LP optimum.
pub fn emd_lp_oracle(a: &[f64], b: &[f64]) -> f64 {
    let l = a.len() / gcd(a.len(), b.len()) * b.len();
    let ra: Vec<f64> = a
        .iter()
        .flat_map(|&x| std::iter::repeat_n(x, l / a.len()))
        .collect();
    let rb: Vec<f64> = b
        .iter()
        .flat_map(|&y| std::iter::repeat_n(y, l / b.len()))
        .collect();
    let cost: Vec<Vec<f64>> = ra
        .iter()
        .map(|x| rb.iter().map(|y| (x - y).abs()).collect())
        .collect();
    assignment_cost(&cost) / l as f64
}

/// BH rejections from the set definition, without sorting: `H_i` is
/// rejected when some `p_j >= p_i` satisfies `#{l : p_l <= p_j} * q / m >= p_j`.
pub fn bh_brute(p: &[f64], q: f64) -> Vec<bool> {
    let m = p.len() as f64;
    p.iter()
        .map(|&pi| {
            p.iter().any(|&pj| {
                let count = p.iter().filter(|&&pl| pl <= pj).count() as f64;
                pj >= pi && count * q / m >= pj
            })
        })
        .collect()
}

/// Pearson correlation from raw sums.
pub fn pearson_definitional(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}
