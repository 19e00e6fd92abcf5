use biasbench_core::hierbayes::{
    cumulative_risk, draw_input, observe, predictive, sample_ab_tasks, ABModelSpec, PosteriorState, RiskConfig,
};
use biasbench_core::{seed, Example};
use proptest::prelude::*;

/// Lower-triangular Cholesky factor of a row-major `n×n` matrix.
fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if i == j {
                assert!(s > 0.0, "matrix not positive definite");
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    l
}

/// Solves `L Lᵀ x = b`.
fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (b[i] - (0..i).map(|k| l[i * n + k] * z[k]).sum::<f64>()) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (z[i] - (i + 1..n).map(|k| l[k * n + i] * x[k]).sum::<f64>()) / l[i * n + i];
    }
    x
}

/// Parameter layout `(u_1, …, u_n, π)`: the row of coefficients of task
/// `task`'s output at `x`.
fn design_row(a: usize, b: usize, n: usize, task: usize, x: &[f64]) -> Vec<f64> {
    let mut row = vec![0.0; n * a + b];
    row[task * a..(task + 1) * a].copy_from_slice(&x[..a]);
    row[n * a..].copy_from_slice(&x[a..]);
    row
}

/// `KL(N(m1, σ²I) ‖ N(0, S))` by explicit Cholesky.
fn kl_iso_vs_full(m1: &[f64], s2: f64, cov: &[f64]) -> f64 {
    let n = m1.len();
    let l = cholesky(cov, n);
    let log_det: f64 = 2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>();
    let mut trace = 0.0;
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        trace += chol_solve(&l, n, &e)[j];
    }
    let w = chol_solve(&l, n, m1);
    let maha: f64 = m1.iter().zip(&w).map(|(a, b)| a * b).sum();
    0.5 * (s2 * trace + maha - n as f64 + log_det - n as f64 * s2.ln())
}

/// Chain-rule closed form of the cumulative risk: the KL from the true law of
/// all `n·m` outputs to the Bayes marginal, per task, averaged by Monte Carlo.
fn chain_rule_oracle(cfg: &RiskConfig, m: usize, samples: usize) -> (f64, f64) {
    let spec = cfg.spec();
    let (a, b, n) = (spec.a, spec.b, cfg.n);
    let p = n * a + b;
    let prior: Vec<f64> = (0..p).map(|i| if i < n * a { spec.tau.powi(2) } else { spec.rho.powi(2) }).collect();
    let mut vals = Vec::with_capacity(samples);
    for s in 0..samples as u64 {
        let thetas = sample_ab_tasks(&spec, n, seed::derive(991, &[s, 0])).unwrap();
        let mut rng = seed::rng(seed::derive(991, &[s, 1]));
        let rows: Vec<(usize, Vec<f64>)> = (0..m)
            .flat_map(|_| (0..n).collect::<Vec<_>>())
            .map(|task| (task, draw_input(a + b, &mut rng)))
            .collect();
        let k = rows.len();
        let phi: Vec<Vec<f64>> = rows.iter().map(|(t, x)| design_row(a, b, n, *t, x)).collect();
        let truth: Vec<f64> = rows.iter().map(|(t, x)| thetas[*t].iter().zip(x).map(|(u, v)| u * v).sum()).collect();
        let mut cov = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                cov[i * k + j] = (0..p).map(|q| phi[i][q] * prior[q] * phi[j][q]).sum::<f64>();
            }
            cov[i * k + i] += spec.sigma.powi(2);
        }
        vals.push(kl_iso_vs_full(&truth, spec.sigma.powi(2), &cov) / n as f64);
    }
    let mean = vals.iter().sum::<f64>() / samples as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
    (mean, (var / samples as f64).sqrt())
}

#[test]
fn cumulative_risk_matches_chain_rule_oracle() {
    let cfg = RiskConfig {
        a: 1,
        b: 1,
        n: 2,
        m_max: 6,
        outer_trials: 600,
        x_draws: 64,
        pi_star: Some(vec![0.0]),
        seed: 5,
        ..RiskConfig::default()
    };
    let curve = cumulative_risk(&cfg).unwrap();
    for m in [1usize, 3, 6] {
        let (oracle, se) = chain_rule_oracle(&cfg, m, 3000);
        let got = curve.cumulative[m - 1];
        let tol = 4.0 * (se.powi(2) + curve.stderr[m - 1].powi(2)).sqrt();
        assert!((got - oracle).abs() <= tol, "m={m}: curve {got} vs oracle {oracle} ± {tol}");
    }
}

#[test]
fn known_prior_curve_lies_below_unknown() {
    let base = RiskConfig { a: 1, b: 2, n: 2, m_max: 24, outer_trials: 120, x_draws: 32, seed: 8, ..RiskConfig::default() };
    let unknown = cumulative_risk(&base).unwrap();
    let known = cumulative_risk(&RiskConfig { known_prior: true, ..base }).unwrap();
    for i in 0..unknown.cumulative.len() {
        let tol = 2.0 * (unknown.stderr[i].powi(2) + known.stderr[i].powi(2)).sqrt();
        assert!(known.cumulative[i] <= unknown.cumulative[i] + tol, "m={}", i + 1);
    }
}

#[test]
fn cumulative_risk_is_non_decreasing() {
    let cfg = RiskConfig { a: 1, b: 1, n: 3, m_max: 20, outer_trials: 30, x_draws: 16, ..RiskConfig::default() };
    let curve = cumulative_risk(&cfg).unwrap();
    assert!(curve.cumulative.windows(2).all(|w| w[1] >= w[0] - 1e-6));
    assert!(curve.per_trial.iter().all(|&l| l >= -1e-6));
}

/// Batch posterior `(Λ, Λ⁻¹η)` built from scratch for the same observations.
fn batch_posterior(spec: &ABModelSpec, n: usize, data: &[Vec<Example>]) -> (Vec<f64>, Vec<f64>) {
    let (a, b) = (spec.a, spec.b);
    let p = n * a + b;
    let mut prec = vec![0.0; p * p];
    for i in 0..p {
        prec[i * p + i] = if i < n * a { spec.tau.powi(-2) } else { spec.rho.powi(-2) };
    }
    let mut eta = vec![0.0; p];
    let w = spec.sigma.powi(-2);
    for column in data {
        for (task, ex) in column.iter().enumerate() {
            let row = design_row(a, b, n, task, &ex.x);
            for i in 0..p {
                eta[i] += w * row[i] * ex.y;
                for j in 0..p {
                    prec[i * p + j] += w * row[i] * row[j];
                }
            }
        }
    }
    let l = cholesky(&prec, p);
    let mean = chol_solve(&l, p, &eta);
    let mut cov = vec![0.0; p * p];
    for j in 0..p {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        for (i, v) in chol_solve(&l, p, &e).into_iter().enumerate() {
            cov[i * p + j] = v;
        }
    }
    (mean, cov)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sequential_updates_match_batch(a in 0usize..3, b in 0usize..3, n in 1usize..4, m in 0usize..17, s in 0u64..1000) {
        prop_assume!(a + b >= 1 && n * a + b <= 12);
        let spec = ABModelSpec::unit(a, b, s);
        let thetas = sample_ab_tasks(&spec, n, s).unwrap();
        let mut rng = seed::rng(seed::derive(s, &[7]));
        let mut state = PosteriorState::prior(&spec, n, false).unwrap();
        let mut data = Vec::new();
        let probe = draw_input(a + b, &mut rng);
        let mut last_var = f64::INFINITY;
        for t in 0..m as u64 {
            let column: Vec<Example> = thetas
                .iter()
                .enumerate()
                .map(|(i, th)| observe(&spec, th, draw_input(a + b, &mut rng), seed::derive(s, &[t, i as u64])).unwrap())
                .collect();
            state.absorb(&spec, &column).unwrap();
            data.push(column);
            let (_, var) = predictive(&state, &spec, 0, &probe).unwrap();
            prop_assert!(var <= last_var + 1e-10);
            last_var = var;
        }
        let (mean, cov) = batch_posterior(&spec, n, &data);
        let p = mean.len();
        for i in 0..p {
            prop_assert!((state.mean()[i] - mean[i]).abs() < 1e-8);
            for j in 0..p {
                prop_assert!((state.covariance()[(i, j)] - cov[i * p + j]).abs() < 1e-8);
                prop_assert!((state.covariance()[(i, j)] - state.covariance()[(j, i)]).abs() < 1e-10);
            }
        }
        if p > 0 {
            let flat: Vec<f64> = (0..p * p).map(|q| state.covariance()[(q / p, q % p)]).collect();
            cholesky(&flat, p);
        }
    }
}
