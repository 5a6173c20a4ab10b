//! Self-checks behind `riskbench`: minimax optimality of the Pinsker filter against
//! random search, and Monte Carlo confirmation of the analytic risk and whitening.

use helioinv_core::forward::{sample_noise, Problem, ProblemConfig};
use helioinv_core::pinsker::{
    extremal_point, fixed_point_residual, maxrisk_diagonal, pinsker_kappa, pinsker_kappa_closed_form, pointwise_risk,
    PinskerWeights,
};
use helioinv_core::spectral::{risk, rls_estimator, whiten, LChoice};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub problems: usize,
    pub candidates: usize,
    pub draws: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { problems: 200, candidates: 100_000, draws: 10_000, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub check: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl BenchRow {
    fn below(check: &str, value: f64, tolerance: f64) -> Self {
        BenchRow { check: check.into(), value, tolerance, passed: value <= tolerance }
    }
}

fn random_ellipsoid(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let mut a: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
    a.sort_by(f64::total_cmp);
    let sigma = (0..n).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
    (a, sigma, 10f64.powf(rng.random_range(-1.0..1.0)))
}

/// Largest relative fixed-point residual and bisection/closed-form disagreement.
pub fn fixed_point_check(cfg: &BenchConfig) -> CliResult<Vec<BenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut resid, mut agree) = (0.0_f64, 0.0_f64);
    for _ in 0..cfg.problems {
        let n = rng.random_range(1..=50);
        let (a, sigma, q) = random_ellipsoid(&mut rng, n);
        let k = pinsker_kappa(&a, &sigma, q)?;
        let kc = pinsker_kappa_closed_form(&a, &sigma, q)?;
        resid = resid.max(fixed_point_residual(&a, &sigma, q, k).abs() / (k * q));
        agree = agree.max((k - kc).abs() / kc);
    }
    Ok(vec![BenchRow::below("fixed-point residual", resid, 1e-10), BenchRow::below("closed-form agreement", agree, 1e-10)])
}

fn coordinate_refine(lambda: &mut [f64], f: impl Fn(&[f64]) -> f64) {
    for _ in 0..20 {
        for i in 0..lambda.len() {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let (m1, m2) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
                lambda[i] = m1;
                let f1 = f(lambda);
                lambda[i] = m2;
                let f2 = f(lambda);
                if f1 < f2 {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            lambda[i] = 0.5 * (lo + hi);
        }
    }
}

/// Largest amount by which random diagonal filters undercut the Pinsker maximal risk.
pub fn minimax_check(cfg: &BenchConfig) -> CliResult<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let problems: Vec<_> = (0..cfg.problems)
        .map(|_| {
            let n = rng.random_range(1..=5);
            (random_ellipsoid(&mut rng, n), rng.random::<u64>())
        })
        .collect();
    let gaps = problems
        .par_iter()
        .map(|((a, sigma, q), seed)| {
            let pw = PinskerWeights::new(a, sigma, pinsker_kappa(a, sigma, *q)?);
            let mr = |l: &[f64]| maxrisk_diagonal(l, a, sigma, *q);
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut best = vec![0.0; a.len()];
            let mut best_risk = f64::INFINITY;
            let mut cand = vec![0.0; a.len()];
            for _ in 0..cfg.candidates {
                cand.iter_mut().for_each(|c| *c = rng.random::<f64>());
                let r = mr(&cand);
                if r < best_risk {
                    best_risk = r;
                    best.copy_from_slice(&cand);
                }
            }
            coordinate_refine(&mut best, mr);
            Ok(pw.risk - mr(&best).min(best_risk))
        })
        .collect::<helioinv_core::Result<Vec<f64>>>()?;
    Ok(BenchRow::below("minimax oracle gap", gaps.into_iter().fold(f64::NEG_INFINITY, f64::max), 1e-9))
}

/// Fraction of random non-diagonal filters whose diagonal part fails to lower the
/// pointwise risk at its own extremal point.
pub fn diagonal_dominance_check(cfg: &BenchConfig) -> BenchRow {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd1a9);
    let mut failures = 0;
    for _ in 0..cfg.problems {
        let (a, sigma, q) = random_ellipsoid(&mut rng, 5);
        let w = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let d: Vec<f64> = (0..5).map(|i| w[(i, i)]).collect();
        let v = extremal_point(&d, &a, &sigma, q);
        let wd = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d));
        if pointwise_risk(&wd, &sigma, &v) >= pointwise_risk(&w, &sigma, &v) {
            failures += 1;
        }
    }
    BenchRow::below("diagonal filters dominate", failures as f64, 0.0)
}

/// `|empirical - analytic| / SE` for the risk of an RLS estimator on the desk problem,
/// and the largest z-score of the whitened-noise sample covariance against the identity.
pub fn monte_carlo_check(cfg: &BenchConfig) -> CliResult<Vec<BenchRow>> {
    let p = Problem::build(&ProblemConfig::desk())?;
    let wp = whiten(&p.kernels, &p.noise)?;
    let gram = p.vgrid.gram();
    let w = rls_estimator(&wp, &p.vgrid, 1e-3, LChoice::H1)?;
    let analytic = risk(&w, &p.kernels, &p.noise, &p.truth.field, &gram)?.total;
    let clean = p.clean_data();
    let probe = [p.grid.zero_index(), p.grid.zero_index() + 3, 40];
    let draws: Vec<(f64, Vec<Vec<num_complex::Complex64>>)> = (0..cfg.draws)
        .into_par_iter()
        .map(|s| {
            let noise = sample_noise(&p.noise, cfg.seed.wrapping_mul(1_000_003).wrapping_add(s as u64));
            let est = w.apply(&clean.add(&noise)?)?;
            let diff = est.sub(&p.truth.field)?;
            let err = (0..p.grid.n_freq()).map(|i| gram.x_norm_sqr(&diff.get(i))).sum::<f64>();
            let white = probe.iter().map(|&i| (&wp.inv_sqrt[i] * noise.get(i)).iter().copied().collect()).collect();
            Ok((err, white))
        })
        .collect::<helioinv_core::Result<_>>()?;
    let n = draws.len() as f64;
    let errs: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let (mean, se) = mean_se(&errs);
    let risk_z = (mean - analytic).abs() / se;
    let n_a = wp.n_a;
    let mut worst = 0.0_f64;
    for (pi, _) in probe.iter().enumerate() {
        for a in 0..n_a {
            for b in 0..n_a {
                let prods: Vec<_> = draws.iter().map(|d| d.1[pi][a] * d.1[pi][b].conj()).collect();
                let expect = if a == b { 1.0 } else { 0.0 };
                let (re, se_re) = mean_se(&prods.iter().map(|z| z.re).collect::<Vec<_>>());
                let (im, se_im) = mean_se(&prods.iter().map(|z| z.im).collect::<Vec<_>>());
                if se_re > 0.0 {
                    worst = worst.max((re - expect).abs() / se_re);
                }
                if se_im > 0.0 {
                    worst = worst.max(im.abs() / se_im);
                }
            }
        }
    }
    log::info!("risk Monte Carlo: analytic {analytic:.6e}, empirical {mean:.6e} over {n} draws");
    Ok(vec![BenchRow::below("risk Monte Carlo (SE)", risk_z, 5.0), BenchRow::below("whitening covariance (SE)", worst, 5.0)])
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn run_all(cfg: &BenchConfig) -> CliResult<Vec<BenchRow>> {
    let mut rows = fixed_point_check(cfg)?;
    rows.push(minimax_check(cfg)?);
    rows.push(diagonal_dominance_check(cfg));
    rows.extend(monte_carlo_check(cfg)?);
    Ok(rows)
}

pub fn format_table(rows: &[BenchRow]) -> String {
    let mut out = format!("{:<30} {:>14} {:>12}  status\n", "check", "value", "tolerance");
    for r in rows {
        out += &format!(
            "{:<30} {:>14.4e} {:>12.1e}  {}\n",
            r.check,
            r.value,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    out
}
