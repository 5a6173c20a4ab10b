use helioinv_core::forward::{sample_noise, Problem, ProblemConfig, SupergranuleConfig};
use helioinv_core::spectral::{risk, rls_estimator, whiten, LChoice};
use helioinv_core::StaggeredGrid;

fn small_problem() -> Problem {
    let mut cfg = ProblemConfig::desk();
    cfg.nx = 12;
    cfg.ny = 12;
    cfg.z_nodes = StaggeredGrid::graded_nodes(0.0, -8.0, 4, 1.25);
    cfg.truth = SupergranuleConfig { cell_size: 10.0, peak_horizontal: 500.0 };
    Problem::build(&cfg).unwrap()
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn analytic_risk_matches_empirical_error() {
    let p = small_problem();
    let wp = whiten(&p.kernels, &p.noise).unwrap();
    let gram = p.vgrid.gram();
    let w = rls_estimator(&wp, &p.vgrid, 1e-3, LChoice::H1).unwrap();
    let report = risk(&w, &p.kernels, &p.noise, &p.truth.field, &gram).unwrap();
    let clean = p.clean_data();
    let errors: Vec<f64> = (0..2000)
        .map(|s| {
            let est = w.apply(&clean.add(&sample_noise(&p.noise, 100 + s)).unwrap()).unwrap();
            let diff = est.sub(&p.truth.field).unwrap();
            (0..p.grid.n_freq()).map(|i| gram.x_norm_sqr(&diff.get(i))).sum()
        })
        .collect();
    let (mean, se) = mean_and_se(&errors);
    assert!((mean - report.total).abs() <= 5.0 * se, "{mean} vs {} (se {se})", report.total);
    assert!(report.bias_sq > 0.0 && report.variance > 0.0);
}

#[test]
fn whitened_noise_has_identity_covariance() {
    let p = small_problem();
    let wp = whiten(&p.kernels, &p.noise).unwrap();
    let n_a = wp.n_a;
    let draws: Vec<_> = (0..4000).map(|s| wp.whiten_data(&sample_noise(&p.noise, s)).unwrap()).collect();
    for idx in [0, 5, p.grid.zero_index(), p.grid.n_freq() - 3] {
        for a in 0..n_a {
            for b in 0..n_a {
                let prods: Vec<_> = draws.iter().map(|d| d.get(idx)[a] * d.get(idx)[b].conj()).collect();
                let expect = if a == b { 1.0 } else { 0.0 };
                let (re, se_re) = mean_and_se(&prods.iter().map(|z| z.re).collect::<Vec<_>>());
                let (im, se_im) = mean_and_se(&prods.iter().map(|z| z.im).collect::<Vec<_>>());
                assert!((re - expect).abs() <= 5.0 * se_re.max(1e-12), "({a},{b}) re {re}");
                assert!(im.abs() <= 5.0 * se_im.max(1e-12), "({a},{b}) im {im}");
            }
        }
    }
}

#[test]
fn noise_draws_are_real_fields() {
    let p = small_problem();
    let n = sample_noise(&p.noise, 3);
    assert_eq!(n.hermitian_residual(), 0.0);
    assert_eq!(sample_noise(&p.noise, 3), n);
    assert_ne!(sample_noise(&p.noise, 4), n);
}
