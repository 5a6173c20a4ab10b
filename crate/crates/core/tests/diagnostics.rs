use helioinv_core::diagnostics::{
    averaging_kernel, depth_profile, match_variance, nearest_depth, row_index, variance_map, MATCH_TOLERANCE,
};
use helioinv_core::forward::{sample_noise, Problem, ProblemConfig, SupergranuleConfig};
use helioinv_core::spectral::{
    pinsker_estimator, rls_estimator, sola_estimator, whiten, EllipsoidSpec, EstimatorSet, LChoice, TargetSpec,
};
use helioinv_core::StaggeredGrid;
use rayon::prelude::*;

fn small_problem() -> Problem {
    let mut cfg = ProblemConfig::desk();
    cfg.nx = 12;
    cfg.ny = 12;
    cfg.z_nodes = StaggeredGrid::graded_nodes(0.0, -8.0, 5, 1.25);
    cfg.truth = SupergranuleConfig { cell_size: 10.0, peak_horizontal: 500.0 };
    Problem::build(&cfg).unwrap()
}

#[test]
fn variance_map_matches_monte_carlo() {
    let p = small_problem();
    let wp = whiten(&p.kernels, &p.noise).unwrap();
    let w = rls_estimator(&wp, &p.vgrid, 1e-2, LChoice::H1).unwrap();
    let depth = nearest_depth(&p.vgrid, 2, -3.5).unwrap();
    let row = row_index(&p.vgrid, 2, depth).unwrap();
    let analytic = variance_map(&w, &p.noise, &p.vgrid, 2, depth).unwrap();
    let samples: Vec<f64> = (0..10_000u64)
        .into_par_iter()
        .map(|s| {
            let est = w.apply(&sample_noise(&p.noise, 50_000 + s)).unwrap().to_space().unwrap();
            est[row].iter().map(|x| x * x).sum::<f64>() / est[row].len() as f64
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let se = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((mean - analytic).abs() <= 5.0 * se, "{mean} vs {analytic} (se {se})");
}

#[test]
fn methods_can_be_matched_to_a_common_variance() {
    let p = small_problem();
    let wp = whiten(&p.kernels, &p.noise).unwrap();
    let depth = nearest_depth(&p.vgrid, 2, -3.5).unwrap();
    let var = |w: &EstimatorSet| variance_map(w, &p.noise, &p.vgrid, 2, depth);
    let target = var(&rls_estimator(&wp, &p.vgrid, 1e-2, LChoice::H1).unwrap()).unwrap();
    let rls = match_variance(|a| var(&rls_estimator(&wp, &p.vgrid, a, LChoice::H1)?), target, 1e-6, 1e2).unwrap();
    let sola = match_variance(
        |mu| var(&sola_estimator(&p.kernels, &p.noise, mu, &TargetSpec::default())?),
        target,
        1e-6,
        1e6,
    )
    .unwrap();
    let pinsker = match_variance(|k| var(&pinsker_estimator(&wp, &EllipsoidSpec::kappa(k))?.0), target, 1e-4, 10.0).unwrap();
    for m in [&rls, &sola, &pinsker] {
        assert!((m.variance - target).abs() <= MATCH_TOLERANCE * target, "{m:?}");
    }
    let w = pinsker_estimator(&wp, &EllipsoidSpec::kappa(pinsker.param)).unwrap().0;
    let profile = depth_profile(&averaging_kernel(&w, &p.kernels).unwrap(), &p.vgrid, 2, depth).unwrap();
    assert_eq!(profile.len(), p.vgrid.component_heights(2).len());
    assert!(profile.iter().all(|x| x.is_finite() && *x >= 0.0) && profile.iter().any(|&x| x > 0.0));
}
