use helioinv_core::pinsker::{
    extremal_point, fixed_point_residual, maxrisk_diagonal, pinsker_kappa, pinsker_kappa_closed_form, pointwise_risk,
    PinskerWeights,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let mut a: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-1.0..1.5))).collect();
    a.sort_by(f64::total_cmp);
    let sigma = (0..n).map(|_| 10f64.powf(rng.random_range(-1.5..1.0))).collect();
    (a, sigma, 10f64.powf(rng.random_range(-2.0..2.0)))
}

fn worst_case(lambda: &[f64], a: &[f64], sigma: &[f64], q: f64) -> f64 {
    let mut bias = 0.0f64;
    let mut var = 0.0;
    for i in 0..a.len() {
        bias = bias.max(q * ((1.0 - lambda[i]) / a[i]).powi(2));
        var += (lambda[i] / sigma[i]).powi(2);
    }
    bias + var
}

#[test]
fn hand_cases() {
    let k = pinsker_kappa(&[1.0], &[1.0], 1.0).unwrap();
    assert!((k - 0.5).abs() <= 1e-12);
    let k = pinsker_kappa(&[1.0, 2.0], &[1.0, 1.0], 1.0).unwrap();
    assert!((k - 0.5).abs() <= 1e-12);
    let pw = PinskerWeights::new(&[1.0, 2.0], &[1.0, 1.0], k);
    assert!((pw.risk - 0.5).abs() <= 1e-12);
    assert_eq!(pw.cutoff, 1);
}

#[test]
fn bisection_agrees_with_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let (a, sigma, q) = random_problem(&mut rng, n);
        let k = pinsker_kappa(&a, &sigma, q).unwrap();
        let kc = pinsker_kappa_closed_form(&a, &sigma, q).unwrap();
        assert!((k - kc).abs() <= 1e-10 * kc);
        assert!(fixed_point_residual(&a, &sigma, q, k).abs() <= 1e-10 * k * q);
    }
}

#[test]
fn minimax_risk_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let n = rng.random_range(1..=10);
        let (a, sigma, q) = random_problem(&mut rng, n);
        let pw = PinskerWeights::new(&a, &sigma, pinsker_kappa(&a, &sigma, q).unwrap());
        let mr = maxrisk_diagonal(&pw.lambda, &a, &sigma, q);
        assert!((mr - pw.risk).abs() <= 1e-10 * pw.risk);
        assert!((worst_case(&pw.lambda, &a, &sigma, q) - mr).abs() <= 1e-12 * mr);
    }
}

#[test]
fn random_filters_do_not_beat_pinsker() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let n = rng.random_range(1..=5);
        let (a, sigma, q) = random_problem(&mut rng, n);
        let pw = PinskerWeights::new(&a, &sigma, pinsker_kappa(&a, &sigma, q).unwrap());
        for _ in 0..5000 {
            let lambda: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            assert!(worst_case(&lambda, &a, &sigma, q) >= pw.risk - 1e-9);
        }
    }
}

#[test]
fn diagonalizing_reduces_risk_at_extremal_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..200 {
        let (a, sigma, q) = random_problem(&mut rng, 5);
        let w = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let d: Vec<f64> = (0..5).map(|i| w[(i, i)]).collect();
        let wd = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.clone()));
        let v = extremal_point(&d, &a, &sigma, q);
        let sum: f64 = v.iter().zip(&a).map(|(x, al)| (al * x).powi(2)).sum();
        assert!((sum - q).abs() <= 1e-12 * q);
        assert!(pointwise_risk(&wd, &sigma, &v) < pointwise_risk(&w, &sigma, &v));
    }
}
