use helioinv_core::linalg::{max_abs, null_space, rank, CMat};
use helioinv_core::staggered::{adjointness_check, assemble_operators, FrequencyOperators};
use helioinv_core::{DensityProfile, StaggeredGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(rng: &mut ChaCha8Rng) -> StaggeredGrid {
    let nz = rng.random_range(2..=8);
    let mut z = vec![rng.random_range(-0.5..0.5)];
    for _ in 0..nz {
        let last = *z.last().unwrap();
        z.push(last - rng.random_range(0.2..3.0));
    }
    let profile = match rng.random_range(0..3) {
        0 => DensityProfile::Uniform { value: rng.random_range(0.5..2.0) },
        1 => DensityProfile::Exponential { surface: rng.random_range(0.5..2.0), scale_height: rng.random_range(1.0..6.0) },
        _ => DensityProfile::Tabulated { nodes: (0..=nz).map(|_| rng.random_range(0.1..10.0)).collect() },
    };
    StaggeredGrid::new(z, &profile).unwrap()
}

fn random_k(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let l = rng.random_range(20.0..80.0);
    let (kx, ky) = loop {
        let k = (rng.random_range(-8..=8), rng.random_range(-8..=8));
        if k != (0, 0) {
            break k;
        }
    };
    (2.0 * std::f64::consts::PI * kx as f64 / l, 2.0 * std::f64::consts::PI * ky as f64 / l)
}

fn rel(r: &CMat, a: &CMat, b: &CMat) -> f64 {
    max_abs(r) / (max_abs(a) * max_abs(b)).max(1e-300)
}

#[test]
fn compositions_vanish() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let g = random_grid(&mut rng);
        let ops = assemble_operators(&g, random_k(&mut rng));
        assert!(rel(&(&ops.div_rho * &ops.curl_sharp_rho), &ops.div_rho, &ops.curl_sharp_rho) <= 1e-12);
        assert!(rel(&(&ops.curl_rho * &ops.grad_rho), &ops.curl_rho, &ops.grad_rho) <= 1e-12);
        assert!(rel(&(&ops.div * &ops.curl_sharp), &ops.div, &ops.curl_sharp) <= 1e-12);
    }
}

#[test]
fn adjointness_holds_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let g = random_grid(&mut rng);
        let gram = g.gram();
        let ops = assemble_operators(&g, random_k(&mut rng));
        let scale = max_abs(&(gram.g_x_mat() * &ops.curl_sharp_rho)).max(max_abs(&(gram.g_v_mat() * &ops.div_rho)));
        assert!(adjointness_check(&gram, &ops) <= 1e-12 * scale);
        assert!(helioinv_core::staggered::dz_skew_residual(&g) <= 1e-12 * max_abs(&g.dz_w()).max(1.0));
    }
}

#[test]
fn divergence_and_curl_kernels_split_orthogonally() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let g = random_grid(&mut rng);
        let gram = g.gram();
        let ops = assemble_operators(&g, random_k(&mut rng));
        let nd = null_space(&ops.div_rho, 1e-10).unwrap();
        let nc = null_space(&ops.curl_rho, 1e-10).unwrap();
        assert_eq!(nd.ncols() + nc.ncols(), g.dim_x());
        let cross = nd.adjoint() * gram.g_x_mat() * &nc;
        assert!(max_abs(&cross) <= 1e-10 * max_abs(&gram.g_x_mat()));
        let both = helioinv_core::linalg::vstack(&[&ops.div_rho, &ops.curl_rho]);
        assert_eq!(rank(&both, 1e-10).unwrap(), g.dim_x());
    }
}

#[test]
fn constant_momentum_modes_at_zero_wavevector() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let g = random_grid(&mut rng);
        let ops = assemble_operators(&g, (0.0, 0.0));
        let both = helioinv_core::linalg::vstack(&[&ops.div_rho, &ops.curl_rho]);
        let common = null_space(&both, 1e-10).unwrap();
        assert_eq!(common.ncols(), 2);
        for m in g.momentum_modes() {
            let r = &both * &m;
            assert!(r.norm() <= 1e-10 * m.norm() * max_abs(&both));
            let coeff = common.adjoint() * &m;
            assert!(((&common * coeff) - &m).norm() <= 1e-10 * m.norm());
        }
    }
}

#[test]
fn projection_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..50 {
        let g = random_grid(&mut rng);
        let gram = g.gram();
        let fo = FrequencyOperators::new(&g, &gram, random_k(&mut rng));
        let p = &fo.projection.p;
        let n = g.dim_x();
        let gx = gram.g_x_mat();
        let h1 = fo.ops.g_h1(&gram);
        assert!(max_abs(&(p * p - p)) <= 1e-10);
        assert!(max_abs(&(&fo.ops.div_rho * p)) <= 1e-10 * max_abs(&fo.ops.div_rho));
        assert!(max_abs(&(p.adjoint() * &gx - &gx * p)) <= 1e-10 * max_abs(&gx));
        assert!(max_abs(&(p.adjoint() * &h1 - &h1 * p)) <= 1e-10 * max_abs(&h1));
        let q = CMat::identity(n, n) - p;
        assert!(max_abs(&(&fo.ops.curl_rho * q)) <= 1e-10 * max_abs(&fo.ops.curl_rho));
        let l = fo.ops.h1_regularizer(&gram);
        assert!(max_abs(&(l.adjoint() * &l - &h1)) <= 1e-12 * max_abs(&h1));
        assert_eq!(fo.projection.rank, null_space(&fo.ops.div_rho, 1e-10).unwrap().ncols());
    }
}

#[test]
fn zero_wavevector_projection_keeps_momentum_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..20 {
        let g = random_grid(&mut rng);
        let gram = g.gram();
        let fo = FrequencyOperators::new(&g, &gram, (0.0, 0.0));
        let p = &fo.projection.p;
        assert!(max_abs(&(p * p - p)) <= 1e-10);
        for m in g.momentum_modes() {
            assert!((p * &m - &m).norm() <= 1e-10 * m.norm());
        }
    }
}
