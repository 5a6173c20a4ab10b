use helioinv_core::constrained::{pinsker_constrained, rls_constrained, rls_constrained_scaled, ConstrainedPinskerPlan};
use helioinv_core::diagnostics::{averaging_kernel, averaging_kernel_div, AveragingKernel};
use helioinv_core::forward::{div_residual, Problem, ProblemConfig, SupergranuleConfig};
use helioinv_core::linalg::{max_abs, CVec};
use num_complex::Complex64;
use helioinv_core::spectral::{
    discrepancy_choose, log_grid, pinsker_estimator, rls_estimator, sola_estimator, whiten, EllipsoidSpec,
    EstimatorSet, LChoice, TargetSpec,
};
use helioinv_core::{FourierField, StaggeredGrid};

fn small_problem() -> Problem {
    let mut cfg = ProblemConfig::desk();
    cfg.nx = 16;
    cfg.ny = 16;
    cfg.z_nodes = StaggeredGrid::graded_nodes(0.0, -8.0, 5, 1.25);
    cfg.truth = SupergranuleConfig { cell_size: 12.0, peak_horizontal: 500.0 };
    Problem::build(&cfg).unwrap()
}

/// Direct periodic convolution of the truth with the space-domain averaging kernel, one row.
fn convolve_row(ak: &AveragingKernel, v: &FourierField, row: usize) -> Vec<f64> {
    let grid = ak.grid;
    let (fx, fy) = (grid.fx(), grid.fy());
    let space = v.to_space().unwrap();
    let mut out = vec![0.0; grid.n_space()];
    for col in 0..ak.dim_x {
        let k = ak.space_entry(row, col).unwrap();
        let vc = &space[col];
        for (r, o) in out.iter_mut().enumerate() {
            let (x, y) = (r % fx, r / fx);
            let mut acc = 0.0;
            for (rp, val) in vc.iter().enumerate() {
                let (xp, yp) = (rp % fx, rp / fx);
                let d = (x + fx - xp) % fx + ((y + fy - yp) % fy) * fx;
                acc += k[d] * val;
            }
            *o += acc;
        }
    }
    out
}

fn check_bias_identity(est: &EstimatorSet, p: &Problem, ak: &AveragingKernel) {
    let rec = est.apply(&p.clean_data()).unwrap().to_space().unwrap();
    let nv = p.vgrid.dim_v();
    for row in [0, nv + 2, 2 * nv + 1] {
        let oracle = convolve_row(ak, &p.truth.field, row);
        let scale = oracle.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let err = rec[row].iter().zip(&oracle).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-8 * scale, "{} row {row}: {err:e} vs {scale:e}", est.method);
    }
}

#[test]
fn reconstructions_are_averages_of_the_truth() {
    let p = small_problem();
    let wp = whiten(&p.kernels, &p.noise).unwrap();
    let rls = rls_estimator(&wp, &p.vgrid, 1e-3, LChoice::H1).unwrap();
    check_bias_identity(&rls, &p, &averaging_kernel(&rls, &p.kernels).unwrap());
    let sola = sola_estimator(&p.kernels, &p.noise, 1e-2, &TargetSpec::default()).unwrap();
    check_bias_identity(&sola, &p, &averaging_kernel(&sola, &p.kernels).unwrap());
    let (pin, _) = pinsker_estimator(&wp, &EllipsoidSpec::radius(1e4)).unwrap();
    check_bias_identity(&pin, &p, &averaging_kernel(&pin, &p.kernels).unwrap());
    let plan = ConstrainedPinskerPlan::new(&wp, &p.vgrid).unwrap();
    let (pmc, _) = pinsker_constrained(&wp, &p.vgrid, &plan, &EllipsoidSpec::radius(1e4)).unwrap();
    check_bias_identity(&pmc, &p, &averaging_kernel_div(&pmc, &p.kernels).unwrap());
}

#[test]
fn constrained_outputs_conserve_mass() {
    let p = small_problem();
    let wp = whiten(&p.kernels, &p.noise).unwrap();
    let tau = p.noisy_data(5);
    let plan = ConstrainedPinskerPlan::new(&wp, &p.vgrid).unwrap();
    let (pmc, _) = pinsker_constrained(&wp, &p.vgrid, &plan, &EllipsoidSpec::radius(1e3)).unwrap();
    assert!(div_residual(&pmc.apply(&tau).unwrap(), &p.vgrid) <= 1e-9);
    let rmc = rls_constrained(&wp, &p.vgrid, 1e-2).unwrap();
    assert!(div_residual(&rmc.apply(&tau).unwrap(), &p.vgrid) <= 1e-9);
    assert!(p.truth.div_residual(&p.vgrid) <= 1e-12);
    assert!(pmc.hermitian_residual() == 0.0 && rmc.hermitian_residual() == 0.0);
}

#[test]
fn constraint_scaling_does_not_change_the_estimator() {
    let p = small_problem();
    let wp = whiten(&p.kernels, &p.noise).unwrap();
    for alpha in [1e-4, 1e-2, 1.0] {
        let a = rls_constrained_scaled(&wp, &p.vgrid, alpha, true).unwrap();
        let b = rls_constrained_scaled(&wp, &p.vgrid, alpha, false).unwrap();
        for (x, y) in a.blocks.iter().zip(&b.blocks) {
            assert!(max_abs(&(x - y)) <= 1e-8 * max_abs(x).max(1e-300));
        }
    }
}

#[test]
fn regularizer_is_diagonal_in_the_plan_basis() {
    let p = small_problem();
    let wp = whiten(&p.kernels, &p.noise).unwrap();
    let plan = ConstrainedPinskerPlan::new(&wp, &p.vgrid).unwrap();
    let gram = p.vgrid.gram();
    for idx in wp.active_canonical().into_iter().step_by(17) {
        let fp = plan.plans[idx].as_ref().unwrap();
        let ops = helioinv_core::staggered::assemble_operators(&p.vgrid, p.grid.wavevector(p.grid.freq(idx)));
        let h1 = ops.g_h1(&gram);
        let m = fp.x.adjoint() * &h1 * &fp.x;
        let c = &fp.factors.c;
        let big = c.iter().map(|x| x * x).fold(0.0, f64::max);
        for i in 0..c.len() {
            for j in 0..c.len() {
                let expect = if i == j { c[i] * c[i] } else { 0.0 };
                assert!((m[(i, j)].re - expect).abs() <= 1e-8 * big && m[(i, j)].im.abs() <= 1e-8 * big);
            }
        }
        let div = &ops.div_rho * &fp.x;
        assert!(max_abs(&div) <= 1e-10 * max_abs(&ops.div_rho) * max_abs(&fp.x));
    }
}

#[test]
fn weak_constrained_pinsker_is_projected_least_squares() {
    let p = small_problem();
    let wp = whiten(&p.kernels, &p.noise).unwrap();
    let plan = ConstrainedPinskerPlan::new(&wp, &p.vgrid).unwrap();
    let (pmc, pw) = pinsker_constrained(&wp, &p.vgrid, &plan, &EllipsoidSpec::kappa(1e-12)).unwrap();
    assert!(pw.lambda.iter().all(|&l| l > 1.0 - 1e-9));
    let clean = p.clean_data();
    let rec = pmc.apply(&clean).unwrap();
    let (mut err, mut total) = (0.0, 0.0);
    for idx in wp.active_canonical() {
        let basis = &plan.plans[idx].as_ref().unwrap().basis;
        let kb = &wp.kernels[idx] * basis;
        let dec = helioinv_core::linalg::svd(&kb).unwrap();
        let mut y = CVec::zeros(kb.ncols());
        let data = &wp.inv_sqrt[idx] * clean.get(idx);
        for (j, &s) in dec.s.iter().enumerate() {
            if s > 1e-10 * dec.s[0] {
                y += dec.v.column(j) * (dec.u.column(j).adjoint() * &data)[(0, 0)] / Complex64::new(s, 0.0);
            }
        }
        let oracle = basis * y;
        err += (rec.get(idx) - &oracle).norm_squared();
        total += oracle.norm_squared();
    }
    assert!((err / total).sqrt() <= 1e-4, "{:e}", (err / total).sqrt());
}

#[test]
fn sola_horizontal_kernels_integrate_to_one() {
    let p = small_problem();
    let sola = sola_estimator(&p.kernels, &p.noise, 1e-1, &TargetSpec::default()).unwrap();
    let ak = averaging_kernel(&sola, &p.kernels).unwrap();
    let z = p.grid.zero_index();
    let nv = p.vgrid.dim_v();
    for beta in 0..2 {
        for row in beta * nv..(beta + 1) * nv {
            let total: f64 = (beta * nv..(beta + 1) * nv).map(|c| ak.blocks[z][(row, c)].re).sum();
            assert!((total - 1.0).abs() <= 1e-10);
        }
    }
}

#[test]
fn discrepancy_rule_lands_in_the_band() {
    let p = small_problem();
    let wp = whiten(&p.kernels, &p.noise).unwrap();
    let tau = p.noisy_data(9);
    let params = log_grid(1e-8, 1e2, 41);
    let choice =
        discrepancy_choose(&params, &tau, &wp, &p.kernels, |a| rls_estimator(&wp, &p.vgrid, a, LChoice::H1)).unwrap();
    let r = choice.residuals[choice.index];
    if choice.warning.is_none() {
        assert!(r >= choice.expected && r <= 1.2 * choice.expected);
    }
    assert!(choice.residuals.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9)));

    let clean = p.clean_data();
    let low = discrepancy_choose(&params, &clean, &wp, &p.kernels, |a| rls_estimator(&wp, &p.vgrid, a, LChoice::H1))
        .unwrap();
    assert_eq!(low.index, params.len() - 1);
    assert!(low.warning.is_some());
    assert!(discrepancy_choose(&[2.0, 1.0], &tau, &wp, &p.kernels, |a| rls_estimator(&wp, &p.vgrid, a, LChoice::H1))
        .is_err());
}

