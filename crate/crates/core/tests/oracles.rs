//! Library results against independent reference computations.

use barrier_iqc::analysis::{build_ms, prepare, AnalysisConfig};
use barrier_iqc::kyp::{build_g_psi, frequency_check, kyp_frequency_margin, solve_kyp_lmi, InteriorPoint, KParam, LmiProblem};
use barrier_iqc::lti::{dare_kalman, StateSpace};
use barrier_iqc::mpc::{condense, BarrierKind, BarrierProblem, ConstraintSet};
use barrier_iqc::multipliers::{assemble_k, pi_frequency, psi11, psi_realize, Multiplier, MultiplierSpec, MultiplierStructure};
use barrier_iqc::slope::{compute_m, m_grid_oracle};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn example_plant() -> StateSpace {
    AnalysisConfig::second_order_example().plant
}

fn z(omega: f64) -> Complex64 {
    Complex64::from_polar(1.0, omega)
}

#[test]
fn dc_gain_by_direct_solve() {
    // (I − A)⁻¹ = adj(I − A) / det(I − A) for the 2×2 plant
    let g = example_plant();
    let (a, b, c) = (&g.a, &g.b, &g.c);
    let m = [[1.0 - a[(0, 0)], -a[(0, 1)]], [-a[(1, 0)], 1.0 - a[(1, 1)]]];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let x = [(m[1][1] * b[0] - m[0][1] * b[1]) / det, (-m[1][0] * b[0] + m[0][0] * b[1]) / det];
    let expect = c[(0, 0)] * x[0] + c[(0, 1)] * x[1];
    let got = g.freq_response(0.0).unwrap()[(0, 0)];
    assert!((got.re - expect).abs() < 1e-10 && got.im.abs() < 1e-12);
    assert!((got.re - 38.42).abs() < 0.01);
}

#[test]
fn nyquist_response_by_polynomials() {
    // G(z) = (c₁ b₁ z + c₁(a₁₂b₂ − a₂₂b₁) + c₂(a₂₁b₁ − a₁₁b₂) + c₂ b₂ z) / (z² − tr z + det)
    let g = example_plant();
    let (a, b, c) = (&g.a, &g.b, &g.c);
    let tr = a[(0, 0)] + a[(1, 1)];
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let num1 = c[(0, 0)] * b[0] + c[(0, 1)] * b[1];
    let num0 = c[(0, 0)] * (a[(0, 1)] * b[1] - a[(1, 1)] * b[0]) + c[(0, 1)] * (a[(1, 0)] * b[0] - a[(0, 0)] * b[1]);
    for omega in [std::f64::consts::PI, 0.3, 1.7] {
        let zz = z(omega);
        let expect = (zz * num1 + num0) / (zz * zz - zz * tr + det);
        let got = g.freq_response(omega).unwrap()[(0, 0)];
        assert!((got - expect).norm() < 1e-12, "omega {omega}");
    }
}

#[test]
fn kalman_gain_matches_riccati_iteration() {
    let g = example_plant();
    let (a, c) = (&g.a, &g.c);
    let mut p = DMatrix::<f64>::identity(2, 2);
    for _ in 0..20_000 {
        let s = (c * &p * c.transpose())[(0, 0)] + 1.0;
        let apc = a * &p * c.transpose();
        p = a * &p * a.transpose() - &apc * apc.transpose() / s + DMatrix::identity(2, 2);
    }
    let s = (c * &p * c.transpose())[(0, 0)] + 1.0;
    let l = &p * c.transpose() / s;
    let obs = dare_kalman(a, c, &g.b, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
    assert!((&obs.gain - &l).amax() < 1e-9, "{} vs {}", obs.gain, l);
}

#[test]
fn condense_matches_explicit_prediction_matrices() {
    let g = example_plant();
    let (a, b) = (&g.a, &g.b);
    let horizon = 2;
    let r = 0.1;
    // x_{k+1} = A x_k + B u_k stacked over the horizon
    let mut gamma = DMatrix::zeros(2 * horizon, horizon);
    let mut omega = DMatrix::zeros(2 * horizon, 2);
    for i in 0..horizon {
        omega.view_mut((2 * i, 0), (2, 2)).copy_from(&a.pow((i + 1) as u32));
        for j in 0..=i {
            gamma.view_mut((2 * i, j), (2, 1)).copy_from(&(a.pow((i - j) as u32) * b));
        }
    }
    let h_ref = (gamma.transpose() * &gamma + DMatrix::identity(horizon, horizon) * r) * 2.0;
    let s_ref = gamma.transpose() * &omega * 2.0;
    let (h, s) = condense(a, b, &DMatrix::identity(2, 2), &(DMatrix::identity(1, 1) * r), horizon).unwrap();
    assert!((&h - h_ref).amax() < 1e-12);
    // θ = −S x makes the unconstrained optimum H⁻¹θ the minimizer of the stacked cost
    assert!((&s - s_ref).amax() < 1e-12);
}

#[test]
fn barrier_derivatives_match_finite_differences() {
    let cfg = AnalysisConfig::second_order_example();
    let set = ConstraintSet::horizon_box(&cfg.lower, &cfg.upper, 2).unwrap();
    let h = DMatrix::identity(2, 2);
    let kinds = [BarrierKind::GradientRecentered, BarrierKind::weighted_for_pairs(&set).unwrap(), BarrierKind::relaxed_default(&set)];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in kinds {
        let p = BarrierProblem::new(h.clone(), DMatrix::zeros(2, 1), set.clone(), kind, 1.0).unwrap();
        let mut tested = 0;
        while tested < 100 {
            let u = DVector::from_fn(2, |_, _| rng.gen_range(-0.45..0.95));
            if set.slacks(&u).min() < 0.05 {
                continue;
            }
            tested += 1;
            let (_, g, hess) = p.barrier_eval(&u).unwrap();
            let step = 1e-5;
            for i in 0..2 {
                let mut e = DVector::zeros(2);
                e[i] = step;
                let (fp, gp, _) = p.barrier_eval(&(&u + &e)).unwrap();
                let (fm, gm, _) = p.barrier_eval(&(&u - &e)).unwrap();
                let dg = (fp - fm) / (2.0 * step);
                assert!((dg - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
                let dh = (gp - gm) / (2.0 * step);
                for j in 0..2 {
                    assert!((dh[j] - hess[(j, i)]).abs() <= 1e-6 * hess[(j, i)].abs().max(1.0));
                }
            }
        }
    }
}

#[test]
fn phi_matches_grid_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let h = &a * a.transpose() + DMatrix::identity(2, 2);
        let lo = [-rng.gen_range(0.2..1.0), -rng.gen_range(0.2..1.0)];
        let hi = [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)];
        let set = ConstraintSet::boxed(&lo, &hi).unwrap();
        let p = BarrierProblem::new(h.clone(), DMatrix::zeros(2, 1), set.clone(), BarrierKind::GradientRecentered, 0.5).unwrap();
        let theta = DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
        let u = p.phi_solve(&theta).unwrap();
        let steps = 600;
        let mut best = (f64::INFINITY, DVector::zeros(2));
        for i in 0..steps {
            for j in 0..steps {
                let v = DVector::from_vec(vec![
                    lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / steps as f64,
                    lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / steps as f64,
                ]);
                let (b, _, _) = p.barrier_eval(&v).unwrap();
                let f = 0.5 * v.dot(&(&h * &v)) - theta.dot(&v) + 0.5 * b;
                if f < best.0 {
                    best = (f, v);
                }
            }
        }
        let cell = (hi[0] - lo[0]).max(hi[1] - lo[1]) / steps as f64;
        assert!((&u - &best.1).amax() <= 2.0 * cell, "phi {u} grid {}", best.1);
    }
}

#[test]
fn psi_matches_grid_on_scalar_instances() {
    let set = ConstraintSet::boxed(&[-2.0], &[1.0]).unwrap();
    let p = BarrierProblem::new(DMatrix::from_element(1, 1, 0.5), DMatrix::zeros(1, 1), set, BarrierKind::GradientRecentered, 1.0).unwrap();
    for theta in [-4.0, -0.3, 0.0, 0.7, 5.0] {
        let u = p.psi_solve(&DVector::from_element(1, theta)).unwrap()[0];
        let steps = 300_000;
        let best = (0..steps)
            .map(|i| -2.0 + 3.0 * (i as f64 + 0.5) / steps as f64)
            .map(|v| {
                let b = p.barrier_eval(&DVector::from_element(1, v)).unwrap().0;
                (0.5 * v * v - theta * v + b, v)
            })
            .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a });
        assert!((u - best.1).abs() < 2e-5, "theta {theta}: {u} vs {}", best.1);
    }
}

#[test]
fn example_box_m_agrees_with_grid() {
    let prep = prepare(&AnalysisConfig::second_order_example()).unwrap();
    let m = compute_m(&prep.problem).unwrap().m;
    assert!((m - 8.0 / 2.25).abs() < 1e-12);
    let grid = m_grid_oracle(&prep.problem, 1e-3).unwrap();
    assert!(m <= grid + 1e-12 && grid - m < 1e-4);
}

#[test]
fn scalar_grid_oracle_value() {
    let set = ConstraintSet::boxed(&[-2.0], &[1.0]).unwrap();
    let p = BarrierProblem::new(DMatrix::from_element(1, 1, 0.5), DMatrix::zeros(1, 1), set, BarrierKind::GradientRecentered, 1.0).unwrap();
    let grid = m_grid_oracle(&p, 1e-4).unwrap();
    assert!((grid - 8.0 / 9.0).abs() < 1e-3);
}

#[test]
fn delay_filter_response() {
    let psi = psi11(1, 1);
    assert_eq!(psi.n_states(), 1);
    let both = psi_realize(1, 1);
    assert_eq!(both.n_states(), 2);
    for omega in [0.0, 0.4, 2.0, std::f64::consts::PI] {
        let r = psi.freq_response(omega).unwrap();
        assert!((r[(0, 0)] - 1.0).norm() < 1e-14);
        assert!((r[(1, 0)] - (1.0 - z(-omega))).norm() < 1e-14);
    }
}

#[test]
fn scalar_factorization_against_expansion() {
    // U* M θ with M = r0 + r1(1 − z) + r₋₁(1 − z⁻¹), Π = [[0, M*], [M, −2h Re M]]
    let spec = MultiplierSpec::symmetric(barrier_iqc::multipliers::MultiplierClass::ZfSiso, 1).unwrap();
    let params = DVector::from_vec(vec![0.3, 1.1, 0.6]);
    let mult = Multiplier::new(spec, MultiplierStructure::scalar(1), params).unwrap();
    let h = DMatrix::from_element(1, 1, 1.7);
    let k = assemble_k(&mult, &h).unwrap().map(Complex64::from);
    let psi = psi_realize(1, 1);
    for omega in [0.0, 0.9, 2.5] {
        let m = 1.1 + 0.6 * (1.0 - z(omega)) + 0.3 * (1.0 - z(-omega));
        let expect = DMatrix::from_row_slice(2, 2, &[Complex64::new(0.0, 0.0), m.conj(), m, Complex64::from(-2.0 * 1.7 * m.re)]);
        let pw = psi.freq_response(omega).unwrap();
        let got = pw.adjoint() * &k * &pw;
        assert!((&got - &expect).iter().all(|v| v.norm() < 1e-12), "omega {omega}");
        assert!((pi_frequency(&mult, &h, omega).unwrap() - expect).iter().all(|v| v.norm() < 1e-12));
    }
}

fn ms_block_formula(cfg: &AnalysisConfig, omega: f64) -> DMatrix<Complex64> {
    let prep = prepare(cfg).unwrap();
    let g = &cfg.plant;
    let zz = z(omega);
    let resolvent = |a: &DMatrix<f64>| {
        let m = DMatrix::<Complex64>::identity(2, 2) * zz - a.map(Complex64::from);
        m.try_inverse().unwrap()
    };
    let gw = g.c.map(Complex64::from) * resolvent(&g.a) * g.b.map(Complex64::from) * Complex64::from(cfg.kappa);
    let ro = resolvent(prep.observer.state_matrix());
    let jy = &ro * prep.observer.j_y.b.map(Complex64::from);
    let ju = &ro * g.b.map(Complex64::from);
    let mut e = DMatrix::<Complex64>::zeros(1, cfg.horizon);
    e[(0, 0)] = Complex64::from(1.0);
    let s = prep.problem.s().map(Complex64::from);
    let sb = Complex64::from(cfg.b.sqrt());
    let u_path = -&s * (&ju + &jy * &gw) * &e;
    if cfg.b == 0.0 {
        return u_path;
    }
    let n = cfg.horizon;
    let mut out = DMatrix::zeros(1 + n, 1 + n);
    out.view_mut((0, 1), (1, n)).copy_from(&(&gw * &e * sb));
    out.view_mut((1, 0), (n, 1)).copy_from(&(-&s * &jy * sb));
    out.view_mut((1, 1), (n, n)).copy_from(&u_path);
    out
}

#[test]
fn ms_matches_block_formula() {
    for (b, kappa) in [(0.0, 1.0), (0.25, 1.0), (0.1, 2.3)] {
        let mut cfg = AnalysisConfig::second_order_example();
        cfg.b = b;
        cfg.kappa = kappa;
        let prep = prepare(&cfg).unwrap();
        let ms = build_ms(&cfg, &prep).unwrap();
        for omega in [0.0, 0.2, 1.1, 3.0] {
            let got = ms.freq_response(omega).unwrap();
            let expect = ms_block_formula(&cfg, omega);
            assert!((&got - &expect).iter().all(|v| v.norm() < 1e-10), "b {b} omega {omega}");
        }
    }
}

#[test]
fn uncertainty_gain_scales_with_b() {
    let mut one = AnalysisConfig::second_order_example();
    one.b = 0.1;
    let mut two = one.clone();
    two.b = 0.2;
    let loop_gain = |cfg: &AnalysisConfig| {
        let r = ms_block_formula(cfg, 0.5);
        (r[(0, 1)] * r[(1, 0)]).norm()
    };
    assert!((loop_gain(&two) / loop_gain(&one) - 2.0).abs() < 1e-12);
}

/// Static-multiplier KYP problem for a scalar loop `θ = G U`, `U ∈ sector[0, 1/h]`.
fn static_problem(g: &StateSpace, h: f64) -> LmiProblem {
    let hm = DMatrix::from_element(1, 1, h);
    let mult = Multiplier::new(MultiplierSpec::static_sector(), MultiplierStructure::scalar(1), DVector::from_element(1, 1.0)).unwrap();
    let k = assemble_k(&mult, &hm).unwrap();
    let g_psi = build_g_psi(g, &psi_realize(1, 0)).unwrap();
    let kp = KParam { constant: DMatrix::zeros(2, 2), terms: vec![k], names: vec!["r0".into()], lower: vec![Some(1e-6)], normalized: vec![0] };
    LmiProblem::new(g_psi, kp).unwrap()
}

fn first_order(gain: f64, pole: f64) -> StateSpace {
    StateSpace::strictly_proper(DMatrix::from_element(1, 1, pole), DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, gain * (1.0 - pole)))
        .unwrap()
}

#[test]
fn small_gain_loop_is_certified() {
    let g = first_order(0.1, 0.5);
    let problem = static_problem(&g, 1.0);
    let report = solve_kyp_lmi(&problem, &InteriorPoint::default()).unwrap();
    assert!(report.feasible(), "{report:?}");
    let pi = |_: f64| Ok(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, -2.0]).map(Complex64::from));
    let (worst, _) = frequency_check(&g, pi, 512).unwrap();
    assert!(worst < 0.0);
    assert!(kyp_frequency_margin(&problem, &report, 512).unwrap() <= -report.lambda / 2.0);
}

#[test]
fn circle_criterion_violation_is_rejected() {
    let g = first_order(1.5, 0.5);
    let problem = static_problem(&g, 1.0);
    let report = solve_kyp_lmi(&problem, &InteriorPoint::default()).unwrap();
    assert!(!report.feasible(), "{report:?}");
    let pi = |_: f64| Ok(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, -2.0]).map(Complex64::from));
    let (worst, omega) = frequency_check(&g, pi, 512).unwrap();
    assert!(worst > 0.0 && omega.abs() < 1e-12);
}
