mod common;

use common::*;
use ilp_core::flow::{fd_vectorfield, flow_with_derivative, xi_from_model};
use ilp_core::linalg::expm;
use ilp_core::models::{default_linear_drift, default_linear_noise, linear_gaussian};
use ilp_core::tracking::{
    d2xi_apply_ambient, d2xi_apply_tracking, dxi_ambient, dxi_tracking, rho, tracking_model, xi_tracking, TS2State,
};
use rand::Rng;
use ilp_core::{Matrix, Vector};
use nalgebra::Vector3;

#[test]
fn linear_flow_matches_matrix_exponential() {
    let a = default_linear_drift();
    let wired = linear_gaussian(a.clone(), default_linear_noise()).unwrap();
    let x0 = Vector::from_vec(vec![1.0, -0.5]);
    let grid = flow_with_derivative(&wired.vf, &x0, 2.0, 400).unwrap();
    let tau = grid.derivative_flow().unwrap();
    for (i, t) in grid.times.iter().enumerate() {
        let exact = expm(&(&a * *t));
        assert!((&grid.points[i] - &exact * &x0).amax() <= 1e-10);
        assert!((&tau.from_start[i] - &exact).amax() <= 1e-12);
    }
}

#[test]
fn semigroup_holds_on_a_non_commuting_model() {
    let p = reference_params();
    let wired = tracking_model(&p).unwrap();
    let x0 = states(1, 1)[0].to_vector();
    let grid = flow_with_derivative(&wired.vf, &x0, 1.0, 25).unwrap();
    let tau = grid.derivative_flow().unwrap();
    for (s, t) in [(0, 25), (3, 17), (10, 11), (0, 7)] {
        for u in s..=t {
            let composed = grid.tau_between(u, t).unwrap() * grid.tau_between(s, u).unwrap();
            let direct = grid.tau_between(s, t).unwrap();
            assert!((composed - &direct).amax() <= 1e-8 * direct.amax().max(1.0));
        }
    }
    for i in 0..=25 {
        let split = &tau.to_end[i] * &tau.from_start[i];
        assert!((split - &tau.to_end[0]).amax() <= 1e-8 * tau.to_end[0].amax());
    }
    // The transports do not commute here, so an order swap is detectable.
    let swapped = &tau.step[0] * &tau.step[1];
    let ordered = &tau.step[1] * &tau.step[0];
    assert!((swapped - ordered).amax() > 1e-8);
}

#[test]
fn tracking_flow_preserves_constraints() {
    let p = reference_params();
    let wired = tracking_model(&p).unwrap();
    for s in states(2, 5) {
        let grid = flow_with_derivative(&wired.vf, &s.to_vector(), 1.0, 1000).unwrap();
        for x in &grid.points {
            let st = TS2State::from_vector(x).unwrap();
            assert!(st.v.dot(&st.a).abs() <= 1e-6 * st.v.norm() * st.a.norm());
            assert!((st.v.norm() - SPEED).abs() <= 1e-9 * SPEED);
        }
    }
}

#[test]
fn wired_intrinsic_drift_matches_closed_form() {
    let p = reference_params();
    let wired = tracking_model(&p).unwrap();
    let from_model = xi_from_model(&wired.model);
    for s in states(4, 20) {
        let x = s.to_vector();
        let closed = xi_tracking(&s, &p).unwrap();
        let generic = from_model.eval(&x).unwrap();
        assert!((generic - &closed).amax() <= 1e-10 * closed.amax().max(1.0));
    }
}

#[test]
fn tracking_jacobian_matches_finite_differences_on_tangent_directions() {
    let p = reference_params();
    let fd = fd_vectorfield(6, move |x| xi_tracking(&TS2State::from_vector(x).unwrap(), &p).unwrap(), 1e-6);
    let mut r = rng(21);
    for s in states(6, 10) {
        let x = s.to_vector();
        let analytic = dxi_tracking(&s, &p).unwrap();
        let numeric = fd.jacobian(&x).unwrap();
        for _ in 0..4 {
            let z = constraint_tangent(&s, &mut r);
            let lhs = &analytic * &z;
            let rhs = &numeric * &z;
            assert!(rel_err(&lhs, &rhs) <= 1e-5, "{} vs {}", lhs, rhs);
        }
    }
}

#[test]
fn intrinsic_drift_is_tangent_to_constraints() {
    let p = reference_params();
    for s in states(7, 20) {
        let xi = xi_tracking(&s, &p).unwrap();
        let d = TS2State::from_vector(&xi).unwrap();
        // ζ_a·v + ζ_v·a with ζ = ξ
        assert!((d.a.dot(&s.v) + d.v.dot(&s.a)).abs() <= 1e-10 * SPEED * ACCEL);
        assert!(d.v.dot(&s.v).abs() <= 1e-10 * SPEED * ACCEL);
    }
}

#[test]
fn second_derivative_matches_rank_one_polarization() {
    let p = reference_params();
    let lambda = p.lambda_damping;
    let mut r = rng(33);
    for s in states(8, 6) {
        let fixed = fd_vectorfield(6, move |x| fixed_speed_xi(x, lambda, SPEED), 1e-4);
        let x = s.to_vector();
        let probes: Vec<Vector> = (0..4).map(|_| tangent_probe(&s, &mut r)).collect();
        let weights = [1.0, 0.5, 2.0, 0.25];
        let mut chi = Matrix::zeros(6, 6);
        for (z, w) in probes.iter().zip(weights) {
            chi += z * z.transpose() * w;
        }
        let analytic = d2xi_apply_tracking(&s, &chi).unwrap();
        let numeric = fixed.second_apply(&x, &chi).unwrap();
        assert!(rel_err(&analytic, &numeric) <= 1e-4, "{analytic} vs {numeric}");
    }
}

#[test]
fn second_derivative_on_acceleration_block_matches_full_hessian() {
    let p = reference_params();
    let fd = fd_vectorfield(6, move |x| xi_tracking(&TS2State::from_vector(x).unwrap(), &p).unwrap(), 1e-4);
    let s = TS2State::new(Vector3::new(120.0, -160.0, 0.0), Vector3::new(40.0, 30.0, 0.0));
    let mut chi = Matrix::zeros(6, 6);
    let c = nalgebra::Matrix3::new(2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5);
    chi.fixed_view_mut::<3, 3>(3, 3).copy_from(&c);
    let analytic = d2xi_apply_tracking(&s, &chi).unwrap();
    let numeric = fd.second_apply(&s.to_vector(), &chi).unwrap();
    assert!(rel_err(&analytic, &numeric) <= 1e-4);
}

fn random_symmetric(r: &mut rand_chacha::ChaCha8Rng, scale: &[f64; 6]) -> Matrix {
    let b = Matrix::from_fn(6, 6, |i, _| (r.random::<f64>() * 2.0 - 1.0) * scale[i]);
    &b * b.transpose()
}

#[test]
fn ambient_derivatives_match_full_finite_differences_off_the_constraints() {
    let p = reference_params();
    let lambda = p.lambda_damping;
    let exact = move |x: &Vector| {
        let v = Vector3::new(x[0], x[1], x[2]);
        let a = Vector3::new(x[3], x[4], x[5]);
        let s = v.norm_squared();
        let lower = -v * (a.norm_squared() / s) - (a - v * (v.dot(&a) / s)) * lambda;
        TS2State::new(a, lower).to_vector()
    };
    let fd1 = fd_vectorfield(6, exact, 1e-6);
    let fd2 = fd_vectorfield(6, exact, 1e-7);
    let mut r = rng(77);
    for _ in 0..8 {
        // Generic states: v·a ≠ 0 and ‖v‖ ≠ SPEED.
        let v = Vector3::from_fn(|_, _| (r.random::<f64>() * 2.0 - 1.0) * SPEED);
        let a = Vector3::from_fn(|_, _| (r.random::<f64>() * 2.0 - 1.0) * ACCEL);
        let s = TS2State::new(v, a);
        let x = s.to_vector();
        let jac = dxi_ambient(&s, &p).unwrap();
        assert!(rel_frob(&jac, &fd1.jacobian(&x).unwrap()) <= 1e-6);
        let chi = random_symmetric(&mut r, &[SPEED, SPEED, SPEED, ACCEL, ACCEL, ACCEL]);
        let analytic = d2xi_apply_ambient(&s, &p, &chi).unwrap();
        let numeric = fd2.second_apply(&x, &chi).unwrap();
        assert!(rel_err(&analytic, &numeric) <= 1e-5, "{analytic} vs {numeric}");
    }
}

#[test]
fn ambient_and_tangent_forms_differ_by_the_speed_curvature_term() {
    let p = reference_params();
    let mut r = rng(78);
    for s in states(9, 10) {
        let z = constraint_tangent(&s, &mut r);
        let jdiff = (dxi_ambient(&s, &p).unwrap() - dxi_tracking(&s, &p).unwrap()) * &z;
        assert!(jdiff.norm() <= 1e-9 * (dxi_tracking(&s, &p).unwrap() * &z).norm());

        let probes: Vec<Vector> = (0..3).map(|_| tangent_probe(&s, &mut r)).collect();
        let mut chi = Matrix::zeros(6, 6);
        for z in &probes {
            chi += z * z.transpose();
        }
        let tr_vv: f64 = (0..3).map(|i| chi[(i, i)]).sum();
        let extra = 2.0 * rho(&s).unwrap() * tr_vv / s.v.norm_squared();
        let expected = d2xi_apply_tracking(&s, &chi).unwrap() + TS2State::new(Vector3::zeros(), s.v * extra).to_vector();
        let ambient = d2xi_apply_ambient(&s, &p, &chi).unwrap();
        assert!(rel_err(&ambient, &expected) <= 1e-9, "{ambient} vs {expected}");
    }
}
