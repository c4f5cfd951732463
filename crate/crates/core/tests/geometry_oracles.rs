mod common;

use std::f64::consts::FRAC_PI_2;

use approx::assert_relative_eq;
use common::*;
use ilp_core::geometry::{
    alpha, canonical_metric, check_generalized_inverse, connector, connector_from_metric, exp_map,
    sub_riemannian_splitting,
};
use ilp_core::models::polar_demo;
use ilp_core::tracking::{connector_tracking, tracking_model, TS2State};
use ilp_core::{Matrix, Vector};
use nalgebra::Vector3;

fn polar_christoffel_error(model: &ilp_core::ModelSpec, r: f64, theta: f64) -> f64 {
    let x = Vector::from_vec(vec![r, theta]);
    let c = connector(model, &x).unwrap().coeffs;
    let mut expected = ilp_core::Tensor3::zeros(2, 2);
    expected.set(0, 1, 1, -r);
    expected.set(1, 0, 1, 1.0 / r);
    expected.set(1, 1, 0, 1.0 / r);
    (0..2)
        .flat_map(|k| (0..2).flat_map(move |i| (0..2).map(move |j| (k, i, j))))
        .map(|(k, i, j)| (c.get(k, i, j) - expected.get(k, i, j)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn polar_connector_is_levi_civita_with_analytic_derivatives() {
    let wired = polar_demo(1.0, 0.7).unwrap();
    for &(r, th) in &[(0.3, 0.0), (1.0, 1.2), (2.5, -2.0), (10.0, 3.0)] {
        assert!(polar_christoffel_error(&wired.model, r, th) <= 1e-12, "r = {r}");
    }
}

#[test]
fn polar_connector_from_finite_differences() {
    let base = polar_demo(1.0, 0.7).unwrap().model;
    let s2 = 0.49;
    let fd_only = ilp_core::ModelSpec::new(
        2,
        |_| Vector::zeros(2),
        move |x| Matrix::from_diagonal(&Vector::from_vec(vec![0.7, 0.7 / x[0]])),
        move |x| Matrix::from_diagonal(&Vector::from_vec(vec![1.0 / s2, x[0] * x[0] / s2])),
    );
    for &(r, th) in &[(0.5, 0.1), (1.5, 2.0)] {
        assert!(polar_christoffel_error(&fd_only, r, th) <= 1e-6);
        assert!(polar_christoffel_error(&base, r, th) <= 1e-12);
    }
}

#[test]
fn polar_geodesic_is_a_cartesian_straight_line() {
    let wired = polar_demo(1.0, 1.0).unwrap();
    let x = Vector::from_vec(vec![1.0, 0.0]);
    let v = Vector::from_vec(vec![0.0, FRAC_PI_2]);
    let end = exp_map(&wired.model, &x, &v, 512).unwrap();
    assert_relative_eq!(end[0], (1.0 + FRAC_PI_2 * FRAC_PI_2).sqrt(), epsilon = 1e-9);
    assert_relative_eq!(end[1], FRAC_PI_2.atan(), epsilon = 1e-9);
}

#[test]
fn tracking_alpha_is_block_projector() {
    let wired = tracking_model(&reference_params()).unwrap();
    let x = TS2State::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()).to_vector();
    let a = alpha(&wired.model, &x);
    let g2 = 5.2e3f64.powi(2);
    let mut expected = Matrix::zeros(6, 6);
    expected[(4, 4)] = g2;
    expected[(5, 5)] = g2;
    assert!((a - expected).amax() <= 1e-9 * g2);
}

#[test]
fn tracking_metric_is_generalized_inverse() {
    let wired = tracking_model(&reference_params()).unwrap();
    for s in states(11, 20) {
        assert!(check_generalized_inverse(&wired.model, &s.to_vector(), 1e-10).holds);
    }
}

#[test]
fn tracking_connector_annihilates_alpha() {
    let p = reference_params();
    let wired = tracking_model(&p).unwrap();
    let g2 = p.gamma_noise * p.gamma_noise;
    for s in states(42, 100) {
        let x = s.to_vector();
        let r = connector(&wired.model, &x).unwrap().apply(&alpha(&wired.model, &x)).unwrap();
        assert!(r.amax() <= 1e-10 * g2, "{r}");
    }
}

#[test]
fn generic_connector_annihilates_tracking_alpha() {
    let p = reference_params();
    let wired = tracking_model(&p).unwrap();
    let g2 = p.gamma_noise * p.gamma_noise;
    for s in states(5, 10) {
        let x = s.to_vector();
        let r = connector_from_metric(&wired.model, &x)
            .unwrap()
            .apply(&alpha(&wired.model, &x))
            .unwrap();
        assert!(r.amax() <= 1e-8 * g2, "{r}");
    }
}

#[test]
fn tracking_connector_matches_generic_on_tangent_probes() {
    let wired = tracking_model(&reference_params()).unwrap();
    let mut r = rng(9);
    for s in states(3, 10) {
        let x = s.to_vector();
        let generic = connector_from_metric(&wired.model, &x).unwrap();
        for _ in 0..5 {
            let z = tangent_probe(&s, &mut r);
            let analytic = connector_tracking(&s, &z, &z).unwrap();
            let oracle = generic.bilinear(&z, &z).unwrap();
            // Differences are confined to the normal space spanned by (v, 0) and (a, v).
            let normal = Matrix::from_columns(&[
                TS2State::new(s.v, Vector3::zeros()).to_vector(),
                TS2State::new(s.a, s.v).to_vector(),
            ]);
            let qr = normal.qr();
            let q = qr.q();
            let diff = &analytic - &oracle;
            let tangential = &diff - &q * (q.transpose() * &diff);
            assert!(tangential.norm() <= 1e-6 * analytic.norm().max(oracle.norm()).max(1e-12));
        }
    }
}

#[test]
fn polarized_connector_is_symmetric() {
    let mut r = rng(17);
    for s in states(17, 10) {
        let z = constraint_tangent(&s, &mut r);
        let e = constraint_tangent(&s, &mut r);
        let ze = connector_tracking(&s, &z, &e).unwrap();
        let ez = connector_tracking(&s, &e, &z).unwrap();
        assert!((ze - ez).amax() <= 1e-15 * 1e3);
    }
}

#[test]
fn tracking_splitting_kernel_and_rank() {
    let wired = tracking_model(&reference_params()).unwrap();
    let s = states(8, 1)[0];
    let x = s.to_vector();
    let a = alpha(&wired.model, &x);
    let split = sub_riemannian_splitting(&a, &Matrix::identity(6, 6)).unwrap();
    assert_eq!(split.rank, 2);
    assert_eq!(split.kernel_basis.ncols(), 4);
    // Expected kernel: first three coordinates plus (0, v).
    let mut expected = Matrix::zeros(6, 4);
    for i in 0..3 {
        expected[(i, i)] = 1.0;
        expected[(3 + i, 3)] = s.v[i] / s.v.norm();
    }
    let k = &split.kernel_basis;
    let proj_k = k * (k.transpose() * k).try_inverse().unwrap() * k.transpose();
    assert!((&proj_k * &expected - &expected).amax() <= 1e-10);

    let canonical = canonical_metric(&a, &Matrix::identity(6, 6), None).unwrap();
    assert!((canonical - split.generalized_inverse().unwrap()).amax() == 0.0);

    // With the model's own metric as ambient metric both scales agree and
    // the generalized-inverse identity holds to rounding.
    let scaled = sub_riemannian_splitting(&a, &wired.model.metric(&x)).unwrap();
    let ginv = scaled.generalized_inverse().unwrap();
    assert!(((&a * &ginv * &a) - &a).norm() <= 1e-10 * a.norm());
}

#[test]
fn invertible_alpha_gives_its_inverse() {
    let a = Matrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
    let ambient = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0, 3.0]));
    let g = canonical_metric(&a, &ambient, None).unwrap();
    assert!((g * &a - Matrix::identity(3, 3)).amax() <= 1e-12);
}
