#![allow(dead_code)]

use ilp_core::tracking::{sample_initial_state, TS2State, TrackingParams};
use ilp_core::{Matrix, Vector};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SPEED: f64 = 200.0;
pub const ACCEL: f64 = 50.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn reference_params() -> TrackingParams {
    TrackingParams::new(0.5, 5.2e3, SPEED).unwrap()
}

pub fn states(seed: u64, count: usize) -> Vec<TS2State> {
    let mut r = rng(seed);
    (0..count).map(|_| sample_initial_state(&mut r, SPEED, ACCEL)).collect()
}

fn gaussian3(r: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| r.random::<f64>() * 2.0 - 1.0)
}

/// Direction tangent to both constraints (`v·ζ_v = 0`, `ζ_a·v + ζ_v·a = 0`)
/// that also satisfies `ζ_v·ζ_a = 0`.
pub fn tangent_probe(x: &TS2State, r: &mut ChaCha8Rng) -> Vector {
    let s = x.v.norm_squared();
    let p = Matrix3::identity() - x.v * x.v.transpose() / s;
    let zv = p * gaussian3(r) * (x.v.norm() * 0.1);
    let c = -zv.dot(&x.a) / s;
    let w = x.v.cross(&zv);
    let w = if w.norm() > 0.0 { w.normalize() } else { w };
    let za = x.v * c + w * (r.random::<f64>() * 2.0 - 1.0) * ACCEL;
    TS2State::new(zv, za).to_vector()
}

/// Direction tangent to both constraints without the extra orthogonality.
pub fn constraint_tangent(x: &TS2State, r: &mut ChaCha8Rng) -> Vector {
    let s = x.v.norm_squared();
    let p = Matrix3::identity() - x.v * x.v.transpose() / s;
    let zv = p * gaussian3(r) * (x.v.norm() * 0.1);
    let za = p * gaussian3(r) * ACCEL - x.v * (zv.dot(&x.a) / s);
    TS2State::new(zv, za).to_vector()
}

/// The tracking drift with the speed frozen at `speed`, so that its
/// derivatives do not see the normalization by `‖v‖²`.
pub fn fixed_speed_xi(x: &Vector, lambda: f64, speed: f64) -> Vector {
    let v = Vector3::new(x[0], x[1], x[2]);
    let a = Vector3::new(x[3], x[4], x[5]);
    let s = speed * speed;
    let p = Matrix3::identity() - v * v.transpose() / s;
    let lower = -v * (a.norm_squared() / s) - p * a * lambda;
    TS2State::new(a, lower).to_vector()
}

pub fn rel_err(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn rel_frob(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
