//! Central finite differences in chart coordinates.

use crate::{Matrix, Vector};

/// Step for coordinate `k`, relative to the coordinate's magnitude.
pub(crate) fn coordinate_step(x: &Vector, k: usize, base: f64) -> f64 {
    base * x[k].abs().max(1.0)
}

/// Fourth-order central difference of a matrix-valued function along `e_k`.
pub(crate) fn partial_matrix<F>(f: &F, x: &Vector, k: usize, h: f64) -> Matrix
where
    F: Fn(&Vector) -> Matrix + ?Sized,
{
    let shifted = |s: f64| {
        let mut y = x.clone();
        y[k] += s;
        f(&y)
    };
    let f_p1 = shifted(h);
    let f_m1 = shifted(-h);
    let f_p2 = shifted(2.0 * h);
    let f_m2 = shifted(-2.0 * h);
    ((f_p1 - f_m1) * 8.0 - (f_p2 - f_m2)) / (12.0 * h)
}

/// Fourth-order central-difference Jacobian of a vector field; column `k` is `∂f/∂x_k`.
pub(crate) fn jacobian<F>(f: &F, x: &Vector, base_step: f64) -> Matrix
where
    F: Fn(&Vector) -> Vector + ?Sized,
{
    let n = x.len();
    let mut jac: Option<Matrix> = None;
    for k in 0..n {
        let h = coordinate_step(x, k, base_step);
        let as_column = |y: &Vector| {
            let v = f(y);
            Matrix::from_column_slice(v.len(), 1, v.as_slice())
        };
        let col = partial_matrix(&as_column, x, k, h);
        let m = jac.get_or_insert_with(|| Matrix::zeros(col.nrows(), n));
        m.set_column(k, &col.column(0));
    }
    jac.unwrap_or_else(|| Matrix::zeros(0, 0))
}

/// Second central differences of a vector field: slice `m` holds the Hessian
/// of component `m`.
pub(crate) fn hessian<F>(f: &F, x: &Vector, step: f64) -> Vec<Matrix>
where
    F: Fn(&Vector) -> Vector + ?Sized,
{
    let n = x.len();
    let f0 = f(x);
    let q = f0.len();
    let mut slices = vec![Matrix::zeros(n, n); q];
    let hs: Vec<f64> = (0..n).map(|k| coordinate_step(x, k, step)).collect();
    let eval = |di: usize, si: f64, dj: usize, sj: f64| {
        let mut y = x.clone();
        y[di] += si;
        y[dj] += sj;
        f(&y)
    };
    for i in 0..n {
        let hi = hs[i];
        let plus = eval(i, hi, i, 0.0);
        let minus = eval(i, -hi, i, 0.0);
        let d2 = (plus - &f0 * 2.0 + minus) / (hi * hi);
        for (m, s) in slices.iter_mut().enumerate() {
            s[(i, i)] = d2[m];
        }
        for j in (i + 1)..n {
            let hj = hs[j];
            let pp = eval(i, hi, j, hj);
            let pm = eval(i, hi, j, -hj);
            let mp = eval(i, -hi, j, hj);
            let mm = eval(i, -hi, j, -hj);
            let d2 = (pp - pm - mp + mm) / (4.0 * hi * hj);
            for (m, s) in slices.iter_mut().enumerate() {
                s[(i, j)] = d2[m];
                s[(j, i)] = d2[m];
            }
        }
    }
    slices
}
