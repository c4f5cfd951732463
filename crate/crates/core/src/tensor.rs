use crate::error::{IlpError, Result};
use crate::{Matrix, Vector};

/// Vector-valued bilinear form stored as one square slice per output index.
///
/// Entry `(k, i, j)` lives at `slices[k][(i, j)]`. Used for connector
/// coefficients, metric derivatives and second derivatives of maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    slices: Vec<Matrix>,
}

impl Tensor3 {
    pub fn zeros(outputs: usize, dim: usize) -> Self {
        Self {
            slices: vec![Matrix::zeros(dim, dim); outputs],
        }
    }

    pub fn from_slices(slices: Vec<Matrix>) -> Result<Self> {
        if let Some(first) = slices.first() {
            let n = first.nrows();
            for s in &slices {
                if s.nrows() != n || s.ncols() != n {
                    return Err(IlpError::DimensionMismatch {
                        context: "tensor slice",
                        expected: n,
                        got: if s.nrows() != n { s.nrows() } else { s.ncols() },
                    });
                }
            }
        }
        Ok(Self { slices })
    }

    /// Number of output components.
    pub fn outputs(&self) -> usize {
        self.slices.len()
    }

    /// Dimension of each input slot.
    pub fn dim(&self) -> usize {
        self.slices.first().map_or(0, |s| s.nrows())
    }

    pub fn slice(&self, k: usize) -> &Matrix {
        &self.slices[k]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut Matrix {
        &mut self.slices[k]
    }

    pub fn slices(&self) -> &[Matrix] {
        &self.slices
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.slices[k][(i, j)]
    }

    pub fn set(&mut self, k: usize, i: usize, j: usize, value: f64) {
        self.slices[k][(i, j)] = value;
    }

    /// Full contraction against a matrix: entry `k` is `Σᵢⱼ t[k][i][j]·m[i][j]`.
    pub fn contract(&self, m: &Matrix) -> Result<Vector> {
        let n = self.dim();
        if m.nrows() != n || m.ncols() != n {
            return Err(IlpError::DimensionMismatch {
                context: "tensor contraction",
                expected: n,
                got: if m.nrows() != n { m.nrows() } else { m.ncols() },
            });
        }
        Ok(Vector::from_iterator(
            self.outputs(),
            self.slices.iter().map(|s| s.dot(m)),
        ))
    }

    /// Bilinear evaluation `t(u ⊗ w)`.
    pub fn apply(&self, u: &Vector, w: &Vector) -> Result<Vector> {
        let n = self.dim();
        for v in [u, w] {
            if v.len() != n {
                return Err(IlpError::DimensionMismatch {
                    context: "tensor bilinear evaluation",
                    expected: n,
                    got: v.len(),
                });
            }
        }
        Ok(Vector::from_iterator(
            self.outputs(),
            self.slices.iter().map(|s| u.dot(&(s * w))),
        ))
    }

    /// Largest deviation from symmetry in the input slots.
    pub fn asymmetry(&self) -> f64 {
        self.slices
            .iter()
            .map(|s| (s - s.transpose()).amax())
            .fold(0.0, f64::max)
    }

    pub fn symmetrize_inputs(&mut self) {
        for s in &mut self.slices {
            let t = s.transpose();
            *s += t;
            *s *= 0.5;
        }
    }

    pub fn amax(&self) -> f64 {
        self.slices.iter().map(|s| s.amax()).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.slices.iter().all(|s| s.iter().all(|&x| x == 0.0))
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for s in &mut self.slices {
            *s *= factor;
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.slices.iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contraction_matches_bilinear_on_rank_one() {
        let mut t = Tensor3::zeros(2, 2);
        t.set(0, 0, 1, 1.5);
        t.set(0, 1, 0, 1.5);
        t.set(1, 1, 1, -2.0);
        let u = Vector::from_vec(vec![0.3, -0.7]);
        let outer = &u * u.transpose();
        let a = t.contract(&outer).unwrap();
        let b = t.apply(&u, &u).unwrap();
        assert!((a - b).amax() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let t = Tensor3::zeros(3, 3);
        assert!(matches!(
            t.contract(&Matrix::zeros(2, 2)),
            Err(IlpError::DimensionMismatch { .. })
        ));
    }
}
