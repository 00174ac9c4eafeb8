//! Dense 3x3 tensors over a generic scalar.
//!
//! Two-dimensional problems are handled in plane strain: a 2x2 gradient is
//! embedded as `diag(F, 1)` so every constitutive routine sees a 3x3 tensor.

use crate::fe::dual::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct Mat3<S: Scalar>(pub [[S; 3]; 3]);

impl<S: Scalar> Mat3<S> {
    pub fn zeros() -> Self {
        Mat3([[S::zero(); 3]; 3])
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..3 {
            m.0[i][i] = S::cst(1.0);
        }
        m
    }

    pub fn from_f64(a: [[f64; 3]; 3]) -> Self {
        let mut m = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = S::cst(a[i][j]);
            }
        }
        m
    }

    /// Embeds the leading `dim x dim` block, filling the rest with the identity.
    pub fn embed(dim: usize, block: impl Fn(usize, usize) -> S) -> Self {
        let mut m = Self::identity();
        for i in 0..dim {
            for j in 0..dim {
                m.0[i][j] = block(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.0[i][j]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                t.0[i][j] = self.0[j][i];
            }
        }
        t
    }

    pub fn det(&self) -> S {
        let a = &self.0;
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    /// Cofactor matrix, `det(A) A^{-T}`.
    pub fn cofactor(&self) -> Self {
        let a = &self.0;
        let mut c = Self::zeros();
        c.0[0][0] = a[1][1] * a[2][2] - a[1][2] * a[2][1];
        c.0[0][1] = a[1][2] * a[2][0] - a[1][0] * a[2][2];
        c.0[0][2] = a[1][0] * a[2][1] - a[1][1] * a[2][0];
        c.0[1][0] = a[0][2] * a[2][1] - a[0][1] * a[2][2];
        c.0[1][1] = a[0][0] * a[2][2] - a[0][2] * a[2][0];
        c.0[1][2] = a[0][1] * a[2][0] - a[0][0] * a[2][1];
        c.0[2][0] = a[0][1] * a[1][2] - a[0][2] * a[1][1];
        c.0[2][1] = a[0][2] * a[1][0] - a[0][0] * a[1][2];
        c.0[2][2] = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        c
    }

    /// Inverse transpose together with the determinant.
    pub fn inv_transpose_det(&self) -> (Self, S) {
        let det = self.det();
        let inv_det = det.recip();
        (self.cofactor().scale(inv_det), det)
    }

    pub fn inverse(&self) -> Self {
        self.inv_transpose_det().0.transpose()
    }

    pub fn mul(&self, b: &Self) -> Self {
        let mut c = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = self.0[i][0] * b.0[0][j];
                s += self.0[i][1] * b.0[1][j];
                s += self.0[i][2] * b.0[2][j];
                c.0[i][j] = s;
            }
        }
        c
    }

    /// `self^T b`
    pub fn tr_mul(&self, b: &Self) -> Self {
        let mut c = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = self.0[0][i] * b.0[0][j];
                s += self.0[1][i] * b.0[1][j];
                s += self.0[2][i] * b.0[2][j];
                c.0[i][j] = s;
            }
        }
        c
    }

    pub fn scale(&self, s: S) -> Self {
        let mut c = *self;
        for row in c.0.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        c
    }

    pub fn add(&self, b: &Self) -> Self {
        let mut c = *self;
        for i in 0..3 {
            for j in 0..3 {
                c.0[i][j] += b.0[i][j];
            }
        }
        c
    }

    pub fn sub(&self, b: &Self) -> Self {
        let mut c = *self;
        for i in 0..3 {
            for j in 0..3 {
                c.0[i][j] -= b.0[i][j];
            }
        }
        c
    }

    /// Frobenius inner product `A : B`.
    pub fn ddot(&self, b: &Self) -> S {
        let mut s = S::zero();
        for i in 0..3 {
            for j in 0..3 {
                s += self.0[i][j] * b.0[i][j];
            }
        }
        s
    }

    pub fn values(&self) -> [[f64; 3]; 3] {
        let mut v = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                v[i][j] = self.0[i][j].value();
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = Mat3::<f64>::from_f64([[2.0, 0.3, -0.1], [0.2, 1.5, 0.4], [0.0, -0.5, 0.9]]);
        let p = a.mul(&a.inverse());
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p.get(i, j) - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn embedding_keeps_out_of_plane_identity() {
        let f = Mat3::<f64>::embed(2, |i, j| if i == j { 2.0 } else { 0.5 });
        assert_eq!(f.get(2, 2), 1.0);
        assert_eq!(f.get(0, 2), 0.0);
        assert!((f.det() - 3.75).abs() < 1e-15);
    }
}
