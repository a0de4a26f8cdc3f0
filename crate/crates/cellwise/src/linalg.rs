//! Minimal fixed-size linear algebra for the estimator cores.
//!
//! The filters in this crate only ever touch 2x2 and 4x4 symmetric
//! matrices, so everything here is stack-allocated and generic over the
//! dimension. Eigenvalues of symmetric matrices come from a cyclic Jacobi
//! sweep, which is robust for these sizes.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::scalar::Scalar;

/// Column vector of fixed dimension `N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vector<T, const N: usize>(pub [T; N]);

/// Square matrix of fixed dimension `N`, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matrix<T, const N: usize>(pub [[T; N]; N]);

impl<T: Scalar, const N: usize> Vector<T, N> {
    pub fn zeros() -> Self {
        Vector([T::zero(); N])
    }

    pub fn dot(&self, other: &Self) -> T {
        let mut acc = T::zero();
        for i in 0..N {
            acc += self.0[i] * other.0[i];
        }
        acc
    }

    /// Outer product `self * other^T`.
    pub fn outer(&self, other: &Self) -> Matrix<T, N> {
        let mut m = Matrix::zeros();
        for i in 0..N {
            for j in 0..N {
                m.0[i][j] = self.0[i] * other.0[j];
            }
        }
        m
    }

    pub fn scale(&self, s: T) -> Self {
        let mut v = *self;
        for x in v.0.iter_mut() {
            *x *= s;
        }
        v
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.0.iter()
    }
}

impl<T: Scalar, const N: usize> Matrix<T, N> {
    pub fn zeros() -> Self {
        Matrix([[T::zero(); N]; N])
    }

    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            m.0[i][i] = T::one();
        }
        m
    }

    pub fn from_diag(d: [T; N]) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            m.0[i][i] = d[i];
        }
        m
    }

    pub fn diag(&self) -> [T; N] {
        let mut d = [T::zero(); N];
        for i in 0..N {
            d[i] = self.0[i][i];
        }
        d
    }

    pub fn trace(&self) -> T {
        let mut acc = T::zero();
        for i in 0..N {
            acc += self.0[i][i];
        }
        acc
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            for j in 0..N {
                m.0[i][j] = self.0[j][i];
            }
        }
        m
    }

    /// `(M + M^T) / 2`.
    pub fn symmetrized(&self) -> Self {
        let half = T::c(0.5);
        let mut m = Self::zeros();
        for i in 0..N {
            for j in 0..N {
                m.0[i][j] = (self.0[i][j] + self.0[j][i]) * half;
            }
        }
        m
    }

    pub fn scale(&self, s: T) -> Self {
        let mut m = *self;
        for row in m.0.iter_mut() {
            for x in row.iter_mut() {
                *x *= s;
            }
        }
        m
    }

    pub fn mul_vec(&self, v: &Vector<T, N>) -> Vector<T, N> {
        let mut out = Vector::zeros();
        for i in 0..N {
            let mut acc = T::zero();
            for j in 0..N {
                acc += self.0[i][j] * v.0[j];
            }
            out.0[i] = acc;
        }
        out
    }

    pub fn mul_mat(&self, other: &Self) -> Self {
        let mut out = Self::zeros();
        for i in 0..N {
            for j in 0..N {
                let mut acc = T::zero();
                for k in 0..N {
                    acc += self.0[i][k] * other.0[k][j];
                }
                out.0[i][j] = acc;
            }
        }
        out
    }

    /// `D M D` for a diagonal `D = diag(d)`: entry-wise `d[i] * m[i][j] * d[j]`.
    ///
    /// Preserves symmetry exactly in floating point.
    pub fn congruence_diag(&self, d: [T; N]) -> Self {
        let mut m = Self::zeros();
        for i in 0..N {
            for j in 0..N {
                m.0[i][j] = d[i] * self.0[i][j] * d[j];
            }
        }
        m
    }

    /// Quadratic form `v^T M v`.
    pub fn quad_form(&self, v: &Vector<T, N>) -> T {
        v.dot(&self.mul_vec(v))
    }

    pub fn max_abs(&self) -> T {
        self.0
            .iter()
            .flatten()
            .fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Largest `|m[i][j] - m[j][i]|`.
    pub fn max_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..N {
            for j in (i + 1)..N {
                worst = worst.max((self.0[i][j] - self.0[j][i]).abs());
            }
        }
        worst
    }

    /// Eigenvalues of a symmetric matrix, ascending, via cyclic Jacobi.
    ///
    /// The caller is responsible for symmetry; the strictly lower triangle
    /// is ignored in favour of the upper one.
    pub fn sym_eigenvalues(&self) -> [T; N] {
        let mut a = self.symmetrized().0;
        let two = T::c(2.0);

        for _sweep in 0..64 {
            let mut off = T::zero();
            let mut norm = T::zero();
            for i in 0..N {
                for j in 0..N {
                    norm += a[i][j] * a[i][j];
                    if i < j {
                        off += a[i][j] * a[i][j];
                    }
                }
            }
            if off.sqrt() <= T::epsilon() * norm.sqrt().max(T::min_positive_value()) {
                break;
            }

            for p in 0..N {
                for q in (p + 1)..N {
                    let apq = a[p][q];
                    // Entries negligible against the diagonal cannot be
                    // reduced further in this precision.
                    if apq.abs() <= T::epsilon() * (a[p][p].abs() + a[q][q].abs()) {
                        a[p][q] = T::zero();
                        a[q][p] = T::zero();
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (two * apq);
                    let t = {
                        let denom = theta.abs() + (theta * theta + T::one()).sqrt();
                        let mag = if denom.is_finite() {
                            T::one() / denom
                        } else {
                            T::zero()
                        };
                        if theta < T::zero() {
                            -mag
                        } else {
                            mag
                        }
                    };
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;

                    let app = a[p][p];
                    let aqq = a[q][q];
                    a[p][p] = c * c * app - two * s * c * apq + s * s * aqq;
                    a[q][q] = s * s * app + two * s * c * apq + c * c * aqq;
                    a[p][q] = T::zero();
                    a[q][p] = T::zero();
                    for k in 0..N {
                        if k == p || k == q {
                            continue;
                        }
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[p][k] = a[k][p];
                        a[k][q] = s * akp + c * akq;
                        a[q][k] = a[k][q];
                    }
                }
            }
        }

        let mut eig = [T::zero(); N];
        for i in 0..N {
            eig[i] = a[i][i];
        }
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        eig
    }

    /// Smallest eigenvalue of a symmetric matrix.
    pub fn min_sym_eigenvalue(&self) -> T {
        self.sym_eigenvalues()[0]
    }
}

impl<T, const N: usize> Index<usize> for Vector<T, N> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T, const N: usize> IndexMut<usize> for Vector<T, N> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T, const N: usize> Index<(usize, usize)> for Matrix<T, N> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.0[i][j]
    }
}

impl<T, const N: usize> IndexMut<(usize, usize)> for Matrix<T, N> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.0[i][j]
    }
}

impl<T: Scalar, const N: usize> Add for Vector<T, N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut out = self;
        for i in 0..N {
            out.0[i] += rhs.0[i];
        }
        out
    }
}

impl<T: Scalar, const N: usize> Sub for Vector<T, N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut out = self;
        for i in 0..N {
            out.0[i] -= rhs.0[i];
        }
        out
    }
}

impl<T: Scalar, const N: usize> Add for Matrix<T, N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut out = self;
        for i in 0..N {
            for j in 0..N {
                out.0[i][j] += rhs.0[i][j];
            }
        }
        out
    }
}

impl<T: Scalar, const N: usize> Sub for Matrix<T, N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut out = self;
        for i in 0..N {
            for j in 0..N {
                out.0[i][j] -= rhs.0[i][j];
            }
        }
        out
    }
}

impl<T: Scalar, const N: usize> Mul<Vector<T, N>> for Matrix<T, N> {
    type Output = Vector<T, N>;
    fn mul(self, rhs: Vector<T, N>) -> Vector<T, N> {
        self.mul_vec(&rhs)
    }
}

impl<T: Scalar, const N: usize> Mul<Matrix<T, N>> for Matrix<T, N> {
    type Output = Matrix<T, N>;
    fn mul(self, rhs: Matrix<T, N>) -> Matrix<T, N> {
        self.mul_mat(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigenvalues_of_diagonal() {
        let m = Matrix::<f64, 4>::from_diag([4.0, 1.0, 3.0, 2.0]);
        let eig = m.sym_eigenvalues();
        assert_eq!(eig, [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn eigenvalues_of_2x2() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
        let m = Matrix::<f64, 2>([[2.0, 1.0], [1.0, 2.0]]);
        let eig = m.sym_eigenvalues();
        assert_relative_eq!(eig[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(eig[1], 3.0, max_relative = 1e-12);
    }

    #[test]
    fn congruence_matches_explicit_product() {
        let m = Matrix::<f64, 3>([[1.0, 2.0, 3.0], [2.0, 5.0, 6.0], [3.0, 6.0, 9.0]]);
        let d = [0.5, 2.0, 1.5];
        let dm = Matrix::from_diag(d);
        let expect = dm.mul_mat(&m).mul_mat(&dm);
        let got = m.congruence_diag(d);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(got[(i, j)], expect[(i, j)], max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn outer_product_rank_one() {
        let v = Vector::<f64, 4>([1.0, 2.0, 0.0, -1.0]);
        let m = v.outer(&v);
        let eig = m.sym_eigenvalues();
        assert_relative_eq!(eig[3], v.dot(&v), max_relative = 1e-12);
        for e in &eig[..3] {
            assert!(e.abs() < 1e-12);
        }
    }
}
