//! Recursive least-squares identification of the 1RC cell.
//!
//! The cell's terminal voltage obeys a first-order ARX relation
//!
//! ```text
//! v(t) = th1 + th2 * v(t-1) + th3 * i(t) + th4 * i(t-1)
//! ```
//!
//! over the regressor `phi(t) = [1, v(t-1), i(t), i(t-1)]`, where, for a
//! branch decay `a = exp(-dt / (r1 c1))`:
//!
//! ```text
//! th1 = (1 - a) * ocv      (slowly varying offset)
//! th2 = a
//! th3 = -r0
//! th4 = a * r0 - r1 * (1 - a)
//! ```
//!
//! [`DffRlsState`] estimates `th` online with one forgetting factor per
//! parameter (a diagonal forgetting matrix), [`MffRlsState`] is the
//! decoupled per-parameter scalar baseline, and [`arx_to_ecm`] /
//! [`ecm_to_arx`] convert between `th` and circuit parameters.

use thiserror::Error;

use crate::linalg::{Matrix, Vector};
use crate::scalar::Scalar;

/// Lower exclusive bound on every forgetting factor.
pub const LAMBDA_MIN: f64 = 0.5;

/// Covariance is declared indefinite when its smallest eigenvalue drops
/// below `-PD_REL_TOL * max(1, largest eigenvalue)`.
const PD_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RlsError {
    #[error("regressor input {name} is not finite: {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("forgetting factor {value} outside ({LAMBDA_MIN}, 1]")]
    InvalidLambda { value: f64 },
    #[error("covariance lost positive definiteness: min eigenvalue {min_eig:e}, max {max_eig:e}")]
    CovarianceNotPd { min_eig: f64, max_eig: f64 },
    #[error("model unidentifiable: th2 = {theta2} outside (0, 1)")]
    Unidentifiable { theta2: f64 },
    #[error("non-physical recovery: {name} = {value:e} must be positive")]
    NonPhysical { name: &'static str, value: f64 },
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

/// Regression input `[1, v(t-1), i(t), i(t-1)]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regressor<T>(Vector<T, 4>);

impl<T: Scalar> Regressor<T> {
    pub fn new(v_prev: T, i_now: T, i_prev: T) -> Result<Self, RlsError> {
        for (name, value) in [("v_prev", v_prev), ("i_now", i_now), ("i_prev", i_prev)] {
            if !value.is_finite() {
                return Err(RlsError::NonFinite {
                    name,
                    value: value.f64(),
                });
            }
        }
        Ok(Regressor(Vector([T::one(), v_prev, i_now, i_prev])))
    }

    pub fn phi(&self) -> &Vector<T, 4> {
        &self.0
    }
}

/// Estimated ARX parameter vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArxTheta<T>(pub Vector<T, 4>);

impl<T: Scalar> ArxTheta<T> {
    pub fn new(theta: [T; 4]) -> Result<Self, RlsError> {
        for (i, v) in theta.iter().enumerate() {
            if !v.is_finite() {
                return Err(RlsError::NonFinite {
                    name: ["th1", "th2", "th3", "th4"][i],
                    value: v.f64(),
                });
            }
        }
        Ok(ArxTheta(Vector(theta)))
    }

    /// Predicted output for a regressor.
    pub fn predict(&self, phi: &Regressor<T>) -> T {
        self.0.dot(phi.phi())
    }

    pub fn as_array(&self) -> [T; 4] {
        self.0 .0
    }
}

/// Per-parameter forgetting factors, each in `(0.5, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForgettingMatrix<T> {
    lambdas: [T; 4],
}

impl<T: Scalar> ForgettingMatrix<T> {
    pub fn new(lambdas: [T; 4]) -> Result<Self, RlsError> {
        for &l in &lambdas {
            if !(l > T::c(LAMBDA_MIN) && l <= T::one()) {
                return Err(RlsError::InvalidLambda { value: l.f64() });
            }
        }
        Ok(ForgettingMatrix { lambdas })
    }

    /// Uniform factor on all four parameters.
    pub fn uniform(lambda: T) -> Result<Self, RlsError> {
        Self::new([lambda; 4])
    }

    /// Slow-forgetting default with a faster first (offset) channel.
    pub fn default_diagonal() -> Self {
        Self::new([T::c(0.995), T::c(0.9999), T::c(0.9999), T::c(0.9999)])
            .expect("defaults in range")
    }

    pub fn lambdas(&self) -> [T; 4] {
        self.lambdas
    }

    pub fn get(&self, i: usize) -> T {
        self.lambdas[i]
    }

    pub fn set(&mut self, i: usize, lambda: T) -> Result<(), RlsError> {
        if !(lambda > T::c(LAMBDA_MIN) && lambda <= T::one()) {
            return Err(RlsError::InvalidLambda {
                value: lambda.f64(),
            });
        }
        self.lambdas[i] = lambda;
        Ok(())
    }

    fn sqrt(&self) -> [T; 4] {
        self.lambdas.map(|l| l.sqrt())
    }

    fn inv(&self) -> [T; 4] {
        self.lambdas.map(|l| T::one() / l)
    }

    fn inv_sqrt(&self) -> [T; 4] {
        self.lambdas.map(|l| T::one() / l.sqrt())
    }
}

/// State of the diagonal-forgetting RLS estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DffRlsState<T> {
    pub theta: ArxTheta<T>,
    /// Parameter error covariance, symmetric positive definite.
    pub p: Matrix<T, 4>,
    pub lambda: ForgettingMatrix<T>,
    /// Forgetting-weighted accumulator of regressor outer products,
    /// symmetric positive semi-definite.
    pub a_info: Matrix<T, 4>,
    /// Covariance limiting: when `trace(P)` exceeds this, P is rescaled
    /// onto the ceiling. Under sustained wind-up the condition number of
    /// an uncapped P crosses `1/epsilon` within a few thousand steps and
    /// the recursion destabilizes; the ceiling keeps the run well-defined
    /// while leaving orders of magnitude of growth observable.
    pub p_trace_max: T,
}

impl<T: Scalar> DffRlsState<T> {
    /// Default covariance-trace ceiling.
    pub const DEFAULT_P_TRACE_MAX: f64 = 1e8;

    /// `p0_scale * I` initial covariance, zero information matrix.
    pub fn new(theta0: ArxTheta<T>, p0_scale: T, lambda: ForgettingMatrix<T>) -> Self {
        DffRlsState {
            theta: theta0,
            p: Matrix::identity().scale(p0_scale),
            lambda,
            a_info: Matrix::zeros(),
            p_trace_max: T::c(Self::DEFAULT_P_TRACE_MAX),
        }
    }
}

/// One gain/update cycle of the diagonal-forgetting RLS.
///
/// Gain `k = P L^-1 phi / (1 + phi^T P L^-1 phi)`, innovation
/// `alpha = y - phi^T th`, `th' = th + k alpha`, and the covariance
/// recursion `P' = L^-1/2 (I - k phi^T) P L^-1/2`, re-symmetrized. With a
/// uniform factor this reduces exactly to the scalar-forgetting textbook
/// form `P' = (P - k phi^T P) / lambda`. The covariance trace is capped
/// at [`DffRlsState::p_trace_max`] by uniform rescale. The information
/// matrix is *not* advanced here; see [`update_information_matrix`].
pub fn dffrls_step<T: Scalar>(
    state: &DffRlsState<T>,
    phi: &Regressor<T>,
    y: T,
) -> Result<(DffRlsState<T>, T), RlsError> {
    let v = phi.phi();
    let lambda_inv = state.lambda.inv();

    // u = L^-1 phi, w = P u.
    let mut u = *v;
    for i in 0..4 {
        u[i] *= lambda_inv[i];
    }
    let w = state.p.mul_vec(&u);
    // The quadratic form is nonnegative for PSD P; deep in covariance
    // wind-up its computation cancels catastrophically and can round
    // negative, which would wreck the denominator.
    let quad = v.dot(&w).max(T::zero());
    let denom = T::one() + quad;
    let gain = w.scale(T::one() / denom);

    let alpha = y - state.theta.predict(phi);
    let theta = ArxTheta(state.theta.0 + gain.scale(alpha));

    // (I - k phi^T) P == P - k (P phi)^T for symmetric P.
    let p_phi = state.p.mul_vec(v);
    let shrunk = state.p - gain.outer(&p_phi);
    let mut p = shrunk.congruence_diag(state.lambda.inv_sqrt()).symmetrized();

    let trace = p.trace();
    if trace > state.p_trace_max {
        p = p.scale(state.p_trace_max / trace);
    }

    let eig = p.sym_eigenvalues();
    let (min_eig, max_eig) = (eig[0], eig[3]);
    if min_eig < -T::c(PD_REL_TOL) * T::one().max(max_eig) {
        return Err(RlsError::CovarianceNotPd {
            min_eig: min_eig.f64(),
            max_eig: max_eig.f64(),
        });
    }

    let next = DffRlsState {
        theta,
        p,
        lambda: state.lambda,
        a_info: state.a_info,
        p_trace_max: state.p_trace_max,
    };
    Ok((next, alpha))
}

/// Recursive form of the forgetting-weighted information matrix:
/// `A' = L^1/2 A L^1/2 + phi phi^T`. With all factors 1 this is a plain
/// running sum of outer products.
pub fn update_information_matrix<T: Scalar>(
    a_info: &Matrix<T, 4>,
    lambda: &ForgettingMatrix<T>,
    phi: &Regressor<T>,
) -> Matrix<T, 4> {
    a_info.congruence_diag(lambda.sqrt()) + phi.phi().outer(phi.phi())
}

/// Circuit parameters recovered from an ARX estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentifiedEcm<T> {
    pub r0: T,
    pub r1: T,
    pub c1: T,
}

/// Recover `r0`, `r1`, `c1` from `th` at sampling interval `dt`.
///
/// Inverts the mapping in the module docs: `r0 = -th3`, `a = th2`,
/// `tau = -dt / ln(a)`, `r1 = (-a th3 - th4) / (1 - a)`, `c1 = tau / r1`.
/// The offset `th1` tracks the OCV level and takes no part in recovery.
pub fn arx_to_ecm<T: Scalar>(theta: &ArxTheta<T>, dt: T) -> Result<IdentifiedEcm<T>, RlsError> {
    let [_, th2, th3, th4] = theta.as_array();
    if !(th2 > T::zero() && th2 < T::one()) {
        return Err(RlsError::Unidentifiable { theta2: th2.f64() });
    }
    let r0 = -th3;
    if !(r0 > T::zero()) {
        return Err(RlsError::NonPhysical {
            name: "r0",
            value: r0.f64(),
        });
    }
    let a = th2;
    let tau = -dt / a.ln();
    let r1 = (-a * th3 - th4) / (T::one() - a);
    if !(r1 > T::zero()) {
        return Err(RlsError::NonPhysical {
            name: "r1",
            value: r1.f64(),
        });
    }
    let c1 = tau / r1;
    Ok(IdentifiedEcm { r0, r1, c1 })
}

/// Forward map from circuit parameters to ARX coefficients. `bias` is the
/// quiescent OCV level absorbed by `th1`.
pub fn ecm_to_arx<T: Scalar>(r0: T, r1: T, c1: T, dt: T, bias: T) -> Result<ArxTheta<T>, RlsError> {
    for (name, value) in [("r0", r0), ("r1", r1), ("c1", c1), ("dt", dt)] {
        if !(value > T::zero() && value.is_finite()) {
            return Err(RlsError::NonPositive {
                name,
                value: value.f64(),
            });
        }
    }
    let a = (-dt / (r1 * c1)).exp();
    let th1 = (T::one() - a) * bias;
    let th3 = -r0;
    let th4 = a * r0 - r1 * (T::one() - a);
    ArxTheta::new([th1, a, th3, th4])
}

/// Per-parameter scalar-forgetting RLS: four decoupled channels sharing
/// the regressor and the innovation `alpha = y - phi^T th`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MffRlsState<T> {
    pub theta: ArxTheta<T>,
    /// One scalar error variance per channel.
    pub p: [T; 4],
    pub lambda: ForgettingMatrix<T>,
}

impl<T: Scalar> MffRlsState<T> {
    pub fn new(theta0: ArxTheta<T>, p0_scale: T, lambda: ForgettingMatrix<T>) -> Self {
        MffRlsState {
            theta: theta0,
            p: [p0_scale; 4],
            lambda,
        }
    }
}

/// One update of the decoupled scalar channels.
pub fn mffrls_step<T: Scalar>(
    state: &MffRlsState<T>,
    phi: &Regressor<T>,
    y: T,
) -> (MffRlsState<T>, T) {
    let v = phi.phi();
    let alpha = y - state.theta.predict(phi);
    let mut next = *state;
    for i in 0..4 {
        let lambda = state.lambda.get(i);
        let p = state.p[i];
        let k = p * v[i] / (lambda + v[i] * v[i] * p);
        next.theta.0[i] = state.theta.0[i] + k * alpha;
        next.p[i] = (p - k * v[i] * p) / lambda;
    }
    (next, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn regressor_layout() {
        let phi = Regressor::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(phi.phi().0, [1.0, 0.0, 0.0, 0.0]);
        let phi = Regressor::new(3.7, 10.0, -5.0).unwrap();
        assert_eq!(phi.phi().0, [1.0, 3.7, 10.0, -5.0]);
        assert!(Regressor::new(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn forgetting_bounds_enforced() {
        assert!(ForgettingMatrix::uniform(0.5f64).is_err());
        assert!(ForgettingMatrix::uniform(1.0001f64).is_err());
        assert!(ForgettingMatrix::uniform(0.98f64).is_ok());
        let mut m = ForgettingMatrix::default_diagonal();
        assert!(m.set(0, 0.4).is_err());
        assert!(m.set(0, 0.97).is_ok());
        assert_eq!(m.get(0), 0.97);
    }

    #[test]
    fn zero_innovation_leaves_theta() {
        let theta = ArxTheta::new([0.03, 0.99, -1.5e-3, 1.47e-3]).unwrap();
        let state = DffRlsState::new(theta, 100.0, ForgettingMatrix::default_diagonal());
        let phi = Regressor::new(3.7, 20.0, -8.0).unwrap();
        let y = theta.predict(&phi);
        let (next, alpha) = dffrls_step(&state, &phi, y).unwrap();
        assert_eq!(alpha, 0.0);
        assert_eq!(next.theta.as_array(), theta.as_array());
    }

    #[test]
    fn information_matrix_first_sample_is_rank_one() {
        let phi = Regressor::<f64>::new(3.7, 10.0, -5.0).unwrap();
        let lambda = ForgettingMatrix::default_diagonal();
        let a = update_information_matrix(&Matrix::zeros(), &lambda, &phi);
        assert_eq!(a, phi.phi().outer(phi.phi()));
        let eig = a.sym_eigenvalues();
        assert!(eig[0].abs() < 1e-12 && eig[1].abs() < 1e-12 && eig[2].abs() < 1e-12);
        assert_relative_eq!(eig[3], phi.phi().dot(phi.phi()), max_relative = 1e-12);
    }

    #[test]
    fn information_matrix_no_forgetting_is_plain_sum() {
        let lambda = ForgettingMatrix::uniform(1.0).unwrap();
        let phis = [
            Regressor::new(3.7, 10.0, -5.0).unwrap(),
            Regressor::new(3.6, -4.0, 2.0).unwrap(),
            Regressor::new(3.8, 0.5, 0.25).unwrap(),
        ];
        let mut a = Matrix::zeros();
        let mut expect = Matrix::zeros();
        for phi in &phis {
            a = update_information_matrix(&a, &lambda, phi);
            expect = expect + phi.phi().outer(phi.phi());
        }
        assert_eq!(a, expect);
    }

    #[test]
    fn information_matrix_matches_weighted_sum_oracle() {
        let lam = 0.97;
        let lambda = ForgettingMatrix::uniform(lam).unwrap();
        let mut phis = Vec::new();
        let mut x = 0.37f64;
        for _ in 0..40 {
            x = (x * 97.0 + 13.5).sin();
            phis.push(Regressor::new(3.6 + x, 50.0 * x, -20.0 * x * x).unwrap());
        }
        let mut a = Matrix::zeros();
        for phi in &phis {
            a = update_information_matrix(&a, &lambda, phi);
        }
        // Direct weighted sum: sum over i of lam^(n-1-i) phi_i phi_i^T.
        let n = phis.len();
        let mut expect = Matrix::<f64, 4>::zeros();
        for (i, phi) in phis.iter().enumerate() {
            let w = lam.powi((n - 1 - i) as i32);
            expect = expect + phi.phi().outer(phi.phi()).scale(w);
        }
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(a[(i, j)], expect[(i, j)], max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn arx_ecm_round_trip() {
        let (r0, r1, c1, dt) = (1.5e-3, 0.8e-3, 1.2e5, 1.0);
        let theta = ecm_to_arx(r0, r1, c1, dt, 3.7).unwrap();
        let rec = arx_to_ecm(&theta, dt).unwrap();
        assert_relative_eq!(rec.r0, r0, max_relative = 1e-10);
        assert_relative_eq!(rec.r1, r1, max_relative = 1e-10);
        assert_relative_eq!(rec.c1, c1, max_relative = 1e-10);
    }

    #[test]
    fn unidentifiable_and_non_physical_paths() {
        let theta = ArxTheta::new([0.0, 1.0, -1e-3, 0.9e-3]).unwrap();
        assert!(matches!(
            arx_to_ecm(&theta, 1.0),
            Err(RlsError::Unidentifiable { .. })
        ));
        // Positive th3 means a negative series resistance.
        let theta = ArxTheta::new([0.0, 0.99, 1e-3, 0.9e-3]).unwrap();
        assert!(matches!(
            arx_to_ecm(&theta, 1.0),
            Err(RlsError::NonPhysical { name: "r0", .. })
        ));
        // th4 too large makes r1 negative.
        let theta = ArxTheta::new([0.0, 0.99, -1e-3, 1.1e-3]).unwrap();
        assert!(matches!(
            arx_to_ecm(&theta, 1.0),
            Err(RlsError::NonPhysical { name: "r1", .. })
        ));
    }

    #[test]
    fn ecm_to_arx_limits() {
        let tau = 0.8e-3 * 1.2e5;
        // dt -> 0: th2 -> 1.
        let theta = ecm_to_arx::<f64>(1.5e-3, 0.8e-3, 1.2e5, 1e-6 * tau, 0.0).unwrap();
        assert!((theta.as_array()[1] - 1.0).abs() < 1e-5);
        // r1 -> 0 at fixed c1: th4 + a*th3 -> 0, i.e. th4 -> th2 * r0.
        let mut prev = f64::INFINITY;
        for k in 1..=9 {
            let r1 = 10f64.powi(-k) * 1e-3;
            let th = ecm_to_arx(2e-3, r1, 1e5, 1.0, 0.0).unwrap().as_array();
            let gap = (th[3] + th[1] * th[2]).abs();
            assert!(gap <= prev);
            prev = gap;
        }
        assert!(prev < 1e-11);
    }

    #[test]
    fn specific_arx_coefficients() {
        // r0 = 2 mOhm, r1 = 1 mOhm, c1 = 1e5 F, dt = 1 s.
        let th = ecm_to_arx(2e-3, 1e-3, 1e5, 1.0, 0.0).unwrap().as_array();
        let a = (-0.01f64).exp();
        assert_relative_eq!(th[1], a, max_relative = 1e-14);
        assert_relative_eq!(th[2], -2e-3, max_relative = 1e-14);
        assert_relative_eq!(th[3], a * 2e-3 - 1e-3 * (1.0 - a), max_relative = 1e-14);
    }
}
