//! Extended Kalman filter over the 1RC cell, plus Coulomb counting.
//!
//! State `x = [soc, v1]`, transition `F = diag(1, a_rc)` with input
//! column `[-eta dt / q, b_rc]`, and the nonlinear scalar measurement
//! `h(x) = ocv(soc) - r0 * i - v1` with Jacobian `[d ocv/d soc, -1]`.
//! Process noise is widened by a configurable factor while excitation is
//! insufficient, when the identified model feeding the filter is least
//! trustworthy.

use thiserror::Error;

use crate::adaptive::ExcitationTag;
use crate::linalg::{Matrix, Vector};
use crate::model::{discretize_rc, EcmParams, ModelError, OcvCurve, RcDiscrete};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EkfError {
    #[error("innovation variance must be positive, got {0:e}")]
    InnovationVariance(f64),
    #[error("{name} must be {requirement}, got {value}")]
    InvalidNoise {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Filter state and noise configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EkfState<T> {
    /// `[soc, v1]`.
    pub x: Vector<T, 2>,
    /// State covariance, symmetric positive definite.
    pub p: Matrix<T, 2>,
    /// Baseline process noise covariance.
    pub q_base: Matrix<T, 2>,
    /// Multiplier on `q_base` while excitation is insufficient, >= 1.
    pub q_scale_low_excitation: T,
    /// Measurement noise variance, V^2.
    pub r: T,
}

impl<T: Scalar> EkfState<T> {
    pub fn new(
        x: Vector<T, 2>,
        p: Matrix<T, 2>,
        q_base: Matrix<T, 2>,
        q_scale_low_excitation: T,
        r: T,
    ) -> Result<Self, EkfError> {
        if !(r > T::zero()) {
            return Err(EkfError::InvalidNoise {
                name: "r",
                requirement: "positive",
                value: r.f64(),
            });
        }
        if !(q_scale_low_excitation >= T::one()) {
            return Err(EkfError::InvalidNoise {
                name: "q_scale_low_excitation",
                requirement: ">= 1",
                value: q_scale_low_excitation.f64(),
            });
        }
        Ok(EkfState {
            x: Vector([x[0].clamp_to(T::zero(), T::one()), x[1]]),
            p,
            q_base,
            q_scale_low_excitation,
            r,
        })
    }

    pub fn soc(&self) -> T {
        self.x[0]
    }

    pub fn v1(&self) -> T {
        self.x[1]
    }
}

/// The (replaceable) cell model the filter runs against.
#[derive(Clone, Debug, PartialEq)]
pub struct EkfModel<T> {
    ecm: EcmParams<T>,
    curve: OcvCurve<T>,
    dt: T,
    rc: RcDiscrete<T>,
    soc_gain: T,
}

impl<T: Scalar> EkfModel<T> {
    pub fn new(ecm: EcmParams<T>, curve: OcvCurve<T>, dt: T) -> Result<Self, EkfError> {
        let rc = discretize_rc(ecm.r1(), ecm.c1(), dt)?;
        let soc_gain = ecm.soc_gain(dt);
        Ok(EkfModel {
            ecm,
            curve,
            dt,
            rc,
            soc_gain,
        })
    }

    /// Rebuild with new circuit parameters; the model is untouched if
    /// they are invalid. Identical parameters reproduce the model
    /// bit for bit.
    pub fn with_params(&self, ecm: EcmParams<T>) -> Result<Self, EkfError> {
        Self::new(ecm, self.curve.clone(), self.dt)
    }

    pub fn ecm(&self) -> &EcmParams<T> {
        &self.ecm
    }

    pub fn curve(&self) -> &OcvCurve<T> {
        &self.curve
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn rc(&self) -> RcDiscrete<T> {
        self.rc
    }

    /// Measurement model `h(x) = ocv(soc) - r0 * current - v1`, with the
    /// SOC argument clamped into the curve domain.
    pub fn predict_voltage(&self, x: &Vector<T, 2>, current: T) -> Result<T, EkfError> {
        let soc = x[0].clamp_to(T::zero(), T::one());
        Ok(self.curve.value(soc)? - self.ecm.r0() * current - x[1])
    }
}

/// Time update. Propagates the state with the same discrete recursion as
/// the simulator (including SOC saturation) and inflates the covariance
/// with the tag-selected process noise.
pub fn ekf_predict<T: Scalar>(
    state: &EkfState<T>,
    model: &EkfModel<T>,
    current: T,
    tag: ExcitationTag,
) -> EkfState<T> {
    let soc = (state.x[0] + model.soc_gain * current).clamp_to(T::zero(), T::one());
    let v1 = model.rc.a * state.x[1] + model.rc.b * current;

    let q_eff = if tag.is_sufficient() {
        state.q_base
    } else {
        state.q_base.scale(state.q_scale_low_excitation)
    };
    // F = diag(1, a): F P F^T is an entry-wise congruence.
    let p = state.p.congruence_diag([T::one(), model.rc.a]) + q_eff;

    EkfState {
        x: Vector([soc, v1]),
        p,
        ..*state
    }
}

/// Measurement update with the terminal voltage. Returns the corrected
/// state and the innovation.
pub fn ekf_update<T: Scalar>(
    state: &EkfState<T>,
    model: &EkfModel<T>,
    measured_v: T,
    current: T,
) -> Result<(EkfState<T>, T), EkfError> {
    let soc = state.x[0].clamp_to(T::zero(), T::one());
    let h_pred = model.predict_voltage(&state.x, current)?;
    let docv = model.curve.slope(soc)?;

    // H = [docv, -1]; s = H P H^T + r.
    let p = &state.p;
    let s = docv * docv * p[(0, 0)] - docv * (p[(0, 1)] + p[(1, 0)]) + p[(1, 1)] + state.r;
    if !(s > T::zero()) {
        return Err(EkfError::InnovationVariance(s.f64()));
    }
    // K = P H^T / s.
    let k = Vector([
        (p[(0, 0)] * docv - p[(0, 1)]) / s,
        (p[(1, 0)] * docv - p[(1, 1)]) / s,
    ]);

    let innovation = measured_v - h_pred;
    let mut x = state.x + k.scale(innovation);
    x[0] = x[0].clamp_to(T::zero(), T::one());
    if x[0] != state.x[0] + k[0] * innovation {
        log::debug!(
            "soc clamped after update: raw {}",
            (state.x[0] + k[0] * innovation).f64()
        );
    }

    // P' = (I - K H) P, re-symmetrized.
    let kh = Matrix([[k[0] * docv, -k[0]], [k[1] * docv, -k[1]]]);
    let p_next = (Matrix::identity() - kh).mul_mat(p).symmetrized();

    let next = EkfState {
        x,
        p: p_next,
        ..*state
    };
    Ok((next, innovation))
}

/// SOC update by direct current integration, saturating at `[0, 1]`.
pub fn coulomb_count<T: Scalar>(soc: T, current: T, dt: T, capacity: T, eta: T) -> T {
    let gain = -(eta * dt) / capacity;
    (soc + gain * current).clamp_to(T::zero(), T::one())
}
