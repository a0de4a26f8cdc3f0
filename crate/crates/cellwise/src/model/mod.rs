//! 1RC equivalent-circuit cell model and ground-truth simulator.
//!
//! The cell is an OCV source in series with an ohmic resistance `r0` and
//! one `r1 || c1` polarization branch. Current is discharge-positive and
//! the terminal voltage of a sample is
//!
//! ```text
//! v = ocv(soc) - r0 * i - v1
//! ```
//!
//! where `soc` and `v1` are the state *before* the sample's current has
//! been integrated: the ohmic drop responds instantaneously to the newly
//! applied current while SOC and the polarization voltage only reflect
//! past inputs. The RC branch is discretized with a zero-order hold,
//! which is exact for piecewise-constant current.

mod noise;
mod ocv;
mod profile;
mod synthetic;

pub use noise::{inject_noise, NoiseConfig};
pub use ocv::OcvCurve;
pub use profile::{DriveProfile, ProfileError, ProfileSample};
pub use synthetic::{make_synthetic_profile, SyntheticKind, SyntheticSpec};

use thiserror::Error;

use crate::scalar::Scalar;

/// Errors from cell-model construction and evaluation.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("coulombic efficiency must be in (0, 1], got {value}")]
    InvalidEta { value: f64 },
    #[error("soc {value} outside [0, 1]")]
    SocOutOfRange { value: f64 },
    #[error("ocv curve invalid: {0}")]
    InvalidCurve(String),
}

fn require_positive<T: Scalar>(name: &'static str, value: T) -> Result<(), ModelError> {
    if value > T::zero() && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonPositive {
            name,
            value: value.f64(),
        })
    }
}

/// Equivalent-circuit parameters of one cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EcmParams<T> {
    r0: T,
    r1: T,
    c1: T,
    capacity: T,
    eta: T,
}

impl<T: Scalar> EcmParams<T> {
    /// `r0`, `r1` in ohms, `c1` in farads, `capacity` in ampere-seconds,
    /// `eta` the coulombic efficiency in `(0, 1]`.
    pub fn new(r0: T, r1: T, c1: T, capacity: T, eta: T) -> Result<Self, ModelError> {
        require_positive("r0", r0)?;
        require_positive("r1", r1)?;
        require_positive("c1", c1)?;
        require_positive("capacity", capacity)?;
        if !(eta > T::zero() && eta <= T::one()) {
            return Err(ModelError::InvalidEta { value: eta.f64() });
        }
        Ok(EcmParams {
            r0,
            r1,
            c1,
            capacity,
            eta,
        })
    }

    pub fn r0(&self) -> T {
        self.r0
    }

    pub fn r1(&self) -> T {
        self.r1
    }

    pub fn c1(&self) -> T {
        self.c1
    }

    /// Cell capacity in ampere-seconds.
    pub fn capacity(&self) -> T {
        self.capacity
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    /// Polarization time constant `r1 * c1` in seconds.
    pub fn tau(&self) -> T {
        self.r1 * self.c1
    }

    /// The 1C current in amperes (full capacity in one hour).
    pub fn one_c_current(&self) -> T {
        self.capacity / T::c(3600.0)
    }

    /// SOC change per ampere of discharge current over one step:
    /// `-(eta * dt) / capacity`.
    ///
    /// Shared between the simulator, the Coulomb counter and the EKF
    /// transition so their state recursions agree bit for bit.
    pub fn soc_gain(&self, dt: T) -> T {
        -(self.eta * dt) / self.capacity
    }

    /// Same parameters with `r0`/`r1` multiplied by the given factors.
    pub fn scaled(&self, r0_factor: T, r1_factor: T) -> Result<Self, ModelError> {
        Self::new(
            self.r0 * r0_factor,
            self.r1 * r1_factor,
            self.c1,
            self.capacity,
            self.eta,
        )
    }
}

/// Zero-order-hold discretization of the RC branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RcDiscrete<T> {
    /// Decay per step, `exp(-dt / (r1 * c1))`.
    pub a: T,
    /// Current gain per step, `r1 * (1 - a)`.
    pub b: T,
}

/// Discretize the polarization branch over a step of `dt` seconds.
pub fn discretize_rc<T: Scalar>(r1: T, c1: T, dt: T) -> Result<RcDiscrete<T>, ModelError> {
    require_positive("r1", r1)?;
    require_positive("c1", c1)?;
    require_positive("dt", dt)?;
    let a = (-dt / (r1 * c1)).exp();
    let b = r1 * (T::one() - a);
    Ok(RcDiscrete { a, b })
}

/// Instantaneous cell state: state of charge and polarization voltage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellState<T> {
    /// State of charge in `[0, 1]`.
    pub soc: T,
    /// Voltage across the RC branch, volts.
    pub v1: T,
}

impl<T: Scalar> CellState<T> {
    pub fn new(soc: T, v1: T) -> Self {
        CellState {
            soc: soc.clamp_to(T::zero(), T::one()),
            v1,
        }
    }
}

/// Advance the cell one step under `current` (A, discharge-positive).
///
/// Returns the post-step state and the terminal voltage observed at this
/// sample, i.e. `ocv(soc) - r0 * current - v1` evaluated at the pre-step
/// state. SOC saturates at the `[0, 1]` boundaries instead of erroring.
pub fn simulate_step<T: Scalar>(
    state: CellState<T>,
    current: T,
    dt: T,
    params: &EcmParams<T>,
    curve: &OcvCurve<T>,
) -> Result<(CellState<T>, T), ModelError> {
    let rc = discretize_rc(params.r1, params.c1, dt)?;
    let terminal_v = curve.value(state.soc)? - params.r0 * current - state.v1;
    let soc = (state.soc + params.soc_gain(dt) * current).clamp_to(T::zero(), T::one());
    let v1 = rc.a * state.v1 + rc.b * current;
    Ok((CellState { soc, v1 }, terminal_v))
}

/// Time-varying true parameters: a constant scaling of a nominal cell,
/// optionally with a step change at a fixed time.
#[derive(Clone, Copy, Debug)]
pub struct ParamSchedule<T> {
    base: EcmParams<T>,
    r0_scale: T,
    r1_scale: T,
    step: Option<ScheduledStep<T>>,
}

/// Additional scaling applied from `at_time` onwards.
#[derive(Clone, Copy, Debug)]
pub struct ScheduledStep<T> {
    pub at_time: T,
    pub r0_factor: T,
    pub r1_factor: T,
}

impl<T: Scalar> ParamSchedule<T> {
    pub fn constant(params: EcmParams<T>) -> Self {
        ParamSchedule {
            base: params,
            r0_scale: T::one(),
            r1_scale: T::one(),
            step: None,
        }
    }

    pub fn scaled(base: EcmParams<T>, r0_scale: T, r1_scale: T) -> Result<Self, ModelError> {
        // Validate eagerly so a bad scale fails at configuration time.
        base.scaled(r0_scale, r1_scale)?;
        Ok(ParamSchedule {
            base,
            r0_scale,
            r1_scale,
            step: None,
        })
    }

    pub fn with_step(mut self, step: ScheduledStep<T>) -> Result<Self, ModelError> {
        self.base.scaled(
            self.r0_scale * step.r0_factor,
            self.r1_scale * step.r1_factor,
        )?;
        self.step = Some(step);
        Ok(self)
    }

    /// True parameters at absolute time `t`.
    pub fn params_at(&self, t: T) -> EcmParams<T> {
        let mut r0_f = self.r0_scale;
        let mut r1_f = self.r1_scale;
        if let Some(step) = &self.step {
            if t >= step.at_time {
                r0_f *= step.r0_factor;
                r1_f *= step.r1_factor;
            }
        }
        self.base
            .scaled(r0_f, r1_f)
            .expect("schedule validated at construction")
    }
}

/// One sample of the ground-truth trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthRecord<T> {
    pub t: T,
    /// True SOC at the sample instant (before this sample's current acts).
    pub soc: T,
    /// True polarization voltage at the sample instant.
    pub v1: T,
    /// Noise-free terminal voltage at the sample instant.
    pub voltage: T,
    pub r0: T,
    pub r1: T,
    pub c1: T,
}

/// Ground-truth trajectory aligned one-to-one with a drive profile.
#[derive(Clone, Debug, Default)]
pub struct TruthTrace<T> {
    pub records: Vec<TruthRecord<T>>,
}

impl<T: Scalar> TruthTrace<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn soc(&self) -> Vec<T> {
        self.records.iter().map(|r| r.soc).collect()
    }
}

/// Ground-truth simulator for a (possibly drifting) 1RC cell.
#[derive(Clone, Debug)]
pub struct TruthSimulator<T> {
    schedule: ParamSchedule<T>,
    curve: OcvCurve<T>,
    state: CellState<T>,
}

impl<T: Scalar> TruthSimulator<T> {
    pub fn new(schedule: ParamSchedule<T>, curve: OcvCurve<T>, initial: CellState<T>) -> Self {
        TruthSimulator {
            schedule,
            curve,
            state: initial,
        }
    }

    pub fn state(&self) -> CellState<T> {
        self.state
    }

    /// Record the sample at time `t`, then integrate `current` over `dt`.
    pub fn step(&mut self, t: T, current: T, dt: T) -> Result<TruthRecord<T>, ModelError> {
        let params = self.schedule.params_at(t);
        let (next, voltage) = simulate_step(self.state, current, dt, &params, &self.curve)?;
        let record = TruthRecord {
            t,
            soc: self.state.soc,
            v1: self.state.v1,
            voltage,
            r0: params.r0(),
            r1: params.r1(),
            c1: params.c1(),
        };
        self.state = next;
        Ok(record)
    }

    /// Run over a whole profile, returning the truth trace and a copy of
    /// the profile with the noise-free terminal voltage filled in.
    pub fn run(
        &mut self,
        profile: &DriveProfile<T>,
    ) -> Result<(TruthTrace<T>, DriveProfile<T>), ModelError> {
        let dt = profile.dt();
        let mut records = Vec::with_capacity(profile.len());
        let mut voltages = Vec::with_capacity(profile.len());
        for sample in profile.samples() {
            let rec = self.step(sample.t, sample.current, dt)?;
            voltages.push(rec.voltage);
            records.push(rec);
        }
        let with_v = profile.with_voltages(&voltages);
        Ok((TruthTrace { records }, with_v))
    }
}
