//! Joint parameter/state estimation.
//!
//! Per sample: tag the excitation, run the (gated) RLS identification,
//! hand identified circuit parameters to the EKF once the tag has been
//! high long enough, then predict/update the EKF with tag-adapted
//! process noise. Also hosts the estimator zoo the comparison harness
//! runs: Coulomb counting, a fixed-parameter single EKF, and the three
//! RLS-joint variants.

mod report;

pub use report::{
    error_report, soh_metrics, ErrorReport, EstimateTrace, SohMetrics, TraceRecord,
};

use thiserror::Error;

use crate::adaptive::{
    autotune_step, condition_number, excitation_tag, AdaptiveError, AutoTuneConfig, AutoTuneState,
    ExcitationTag, TagConfig,
};
use crate::ekf::{coulomb_count, ekf_predict, ekf_update, EkfError, EkfModel, EkfState};
use crate::linalg::{Matrix, Vector};
use crate::model::{DriveProfile, EcmParams, ModelError, OcvCurve, TruthTrace};
use crate::rls::{
    arx_to_ecm, dffrls_step, ecm_to_arx, mffrls_step, update_information_matrix, ArxTheta,
    DffRlsState, ForgettingMatrix, MffRlsState, Regressor, RlsError,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum JointError {
    #[error("trace length {trace} does not match reference length {other}")]
    LengthMismatch { trace: usize, other: usize },
    #[error("ground truth misaligned with profile at sample {index}")]
    TruthMisaligned { index: usize },
    #[error("estimator requires a measured voltage on every sample")]
    MissingVoltage,
    #[error("profile sample {index} contains a non-finite value")]
    NonFiniteSample { index: usize },
    #[error("no tagged samples: insufficient excitation for SOH metrics")]
    InsufficientExcitation,
    #[error(transparent)]
    Rls(#[from] RlsError),
    #[error(transparent)]
    Ekf(#[from] EkfError),
    #[error(transparent)]
    Adaptive(#[from] AdaptiveError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The estimators the harness can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Coulomb,
    SingleEkf,
    MffRlsEkf,
    DffRlsEkf,
    AdffRlsEkf,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Coulomb,
        EstimatorKind::SingleEkf,
        EstimatorKind::MffRlsEkf,
        EstimatorKind::DffRlsEkf,
        EstimatorKind::AdffRlsEkf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Coulomb => "coulomb",
            EstimatorKind::SingleEkf => "single_ekf",
            EstimatorKind::MffRlsEkf => "mffrls_ekf",
            EstimatorKind::DffRlsEkf => "dffrls_ekf",
            EstimatorKind::AdffRlsEkf => "adffrls_ekf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Everything a joint estimator run needs to know.
#[derive(Clone, Debug)]
pub struct JointConfig<T> {
    pub ecm_nominal: EcmParams<T>,
    pub curve: OcvCurve<T>,
    pub tag: TagConfig<T>,
    pub tune: AutoTuneConfig<T>,
    pub lambda_init: ForgettingMatrix<T>,
    /// Initial RLS covariance scale (`P0 = rls_p0 * I`).
    pub rls_p0: T,
    /// Process noise variance on the SOC state.
    pub q_soc: T,
    /// Process noise variance on the polarization state.
    pub q_v1: T,
    /// Process-noise widening while excitation is insufficient.
    pub q_scale: T,
    /// Measurement noise variance, V^2.
    pub r_meas: T,
    /// Initial EKF covariance diagonal.
    pub initial_p: (T, T),
    /// Consecutive tagged samples required before parameters reach the EKF.
    pub handoff_min_tag_run: usize,
    /// Starting SOC estimate; inverted from the first voltage when absent.
    pub initial_soc: Option<T>,
    /// Samples excluded from the head of every error report.
    pub warmup_samples: usize,
}

impl<T: Scalar> JointConfig<T> {
    pub fn new(ecm_nominal: EcmParams<T>, curve: OcvCurve<T>) -> Self {
        JointConfig {
            tag: TagConfig::for_one_c(ecm_nominal.one_c_current()),
            tune: AutoTuneConfig::default(),
            lambda_init: ForgettingMatrix::default_diagonal(),
            rls_p0: T::c(100.0),
            q_soc: T::c(1e-10),
            q_v1: T::c(1e-8),
            q_scale: T::c(10.0),
            r_meas: T::c(25e-6),
            initial_p: (T::c(1e-2), T::c(1e-4)),
            handoff_min_tag_run: 10,
            initial_soc: None,
            warmup_samples: 300,
            ecm_nominal,
            curve,
        }
    }

    /// Starting SOC: the explicit override if set, otherwise the OCV
    /// inverse of the first measured voltage with the nominal ohmic drop
    /// compensated, otherwise 0.5.
    pub fn resolve_initial_soc(&self, profile: &DriveProfile<T>) -> T {
        if let Some(soc) = self.initial_soc {
            return soc.clamp_to(T::zero(), T::one());
        }
        let first = &profile.samples()[0];
        match first.voltage {
            Some(v) => self
                .curve
                .soc_at(v + self.ecm_nominal.r0() * first.current),
            None => T::c(0.5),
        }
    }

    fn initial_ekf(&self, initial_soc: T) -> Result<EkfState<T>, EkfError> {
        EkfState::new(
            Vector([initial_soc, T::zero()]),
            Matrix::from_diag([self.initial_p.0, self.initial_p.1]),
            Matrix::from_diag([self.q_soc, self.q_v1]),
            self.q_scale,
            self.r_meas,
        )
    }
}

/// The identification core a joint estimator runs: full diagonal
/// forgetting or the decoupled per-parameter scalar channels.
#[derive(Clone, Debug, PartialEq)]
pub enum RlsCore<T> {
    Dff(DffRlsState<T>),
    Mff(MffRlsState<T>),
}

impl<T: Scalar> RlsCore<T> {
    pub fn theta(&self) -> &ArxTheta<T> {
        match self {
            RlsCore::Dff(s) => &s.theta,
            RlsCore::Mff(s) => &s.theta,
        }
    }

    pub fn lambda1(&self) -> T {
        match self {
            RlsCore::Dff(s) => s.lambda.get(0),
            RlsCore::Mff(s) => s.lambda.get(0),
        }
    }

    fn set_lambda1(&mut self, lambda: T) -> Result<(), RlsError> {
        match self {
            RlsCore::Dff(s) => s.lambda.set(0, lambda),
            RlsCore::Mff(s) => s.lambda.set(0, lambda),
        }
    }

    /// Advance the core by one sample; the diagonal-forgetting core also
    /// maintains its information matrix.
    fn step(&mut self, phi: &Regressor<T>, y: T) -> Result<T, RlsError> {
        match self {
            RlsCore::Dff(s) => {
                let (mut next, alpha) = dffrls_step(s, phi, y)?;
                next.a_info = update_information_matrix(&s.a_info, &s.lambda, phi);
                *s = next;
                Ok(alpha)
            }
            RlsCore::Mff(s) => {
                let (next, alpha) = mffrls_step(s, phi, y);
                *s = next;
                Ok(alpha)
            }
        }
    }

    pub fn info_matrix(&self) -> Option<&Matrix<T, 4>> {
        match self {
            RlsCore::Dff(s) => Some(&s.a_info),
            RlsCore::Mff(_) => None,
        }
    }
}

/// Live state of one joint estimator run.
#[derive(Clone, Debug)]
pub struct JointState<T> {
    pub rls: RlsCore<T>,
    pub ekf: EkfState<T>,
    pub model: EkfModel<T>,
    pub tune: AutoTuneState<T>,
    /// Rolling window of recent currents feeding the excitation tag.
    pub tag_window: Vec<T>,
    /// Consecutive tagged samples ending at the current one.
    pub tag_run_length: usize,
    /// Parameters currently inside the EKF: nominal until the first
    /// successful hand-off, then always the last accepted identification.
    pub last_good_ecm: EcmParams<T>,
    pub prev_voltage: Option<T>,
    pub prev_current: T,
    /// Most recent condition number of the information matrix.
    pub last_cn: T,
    /// Number of RLS parameter updates performed so far.
    pub rls_updates: usize,
    autotune_enabled: bool,
}

impl<T: Scalar> JointState<T> {
    /// Build the starting state for the given estimator kind
    /// (`MffRlsEkf`, `DffRlsEkf` or `AdffRlsEkf`).
    pub fn new(
        cfg: &JointConfig<T>,
        dt: T,
        initial_soc: T,
        kind: EstimatorKind,
    ) -> Result<Self, JointError> {
        let nominal = cfg.ecm_nominal;
        let bias = cfg.curve.value(initial_soc.clamp_to(T::zero(), T::one()))?;
        let theta0 = ecm_to_arx(nominal.r0(), nominal.r1(), nominal.c1(), dt, bias)?;
        let mut rls = match kind {
            EstimatorKind::MffRlsEkf => {
                RlsCore::Mff(MffRlsState::new(theta0, cfg.rls_p0, cfg.lambda_init))
            }
            EstimatorKind::DffRlsEkf | EstimatorKind::AdffRlsEkf => {
                RlsCore::Dff(DffRlsState::new(theta0, cfg.rls_p0, cfg.lambda_init))
            }
            other => panic!("JointState does not drive {other:?}"),
        };
        let autotune_enabled = kind == EstimatorKind::AdffRlsEkf;
        let tune = AutoTuneState::new(cfg.lambda_init.get(0), &cfg.tune);
        if autotune_enabled {
            // The tuner clamps into its own bounds; keep the core in sync
            // from the first sample.
            rls.set_lambda1(tune.lambda1)?;
        }
        Ok(JointState {
            rls,
            ekf: cfg.initial_ekf(initial_soc)?,
            model: EkfModel::new(nominal, cfg.curve.clone(), dt)?,
            tune,
            tag_window: Vec::with_capacity(cfg.tag.window),
            tag_run_length: 0,
            last_good_ecm: nominal,
            prev_voltage: None,
            prev_current: T::zero(),
            last_cn: T::nan(),
            rls_updates: 0,
            autotune_enabled,
        })
    }
}

/// Advance a joint estimator by one measured sample.
///
/// Pipeline: tag the excitation window; when sufficient, update the RLS
/// core (and, for the adaptive variant, retune the first forgetting
/// factor from the information-matrix condition number); after
/// `handoff_min_tag_run` consecutive tagged samples push the recovered
/// circuit parameters into the EKF; finally run the EKF predict/update
/// pair with tag-adapted process noise. A failed parameter recovery
/// skips the hand-off and keeps the last good parameters.
pub fn joint_step<T: Scalar>(
    state: &mut JointState<T>,
    t: T,
    current: T,
    voltage: T,
    cfg: &JointConfig<T>,
) -> Result<TraceRecord<T>, JointError> {
    // Excitation tag over the rolling current window; a window that has
    // not filled yet cannot certify excitation.
    state.tag_window.push(current);
    if state.tag_window.len() > cfg.tag.window {
        state.tag_window.remove(0);
    }
    let tag = if state.tag_window.len() == cfg.tag.window {
        excitation_tag(&state.tag_window, &cfg.tag)?
    } else {
        ExcitationTag::Insufficient
    };
    if tag.is_sufficient() {
        state.tag_run_length += 1;
    } else {
        state.tag_run_length = 0;
    }

    // Identification, frozen entirely while excitation is insufficient.
    if tag.is_sufficient() {
        if let Some(prev_v) = state.prev_voltage {
            let phi = Regressor::new(prev_v, current, state.prev_current)?;
            state.rls.step(&phi, voltage)?;
            state.rls_updates += 1;
            if let Some(a_info) = state.rls.info_matrix() {
                let cn = condition_number(a_info)?;
                state.last_cn = cn;
                if state.autotune_enabled {
                    state.tune = autotune_step(&state.tune, cn, &cfg.tune, tag);
                    state.rls.set_lambda1(state.tune.lambda1)?;
                }
            }
        }
    }

    // Debounced hand-off of identified parameters into the EKF.
    if state.tag_run_length >= cfg.handoff_min_tag_run {
        match recovered_model(state, cfg) {
            Ok((ecm, model)) => {
                state.model = model;
                state.last_good_ecm = ecm;
            }
            Err(e) => log::debug!("hand-off skipped at t={}: {e}", t.f64()),
        }
    }

    // State estimation. The prediction integrates the previous sample's
    // current; the measurement sees this sample's ohmic drop.
    state.ekf = ekf_predict(&state.ekf, &state.model, state.prev_current, tag);
    let (updated, _innovation) = ekf_update(&state.ekf, &state.model, voltage, current)?;
    state.ekf = updated;

    let v_est = state.model.predict_voltage(&state.ekf.x, current)?;
    state.prev_voltage = Some(voltage);
    state.prev_current = current;

    Ok(TraceRecord {
        t,
        soc_est: state.ekf.soc(),
        v_est,
        tag: tag.as_u8(),
        cn: state.last_cn,
        lambda1: state.rls.lambda1(),
        r0_est: state.last_good_ecm.r0(),
        r1_est: state.last_good_ecm.r1(),
        c1_est: state.last_good_ecm.c1(),
    })
}

/// Recover circuit parameters from the current estimate and rebuild the
/// filter model around them, capacity and efficiency staying nominal.
fn recovered_model<T: Scalar>(
    state: &JointState<T>,
    cfg: &JointConfig<T>,
) -> Result<(EcmParams<T>, EkfModel<T>), JointError> {
    let id = arx_to_ecm(state.rls.theta(), state.model.dt())?;
    let ecm = EcmParams::new(
        id.r0,
        id.r1,
        id.c1,
        cfg.ecm_nominal.capacity(),
        cfg.ecm_nominal.eta(),
    )?;
    let model = state.model.with_params(ecm)?;
    Ok((ecm, model))
}

/// One estimator's output over a profile.
#[derive(Clone, Debug)]
pub struct EstimatorRun<T> {
    pub trace: EstimateTrace<T>,
    pub report: ErrorReport<T>,
}

/// Run one estimator over a profile, producing the per-sample trace and
/// the error report. SOC errors need `truth`; voltage errors need the
/// profile's measured voltage.
pub fn run_estimator<T: Scalar>(
    profile: &DriveProfile<T>,
    truth: Option<&TruthTrace<T>>,
    kind: EstimatorKind,
    cfg: &JointConfig<T>,
    profile_name: &str,
) -> Result<EstimatorRun<T>, JointError> {
    validate_profile_samples(profile)?;
    if let Some(truth) = truth {
        validate_alignment(profile, truth)?;
    }

    let initial_soc = cfg.resolve_initial_soc(profile);
    let dt = profile.dt();
    let needs_voltage = kind != EstimatorKind::Coulomb;
    if needs_voltage && !profile.has_voltage() {
        return Err(JointError::MissingVoltage);
    }

    let mut records = Vec::with_capacity(profile.len());
    match kind {
        EstimatorKind::Coulomb => {
            let nominal = cfg.ecm_nominal;
            let mut soc = initial_soc;
            for s in profile.samples() {
                records.push(TraceRecord {
                    t: s.t,
                    soc_est: soc,
                    v_est: T::nan(),
                    tag: 0,
                    cn: T::nan(),
                    lambda1: T::nan(),
                    r0_est: T::nan(),
                    r1_est: T::nan(),
                    c1_est: T::nan(),
                });
                soc = coulomb_count(soc, s.current, dt, nominal.capacity(), nominal.eta());
            }
        }
        EstimatorKind::SingleEkf => {
            let model = EkfModel::new(cfg.ecm_nominal, cfg.curve.clone(), dt)?;
            let mut ekf = cfg.initial_ekf(initial_soc)?;
            let mut prev_current = T::zero();
            for s in profile.samples() {
                let voltage = s.voltage.expect("checked above");
                // No excitation awareness: baseline process noise always.
                ekf = ekf_predict(&ekf, &model, prev_current, ExcitationTag::Sufficient);
                let (updated, _) = ekf_update(&ekf, &model, voltage, s.current)?;
                ekf = updated;
                let v_est = model.predict_voltage(&ekf.x, s.current)?;
                prev_current = s.current;
                records.push(TraceRecord {
                    t: s.t,
                    soc_est: ekf.soc(),
                    v_est,
                    tag: 0,
                    cn: T::nan(),
                    lambda1: T::nan(),
                    r0_est: cfg.ecm_nominal.r0(),
                    r1_est: cfg.ecm_nominal.r1(),
                    c1_est: cfg.ecm_nominal.c1(),
                });
            }
        }
        EstimatorKind::MffRlsEkf | EstimatorKind::DffRlsEkf | EstimatorKind::AdffRlsEkf => {
            let mut state = JointState::new(cfg, dt, initial_soc, kind)?;
            for s in profile.samples() {
                let voltage = s.voltage.expect("checked above");
                records.push(joint_step(&mut state, s.t, s.current, voltage, cfg)?);
            }
        }
    }

    let trace = EstimateTrace { records };
    let truth_soc = truth.map(|t| t.soc());
    let measured_v = profile.voltages();
    let report = error_report(
        &trace,
        truth_soc.as_deref(),
        measured_v.as_deref(),
        cfg.warmup_samples,
        kind.name(),
        profile_name,
    )?;
    Ok(EstimatorRun { trace, report })
}

fn validate_profile_samples<T: Scalar>(profile: &DriveProfile<T>) -> Result<(), JointError> {
    for (index, s) in profile.samples().iter().enumerate() {
        let voltage_ok = s.voltage.is_none_or(|v| v.is_finite());
        if !s.current.is_finite() || !voltage_ok {
            return Err(JointError::NonFiniteSample { index });
        }
    }
    Ok(())
}

fn validate_alignment<T: Scalar>(
    profile: &DriveProfile<T>,
    truth: &TruthTrace<T>,
) -> Result<(), JointError> {
    if profile.len() != truth.len() {
        return Err(JointError::LengthMismatch {
            trace: profile.len(),
            other: truth.len(),
        });
    }
    let tol = profile.dt() * T::c(1e-9);
    for (index, (s, r)) in profile.samples().iter().zip(&truth.records).enumerate() {
        if (s.t - r.t).abs() > tol {
            return Err(JointError::TruthMisaligned { index });
        }
    }
    Ok(())
}
