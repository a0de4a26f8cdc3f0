//! Excitation-aware adaptation: condition-number evaluation of the RLS
//! information matrix, the binary excitation tag, and the hill-climbing
//! tuner that steers the first forgetting factor toward lower condition
//! numbers.

use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Relative symmetry tolerance for condition-number inputs.
const SYM_REL_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error("matrix asymmetric beyond tolerance: max |m - m^T| = {asym:e}")]
    Asymmetric { asym: f64 },
    #[error("window length {got} does not match configured {want}")]
    WindowLength { got: usize, want: usize },
    #[error("{0}")]
    InvalidConfig(String),
}

/// 2-norm condition number of a symmetric positive semi-definite matrix:
/// the ratio of extreme singular values. Returns infinity when the
/// smallest singular value vanishes (rank-deficient information).
pub fn condition_number<T: Scalar, const N: usize>(m: &Matrix<T, N>) -> Result<T, AdaptiveError> {
    let asym = m.max_asymmetry();
    let scale = T::one().max(m.max_abs());
    if asym > T::c(SYM_REL_TOL) * scale {
        return Err(AdaptiveError::Asymmetric { asym: asym.f64() });
    }
    // For a symmetric matrix the singular values are |eigenvalues|.
    let eig = m.sym_eigenvalues();
    let mut sigma_min = T::infinity();
    let mut sigma_max = T::zero();
    for e in eig {
        let s = e.abs();
        sigma_min = sigma_min.min(s);
        sigma_max = sigma_max.max(s);
    }
    if sigma_min == T::zero() {
        return Ok(T::infinity());
    }
    Ok(sigma_max / sigma_min)
}

/// Binary per-sample excitation flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExcitationTag {
    Insufficient,
    Sufficient,
}

impl ExcitationTag {
    pub fn as_u8(&self) -> u8 {
        match self {
            ExcitationTag::Insufficient => 0,
            ExcitationTag::Sufficient => 1,
        }
    }

    pub fn is_sufficient(&self) -> bool {
        matches!(self, ExcitationTag::Sufficient)
    }
}

/// Excitation-tag thresholds over a rolling current window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TagConfig<T> {
    /// Window length in samples.
    pub window: usize,
    /// Minimum population standard deviation, amperes.
    pub std_threshold: T,
    /// Minimum peak-to-peak range, amperes.
    pub range_threshold: T,
}

impl<T: Scalar> TagConfig<T> {
    pub fn new(window: usize, std_threshold: T, range_threshold: T) -> Result<Self, AdaptiveError> {
        if window < 2 {
            return Err(AdaptiveError::InvalidConfig(format!(
                "tag window must be >= 2, got {window}"
            )));
        }
        if !(std_threshold > T::zero()) || !(range_threshold > T::zero()) {
            return Err(AdaptiveError::InvalidConfig(
                "tag thresholds must be positive".to_string(),
            ));
        }
        Ok(TagConfig {
            window,
            std_threshold,
            range_threshold,
        })
    }

    /// Defaults derived from the cell's 1C current: a 60-sample window
    /// with std and range thresholds at 5% and 10% of 1C.
    pub fn for_one_c(one_c_current: T) -> Self {
        TagConfig {
            window: 60,
            std_threshold: T::c(0.05) * one_c_current,
            range_threshold: T::c(0.1) * one_c_current,
        }
    }
}

/// Tag a full window of currents: sufficient iff both the population
/// standard deviation and the range strictly exceed their thresholds.
pub fn excitation_tag<T: Scalar>(
    window: &[T],
    cfg: &TagConfig<T>,
) -> Result<ExcitationTag, AdaptiveError> {
    if window.len() != cfg.window {
        return Err(AdaptiveError::WindowLength {
            got: window.len(),
            want: cfg.window,
        });
    }
    let n = T::c(window.len() as f64);
    let mean = window.iter().copied().sum::<T>() / n;
    let var = window.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let std = var.sqrt();
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for &x in window {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let range = hi - lo;
    if std > cfg.std_threshold && range > cfg.range_threshold {
        Ok(ExcitationTag::Sufficient)
    } else {
        Ok(ExcitationTag::Insufficient)
    }
}

/// Tuning policy for the first forgetting factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AutoTuneConfig<T> {
    /// Tagged samples between evaluations.
    pub eval_window: usize,
    /// Step applied to the factor at each evaluation.
    pub delta: T,
    pub lambda_lo: T,
    pub lambda_hi: T,
    /// Exponential smoothing factor applied to the raw condition number.
    pub cn_smoothing: T,
}

impl<T: Scalar> AutoTuneConfig<T> {
    pub fn new(
        eval_window: usize,
        delta: T,
        lambda_lo: T,
        lambda_hi: T,
        cn_smoothing: T,
    ) -> Result<Self, AdaptiveError> {
        if eval_window == 0 {
            return Err(AdaptiveError::InvalidConfig(
                "eval_window must be positive".to_string(),
            ));
        }
        if !(lambda_lo < lambda_hi && lambda_hi < T::one()) {
            return Err(AdaptiveError::InvalidConfig(format!(
                "need lambda_lo < lambda_hi < 1, got [{lambda_lo}, {lambda_hi}]"
            )));
        }
        if !(delta > T::zero()) {
            return Err(AdaptiveError::InvalidConfig(
                "delta must be positive".to_string(),
            ));
        }
        if !(cn_smoothing > T::zero() && cn_smoothing <= T::one()) {
            return Err(AdaptiveError::InvalidConfig(
                "cn_smoothing must be in (0, 1]".to_string(),
            ));
        }
        Ok(AutoTuneConfig {
            eval_window,
            delta,
            lambda_lo,
            lambda_hi,
            cn_smoothing,
        })
    }
}

impl<T: Scalar> Default for AutoTuneConfig<T> {
    fn default() -> Self {
        AutoTuneConfig {
            eval_window: 300,
            delta: T::c(0.005),
            lambda_lo: T::c(0.90),
            lambda_hi: T::c(0.9999),
            cn_smoothing: T::c(0.1),
        }
    }
}

/// Hill-climber state. The smoothed condition number is compared between
/// consecutive evaluation points; an increase flips the search direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AutoTuneState<T> {
    pub lambda1: T,
    /// `+1` or `-1`.
    pub direction: T,
    /// Running exponentially smoothed condition number.
    pub smoothed_cn: Option<T>,
    /// Smoothed condition number captured at the previous evaluation.
    pub smoothed_cn_prev: Option<T>,
    /// Tagged samples accumulated since the last evaluation.
    pub samples_since_eval: usize,
}

impl<T: Scalar> AutoTuneState<T> {
    pub fn new(lambda1: T, cfg: &AutoTuneConfig<T>) -> Self {
        AutoTuneState {
            lambda1: lambda1.clamp_to(cfg.lambda_lo, cfg.lambda_hi),
            direction: T::one(),
            smoothed_cn: None,
            smoothed_cn_prev: None,
            samples_since_eval: 0,
        }
    }
}

/// Advance the tuner by one sample.
///
/// Frozen (returned unchanged) while excitation is insufficient, and for
/// non-finite condition numbers, which occur while the information matrix
/// is still rank-deficient. Every `eval_window` tagged samples the
/// smoothed condition number is compared against the previous evaluation:
/// if it decreased the direction is kept, otherwise flipped, and the
/// factor moves one `delta` in that direction, clamped to the bounds.
pub fn autotune_step<T: Scalar>(
    state: &AutoTuneState<T>,
    cn_now: T,
    cfg: &AutoTuneConfig<T>,
    tag: ExcitationTag,
) -> AutoTuneState<T> {
    if !tag.is_sufficient() || !cn_now.is_finite() {
        return *state;
    }
    let mut next = *state;
    let smoothed = match state.smoothed_cn {
        None => cn_now,
        Some(prev) => prev + cfg.cn_smoothing * (cn_now - prev),
    };
    next.smoothed_cn = Some(smoothed);
    next.samples_since_eval += 1;

    if next.samples_since_eval >= cfg.eval_window {
        let improved = match state.smoothed_cn_prev {
            None => true,
            Some(prev) => smoothed < prev,
        };
        if !improved {
            next.direction = -next.direction;
        }
        next.lambda1 =
            (next.lambda1 + next.direction * cfg.delta).clamp_to(cfg.lambda_lo, cfg.lambda_hi);
        next.smoothed_cn_prev = Some(smoothed);
        next.samples_since_eval = 0;
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn condition_number_identity_is_one() {
        let m = Matrix::<f64, 4>::identity();
        assert_eq!(condition_number(&m).unwrap(), 1.0);
    }

    #[test]
    fn condition_number_of_diagonal() {
        let m = Matrix::<f64, 4>::from_diag([10.0, 1.0, 1.0, 1.0]);
        assert_relative_eq!(condition_number(&m).unwrap(), 10.0, max_relative = 1e-12);
    }

    #[test]
    fn condition_number_rejects_asymmetry() {
        let mut m = Matrix::<f64, 4>::identity();
        m[(0, 1)] = 1e-3;
        assert!(matches!(
            condition_number(&m),
            Err(AdaptiveError::Asymmetric { .. })
        ));
    }

    #[test]
    fn condition_number_singular_is_infinite() {
        let m = Matrix::<f64, 4>::from_diag([1.0, 1.0, 1.0, 0.0]);
        assert!(condition_number(&m).unwrap().is_infinite());
        assert!(condition_number(&Matrix::<f64, 4>::zeros())
            .unwrap()
            .is_infinite());
    }

    fn tag_cfg() -> TagConfig<f64> {
        TagConfig::for_one_c(72.0)
    }

    #[test]
    fn constant_window_is_insufficient() {
        let w = vec![42.0; 60];
        assert_eq!(
            excitation_tag(&w, &tag_cfg()).unwrap(),
            ExcitationTag::Insufficient
        );
    }

    #[test]
    fn alternating_prbs_is_sufficient() {
        let w: Vec<f64> = (0..60).map(|k| if k % 2 == 0 { 72.0 } else { -72.0 }).collect();
        assert_eq!(
            excitation_tag(&w, &tag_cfg()).unwrap(),
            ExcitationTag::Sufficient
        );
    }

    #[test]
    fn std_exactly_at_threshold_is_insufficient() {
        // +/-1 alternating has population std exactly 1 and range 2.
        let cfg = TagConfig::new(60, 1.0, 1.5).unwrap();
        let w: Vec<f64> = (0..60).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(
            excitation_tag(&w, &cfg).unwrap(),
            ExcitationTag::Insufficient
        );
        // Strictly past the threshold flips the tag.
        let w: Vec<f64> = (0..60).map(|k| if k % 2 == 0 { 1.01 } else { -1.01 }).collect();
        assert_eq!(excitation_tag(&w, &cfg).unwrap(), ExcitationTag::Sufficient);
    }

    #[test]
    fn short_window_is_an_error() {
        let w = vec![1.0; 59];
        assert!(matches!(
            excitation_tag(&w, &tag_cfg()),
            Err(AdaptiveError::WindowLength { got: 59, want: 60 })
        ));
    }

    #[test]
    fn tag_is_permutation_invariant() {
        let cfg = tag_cfg();
        let mut w: Vec<f64> = (0..60).map(|k| ((k * 37) % 144) as f64 - 72.0).collect();
        let before = excitation_tag(&w, &cfg).unwrap();
        w.reverse();
        w.swap(3, 47);
        assert_eq!(excitation_tag(&w, &cfg).unwrap(), before);
    }

    #[test]
    fn autotune_frozen_without_excitation() {
        let cfg = AutoTuneConfig::default();
        let state = AutoTuneState::new(0.95, &cfg);
        let mut s = state;
        for _ in 0..5 * cfg.eval_window {
            s = autotune_step(&s, 1e4, &cfg, ExcitationTag::Insufficient);
        }
        assert_eq!(s, state);
    }

    #[test]
    fn autotune_skips_non_finite_cn() {
        let cfg = AutoTuneConfig::default();
        let state = AutoTuneState::new(0.95, &cfg);
        let s = autotune_step(&state, f64::INFINITY, &cfg, ExcitationTag::Sufficient);
        assert_eq!(s, state);
    }

    #[test]
    fn autotune_clamps_at_upper_bound() {
        let cfg = AutoTuneConfig::default();
        let mut s = AutoTuneState::new(cfg.lambda_hi, &cfg);
        // Strictly decreasing CN keeps the +1 direction; the factor must
        // stay pinned at the bound.
        let mut cn = 1000.0;
        for _ in 0..3 * cfg.eval_window {
            cn *= 0.999;
            s = autotune_step(&s, cn, &cfg, ExcitationTag::Sufficient);
            assert!(s.lambda1 <= cfg.lambda_hi);
        }
        assert_eq!(s.lambda1, cfg.lambda_hi);
        assert_eq!(s.direction, 1.0);
    }

    #[test]
    fn autotune_moves_only_at_evaluations() {
        let cfg = AutoTuneConfig::default();
        let mut s = AutoTuneState::new(0.95, &cfg);
        for k in 1..cfg.eval_window {
            s = autotune_step(&s, 100.0 + k as f64, &cfg, ExcitationTag::Sufficient);
            assert_eq!(s.lambda1, 0.95);
        }
        s = autotune_step(&s, 500.0, &cfg, ExcitationTag::Sufficient);
        assert_relative_eq!(s.lambda1, 0.955, max_relative = 1e-12);
        assert_eq!(s.samples_since_eval, 0);
    }

    #[test]
    fn autotune_never_leaves_bounds_under_adversarial_cn() {
        let cfg = AutoTuneConfig::default();
        let mut s = AutoTuneState::new(0.993, &cfg);
        let mut x = 1.0f64;
        for k in 0..20_000 {
            x = (x * 1103.515).sin().abs() * 1e6 + 1.0;
            let tag = if k % 7 == 0 {
                ExcitationTag::Insufficient
            } else {
                ExcitationTag::Sufficient
            };
            s = autotune_step(&s, x, &cfg, tag);
            assert!(s.lambda1 >= cfg.lambda_lo && s.lambda1 <= cfg.lambda_hi);
        }
    }
}
