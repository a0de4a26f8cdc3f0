//! Synthetic drive-profile generation.
//!
//! Profiles are built from three segment types: a pseudo-random binary
//! current for driving dynamics, zero-current rest, and constant-current
//! charging. The hybrid kind cycles through them in that order, which
//! alternates well-excited and excitation-starved stretches.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{DriveProfile, ProfileError, ProfileSample};
use crate::scalar::Scalar;

/// Maximum hold length of one PRBS level, in samples. Short enough that
/// any 60-sample window contains at least one transition.
const PRBS_MAX_HOLD: u64 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Pseudo-random binary current, +/- the dynamic amplitude.
    DynamicPrbs,
    /// Zero current.
    Rest,
    /// Constant charging current.
    CcCharge,
    /// Repeating dynamic / rest / charge segments.
    Hybrid,
}

impl SyntheticKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dynamic_prbs" => Some(Self::DynamicPrbs),
            "rest" => Some(Self::Rest),
            "cc_charge" => Some(Self::CcCharge),
            "hybrid" => Some(Self::Hybrid),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::DynamicPrbs => "dynamic_prbs",
            Self::Rest => "rest",
            Self::CcCharge => "cc_charge",
            Self::Hybrid => "hybrid",
        }
    }
}

/// Parameters of a synthetic profile.
#[derive(Clone, Copy, Debug)]
pub struct SyntheticSpec<T> {
    pub kind: SyntheticKind,
    /// Total duration, seconds.
    pub duration: T,
    /// Sampling interval, seconds.
    pub dt: T,
    /// The 1C current of the cell the profile is meant for, amperes.
    pub one_c_current: T,
    /// Segment length of the hybrid cycle, seconds.
    pub segment: T,
    /// PRBS amplitude as a multiple of 1C.
    pub prbs_amp_c: T,
    /// Charging rate as a multiple of 1C (applied as negative current).
    pub charge_rate_c: T,
    /// Constant temperature tag carried on every sample.
    pub temperature: Option<T>,
    pub seed: u64,
}

impl<T: Scalar> SyntheticSpec<T> {
    pub fn new(kind: SyntheticKind, duration: T, dt: T, one_c_current: T, seed: u64) -> Self {
        SyntheticSpec {
            kind,
            duration,
            dt,
            one_c_current,
            segment: T::c(1800.0),
            prbs_amp_c: T::one(),
            charge_rate_c: T::c(0.5),
            temperature: Some(T::c(30.0)),
            seed,
        }
    }
}

/// Generate a deterministic synthetic profile from the spec.
pub fn make_synthetic_profile<T: Scalar>(
    spec: &SyntheticSpec<T>,
) -> Result<DriveProfile<T>, ProfileError> {
    let n = (spec.duration / spec.dt).round().to_usize().unwrap_or(0).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let amp = spec.prbs_amp_c * spec.one_c_current;
    let charge = -spec.charge_rate_c * spec.one_c_current;

    let mut prbs = Prbs::new(&mut rng, amp);
    let seg_samples = (spec.segment / spec.dt).round().to_usize().unwrap_or(1).max(1);

    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let current = match spec.kind {
            SyntheticKind::Rest => T::zero(),
            SyntheticKind::CcCharge => charge,
            SyntheticKind::DynamicPrbs => prbs.next(&mut rng),
            SyntheticKind::Hybrid => match (k / seg_samples) % 3 {
                0 => prbs.next(&mut rng),
                1 => T::zero(),
                _ => charge,
            },
        };
        samples.push(ProfileSample {
            t: T::c(k as f64) * spec.dt,
            current,
            voltage: None,
            temperature: spec.temperature,
        });
    }
    DriveProfile::new(samples)
}

/// Two-level source: holds a level for a random 1..=20 samples, then
/// flips. Guarantees a sign change inside any 40-sample window.
struct Prbs<T> {
    level: T,
    remaining: u64,
}

impl<T: Scalar> Prbs<T> {
    fn new(rng: &mut ChaCha8Rng, amp: T) -> Self {
        let level = if rng.random::<bool>() { amp } else { -amp };
        Prbs {
            level,
            remaining: rng.random_range(1..=PRBS_MAX_HOLD),
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> T {
        if self.remaining == 0 {
            self.level = -self.level;
            self.remaining = rng.random_range(1..=PRBS_MAX_HOLD);
        }
        self.remaining -= 1;
        self.level
    }
}
