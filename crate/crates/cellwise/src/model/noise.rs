//! Sensor-noise injection: additive current bias plus Gaussian noise on
//! current and voltage, deterministic under a fixed seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{DriveProfile, ModelError, ProfileSample};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig<T> {
    /// Constant additive current offset, amperes.
    pub current_bias: T,
    /// Standard deviation of the current noise, amperes.
    pub current_sigma: T,
    /// Standard deviation of the voltage noise, volts.
    pub voltage_sigma: T,
    pub seed: u64,
}

impl<T: Scalar> NoiseConfig<T> {
    pub fn new(current_bias: T, current_sigma: T, voltage_sigma: T, seed: u64) -> Result<Self, ModelError> {
        for (name, sigma) in [("current_sigma", current_sigma), ("voltage_sigma", voltage_sigma)] {
            if sigma < T::zero() || !sigma.is_finite() {
                return Err(ModelError::Negative {
                    name,
                    value: sigma.f64(),
                });
            }
        }
        Ok(NoiseConfig {
            current_bias,
            current_sigma,
            voltage_sigma,
            seed,
        })
    }

    pub fn none(seed: u64) -> Self {
        NoiseConfig {
            current_bias: T::zero(),
            current_sigma: T::zero(),
            voltage_sigma: T::zero(),
            seed,
        }
    }
}

/// Corrupt a profile with measurement errors. Timestamps and temperature
/// pass through; voltage noise is only drawn for samples that carry a
/// voltage. Bit-identical output for identical input and seed.
pub fn inject_noise<T: Scalar>(profile: &DriveProfile<T>, cfg: &NoiseConfig<T>) -> DriveProfile<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = move || -> T {
        let x: f64 = StandardNormal.sample(&mut rng);
        T::c(x)
    };
    let samples: Vec<ProfileSample<T>> = profile
        .samples()
        .iter()
        .map(|s| ProfileSample {
            t: s.t,
            current: s.current + cfg.current_bias + cfg.current_sigma * draw(),
            voltage: s.voltage.map(|v| v + cfg.voltage_sigma * draw()),
            temperature: s.temperature,
        })
        .collect();
    DriveProfile::new(samples).expect("noise injection preserves timestamps")
}
