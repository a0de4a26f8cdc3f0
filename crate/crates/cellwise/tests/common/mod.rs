//! Shared fixtures and independent oracles for the integration suites.
//!
//! Everything here deliberately avoids the library's own update paths:
//! the scalar-forgetting RLS reference and the linear solver are written
//! from scratch so they can serve as oracles.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use cellwise::model::{
    make_synthetic_profile, CellState, DriveProfile, EcmParams, NoiseConfig, OcvCurve,
    ParamSchedule, SyntheticKind, SyntheticSpec, TruthSimulator, TruthTrace,
};

pub const CAPACITY_72AH: f64 = 72.0 * 3600.0;

/// The workhorse cell: r0 = 1.5 mOhm, r1 = 0.8 mOhm, c1 = 1.2e5 F.
pub fn nominal_ecm() -> EcmParams<f64> {
    EcmParams::new(1.5e-3, 0.8e-3, 1.2e5, CAPACITY_72AH, 1.0).unwrap()
}

/// Same circuit on an effectively infinite reservoir, so the OCV stays
/// put and the identification sees a pure linear circuit.
pub fn pinned_soc_ecm() -> EcmParams<f64> {
    EcmParams::new(1.5e-3, 0.8e-3, 1.2e5, 1e12, 1.0).unwrap()
}

pub fn prbs_profile(duration: f64, seed: u64) -> DriveProfile<f64> {
    let spec = SyntheticSpec::new(SyntheticKind::DynamicPrbs, duration, 1.0, 72.0, seed);
    make_synthetic_profile(&spec).unwrap()
}

pub fn hybrid_profile(duration: f64, seed: u64) -> DriveProfile<f64> {
    let spec = SyntheticSpec::new(SyntheticKind::Hybrid, duration, 1.0, 72.0, seed);
    make_synthetic_profile(&spec).unwrap()
}

/// Simulate the true cell over a profile and return (truth, measured),
/// where `measured` carries the noise-injected voltage/current.
pub fn simulate_measured(
    profile: &DriveProfile<f64>,
    schedule: ParamSchedule<f64>,
    initial_soc: f64,
    noise: &NoiseConfig<f64>,
) -> (TruthTrace<f64>, DriveProfile<f64>) {
    let curve = OcvCurve::default_synthetic();
    let mut sim = TruthSimulator::new(schedule, curve, CellState::new(initial_soc, 0.0));
    let (truth, clean) = sim.run(profile).unwrap();
    let measured = cellwise::model::inject_noise(&clean, noise);
    (truth, measured)
}

/// Textbook scalar-forgetting RLS over a 4-dimensional regressor:
/// `k = P phi / (lambda + phi^T P phi)`, `P' = (P - k phi^T P) / lambda`.
/// Plain nested arrays, no shared code with the implementation under
/// test.
pub struct ScalarRlsOracle {
    pub theta: [f64; 4],
    pub p: [[f64; 4]; 4],
    pub lambda: f64,
}

impl ScalarRlsOracle {
    pub fn new(theta0: [f64; 4], p0: f64, lambda: f64) -> Self {
        let mut p = [[0.0; 4]; 4];
        for (i, row) in p.iter_mut().enumerate() {
            row[i] = p0;
        }
        ScalarRlsOracle {
            theta: theta0,
            p,
            lambda,
        }
    }

    pub fn step(&mut self, phi: [f64; 4], y: f64) -> f64 {
        let mut p_phi = [0.0; 4];
        for i in 0..4 {
            for j in 0..4 {
                p_phi[i] += self.p[i][j] * phi[j];
            }
        }
        let mut quad = 0.0;
        for i in 0..4 {
            quad += phi[i] * p_phi[i];
        }
        let denom = self.lambda + quad;
        let mut k = [0.0; 4];
        for i in 0..4 {
            k[i] = p_phi[i] / denom;
        }
        let mut pred = 0.0;
        for i in 0..4 {
            pred += phi[i] * self.theta[i];
        }
        let alpha = y - pred;
        for i in 0..4 {
            self.theta[i] += k[i] * alpha;
        }
        // P' = (P - k (P phi)^T) / lambda, then re-symmetrize.
        let mut next = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                next[i][j] = (self.p[i][j] - k[i] * p_phi[j]) / self.lambda;
            }
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                let avg = 0.5 * (next[i][j] + next[j][i]);
                next[i][j] = avg;
                next[j][i] = avg;
            }
        }
        self.p = next;
        alpha
    }
}

/// Dense 4x4 solve by Gaussian elimination with partial pivoting; the
/// batch least-squares oracle builds on this.
pub fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let mut pivot = col;
        for row in (col + 1)..4 {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        assert!(a[col][col].abs() > 1e-30, "singular system");
        for row in (col + 1)..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in (row + 1)..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Deterministic pseudo-random stream for test inputs (not rand-based,
/// so oracle tests cannot be perturbed by rand version changes).
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        // xorshift64*
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545F4914F6CDD1D)
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
}
