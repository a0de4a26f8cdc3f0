//! Open-circuit-voltage curve.
//!
//! Piecewise monotone cubic (Fritsch-Carlson) interpolation over
//! user-supplied knots. Strictly increasing knot voltages give a monotone
//! interpolant with an analytic derivative, which the EKF measurement
//! Jacobian uses directly.

use crate::model::ModelError;
use crate::scalar::Scalar;

/// Monotone OCV(SOC) interpolant over `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OcvCurve<T> {
    soc: Vec<T>,
    ocv: Vec<T>,
    /// Interpolant slope at each knot, dOCV/dSOC.
    slope: Vec<T>,
}

impl<T: Scalar> OcvCurve<T> {
    /// Build from knot vectors. `soc` must be strictly increasing with
    /// first knot 0 and last knot 1; `ocv` must be strictly increasing.
    pub fn new(soc: Vec<T>, ocv: Vec<T>) -> Result<Self, ModelError> {
        if soc.len() != ocv.len() {
            return Err(ModelError::InvalidCurve(format!(
                "knot count mismatch: {} soc vs {} ocv",
                soc.len(),
                ocv.len()
            )));
        }
        if soc.len() < 2 {
            return Err(ModelError::InvalidCurve(
                "need at least two knots".to_string(),
            ));
        }
        if soc[0] != T::zero() || *soc.last().unwrap() != T::one() {
            return Err(ModelError::InvalidCurve(
                "soc knots must start at 0 and end at 1".to_string(),
            ));
        }
        for w in soc.windows(2) {
            if !(w[1] > w[0]) {
                return Err(ModelError::InvalidCurve(
                    "soc knots must be strictly increasing".to_string(),
                ));
            }
        }
        for w in ocv.windows(2) {
            if !(w[1] > w[0]) {
                return Err(ModelError::InvalidCurve(
                    "ocv knots must be strictly increasing".to_string(),
                ));
            }
        }
        let slope = fritsch_carlson_slopes(&soc, &ocv);
        Ok(OcvCurve { soc, ocv, slope })
    }

    /// A synthetic NMC-like curve: 3.0 V at SOC 0 rising to 4.2 V at SOC 1
    /// over 11 knots, with the usual flat mid-range plateau.
    pub fn default_synthetic() -> Self {
        let soc: Vec<T> = (0..=10).map(|k| T::c(k as f64 / 10.0)).collect();
        let ocv: Vec<T> = [
            3.00, 3.35, 3.48, 3.56, 3.62, 3.67, 3.73, 3.80, 3.89, 4.02, 4.20,
        ]
        .iter()
        .map(|&v| T::c(v))
        .collect();
        Self::new(soc, ocv).expect("built-in curve is valid")
    }

    fn segment(&self, soc: T) -> usize {
        // Index of the knot interval containing soc; soc == 1 maps into
        // the last interval.
        let n = self.soc.len();
        let mut lo = 0usize;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.soc[mid] <= soc {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo.min(n - 2)
    }

    fn check_domain(&self, soc: T) -> Result<(), ModelError> {
        if soc >= T::zero() && soc <= T::one() {
            Ok(())
        } else {
            Err(ModelError::SocOutOfRange { value: soc.f64() })
        }
    }

    /// OCV in volts at the given SOC. Errors outside `[0, 1]`.
    pub fn value(&self, soc: T) -> Result<T, ModelError> {
        self.check_domain(soc)?;
        let i = self.segment(soc);
        let h = self.soc[i + 1] - self.soc[i];
        let s = (soc - self.soc[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let two = T::c(2.0);
        let three = T::c(3.0);
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = s3 - two * s2 + s;
        let h01 = -two * s3 + three * s2;
        let h11 = s3 - s2;
        Ok(self.ocv[i] * h00
            + h * self.slope[i] * h10
            + self.ocv[i + 1] * h01
            + h * self.slope[i + 1] * h11)
    }

    /// Analytic derivative dOCV/dSOC at the given SOC.
    pub fn slope(&self, soc: T) -> Result<T, ModelError> {
        self.check_domain(soc)?;
        let i = self.segment(soc);
        let h = self.soc[i + 1] - self.soc[i];
        let s = (soc - self.soc[i]) / h;
        let s2 = s * s;
        let two = T::c(2.0);
        let three = T::c(3.0);
        let four = T::c(4.0);
        let six = T::c(6.0);
        let dh00 = (six * s2 - six * s) / h;
        let dh10 = three * s2 - four * s + T::one();
        let dh01 = (-six * s2 + six * s) / h;
        let dh11 = three * s2 - two * s;
        Ok(self.ocv[i] * dh00
            + self.slope[i] * dh10
            + self.ocv[i + 1] * dh01
            + self.slope[i + 1] * dh11)
    }

    /// Inverse lookup: the SOC at which the curve takes `voltage`,
    /// clamped to the endpoints outside the curve's range.
    pub fn soc_at(&self, voltage: T) -> T {
        if voltage <= self.ocv[0] {
            return T::zero();
        }
        if voltage >= *self.ocv.last().unwrap() {
            return T::one();
        }
        // Bisection on a monotone function.
        let mut lo = T::zero();
        let mut hi = T::one();
        for _ in 0..200 {
            let mid = (lo + hi) * T::c(0.5);
            let v = self.value(mid).expect("mid in [0,1]");
            if v < voltage {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= T::epsilon() {
                break;
            }
        }
        (lo + hi) * T::c(0.5)
    }

    pub fn first_knot(&self) -> T {
        self.ocv[0]
    }

    pub fn last_knot(&self) -> T {
        *self.ocv.last().unwrap()
    }
}

/// Knot slopes per Fritsch-Carlson: weighted harmonic mean of adjacent
/// secants in the interior, clamped three-point estimates at the ends.
/// For strictly increasing data this yields a monotone interpolant.
fn fritsch_carlson_slopes<T: Scalar>(x: &[T], y: &[T]) -> Vec<T> {
    let n = x.len();
    let mut h = Vec::with_capacity(n - 1);
    let mut delta = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let hi = x[i + 1] - x[i];
        h.push(hi);
        delta.push((y[i + 1] - y[i]) / hi);
    }

    let mut d = vec![T::zero(); n];
    let two = T::c(2.0);
    let three = T::c(3.0);

    if n == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
        return d;
    }

    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= T::zero() {
            d[i] = T::zero();
        } else {
            let w1 = two * h[i] + h[i - 1];
            let w2 = h[i] + two * h[i - 1];
            d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }

    d[0] = endpoint_slope(h[0], h[1], delta[0], delta[1], three);
    d[n - 1] = endpoint_slope(
        h[n - 2],
        h[n - 3],
        delta[n - 2],
        delta[n - 3],
        three,
    );
    d
}

fn endpoint_slope<T: Scalar>(h0: T, h1: T, d0: T, d1: T, three: T) -> T {
    let two = T::c(2.0);
    let mut d = ((two * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d * d0 <= T::zero() {
        d = T::zero();
    } else if d1 * d0 <= T::zero() && d.abs() > three * d0.abs() {
        d = three * d0;
    }
    d
}
