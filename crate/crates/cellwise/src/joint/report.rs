//! Per-sample estimate traces and error reporting.

use std::io::Write;

use serde_json::json;

use crate::joint::JointError;
use crate::scalar::Scalar;

/// One emitted sample of an estimator run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord<T> {
    pub t: T,
    pub soc_est: T,
    /// Reconstructed terminal voltage; NaN for estimators without a
    /// voltage model (Coulomb counting).
    pub v_est: T,
    pub tag: u8,
    /// Condition number of the information matrix; NaN until the first
    /// tagged sample and for estimators without one.
    pub cn: T,
    pub lambda1: T,
    pub r0_est: T,
    pub r1_est: T,
    pub c1_est: T,
}

/// Full per-sample record of one estimator run.
#[derive(Clone, Debug, Default)]
pub struct EstimateTrace<T> {
    pub records: Vec<TraceRecord<T>>,
}

impl<T: Scalar> EstimateTrace<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn soc_estimates(&self) -> Vec<T> {
        self.records.iter().map(|r| r.soc_est).collect()
    }

    pub fn voltage_estimates(&self) -> Vec<T> {
        self.records.iter().map(|r| r.v_est).collect()
    }

    /// CSV with the fixed header
    /// `t,soc_est,v_est,tag,cn,lambda1,r0_est,r1_est,c1_est`.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "t", "soc_est", "v_est", "tag", "cn", "lambda1", "r0_est", "r1_est", "c1_est",
        ])?;
        for r in &self.records {
            wtr.write_record([
                fmt(r.t),
                fmt(r.soc_est),
                fmt(r.v_est),
                r.tag.to_string(),
                fmt(r.cn),
                fmt(r.lambda1),
                fmt(r.r0_est),
                fmt(r.r1_est),
                fmt(r.c1_est),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn fmt<T: Scalar>(v: T) -> String {
    format!("{}", v.f64())
}

/// MAX/AVG absolute estimation errors of one run: SOC in percent against
/// ground truth, reconstructed voltage in millivolts against the
/// measured voltage. Fields are absent when the corresponding reference
/// is unavailable. A warm-up prefix is excluded from all statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport<T> {
    pub estimator: String,
    pub profile: String,
    pub warmup_samples: usize,
    pub soc_max_pct: Option<T>,
    pub soc_avg_pct: Option<T>,
    pub v_max_mv: Option<T>,
    pub v_avg_mv: Option<T>,
}

impl<T: Scalar> ErrorReport<T> {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "estimator": self.estimator,
            "profile": self.profile,
            "warmup_samples": self.warmup_samples,
            "soc_max_pct": self.soc_max_pct.map(|v| v.f64()),
            "soc_avg_pct": self.soc_avg_pct.map(|v| v.f64()),
            "v_max_mv": self.v_max_mv.map(|v| v.f64()),
            "v_avg_mv": self.v_avg_mv.map(|v| v.f64()),
        })
    }

    pub const CSV_HEADER: &'static str =
        "estimator,profile,warmup_samples,soc_max_pct,soc_avg_pct,v_max_mv,v_avg_mv";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<T>| v.map(|x| fmt(x)).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.estimator,
            self.profile,
            self.warmup_samples,
            opt(self.soc_max_pct),
            opt(self.soc_avg_pct),
            opt(self.v_max_mv),
            opt(self.v_avg_mv),
        )
    }

    pub fn write_csv<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writeln!(writer, "{}", Self::CSV_HEADER)?;
        writeln!(writer, "{}", self.csv_row())
    }
}

fn max_and_mean<T: Scalar>(values: impl Iterator<Item = T>) -> Option<(T, T)> {
    let mut max = T::zero();
    let mut sum = T::zero();
    let mut count = 0usize;
    for v in values {
        max = max.max(v);
        sum += v;
        count += 1;
    }
    if count == 0 {
        None
    } else {
        // Accumulated rounding can push the mean of near-equal values a
        // ulp past the max; analytically mean <= max always.
        Some((max, (sum / T::c(count as f64)).min(max)))
    }
}

/// Build an [`ErrorReport`] from a trace and its references.
///
/// `truth_soc` and `measured_v`, when given, must match the trace length
/// sample for sample. Voltage statistics are only produced when every
/// post-warmup reconstructed voltage is finite.
pub fn error_report<T: Scalar>(
    trace: &EstimateTrace<T>,
    truth_soc: Option<&[T]>,
    measured_v: Option<&[T]>,
    warmup_samples: usize,
    estimator: &str,
    profile: &str,
) -> Result<ErrorReport<T>, JointError> {
    for reference in [truth_soc, measured_v].into_iter().flatten() {
        if reference.len() != trace.len() {
            return Err(JointError::LengthMismatch {
                trace: trace.len(),
                other: reference.len(),
            });
        }
    }
    let start = warmup_samples.min(trace.len());
    let records = &trace.records[start..];

    let soc_stats = truth_soc.and_then(|truth| {
        max_and_mean(
            records
                .iter()
                .zip(&truth[start..])
                .map(|(r, &s)| T::c(100.0) * (r.soc_est - s).abs()),
        )
    });
    let v_stats = measured_v.and_then(|meas| {
        if records.iter().any(|r| !r.v_est.is_finite()) {
            return None;
        }
        max_and_mean(
            records
                .iter()
                .zip(&meas[start..])
                .map(|(r, &v)| T::c(1000.0) * (r.v_est - v).abs()),
        )
    });

    Ok(ErrorReport {
        estimator: estimator.to_string(),
        profile: profile.to_string(),
        warmup_samples,
        soc_max_pct: soc_stats.map(|(max, _)| max),
        soc_avg_pct: soc_stats.map(|(_, avg)| avg),
        v_max_mv: v_stats.map(|(max, _)| max),
        v_avg_mv: v_stats.map(|(_, avg)| avg),
    })
}

/// State-of-health indicators from one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SohMetrics<T> {
    /// `100 * r0_bol / r0_now`, where `r0_now` is the median identified
    /// series resistance over the final quarter of tagged samples.
    pub soh_r0_pct: T,
    pub v_max_mv: Option<T>,
    pub v_avg_mv: Option<T>,
}

/// Resistance-ratio SOH plus the voltage-reconstruction error, the two
/// aging indicators a run exposes.
pub fn soh_metrics<T: Scalar>(
    trace: &EstimateTrace<T>,
    measured_v: Option<&[T]>,
    r0_beginning_of_life: T,
    warmup_samples: usize,
) -> Result<SohMetrics<T>, JointError> {
    let tagged: Vec<T> = trace
        .records
        .iter()
        .filter(|r| r.tag == 1)
        .map(|r| r.r0_est)
        .collect();
    if tagged.is_empty() {
        return Err(JointError::InsufficientExcitation);
    }
    let quarter = tagged.len().div_ceil(4);
    let mut tail = tagged[tagged.len() - quarter..].to_vec();
    tail.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let median = if tail.len() % 2 == 1 {
        tail[tail.len() / 2]
    } else {
        (tail[tail.len() / 2 - 1] + tail[tail.len() / 2]) * T::c(0.5)
    };
    let soh_r0_pct = T::c(100.0) * r0_beginning_of_life / median;

    let report = error_report(trace, None, measured_v, warmup_samples, "", "")?;
    Ok(SohMetrics {
        soh_r0_pct,
        v_max_mv: report.v_max_mv,
        v_avg_mv: report.v_avg_mv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: f64, soc: f64, v: f64, tag: u8, r0: f64) -> TraceRecord<f64> {
        TraceRecord {
            t,
            soc_est: soc,
            v_est: v,
            tag,
            cn: f64::NAN,
            lambda1: 0.995,
            r0_est: r0,
            r1_est: 0.8e-3,
            c1_est: 1.2e5,
        }
    }

    fn trace_of(soc: &[f64]) -> EstimateTrace<f64> {
        EstimateTrace {
            records: soc
                .iter()
                .enumerate()
                .map(|(k, &s)| record(k as f64, s, 3.7, 1, 1.5e-3))
                .collect(),
        }
    }

    #[test]
    fn identical_trace_gives_zero_errors() {
        let soc = vec![0.5, 0.6, 0.7, 0.8];
        let trace = trace_of(&soc);
        let v = vec![3.7; 4];
        let rep = error_report(&trace, Some(&soc), Some(&v), 0, "e", "p").unwrap();
        assert_eq!(rep.soc_max_pct, Some(0.0));
        assert_eq!(rep.soc_avg_pct, Some(0.0));
        assert_eq!(rep.v_max_mv, Some(0.0));
        assert_eq!(rep.v_avg_mv, Some(0.0));
    }

    #[test]
    fn constant_offset_maps_to_percent() {
        let truth = vec![0.5; 50];
        let est: Vec<f64> = truth.iter().map(|s| s + 0.01).collect();
        let trace = trace_of(&est);
        let rep = error_report(&trace, Some(&truth), None, 0, "e", "p").unwrap();
        assert!((rep.soc_max_pct.unwrap() - 1.0).abs() < 1e-9);
        assert!((rep.soc_avg_pct.unwrap() - 1.0).abs() < 1e-9);
        assert!(rep.v_max_mv.is_none());
    }

    #[test]
    fn random_pair_matches_brute_force() {
        let mut x = 0.123f64;
        let mut next = move || {
            x = (x * 787.7).sin().abs();
            x
        };
        let truth: Vec<f64> = (0..200).map(|_| next()).collect();
        let est: Vec<f64> = (0..200).map(|_| next()).collect();
        let meas: Vec<f64> = (0..200).map(|_| 3.0 + next()).collect();
        let trace = EstimateTrace {
            records: est
                .iter()
                .enumerate()
                .map(|(k, &s)| record(k as f64, s, 3.5 + s, 1, 1e-3))
                .collect(),
        };
        let warmup = 37;
        let rep = error_report(&trace, Some(&truth), Some(&meas), warmup, "e", "p").unwrap();

        let mut soc_max = 0.0f64;
        let mut soc_sum = 0.0f64;
        let mut v_max = 0.0f64;
        let mut v_sum = 0.0f64;
        let n = (200 - warmup) as f64;
        for k in warmup..200 {
            let soc_err = 100.0 * (est[k] - truth[k]).abs();
            soc_max = soc_max.max(soc_err);
            soc_sum += soc_err;
            let v_err = 1000.0 * ((3.5 + est[k]) - meas[k]).abs();
            v_max = v_max.max(v_err);
            v_sum += v_err;
        }
        assert!((rep.soc_max_pct.unwrap() - soc_max).abs() < 1e-12);
        assert!((rep.soc_avg_pct.unwrap() - soc_sum / n).abs() < 1e-12);
        assert!((rep.v_max_mv.unwrap() - v_max).abs() < 1e-12);
        assert!((rep.v_avg_mv.unwrap() - v_sum / n).abs() < 1e-12);
        assert!(rep.soc_max_pct >= rep.soc_avg_pct);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let trace = trace_of(&[0.5, 0.6]);
        let truth = vec![0.5, 0.6, 0.7];
        assert!(matches!(
            error_report(&trace, Some(&truth), None, 0, "e", "p"),
            Err(JointError::LengthMismatch { trace: 2, other: 3 })
        ));
    }

    #[test]
    fn soh_ratio_definitions() {
        let r0 = 1.5e-3;
        let trace = EstimateTrace {
            records: (0..100)
                .map(|k| record(k as f64, 0.5, 3.7, 1, r0))
                .collect(),
        };
        let m = soh_metrics(&trace, None, r0, 0).unwrap();
        assert!((m.soh_r0_pct - 100.0).abs() < 1e-9);

        let trace2 = EstimateTrace {
            records: (0..100)
                .map(|k| record(k as f64, 0.5, 3.7, 1, 2.0 * r0))
                .collect(),
        };
        let m = soh_metrics(&trace2, None, r0, 0).unwrap();
        assert!((m.soh_r0_pct - 50.0).abs() < 1e-9);
    }

    #[test]
    fn soh_without_tags_errors() {
        let trace = EstimateTrace {
            records: (0..100)
                .map(|k| record(k as f64, 0.5, 3.7, 0, 1.5e-3))
                .collect(),
        };
        assert!(matches!(
            soh_metrics(&trace, None, 1.5e-3, 0),
            Err(JointError::InsufficientExcitation)
        ));
    }

    #[test]
    fn trace_csv_header_and_shape() {
        let trace = trace_of(&[0.5, 0.6]);
        let mut buf = Vec::new();
        trace.to_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,soc_est,v_est,tag,cn,lambda1,r0_est,r1_est,c1_est"
        );
        assert_eq!(lines.count(), 2);
    }
}
