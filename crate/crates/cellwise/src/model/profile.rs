//! Drive profiles: uniformly sampled current/voltage/temperature records.
//!
//! CSV schema: header `t,current,voltage,temperature`; the `voltage` and
//! `temperature` columns are optional, both on read and per cell. Plain
//! decimal numbers, UTF-8.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;

/// Relative tolerance on the sampling interval uniformity.
const DT_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("timestamps not strictly increasing at sample {index} (t={t})")]
    NonMonotonicTime { index: usize, t: f64 },
    #[error("non-uniform sampling interval at sample {index}: {got} vs {expected}")]
    NonUniformDt { index: usize, got: f64, expected: f64 },
    #[error("csv line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("csv is missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One profile sample. Current is in amperes, discharge-positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileSample<T> {
    pub t: T,
    pub current: T,
    pub voltage: Option<T>,
    /// Carried through for completeness; no thermal model consumes it.
    pub temperature: Option<T>,
}

/// A validated, uniformly sampled drive profile.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveProfile<T> {
    samples: Vec<ProfileSample<T>>,
    dt: T,
}

impl<T: Scalar> DriveProfile<T> {
    /// Validate and wrap a sample sequence: strictly increasing
    /// timestamps with a uniform interval (1e-9 relative).
    pub fn new(samples: Vec<ProfileSample<T>>) -> Result<Self, ProfileError> {
        if samples.len() < 2 {
            return Err(ProfileError::TooShort(samples.len()));
        }
        let dt = samples[1].t - samples[0].t;
        if !(dt > T::zero()) {
            return Err(ProfileError::NonMonotonicTime {
                index: 1,
                t: samples[1].t.f64(),
            });
        }
        let tol = dt * T::c(DT_REL_TOL);
        for i in 1..samples.len() {
            let step = samples[i].t - samples[i - 1].t;
            if !(step > T::zero()) {
                return Err(ProfileError::NonMonotonicTime {
                    index: i,
                    t: samples[i].t.f64(),
                });
            }
            if (step - dt).abs() > tol {
                return Err(ProfileError::NonUniformDt {
                    index: i,
                    got: step.f64(),
                    expected: dt.f64(),
                });
            }
        }
        Ok(DriveProfile { samples, dt })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ProfileSample<T>] {
        &self.samples
    }

    pub fn currents(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.current).collect()
    }

    /// Measured voltages, if every sample carries one.
    pub fn voltages(&self) -> Option<Vec<T>> {
        self.samples.iter().map(|s| s.voltage).collect()
    }

    pub fn has_voltage(&self) -> bool {
        self.samples.iter().all(|s| s.voltage.is_some())
    }

    /// Copy of the profile with the given per-sample voltages.
    pub fn with_voltages(&self, voltages: &[T]) -> Self {
        assert_eq!(voltages.len(), self.samples.len());
        let samples = self
            .samples
            .iter()
            .zip(voltages)
            .map(|(s, &v)| ProfileSample {
                voltage: Some(v),
                ..*s
            })
            .collect();
        DriveProfile {
            samples,
            dt: self.dt,
        }
    }

    /// Parse from CSV. `t` and `current` columns are required.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, ProfileError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);

        let headers = rdr.headers()?.clone();
        let col = |name: &'static str| headers.iter().position(|h| h == name);
        let t_col = col("t").ok_or(ProfileError::MissingColumn("t"))?;
        let i_col = col("current").ok_or(ProfileError::MissingColumn("current"))?;
        let v_col = col("voltage");
        let temp_col = col("temperature");

        let mut samples = Vec::new();
        let mut lines = Vec::new();
        for result in rdr.records() {
            let record = result?;
            let line = record
                .position()
                .map(|p| p.line())
                .unwrap_or(samples.len() as u64 + 2);
            lines.push(line);
            let field = |idx: usize, name: &str| -> Result<f64, ProfileError> {
                let raw = record.get(idx).ok_or_else(|| ProfileError::Parse {
                    line,
                    message: format!("missing `{name}` field"),
                })?;
                raw.parse::<f64>().map_err(|e| ProfileError::Parse {
                    line,
                    message: format!("bad `{name}` value `{raw}`: {e}"),
                })
            };
            let optional = |idx: Option<usize>, name: &str| -> Result<Option<f64>, ProfileError> {
                match idx.and_then(|i| record.get(i)) {
                    None | Some("") => Ok(None),
                    Some(raw) => raw
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|e| ProfileError::Parse {
                            line,
                            message: format!("bad `{name}` value `{raw}`: {e}"),
                        }),
                }
            };
            samples.push(ProfileSample {
                t: T::c(field(t_col, "t")?),
                current: T::c(field(i_col, "current")?),
                voltage: optional(v_col, "voltage")?.map(T::c),
                temperature: optional(temp_col, "temperature")?.map(T::c),
            });
        }
        // Re-attach file line numbers to structural schema violations.
        Self::new(samples).map_err(|e| match e {
            ProfileError::NonMonotonicTime { index, t } => ProfileError::Parse {
                line: lines.get(index).copied().unwrap_or(index as u64 + 2),
                message: format!("timestamps not strictly increasing (t={t})"),
            },
            ProfileError::NonUniformDt {
                index,
                got,
                expected,
            } => ProfileError::Parse {
                line: lines.get(index).copied().unwrap_or(index as u64 + 2),
                message: format!("non-uniform sampling interval: {got} vs {expected}"),
            },
            other => other,
        })
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, ProfileError> {
        Self::from_csv(File::open(path)?)
    }

    /// Write as CSV with the full four-column header; absent optional
    /// values become empty cells. Numbers use the shortest exact decimal
    /// representation, so a write/read cycle is lossless.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<(), ProfileError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["t", "current", "voltage", "temperature"])?;
        let fmt = |v: T| format!("{}", v.f64());
        let opt = |v: Option<T>| v.map(fmt).unwrap_or_default();
        for s in &self.samples {
            wtr.write_record([
                fmt(s.t),
                fmt(s.current),
                opt(s.voltage),
                opt(s.temperature),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
