//! Batch experiment harness: configuration file, grid execution and
//! comparison-table emission.
//!
//! The configuration is one TOML file whose sections mirror the type
//! tree (cell, tag, autotune, rls, ekf, noise, report, profiles). Every
//! field has a default; `docs/example-config.toml` in the repository
//! root documents them all. Outputs are written atomically (temp file +
//! rename) and are byte-identical for identical config and seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::joint::{
    run_estimator, ErrorReport, EstimateTrace, EstimatorKind, JointConfig, JointError,
};
use crate::model::{
    inject_noise, make_synthetic_profile, CellState, DriveProfile, EcmParams, ModelError,
    NoiseConfig, OcvCurve, ParamSchedule, ProfileError, ScheduledStep, SyntheticKind,
    SyntheticSpec, TruthSimulator, TruthTrace,
};
use crate::rls::ForgettingMatrix;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Joint(#[from] JointError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------
// Configuration file schema (all concrete f64).
// ---------------------------------------------------------------------

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Subset of coulomb, single_ekf, mffrls_ekf, dffrls_ekf, adffrls_ekf.
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    pub profiles: Vec<ProfileEntry>,
    #[serde(default)]
    pub cell: CellSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub tag: TagSection,
    #[serde(default)]
    pub autotune: AutotuneSection,
    #[serde(default)]
    pub rls: RlsSection,
    #[serde(default)]
    pub ekf: EkfSection,
    #[serde(default)]
    pub report: ReportSection,
}

fn default_seed() -> u64 {
    0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_estimators() -> Vec<String> {
    EstimatorKind::ALL.iter().map(|k| k.name().into()).collect()
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEntry {
    pub name: String,
    /// CSV file with measured data; mutually exclusive with `synthetic`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    /// dynamic_prbs | rest | cc_charge | hybrid
    pub kind: String,
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Per-profile generator seed; derived from the global seed if unset.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_segment")]
    pub segment: f64,
    #[serde(default = "default_prbs_amp")]
    pub prbs_amp_c: f64,
    #[serde(default = "default_charge_rate")]
    pub charge_rate_c: f64,
    #[serde(default = "default_initial_soc")]
    pub initial_soc: f64,
    /// True-cell scaling relative to the nominal parameters.
    #[serde(default = "one")]
    pub r0_scale: f64,
    #[serde(default = "one")]
    pub r1_scale: f64,
    /// Optional mid-run step change of the true parameters.
    #[serde(default)]
    pub r0_step_at: Option<f64>,
    #[serde(default = "one")]
    pub r0_step_factor: f64,
}

fn default_dt() -> f64 {
    1.0
}

fn default_segment() -> f64 {
    1800.0
}

fn default_prbs_amp() -> f64 {
    1.0
}

fn default_charge_rate() -> f64 {
    0.5
}

fn default_initial_soc() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellSection {
    pub r0: f64,
    pub r1: f64,
    pub c1: f64,
    pub capacity_ah: f64,
    pub eta: f64,
}

impl Default for CellSection {
    fn default() -> Self {
        CellSection {
            r0: 1.5e-3,
            r1: 0.8e-3,
            c1: 1.2e5,
            capacity_ah: 72.0,
            eta: 1.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub current_bias: f64,
    pub current_sigma: f64,
    pub voltage_sigma: f64,
    /// Noise seed; derived from the global seed if unset.
    pub seed: Option<u64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            current_bias: 0.0,
            current_sigma: 0.0,
            voltage_sigma: 0.0,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TagSection {
    pub window: usize,
    /// As fractions of the cell's 1C current.
    pub std_threshold_c: f64,
    pub range_threshold_c: f64,
}

impl Default for TagSection {
    fn default() -> Self {
        TagSection {
            window: 60,
            std_threshold_c: 0.05,
            range_threshold_c: 0.1,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutotuneSection {
    pub eval_window: usize,
    pub delta: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub cn_smoothing: f64,
}

impl Default for AutotuneSection {
    fn default() -> Self {
        AutotuneSection {
            eval_window: 300,
            delta: 0.005,
            lambda_lo: 0.90,
            lambda_hi: 0.9999,
            cn_smoothing: 0.1,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlsSection {
    pub lambda_init: [f64; 4],
    pub p0: f64,
}

impl Default for RlsSection {
    fn default() -> Self {
        RlsSection {
            lambda_init: [0.995, 0.9999, 0.9999, 0.9999],
            p0: 100.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfSection {
    pub r: f64,
    pub q_soc: f64,
    pub q_v1: f64,
    pub q_scale: f64,
    pub p0_soc: f64,
    pub p0_v1: f64,
    pub handoff_min_tag_run: usize,
    /// Optional fixed starting SOC estimate for every estimator.
    pub initial_soc: Option<f64>,
}

impl Default for EkfSection {
    fn default() -> Self {
        EkfSection {
            r: 25e-6,
            q_soc: 1e-10,
            q_v1: 1e-8,
            q_scale: 10.0,
            p0_soc: 1e-2,
            p0_v1: 1e-4,
            handoff_min_tag_run: 10,
            initial_soc: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub warmup_samples: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { warmup_samples: 300 }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    /// Semantic validation, resolving names into typed values.
    pub fn validate(&self) -> Result<ValidatedExperiment, ExperimentError> {
        if self.profiles.is_empty() {
            return Err(ExperimentError::Config(
                "at least one profile is required".into(),
            ));
        }
        if self.estimators.is_empty() {
            return Err(ExperimentError::Config(
                "at least one estimator is required".into(),
            ));
        }
        let mut estimators = Vec::new();
        for name in &self.estimators {
            let kind = EstimatorKind::parse(name).ok_or_else(|| {
                ExperimentError::Config(format!(
                    "unknown estimator `{name}`; expected one of {:?}",
                    EstimatorKind::ALL.map(|k| k.name())
                ))
            })?;
            if estimators.contains(&kind) {
                return Err(ExperimentError::Config(format!(
                    "estimator `{name}` listed twice"
                )));
            }
            estimators.push(kind);
        }

        let ecm = EcmParams::new(
            self.cell.r0,
            self.cell.r1,
            self.cell.c1,
            self.cell.capacity_ah * 3600.0,
            self.cell.eta,
        )?;
        let curve = OcvCurve::default_synthetic();
        let one_c = ecm.one_c_current();

        let mut joint = JointConfig::new(ecm, curve);
        joint.tag = crate::adaptive::TagConfig::new(
            self.tag.window,
            self.tag.std_threshold_c * one_c,
            self.tag.range_threshold_c * one_c,
        )
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
        joint.tune = crate::adaptive::AutoTuneConfig::new(
            self.autotune.eval_window,
            self.autotune.delta,
            self.autotune.lambda_lo,
            self.autotune.lambda_hi,
            self.autotune.cn_smoothing,
        )
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
        joint.lambda_init = ForgettingMatrix::new(self.rls.lambda_init)
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        joint.rls_p0 = self.rls.p0;
        joint.r_meas = self.ekf.r;
        joint.q_soc = self.ekf.q_soc;
        joint.q_v1 = self.ekf.q_v1;
        joint.q_scale = self.ekf.q_scale;
        joint.initial_p = (self.ekf.p0_soc, self.ekf.p0_v1);
        joint.handoff_min_tag_run = self.ekf.handoff_min_tag_run;
        joint.initial_soc = self.ekf.initial_soc;
        joint.warmup_samples = self.report.warmup_samples;

        let mut profiles = Vec::new();
        for (index, entry) in self.profiles.iter().enumerate() {
            if entry.name.is_empty() {
                return Err(ExperimentError::Config(format!(
                    "profile {index} has an empty name"
                )));
            }
            if profiles
                .iter()
                .any(|p: &ProfilePlan| p.name == entry.name)
            {
                return Err(ExperimentError::Config(format!(
                    "duplicate profile name `{}`",
                    entry.name
                )));
            }
            let source = match (&entry.path, &entry.synthetic) {
                (Some(path), None) => ProfileSource::File(path.clone()),
                (None, Some(synth)) => {
                    let kind = SyntheticKind::parse(&synth.kind).ok_or_else(|| {
                        ExperimentError::Config(format!(
                            "profile `{}`: unknown synthetic kind `{}`",
                            entry.name, synth.kind
                        ))
                    })?;
                    if !(synth.initial_soc >= 0.0 && synth.initial_soc <= 1.0) {
                        return Err(ExperimentError::Config(format!(
                            "profile `{}`: initial_soc outside [0, 1]",
                            entry.name
                        )));
                    }
                    ProfileSource::Synthetic {
                        kind,
                        section: synth.clone(),
                    }
                }
                (Some(_), Some(_)) => {
                    return Err(ExperimentError::Config(format!(
                        "profile `{}` sets both `path` and `synthetic`",
                        entry.name
                    )))
                }
                (None, None) => {
                    return Err(ExperimentError::Config(format!(
                        "profile `{}` needs either `path` or `synthetic`",
                        entry.name
                    )))
                }
            };
            profiles.push(ProfilePlan {
                name: entry.name.clone(),
                source,
                index: index as u64,
            });
        }

        Ok(ValidatedExperiment {
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            estimators,
            profiles,
            noise: self.noise.clone(),
            joint,
        })
    }
}

/// A profile slot of the grid, resolved but not yet materialized.
#[derive(Clone, Debug)]
pub struct ProfilePlan {
    pub name: String,
    pub source: ProfileSource,
    index: u64,
}

#[derive(Clone, Debug)]
pub enum ProfileSource {
    File(PathBuf),
    Synthetic {
        kind: SyntheticKind,
        section: SyntheticSection,
    },
}

/// Config after validation: typed estimators, profiles and joint config.
#[derive(Clone, Debug)]
pub struct ValidatedExperiment {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub estimators: Vec<EstimatorKind>,
    pub profiles: Vec<ProfilePlan>,
    pub noise: NoiseSection,
    pub joint: JointConfig<f64>,
}

/// Splitmix-style derivation of per-profile sub-seeds from the global
/// seed, keeping independent streams deterministic.
fn derive_seed(global: u64, stream: u64, index: u64) -> u64 {
    let mut z = global
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// A materialized profile: measured samples plus truth when synthetic.
#[derive(Clone, Debug)]
pub struct PreparedProfile {
    pub name: String,
    pub measured: DriveProfile<f64>,
    pub truth: Option<TruthTrace<f64>>,
}

impl ValidatedExperiment {
    /// Load or synthesize one profile (with ground truth and injected
    /// measurement noise for synthetic ones).
    pub fn prepare_profile(&self, plan: &ProfilePlan) -> Result<PreparedProfile, ExperimentError> {
        match &plan.source {
            ProfileSource::File(path) => {
                let measured = DriveProfile::from_csv_path(path)?;
                Ok(PreparedProfile {
                    name: plan.name.clone(),
                    measured,
                    truth: None,
                })
            }
            ProfileSource::Synthetic { kind, section } => {
                let gen_seed = section
                    .seed
                    .unwrap_or_else(|| derive_seed(self.seed, 1, plan.index));
                let mut spec = SyntheticSpec::new(
                    *kind,
                    section.duration,
                    section.dt,
                    self.joint.ecm_nominal.one_c_current(),
                    gen_seed,
                );
                spec.segment = section.segment;
                spec.prbs_amp_c = section.prbs_amp_c;
                spec.charge_rate_c = section.charge_rate_c;
                let profile = make_synthetic_profile(&spec)?;

                let mut schedule = ParamSchedule::scaled(
                    self.joint.ecm_nominal,
                    section.r0_scale,
                    section.r1_scale,
                )?;
                if let Some(at_time) = section.r0_step_at {
                    schedule = schedule.with_step(ScheduledStep {
                        at_time,
                        r0_factor: section.r0_step_factor,
                        r1_factor: 1.0,
                    })?;
                }
                let mut sim = TruthSimulator::new(
                    schedule,
                    self.joint.curve.clone(),
                    CellState::new(section.initial_soc, 0.0),
                );
                let (truth, clean) = sim.run(&profile)?;

                let noise_seed = self
                    .noise
                    .seed
                    .unwrap_or_else(|| derive_seed(self.seed, 2, plan.index));
                let noise = NoiseConfig::new(
                    self.noise.current_bias,
                    self.noise.current_sigma,
                    self.noise.voltage_sigma,
                    noise_seed,
                )?;
                let measured = inject_noise(&clean, &noise);
                Ok(PreparedProfile {
                    name: plan.name.clone(),
                    measured,
                    truth: Some(truth),
                })
            }
        }
    }
}

// ---------------------------------------------------------------------
// Grid execution.
// ---------------------------------------------------------------------

/// Result of one (profile, estimator) grid cell.
#[derive(Clone, Debug)]
pub enum CellOutcome {
    Ok {
        trace: EstimateTrace<f64>,
        report: ErrorReport<f64>,
    },
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct GridCell {
    pub profile: String,
    pub estimator: EstimatorKind,
    pub outcome: CellOutcome,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub estimators: Vec<EstimatorKind>,
    pub profile_names: Vec<String>,
    pub cells: Vec<GridCell>,
}

impl ExperimentOutput {
    pub fn failures(&self) -> Vec<(&str, EstimatorKind, &str)> {
        self.cells
            .iter()
            .filter_map(|c| match &c.outcome {
                CellOutcome::Failed(msg) => Some((c.profile.as_str(), c.estimator, msg.as_str())),
                CellOutcome::Ok { .. } => None,
            })
            .collect()
    }

    pub fn report_of(&self, profile: &str, estimator: EstimatorKind) -> Option<&ErrorReport<f64>> {
        self.cells.iter().find_map(|c| {
            if c.profile == profile && c.estimator == estimator {
                match &c.outcome {
                    CellOutcome::Ok { report, .. } => Some(report),
                    CellOutcome::Failed(_) => None,
                }
            } else {
                None
            }
        })
    }
}

/// Run the full profile x estimator grid. Per-cell failures are recorded
/// and do not abort the rest of the grid; profile-level failures mark
/// every cell of that profile.
pub fn run_experiment(cfg: &ValidatedExperiment) -> Result<ExperimentOutput, ExperimentError> {
    let mut cells = Vec::new();
    let mut profile_names = Vec::new();
    for plan in &cfg.profiles {
        profile_names.push(plan.name.clone());
        match cfg.prepare_profile(plan) {
            Ok(prepared) => {
                for &estimator in &cfg.estimators {
                    let outcome = match run_estimator(
                        &prepared.measured,
                        prepared.truth.as_ref(),
                        estimator,
                        &cfg.joint,
                        &prepared.name,
                    ) {
                        Ok(run) => CellOutcome::Ok {
                            trace: run.trace,
                            report: run.report,
                        },
                        Err(e) => {
                            log::warn!(
                                "{} on {} failed: {e}",
                                estimator.name(),
                                prepared.name
                            );
                            CellOutcome::Failed(e.to_string())
                        }
                    };
                    cells.push(GridCell {
                        profile: plan.name.clone(),
                        estimator,
                        outcome,
                    });
                }
            }
            Err(e) => {
                log::warn!("profile {} failed to prepare: {e}", plan.name);
                for &estimator in &cfg.estimators {
                    cells.push(GridCell {
                        profile: plan.name.clone(),
                        estimator,
                        outcome: CellOutcome::Failed(e.to_string()),
                    });
                }
            }
        }
    }
    Ok(ExperimentOutput {
        estimators: cfg.estimators.clone(),
        profile_names,
        cells,
    })
}

// ---------------------------------------------------------------------
// Comparison tables.
// ---------------------------------------------------------------------

/// Which error the table reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableMetric {
    SocPercent,
    VoltageMillivolt,
}

impl TableMetric {
    pub fn file_stem(&self) -> &'static str {
        match self {
            TableMetric::SocPercent => "soc_error",
            TableMetric::VoltageMillivolt => "voltage_error",
        }
    }

    fn unit_suffix(&self) -> &'static str {
        match self {
            TableMetric::SocPercent => "pct",
            TableMetric::VoltageMillivolt => "mv",
        }
    }

    fn unit_name(&self) -> &'static str {
        match self {
            TableMetric::SocPercent => "percent",
            TableMetric::VoltageMillivolt => "millivolt",
        }
    }

    fn pick(&self, report: &ErrorReport<f64>) -> Option<(f64, f64)> {
        match self {
            TableMetric::SocPercent => report.soc_max_pct.zip(report.soc_avg_pct),
            TableMetric::VoltageMillivolt => report.v_max_mv.zip(report.v_avg_mv),
        }
    }
}

/// MAX/AVG cells per (profile row, estimator column pair).
#[derive(Clone, Debug)]
pub struct ComparisonTable {
    pub metric: TableMetric,
    pub estimators: Vec<EstimatorKind>,
    pub rows: Vec<TableRow>,
}

#[derive(Clone, Debug)]
pub struct TableRow {
    pub profile: String,
    /// One entry per estimator, in table order.
    pub cells: Vec<Option<(f64, f64)>>,
}

impl ComparisonTable {
    pub fn from_output(output: &ExperimentOutput, metric: TableMetric) -> Self {
        let rows = output
            .profile_names
            .iter()
            .map(|profile| TableRow {
                profile: profile.clone(),
                cells: output
                    .estimators
                    .iter()
                    .map(|&est| {
                        output
                            .report_of(profile, est)
                            .and_then(|report| metric.pick(report))
                    })
                    .collect(),
            })
            .collect();
        ComparisonTable {
            metric,
            estimators: output.estimators.clone(),
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("profile");
        for est in &self.estimators {
            out.push_str(&format!(
                ",{est}_max_{unit},{est}_avg_{unit}",
                est = est.name(),
                unit = self.metric.unit_suffix()
            ));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.profile);
            for cell in &row.cells {
                match cell {
                    Some((max, avg)) => out.push_str(&format!(",{max},{avg}")),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "metric": self.metric.file_stem(),
            "unit": self.metric.unit_name(),
            "estimators": self.estimators.iter().map(|e| e.name()).collect::<Vec<_>>(),
            "rows": self.rows.iter().map(|row| {
                serde_json::json!({
                    "profile": row.profile,
                    "cells": self.estimators.iter().zip(&row.cells).map(|(est, cell)| {
                        (est.name().to_string(), match cell {
                            Some((max, avg)) => serde_json::json!({"max": max, "avg": avg}),
                            None => serde_json::Value::Null,
                        })
                    }).collect::<serde_json::Map<_, _>>(),
                })
            }).collect::<Vec<_>>(),
        })
    }

    /// One header row, one row per profile.
    pub fn to_markdown(&self) -> String {
        let unit = match self.metric {
            TableMetric::SocPercent => "%",
            TableMetric::VoltageMillivolt => "mV",
        };
        let mut header = String::from("| profile |");
        let mut rule = String::from("|---|");
        for est in &self.estimators {
            header.push_str(&format!(" {} MAX [{unit}] | {} AVG [{unit}] |", est.name(), est.name()));
            rule.push_str("---|---|");
        }
        let mut out = format!("{header}\n{rule}\n");
        for row in &self.rows {
            out.push_str(&format!("| {} |", row.profile));
            for cell in &row.cells {
                match cell {
                    Some((max, avg)) => out.push_str(&format!(" {max:.3} | {avg:.3} |")),
                    None => out.push_str(" - | - |"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Output encodings for the table files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
    Markdown,
}

impl TableFormat {
    pub const ALL: [TableFormat; 3] = [TableFormat::Csv, TableFormat::Json, TableFormat::Markdown];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(TableFormat::Csv),
            "json" => Some(TableFormat::Json),
            "markdown" | "md" => Some(TableFormat::Markdown),
            _ => None,
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
            TableFormat::Markdown => "md",
        }
    }
}

/// Atomic file write: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path)
        .map_err(|e| ExperimentError::Io {
            path: path.to_path_buf(),
            source: e.error,
        })?;
    Ok(())
}

/// Emit one SOC-error table file and one voltage-error table file per
/// requested format. Returns the written paths.
pub fn emit_tables(
    output: &ExperimentOutput,
    formats: &[TableFormat],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut written = Vec::new();
    for metric in [TableMetric::SocPercent, TableMetric::VoltageMillivolt] {
        let table = ComparisonTable::from_output(output, metric);
        for format in formats {
            let path = out_dir.join(format!("{}.{}", metric.file_stem(), format.extension()));
            let bytes = match format {
                TableFormat::Csv => table.to_csv().into_bytes(),
                TableFormat::Json => {
                    let mut s = serde_json::to_string_pretty(&table.to_json())
                        .expect("table serializes");
                    s.push('\n');
                    s.into_bytes()
                }
                TableFormat::Markdown => table.to_markdown().into_bytes(),
            };
            write_atomic(&path, &bytes)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Write every per-cell trace, all reports, and the failure list.
/// Returns the written paths.
pub fn emit_traces_and_reports(
    output: &ExperimentOutput,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut written = Vec::new();
    let trace_dir = out_dir.join("traces");
    let mut reports = Vec::new();
    for cell in &output.cells {
        if let CellOutcome::Ok { trace, report } = &cell.outcome {
            let path = trace_dir.join(format!("{}__{}.csv", cell.profile, cell.estimator.name()));
            let mut buf = Vec::new();
            trace
                .to_csv(&mut buf)
                .map_err(|e| ExperimentError::Config(format!("trace csv: {e}")))?;
            write_atomic(&path, &buf)?;
            written.push(path);
            reports.push(report.to_json());
        }
    }
    let reports_path = out_dir.join("reports.json");
    let mut body =
        serde_json::to_string_pretty(&serde_json::Value::Array(reports)).expect("serializes");
    body.push('\n');
    write_atomic(&reports_path, body.as_bytes())?;
    written.push(reports_path);

    let failures = output.failures();
    if !failures.is_empty() {
        let mut csv = String::from("profile,estimator,error\n");
        for (profile, estimator, message) in &failures {
            csv.push_str(&format!(
                "{profile},{},\"{}\"\n",
                estimator.name(),
                message.replace('"', "'")
            ));
        }
        let path = out_dir.join("failures.csv");
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
estimators = ["coulomb"]

[report]
warmup_samples = 20

[[profiles]]
name = "short"
[profiles.synthetic]
kind = "dynamic_prbs"
duration = 200.0
initial_soc = 0.8
"#;

    #[test]
    fn minimal_config_parses_and_validates() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let v = cfg.validate().unwrap();
        assert_eq!(v.estimators, vec![EstimatorKind::Coulomb]);
        assert_eq!(v.profiles.len(), 1);
        assert_eq!(v.seed, 7);
    }

    #[test]
    fn empty_estimators_rejected() {
        let cfg = ExperimentConfig::from_toml(
            r#"
estimators = []
[[profiles]]
name = "p"
[profiles.synthetic]
kind = "rest"
duration = 100.0
"#,
        )
        .unwrap();
        assert!(matches!(cfg.validate(), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn unknown_estimator_rejected() {
        let cfg = ExperimentConfig::from_toml(
            r#"
estimators = ["ukf"]
[[profiles]]
name = "p"
[profiles.synthetic]
kind = "rest"
duration = 100.0
"#,
        )
        .unwrap();
        assert!(matches!(cfg.validate(), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn profile_needs_exactly_one_source() {
        let cfg = ExperimentConfig::from_toml(
            r#"
[[profiles]]
name = "p"
"#,
        )
        .unwrap();
        assert!(cfg.validate().is_err());

        let cfg = ExperimentConfig::from_toml(
            r#"
[[profiles]]
name = "p"
path = "x.csv"
[profiles.synthetic]
kind = "rest"
duration = 100.0
"#,
        )
        .unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("bogus_key = 1\nprofiles = []").is_err());
    }

    #[test]
    fn single_cell_grid_shape() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap().validate().unwrap();
        let output = run_experiment(&cfg).unwrap();
        assert_eq!(output.cells.len(), 1);
        let table = ComparisonTable::from_output(&output, TableMetric::SocPercent);
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].cells.len(), 1);
        assert!(table.rows[0].cells[0].is_some());
        // Coulomb produces no voltage reconstruction.
        let vtable = ComparisonTable::from_output(&output, TableMetric::VoltageMillivolt);
        assert!(vtable.rows[0].cells[0].is_none());
    }

    #[test]
    fn csv_and_json_encode_identical_values() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap().validate().unwrap();
        let output = run_experiment(&cfg).unwrap();
        let table = ComparisonTable::from_output(&output, TableMetric::SocPercent);
        let csv_text = table.to_csv();
        let json = table.to_json();

        let line = csv_text.lines().nth(1).unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        let csv_max: f64 = fields[1].parse().unwrap();
        let csv_avg: f64 = fields[2].parse().unwrap();
        let cell = &json["rows"][0]["cells"]["coulomb"];
        assert!((csv_max - cell["max"].as_f64().unwrap()).abs() < 1e-12);
        assert!((csv_avg - cell["avg"].as_f64().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn markdown_has_header_plus_row_per_profile() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap().validate().unwrap();
        let output = run_experiment(&cfg).unwrap();
        let table = ComparisonTable::from_output(&output, TableMetric::SocPercent);
        let md = table.to_markdown();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 2 + output.profile_names.len());
        assert!(lines[0].starts_with("| profile |"));
    }

    #[test]
    fn failed_cells_are_recorded_and_counts_add_up() {
        // A file profile that does not exist fails at preparation; the
        // grid must still complete with every cell accounted for.
        let cfg = ExperimentConfig::from_toml(
            r#"
estimators = ["coulomb", "single_ekf"]
[[profiles]]
name = "missing"
path = "does_not_exist.csv"
[[profiles]]
name = "ok"
[profiles.synthetic]
kind = "dynamic_prbs"
duration = 150.0
initial_soc = 0.7
"#,
        )
        .unwrap()
        .validate()
        .unwrap();
        let output = run_experiment(&cfg).unwrap();
        assert_eq!(output.cells.len(), 4);
        let failures = output.failures();
        let ok_count = output
            .cells
            .iter()
            .filter(|c| matches!(c.outcome, CellOutcome::Ok { .. }))
            .count();
        assert_eq!(ok_count + failures.len(), output.cells.len());
        assert_eq!(failures.len(), 2);
    }

    #[test]
    fn library_level_determinism() {
        let run = || {
            let cfg = ExperimentConfig::from_toml(
                r#"
seed = 11
estimators = ["coulomb", "dffrls_ekf"]
[noise]
current_bias = 0.3
current_sigma = 0.2
voltage_sigma = 0.002
[[profiles]]
name = "p"
[profiles.synthetic]
kind = "hybrid"
duration = 5400.0
initial_soc = 0.6
"#,
            )
            .unwrap()
            .validate()
            .unwrap();
            let output = run_experiment(&cfg).unwrap();
            ComparisonTable::from_output(&output, TableMetric::SocPercent).to_csv()
        };
        assert_eq!(run(), run());
    }
}
