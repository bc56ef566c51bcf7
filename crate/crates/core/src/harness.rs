//! Monte-Carlo experiment runner.
//!
//! An experiment file (TOML) names one sweep axis, the architectures to
//! compare and the number of channel draws per point. Every trial gets a
//! fresh channel and a fresh optimizer start; results go to a CSV with a
//! fixed column schema, a per-point summary CSV, a timing CSV and a JSON
//! manifest.
//!
//! Units in the file: SCNR target and reflection powers in dB, transmit and
//! noise powers in dBm, angles in degrees. They are converted to linear
//! watts and radians once, when the file is loaded.
//!
//! Seeds: the channel of trial `t` at sweep point `s` is drawn from
//! `mix_seed([master, s, t])`, so every architecture sees the same channel;
//! the optimizer start uses `mix_seed([master, s, t, arch.tag()])`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::vectorize;
use crate::metrics::{beampattern, detection_probability, energy_efficiency, Architecture, BeamformerSet, PowerModel};
use crate::model::{generate_channel, mix_seed, PathLossModel, RadarScene, SystemConfig};
use crate::pc_variant::{pc_solve, PcStructure};
use crate::wpdd::{solve, InitOptions, PddSettings, Problem, Solution, SolveStatus};

/// Version tag of the CSV column layout, recorded in the manifest.
pub const SCHEMA_VERSION: &str = "dfrc-results/1";
/// Monte-Carlo trials per point when the file does not say.
pub const DEFAULT_TRIALS: usize = 50;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Quantity varied along the sweep axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// SCNR target, dB.
    GammaDb,
    /// Transmit power, dBm.
    PowerDbm,
    /// Number of users.
    Users,
    /// Transmit antennas.
    TxAntennas,
}

impl SweepVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepVariable::GammaDb => "gamma_db",
            SweepVariable::PowerDbm => "power_dbm",
            SweepVariable::Users => "users",
            SweepVariable::TxAntennas => "tx_antennas",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    variable: SweepVariable,
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SystemFile {
    tx_antennas: usize,
    rx_antennas: usize,
    tx_rf_chains: usize,
    rx_rf_chains: usize,
    users: usize,
    user_antennas: usize,
    streams_per_user: usize,
    transmit_power_dbm: f64,
    user_noise_dbm: f64,
    radar_noise_dbm: f64,
    carrier_ghz: f64,
    spacing_wavelengths: f64,
    gamma_db: f64,
    distance_m: f64,
    paths: usize,
}

impl Default for SystemFile {
    fn default() -> Self {
        let d = SystemConfig::desk_scale();
        Self {
            tx_antennas: d.tx_antennas,
            rx_antennas: d.rx_antennas,
            tx_rf_chains: d.tx_rf_chains,
            rx_rf_chains: d.rx_rf_chains,
            users: d.users,
            user_antennas: d.user_antennas,
            streams_per_user: d.streams_per_user,
            transmit_power_dbm: 40.0,
            user_noise_dbm: -90.0,
            radar_noise_dbm: 10.0 * (d.radar_noise * 1e3).log10(),
            carrier_ghz: 28.0,
            spacing_wavelengths: 0.5,
            gamma_db: 10.0,
            distance_m: 80.0,
            paths: 3,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SceneFile {
    target_angle_deg: f64,
    clutter_angles_deg: Vec<f64>,
    target_power_db: f64,
    clutter_power_db: f64,
}

impl Default for SceneFile {
    fn default() -> Self {
        Self {
            target_angle_deg: 0.0,
            clutter_angles_deg: vec![-30.0, 30.0],
            target_power_db: 10.0,
            clutter_power_db: 20.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    trials: Option<usize>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    architectures: Option<Vec<Architecture>>,
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default)]
    false_alarm: Option<Vec<f64>>,
    sweep: SweepFile,
    #[serde(default)]
    system: SystemFile,
    #[serde(default)]
    scene: SceneFile,
    #[serde(default)]
    power_model: PowerModel,
    #[serde(default)]
    path_loss: PathLossModel,
    #[serde(default)]
    solver: PddSettings,
}

/// One value on the sweep axis: `label` as written in the file, `value` in
/// linear units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub label: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub points: Vec<SweepPoint>,
}

/// A validated experiment in linear units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub trials: usize,
    pub seed: u64,
    pub architectures: Vec<Architecture>,
    pub sweep: Sweep,
    /// System at every sweep point before the swept quantity is applied.
    pub base: SystemConfig,
    /// Linear SCNR target when it is not swept.
    pub gamma: f64,
    pub distance: f64,
    pub paths: usize,
    pub scene: RadarScene,
    pub power_model: PowerModel,
    pub path_loss: PathLossModel,
    pub solver: PddSettings,
    pub false_alarm: Vec<f64>,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SpecFile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let sys = &file.system;
        let wavelength = 299_792_458.0 / (sys.carrier_ghz * 1e9);
        let base = SystemConfig {
            tx_antennas: sys.tx_antennas,
            rx_antennas: sys.rx_antennas,
            tx_rf_chains: sys.tx_rf_chains,
            rx_rf_chains: sys.rx_rf_chains,
            users: sys.users,
            user_antennas: sys.user_antennas,
            streams_per_user: sys.streams_per_user,
            transmit_power: dbm_to_watts(sys.transmit_power_dbm),
            user_noise: dbm_to_watts(sys.user_noise_dbm),
            radar_noise: dbm_to_watts(sys.radar_noise_dbm),
            wavelength,
            spacing: sys.spacing_wavelengths * wavelength,
        };
        let variable = file.sweep.variable;
        let points = file
            .sweep
            .values
            .iter()
            .map(|&label| {
                let value = match variable {
                    SweepVariable::GammaDb => db_to_linear(label),
                    SweepVariable::PowerDbm => dbm_to_watts(label),
                    SweepVariable::Users | SweepVariable::TxAntennas => label,
                };
                SweepPoint { label, value }
            })
            .collect();
        let scene = RadarScene {
            target_angle: file.scene.target_angle_deg.to_radians(),
            clutter_angles: file.scene.clutter_angles_deg.iter().map(|a| a.to_radians()).collect(),
            target_power: db_to_linear(file.scene.target_power_db),
            clutter_power: db_to_linear(file.scene.clutter_power_db),
        };
        let spec = Self {
            name: file.name.unwrap_or_else(|| "experiment".into()),
            trials: file.trials.unwrap_or(DEFAULT_TRIALS),
            seed: file.seed,
            architectures: file.architectures.unwrap_or_else(|| vec![Architecture::Rs, Architecture::Pc, Architecture::Fd]),
            sweep: Sweep { variable, points },
            base,
            gamma: db_to_linear(sys.gamma_db),
            distance: sys.distance_m,
            paths: sys.paths,
            scene,
            power_model: file.power_model,
            path_loss: file.path_loss,
            solver: file.solver,
            false_alarm: file.false_alarm.unwrap_or_else(|| vec![1e-6, 1e-4]),
            output: file.output,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.sweep.points.is_empty() {
            return Err(Error::config("sweep values must not be empty"));
        }
        if self.architectures.is_empty() {
            return Err(Error::config("at least one architecture is required"));
        }
        let mut seen = BTreeSet::new();
        for &a in &self.architectures {
            if !matches!(a, Architecture::Rs | Architecture::Pc | Architecture::Fd) {
                return Err(Error::config(format!("architecture {a} has no optimizer; use rs, pc or fd")));
            }
            if !seen.insert(a) {
                return Err(Error::config(format!("architecture {a} listed twice")));
            }
        }
        if !(self.distance > 0.0) || self.paths == 0 {
            return Err(Error::config("distance must be positive and paths at least 1"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("SCNR target must be finite"));
        }
        if self.false_alarm.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::config("false-alarm probabilities must lie in (0, 1)"));
        }
        let s = &self.scene;
        if !(s.target_power > 0.0) || !(s.clutter_power >= 0.0) || !s.target_angle.is_finite() {
            return Err(Error::config("scene powers must be positive and angles finite"));
        }
        if !(self.base.radar_noise > 0.0) || !(self.base.user_noise > 0.0) || !(self.base.wavelength > 0.0) {
            return Err(Error::config("noise powers and carrier must be positive"));
        }
        self.path_loss.validate()?;
        self.solver.validate()?;
        for i in 0..self.sweep.points.len() {
            let (cfg, _) = self.point(i)?;
            cfg.validate()?;
            if self.architectures.contains(&Architecture::Pc) {
                PcStructure::new(cfg.tx_antennas, cfg.tx_rf_chains)?;
                PcStructure::new(cfg.rx_antennas, cfg.rx_rf_chains)?;
            }
        }
        Ok(())
    }

    /// System and linear SCNR target at sweep point `index`.
    pub fn point(&self, index: usize) -> Result<(SystemConfig, f64)> {
        let p = self.sweep.points.get(index).ok_or_else(|| Error::config("sweep index out of range"))?;
        let mut cfg = self.base.clone();
        let mut gamma = self.gamma;
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v < 1e6 {
                Ok(v as usize)
            } else {
                Err(Error::config(format!("sweep value {v} must be a positive integer")))
            }
        };
        match self.sweep.variable {
            SweepVariable::GammaDb => gamma = p.value,
            SweepVariable::PowerDbm => cfg.transmit_power = p.value,
            SweepVariable::Users => cfg.users = count(p.value)?,
            SweepVariable::TxAntennas => cfg.tx_antennas = count(p.value)?,
        }
        Ok((cfg, gamma))
    }

    /// SHA-256 of the resolved experiment, hex encoded.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("experiment serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn cells(&self) -> Vec<(usize, Architecture, usize)> {
        let mut cells = Vec::new();
        for s in 0..self.sweep.points.len() {
            for &a in &self.architectures {
                for t in 0..self.trials {
                    cells.push((s, a, t));
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Converged,
    IterationLimit,
    /// The SCNR target exceeds what the transmit power can deliver.
    Infeasible,
    /// The optimizer stopped with an error.
    Failed,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Converged => "converged",
            TrialStatus::IterationLimit => "iteration_limit",
            TrialStatus::Infeasible => "infeasible",
            TrialStatus::Failed => "failed",
        }
    }
}

/// One trial. Metric fields are NaN when the optimizer produced no design.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub sweep_index: usize,
    pub sweep_value: f64,
    pub architecture: Architecture,
    pub trial: usize,
    pub channel_seed: u64,
    pub init_seed: u64,
    pub status: TrialStatus,
    /// Design meets the SCNR target and the power budget.
    pub feasible: bool,
    pub gamma: f64,
    pub sum_rate: f64,
    pub scnr: f64,
    pub violation: f64,
    pub transmit_power: f64,
    pub outer_iterations: usize,
    pub energy_efficiency: f64,
    /// Detection probability at each false-alarm level of the experiment.
    pub detection: Vec<f64>,
    pub wall_time: f64,
    pub error: String,
}

/// Mean and sample standard deviation over the feasible trials of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sweep_index: usize,
    pub sweep_value: f64,
    pub architecture: Architecture,
    pub trials: usize,
    pub feasible: usize,
    pub sum_rate: (f64, f64),
    pub scnr: (f64, f64),
    pub energy_efficiency: (f64, f64),
    pub outer_iterations: (f64, f64),
    pub detection: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub spec: ExperimentSpec,
    pub config_hash: String,
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
    pub wall_time: f64,
}

impl ExperimentResults {
    pub fn infeasible_trials(&self) -> usize {
        self.records.iter().filter(|r| !r.feasible).count()
    }
}

fn channel_seed(spec: &ExperimentSpec, sweep: usize, trial: usize) -> u64 {
    mix_seed(&[spec.seed, sweep as u64, trial as u64])
}

fn init_seed(spec: &ExperimentSpec, sweep: usize, trial: usize, arch: Architecture) -> u64 {
    mix_seed(&[spec.seed, sweep as u64, trial as u64, arch.tag()])
}

/// Draws the channel of one cell and runs the optimizer for `arch`.
pub fn solve_cell(spec: &ExperimentSpec, sweep: usize, arch: Architecture, trial: usize) -> Result<(SystemConfig, f64, Solution)> {
    let (cfg, gamma) = spec.point(sweep)?;
    let ch = generate_channel(
        &cfg,
        &spec.path_loss,
        &vec![spec.distance; cfg.users],
        &vec![spec.paths; cfg.users],
        channel_seed(spec, sweep, trial),
    )?;
    let p = Problem { cfg: &cfg, channels: &ch, scene: &spec.scene, gamma };
    let init = InitOptions::new(init_seed(spec, sweep, trial, arch));
    let sol = match arch {
        Architecture::Pc => pc_solve(&p, &init, &spec.solver)?,
        _ => solve(&p, arch, &init, &spec.solver)?,
    };
    Ok((cfg, gamma, sol))
}

fn run_trial(spec: &ExperimentSpec, sweep: usize, arch: Architecture, trial: usize) -> TrialRecord {
    let started = Instant::now();
    let mut rec = TrialRecord {
        sweep_index: sweep,
        sweep_value: spec.sweep.points[sweep].label,
        architecture: arch,
        trial,
        channel_seed: channel_seed(spec, sweep, trial),
        init_seed: init_seed(spec, sweep, trial, arch),
        status: TrialStatus::Failed,
        feasible: false,
        gamma: f64::NAN,
        sum_rate: f64::NAN,
        scnr: f64::NAN,
        violation: f64::NAN,
        transmit_power: f64::NAN,
        outer_iterations: 0,
        energy_efficiency: f64::NAN,
        detection: vec![f64::NAN; spec.false_alarm.len()],
        wall_time: 0.0,
        error: String::new(),
    };
    match solve_cell(spec, sweep, arch, trial) {
        Ok((cfg, gamma, sol)) => {
            rec.status = match sol.status {
                SolveStatus::Converged => TrialStatus::Converged,
                SolveStatus::IterationLimit => TrialStatus::IterationLimit,
            };
            rec.gamma = gamma;
            rec.sum_rate = sol.sum_rate;
            rec.scnr = sol.scnr;
            rec.violation = sol.violation;
            rec.transmit_power = sol.transmit_power;
            rec.outer_iterations = sol.outer_iterations;
            rec.feasible = sol.scnr >= gamma * (1.0 - 1e-4) && sol.transmit_power <= cfg.transmit_power * (1.0 + 1e-6);
            rec.energy_efficiency = energy_efficiency(sol.sum_rate, arch, &cfg, &spec.power_model).unwrap_or(f64::NAN);
            rec.detection = spec
                .false_alarm
                .iter()
                .map(|&pfa| detection_probability(sol.scnr, pfa).unwrap_or(f64::NAN))
                .collect();
        }
        Err(e) => {
            if let Error::InfeasibleGamma { .. } = e {
                rec.status = TrialStatus::Infeasible;
            }
            if let Ok((_, gamma)) = spec.point(sweep) {
                rec.gamma = gamma;
            }
            rec.error = e.to_string();
        }
    }
    rec.wall_time = started.elapsed().as_secs_f64();
    rec
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn summarize(spec: &ExperimentSpec, records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (s, point) in spec.sweep.points.iter().enumerate() {
        for &arch in &spec.architectures {
            let cell: Vec<&TrialRecord> = records.iter().filter(|r| r.sweep_index == s && r.architecture == arch).collect();
            let ok: Vec<&TrialRecord> = cell.iter().copied().filter(|r| r.feasible).collect();
            let col = |f: &dyn Fn(&TrialRecord) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            rows.push(SummaryRow {
                sweep_index: s,
                sweep_value: point.label,
                architecture: arch,
                trials: cell.len(),
                feasible: ok.len(),
                sum_rate: col(&|r| r.sum_rate),
                scnr: col(&|r| r.scnr),
                energy_efficiency: col(&|r| r.energy_efficiency),
                outer_iterations: col(&|r| r.outer_iterations as f64),
                detection: (0..spec.false_alarm.len()).map(|i| col(&|r| r.detection[i])).collect(),
            });
        }
    }
    rows
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(0) => Err(Error::config("thread count must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
        None => Ok(job()),
    }
}

/// Runs every (sweep point, architecture, trial) cell. Records come back in
/// that order whatever the thread count.
pub fn run_experiment(spec: &ExperimentSpec, threads: Option<usize>) -> Result<ExperimentResults> {
    spec.validate()?;
    let started = Instant::now();
    let cells = spec.cells();
    let records: Vec<TrialRecord> =
        with_pool(threads, || cells.par_iter().map(|&(s, a, t)| run_trial(spec, s, a, t)).collect())?;
    let summary = summarize(spec, &records);
    Ok(ExperimentResults {
        spec: spec.clone(),
        config_hash: spec.config_hash(),
        records,
        summary,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

fn pfa_label(p: f64) -> String {
    format!("{p:e}")
}

pub fn results_header(spec: &ExperimentSpec) -> Vec<String> {
    let mut h: Vec<String> = [
        "sweep_index",
        "sweep_variable",
        "sweep_value",
        "architecture",
        "trial",
        "channel_seed",
        "init_seed",
        "status",
        "feasible",
        "gamma",
        "sum_rate",
        "scnr",
        "violation",
        "transmit_power",
        "outer_iterations",
        "energy_efficiency",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(spec.false_alarm.iter().map(|&p| format!("pd_{}", pfa_label(p))));
    h.push("error".into());
    h
}

pub fn summary_header(spec: &ExperimentSpec) -> Vec<String> {
    let mut h: Vec<String> = ["sweep_index", "sweep_variable", "sweep_value", "architecture", "trials", "feasible"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in ["sum_rate", "scnr", "energy_efficiency", "outer_iterations"] {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_std"));
    }
    for &p in &spec.false_alarm {
        h.push(format!("pd_{}_mean", pfa_label(p)));
        h.push(format!("pd_{}_std", pfa_label(p)));
    }
    h
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |e| Error::Io { path: path.display().to_string(), source: std::io::Error::other(e.to_string()) }
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Files written by [`write_results`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFiles {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub timing: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: &'a str,
    code_version: &'a str,
    name: &'a str,
    config_hash: &'a str,
    master_seed: u64,
    trials: usize,
    sweep_variable: &'a str,
    architectures: &'a [Architecture],
    rows: usize,
    infeasible_trials: usize,
    wall_time_s: f64,
    results_columns: Vec<String>,
    summary_columns: Vec<String>,
    files: [&'a str; 3],
}

/// Writes `results.csv`, `summary.csv`, `timing.csv` and `manifest.json`
/// into `dir`. The two data CSVs depend only on the experiment, so repeated
/// runs produce identical bytes; wall times live in the timing file.
pub fn write_results(res: &ExperimentResults, dir: &Path) -> Result<OutputFiles> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let spec = &res.spec;
    let var = spec.sweep.variable.as_str();
    let files = OutputFiles {
        results: dir.join("results.csv"),
        summary: dir.join("summary.csv"),
        timing: dir.join("timing.csv"),
        manifest: dir.join("manifest.json"),
    };
    let results_header = results_header(spec);
    write_csv(
        &files.results,
        &results_header,
        res.records.iter().map(|r| {
            let mut row = vec![
                r.sweep_index.to_string(),
                var.to_string(),
                r.sweep_value.to_string(),
                r.architecture.to_string(),
                r.trial.to_string(),
                r.channel_seed.to_string(),
                r.init_seed.to_string(),
                r.status.as_str().to_string(),
                u8::from(r.feasible).to_string(),
                r.gamma.to_string(),
                r.sum_rate.to_string(),
                r.scnr.to_string(),
                r.violation.to_string(),
                r.transmit_power.to_string(),
                r.outer_iterations.to_string(),
                r.energy_efficiency.to_string(),
            ];
            row.extend(r.detection.iter().map(|v| v.to_string()));
            row.push(r.error.clone());
            row
        }),
    )?;
    let summary_header = summary_header(spec);
    write_csv(
        &files.summary,
        &summary_header,
        res.summary.iter().map(|s| {
            let mut row = vec![
                s.sweep_index.to_string(),
                var.to_string(),
                s.sweep_value.to_string(),
                s.architecture.to_string(),
                s.trials.to_string(),
                s.feasible.to_string(),
            ];
            for (m, sd) in [s.sum_rate, s.scnr, s.energy_efficiency, s.outer_iterations].into_iter().chain(s.detection.iter().copied()) {
                row.push(m.to_string());
                row.push(sd.to_string());
            }
            row
        }),
    )?;
    write_csv(
        &files.timing,
        &["sweep_index".into(), "architecture".into(), "trial".into(), "wall_time_s".into()],
        res.records
            .iter()
            .map(|r| vec![r.sweep_index.to_string(), r.architecture.to_string(), r.trial.to_string(), r.wall_time.to_string()]),
    )?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION"),
        name: &spec.name,
        config_hash: &res.config_hash,
        master_seed: spec.seed,
        trials: spec.trials,
        sweep_variable: var,
        architectures: &spec.architectures,
        rows: res.records.len(),
        infeasible_trials: res.infeasible_trials(),
        wall_time_s: res.wall_time,
        results_columns: results_header,
        summary_columns: summary_header,
        files: ["results.csv", "summary.csv", "timing.csv"],
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&files.manifest, json + "\n").map_err(io_err(&files.manifest))?;
    Ok(files)
}

/// Angles from -90 to 90 degrees in 0.5 degree steps.
pub fn beampattern_grid_deg() -> Vec<f64> {
    (0..=360).map(|i| -90.0 + 0.5 * i as f64).collect()
}

/// Peak-normalized joint transmit/receive pattern of a design, in dB.
pub fn design_beampattern(bf: &BeamformerSet, cfg: &SystemConfig, grid_deg: &[f64]) -> Result<Vec<f64>> {
    let t = vectorize(&bf.hybrid_transmit());
    let w = vectorize(&bf.hybrid_receive());
    let grid: Vec<f64> = grid_deg.iter().map(|a| a.to_radians()).collect();
    beampattern(&w, &t, &grid, cfg)
}

/// Writes `angle_deg,power_db` rows of the design's beampattern to `path`.
pub fn emit_beampattern(bf: &BeamformerSet, cfg: &SystemConfig, grid_deg: &[f64], path: &Path) -> Result<()> {
    let pattern = design_beampattern(bf, cfg, grid_deg)?;
    write_csv(
        path,
        &["angle_deg".into(), "power_db".into()],
        grid_deg.iter().zip(&pattern).map(|(a, p)| vec![a.to_string(), p.to_string()]),
    )
}

/// Solves the first trial of every (sweep point, architecture) cell and
/// writes one beampattern file per cell into `dir`.
pub fn beampattern_experiment(spec: &ExperimentSpec, dir: &Path, threads: Option<usize>) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cells: Vec<(usize, Architecture)> = (0..spec.sweep.points.len())
        .flat_map(|s| spec.architectures.iter().map(move |&a| (s, a)))
        .collect();
    let grid = beampattern_grid_deg();
    let outcomes: Vec<Result<PathBuf>> = with_pool(threads, || {
        cells
            .par_iter()
            .map(|&(s, a)| {
                let (cfg, _, sol) = solve_cell(spec, s, a, 0)?;
                let path = dir.join(format!("beampattern_s{s}_{a}.csv"));
                emit_beampattern(&sol.bf, &cfg, &grid, &path)?;
                Ok(path)
            })
            .collect()
    })?;
    outcomes.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CMat;
    use crate::model::steering_vector;

    const SMALL: &str = r#"
        name = "small"
        trials = 1
        seed = 3
        architectures = ["rs"]
        [sweep]
        variable = "gamma_db"
        values = [10.0]
    "#;

    #[test]
    fn units_are_converted_once() {
        let spec = ExperimentSpec::from_toml_str(
            r#"
            trials = 2
            [sweep]
            variable = "power_dbm"
            values = [40.0, 30.0]
            [system]
            gamma_db = 20.0
            user_noise_dbm = -90.0
            [scene]
            clutter_angles_deg = [45.0]
            clutter_power_db = 30.0
        "#,
        )
        .unwrap();
        assert!((spec.gamma - 100.0).abs() < 1e-12);
        assert!((spec.base.user_noise - 1e-12).abs() < 1e-24);
        assert!((spec.base.radar_noise - 0.5).abs() < 1e-12);
        assert_eq!(spec.sweep.points[0], SweepPoint { label: 40.0, value: 10.0 });
        assert!((spec.sweep.points[1].value - 1.0).abs() < 1e-12);
        assert!((spec.scene.clutter_power - 1000.0).abs() < 1e-9);
        assert!((spec.scene.clutter_angles[0] - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        let (cfg, gamma) = spec.point(1).unwrap();
        assert!((cfg.transmit_power - 1.0).abs() < 1e-12);
        assert_eq!(gamma, spec.gamma);
        assert_eq!(spec.trials, 2);
        assert_eq!(spec.architectures, vec![Architecture::Rs, Architecture::Pc, Architecture::Fd]);
    }

    #[test]
    fn defaults_match_the_desk_setup() {
        let spec = ExperimentSpec::from_toml_str("[sweep]\nvariable = \"gamma_db\"\nvalues = [10.0]").unwrap();
        let desk = SystemConfig::desk_scale();
        assert_eq!(spec.trials, DEFAULT_TRIALS);
        assert_eq!(spec.base.tx_antennas, desk.tx_antennas);
        assert!((spec.base.transmit_power - desk.transmit_power).abs() < 1e-12);
        assert!((spec.base.wavelength - desk.wavelength).abs() < 1e-15);
        assert_eq!(spec.scene.clutter_angles.len(), 2);
        assert!((spec.scene.target_power - RadarScene::default().target_power).abs() < 1e-12);
    }

    #[test]
    fn bad_files_are_config_errors() {
        let cases = [
            "[sweep]\nvariable = \"gamma_db\"\nvalues = []",
            "trials = 0\n[sweep]\nvariable = \"gamma_db\"\nvalues = [10.0]",
            "colour = 1\n[sweep]\nvariable = \"gamma_db\"\nvalues = [10.0]",
            "[sweep]\nvariable = \"gamma_db\"\nvalues = [10.0]\n[system]\nantennas = 4",
            "[sweep]\nvariable = \"gamma_db\"\nvalues = [10.0]\n[solver]\nrho = 2.0",
            "architectures = [\"fc\"]\n[sweep]\nvariable = \"gamma_db\"\nvalues = [10.0]",
            "architectures = [\"rs\", \"rs\"]\n[sweep]\nvariable = \"gamma_db\"\nvalues = [10.0]",
            "[sweep]\nvariable = \"users\"\nvalues = [1.5]",
            "[sweep]\nvariable = \"tx_antennas\"\nvalues = [18.0]",
            "false_alarm = [1.0]\n[sweep]\nvariable = \"gamma_db\"\nvalues = [10.0]",
            "[sweep]\nvariable = \"speed\"\nvalues = [1.0]",
        ];
        for c in cases {
            assert!(matches!(ExperimentSpec::from_toml_str(c), Err(Error::Config(_))), "{c}");
        }
        // 18 antennas are fine without the fixed-subarray architecture
        let ok = "architectures = [\"rs\"]\n[sweep]\nvariable = \"tx_antennas\"\nvalues = [18.0]";
        assert!(ExperimentSpec::from_toml_str(ok).is_ok());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = ExperimentSpec::load(Path::new("/nonexistent/exp.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/exp.toml"));
    }

    #[test]
    fn config_hash_tracks_the_content() {
        let a = ExperimentSpec::from_toml_str(SMALL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
        b.seed += 1;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn single_trial_is_one_deterministic_row() {
        let spec = ExperimentSpec::from_toml_str(SMALL).unwrap();
        let a = run_experiment(&spec, Some(1)).unwrap();
        assert_eq!(a.records.len(), 1);
        assert_eq!(a.summary.len(), 1);
        let r = &a.records[0];
        assert_eq!(r.status, TrialStatus::Converged);
        assert!(r.feasible);
        assert!(r.detection.iter().all(|p| (0.0..=1.0).contains(p)));
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let f1 = write_results(&a, dir1.path()).unwrap();
        let b = run_experiment(&spec, Some(2)).unwrap();
        let f2 = write_results(&b, dir2.path()).unwrap();
        assert_eq!(fs::read(&f1.results).unwrap(), fs::read(&f2.results).unwrap());
        assert_eq!(fs::read(&f1.summary).unwrap(), fs::read(&f2.summary).unwrap());
        let text = fs::read_to_string(&f1.results).unwrap();
        assert_eq!(text.lines().next().unwrap(), results_header(&spec).join(","));
        assert_eq!(text.lines().count(), 2);
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&f1.manifest).unwrap()).unwrap();
        assert_eq!(manifest["config_hash"], spec.config_hash());
        assert_eq!(manifest["schema_version"], SCHEMA_VERSION);
    }

    #[test]
    fn architecture_order_does_not_change_cells() {
        let text = |archs: &str| {
            format!("trials = 2\nseed = 5\narchitectures = {archs}\n[sweep]\nvariable = \"gamma_db\"\nvalues = [10.0]")
        };
        let a = run_experiment(&ExperimentSpec::from_toml_str(&text("[\"rs\", \"fd\"]")).unwrap(), None).unwrap();
        let b = run_experiment(&ExperimentSpec::from_toml_str(&text("[\"fd\", \"rs\"]")).unwrap(), None).unwrap();
        for ra in &a.records {
            let rb = b
                .records
                .iter()
                .find(|r| r.architecture == ra.architecture && r.trial == ra.trial)
                .unwrap();
            assert_eq!(ra.sum_rate.to_bits(), rb.sum_rate.to_bits());
            assert_eq!(ra.channel_seed, rb.channel_seed);
        }
        // paired comparison: both architectures see the same channel
        assert_eq!(a.records[0].channel_seed, a.records[2].channel_seed);
        assert_ne!(a.records[0].init_seed, a.records[2].init_seed);
    }

    #[test]
    fn infeasible_trials_are_flagged_and_the_run_continues() {
        let spec = ExperimentSpec::from_toml_str(
            "trials = 1\narchitectures = [\"fd\"]\n[sweep]\nvariable = \"gamma_db\"\nvalues = [10.0, 90.0]",
        )
        .unwrap();
        let res = run_experiment(&spec, None).unwrap();
        assert_eq!(res.records.len(), 2);
        assert!(res.records[0].feasible);
        assert_eq!(res.records[1].status, TrialStatus::Infeasible);
        assert!(!res.records[1].feasible && res.records[1].sum_rate.is_nan());
        assert!(!res.records[1].error.is_empty());
        assert_eq!(res.infeasible_trials(), 1);
        assert_eq!(res.summary[1].feasible, 0);
        assert!(res.summary[1].sum_rate.0.is_nan());
    }

    #[test]
    fn summary_statistics() {
        assert!(mean_std(&[]).0.is_nan());
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn grid_covers_the_half_plane() {
        let g = beampattern_grid_deg();
        assert_eq!(g.len(), 361);
        assert_eq!((g[0], g[180], g[360]), (-90.0, 0.0, 90.0));
    }

    #[test]
    fn matched_design_peaks_at_the_target() {
        let cfg = SystemConfig { tx_antennas: 8, rx_antennas: 4, tx_rf_chains: 8, rx_rf_chains: 4, streams_per_user: 1, users: 1, ..SystemConfig::desk_scale() };
        let angle = 20f64.to_radians();
        let t = steering_vector(angle, cfg.tx_antennas, &cfg).map(|v| v.conj());
        let w = steering_vector(angle, cfg.rx_antennas, &cfg);
        let bf = BeamformerSet {
            t_rf: CMat::identity(8, 8),
            t_d: CMat::from_column_slice(8, 1, t.as_slice()),
            w_rf: CMat::identity(4, 4),
            w_d: CMat::from_column_slice(4, 1, w.as_slice()),
            u: Vec::new(),
            t_aux: Vec::new(),
            w_aux: CMat::zeros(4, 1),
            streams_per_user: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bp.csv");
        let grid = beampattern_grid_deg();
        emit_beampattern(&bf, &cfg, &grid, &path).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let rows: Vec<(f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 361);
        let peak = rows.iter().cloned().fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        assert_eq!(peak.0, 20.0);
        assert!(peak.1.abs() < 1e-12);
        assert!(emit_beampattern(&bf, &cfg, &[], &path).is_err());
        let err = emit_beampattern(&bf, &cfg, &grid, Path::new("/nonexistent/dir/bp.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/bp.csv"));
    }

    #[test]
    fn optimized_design_suppresses_clutter() {
        let spec = ExperimentSpec::from_toml_str(
            "trials = 1\narchitectures = [\"rs\"]\n[sweep]\nvariable = \"gamma_db\"\nvalues = [18.0]",
        )
        .unwrap();
        let (cfg, _, sol) = solve_cell(&spec, 0, Architecture::Rs, 0).unwrap();
        let grid = beampattern_grid_deg();
        let p = design_beampattern(&sol.bf, &cfg, &grid).unwrap();
        let at = |deg: f64| p[grid.iter().position(|&g| g == deg).unwrap()];
        assert!(at(-30.0) <= -25.0 && at(30.0) <= -25.0, "{} {}", at(-30.0), at(30.0));
    }
}
