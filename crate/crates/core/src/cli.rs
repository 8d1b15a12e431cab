//! Batch runs driven by a single JSON configuration document.
//!
//! Every command validates its configuration before computing, writes CSV
//! tables (a `# config_sha256=` line, a header row, floats with 17
//! significant digits) and a JSON report into the output directory.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{
    build_initial_state, integrate, EvolutionConfig, HaltReason, LayerQuadrature, LayeredState, ReferenceState,
    StepDiagnostics, Trajectory,
};
use crate::geometry::{max_tube_radius, TrigSeries};
use crate::harness::{
    conservation_monitor, jump_relation_test, run_convergence, support_width_monitor, CurveChoice, ExperimentSpec,
    LayerProfile,
};
use crate::kernels::{kernel_lower_bound_check, KernelEvalConfig, PvRule, DEFAULT_RESOLUTION_FACTOR};
use crate::spectral::{symmetric_samples, AnalyticityRadius, PeriodicGrid, RadiusFit, SpectralField};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 1,
        }
    }
}

fn config_error(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// How a command that ran to its end finished.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// A runtime guard stopped at least one run; outputs cover what was computed.
    Halted(String),
}

impl RunStatus {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunStatus::Completed => 0,
            RunStatus::Halted(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Reference,
    Converge,
    Jump,
    Diagnose,
}

/// Initial data for one layered run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayeredSetup {
    pub curve: CurveChoice,
    #[serde(default)]
    pub eta0: TrigSeries,
    pub density0: TrigSeries,
    #[serde(default)]
    pub profile: LayerProfile,
    pub epsilon: f64,
    pub grid_points: usize,
    pub n_layers: usize,
}

impl LayeredSetup {
    pub fn build(&self) -> Result<LayeredState, CliError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CliError::Config("epsilon must be positive and finite".into()));
        }
        if self.n_layers < 2 {
            return Err(CliError::Config("n_layers must be at least 2".into()));
        }
        let curve = Arc::new(self.curve.build().map_err(config_error)?);
        let grid = PeriodicGrid::new(self.grid_points).map_err(config_error)?;
        let layers = LayerQuadrature::midpoint(self.n_layers);
        let base = SpectralField::from_fn(grid, |s| self.density0.eval(s));
        let density = self
            .profile
            .weights(&layers)
            .iter()
            .map(|&c| SpectralField::from_values(grid, base.values().iter().map(|v| c * v).collect()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(config_error)?;
        let eta = SpectralField::from_fn(grid, |s| self.eta0.eval(s));
        build_initial_state(curve, &eta, density, self.epsilon, layers).map_err(config_error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub state: LayeredSetup,
    pub evolution: EvolutionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub curve: CurveChoice,
    /// Initial normal offset of the sheet from the curve.
    #[serde(default)]
    pub nu0: TrigSeries,
    pub density0: TrigSeries,
    pub grid_points: usize,
    pub evolution: EvolutionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpConfig {
    pub curve: CurveChoice,
    #[serde(default)]
    pub eta0: TrigSeries,
    pub density0: TrigSeries,
    #[serde(default)]
    pub profile: LayerProfile,
    pub epsilons: Vec<f64>,
    pub grid_points: Vec<usize>,
    pub n_layers: usize,
    #[serde(default)]
    pub pv_rule: PvRule,
    #[serde(default = "default_resolution")]
    pub resolution_factor: f64,
}

fn default_resolution() -> f64 {
    DEFAULT_RESOLUTION_FACTOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub state: LayeredSetup,
    /// Evolve the state first; the checks run on the final state.
    #[serde(default)]
    pub evolution: Option<EvolutionConfig>,
    /// Largest `|β|` of the complex shift.
    pub beta_max: f64,
    #[serde(default = "default_beta_count")]
    pub beta_count: usize,
    /// Random `(s, ς, l, ℓ)` tuples per `β`.
    #[serde(default = "default_tuples")]
    pub n_tuples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_beta_count() -> usize {
    5
}

fn default_tuples() -> usize {
    200
}

/// Hex SHA-256 of the raw configuration bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn parse<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CliError> {
    serde_json::from_slice(bytes).map_err(config_error)
}

/// Writes CSV and JSON artifacts stamped with the configuration hash.
pub struct Artifacts {
    dir: PathBuf,
    hash: String,
}

impl Artifacts {
    pub fn new(dir: &Path, hash: String) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash,
        })
    }

    fn io(&self, name: &str) -> impl Fn(io::Error) -> CliError + '_ {
        let path = self.dir.join(name);
        move |source| CliError::Io {
            path: path.clone(),
            source,
        }
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let err = self.io(name);
        let mut file = File::create(self.dir.join(name)).map_err(&err)?;
        writeln!(file, "# config_sha256={}", self.hash).map_err(&err)?;
        let mut w = csv::Writer::from_writer(file);
        let csv_err = |e: csv::Error| err(io::Error::other(e));
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush().map_err(&err)
    }

    pub fn json(&self, name: &str, report: impl Serialize) -> Result<(), CliError> {
        let err = self.io(name);
        let doc = json!({ "config_sha256": self.hash, "report": report });
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| err(io::Error::other(e)))?;
        text.push('\n');
        fs::write(self.dir.join(name), text).map_err(&err)
    }
}

/// Fixed 17-significant-digit formatting.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    fmt_f64(x.unwrap_or(f64::NAN))
}

pub fn run(command: Command, config: &[u8], out: &Path) -> Result<RunStatus, CliError> {
    let hash = config_hash(config);
    match command {
        Command::Simulate => simulate(parse(config)?, &Artifacts::new(out, hash)?),
        Command::Reference => reference(parse(config)?, &Artifacts::new(out, hash)?),
        Command::Converge => converge(parse(config)?, &Artifacts::new(out, hash)?),
        Command::Jump => jump(parse(config)?, &Artifacts::new(out, hash)?),
        Command::Diagnose => diagnose(parse(config)?, &Artifacts::new(out, hash)?),
    }
}

fn check_kernel(w: &LayeredState, evolution: &EvolutionConfig) -> Result<(), CliError> {
    evolution.validate().map_err(config_error)?;
    evolution.kernel_config(w).validate(w).map_err(config_error)
}

const DIAGNOSTIC_COLUMNS: [&str; 9] = [
    "step",
    "time",
    "max_speed",
    "admissibility_residual",
    "circulation_drift",
    "total_circulation",
    "rho_offset",
    "rho_density",
    "max_offset",
];

fn diagnostic_rows(diagnostics: &[StepDiagnostics]) -> Vec<Vec<String>> {
    diagnostics
        .iter()
        .map(|d| {
            vec![
                d.step.to_string(),
                fmt_f64(d.time),
                fmt_f64(d.max_speed),
                fmt_f64(d.admissibility_residual),
                fmt_f64(d.circulation_drift),
                fmt_f64(d.total_circulation),
                fmt_opt(d.rho_offset),
                fmt_opt(d.rho_density),
                fmt_f64(d.max_offset),
            ]
        })
        .collect()
}

fn status(halt: &Option<HaltReason>) -> RunStatus {
    match halt {
        None => RunStatus::Completed,
        Some(h) => RunStatus::Halted(serde_json::to_string(h).unwrap_or_else(|_| format!("{h:?}"))),
    }
}

#[derive(Serialize)]
struct SnapshotEntry {
    index: usize,
    time: f64,
    file: String,
}

fn layered_checkpoint(w: &LayeredState) -> Vec<Vec<String>> {
    let grid = w.grid();
    let mut rows = Vec::with_capacity(w.layers.len() * grid.len());
    for (l, &lv) in w.layers.nodes.iter().enumerate() {
        for j in 0..grid.len() {
            rows.push(vec![
                l.to_string(),
                fmt_f64(lv),
                fmt_f64(grid.node(j)),
                fmt_f64(w.offset[l].values()[j]),
                fmt_f64(w.stretch[l].values()[j]),
                fmt_f64(w.density[l].values()[j]),
            ]);
        }
    }
    rows
}

pub fn simulate(cfg: SimulateConfig, out: &Artifacts) -> Result<RunStatus, CliError> {
    let w = cfg.state.build()?;
    check_kernel(&w, &cfg.evolution)?;
    let epsilon = w.epsilon;
    let layers = w.layers.clone();
    let traj = integrate(w, &cfg.evolution).map_err(config_error)?;

    out.csv("diagnostics.csv", &DIAGNOSTIC_COLUMNS, &diagnostic_rows(&traj.diagnostics))?;
    let mut entries = Vec::new();
    for (k, s) in traj.snapshots.iter().enumerate() {
        let file = format!("checkpoint_{k:05}.csv");
        out.csv(
            &file,
            &["layer", "l", "s", "offset", "stretch", "density"],
            &layered_checkpoint(s),
        )?;
        entries.push(SnapshotEntry { index: k, time: s.time, file });
    }
    let widths = support_width_monitor(&traj);
    out.csv(
        "support_width.csv",
        &["time", "width", "width_ratio", "spread", "spread_ratio"],
        &widths
            .iter()
            .map(|w| {
                vec![
                    fmt_f64(w.time),
                    fmt_f64(w.width),
                    fmt_f64(w.width_ratio),
                    fmt_f64(w.spread),
                    fmt_f64(w.spread_ratio),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    out.json(
        "trajectory.json",
        json!({
            "kind": "layered",
            "epsilon": epsilon,
            "grid_points": cfg.state.grid_points,
            "layers": layers,
            "final_time": traj.last().time,
            "steps": traj.diagnostics.last().map_or(0, |d| d.step),
            "halt": traj.halt,
            "conservation": conservation_monitor(&traj),
            "snapshots": entries,
        }),
    )?;
    Ok(status(&traj.halt))
}

pub fn reference(cfg: ReferenceConfig, out: &Artifacts) -> Result<RunStatus, CliError> {
    cfg.evolution.validate().map_err(config_error)?;
    let curve = Arc::new(cfg.curve.build().map_err(config_error)?);
    let grid = PeriodicGrid::new(cfg.grid_points).map_err(config_error)?;
    let nu0 = SpectralField::from_fn(grid, |s| cfg.nu0.eval(s));
    if nu0.sup_norm() >= max_tube_radius(&curve) {
        return Err(CliError::Config("nu0 leaves the tubular neighbourhood of the curve".into()));
    }
    let r = ReferenceState::new(curve, nu0, SpectralField::from_fn(grid, |s| cfg.density0.eval(s)))
        .map_err(config_error)?;
    let traj: Trajectory<ReferenceState> = integrate(r, &cfg.evolution).map_err(config_error)?;

    out.csv("diagnostics.csv", &DIAGNOSTIC_COLUMNS, &diagnostic_rows(&traj.diagnostics))?;
    let mut entries = Vec::new();
    for (k, s) in traj.snapshots.iter().enumerate() {
        let file = format!("checkpoint_{k:05}.csv");
        let rows: Vec<Vec<String>> = (0..grid.len())
            .map(|j| {
                vec![
                    fmt_f64(grid.node(j)),
                    fmt_f64(s.nu0.values()[j]),
                    fmt_f64(s.varpi0.values()[j]),
                ]
            })
            .collect();
        out.csv(&file, &["s", "nu", "density"], &rows)?;
        entries.push(SnapshotEntry { index: k, time: s.time, file });
    }
    out.json(
        "trajectory.json",
        json!({
            "kind": "reference",
            "grid_points": cfg.grid_points,
            "final_time": traj.snapshots.last().map_or(0.0, |s| s.time),
            "steps": traj.diagnostics.last().map_or(0, |d| d.step),
            "halt": traj.halt,
            "snapshots": entries,
        }),
    )?;
    Ok(status(&traj.halt))
}

pub fn converge(spec: ExperimentSpec, out: &Artifacts) -> Result<RunStatus, CliError> {
    spec.validate().map_err(config_error)?;
    let curve = Arc::new(spec.curve.build().map_err(config_error)?);
    let t_end = spec.comparison_times.last().copied().unwrap_or(0.0);
    for k in 0..spec.epsilons.len() {
        let w = spec.layered_state(&curve, k).map_err(config_error)?;
        check_kernel(&w, &spec.evolution(t_end))?;
    }
    let report = run_convergence(&spec).map_err(config_error)?;

    out.csv(
        "errors.csv",
        &["epsilon", "grid_points", "time", "e_nu", "e_varpi"],
        &report
            .rows
            .iter()
            .map(|r| {
                vec![
                    fmt_f64(r.epsilon),
                    r.grid_points.to_string(),
                    fmt_f64(r.time),
                    fmt_f64(r.e_nu),
                    fmt_f64(r.e_varpi),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    let slope = |f: &Option<crate::harness::RateFit>| fmt_opt(f.map(|f| f.slope));
    out.csv(
        "slopes.csv",
        &["time", "slope_total", "slope_total_stderr", "slope_nu", "slope_varpi"],
        &report
            .slopes
            .iter()
            .map(|s| {
                vec![
                    fmt_f64(s.time),
                    slope(&s.total),
                    fmt_opt(s.total.map(|f| f.slope_stderr)),
                    slope(&s.nu),
                    slope(&s.varpi),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    out.csv(
        "support_width.csv",
        &["epsilon", "max_width_ratio", "max_spread_ratio"],
        &report
            .widths
            .iter()
            .map(|w| {
                vec![
                    fmt_f64(w.epsilon),
                    fmt_f64(w.max_width_ratio),
                    fmt_f64(w.max_spread_ratio),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    out.json("convergence.json", &report)?;
    Ok(match report.halts.first() {
        None => RunStatus::Completed,
        Some((eps, h)) => RunStatus::Halted(format!("ε = {eps}: {h:?}")),
    })
}

pub fn jump(cfg: JumpConfig, out: &Artifacts) -> Result<RunStatus, CliError> {
    if cfg.epsilons.is_empty() || cfg.epsilons.len() != cfg.grid_points.len() {
        return Err(CliError::Config(
            "epsilons and grid_points must be nonempty and of equal length".into(),
        ));
    }
    let states = cfg
        .epsilons
        .iter()
        .zip(&cfg.grid_points)
        .map(|(&epsilon, &grid_points)| {
            let w = LayeredSetup {
                curve: cfg.curve.clone(),
                eta0: cfg.eta0.clone(),
                density0: cfg.density0.clone(),
                profile: cfg.profile,
                epsilon,
                grid_points,
                n_layers: cfg.n_layers,
            }
            .build()?;
            let kcfg = KernelEvalConfig {
                pv_rule: cfg.pv_rule,
                resolution_factor: cfg.resolution_factor,
                ..KernelEvalConfig::for_state(&w)
            };
            kcfg.validate(&w).map_err(config_error)?;
            Ok((w, kcfg))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let reports = states
        .iter()
        .map(|(w, kcfg)| jump_relation_test(w, kcfg).map_err(config_error))
        .collect::<Result<Vec<_>, _>>()?;

    out.csv(
        "jump.csv",
        &[
            "epsilon",
            "grid_points",
            "mean_discrepancy",
            "tangential_jump_error",
            "corrected_discrepancy",
        ],
        &reports
            .iter()
            .zip(&cfg.grid_points)
            .map(|(r, n)| {
                vec![
                    fmt_f64(r.epsilon),
                    n.to_string(),
                    fmt_f64(r.mean_discrepancy),
                    fmt_f64(r.tangential_jump_error),
                    fmt_f64(r.corrected_discrepancy),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    let mut per_layer = Vec::new();
    for (r, (w, _)) in reports.iter().zip(&states) {
        for (l, d) in r.per_layer.iter().enumerate() {
            per_layer.push(vec![fmt_f64(r.epsilon), l.to_string(), fmt_f64(w.layers.nodes[l]), fmt_f64(*d)]);
        }
    }
    out.csv("jump_layers.csv", &["epsilon", "layer", "l", "discrepancy"], &per_layer)?;
    out.json("jump.json", &reports)?;
    Ok(RunStatus::Completed)
}

fn radius_columns(radius: AnalyticityRadius) -> [String; 2] {
    match radius {
        AnalyticityRadius::Resolved(r) => ["resolved".into(), fmt_f64(r)],
        AnalyticityRadius::Saturated(r) => ["saturated".into(), fmt_f64(r)],
        AnalyticityRadius::Indeterminate => ["indeterminate".into(), fmt_f64(f64::NAN)],
    }
}

pub fn diagnose(cfg: DiagnoseConfig, out: &Artifacts) -> Result<RunStatus, CliError> {
    if !(cfg.beta_max >= 0.0 && cfg.beta_max.is_finite()) || cfg.beta_count == 0 || cfg.n_tuples == 0 {
        return Err(CliError::Config(
            "beta_max must be nonnegative and beta_count, n_tuples positive".into(),
        ));
    }
    let mut w = cfg.state.build()?;
    let mut halt = None;
    if let Some(evolution) = &cfg.evolution {
        check_kernel(&w, evolution)?;
        let traj = integrate(w, evolution).map_err(config_error)?;
        halt = traj.halt.clone();
        w = traj.last().clone();
    }
    let kcfg = KernelEvalConfig::for_state(&w);
    kcfg.validate(&w).map_err(config_error)?;
    let betas = symmetric_samples(cfg.beta_max, cfg.beta_count);
    let bound = kernel_lower_bound_check(&w, &kcfg, &betas, cfg.n_tuples, cfg.seed).map_err(config_error)?;

    let fit = RadiusFit::default();
    let mut rows = Vec::new();
    let families = [("offset", &w.offset), ("stretch", &w.stretch), ("density", &w.density)];
    for (name, fields) in families {
        for (l, f) in fields.iter().enumerate() {
            let [kind, value] = radius_columns(f.estimate_analyticity_radius(&fit));
            rows.push(vec![name.to_string(), l.to_string(), fmt_f64(w.layers.nodes[l]), kind, value]);
        }
    }
    out.csv("analyticity.csv", &["field", "layer", "l", "status", "radius"], &rows)?;
    out.csv(
        "kernel_bound.csv",
        &["beta", "min_ratio"],
        &bound
            .per_beta
            .iter()
            .map(|&(b, r)| vec![fmt_f64(b), fmt_f64(r)])
            .collect::<Vec<_>>(),
    )?;
    out.json(
        "diagnose.json",
        json!({ "time": w.time, "seed": cfg.seed, "halt": halt, "kernel_bound": bound }),
    )?;
    Ok(status(&halt))
}
