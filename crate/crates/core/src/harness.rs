//! Experiments comparing layered sheets with the single-sheet reference:
//! convergence in ε, the two-sided jump relation, circulation conservation,
//! support width and integrator order.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    build_initial_state, integrate, DynamicsError, EvolutionConfig, HaltReason, LayerQuadrature, LayeredState,
    ReferenceState, Trajectory,
};
use crate::geometry::{dot, perp, reparametrize_arclength, CurveDocument, CurveSpec, GeometryError, TrigSeries};
use crate::kernels::{k0_on_samples, KernelError, KernelEvalConfig, LayeredKernel};
use crate::spectral::{least_squares, PeriodicGrid, SpectralError, SpectralField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("rate fit needs at least 3 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("rate fit needs positive entries, got ({0}, {1})")]
    NonPositive(f64, f64),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (zero for exactly collinear data).
    pub slope_stderr: f64,
    /// Euclidean norm of the log-space residuals.
    pub residual_norm: f64,
}

/// Least-squares slope of `log error` against `log ε`.
pub fn rate_fit(pairs: &[(f64, f64)]) -> Result<RateFit, HarnessError> {
    if pairs.len() < 3 {
        return Err(HarnessError::TooFewPairs(pairs.len()));
    }
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| !(*a > 0.0 && *b > 0.0)) {
        return Err(HarnessError::NonPositive(a, b));
    }
    let logs: Vec<(f64, f64)> = pairs.iter().map(|(a, b)| (a.ln(), b.ln())).collect();
    let (slope, intercept) = least_squares(logs.iter().copied());
    let rss: f64 = logs
        .iter()
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / logs.len() as f64;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(RateFit {
        slope,
        intercept,
        slope_stderr: (rss / (logs.len() as f64 - 2.0) / sxx).sqrt(),
        residual_norm: rss.sqrt(),
    })
}

/// Curves available to experiments without spelling out coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CurveChoice {
    UnitCircle,
    /// Ellipse with semi-axes `a`, `b`, rescaled to unit length.
    Ellipse { a: f64, b: f64 },
    Coefficients(CurveDocument),
}

impl CurveChoice {
    /// The arclength-normalized, counter-clockwise curve.
    pub fn build(&self) -> Result<CurveSpec, GeometryError> {
        match self {
            CurveChoice::UnitCircle => Ok(CurveSpec::unit_circle()),
            CurveChoice::Ellipse { a, b } => reparametrize_arclength(&CurveSpec::ellipse(*a, *b, 0.1)),
            CurveChoice::Coefficients(doc) => reparametrize_arclength(&CurveSpec::from_document(doc)?),
        }
    }
}

/// Layer dependence `χ(l)` of the initial density `ϖ⁰_{ε,l}(s) = χ(l) ϖ⁰₀(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerProfile {
    /// Constant on `|l| < 1/2`, scaled so that the layer quadrature of `χ` is 1.
    #[default]
    Uniform,
    /// `cos²(πl)` on `|l| < 1/2`, scaled the same way.
    Cosine,
}

impl LayerProfile {
    pub fn weights(&self, layers: &LayerQuadrature) -> Vec<f64> {
        let raw: Vec<f64> = layers
            .nodes
            .iter()
            .map(|&l| {
                if l.abs() >= 0.5 {
                    0.0
                } else {
                    match self {
                        LayerProfile::Uniform => 1.0,
                        LayerProfile::Cosine => (std::f64::consts::PI * l).cos().powi(2),
                    }
                }
            })
            .collect();
        let mass: f64 = raw.iter().zip(&layers.weights).map(|(c, w)| c * w).sum();
        raw.iter().map(|c| c / mass).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub curve: CurveChoice,
    /// `η⁰(s)`, shared by all layers.
    #[serde(default)]
    pub eta0: TrigSeries,
    /// `ϖ⁰₀(s)`, the reference sheet density.
    pub density0: TrigSeries,
    #[serde(default)]
    pub profile: LayerProfile,
    /// Strictly decreasing.
    pub epsilons: Vec<f64>,
    /// Grid size for each ε.
    pub grid_points: Vec<usize>,
    pub n_layers: usize,
    pub comparison_times: Vec<f64>,
    pub dt: f64,
    #[serde(default = "default_filter")]
    pub filter_threshold: f64,
}

fn default_filter() -> f64 {
    crate::dynamics::DEFAULT_FILTER_THRESHOLD
}

impl ExperimentSpec {
    /// `ϖ⁰₀ = 1 + 0.1 cos 2πs` on the unit circle, `η⁰ = 0`, ε halving from
    /// 0.08 to 0.01 with `N` scaled as `1/ε`, compared at `t = 0.05`.
    pub fn perturbed_circle() -> Self {
        Self {
            curve: CurveChoice::UnitCircle,
            eta0: TrigSeries::default(),
            density0: TrigSeries::new(vec![1.0, 0.1], vec![]),
            profile: LayerProfile::Uniform,
            epsilons: vec![0.08, 0.04, 0.02, 0.01],
            grid_points: vec![64, 128, 256, 512],
            n_layers: 8,
            comparison_times: vec![0.05],
            dt: 5e-4,
            filter_threshold: default_filter(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.epsilons.is_empty() {
            return bad("epsilon list is empty".into());
        }
        if self.epsilons.windows(2).any(|p| p[1] >= p[0]) || self.epsilons.iter().any(|&e| e <= 0.0) {
            return bad("epsilon list must be positive and strictly decreasing".into());
        }
        if self.grid_points.len() != self.epsilons.len() {
            return bad(format!(
                "{} grid sizes given for {} epsilons",
                self.grid_points.len(),
                self.epsilons.len()
            ));
        }
        let finest = self.reference_points();
        for &n in &self.grid_points {
            PeriodicGrid::new(n)?;
            if finest % n != 0 {
                return bad(format!("grid size {n} does not divide the reference size {finest}"));
            }
        }
        if self.n_layers < 2 {
            return bad("at least two layers are required".into());
        }
        if self.comparison_times.iter().any(|&t| !(t >= 0.0)) || self.comparison_times.windows(2).any(|p| p[1] <= p[0]) {
            return bad("comparison times must be nonnegative and increasing".into());
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive".into());
        }
        Ok(())
    }

    pub fn reference_points(&self) -> usize {
        self.grid_points.iter().copied().max().unwrap_or(0)
    }

    pub fn layers(&self) -> LayerQuadrature {
        LayerQuadrature::midpoint(self.n_layers)
    }

    pub fn evolution(&self, t_end: f64) -> EvolutionConfig {
        EvolutionConfig {
            filter_threshold: self.filter_threshold,
            ..EvolutionConfig::new(self.dt, t_end)
        }
    }

    /// Layered initial state for the `k`-th ε.
    pub fn layered_state(&self, curve: &Arc<CurveSpec>, k: usize) -> Result<LayeredState, HarnessError> {
        let grid = PeriodicGrid::new(self.grid_points[k])?;
        let layers = self.layers();
        let chi = self.profile.weights(&layers);
        let base = SpectralField::from_fn(grid, |s| self.density0.eval(s));
        let density = chi
            .iter()
            .map(|&c| {
                SpectralField::from_values(grid, base.values().iter().map(|v| c * v).collect()).expect("grid length")
            })
            .collect();
        let eta = SpectralField::from_fn(grid, |s| self.eta0.eval(s));
        Ok(build_initial_state(Arc::clone(curve), &eta, density, self.epsilons[k], layers)?)
    }

    pub fn reference_state(&self, curve: &Arc<CurveSpec>) -> Result<ReferenceState, HarnessError> {
        let grid = PeriodicGrid::new(self.reference_points())?;
        Ok(ReferenceState::new(
            Arc::clone(curve),
            SpectralField::zeros(grid),
            SpectralField::from_fn(grid, |s| self.density0.eval(s)),
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub grid_points: usize,
    pub time: f64,
    /// `max_l ‖ν_{ε,l} − ν₀‖∞`.
    pub e_nu: f64,
    /// `‖Σ_l w_l ϖ_{ε,l} − ϖ₀‖∞`.
    pub e_varpi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeRow {
    pub time: f64,
    pub total: Option<RateFit>,
    pub nu: Option<RateFit>,
    pub varpi: Option<RateFit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WidthSummary {
    pub epsilon: f64,
    /// `max_t max_l ‖ν_{ε,l}‖∞ / ε` over layers carrying density.
    pub max_width_ratio: f64,
    /// `max_t max_l ‖ν_{ε,l} − ν̄‖∞ / ε` about the mid curve `ν̄`.
    pub max_spread_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub slopes: Vec<SlopeRow>,
    pub widths: Vec<WidthSummary>,
    pub max_circulation_drift: Vec<(f64, f64)>,
    pub max_admissibility_residual: Vec<(f64, f64)>,
    pub halts: Vec<(f64, HaltReason)>,
}

/// Values of `f` on every `stride`-th node.
fn subsample(f: &SpectralField, stride: usize) -> Vec<f64> {
    f.values().iter().step_by(stride).copied().collect()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Integrates to each time in `times` in turn, keeping every step.
fn run_to_times<S: crate::dynamics::Monitored>(
    state: S,
    times: &[f64],
    cfg_at: impl Fn(f64) -> EvolutionConfig,
) -> Result<(Vec<S>, Trajectory<S>), HarnessError> {
    let mut at_times = Vec::new();
    let mut merged = Trajectory {
        snapshots: vec![state.clone()],
        diagnostics: Vec::new(),
        halt: None,
    };
    let mut current = state;
    for &t in times {
        let traj = integrate(current.clone(), &cfg_at(t))?;
        let offset = merged.diagnostics.last().map_or(0, |d| d.step);
        let skip = usize::from(!merged.diagnostics.is_empty());
        merged.diagnostics.extend(traj.diagnostics.into_iter().skip(skip).map(|mut d| {
            d.step += offset;
            d
        }));
        merged.snapshots.extend(traj.snapshots.into_iter().skip(1));
        current = merged.snapshots.last().expect("non-empty").clone();
        if let Some(h) = traj.halt {
            merged.halt = Some(h);
            break;
        }
        at_times.push(current.clone());
    }
    Ok((at_times, merged))
}

pub fn run_convergence(spec: &ExperimentSpec) -> Result<ConvergenceReport, HarnessError> {
    spec.validate()?;
    let curve = Arc::new(spec.curve.build()?);
    let n_ref = spec.reference_points();

    let reference = spec.reference_state(&curve)?;
    let (ref_states, ref_traj) = run_to_times(reference, &spec.comparison_times, |t| spec.evolution(t))?;
    let mut halts: Vec<(f64, HaltReason)> = ref_traj.halt.into_iter().map(|h| (0.0, h)).collect();

    let runs: Vec<Result<(Vec<LayeredState>, Trajectory<LayeredState>), HarnessError>> = (0..spec.epsilons.len())
        .into_par_iter()
        .map(|k| {
            let state = spec.layered_state(&curve, k)?;
            run_to_times(state, &spec.comparison_times, |t| spec.evolution(t))
        })
        .collect();

    let mut rows = Vec::new();
    let mut widths = Vec::new();
    let mut drifts = Vec::new();
    let mut residuals = Vec::new();
    for (k, run) in runs.into_iter().enumerate() {
        let (states, traj) = run?;
        let eps = spec.epsilons[k];
        let n = spec.grid_points[k];
        let stride = n_ref / n;
        for (state, reference) in states.iter().zip(&ref_states) {
            let nu0 = subsample(&reference.nu0, stride);
            let varpi0 = subsample(&reference.varpi0, stride);
            let e_nu = state
                .offset
                .iter()
                .map(|f| sup_diff(f.values(), &nu0))
                .fold(0.0, f64::max);
            let e_varpi = sup_diff(state.aggregate_density().values(), &varpi0);
            rows.push(ConvergenceRow {
                epsilon: eps,
                grid_points: n,
                time: state.time,
                e_nu,
                e_varpi,
            });
        }
        let series = support_width_monitor(&traj);
        widths.push(WidthSummary {
            epsilon: eps,
            max_width_ratio: series.iter().map(|w| w.width_ratio).fold(0.0, f64::max),
            max_spread_ratio: series.iter().map(|w| w.spread_ratio).fold(0.0, f64::max),
        });
        drifts.push((eps, conservation_monitor(&traj).max_layer_drift));
        residuals.push((
            eps,
            traj.diagnostics.iter().map(|d| d.admissibility_residual).fold(0.0, f64::max),
        ));
        if let Some(h) = traj.halt {
            halts.push((eps, h));
        }
    }

    let slopes = spec
        .comparison_times
        .iter()
        .map(|&t| {
            let at: Vec<&ConvergenceRow> = rows.iter().filter(|r| (r.time - t).abs() < 1e-12).collect();
            let fit = |f: &dyn Fn(&ConvergenceRow) -> f64| {
                rate_fit(&at.iter().map(|r| (r.epsilon, f(r))).collect::<Vec<_>>()).ok()
            };
            SlopeRow {
                time: t,
                total: fit(&|r| r.e_nu + r.e_varpi),
                nu: fit(&|r| r.e_nu),
                varpi: fit(&|r| r.e_varpi),
            }
        })
        .collect();

    Ok(ConvergenceReport {
        rows,
        slopes,
        widths,
        max_circulation_drift: drifts,
        max_admissibility_residual: residuals,
        halts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpTestReport {
    pub epsilon: f64,
    /// `‖½(U(outer) + U(inner)) − K₀[ν̄, Σ w ϖ]‖∞`.
    pub mean_discrepancy: f64,
    /// `‖(U(outer) − U(inner))·γ̄′ − Σ w ϖ‖∞`.
    pub tangential_jump_error: f64,
    /// `max_l ‖U(l) − K₀ − γ̄′/(2|γ̄′|²) ∫ sgn(μ − l) ϖ dμ‖∞` over interior layers.
    pub corrected_discrepancy: f64,
    /// The same, per layer (zero for the outermost and innermost).
    pub per_layer: Vec<f64>,
}

/// Compares the layered velocity with the single-sheet velocity of the
/// aggregate density placed on the mid curve `ν̄ = ½(ν_outer + ν_inner)`.
///
/// The outermost layer is the first one (most negative `l`, since positive
/// offsets point into the curve).
pub fn jump_relation_test(w: &LayeredState, cfg: &KernelEvalConfig) -> Result<JumpTestReport, HarnessError> {
    let velocity = LayeredKernel::new(w, cfg)?.velocity_all()?;
    let grid = w.grid();
    let n = grid.len();
    let last = w.layers.len() - 1;
    let mid = SpectralField::from_values(
        grid,
        (0..n)
            .map(|i| 0.5 * (w.offset[0].values()[i] + w.offset[last].values()[i]))
            .collect(),
    )?;
    let total = w.aggregate_density();
    let k0 = k0_on_samples(&w.samples, &mid, &total, cfg.pv_rule)?;
    let mid_slope = mid.derivative();
    // γ̄′ = e_s(ν̄) + ν̄′ e_n
    let gamma_prime: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let f = w.samples.frame(i, mid.values()[i])?;
            let d = mid_slope.values()[i];
            Ok([f.e_s[0] + d * f.e_n[0], f.e_s[1] + d * f.e_n[1]])
        })
        .collect::<Result<_, GeometryError>>()?;

    let (outer, inner) = (&velocity[0], &velocity[last]);
    let mut mean_discrepancy: f64 = 0.0;
    let mut tangential_jump_error: f64 = 0.0;
    for i in 0..n {
        let m = [0.5 * (outer[i][0] + inner[i][0]), 0.5 * (outer[i][1] + inner[i][1])];
        mean_discrepancy = mean_discrepancy.max((m[0] - k0[i][0]).hypot(m[1] - k0[i][1]));
        let jump = [outer[i][0] - inner[i][0], outer[i][1] - inner[i][1]];
        tangential_jump_error = tangential_jump_error.max((dot(jump, gamma_prime[i]) - total.values()[i]).abs());
    }

    let mut per_layer = vec![0.0; w.layers.len()];
    for l in 1..last {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let signed: f64 = (0..w.layers.len())
                .map(|mu| {
                    let sign = (mu as f64 - l as f64).signum() * f64::from(u8::from(mu != l));
                    sign * w.layers.weights[mu] * w.density[mu].values()[i]
                })
                .sum();
            let g = gamma_prime[i];
            let c = signed / (2.0 * dot(g, g));
            let r = [
                velocity[l][i][0] - k0[i][0] - c * g[0],
                velocity[l][i][1] - k0[i][1] - c * g[1],
            ];
            worst = worst.max(r[0].hypot(r[1]));
        }
        per_layer[l] = worst;
    }
    Ok(JumpTestReport {
        epsilon: w.epsilon,
        mean_discrepancy,
        tangential_jump_error,
        corrected_discrepancy: per_layer.iter().copied().fold(0.0, f64::max),
        per_layer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationReport {
    pub times: Vec<f64>,
    /// `[snapshot][layer]` drift of `∫ϖ_l ds` relative to the first snapshot.
    pub layer_drift: Vec<Vec<f64>>,
    /// Drift of `Σ_l w_l ∫ϖ_l ds`.
    pub total_drift: Vec<f64>,
    pub max_layer_drift: f64,
}

pub fn conservation_monitor(traj: &Trajectory<LayeredState>) -> ConservationReport {
    let Some(first) = traj.snapshots.first() else {
        return ConservationReport {
            times: vec![],
            layer_drift: vec![],
            total_drift: vec![],
            max_layer_drift: 0.0,
        };
    };
    let c0 = first.circulations();
    let t0 = first.total_circulation();
    let layer_drift: Vec<Vec<f64>> = traj
        .snapshots
        .iter()
        .map(|s| s.circulations().iter().zip(&c0).map(|(c, c0)| (c - c0).abs()).collect())
        .collect();
    ConservationReport {
        times: traj.snapshots.iter().map(|s| s.time).collect(),
        total_drift: traj.snapshots.iter().map(|s| (s.total_circulation() - t0).abs()).collect(),
        max_layer_drift: layer_drift.iter().flatten().copied().fold(0.0, f64::max),
        layer_drift,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WidthSample {
    pub time: f64,
    /// `max_l ‖ν_{ε,l}‖∞` over layers carrying density.
    pub width: f64,
    pub width_ratio: f64,
    /// `max_l ‖ν_{ε,l} − ν̄‖∞` with `ν̄` the mid curve of the outermost and
    /// innermost layers.
    pub spread: f64,
    pub spread_ratio: f64,
}

pub fn support_width_monitor(traj: &Trajectory<LayeredState>) -> Vec<WidthSample> {
    traj.snapshots
        .iter()
        .map(|s| {
            let last = s.layers.len() - 1;
            let active = s.active_layers();
            let mut width: f64 = 0.0;
            let mut spread: f64 = 0.0;
            for &l in &active {
                for (i, &v) in s.offset[l].values().iter().enumerate() {
                    let mid = 0.5 * (s.offset[0].values()[i] + s.offset[last].values()[i]);
                    width = width.max(v.abs());
                    spread = spread.max((v - mid).abs());
                }
            }
            WidthSample {
                time: s.time,
                width,
                width_ratio: width / s.epsilon,
                spread,
                spread_ratio: spread / s.epsilon,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RichardsonReport {
    pub dts: [f64; 3],
    /// `‖y_{dt} − y_{dt/2}‖∞` and `‖y_{dt/2} − y_{dt/4}‖∞`.
    pub differences: [f64; 2],
    pub order: f64,
}

/// Observed order `log₂(‖y_h − y_{h/2}‖ / ‖y_{h/2} − y_{h/4}‖)` at `t_end`.
pub fn richardson_order(state: &LayeredState, cfg: &EvolutionConfig) -> Result<RichardsonReport, HarnessError> {
    let dts = [cfg.dt, cfg.dt / 2.0, cfg.dt / 4.0];
    let finals = dts
        .iter()
        .map(|&dt| {
            let c = EvolutionConfig {
                dt,
                snapshot_every: 0,
                ..cfg.clone()
            };
            let traj = integrate(state.clone(), &c)?;
            if let Some(h) = traj.halt {
                return Err(HarnessError::InvalidSpec(format!("run halted: {h:?}")));
            }
            Ok(traj.last().clone())
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let diff = |a: &LayeredState, b: &LayeredState| {
        use crate::dynamics::Evolving;
        a.fields()
            .iter()
            .zip(b.fields())
            .map(|(x, y)| sup_diff(x.values(), y.values()))
            .fold(0.0, f64::max)
    };
    let differences = [diff(&finals[0], &finals[1]), diff(&finals[1], &finals[2])];
    Ok(RichardsonReport {
        dts,
        differences,
        order: (differences[0] / differences[1]).log2(),
    })
}

/// Unit tangent-normal split `(u·t̂, u·t̂^⊥)` of the mid-curve velocity.
pub fn tangential_normal(u: [f64; 2], tangent: [f64; 2]) -> (f64, f64) {
    let len = tangent[0].hypot(tangent[1]);
    let t = [tangent[0] / len, tangent[1] / len];
    (dot(u, t), dot(u, perp(t)))
}
