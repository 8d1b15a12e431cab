//! Layered sheet state, its effective evolution and the single-sheet
//! reference evolution, both advanced by classical RK4 with Krasny
//! filtering after every step.
//!
//! A layered state carries, per layer abscissa `l` of the layer quadrature,
//! the normal offset `w1 = ν` of the layer curve in the tubular chart, the
//! stretch `w3 = ∂_l η` and the density `w4 = ϖ`. The slope `w2 = ∂_s w1` is
//! always derived spectrally.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dot, max_tube_radius, CurveSamples, CurveSpec, GeometryError, Vec2};
use crate::kernels::{k0_on_samples, KernelError, KernelEvalConfig, LayeredKernel, PvRule};
use crate::spectral::{AnalyticityRadius, PeriodicGrid, RadiusFit, SpectralError, SpectralField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("initial density of layer {layer} (l = {l}) must vanish for |l| ≥ 1/2")]
    SupportViolation { layer: usize, l: f64 },
    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid evolution config: {0}")]
    InvalidConfig(String),
    #[error("dt = {dt} exceeds the CFL bound {bound} (cfl·Δs/max|U| with max|U| = {max_speed})")]
    Cfl { dt: f64, bound: f64, max_speed: f64 },
}

/// Composite midpoint rule on `[−1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LayerQuadrature {
    pub fn midpoint(n_layers: usize) -> Self {
        let h = 2.0 / n_layers as f64;
        Self {
            nodes: (0..n_layers).map(|i| -1.0 + h * (i as f64 + 0.5)).collect(),
            weights: vec![h; n_layers],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn min_gap(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|p| p[1] - p[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Indices with `|l| < 1/2`.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.nodes[i].abs() < 0.5).collect()
    }

    /// `Σ_i weight_i · f(l_i)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&l, &w)| w * f(l)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct LayeredState {
    pub curve: Arc<CurveSpec>,
    pub samples: Arc<CurveSamples>,
    pub epsilon: f64,
    pub layers: LayerQuadrature,
    /// `w1[l]`.
    pub offset: Vec<SpectralField>,
    /// `w3[l]`.
    pub stretch: Vec<SpectralField>,
    /// `w4[l]`.
    pub density: Vec<SpectralField>,
    pub time: f64,
}

impl LayeredState {
    pub fn grid(&self) -> PeriodicGrid {
        self.samples.grid
    }

    /// `w2[l] = ∂_s w1[l]`.
    pub fn slope(&self, l: usize) -> SpectralField {
        self.offset[l].derivative()
    }

    /// `C_k(s_i) = ∫_{l_0}^{l_k} (1 + w3) dμ` by the trapezoid rule between
    /// layer nodes, indexed `[k][i]`.
    pub fn cumulative_stretch(&self) -> Vec<Vec<f64>> {
        let n = self.grid().len();
        let mut out = Vec::with_capacity(self.layers.len());
        let mut acc = vec![0.0; n];
        out.push(acc.clone());
        for k in 1..self.layers.len() {
            let h = self.layers.nodes[k] - self.layers.nodes[k - 1];
            let (a, b) = (self.stretch[k - 1].values(), self.stretch[k].values());
            for i in 0..n {
                acc[i] += 0.5 * h * (2.0 + a[i] + b[i]);
            }
            out.push(acc.clone());
        }
        out
    }

    /// `∫_𝕋 ϖ_l ds` per layer.
    pub fn circulations(&self) -> Vec<f64> {
        self.density.iter().map(SpectralField::mean).collect()
    }

    pub fn total_circulation(&self) -> f64 {
        self.circulations()
            .iter()
            .zip(&self.layers.weights)
            .map(|(c, w)| c * w)
            .sum()
    }

    /// `Σ_l weight_l · ϖ_l` on the grid.
    pub fn aggregate_density(&self) -> SpectralField {
        let n = self.grid().len();
        let mut v = vec![0.0; n];
        for (f, &w) in self.density.iter().zip(&self.layers.weights) {
            for (acc, x) in v.iter_mut().zip(f.values()) {
                *acc += w * x;
            }
        }
        SpectralField::from_values(self.grid(), v).expect("grid length")
    }

    /// Layers whose density is not identically zero.
    pub fn active_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&l| self.density[l].values().iter().any(|&v| v != 0.0))
            .collect()
    }
}

/// Builds `w1 = ε(l + η⁰)`, `w3 = 0`, `w4 = ϖ⁰`.
pub fn build_initial_state(
    curve: Arc<CurveSpec>,
    eta0: &SpectralField,
    density: Vec<SpectralField>,
    epsilon: f64,
    layers: LayerQuadrature,
) -> Result<LayeredState, DynamicsError> {
    if density.len() != layers.len() {
        return Err(DynamicsError::LengthMismatch {
            what: "initial densities per layer",
            expected: layers.len(),
            got: density.len(),
        });
    }
    let grid = eta0.grid();
    for (layer, (f, &l)) in density.iter().zip(&layers.nodes).enumerate() {
        if f.grid() != grid {
            return Err(DynamicsError::LengthMismatch {
                what: "density grid",
                expected: grid.len(),
                got: f.grid().len(),
            });
        }
        if l.abs() >= 0.5 && f.values().iter().any(|&v| v != 0.0) {
            return Err(DynamicsError::SupportViolation { layer, l });
        }
    }
    let offset = layers
        .nodes
        .iter()
        .map(|&l| {
            SpectralField::from_values(grid, eta0.values().iter().map(|e| epsilon * (l + e)).collect())
                .expect("grid length")
        })
        .collect();
    let samples = Arc::new(CurveSamples::new(&curve, grid));
    Ok(LayeredState {
        curve,
        samples,
        epsilon,
        stretch: vec![SpectralField::zeros(grid); layers.len()],
        layers,
        offset,
        density,
        time: 0.0,
    })
}

/// `max_s (max_l a_l(s) − min_l a_l(s))` with `a_l = w1[l] − ε C_l`, which
/// equals the largest pairwise defect `|w1[l]−w1[ℓ] − ε∫_ℓ^l(1+w3)dμ|`.
pub fn admissibility_residual(w: &LayeredState) -> f64 {
    let c = w.cumulative_stretch();
    (0..w.grid().len())
        .map(|i| {
            let (lo, hi) = (0..w.layers.len())
                .map(|k| w.offset[k].values()[i] - w.epsilon * c[k][i])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)));
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Replaces `w3` by the closest field (in least squares per node) whose
/// layer integrals reproduce the differences of `w1` exactly.
pub fn project_admissible(w: &mut LayeredState) {
    let n_layers = w.layers.len();
    if n_layers < 2 {
        return;
    }
    let n = w.grid().len();
    let mut columns = vec![vec![0.0; n]; n_layers];
    for i in 0..n {
        // w3_k + w3_{k+1} = b_k; particular solution a, null vector (−1)^k.
        let mut a = vec![0.0; n_layers];
        for k in 0..n_layers - 1 {
            let h = w.layers.nodes[k + 1] - w.layers.nodes[k];
            let b = 2.0 * (w.offset[k + 1].values()[i] - w.offset[k].values()[i]) / (w.epsilon * h) - 2.0;
            a[k + 1] = b - a[k];
        }
        let sign = |k: usize| if k % 2 == 0 { 1.0 } else { -1.0 };
        let t = (0..n_layers)
            .map(|k| sign(k) * (w.stretch[k].values()[i] - a[k]))
            .sum::<f64>()
            / n_layers as f64;
        for k in 0..n_layers {
            columns[k][i] = a[k] + sign(k) * t;
        }
    }
    let grid = w.grid();
    w.stretch = columns
        .into_iter()
        .map(|v| SpectralField::from_values(grid, v).expect("grid length"))
        .collect();
}

/// Velocity decomposed on the chart frame at `(s, w1[l, s])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    /// `U·e_n`.
    pub normal: Vec<f64>,
    /// `U·e_s / |e_s|²`.
    pub tangential: Vec<f64>,
    /// `κ·U`.
    pub curvature: Vec<f64>,
}

pub fn project_components(
    u: &[Vec2],
    samples: &CurveSamples,
    offset: &SpectralField,
) -> Result<Components, GeometryError> {
    let n = samples.grid.len();
    let mut c = Components {
        normal: Vec::with_capacity(n),
        tangential: Vec::with_capacity(n),
        curvature: Vec::with_capacity(n),
    };
    for (i, ui) in u.iter().enumerate() {
        let f = samples.frame(i, offset.values()[i])?;
        c.normal.push(dot(*ui, f.e_n));
        c.tangential.push(dot(*ui, f.e_s) / dot(f.e_s, f.e_s));
        c.curvature.push(dot(*ui, f.kappa));
    }
    Ok(c)
}

pub fn assemble_velocity(w: &LayeredState, l: usize, cfg: &KernelEvalConfig) -> Result<Vec<Vec2>, KernelError> {
    LayeredKernel::new(w, cfg)?.velocity(l)
}

/// `∂_s` of a grid product, Krasny-filtered before differentiating.
fn filtered_derivative(grid: PeriodicGrid, values: Vec<f64>, threshold: f64) -> Result<SpectralField, SpectralError> {
    Ok(SpectralField::from_values(grid, values)?
        .krasny_filter(threshold)?
        .derivative())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredRhs {
    pub d_offset: Vec<Vec<f64>>,
    pub d_stretch: Vec<Vec<f64>>,
    pub d_density: Vec<Vec<f64>>,
    pub max_speed: f64,
}

/// `F1 = U^n − U^s w2`, `F3 = (κ·U)(1+w3) − ∂_s(U^s(1+w3))`,
/// `F4 = −∂_s(U^s w4)` at every layer.
pub fn rhs(w: &LayeredState, cfg: &KernelEvalConfig, filter_threshold: f64) -> Result<LayeredRhs, DynamicsError> {
    let velocity = LayeredKernel::new(w, cfg)?.velocity_all()?;
    let grid = w.grid();
    let max_speed = velocity
        .iter()
        .flatten()
        .map(|u| u[0].hypot(u[1]))
        .fold(0.0, f64::max);
    let mut out = LayeredRhs {
        d_offset: Vec::with_capacity(w.layers.len()),
        d_stretch: Vec::with_capacity(w.layers.len()),
        d_density: Vec::with_capacity(w.layers.len()),
        max_speed,
    };
    for (l, u) in velocity.iter().enumerate() {
        let c = project_components(u, &w.samples, &w.offset[l])?;
        let w2 = w.slope(l);
        let w3 = w.stretch[l].values();
        let w4 = w.density[l].values();
        let f1 = (0..grid.len())
            .map(|i| c.normal[i] - c.tangential[i] * w2.values()[i])
            .collect();
        let flux3 = filtered_derivative(
            grid,
            (0..grid.len()).map(|i| c.tangential[i] * (1.0 + w3[i])).collect(),
            filter_threshold,
        )?;
        let f3 = (0..grid.len())
            .map(|i| c.curvature[i] * (1.0 + w3[i]) - flux3.values()[i])
            .collect();
        let flux4 = filtered_derivative(
            grid,
            (0..grid.len()).map(|i| c.tangential[i] * w4[i]).collect(),
            filter_threshold,
        )?;
        out.d_offset.push(f1);
        out.d_stretch.push(f3);
        out.d_density.push(flux4.values().iter().map(|v| -v).collect());
    }
    Ok(out)
}

/// Single sheet written as a graph `Γ + ν₀ Γ̇^⊥` with density `ϖ₀`.
#[derive(Debug, Clone)]
pub struct ReferenceState {
    pub curve: Arc<CurveSpec>,
    pub samples: Arc<CurveSamples>,
    pub nu0: SpectralField,
    pub varpi0: SpectralField,
    pub time: f64,
}

impl ReferenceState {
    pub fn new(curve: Arc<CurveSpec>, nu0: SpectralField, varpi0: SpectralField) -> Result<Self, DynamicsError> {
        if nu0.grid() != varpi0.grid() {
            return Err(DynamicsError::LengthMismatch {
                what: "reference density grid",
                expected: nu0.grid().len(),
                got: varpi0.grid().len(),
            });
        }
        let samples = Arc::new(CurveSamples::new(&curve, nu0.grid()));
        Ok(Self {
            curve,
            samples,
            nu0,
            varpi0,
            time: 0.0,
        })
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.samples.grid
    }

    pub fn circulation(&self) -> f64 {
        self.varpi0.mean()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRhs {
    pub d_nu: Vec<f64>,
    pub d_varpi: Vec<f64>,
    pub max_speed: f64,
}

/// `dν₀ = U^n − U^s ∂_sν₀`, `dϖ₀ = −∂_s(U^s ϖ₀)` with `U` the
/// principal-value velocity of the graph sheet.
pub fn reference_rhs(r: &ReferenceState, rule: PvRule, filter_threshold: f64) -> Result<ReferenceRhs, DynamicsError> {
    let grid = r.grid();
    let u = k0_on_samples(&r.samples, &r.nu0, &r.varpi0, rule)?;
    let max_speed = u.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
    let c = project_components(&u, &r.samples, &r.nu0)?;
    let slope = r.nu0.derivative();
    let d_nu = (0..grid.len())
        .map(|i| c.normal[i] - c.tangential[i] * slope.values()[i])
        .collect();
    let flux = filtered_derivative(
        grid,
        (0..grid.len()).map(|i| c.tangential[i] * r.varpi0.values()[i]).collect(),
        filter_threshold,
    )?;
    Ok(ReferenceRhs {
        d_nu,
        d_varpi: flux.values().iter().map(|v| -v).collect(),
        max_speed,
    })
}

/// Time derivative of every evolved field, flattened in `Evolving::fields` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Rate {
    pub fields: Vec<Vec<f64>>,
    pub max_speed: f64,
}

/// A state advanced by the explicit integrator.
pub trait Evolving: Clone + Send + Sync {
    fn fields(&self) -> Vec<&SpectralField>;
    fn with_fields(&self, fields: Vec<Vec<f64>>, time: f64) -> Self;
    fn time(&self) -> f64;
    fn rate(&self, cfg: &EvolutionConfig) -> Result<Rate, DynamicsError>;
    /// Post-step hook (filtering, projection).
    fn finish_step(&mut self, cfg: &EvolutionConfig) -> Result<(), DynamicsError>;
    fn max_offset(&self) -> f64;
}

fn rebuild(grid: PeriodicGrid, v: Vec<f64>) -> SpectralField {
    SpectralField::from_values(grid, v).expect("grid length")
}

impl Evolving for LayeredState {
    fn fields(&self) -> Vec<&SpectralField> {
        self.offset.iter().chain(&self.stretch).chain(&self.density).collect()
    }

    fn with_fields(&self, fields: Vec<Vec<f64>>, time: f64) -> Self {
        let l = self.layers.len();
        let grid = self.grid();
        let mut it = fields.into_iter().map(|v| rebuild(grid, v));
        let offset = it.by_ref().take(l).collect();
        let stretch = it.by_ref().take(l).collect();
        let density = it.collect();
        Self {
            offset,
            stretch,
            density,
            time,
            ..self.clone_shell()
        }
    }

    fn time(&self) -> f64 {
        self.time
    }

    fn rate(&self, cfg: &EvolutionConfig) -> Result<Rate, DynamicsError> {
        let kcfg = cfg.kernel_config(self);
        let r = rhs(self, &kcfg, cfg.filter_threshold)?;
        Ok(Rate {
            fields: r.d_offset.into_iter().chain(r.d_stretch).chain(r.d_density).collect(),
            max_speed: r.max_speed,
        })
    }

    fn finish_step(&mut self, cfg: &EvolutionConfig) -> Result<(), DynamicsError> {
        let filter = |f: &mut Vec<SpectralField>| -> Result<(), SpectralError> {
            for x in f.iter_mut() {
                *x = x.krasny_filter(cfg.filter_threshold)?;
            }
            Ok(())
        };
        filter(&mut self.offset)?;
        filter(&mut self.stretch)?;
        filter(&mut self.density)?;
        if cfg.project_admissible {
            project_admissible(self);
        }
        Ok(())
    }

    fn max_offset(&self) -> f64 {
        self.offset.iter().map(SpectralField::sup_norm).fold(0.0, f64::max)
    }
}

impl LayeredState {
    fn clone_shell(&self) -> Self {
        Self {
            curve: Arc::clone(&self.curve),
            samples: Arc::clone(&self.samples),
            epsilon: self.epsilon,
            layers: self.layers.clone(),
            offset: Vec::new(),
            stretch: Vec::new(),
            density: Vec::new(),
            time: self.time,
        }
    }
}

impl Evolving for ReferenceState {
    fn fields(&self) -> Vec<&SpectralField> {
        vec![&self.nu0, &self.varpi0]
    }

    fn with_fields(&self, fields: Vec<Vec<f64>>, time: f64) -> Self {
        let grid = self.grid();
        let mut it = fields.into_iter();
        Self {
            curve: Arc::clone(&self.curve),
            samples: Arc::clone(&self.samples),
            nu0: rebuild(grid, it.next().expect("nu0")),
            varpi0: rebuild(grid, it.next().expect("varpi0")),
            time,
        }
    }

    fn time(&self) -> f64 {
        self.time
    }

    fn rate(&self, cfg: &EvolutionConfig) -> Result<Rate, DynamicsError> {
        let r = reference_rhs(self, cfg.pv_rule, cfg.filter_threshold)?;
        Ok(Rate {
            fields: vec![r.d_nu, r.d_varpi],
            max_speed: r.max_speed,
        })
    }

    fn finish_step(&mut self, cfg: &EvolutionConfig) -> Result<(), DynamicsError> {
        self.nu0 = self.nu0.krasny_filter(cfg.filter_threshold)?;
        self.varpi0 = self.varpi0.krasny_filter(cfg.filter_threshold)?;
        Ok(())
    }

    fn max_offset(&self) -> f64 {
        self.nu0.sup_norm()
    }
}

fn axpy_fields<S: Evolving>(base: &S, rates: &[(&Rate, f64)], time: f64) -> S {
    let fields = base
        .fields()
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let mut v = f.values().to_vec();
            for (rate, c) in rates {
                for (x, d) in v.iter_mut().zip(&rate.fields[k]) {
                    *x += c * d;
                }
            }
            v
        })
        .collect();
    base.with_fields(fields, time)
}

/// One classical RK4 step with `rate` as the right-hand side. Returns the
/// new state and the stage-one rate.
pub fn rk4_step<S: Evolving>(
    state: &S,
    dt: f64,
    rate: impl Fn(&S) -> Result<Rate, DynamicsError>,
) -> Result<(S, Rate), DynamicsError> {
    let k1 = rate(state)?;
    if dt == 0.0 {
        return Ok((state.clone(), k1));
    }
    let t = state.time();
    let y2 = axpy_fields(state, &[(&k1, 0.5 * dt)], t + 0.5 * dt);
    let k2 = rate(&y2)?;
    let y3 = axpy_fields(state, &[(&k2, 0.5 * dt)], t + 0.5 * dt);
    let k3 = rate(&y3)?;
    let y4 = axpy_fields(state, &[(&k3, dt)], t + dt);
    let k4 = rate(&y4)?;
    let next = axpy_fields(
        state,
        &[(&k1, dt / 6.0), (&k2, dt / 3.0), (&k3, dt / 3.0), (&k4, dt / 6.0)],
        t + dt,
    );
    Ok((next, k1))
}

pub const DEFAULT_FILTER_THRESHOLD: f64 = 1e-12;
pub const DEFAULT_CFL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_filter")]
    pub filter_threshold: f64,
    /// `dt ≤ cfl·Δs/max|U|`.
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "default_speed_cap")]
    pub max_speed_cap: f64,
    #[serde(default = "default_residual_cap")]
    pub residual_cap: f64,
    #[serde(default)]
    pub project_admissible: bool,
    /// Keep every `snapshot_every`-th state (0: only the first and last).
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub pv_rule: PvRule,
    /// Minimum `N·ε·Δl`.
    #[serde(default = "default_resolution")]
    pub resolution_factor: f64,
}

fn default_filter() -> f64 {
    DEFAULT_FILTER_THRESHOLD
}
fn default_cfl() -> f64 {
    DEFAULT_CFL
}
fn default_speed_cap() -> f64 {
    1e3
}
fn default_residual_cap() -> f64 {
    1e-2
}
fn default_snapshot_every() -> usize {
    1
}
fn default_resolution() -> f64 {
    crate::kernels::DEFAULT_RESOLUTION_FACTOR
}

impl EvolutionConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            filter_threshold: DEFAULT_FILTER_THRESHOLD,
            cfl: DEFAULT_CFL,
            max_speed_cap: default_speed_cap(),
            residual_cap: default_residual_cap(),
            project_admissible: false,
            snapshot_every: 1,
            pv_rule: PvRule::AlternatePoint,
            resolution_factor: default_resolution(),
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: &str| Err(DynamicsError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive and finite");
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad("t_end must be nonnegative and finite");
        }
        if !(self.filter_threshold >= 0.0) {
            return bad("filter_threshold must be nonnegative");
        }
        if !(self.cfl > 0.0) {
            return bad("cfl must be positive");
        }
        if !(self.max_speed_cap > 0.0 && self.residual_cap > 0.0) {
            return bad("guard caps must be positive");
        }
        if !(self.resolution_factor >= 0.0) {
            return bad("resolution_factor must be nonnegative");
        }
        Ok(())
    }

    pub fn kernel_config(&self, w: &LayeredState) -> KernelEvalConfig {
        KernelEvalConfig {
            n_quad: w.grid().len(),
            pv_rule: self.pv_rule,
            epsilon: w.epsilon,
            resolution_factor: self.resolution_factor,
            smallness_bound: crate::kernels::DEFAULT_SMALLNESS_BOUND,
        }
    }

    /// Number of steps and the uniform step that go from `start` exactly to
    /// `t_end`.
    pub fn schedule(&self, start: f64) -> (usize, f64) {
        let span = self.t_end - start;
        if span <= 0.0 {
            return (0, self.dt);
        }
        let n = (span / self.dt - 1e-9).ceil().max(1.0) as usize;
        (n, span / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub max_speed: f64,
    /// Zero for single-sheet states.
    pub admissibility_residual: f64,
    /// Largest per-field circulation drift relative to the initial state.
    pub circulation_drift: f64,
    pub total_circulation: f64,
    /// Smallest resolved analyticity radius among offset fields.
    pub rho_offset: Option<f64>,
    /// Smallest resolved analyticity radius among density fields.
    pub rho_density: Option<f64>,
    pub max_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HaltReason {
    SpeedCap { time: f64, max_speed: f64, cap: f64 },
    ResidualCap { time: f64, residual: f64, cap: f64 },
    GraphMargin { time: f64, max_offset: f64, tube_radius: f64 },
    Cfl { time: f64, dt: f64, bound: f64 },
    Error { time: f64, message: String },
}

#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub snapshots: Vec<S>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub halt: Option<HaltReason>,
}

impl<S: Evolving> Trajectory<S> {
    pub fn last(&self) -> &S {
        self.snapshots.last().expect("trajectory holds the initial state")
    }
}

/// Quantities the integrator monitors per state type.
pub trait Monitored: Evolving {
    fn residual(&self) -> f64;
    fn circulations(&self) -> Vec<f64>;
    fn total(&self) -> f64;
    fn offset_fields(&self) -> Vec<&SpectralField>;
    fn density_fields(&self) -> Vec<&SpectralField>;
    fn grid(&self) -> PeriodicGrid;
    fn curve(&self) -> &CurveSpec;
}

impl Monitored for LayeredState {
    fn residual(&self) -> f64 {
        admissibility_residual(self)
    }
    fn circulations(&self) -> Vec<f64> {
        LayeredState::circulations(self)
    }
    fn total(&self) -> f64 {
        self.total_circulation()
    }
    fn offset_fields(&self) -> Vec<&SpectralField> {
        self.offset.iter().collect()
    }
    fn density_fields(&self) -> Vec<&SpectralField> {
        self.active_layers().into_iter().map(|l| &self.density[l]).collect()
    }
    fn grid(&self) -> PeriodicGrid {
        LayeredState::grid(self)
    }
    fn curve(&self) -> &CurveSpec {
        &self.curve
    }
}

impl Monitored for ReferenceState {
    fn residual(&self) -> f64 {
        0.0
    }
    fn circulations(&self) -> Vec<f64> {
        vec![self.circulation()]
    }
    fn total(&self) -> f64 {
        self.circulation()
    }
    fn offset_fields(&self) -> Vec<&SpectralField> {
        vec![&self.nu0]
    }
    fn density_fields(&self) -> Vec<&SpectralField> {
        vec![&self.varpi0]
    }
    fn grid(&self) -> PeriodicGrid {
        ReferenceState::grid(self)
    }
    fn curve(&self) -> &CurveSpec {
        &self.curve
    }
}

fn min_radius<'a>(fields: impl Iterator<Item = &'a SpectralField>) -> Option<f64> {
    let fit = RadiusFit::default();
    fields
        .filter_map(|f| match f.estimate_analyticity_radius(&fit) {
            AnalyticityRadius::Resolved(r) => Some(r),
            _ => None,
        })
        .reduce(f64::min)
}

fn diagnose<S: Monitored>(state: &S, step: usize, max_speed: f64, initial: &[f64]) -> StepDiagnostics {
    let circ = state.circulations();
    StepDiagnostics {
        step,
        time: state.time(),
        max_speed,
        admissibility_residual: state.residual(),
        circulation_drift: circ
            .iter()
            .zip(initial)
            .map(|(c, c0)| (c - c0).abs())
            .fold(0.0, f64::max),
        total_circulation: state.total(),
        rho_offset: min_radius(state.offset_fields().into_iter()),
        rho_density: min_radius(state.density_fields().into_iter()),
        max_offset: state.max_offset(),
    }
}

/// Advances `state` to the absolute time `cfg.t_end`. Configuration
/// problems (including an end time before the state's time, or a
/// step above the CFL bound at the initial state) are errors; guards that
/// trip during the run end it early with `halt` set.
pub fn integrate<S: Monitored>(state: S, cfg: &EvolutionConfig) -> Result<Trajectory<S>, DynamicsError> {
    cfg.validate()?;
    let tube_radius = max_tube_radius(state.curve());
    let spacing = state.grid().spacing();
    if cfg.t_end < state.time() {
        return Err(DynamicsError::InvalidConfig(format!(
            "t_end = {} precedes the state time {}",
            cfg.t_end,
            state.time()
        )));
    }
    let (n_steps, dt) = cfg.schedule(state.time());
    let rate = |s: &S| s.rate(cfg);

    let first = rate(&state)?;
    let bound = cfg.cfl * spacing / first.max_speed.max(f64::MIN_POSITIVE);
    if n_steps > 0 && dt > bound {
        return Err(DynamicsError::Cfl {
            dt,
            bound,
            max_speed: first.max_speed,
        });
    }

    let initial = state.circulations();
    let mut diagnostics = vec![diagnose(&state, 0, first.max_speed, &initial)];
    let mut snapshots = vec![state.clone()];
    let mut current = state;
    let mut halt = None;
    for step in 1..=n_steps {
        let stepped = rk4_step(&current, dt, rate);
        let (mut next, k1) = match stepped {
            Ok(v) => v,
            Err(e) => {
                halt = Some(HaltReason::Error {
                    time: current.time(),
                    message: e.to_string(),
                });
                break;
            }
        };
        let bound = cfg.cfl * spacing / k1.max_speed.max(f64::MIN_POSITIVE);
        if dt > bound {
            halt = Some(HaltReason::Cfl {
                time: current.time(),
                dt,
                bound,
            });
            break;
        }
        if k1.max_speed > cfg.max_speed_cap {
            halt = Some(HaltReason::SpeedCap {
                time: current.time(),
                max_speed: k1.max_speed,
                cap: cfg.max_speed_cap,
            });
            break;
        }
        if let Err(e) = next.finish_step(cfg) {
            halt = Some(HaltReason::Error {
                time: next.time(),
                message: e.to_string(),
            });
            break;
        }
        if step == n_steps {
            next.set_time(cfg.t_end);
        }
        let d = diagnose(&next, step, k1.max_speed, &initial);
        let residual = d.admissibility_residual;
        let max_offset = d.max_offset;
        let keep = step == n_steps || (cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0);
        if keep {
            snapshots.push(next.clone());
        }
        diagnostics.push(d);
        let time = next.time();
        current = next;
        if residual > cfg.residual_cap {
            halt = Some(HaltReason::ResidualCap {
                time,
                residual,
                cap: cfg.residual_cap,
            });
        } else if max_offset >= tube_radius {
            halt = Some(HaltReason::GraphMargin {
                time,
                max_offset,
                tube_radius,
            });
        }
        if halt.is_some() {
            if !keep {
                snapshots.push(current.clone());
            }
            break;
        }
    }
    Ok(Trajectory {
        snapshots,
        diagnostics,
        halt,
    })
}

trait SetTime {
    fn set_time(&mut self, t: f64);
}

impl<S: Evolving> SetTime for S {
    fn set_time(&mut self, t: f64) {
        let fields = self.fields().iter().map(|f| f.values().to_vec()).collect();
        *self = self.with_fields(fields, t);
    }
}
