//! Biot–Savart and Birkhoff–Rott evaluation on layered sheets.
//!
//! All singular integrals are periodic trapezoid sums. The self-interaction
//! of a curve uses the alternate-point rule: sources sit on the grid shifted
//! by half a spacing, with positions and densities obtained by spectral
//! interpolation. Interactions between distinct layers use plain trapezoid
//! sums on the collocation nodes.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::LayeredState;
use crate::geometry::{perp, CurveSamples, CurveSpec, Vec2};
use crate::spectral::{torus_distance, PeriodicGrid, SpectralError, SpectralField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("Biot–Savart kernel evaluated at the origin")]
    ZeroInput,
    #[error("complexified modulus undefined: Re(z1² + z2²) = {0} ≤ 0")]
    BranchCut(f64),
    #[error("curve points nearly coincide: target node {target}, source node {source_node}, distance {distance:e}")]
    NearCoincidence {
        target: usize,
        source_node: usize,
        distance: f64,
    },
    #[error("layers cross: 1 + w3 = {value} at layer {layer}, node {node}")]
    LayerCrossing {
        layer: usize,
        node: usize,
        value: f64,
    },
    #[error("quadrature uses {n_quad} nodes but the state grid has {grid}")]
    GridMismatch { n_quad: usize, grid: usize },
    #[error("resolution guard violated: N·ε·Δl = {value} < {required}")]
    Resolution { value: f64, required: f64 },
    #[error("layer index {index} out of range ({len} layers)")]
    LayerIndex { index: usize, len: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// `K(x) = x^⊥ / (2π|x|²)`.
pub fn biot_savart(x: Vec2) -> Result<Vec2, KernelError> {
    let r2 = x[0] * x[0] + x[1] * x[1];
    if r2 == 0.0 {
        return Err(KernelError::ZeroInput);
    }
    let c = 1.0 / (2.0 * PI * r2);
    Ok([-x[1] * c, x[0] * c])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexVec2 {
    pub z1: Complex64,
    pub z2: Complex64,
}

impl ComplexVec2 {
    pub fn new(z1: Complex64, z2: Complex64) -> Self {
        Self { z1, z2 }
    }

    pub fn real(v: Vec2) -> Self {
        Self::new(v[0].into(), v[1].into())
    }

    /// `z1² + z2²`, the complexified squared modulus.
    pub fn square(&self) -> Complex64 {
        self.z1 * self.z1 + self.z2 * self.z2
    }

    /// Hermitian length `√(|z1|² + |z2|²)`.
    pub fn norm(&self) -> f64 {
        self.z1.norm().hypot(self.z2.norm())
    }
}

/// Principal square root of `z1² + z2²`, defined on `Re > 0`.
pub fn complexified_modulus(z: ComplexVec2) -> Result<Complex64, KernelError> {
    let sq = z.square();
    if sq.re <= 0.0 {
        return Err(KernelError::BranchCut(sq.re));
    }
    Ok(sq.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PvRule {
    #[default]
    AlternatePoint,
    SkipDiagonalTrapezoid,
}

pub const DEFAULT_RESOLUTION_FACTOR: f64 = 1.0;
pub const DEFAULT_SMALLNESS_BOUND: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelEvalConfig {
    pub n_quad: usize,
    #[serde(default)]
    pub pv_rule: PvRule,
    pub epsilon: f64,
    /// Minimum of `N·ε·Δl` (grid points per inter-layer distance).
    #[serde(default = "default_resolution")]
    pub resolution_factor: f64,
    /// Reported, not enforced, bound on `‖w1‖, ‖w2‖, ‖w3‖`.
    #[serde(default = "default_smallness")]
    pub smallness_bound: f64,
}

fn default_resolution() -> f64 {
    DEFAULT_RESOLUTION_FACTOR
}

fn default_smallness() -> f64 {
    DEFAULT_SMALLNESS_BOUND
}

impl KernelEvalConfig {
    pub fn for_state(state: &LayeredState) -> Self {
        Self {
            n_quad: state.grid().len(),
            pv_rule: PvRule::AlternatePoint,
            epsilon: state.epsilon,
            resolution_factor: DEFAULT_RESOLUTION_FACTOR,
            smallness_bound: DEFAULT_SMALLNESS_BOUND,
        }
    }

    pub fn resolution(&self, min_gap: f64) -> f64 {
        self.n_quad as f64 * self.epsilon * min_gap
    }

    pub fn validate(&self, state: &LayeredState) -> Result<(), KernelError> {
        if self.n_quad != state.grid().len() {
            return Err(KernelError::GridMismatch {
                n_quad: self.n_quad,
                grid: state.grid().len(),
            });
        }
        if state.layers.len() > 1 {
            let value = self.resolution(state.layers.min_gap());
            if value < self.resolution_factor {
                return Err(KernelError::Resolution {
                    value,
                    required: self.resolution_factor,
                });
            }
        }
        Ok(())
    }
}

/// `Σ_j dens_j K(x − y_j)` without the `1/2π`; also returns the smallest
/// squared distance and its source index.
#[inline]
fn raw_sum(x: Vec2, src: &[Vec2], dens: &[f64], skip: Option<usize>) -> (Vec2, f64, usize) {
    let mut acc = [0.0, 0.0];
    let mut min_r2 = f64::INFINITY;
    let mut arg = 0;
    for (j, (y, &d)) in src.iter().zip(dens).enumerate() {
        if Some(j) == skip {
            continue;
        }
        let dx = x[0] - y[0];
        let dy = x[1] - y[1];
        let r2 = dx * dx + dy * dy;
        if r2 < min_r2 {
            min_r2 = r2;
            arg = j;
        }
        let c = d / r2;
        acc[0] -= dy * c;
        acc[1] += dx * c;
    }
    (acc, min_r2, arg)
}

/// Source data of one curve: node positions and densities, plus the same on
/// the half-shifted grid.
#[derive(Debug, Clone)]
pub struct SourceCurve {
    pub nodes: Vec<Vec2>,
    pub density: Vec<f64>,
    pub half_nodes: Vec<Vec2>,
    pub half_density: Vec<f64>,
}

impl SourceCurve {
    /// Graph curve `Γ + ν Γ̇^⊥` over exact curve samples.
    pub fn graph(samples: &CurveSamples, nu: &SpectralField, varpi: &SpectralField) -> Self {
        let h = 0.5 * samples.grid.spacing();
        let half_nu = nu.shifted_values(h);
        let nodes = (0..samples.grid.len())
            .map(|j| samples.chart_point(j, nu.values()[j]))
            .collect();
        let half_nodes = (0..samples.grid.len())
            .map(|j| samples.half_chart_point(j, half_nu[j]))
            .collect();
        Self {
            nodes,
            density: varpi.values().to_vec(),
            half_nodes,
            half_density: varpi.shifted_values(h),
        }
    }

    /// Curve known only through its node samples; half nodes are spectral
    /// interpolants of the coordinates.
    pub fn from_points(points: &[Vec2], varpi: &SpectralField) -> Result<Self, KernelError> {
        let grid = varpi.grid();
        if points.len() != grid.len() {
            return Err(SpectralError::LengthMismatch {
                expected: grid.len(),
                got: points.len(),
            }
            .into());
        }
        let h = 0.5 * grid.spacing();
        let xs = SpectralField::from_values(grid, points.iter().map(|p| p[0]).collect())?;
        let ys = SpectralField::from_values(grid, points.iter().map(|p| p[1]).collect())?;
        let hx = xs.shifted_values(h);
        let hy = ys.shifted_values(h);
        Ok(Self {
            nodes: points.to_vec(),
            density: varpi.values().to_vec(),
            half_nodes: hx.into_iter().zip(hy).map(|(a, b)| [a, b]).collect(),
            half_density: varpi.shifted_values(h),
        })
    }

    fn is_silent(&self) -> bool {
        self.density.iter().all(|&d| d == 0.0)
    }

    /// Principal-value self-interaction at node `i` of the same curve.
    fn self_velocity(&self, i: usize, target: Vec2, rule: PvRule) -> Result<Vec2, KernelError> {
        let n = self.nodes.len();
        let delta = 1.0 / n as f64;
        let (acc, min_r2, arg) = match rule {
            PvRule::AlternatePoint => raw_sum(target, &self.half_nodes, &self.half_density, None),
            PvRule::SkipDiagonalTrapezoid => raw_sum(target, &self.nodes, &self.density, Some(i)),
        };
        check_distance(i, arg, min_r2, delta)?;
        let c = delta / (2.0 * PI);
        Ok([acc[0] * c, acc[1] * c])
    }

    /// Smooth interaction with an off-curve target.
    fn far_velocity(&self, i: usize, target: Vec2) -> Result<Vec2, KernelError> {
        let delta = 1.0 / self.nodes.len() as f64;
        let (acc, min_r2, arg) = raw_sum(target, &self.nodes, &self.density, None);
        check_distance(i, arg, min_r2, delta)?;
        let c = delta / (2.0 * PI);
        Ok([acc[0] * c, acc[1] * c])
    }
}

#[inline]
fn check_distance(target: usize, source_node: usize, min_r2: f64, delta: f64) -> Result<(), KernelError> {
    let tol = 1e-3 * delta;
    if min_r2 < tol * tol {
        return Err(KernelError::NearCoincidence {
            target,
            source_node,
            distance: min_r2.sqrt(),
        });
    }
    Ok(())
}

/// Birkhoff–Rott velocity `p.v.∫ K(γ(s) − γ(ς)) ϖ(ς) dς` at every node.
pub fn br_operator(gamma: &[Vec2], varpi: &SpectralField, rule: PvRule) -> Result<Vec<Vec2>, KernelError> {
    let src = SourceCurve::from_points(gamma, varpi)?;
    if src.is_silent() {
        return Ok(vec![[0.0, 0.0]; gamma.len()]);
    }
    (0..gamma.len())
        .into_par_iter()
        .map(|i| src.self_velocity(i, gamma[i], rule))
        .collect()
}

/// Velocity of the single sheet `Γ + ν Γ̇^⊥` with density `ϖ`, on itself.
pub fn k0(nu: &SpectralField, varpi: &SpectralField, curve: &CurveSpec) -> Result<Vec<Vec2>, KernelError> {
    let samples = CurveSamples::new(curve, nu.grid());
    k0_on_samples(&samples, nu, varpi, PvRule::AlternatePoint)
}

pub fn k0_on_samples(
    samples: &CurveSamples,
    nu: &SpectralField,
    varpi: &SpectralField,
    rule: PvRule,
) -> Result<Vec<Vec2>, KernelError> {
    let src = SourceCurve::graph(samples, nu, varpi);
    if src.is_silent() {
        return Ok(vec![[0.0, 0.0]; samples.grid.len()]);
    }
    (0..samples.grid.len())
        .into_par_iter()
        .map(|i| src.self_velocity(i, src.nodes[i], rule))
        .collect()
}

/// Precomputed source curves and layer integrals of a layered state.
pub struct LayeredKernel<'a> {
    state: &'a LayeredState,
    rule: PvRule,
    sources: Vec<Option<SourceCurve>>,
    /// `C_k(s_i) = ∫_{l_0}^{l_k} (1 + w3) dμ`.
    cumulative: Vec<Vec<f64>>,
}

impl<'a> LayeredKernel<'a> {
    pub fn new(state: &'a LayeredState, cfg: &KernelEvalConfig) -> Result<Self, KernelError> {
        cfg.validate(state)?;
        for (layer, w3) in state.stretch.iter().enumerate() {
            if let Some((node, v)) = w3.values().iter().enumerate().find(|(_, v)| 1.0 + **v <= 0.0) {
                return Err(KernelError::LayerCrossing {
                    layer,
                    node,
                    value: 1.0 + v,
                });
            }
        }
        let sources = state
            .offset
            .iter()
            .zip(&state.density)
            .map(|(nu, varpi)| {
                let src = SourceCurve::graph(&state.samples, nu, varpi);
                (!src.is_silent()).then_some(src)
            })
            .collect();
        Ok(Self {
            state,
            rule: cfg.pv_rule,
            sources,
            cumulative: state.cumulative_stretch(),
        })
    }

    fn check_layer(&self, index: usize) -> Result<(), KernelError> {
        let len = self.state.layers.len();
        if index >= len {
            return Err(KernelError::LayerIndex { index, len });
        }
        Ok(())
    }

    /// Target point for source layer `ell` seen from layer `l` at node `i`:
    /// `Γ(s) + (ν_ℓ(s) − ε g(s)) Γ̇^⊥(s)` with `g = ∫_l^ℓ (1 + w3) dμ`.
    pub fn target(&self, l: usize, ell: usize, i: usize) -> Vec2 {
        let n = if l == ell {
            self.state.offset[l].values()[i]
        } else {
            let g = self.cumulative[ell][i] - self.cumulative[l][i];
            self.state.offset[ell].values()[i] - self.state.epsilon * g
        };
        self.state.samples.chart_point(i, n)
    }

    fn pair_at(&self, l: usize, ell: usize, i: usize) -> Result<Vec2, KernelError> {
        let Some(src) = &self.sources[ell] else {
            return Ok([0.0, 0.0]);
        };
        let x = self.target(l, ell, i);
        if l == ell {
            src.self_velocity(i, x, self.rule)
        } else {
            src.far_velocity(i, x)
        }
    }

    /// `K_ε` contribution of source layer `ell` at target layer `l`.
    pub fn pair(&self, l: usize, ell: usize) -> Result<Vec<Vec2>, KernelError> {
        self.check_layer(l)?;
        self.check_layer(ell)?;
        (0..self.state.grid().len())
            .into_par_iter()
            .map(|i| self.pair_at(l, ell, i))
            .collect()
    }

    fn velocity_at(&self, l: usize, i: usize) -> Result<Vec2, KernelError> {
        let mut u = [0.0, 0.0];
        for ell in 0..self.sources.len() {
            if self.sources[ell].is_none() {
                continue;
            }
            let w = self.state.layers.weights[ell];
            let v = self.pair_at(l, ell, i)?;
            u[0] += w * v[0];
            u[1] += w * v[1];
        }
        Ok(u)
    }

    /// `U_ε(l, ·) = Σ_ℓ w_ℓ K_ε(l, ℓ)`.
    pub fn velocity(&self, l: usize) -> Result<Vec<Vec2>, KernelError> {
        self.check_layer(l)?;
        (0..self.state.grid().len())
            .into_par_iter()
            .map(|i| self.velocity_at(l, i))
            .collect()
    }

    /// Velocity at every layer, indexed `[layer][node]`.
    pub fn velocity_all(&self) -> Result<Vec<Vec<Vec2>>, KernelError> {
        let n = self.state.grid().len();
        let flat: Vec<Vec2> = (0..self.state.layers.len() * n)
            .into_par_iter()
            .map(|k| self.velocity_at(k / n, k % n))
            .collect::<Result<_, _>>()?;
        Ok(flat.chunks(n).map(<[Vec2]>::to_vec).collect())
    }
}

pub fn k_eps(w: &LayeredState, l: usize, ell: usize, cfg: &KernelEvalConfig) -> Result<Vec<Vec2>, KernelError> {
    LayeredKernel::new(w, cfg)?.pair(l, ell)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundSample {
    pub s: f64,
    pub sigma: f64,
    pub beta: f64,
    pub l: f64,
    pub ell: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallnessReport {
    pub sup_w1: f64,
    pub sup_w2: f64,
    pub sup_w3: f64,
    pub bound: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelBoundReport {
    pub samples: usize,
    pub min_ratio: f64,
    pub argmin: BoundSample,
    /// Minimum ratio over the shared `(s, ς, l, ℓ)` sample at each `β`.
    pub per_beta: Vec<(f64, f64)>,
    pub smallness: SmallnessReport,
}

pub fn smallness_report(w: &LayeredState, bound: f64) -> SmallnessReport {
    let sup = |fields: &mut dyn Iterator<Item = f64>| fields.fold(0.0, f64::max);
    let sup_w1 = sup(&mut w.offset.iter().map(SpectralField::sup_norm));
    let sup_w2 = sup(&mut w.offset.iter().map(|f| f.derivative().sup_norm()));
    let sup_w3 = sup(&mut w.stretch.iter().map(SpectralField::sup_norm));
    SmallnessReport {
        sup_w1,
        sup_w2,
        sup_w3,
        bound,
        within: sup_w1 < bound && sup_w2 < bound && sup_w3 < bound,
    }
}

/// Samples `Re|d_{l,ℓ}(s+iβ, ς+iβ)|²_ℂ / (|s−ς|² + ε²|l−ℓ|²)` where
/// `d = ϝ_ℓ(s) − ϝ_ℓ(ς) − ε g(s) Γ̇^⊥(s)`, `ϝ_ℓ = Γ + ν_ℓ Γ̇^⊥` and
/// `g = ∫_l^ℓ (1 + w3) dμ`, all continued into the strip.
///
/// `n_tuples` parameter tuples are drawn once and evaluated at every `β` in
/// `beta_grid`.
pub fn kernel_lower_bound_check(
    w: &LayeredState,
    cfg: &KernelEvalConfig,
    beta_grid: &[f64],
    n_tuples: usize,
    seed: u64,
) -> Result<KernelBoundReport, KernelError> {
    cfg.validate(w)?;
    let beta_max = beta_grid.iter().fold(0.0_f64, |m, b| m.max(b.abs()));
    for f in w.offset.iter().chain(&w.stretch) {
        f.shift_to_strip(beta_max)?;
        f.shift_to_strip(-beta_max)?;
    }
    let layers = &w.layers;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tuples = Vec::with_capacity(n_tuples);
    while tuples.len() < n_tuples {
        let s: f64 = rng.gen();
        let sigma: f64 = rng.gen();
        let l = rng.gen_range(0..layers.len());
        let ell = rng.gen_range(0..layers.len());
        if l == ell && torus_distance(s, sigma) < 1e-9 {
            continue;
        }
        tuples.push((s, sigma, l, ell));
    }

    let eps = w.epsilon;
    let curve = &w.curve;
    // ∫_{l_0}^{l_k}(1 + w3) under the trapezoid, continued to complex s.
    let cumulative = |k: usize, z: Complex64| -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for m in 0..k {
            let h = layers.nodes[m + 1] - layers.nodes[m];
            acc += (w.stretch[m].eval_complex(z) + w.stretch[m + 1].eval_complex(z) + 2.0) * (0.5 * h);
        }
        acc
    };
    let graph = |ell: usize, z: Complex64| -> [Complex64; 2] {
        let p = curve.point_complex(z);
        let t = curve.tangent_complex(z);
        let nu = w.offset[ell].eval_complex(z);
        [p[0] - nu * t[1], p[1] + nu * t[0]]
    };

    let mut per_beta = Vec::with_capacity(beta_grid.len());
    let mut best = BoundSample {
        s: 0.0,
        sigma: 0.0,
        beta: 0.0,
        l: 0.0,
        ell: 0.0,
        ratio: f64::INFINITY,
    };
    for &beta in beta_grid {
        let results: Vec<BoundSample> = tuples
            .par_iter()
            .map(|&(s, sigma, l, ell)| {
                let zs = Complex64::new(s, beta);
                let zt = Complex64::new(sigma, beta);
                let a = graph(ell, zs);
                let b = graph(ell, zt);
                let g = cumulative(ell, zs) - cumulative(l, zs);
                let t = curve.tangent_complex(zs);
                let d = ComplexVec2::new(
                    a[0] - b[0] + eps * g * t[1],
                    a[1] - b[1] - eps * g * t[0],
                );
                let dl = layers.nodes[l] - layers.nodes[ell];
                let denom = torus_distance(s, sigma).powi(2) + eps * eps * dl * dl;
                BoundSample {
                    s,
                    sigma,
                    beta,
                    l: layers.nodes[l],
                    ell: layers.nodes[ell],
                    ratio: d.square().re / denom,
                }
            })
            .collect();
        let local = results
            .into_iter()
            .fold(None::<BoundSample>, |m, x| match m {
                Some(m) if m.ratio <= x.ratio => Some(m),
                _ => Some(x),
            })
            .expect("non-empty sample");
        per_beta.push((beta, local.ratio));
        if local.ratio < best.ratio {
            best = local;
        }
    }
    Ok(KernelBoundReport {
        samples: tuples.len() * beta_grid.len(),
        min_ratio: best.ratio,
        argmin: best,
        per_beta,
        smallness: smallness_report(w, cfg.smallness_bound),
    })
}

/// Points of the graph curve `Γ + ν Γ̇^⊥` on the grid of `nu`.
pub fn graph_points(samples: &CurveSamples, nu: &SpectralField) -> Vec<Vec2> {
    (0..samples.grid.len())
        .map(|j| samples.chart_point(j, nu.values()[j]))
        .collect()
}

/// Unit-length circle samples `(R cos 2πs, R sin 2πs)` with `R = 1/2π`.
pub fn circle_points(grid: PeriodicGrid) -> Vec<Vec2> {
    let r = 1.0 / (2.0 * PI);
    grid.nodes()
        .map(|s| [r * (2.0 * PI * s).cos(), r * (2.0 * PI * s).sin()])
        .collect()
}

/// Normal and tangential parts of `u` against the unit frame of a curve.
pub fn split_tangential(u: Vec2, tangent: Vec2) -> (f64, f64) {
    let len = tangent[0].hypot(tangent[1]);
    let t = [tangent[0] / len, tangent[1] / len];
    let nrm = perp(t);
    (u[0] * t[0] + u[1] * t[1], u[0] * nrm[0] + u[1] * nrm[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_initial_state, LayerQuadrature};
    use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest};
    use std::sync::Arc;

    fn grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(n).unwrap()
    }

    #[test]
    fn biot_savart_values() {
        let u = biot_savart([1.0, 0.0]).unwrap();
        assert_eq!(u, [0.0, 1.0 / (2.0 * PI)]);
        let v = biot_savart([0.0, 2.0]).unwrap();
        assert!((v[0] + 1.0 / (4.0 * PI)).abs() < 1e-16 && v[1] == 0.0);
        assert_eq!(biot_savart([0.0, 0.0]), Err(KernelError::ZeroInput));
    }

    #[test]
    fn complexified_modulus_values() {
        let one = complexified_modulus(ComplexVec2::real([1.0, 0.0])).unwrap();
        assert!((one - 1.0).norm() < 1e-16);
        let z = ComplexVec2::new(Complex64::new(0.0, 0.1), 1.0.into());
        let m = complexified_modulus(z).unwrap();
        assert!((m.re - 0.99_f64.sqrt()).abs() < 1e-15 && m.im.abs() < 1e-16);
        let bad = ComplexVec2::new(Complex64::new(0.0, 1.0), 0.5.into());
        assert!(matches!(complexified_modulus(bad), Err(KernelError::BranchCut(_))));
    }

    #[test]
    fn modulus_bound_on_many_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 100_000 {
            let z = ComplexVec2::new(
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            );
            if let Ok(m) = complexified_modulus(z) {
                assert!(m.norm() <= z.norm() * (1.0 + 1e-14));
                checked += 1;
            }
        }
    }

    proptest! {
        #[test]
        fn biot_savart_is_odd(x in -10.0f64..10.0, y in -10.0f64..10.0) {
            prop_assume!(x * x + y * y > 1e-8);
            let a = biot_savart([x, y]).unwrap();
            let b = biot_savart([-x, -y]).unwrap();
            prop_assert_eq!(a, [-b[0], -b[1]]);
        }

        #[test]
        fn real_modulus_is_euclidean(x in -10.0f64..10.0, y in -10.0f64..10.0) {
            prop_assume!(x * x + y * y > 1e-8);
            let m = complexified_modulus(ComplexVec2::real([x, y])).unwrap();
            prop_assert!((m.re - x.hypot(y)).abs() < 1e-12 * x.hypot(y) && m.im == 0.0);
        }
    }

    #[test]
    fn br_circle_uniform_density() {
        let g = grid(256);
        let pts = circle_points(g);
        let u = br_operator(&pts, &SpectralField::constant(g, 1.0), PvRule::AlternatePoint).unwrap();
        for (j, v) in u.iter().enumerate() {
            let th = 2.0 * PI * g.node(j);
            let (ut, un) = split_tangential(*v, [-th.sin(), th.cos()]);
            assert!((ut - 0.5).abs() < 1e-10 && un.abs() < 1e-10, "{ut} {un}");
        }
        let zero = br_operator(&pts, &SpectralField::zeros(g), PvRule::AlternatePoint).unwrap();
        assert!(zero.iter().all(|v| *v == [0.0, 0.0]));
    }

    fn perturbed_circle_points(g: PeriodicGrid) -> Vec<Vec2> {
        g.nodes()
            .map(|s| {
                let r = (1.0 + 0.1 * (4.0 * PI * s).cos()) / (2.0 * PI);
                [r * (2.0 * PI * s).cos(), r * (2.0 * PI * s).sin()]
            })
            .collect()
    }

    #[test]
    fn br_self_convergence() {
        let density = |s: f64| 1.0 + 0.2 * (2.0 * PI * s).sin();
        let coarse_g = grid(64);
        let fine_g = grid(256);
        let coarse = br_operator(
            &perturbed_circle_points(coarse_g),
            &SpectralField::from_fn(coarse_g, density),
            PvRule::AlternatePoint,
        )
        .unwrap();
        let fine = br_operator(
            &perturbed_circle_points(fine_g),
            &SpectralField::from_fn(fine_g, density),
            PvRule::AlternatePoint,
        )
        .unwrap();
        for (j, c) in coarse.iter().enumerate() {
            let f = fine[4 * j];
            assert!((c[0] - f[0]).abs() < 1e-8 && (c[1] - f[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn skip_diagonal_rule_is_less_accurate() {
        let g = grid(64);
        let density = SpectralField::from_fn(g, |s| 1.0 + 0.3 * (2.0 * PI * s).cos());
        let pts = perturbed_circle_points(g);
        let fine_g = grid(512);
        let reference = br_operator(
            &perturbed_circle_points(fine_g),
            &SpectralField::from_fn(fine_g, |s| 1.0 + 0.3 * (2.0 * PI * s).cos()),
            PvRule::AlternatePoint,
        )
        .unwrap();
        let err = |u: &[Vec2]| {
            u.iter()
                .enumerate()
                .map(|(j, v)| {
                    let r = reference[8 * j];
                    (v[0] - r[0]).hypot(v[1] - r[1])
                })
                .fold(0.0, f64::max)
        };
        let alt = err(&br_operator(&pts, &density, PvRule::AlternatePoint).unwrap());
        let skip = err(&br_operator(&pts, &density, PvRule::SkipDiagonalTrapezoid).unwrap());
        assert!(alt < 1e-3 * skip, "{alt} {skip}");
    }

    #[test]
    fn br_reports_coincident_points() {
        let g = grid(16);
        let mut pts = circle_points(g);
        pts[5] = pts[4];
        let err = br_operator(&pts, &SpectralField::constant(g, 1.0), PvRule::SkipDiagonalTrapezoid);
        assert!(matches!(err, Err(KernelError::NearCoincidence { .. })));
    }

    fn ring_state(n: usize, epsilon: f64, layers: usize, profile: impl Fn(f64) -> f64) -> LayeredState {
        let g = grid(n);
        let quad = LayerQuadrature::midpoint(layers);
        let density = quad
            .nodes
            .iter()
            .map(|&l| SpectralField::constant(g, profile(l)))
            .collect();
        build_initial_state(
            Arc::new(CurveSpec::unit_circle()),
            &SpectralField::zeros(g),
            density,
            epsilon,
            quad,
        )
        .unwrap()
    }

    #[test]
    fn nested_rings_dichotomy() {
        let w = ring_state(256, 0.05, 4, |l| if l.abs() < 0.5 { 1.0 } else { 0.0 });
        let cfg = KernelEvalConfig::for_state(&w);
        let kernel = LayeredKernel::new(&w, &cfg).unwrap();
        let r0 = 1.0 / (2.0 * PI);
        // Layers at l = −0.25 (outer) and 0.25 (inner).
        let (outer, inner) = (1, 2);
        let inside = kernel.pair(inner, outer).unwrap();
        let outside = kernel.pair(outer, inner).unwrap();
        let r_tgt = r0 - w.offset[outer].values()[0];
        for j in 0..256 {
            let th = 2.0 * PI * j as f64 / 256.0;
            let t = [-th.sin(), th.cos()];
            let (ut, un) = split_tangential(inside[j], t);
            assert!(ut.abs() < 1e-9 && un.abs() < 1e-9, "{ut} {un}");
            let (ut, un) = split_tangential(outside[j], t);
            assert!((ut - 1.0 / (2.0 * PI * r_tgt)).abs() < 1e-9 && un.abs() < 1e-9);
        }
    }

    #[test]
    fn diagonal_pair_matches_br_operator() {
        let w = ring_state(128, 0.05, 8, |l| if l.abs() < 0.5 { 1.0 } else { 0.0 });
        let cfg = KernelEvalConfig::for_state(&w);
        let diag = k_eps(&w, 3, 3, &cfg).unwrap();
        let pts = graph_points(&w.samples, &w.offset[3]);
        let br = br_operator(&pts, &w.density[3], PvRule::AlternatePoint).unwrap();
        for (a, b) in diag.iter().zip(&br) {
            assert!((a[0] - b[0]).abs() < 1e-10 && (a[1] - b[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn k0_circle_and_packaging() {
        let g = grid(128);
        let curve = CurveSpec::unit_circle();
        let u = k0(&SpectralField::zeros(g), &SpectralField::constant(g, 1.0), &curve).unwrap();
        assert!(u[0][0].abs() < 1e-12 && (u[0][1] - 0.5).abs() < 1e-12);
        let zero = k0(&SpectralField::zeros(g), &SpectralField::zeros(g), &curve).unwrap();
        assert!(zero.iter().all(|v| *v == [0.0, 0.0]));

        let nu = SpectralField::from_fn(g, |s| 0.01 * (2.0 * PI * s).cos());
        let varpi = SpectralField::from_fn(g, |s| 1.0 + 0.1 * (2.0 * PI * s).cos());
        let samples = CurveSamples::new(&curve, g);
        let a = k0(&nu, &varpi, &curve).unwrap();
        let b = br_operator(&graph_points(&samples, &nu), &varpi, PvRule::AlternatePoint).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x[0] - y[0]).abs() < 1e-12 && (x[1] - y[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn resolution_guard_and_grid_mismatch() {
        let w = ring_state(16, 0.05, 8, |l| if l.abs() < 0.5 { 1.0 } else { 0.0 });
        let cfg = KernelEvalConfig::for_state(&w);
        assert!(matches!(k_eps(&w, 0, 1, &cfg), Err(KernelError::Resolution { .. })));
        let bad = KernelEvalConfig { n_quad: 32, ..cfg };
        assert!(matches!(bad.validate(&w), Err(KernelError::GridMismatch { .. })));
    }

    #[test]
    fn layer_crossing_reported() {
        let mut w = ring_state(128, 0.05, 8, |l| if l.abs() < 0.5 { 1.0 } else { 0.0 });
        let mut v = w.stretch[2].values().to_vec();
        v[3] = -1.5;
        w.stretch[2] = SpectralField::from_values(w.grid(), v).unwrap();
        let cfg = KernelEvalConfig::for_state(&w);
        assert!(matches!(
            k_eps(&w, 0, 1, &cfg),
            Err(KernelError::LayerCrossing { layer: 2, node: 3, .. })
        ));
    }

    #[test]
    fn lower_bound_positive_on_rings() {
        let w = ring_state(128, 0.04, 8, |l| if l.abs() < 0.5 { 1.0 } else { 0.0 });
        let cfg = KernelEvalConfig::for_state(&w);
        let report = kernel_lower_bound_check(&w, &cfg, &[0.0], 500, 1).unwrap();
        assert!(report.min_ratio > 0.0);
        assert_eq!(report.samples, 500);
        assert!(report.smallness.within);
    }

    #[test]
    fn lower_bound_decreases_with_beta() {
        let g = grid(128);
        let quad = LayerQuadrature::midpoint(8);
        let density = quad
            .nodes
            .iter()
            .map(|&l| {
                let c = if l.abs() < 0.5 { 1.0 } else { 0.0 };
                SpectralField::from_fn(g, |s| c * (1.0 + 0.1 * (2.0 * PI * s).cos()))
            })
            .collect();
        let eta = SpectralField::from_fn(g, |s| 0.3 * (2.0 * PI * s).cos());
        let curve = crate::geometry::reparametrize_arclength(&CurveSpec::ellipse(0.2, 0.14, 0.1)).unwrap();
        let w = build_initial_state(Arc::new(curve), &eta, density, 0.04, quad).unwrap();
        let cfg = KernelEvalConfig::for_state(&w);
        let betas = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05];
        let report = kernel_lower_bound_check(&w, &cfg, &betas, 400, 3).unwrap();
        assert!(report.min_ratio > 0.0);
        for pair in report.per_beta.windows(2) {
            assert!(pair[1].1 <= pair[0].1 * (1.0 + 1e-12), "{:?}", report.per_beta);
        }
    }
}
