//! Closed analytic curves, arclength normalization and the tubular chart
//! `x = Γ(s) + n Γ̇(s)^⊥`.
//!
//! Curves are stored as real trigonometric series per component, which lets
//! every derivative and every complexified evaluation be done exactly.
//! The convention `x^⊥ = (−x₂, x₁)` is used throughout; with a
//! counter-clockwise curve, `Γ̇^⊥` points into the enclosed region, so
//! positive `n` is the inward side.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{forward_modes, symmetric_samples, torus_distance, PeriodicGrid};

pub type Vec2 = [f64; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("tangent vanishes at node {node} (s = {s})")]
    VanishingTangent { node: usize, s: f64 },
    #[error("frame degenerate at s = {s}, n = {n}: |e_s| = {norm} < 1/2")]
    FrameDegenerate { s: f64, n: f64, norm: f64 },
    #[error("point {point:?} is outside the tubular chart: {reason}")]
    OutsideChart { point: Vec2, reason: String },
    #[error("curve has no coefficients")]
    EmptyCurve,
}

#[inline]
pub fn perp(v: Vec2) -> Vec2 {
    [-v[1], v[0]]
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

#[inline]
fn axpy(a: f64, x: Vec2, y: Vec2) -> Vec2 {
    [a * x[0] + y[0], a * x[1] + y[1]]
}

/// `f(s) = Σ_k cos[k]·cos(2πks) + sin[k]·sin(2πks)`; `sin[0]` is ignored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrigSeries {
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl TrigSeries {
    pub fn new(cos: Vec<f64>, sin: Vec<f64>) -> Self {
        Self { cos, sin }
    }

    pub fn degree(&self) -> usize {
        self.cos.len().max(self.sin.len()).saturating_sub(1)
    }

    fn coeff(&self, k: usize) -> (f64, f64) {
        let a = self.cos.get(k).copied().unwrap_or(0.0);
        let b = if k == 0 {
            0.0
        } else {
            self.sin.get(k).copied().unwrap_or(0.0)
        };
        (a, b)
    }

    pub fn eval(&self, s: f64) -> f64 {
        (0..=self.degree())
            .map(|k| {
                let (a, b) = self.coeff(k);
                let w = 2.0 * PI * k as f64 * s;
                a * w.cos() + b * w.sin()
            })
            .sum()
    }

    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        (0..=self.degree())
            .map(|k| {
                let (a, b) = self.coeff(k);
                let w = z * (2.0 * PI * k as f64);
                w.cos() * a + w.sin() * b
            })
            .sum()
    }

    pub fn derivative(&self) -> TrigSeries {
        let m = self.degree() + 1;
        let mut cos = vec![0.0; m];
        let mut sin = vec![0.0; m];
        for k in 1..m {
            let (a, b) = self.coeff(k);
            let w = 2.0 * PI * k as f64;
            cos[k] = b * w;
            sin[k] = -a * w;
        }
        TrigSeries { cos, sin }
    }

    /// Fits the interpolating series to equispaced samples and trims the
    /// trailing coefficients below `1e-15` of the largest one.
    pub fn from_samples(values: &[f64]) -> TrigSeries {
        let n = values.len();
        let modes = forward_modes(values);
        let half = n / 2;
        let mut cos = vec![0.0; half + 1];
        let mut sin = vec![0.0; half + 1];
        cos[0] = modes[0].re;
        for k in 1..half {
            cos[k] = 2.0 * modes[k].re;
            sin[k] = -2.0 * modes[k].im;
        }
        if n % 2 == 0 {
            cos[half] = modes[half].re;
        }
        let scale = cos
            .iter()
            .chain(sin.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut last = half;
        while last > 0 && cos[last].abs() <= 1e-15 * scale && sin[last].abs() <= 1e-15 * scale {
            last -= 1;
        }
        cos.truncate(last + 1);
        sin.truncate(last + 1);
        TrigSeries { cos, sin }
    }

    fn reversed(&self) -> TrigSeries {
        TrigSeries {
            cos: self.cos.clone(),
            sin: self.sin.iter().map(|b| -b).collect(),
        }
    }
}

/// Serialized form of a curve: cosine/sine coefficients per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveDocument {
    pub x: TrigSeries,
    pub y: TrigSeries,
    /// Nominal analyticity half-width of the parametrization.
    #[serde(default = "default_rho0")]
    pub rho0: f64,
}

fn default_rho0() -> f64 {
    0.1
}

/// A closed curve `Γ = (Γ₁, Γ₂)` on `𝕋` with its first three derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSpec {
    x: TrigSeries,
    y: TrigSeries,
    dx: [TrigSeries; 3],
    dy: [TrigSeries; 3],
    length: f64,
    rho0: f64,
}

impl CurveSpec {
    pub fn new(x: TrigSeries, y: TrigSeries, rho0: f64) -> Result<Self, GeometryError> {
        if x.cos.is_empty() && x.sin.is_empty() && y.cos.is_empty() && y.sin.is_empty() {
            return Err(GeometryError::EmptyCurve);
        }
        let d1x = x.derivative();
        let d2x = d1x.derivative();
        let d3x = d2x.derivative();
        let d1y = y.derivative();
        let d2y = d1y.derivative();
        let d3y = d2y.derivative();
        let mut curve = Self {
            x,
            y,
            dx: [d1x, d2x, d3x],
            dy: [d1y, d2y, d3y],
            length: 0.0,
            rho0,
        };
        let m = (16 * curve.degree()).max(256);
        curve.length = (0..m)
            .map(|j| norm(curve.tangent(j as f64 / m as f64)))
            .sum::<f64>()
            / m as f64;
        Ok(curve)
    }

    pub fn from_document(doc: &CurveDocument) -> Result<Self, GeometryError> {
        Self::new(doc.x.clone(), doc.y.clone(), doc.rho0)
    }

    pub fn to_document(&self) -> CurveDocument {
        CurveDocument {
            x: self.x.clone(),
            y: self.y.clone(),
            rho0: self.rho0,
        }
    }

    /// Unit-length, counter-clockwise circle of radius `1/2π` centred at the origin.
    pub fn unit_circle() -> Self {
        let r = 1.0 / (2.0 * PI);
        Self::new(
            TrigSeries::new(vec![0.0, r], vec![]),
            TrigSeries::new(vec![], vec![0.0, r]),
            1.0,
        )
        .expect("non-empty")
    }

    /// Ellipse `(a cos 2πs, b sin 2πs)`, not arclength-parametrized.
    pub fn ellipse(a: f64, b: f64, rho0: f64) -> Self {
        Self::new(
            TrigSeries::new(vec![0.0, a], vec![]),
            TrigSeries::new(vec![], vec![0.0, b]),
            rho0,
        )
        .expect("non-empty")
    }

    /// Samples `x(s_j), y(s_j)` on an `m`-point grid and fits a curve to them.
    pub fn from_samples(xs: &[f64], ys: &[f64], rho0: f64) -> Result<Self, GeometryError> {
        Self::new(TrigSeries::from_samples(xs), TrigSeries::from_samples(ys), rho0)
    }

    pub fn degree(&self) -> usize {
        self.x.degree().max(self.y.degree())
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn point(&self, s: f64) -> Vec2 {
        [self.x.eval(s), self.y.eval(s)]
    }

    /// `Γ̇(s)`.
    pub fn tangent(&self, s: f64) -> Vec2 {
        [self.dx[0].eval(s), self.dy[0].eval(s)]
    }

    /// `Γ̈(s)`.
    pub fn second(&self, s: f64) -> Vec2 {
        [self.dx[1].eval(s), self.dy[1].eval(s)]
    }

    pub fn third(&self, s: f64) -> Vec2 {
        [self.dx[2].eval(s), self.dy[2].eval(s)]
    }

    /// `Γ̇(s)^⊥`, the chart normal.
    pub fn normal(&self, s: f64) -> Vec2 {
        perp(self.tangent(s))
    }

    pub fn point_complex(&self, z: Complex64) -> [Complex64; 2] {
        [self.x.eval_complex(z), self.y.eval_complex(z)]
    }

    pub fn tangent_complex(&self, z: Complex64) -> [Complex64; 2] {
        [self.dx[0].eval_complex(z), self.dy[0].eval_complex(z)]
    }

    /// `½ ∮ (x dy − y dx)`; positive for counter-clockwise curves.
    pub fn signed_area(&self) -> f64 {
        let m = (16 * self.degree()).max(256);
        0.5 * (0..m)
            .map(|j| {
                let s = j as f64 / m as f64;
                let p = self.point(s);
                let t = self.tangent(s);
                p[0] * t[1] - p[1] * t[0]
            })
            .sum::<f64>()
            / m as f64
    }

    pub fn max_curvature(&self) -> f64 {
        let m = (16 * self.degree()).max(1024);
        (0..m)
            .map(|j| {
                let s = j as f64 / m as f64;
                let t = self.tangent(s);
                let a = self.second(s);
                (t[0] * a[1] - t[1] * a[0]).abs() / norm(t).powi(3)
            })
            .fold(0.0, f64::max)
    }

    fn reversed(&self) -> Self {
        Self::new(self.x.reversed(), self.y.reversed(), self.rho0).expect("non-empty")
    }
}

/// Reparametrizes by arclength, rescales to unit length and orients the
/// curve counter-clockwise (so that `Γ̇^⊥` points inside).
///
/// The cumulative arclength is integrated spectrally and inverted by Newton
/// iteration at equispaced targets; the result is re-fitted on that grid.
pub fn reparametrize_arclength(raw: &CurveSpec) -> Result<CurveSpec, GeometryError> {
    let m = (16 * raw.degree()).max(1024).next_power_of_two();
    let speed: Vec<f64> = (0..m).map(|j| norm(raw.tangent(j as f64 / m as f64))).collect();
    let mean_speed = speed.iter().sum::<f64>() / m as f64;
    if let Some((node, _)) = speed
        .iter()
        .enumerate()
        .find(|(_, v)| **v <= 1e-10 * mean_speed.max(f64::MIN_POSITIVE))
    {
        return Err(GeometryError::VanishingTangent {
            node,
            s: node as f64 / m as f64,
        });
    }

    let speed_series = TrigSeries::from_samples(&speed);
    let total = speed_series.cos[0];
    // S(s) = total·s + Σ_k [a_k sin(2πks) − b_k (cos(2πks) − 1)] / 2πk
    let arclength = |s: f64| -> f64 {
        let mut acc = total * s;
        for k in 1..=speed_series.degree() {
            let (a, b) = speed_series.coeff(k);
            let w = 2.0 * PI * k as f64;
            acc += (a * (w * s).sin() - b * ((w * s).cos() - 1.0)) / w;
        }
        acc
    };

    let mut xs = Vec::with_capacity(m);
    let mut ys = Vec::with_capacity(m);
    let mut s = 0.0;
    for j in 0..m {
        let target = total * j as f64 / m as f64;
        if j > 0 {
            s += (target - arclength(s)) / norm(raw.tangent(s));
        }
        for _ in 0..50 {
            let step = (arclength(s) - target) / norm(raw.tangent(s));
            s -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let p = raw.point(s);
        xs.push(p[0] / total);
        ys.push(p[1] / total);
    }

    let curve = CurveSpec::new(
        TrigSeries::from_samples(&xs),
        TrigSeries::from_samples(&ys),
        raw.rho0,
    )?;
    if curve.signed_area() < 0.0 {
        Ok(curve.reversed())
    } else {
        Ok(curve)
    }
}

/// Tangential/normal frame of the chart at `(s, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameSample {
    /// `Γ̇(s) + n Γ̈(s)^⊥`.
    pub e_s: Vec2,
    /// `Γ̇(s)^⊥`, independent of `n`.
    pub e_n: Vec2,
    /// `∂_s (e_s / |e_s|²)` at fixed `n`.
    pub kappa: Vec2,
}

/// Frame from the curve derivatives at one parameter value.
pub fn frame_from_derivatives(
    tangent: Vec2,
    second: Vec2,
    third: Vec2,
    n: f64,
) -> (FrameSample, f64) {
    let e_s = axpy(n, perp(second), tangent);
    let de = axpy(n, perp(third), second);
    let q = dot(e_s, e_s);
    let c = 2.0 * dot(e_s, de) / (q * q);
    let kappa = [de[0] / q - c * e_s[0], de[1] / q - c * e_s[1]];
    (
        FrameSample {
            e_s,
            e_n: perp(tangent),
            kappa,
        },
        q.sqrt(),
    )
}

pub fn frame(curve: &CurveSpec, s: f64, n: f64) -> Result<FrameSample, GeometryError> {
    let (f, len) = frame_from_derivatives(curve.tangent(s), curve.second(s), curve.third(s), n);
    if len < 0.5 {
        return Err(GeometryError::FrameDegenerate { s, n, norm: len });
    }
    Ok(f)
}

/// Curve quantities sampled on a periodic grid and on the half-shifted grid.
#[derive(Debug, Clone)]
pub struct CurveSamples {
    pub grid: PeriodicGrid,
    pub point: Vec<Vec2>,
    pub tangent: Vec<Vec2>,
    pub second: Vec<Vec2>,
    pub third: Vec<Vec2>,
    pub half_point: Vec<Vec2>,
    pub half_tangent: Vec<Vec2>,
}

impl CurveSamples {
    pub fn new(curve: &CurveSpec, grid: PeriodicGrid) -> Self {
        let h = 0.5 * grid.spacing();
        let nodes: Vec<f64> = grid.nodes().collect();
        Self {
            grid,
            point: nodes.iter().map(|&s| curve.point(s)).collect(),
            tangent: nodes.iter().map(|&s| curve.tangent(s)).collect(),
            second: nodes.iter().map(|&s| curve.second(s)).collect(),
            third: nodes.iter().map(|&s| curve.third(s)).collect(),
            half_point: nodes.iter().map(|&s| curve.point(s + h)).collect(),
            half_tangent: nodes.iter().map(|&s| curve.tangent(s + h)).collect(),
        }
    }

    pub fn normal(&self, j: usize) -> Vec2 {
        perp(self.tangent[j])
    }

    pub fn half_normal(&self, j: usize) -> Vec2 {
        perp(self.half_tangent[j])
    }

    /// Chart point `Γ(s_j) + n Γ̇(s_j)^⊥`.
    pub fn chart_point(&self, j: usize, n: f64) -> Vec2 {
        axpy(n, self.normal(j), self.point[j])
    }

    pub fn half_chart_point(&self, j: usize, n: f64) -> Vec2 {
        axpy(n, self.half_normal(j), self.half_point[j])
    }

    pub fn frame(&self, j: usize, n: f64) -> Result<FrameSample, GeometryError> {
        let (f, len) = frame_from_derivatives(self.tangent[j], self.second[j], self.third[j], n);
        if len < 0.5 {
            return Err(GeometryError::FrameDegenerate {
                s: self.grid.node(j),
                n,
                norm: len,
            });
        }
        Ok(f)
    }
}

/// The tubular chart around a curve, valid for `|n| < max_radius`.
#[derive(Debug, Clone)]
pub struct TubularChart {
    pub curve: CurveSpec,
    pub max_radius: f64,
    seeds: Vec<(f64, Vec2)>,
}

const CHART_SEEDS: usize = 512;

impl TubularChart {
    pub fn new(curve: CurveSpec) -> Self {
        let max_radius = max_tube_radius(&curve);
        Self::with_radius(curve, max_radius)
    }

    pub fn with_radius(curve: CurveSpec, max_radius: f64) -> Self {
        let seeds = (0..CHART_SEEDS)
            .map(|j| {
                let s = j as f64 / CHART_SEEDS as f64;
                (s, curve.point(s))
            })
            .collect();
        Self {
            curve,
            max_radius,
            seeds,
        }
    }

    pub fn chart_point(&self, s: f64, n: f64) -> Vec2 {
        axpy(n, self.curve.normal(s), self.curve.point(s))
    }

    /// Inverts the chart by Newton iteration seeded at the nearest sample node.
    pub fn tubular_coordinates(&self, x: Vec2) -> Result<(f64, f64), GeometryError> {
        let outside = |reason: String| GeometryError::OutsideChart { point: x, reason };
        let (mut s, nearest) = self
            .seeds
            .iter()
            .map(|&(s, p)| (s, norm([p[0] - x[0], p[1] - x[1]])))
            .fold((0.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        if nearest > self.max_radius {
            return Err(outside(format!(
                "distance to nearest curve sample {nearest} exceeds R0 = {}",
                self.max_radius
            )));
        }
        let mut n = dot(
            [x[0] - self.curve.point(s)[0], x[1] - self.curve.point(s)[1]],
            self.curve.normal(s),
        );
        let scale = self.curve.length().max(1e-300);
        for _ in 0..50 {
            let p = self.chart_point(s, n);
            let r = [p[0] - x[0], p[1] - x[1]];
            if norm(r) < 1e-12 * scale {
                if n.abs() >= self.max_radius {
                    return Err(outside(format!("|n| = {} ≥ R0 = {}", n.abs(), self.max_radius)));
                }
                return Ok((s.rem_euclid(1.0), n));
            }
            let (f, _) = frame_from_derivatives(
                self.curve.tangent(s),
                self.curve.second(s),
                self.curve.third(s),
                n,
            );
            // J = [e_s | e_n]; solve J·(ds, dn) = r.
            let det = f.e_s[0] * f.e_n[1] - f.e_s[1] * f.e_n[0];
            if det.abs() < 1e-300 {
                break;
            }
            let ds = (r[0] * f.e_n[1] - r[1] * f.e_n[0]) / det;
            let dn = (f.e_s[0] * r[1] - f.e_s[1] * r[0]) / det;
            s -= ds;
            n -= dn;
        }
        Err(outside("Newton iteration did not converge in 50 steps".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfIntersectionCheck {
    pub passed: bool,
    /// Minimum of `Re{ΔΓ₁² + ΔΓ₂²}` over the sampled `(β, s, α)`.
    pub margin: f64,
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Default sampling of [`check_no_self_intersection`].
pub const INTERSECTION_SAMPLES: (usize, usize, usize) = (256, 256, 5);

/// Samples `min Re{[Γ₁(s+iβ)−Γ₁(α+iβ)]² + [Γ₂(s+iβ)−Γ₂(α+iβ)]²}` over
/// `|β| ≤ rho` and parameter separations in `[delta, 1 − delta]`.
pub fn check_no_self_intersection(curve: &CurveSpec, rho: f64, delta: f64) -> SelfIntersectionCheck {
    let (ns, nd, nb) = INTERSECTION_SAMPLES;
    check_no_self_intersection_sampled(curve, rho, delta, ns, nd, nb)
}

pub fn check_no_self_intersection_sampled(
    curve: &CurveSpec,
    rho: f64,
    delta: f64,
    n_s: usize,
    n_sep: usize,
    n_beta: usize,
) -> SelfIntersectionCheck {
    let delta = delta.clamp(0.0, 0.5);
    let mut best = SelfIntersectionCheck {
        passed: false,
        margin: f64::INFINITY,
        s: 0.0,
        alpha: 0.0,
        beta: 0.0,
    };
    let n_sep = n_sep.max(1);
    for beta in symmetric_samples(rho, n_beta) {
        let pts: Vec<[Complex64; 2]> = (0..n_s)
            .map(|j| curve.point_complex(Complex64::new(j as f64 / n_s as f64, beta)))
            .collect();
        for (j, pj) in pts.iter().enumerate() {
            let s = j as f64 / n_s as f64;
            for m in 0..=n_sep {
                let sep = delta + (1.0 - 2.0 * delta) * m as f64 / n_sep as f64;
                let alpha = s + sep;
                let pa = curve.point_complex(Complex64::new(alpha, beta));
                let d0 = pj[0] - pa[0];
                let d1 = pj[1] - pa[1];
                let value = (d0 * d0 + d1 * d1).re;
                if value < best.margin {
                    best = SelfIntersectionCheck {
                        passed: false,
                        margin: value,
                        s,
                        alpha: alpha.rem_euclid(1.0),
                        beta,
                    };
                }
            }
        }
    }
    let scale = curve.length().powi(2);
    best.passed = best.margin > 1e-12 * scale;
    best
}

/// Safe tube radius: `0.9 · min(1/max|curvature|, ½ · shortest bottleneck chord)`.
///
/// Bottleneck chords are strict local minima of `|Γ(s) − Γ(α)|` on a sample
/// grid of the torus of parameter pairs, away from the diagonal.
pub fn max_tube_radius(curve: &CurveSpec) -> f64 {
    let curvature_bound = 1.0 / curve.max_curvature().max(1e-300);
    let m = 256;
    let pts: Vec<Vec2> = (0..m).map(|j| curve.point(j as f64 / m as f64)).collect();
    let dist = |i: usize, j: usize| {
        let (a, b) = (pts[i % m], pts[j % m]);
        norm([a[0] - b[0], a[1] - b[1]])
    };
    let band = (curvature_bound / curve.length().max(1e-300)).min(0.25);
    let mut bottleneck = f64::INFINITY;
    for i in 0..m {
        for j in 0..m {
            let near_diag = |a: usize, b: usize| {
                torus_distance(a as f64 / m as f64, b as f64 / m as f64) < band
            };
            if near_diag(i, j) {
                continue;
            }
            let d = dist(i, j);
            let mut strict_min = true;
            'nbr: for di in [m - 1, 0, 1] {
                for dj in [m - 1, 0, 1] {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (a, b) = ((i + di) % m, (j + dj) % m);
                    if near_diag(a, b) || dist(a, b) <= d * (1.0 + 1e-12) {
                        strict_min = false;
                        break 'nbr;
                    }
                }
            }
            if strict_min {
                bottleneck = bottleneck.min(d);
            }
        }
    }
    0.9 * curvature_bound.min(0.5 * bottleneck)
}
