//! Periodic grids on the unit torus and the Fourier machinery built on them.
//!
//! Fields are sampled at `s_j = j / N` and carry their normalized discrete
//! Fourier coefficients `f̂_k = N⁻¹ Σ_j f(s_j) e^{-2πik s_j}` alongside the
//! grid values. The Nyquist coefficient (even `N`) is treated as a cosine,
//! i.e. split evenly between wavenumbers `±N/2`, which keeps analytic
//! continuation and half-grid interpolation real on real fields.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default relative cap on strip-scaled mode magnitudes.
pub const DEFAULT_STRIP_CAP: f64 = 1e8;

/// Default noise floor for the analyticity-radius fit, relative to the largest mode.
pub const DEFAULT_NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("grid size {0} must be even and at least 8")]
    InvalidGridSize(usize),
    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("strip offset {beta} amplifies mode {wavenumber} to {magnitude:e}, beyond cap {cap:e}")]
    StripOverflow {
        beta: f64,
        wavenumber: i64,
        magnitude: f64,
        cap: f64,
    },
    #[error("negative filter threshold {0}")]
    NegativeThreshold(f64),
}

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// Normalized forward transform of real samples.
pub fn forward_modes(values: &[f64]) -> Vec<Complex64> {
    let n = values.len();
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(n, false).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

/// Inverse of [`forward_modes`]; returns complex samples.
pub fn inverse_modes(modes: &[Complex64]) -> Vec<Complex64> {
    let n = modes.len();
    let mut buf = modes.to_vec();
    plan(n, true).process(&mut buf);
    buf
}

/// Signed wavenumber of FFT slot `index` on an `n`-point grid (Nyquist reported as `+n/2`).
pub fn wavenumber(index: usize, n: usize) -> i64 {
    if index <= n / 2 {
        index as i64
    } else {
        index as i64 - n as i64
    }
}

/// Equispaced nodes `s_j = j/N` on `𝕋 = ℝ/ℤ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeriodicGrid {
    n_points: usize,
}

impl PeriodicGrid {
    pub fn new(n_points: usize) -> Result<Self, SpectralError> {
        if n_points < 8 || n_points % 2 != 0 {
            return Err(SpectralError::InvalidGridSize(n_points));
        }
        Ok(Self { n_points })
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n_points as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 / self.n_points as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |j| self.node(j))
    }

    pub fn nyquist(&self) -> usize {
        self.n_points / 2
    }
}

/// Periodic distance on `𝕋`, in `[0, 1/2]`.
pub fn torus_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// A real field on a periodic grid together with its Fourier modes.
///
/// Modes are computed eagerly at construction, so a field is immutable and
/// can be shared freely between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: PeriodicGrid,
    values: Vec<f64>,
    modes: Vec<Complex64>,
}

impl SpectralField {
    pub fn from_values(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self, SpectralError> {
        if values.len() != grid.len() {
            return Err(SpectralError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        let modes = forward_modes(&values);
        Ok(Self {
            grid,
            values,
            modes,
        })
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        Self::from_values(grid, values).expect("length matches grid by construction")
    }

    pub fn constant(grid: PeriodicGrid, c: f64) -> Self {
        Self::from_fn(grid, |_| c)
    }

    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Builds a real field from modes; the imaginary part of the synthesis is discarded.
    pub fn from_modes(grid: PeriodicGrid, modes: Vec<Complex64>) -> Result<Self, SpectralError> {
        if modes.len() != grid.len() {
            return Err(SpectralError::LengthMismatch {
                expected: grid.len(),
                got: modes.len(),
            });
        }
        let n = modes.len();
        let modes: Vec<Complex64> = (0..n)
            .map(|k| 0.5 * (modes[k] + modes[(n - k) % n].conj()))
            .collect();
        let values: Vec<f64> = inverse_modes(&modes).iter().map(|c| c.re).collect();
        Ok(Self { grid, values, modes })
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn modes(&self) -> &[Complex64] {
        &self.modes
    }

    /// Mean over the torus, i.e. `∫_𝕋 f ds` for the trigonometric interpolant.
    pub fn mean(&self) -> f64 {
        self.modes[0].re
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `N⁻¹ Σ_j f(s_j)²`.
    pub fn grid_energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64
    }

    /// `Σ_k |f̂_k|²`.
    pub fn mode_energy(&self) -> f64 {
        self.modes.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Largest mode magnitude, counting the mean.
    pub fn max_mode(&self) -> f64 {
        self.modes.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    /// Evaluates the trigonometric interpolant at a complex point.
    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        let n = self.grid.len();
        let nyq = self.grid.nyquist();
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, c) in self.modes.iter().enumerate() {
            if i == nyq {
                let k = nyq as f64;
                let arg = Complex64::new(0.0, 2.0 * PI * k) * z;
                acc += *c * 0.5 * (arg.exp() + (-arg).exp());
            } else {
                let k = wavenumber(i, n) as f64;
                acc += *c * (Complex64::new(0.0, 2.0 * PI * k) * z).exp();
            }
        }
        acc
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.eval_complex(Complex64::new(s, 0.0)).re
    }

    /// Values of the interpolant at `s_j + offset`.
    pub fn shifted_values(&self, offset: f64) -> Vec<f64> {
        let n = self.grid.len();
        let nyq = self.grid.nyquist();
        let modes: Vec<Complex64> = self
            .modes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == nyq {
                    *c * (PI * nyq as f64 * offset * 2.0).cos()
                } else {
                    let k = wavenumber(i, n) as f64;
                    *c * Complex64::from_polar(1.0, 2.0 * PI * k * offset)
                }
            })
            .collect();
        inverse_modes(&modes).iter().map(|c| c.re).collect()
    }

    /// Spectral derivative `∂_s f`; the Nyquist mode is dropped.
    pub fn derivative(&self) -> SpectralField {
        let n = self.grid.len();
        let nyq = self.grid.nyquist();
        let modes: Vec<Complex64> = self
            .modes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == nyq {
                    Complex64::new(0.0, 0.0)
                } else {
                    *c * Complex64::new(0.0, 2.0 * PI * wavenumber(i, n) as f64)
                }
            })
            .collect();
        SpectralField::from_modes(self.grid, modes).expect("same grid")
    }

    /// Samples of the analytic continuation `f(s_j + iβ)`.
    pub fn shift_to_strip(&self, beta: f64) -> Result<StripSample, SpectralError> {
        self.shift_to_strip_capped(beta, DEFAULT_STRIP_CAP)
    }

    /// As [`Self::shift_to_strip`], with `cap` relative to the largest unscaled mode.
    pub fn shift_to_strip_capped(&self, beta: f64, cap: f64) -> Result<StripSample, SpectralError> {
        let n = self.grid.len();
        let nyq = self.grid.nyquist();
        let reference = self.max_mode().max(f64::MIN_POSITIVE);
        let mut scaled = vec![Complex64::new(0.0, 0.0); n];
        // Nyquist: c·cos(πN(s+iβ)) = c·[cosh(πNβ) cos(πNs) − i sinh(πNβ) sin(πNs)];
        // the sine part vanishes at the nodes.
        for (i, c) in self.modes.iter().enumerate() {
            let k = wavenumber(i, n);
            let factor = if i == nyq {
                (PI * nyq as f64 * beta).cosh()
            } else {
                (-2.0 * PI * k as f64 * beta).exp()
            };
            let value = *c * factor;
            if value.norm() > cap * reference {
                return Err(SpectralError::StripOverflow {
                    beta,
                    wavenumber: k,
                    magnitude: value.norm(),
                    cap: cap * reference,
                });
            }
            scaled[i] = value;
        }
        Ok(StripSample {
            beta,
            values: inverse_modes(&scaled),
        })
    }

    /// Zeroes every mode with magnitude strictly below `threshold`.
    pub fn krasny_filter(&self, threshold: f64) -> Result<SpectralField, SpectralError> {
        if threshold < 0.0 {
            return Err(SpectralError::NegativeThreshold(threshold));
        }
        if threshold == 0.0 {
            return Ok(self.clone());
        }
        let modes: Vec<Complex64> = self
            .modes
            .iter()
            .map(|c| {
                if c.norm() < threshold {
                    Complex64::new(0.0, 0.0)
                } else {
                    *c
                }
            })
            .collect();
        if modes == self.modes {
            return Ok(self.clone());
        }
        SpectralField::from_modes(self.grid, modes)
    }

    /// Fits the exponential decay rate of the mode magnitudes.
    pub fn estimate_analyticity_radius(&self, fit: &RadiusFit) -> AnalyticityRadius {
        let n = self.grid.len();
        let nyq = self.grid.nyquist();
        let floor = fit.noise_floor * self.max_mode();
        let amplitude = |k: usize| self.modes[k].norm().max(self.modes[n - k].norm());

        let usable: Vec<(f64, f64)> = (1..nyq)
            .map(|k| (k as f64, amplitude(k)))
            .filter(|&(_, a)| a > floor && a > 0.0)
            .collect();
        if usable.len() < 4 {
            return AnalyticityRadius::Indeterminate;
        }
        let (slope, intercept) = least_squares(usable.iter().map(|&(k, a)| (k, a.ln())));
        let radius = -slope / (2.0 * PI);

        // A cliff right after the last usable mode means the field is band-limited
        // (or filtered) rather than geometrically decaying.
        let last = usable.last().map(|&(k, _)| k as usize).unwrap_or(0);
        if last + 1 < nyq {
            let predicted = (intercept + slope * (last + 1) as f64).exp();
            if predicted > fit.cliff_ratio * floor.max(f64::MIN_POSITIVE) {
                return AnalyticityRadius::Saturated(fit.max_radius);
            }
        }
        if radius >= fit.max_radius {
            AnalyticityRadius::Saturated(fit.max_radius)
        } else {
            AnalyticityRadius::Resolved(radius)
        }
    }

    /// Discrete version of `sup_{|β|≤ρ} ‖f(·+iβ)‖_{C^{1/2}(𝕋)}`.
    ///
    /// The Hölder quotient is maximized over all node pairs (periodic distance),
    /// and `β` runs over `n_beta` equispaced values in `[-ρ, ρ]` (endpoints included).
    pub fn strip_holder_norm(&self, rho: f64, n_beta: usize) -> Result<f64, SpectralError> {
        let betas = symmetric_samples(rho, n_beta);
        let mut best: f64 = 0.0;
        for beta in betas {
            let strip = self.shift_to_strip(beta)?;
            best = best.max(strip.holder_norm());
        }
        Ok(best)
    }
}

/// `n` equispaced points in `[-rho, rho]`; a single point means `β = 0`.
pub fn symmetric_samples(rho: f64, n: usize) -> Vec<f64> {
    if n <= 1 || rho == 0.0 {
        return vec![0.0];
    }
    (0..n)
        .map(|m| -rho + 2.0 * rho * m as f64 / (n - 1) as f64)
        .collect()
}

/// Ordinary least-squares line fit; returns `(slope, intercept)`.
pub fn least_squares(points: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = points.collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Samples `f(s_j + iβ)` of a continued field.
#[derive(Debug, Clone)]
pub struct StripSample {
    pub beta: f64,
    pub values: Vec<Complex64>,
}

impl StripSample {
    /// Sup norm plus the largest Hölder-½ quotient over node pairs.
    pub fn holder_norm(&self) -> f64 {
        let n = self.values.len();
        let sup = self.values.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
        let mut quotient: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = torus_distance(i as f64 / n as f64, j as f64 / n as f64);
                let q = (self.values[i] - self.values[j]).norm() / d.sqrt();
                quotient = quotient.max(q);
            }
        }
        sup + quotient
    }
}

/// Parameters of the mode-decay fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RadiusFit {
    /// Modes below `noise_floor × max mode` are ignored.
    pub noise_floor: f64,
    /// Value reported when the decay is faster than the grid can measure.
    pub max_radius: f64,
    /// Band-limit detection: predicted/floor ratio at the first dropped mode.
    pub cliff_ratio: f64,
}

impl Default for RadiusFit {
    fn default() -> Self {
        Self {
            noise_floor: DEFAULT_NOISE_FLOOR,
            max_radius: 1.0,
            cliff_ratio: 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AnalyticityRadius {
    Resolved(f64),
    /// Decay beyond the measurable range; carries the configured maximum.
    Saturated(f64),
    Indeterminate,
}

impl AnalyticityRadius {
    pub fn value(&self) -> Option<f64> {
        match *self {
            AnalyticityRadius::Resolved(r) | AnalyticityRadius::Saturated(r) => Some(r),
            AnalyticityRadius::Indeterminate => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(n).unwrap()
    }

    #[test]
    fn grid_rejects_odd_and_small() {
        assert!(PeriodicGrid::new(7).is_err());
        assert!(PeriodicGrid::new(6).is_err());
        assert!(PeriodicGrid::new(9).is_err());
        assert_eq!(PeriodicGrid::new(8).unwrap().len(), 8);
    }

    #[test]
    fn derivative_of_cosine() {
        let g = grid(32);
        let f = SpectralField::from_fn(g, |s| (2.0 * PI * s).cos());
        let df = f.derivative();
        for (s, v) in g.nodes().zip(df.values()) {
            assert_abs_diff_eq!(*v, -2.0 * PI * (2.0 * PI * s).sin(), epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let f = SpectralField::constant(grid(16), 3.5);
        assert!(f.derivative().sup_norm() < 1e-14);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let g = grid(64);
        let f_exact = |s: f64| (4.0 * PI * s).sin() + 0.3 * (2.0 * PI * s).cos();
        let f = SpectralField::from_fn(g, f_exact);
        let df = f.derivative();
        let h = 1e-5;
        for (s, v) in g.nodes().zip(df.values()) {
            let fd = (f_exact(s + h) - f_exact(s - h)) / (2.0 * h);
            assert!((v - fd).abs() < 1e-6, "s={s}: {v} vs {fd}");
            let closed = 4.0 * PI * (4.0 * PI * s).cos() - 0.6 * PI * (2.0 * PI * s).sin();
            assert!((v - closed).abs() < 1e-11);
        }
    }

    #[test]
    fn nyquist_dropped_by_derivative() {
        let g = grid(8);
        let f = SpectralField::from_fn(g, |s| (8.0 * PI * s).cos());
        assert!(f.derivative().sup_norm() < 1e-13);
    }

    #[test]
    fn strip_of_single_exponential_mode() {
        // Real part of e^{2πis} is cos; check the complex continuation of cos directly.
        let g = grid(16);
        let f = SpectralField::from_fn(g, |s| (2.0 * PI * s).cos());
        let beta = 0.07;
        let strip = f.shift_to_strip(beta).unwrap();
        for (j, v) in strip.values.iter().enumerate() {
            let z = Complex64::new(g.node(j), beta);
            let exact = (Complex64::new(0.0, 2.0 * PI) * z).exp() * 0.5
                + (Complex64::new(0.0, -2.0 * PI) * z).exp() * 0.5;
            assert!((v - exact).norm() < 1e-13);
        }
    }

    #[test]
    fn strip_at_zero_reproduces_values() {
        let g = grid(32);
        let f = SpectralField::from_fn(g, |s| (2.0 * PI * s).sin().exp());
        let strip = f.shift_to_strip(0.0).unwrap();
        for (v, w) in strip.values.iter().zip(f.values()) {
            assert!((v.re - w).abs() < 1e-13 && v.im.abs() < 1e-13);
        }
    }

    #[test]
    fn strip_matches_direct_series_for_geometric_modes() {
        // f = Σ_k q^{|k|} e^{2πiks}; direct oracle sums the scaled series termwise.
        let g = grid(64);
        let q: f64 = 0.2;
        let f = SpectralField::from_fn(g, |s| {
            (1.0 - q * q) / (1.0 - 2.0 * q * (2.0 * PI * s).cos() + q * q)
        });
        let beta = 0.05;
        let strip = f.shift_to_strip(beta).unwrap();
        for (j, v) in strip.values.iter().enumerate() {
            let s = g.node(j);
            let mut direct = Complex64::new(0.0, 0.0);
            for k in -200_i64..=200 {
                let amp = q.powi(k.abs() as i32) * (-2.0 * PI * k as f64 * beta).exp();
                direct += Complex64::from_polar(amp, 2.0 * PI * k as f64 * s);
            }
            assert!((v - direct).norm() < 1e-10, "j={j}");
        }
    }

    #[test]
    fn strip_overflow_is_reported() {
        let g = grid(64);
        let f = SpectralField::from_fn(g, |s| (2.0 * PI * 30.0 * s).cos() + 1.0);
        assert!(matches!(
            f.shift_to_strip_capped(0.5, 1e3),
            Err(SpectralError::StripOverflow { .. })
        ));
    }

    #[test]
    fn filter_threshold_zero_is_identity() {
        let f = SpectralField::from_fn(grid(16), |s| (2.0 * PI * s).sin() + 0.1);
        assert_eq!(f.krasny_filter(0.0).unwrap(), f);
    }

    #[test]
    fn filter_zeroes_small_modes() {
        let g = grid(16);
        let f = SpectralField::from_fn(g, |s| 2.0 * (2.0 * PI * s).cos() + 2e-15 * (6.0 * PI * s).cos());
        let filtered = f.krasny_filter(1e-12).unwrap();
        assert_eq!(filtered.modes()[3], Complex64::new(0.0, 0.0));
        assert_eq!(filtered.modes()[13], Complex64::new(0.0, 0.0));
        assert!((filtered.modes()[1].re - 1.0).abs() < 1e-14);
        assert!(f.krasny_filter(-1.0).is_err());
    }

    #[test]
    fn radius_of_geometric_decay() {
        let g = grid(128);
        let q = (-2.0 * PI * 0.1_f64).exp();
        let f = SpectralField::from_fn(g, |s| {
            (1.0 - q * q) / (1.0 - 2.0 * q * (2.0 * PI * s).cos() + q * q)
        });
        let r = f.estimate_analyticity_radius(&RadiusFit::default());
        match r {
            AnalyticityRadius::Resolved(rho) => assert!((rho - 0.1).abs() < 0.005, "rho={rho}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn radius_of_single_mode_is_indeterminate() {
        let f = SpectralField::from_fn(grid(64), |s| (2.0 * PI * s).cos());
        assert_eq!(
            f.estimate_analyticity_radius(&RadiusFit::default()),
            AnalyticityRadius::Indeterminate
        );
    }

    #[test]
    fn band_limited_field_saturates() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let g = grid(128);
        let coeffs: Vec<(f64, f64)> = (1..=20)
            .map(|_| (rng.gen_range(0.5..1.0), rng.gen_range(0.0..2.0 * PI)))
            .collect();
        let f = SpectralField::from_fn(g, |s| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, p))| a * (2.0 * PI * (k + 1) as f64 * s + p).cos())
                .sum()
        });
        let fit = RadiusFit::default();
        assert_eq!(
            f.estimate_analyticity_radius(&fit),
            AnalyticityRadius::Saturated(fit.max_radius)
        );
    }

    #[test]
    fn holder_norm_of_constant() {
        let f = SpectralField::constant(grid(16), -2.5);
        assert!((f.strip_holder_norm(0.2, 5).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn holder_norm_of_cosine_matches_dense_oracle() {
        let n = 128;
        let f = SpectralField::from_fn(grid(n), |s| (2.0 * PI * s).cos());
        let discrete = f.strip_holder_norm(0.0, 1).unwrap();
        // Dense oracle: sup |cos| = 1 plus max_d 2 sin(πd)/√d over a fine set of separations.
        let m = 20_000;
        let quotient = (1..=m / 2)
            .map(|i| {
                let d = i as f64 / m as f64;
                2.0 * (PI * d).sin() / d.sqrt()
            })
            .fold(0.0_f64, f64::max);
        let dense = 1.0 + quotient;
        assert!((discrete - dense).abs() / dense < 0.01, "{discrete} vs {dense}");
    }

    fn random_analytic(seed: u64, n: usize) -> SpectralField {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let q: f64 = rng.gen_range(0.3..0.6);
        let terms: Vec<(f64, f64)> = (0..12)
            .map(|k| (q.powi(k) * rng.gen_range(0.2..1.0), rng.gen_range(0.0..2.0 * PI)))
            .collect();
        SpectralField::from_fn(grid(n), |s| {
            terms
                .iter()
                .enumerate()
                .map(|(k, (a, p))| a * (2.0 * PI * k as f64 * s + p).cos())
                .sum()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn parseval_holds(seed in 0u64..10_000) {
            let f = random_analytic(seed, 64);
            let (a, b) = (f.grid_energy(), f.mode_energy());
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }

        #[test]
        fn filter_is_idempotent(seed in 0u64..10_000, exp in -6i32..-1) {
            let f = random_analytic(seed, 32);
            let t = 10f64.powi(exp);
            let once = f.krasny_filter(t).unwrap();
            let twice = once.krasny_filter(t).unwrap();
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() < 1e-14);
            }
        }

        #[test]
        fn strip_shift_round_trips(seed in 0u64..10_000, beta in -0.05f64..0.05) {
            let f = random_analytic(seed, 64);
            let there = f.shift_to_strip(beta).unwrap();
            // Shift back: continue the complex samples by -β through their own modes.
            let n = there.values.len();
            let mut modes = there.values.clone();
            plan(n, false).process(&mut modes);
            let back: Vec<Complex64> = modes
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let k = wavenumber(i, n) as f64;
                    if i == n / 2 { Complex64::new(0.0, 0.0) } else { c / n as f64 * (2.0 * PI * k * beta).exp() }
                })
                .collect();
            let back = inverse_modes(&back);
            let tol = 1e-12 * (2.0 * PI * (n / 2) as f64 * beta.abs()).exp().max(1.0) * f.max_mode();
            for (v, w) in back.iter().zip(f.values()) {
                prop_assert!((v.re - w).abs() < tol.max(1e-11));
            }
        }

        #[test]
        fn holder_norm_monotone_in_rho(seed in 0u64..10_000, rho in 0.01f64..0.08) {
            let f = random_analytic(seed, 32);
            let small = f.strip_holder_norm(0.5 * rho, 5).unwrap();
            let large = f.strip_holder_norm(rho, 5).unwrap();
            prop_assert!(small <= large * (1.0 + 1e-12));
        }

        #[test]
        fn derivative_second_order_against_fd(seed in 0u64..10_000) {
            let f = random_analytic(seed, 64);
            let df = f.derivative();
            let h = 1e-4;
            for j in (0..64).step_by(7) {
                let s = j as f64 / 64.0;
                let fd = (f.eval(s + h) - f.eval(s - h)) / (2.0 * h);
                prop_assert!((df.values()[j] - fd).abs() < 1e-5 * (1.0 + f.max_mode()) * 100.0);
            }
        }
    }
}
