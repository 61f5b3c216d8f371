//! Signals averaged over Poissonian atom-number fluctuations and conditioned
//! on the number of detected atoms.
//!
//! All evaluators assume the dispersive limit. The shorthands `u = N̄cosφ`
//! and `v = N̄sinφ` appear in the Poisson closed forms.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::FRAC_PI_2;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Poisson};
use serde::Serialize;

use crate::dispersive::{
    closed_form_final_state, ideal_second_moment, ideal_signal, run_dispersive_sequence,
    uncertainty_ratio, PulseSequence,
};
use crate::error::{invalid, Error, Result};
use crate::spin::measurement_distribution;
use crate::C64;

/// Central-difference step used wherever a slope is taken numerically.
pub const FD_STEP: f64 = 1e-6;

/// Central finite-difference derivative of `f` at `x` with step [`FD_STEP`].
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Evenly spaced phase grid, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhiGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl PhiGrid {
    pub fn new(start: f64, stop: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(invalid("phase grid needs at least two points"));
        }
        if !start.is_finite() || !stop.is_finite() || stop <= start {
            return Err(invalid(format!("bad phase range {start}..{stop}")));
        }
        Ok(PhiGrid { start, stop, points })
    }

    pub fn values(&self) -> Vec<f64> {
        let step = (self.stop - self.start) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                if i + 1 == self.points {
                    self.stop
                } else {
                    self.start + step * i as f64
                }
            })
            .collect()
    }
}

/// Where the numbers in a [`SignalCurve`] came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveSource {
    ClosedForm,
    PerNSum,
    ExactDynamics,
    MonteCarlo,
}

impl CurveSource {
    pub fn tag(self) -> &'static str {
        match self {
            CurveSource::ClosedForm => "closed-form",
            CurveSource::PerNSum => "per-N-sum",
            CurveSource::ExactDynamics => "exact-dynamics",
            CurveSource::MonteCarlo => "monte-carlo",
        }
    }
}

/// Signal, second moment and phase uncertainty sampled on a phase grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignalCurve {
    pub phi_grid: Vec<f64>,
    pub jz_mean: Vec<f64>,
    pub jz_second_moment: Vec<f64>,
    /// +∞ where the slope vanishes.
    pub delta_phi: Vec<f64>,
    pub source: CurveSource,
    pub config: BTreeMap<String, String>,
}

/// One grid point of a curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub jz_mean: f64,
    pub jz_second_moment: f64,
    pub delta_phi: f64,
}

impl SignalCurve {
    pub fn from_points(phi_grid: Vec<f64>, points: &[CurvePoint], source: CurveSource) -> Result<Self> {
        if phi_grid.len() != points.len() {
            return Err(invalid("grid and point counts differ"));
        }
        for (phi, p) in phi_grid.iter().zip(points) {
            if p.jz_second_moment < p.jz_mean * p.jz_mean - 1e-9 * (1.0 + p.jz_second_moment.abs()) {
                return Err(invalid(format!("negative variance at phi = {phi}")));
            }
        }
        Ok(SignalCurve {
            phi_grid,
            jz_mean: points.iter().map(|p| p.jz_mean).collect(),
            jz_second_moment: points.iter().map(|p| p.jz_second_moment).collect(),
            delta_phi: points.iter().map(|p| p.delta_phi).collect(),
            source,
            config: BTreeMap::new(),
        })
    }

    pub fn with_config(mut self, key: &str, value: impl ToString) -> Self {
        self.config.insert(key.to_string(), value.to_string());
        self
    }

    pub fn len(&self) -> usize {
        self.phi_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_grid.is_empty()
    }

    /// (φ, Δφ) at the smallest finite Δφ, if any.
    pub fn min_delta_phi(&self) -> Option<(f64, f64)> {
        self.phi_grid
            .iter()
            .zip(&self.delta_phi)
            .filter(|(_, d)| d.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(p, d)| (*p, *d))
    }
}

/// Finite detector efficiency acting on a Poissonian atom source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DetectionModel {
    efficiency: f64,
    mean_atoms: f64,
}

impl DetectionModel {
    pub fn new(efficiency: f64, mean_atoms: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&efficiency) {
            return Err(invalid(format!("efficiency {efficiency} outside [0, 1]")));
        }
        if !(mean_atoms > 0.0 && mean_atoms.is_finite()) {
            return Err(invalid(format!("mean atom number {mean_atoms} must be positive")));
        }
        Ok(DetectionModel {
            efficiency,
            mean_atoms,
        })
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    pub fn mean_atoms(&self) -> f64 {
        self.mean_atoms
    }

    /// Mean number of atoms that cross the interferometer undetected.
    pub fn lost_mean(&self) -> f64 {
        self.mean_atoms * (1.0 - self.efficiency)
    }

    /// Mean number of detected atoms.
    pub fn detected_mean(&self) -> f64 {
        self.mean_atoms * self.efficiency
    }
}

/// Largest N kept in a truncated Poisson sum: ⌈N̄ + 10√N̄ + 10⌉.
pub fn poisson_truncation(mean: f64) -> usize {
    (mean + 10.0 * mean.sqrt() + 10.0).ceil() as usize
}

/// Poisson probabilities for n = 0..=n_max, evaluated in log space.
pub fn poisson_probabilities(mean: f64, n_max: usize) -> Vec<f64> {
    if mean == 0.0 {
        let mut p = vec![0.0; n_max + 1];
        p[0] = 1.0;
        return p;
    }
    let ln_mean = mean.ln();
    let mut ln_p = -mean;
    (0..=n_max)
        .map(|n| {
            if n > 0 {
                ln_p += ln_mean - (n as f64).ln();
            }
            ln_p.exp()
        })
        .collect()
}

/// e^{−N̄}·f(N̄e^{iφ}) pieces, kept overflow-free for large N̄.
fn damped_sinh(z: C64, mean: f64) -> C64 {
    ((z - mean).exp() - (-z - mean).exp()) * 0.5
}

fn damped_cosh(z: C64, mean: f64) -> C64 {
    ((z - mean).exp() + (-z - mean).exp()) * 0.5
}

fn odd_sign(inversion: bool) -> f64 {
    if inversion {
        1.0
    } else {
        -1.0
    }
}

/// Poisson-averaged ⟨Ĵz⟩:
/// (N̄/2)e^{−N̄}{sinh(u)cos(v)cosφ ∓ cosh(u)[1 ± sin(v)sinφ]}, upper sign
/// without inversion.
pub fn poisson_signal(mean: f64, phi: f64, inversion: bool) -> f64 {
    let z = C64::from_polar(mean, phi);
    let even = (C64::from_polar(1.0, phi) * damped_sinh(z, mean)).re;
    let odd = odd_sign(inversion) * damped_cosh(C64::new(mean * phi.cos(), 0.0), mean).re;
    0.5 * mean * (even + odd)
}

/// ∂/∂φ of [`poisson_signal`].
pub fn poisson_signal_slope(mean: f64, phi: f64, inversion: bool) -> f64 {
    let e = C64::from_polar(1.0, phi);
    let z = e * mean;
    let i = C64::i();
    let even = (i * e * damped_sinh(z, mean) + e * damped_cosh(z, mean) * i * z).re;
    let u = mean * phi.cos();
    let odd = odd_sign(inversion) * damped_sinh(C64::new(u, 0.0), mean).re * (-mean * phi.sin());
    0.5 * mean * (even + odd)
}

/// Poisson-averaged ⟨Ĵz²⟩: N̄/4 + (N̄²/8)(1 + cos²φ + e^{−2N̄}sin²φ).
pub fn poisson_jz_squared(mean: f64, phi: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    0.25 * mean + 0.125 * mean * mean * (1.0 + c * c + (-2.0 * mean).exp() * s * s)
}

/// Poisson-averaged ⟨Ĵz⟩ as an explicit truncated sum over N.
pub fn poisson_signal_per_n(mean: f64, phi: f64, inversion: bool) -> f64 {
    per_n_sum(mean, |n| ideal_signal(n, phi, inversion))
}

/// Poisson-averaged ⟨Ĵz²⟩ as an explicit truncated sum over N.
pub fn poisson_jz_squared_per_n(mean: f64, phi: f64) -> f64 {
    per_n_sum(mean, |n| ideal_second_moment(n, phi))
}

fn per_n_sum(mean: f64, term: impl Fn(usize) -> f64) -> f64 {
    poisson_probabilities(mean, poisson_truncation(mean))
        .iter()
        .enumerate()
        .map(|(n, p)| p * term(n))
        .sum()
}

/// Small-φ form ∓(N̄/2)exp(−N̄φ²/2)·{sin² | cos²}[φ(N̄+1)/2].
pub fn small_phase_approximation(mean: f64, phi: f64, inversion: bool) -> f64 {
    let envelope = 0.5 * mean * (-0.5 * mean * phi * phi).exp();
    let arg = 0.5 * phi * (mean + 1.0);
    if inversion {
        envelope * arg.cos().powi(2)
    } else {
        -envelope * arg.sin().powi(2)
    }
}

/// Δφ = √(⟨Ĵz²⟩ − ⟨Ĵz⟩²)/|∂⟨Ĵz⟩/∂φ|, +∞ at zero slope.
pub fn phase_uncertainty_from_moments(mean: f64, second_moment: f64, slope: f64) -> f64 {
    uncertainty_ratio(second_moment - mean * mean, slope)
}

/// Δφ from moment functions of φ, with the slope taken by central differences.
pub fn phase_uncertainty_numeric(
    mean_fn: impl Fn(f64) -> f64,
    second_moment_fn: impl Fn(f64) -> f64,
    phi: f64,
) -> f64 {
    let slope = central_difference(&mean_fn, phi);
    phase_uncertainty_from_moments(mean_fn(phi), second_moment_fn(phi), slope)
}

/// Δφ of the Poisson-averaged signal, analytic slope.
pub fn poisson_phase_uncertainty(mean: f64, phi: f64, inversion: bool) -> f64 {
    phase_uncertainty_from_moments(
        poisson_signal(mean, phi, inversion),
        poisson_jz_squared(mean, phi),
        poisson_signal_slope(mean, phi, inversion),
    )
}

/// Closed-form Poisson curve on a grid.
pub fn poisson_curve(mean: f64, phi_grid: &[f64], inversion: bool) -> Result<SignalCurve> {
    let points: Vec<CurvePoint> = phi_grid
        .iter()
        .map(|&phi| CurvePoint {
            jz_mean: poisson_signal(mean, phi, inversion),
            jz_second_moment: poisson_jz_squared(mean, phi),
            delta_phi: poisson_phase_uncertainty(mean, phi, inversion),
        })
        .collect();
    Ok(SignalCurve::from_points(phi_grid.to_vec(), &points, CurveSource::ClosedForm)?
        .with_config("mean_atoms", mean)
        .with_config("inversion", inversion))
}

/// Conditional ⟨Ĵz⟩ given N_d detected atoms (inversion scheme):
///
/// ```text
/// (N_d/4)e^{−L}{ e^{L cosφ}[cos(N_dφ + L sinφ) + cos^{N_d−1}φ]
///              + (−1)^{N_d} e^{−L cosφ}[cos(N_dφ − L sinφ) − cos^{N_d−1}φ] }
/// ```
///
/// with L the mean number of lost atoms.
pub fn conditional_signal(n_detected: usize, phi: f64, model: &DetectionModel) -> f64 {
    conditional_signal_and_slope(n_detected, phi, model).0
}

/// ∂/∂φ of [`conditional_signal`].
pub fn conditional_signal_slope(n_detected: usize, phi: f64, model: &DetectionModel) -> f64 {
    conditional_signal_and_slope(n_detected, phi, model).1
}

/// Conditional signal and its φ-derivative.
pub fn conditional_signal_and_slope(n_detected: usize, phi: f64, model: &DetectionModel) -> (f64, f64) {
    if n_detected == 0 {
        return (0.0, 0.0);
    }
    let lost = model.lost_mean();
    let n = n_detected as f64;
    let (s, c) = phi.sin_cos();
    let parity = if n_detected.is_multiple_of(2) { 1.0 } else { -1.0 };
    let a = (lost * (c - 1.0)).exp();
    let b = (-lost * (c + 1.0)).exp();
    let cpow = c.powi(n_detected as i32 - 1);
    let dcpow = if n_detected >= 2 {
        -(n - 1.0) * c.powi(n_detected as i32 - 2) * s
    } else {
        0.0
    };
    let plus = n * phi + lost * s;
    let minus = n * phi - lost * s;
    let f1 = plus.cos() + cpow;
    let f2 = minus.cos() - cpow;
    let df1 = -plus.sin() * (n + lost * c) + dcpow;
    let df2 = -minus.sin() * (n - lost * c) - dcpow;
    let value = 0.25 * n * (a * f1 + parity * b * f2);
    let slope = 0.25 * n * (a * (-lost * s * f1 + df1) + parity * b * (lost * s * f2 + df2));
    (value, slope)
}

/// Conditional ⟨Ĵz²⟩ given N_d detected atoms:
/// N_d²/4 + ((N_d − N_d²)/8)sin²φ·[1 − (−1)^{N_d}e^{−2L}].
pub fn conditional_jz_squared(n_detected: usize, phi: f64, model: &DetectionModel) -> f64 {
    let n = n_detected as f64;
    let parity = if n_detected.is_multiple_of(2) { 1.0 } else { -1.0 };
    let bracket = 1.0 - parity * (-2.0 * model.lost_mean()).exp();
    0.25 * n * n + 0.125 * (n - n * n) * phi.sin().powi(2) * bracket
}

/// Δφ′ = Δφ/η.
pub fn efficiency_scaled_uncertainty(delta_phi: f64, efficiency: f64) -> Result<f64> {
    if !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(invalid(format!("efficiency {efficiency} must lie in (0, 1]")));
    }
    Ok(delta_phi / efficiency)
}

/// Sample estimate of the conditional moments for one detected-atom class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConditionalEstimate {
    pub n_detected: usize,
    pub samples: u64,
    pub jz_mean: f64,
    pub jz_mean_std_error: f64,
    pub jz_second_moment: f64,
    pub jz_second_moment_std_error: f64,
}

#[derive(Default, Clone, Copy)]
struct Accumulator {
    count: u64,
    sum: f64,
    sum_sq: f64,
    sum_cube: f64,
    sum_quart: f64,
}

impl Accumulator {
    fn push(&mut self, x: f64) {
        let x2 = x * x;
        self.count += 1;
        self.sum += x;
        self.sum_sq += x2;
        self.sum_cube += x2 * x;
        self.sum_quart += x2 * x2;
    }

    fn estimate(&self, n_detected: usize) -> ConditionalEstimate {
        let n = self.count as f64;
        let mean = self.sum / n;
        let second = self.sum_sq / n;
        let fourth = self.sum_quart / n;
        let var1 = (second - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        let var2 = (fourth - second * second).max(0.0) * n / (n - 1.0).max(1.0);
        ConditionalEstimate {
            n_detected,
            samples: self.count,
            jz_mean: mean,
            jz_mean_std_error: (var1 / n).sqrt(),
            jz_second_moment: second,
            jz_second_moment_std_error: (var2 / n).sqrt(),
        }
    }
}

/// Monte-Carlo detection experiment in the dispersive limit.
///
/// Each sample draws N ~ Poisson(N̄), an excited-atom count from the final
/// state of the N-atom sequence, and thins excited and ground atoms
/// independently with probability η. Returns one estimate per detected class
/// listed in `classes` that received at least two samples.
pub fn monte_carlo_conditional_moments(
    model: &DetectionModel,
    phi: f64,
    inversion: bool,
    classes: &[usize],
    samples: u64,
    seed: u64,
) -> Result<Vec<ConditionalEstimate>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atom_source = Poisson::new(model.mean_atoms()).map_err(|e| invalid(e.to_string()))?;
    let mut outcome_tables: HashMap<usize, WeightedIndex<f64>> = HashMap::new();
    let mut acc: HashMap<usize, Accumulator> = classes.iter().map(|&k| (k, Accumulator::default())).collect();
    let eta = model.efficiency();

    for _ in 0..samples {
        let n_atoms = atom_source.sample(&mut rng) as usize;
        let excited = if n_atoms == 0 {
            0
        } else {
            if let std::collections::hash_map::Entry::Vacant(e) = outcome_tables.entry(n_atoms) {
                e.insert(outcome_table(n_atoms, phi, inversion)?);
            }
            outcome_tables[&n_atoms].sample(&mut rng)
        };
        let ground = n_atoms - excited;
        let det_e = thin(excited, eta, &mut rng)?;
        let det_g = thin(ground, eta, &mut rng)?;
        if let Some(a) = acc.get_mut(&((det_e + det_g) as usize)) {
            a.push(0.5 * (det_e as f64 - det_g as f64));
        }
    }

    Ok(classes
        .iter()
        .filter_map(|k| {
            let a = acc[k];
            (a.count >= 2).then(|| a.estimate(*k))
        })
        .collect())
}

fn thin(count: usize, eta: f64, rng: &mut impl Rng) -> Result<u64> {
    if count == 0 {
        return Ok(0);
    }
    Ok(Binomial::new(count as u64, eta)
        .map_err(|e| invalid(e.to_string()))?
        .sample(rng))
}

fn outcome_table(n_atoms: usize, phi: f64, inversion: bool) -> Result<WeightedIndex<f64>> {
    let seq = PulseSequence::new(n_atoms, phi, inversion)?;
    let state = if n_atoms % 2 == 1 && phi.abs() > FRAC_PI_2 {
        run_dispersive_sequence(&seq)
    } else {
        closed_form_final_state(&seq)?.normalized()
    };
    let dist = measurement_distribution(&state)?;
    WeightedIndex::new(dist.probabilities().iter().map(|p| p.max(0.0)))
        .map_err(|e| Error::InvalidArgument(format!("outcome distribution for N = {n_atoms}: {e}")))
}
