//! Collective angular momentum of N symmetric two-level atoms.
//!
//! States live in the (2J+1)-dimensional symmetric subspace spanned by the
//! Dicke states |J,m⟩, m = −J..J, with J = N/2. Amplitude index `k` maps to
//! `m = k − J`, so index 0 is all atoms in |g⟩ and index 2J is all in |e⟩.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Result};
use crate::{CMatrix, CVector, C64};

/// Total spin J, stored as the integer 2J (= number of atoms).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Spin {
    two_j: usize,
}

impl Spin {
    /// Spin of `n` symmetric two-level atoms, J = n/2.
    pub const fn from_atoms(n: usize) -> Self {
        Spin { two_j: n }
    }

    /// Spin from a (half-)integer value of J.
    pub fn new(j: f64) -> Result<Self> {
        let two_j = 2.0 * j;
        if !two_j.is_finite() || two_j < 0.0 || (two_j - two_j.round()).abs() > 1e-12 {
            return Err(invalid(format!("J = {j} is not a non-negative half-integer")));
        }
        Ok(Spin {
            two_j: two_j.round() as usize,
        })
    }

    pub fn j(self) -> f64 {
        self.two_j as f64 / 2.0
    }

    /// 2J, which is also the number of atoms.
    pub fn two_j(self) -> usize {
        self.two_j
    }

    pub fn atoms(self) -> usize {
        self.two_j
    }

    pub fn dim(self) -> usize {
        self.two_j + 1
    }

    /// Magnetic quantum number m of amplitude index `k`.
    pub fn m(self, k: usize) -> f64 {
        k as f64 - self.j()
    }

    pub fn m_values(self) -> impl Iterator<Item = f64> {
        (0..self.dim()).map(move |k| self.m(k))
    }

    /// True when J is an integer (even atom number).
    pub fn is_integer(self) -> bool {
        self.two_j.is_multiple_of(2)
    }
}

/// Orientation (θ, φ) of an atomic coherent state on the Bloch sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlochAngles {
    theta: f64,
    phi: f64,
}

impl BlochAngles {
    /// Requires θ ∈ [0, π] and φ ∈ [0, 2π).
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=std::f64::consts::PI).contains(&theta) {
            return Err(invalid(format!("theta = {theta} outside [0, pi]")));
        }
        if !(0.0..std::f64::consts::TAU).contains(&phi) {
            return Err(invalid(format!("phi = {phi} outside [0, 2pi)")));
        }
        Ok(BlochAngles { theta, phi })
    }

    /// Maps arbitrary real angles onto the canonical ranges.
    ///
    /// Uses |−θ, φ⟩ = |θ, φ+π⟩, which holds amplitude by amplitude (no phase).
    /// θ outside [−π, π] is not folded further since that would introduce a
    /// global phase.
    pub fn wrapped(theta: f64, phi: f64) -> Self {
        let (theta, phi) = if theta < 0.0 {
            (-theta, phi + std::f64::consts::PI)
        } else {
            (theta, phi)
        };
        BlochAngles {
            theta,
            phi: phi.rem_euclid(std::f64::consts::TAU),
        }
    }

    pub fn theta(self) -> f64 {
        self.theta
    }

    pub fn phi(self) -> f64 {
        self.phi
    }
}

/// Pure state of the collective spin.
#[derive(Clone, Debug, PartialEq)]
pub struct DickeVector {
    spin: Spin,
    amplitudes: CVector,
}

impl DickeVector {
    pub fn new(spin: Spin, amplitudes: CVector) -> Result<Self> {
        if amplitudes.len() != spin.dim() {
            return Err(invalid(format!(
                "expected {} amplitudes for 2J = {}, got {}",
                spin.dim(),
                spin.two_j(),
                amplitudes.len()
            )));
        }
        Ok(DickeVector { spin, amplitudes })
    }

    /// |J, m⟩ for amplitude index `k`.
    pub fn basis(spin: Spin, k: usize) -> Self {
        let mut amplitudes = CVector::zeros(spin.dim());
        amplitudes[k] = C64::new(1.0, 0.0);
        DickeVector { spin, amplitudes }
    }

    /// |J, −J⟩: every atom in |g⟩.
    pub fn ground(spin: Spin) -> Self {
        Self::basis(spin, 0)
    }

    /// |J, +J⟩: every atom in |e⟩.
    pub fn excited(spin: Spin) -> Self {
        Self::basis(spin, spin.two_j())
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn amplitude(&self, k: usize) -> C64 {
        self.amplitudes[k]
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.amplitudes.unscale_mut(n);
        }
        self
    }

    /// Applies an operator on the spin space.
    pub fn apply(&self, op: &CMatrix) -> DickeVector {
        debug_assert_eq!(op.ncols(), self.spin.dim());
        DickeVector {
            spin: self.spin,
            amplitudes: op * &self.amplitudes,
        }
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &DickeVector) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    /// |⟨a|b⟩|² / (‖a‖²‖b‖²).
    pub fn fidelity(&self, other: &DickeVector) -> f64 {
        let nn = self.amplitudes.norm_squared() * other.amplitudes.norm_squared();
        self.inner(other).norm_sqr() / nn
    }

    /// Projector |ψ⟩⟨ψ|.
    pub fn density_matrix(&self) -> CMatrix {
        &self.amplitudes * self.amplitudes.adjoint()
    }

    /// ⟨Ĵz²⟩ − ⟨Ĵz⟩², accumulated about the mean.
    pub fn jz_variance(&self) -> f64 {
        let (mean, _) = self.jz_moments();
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(k, c)| c.norm_sqr() * (self.spin.m(k) - mean).powi(2))
            .sum()
    }

    /// (⟨Ĵz⟩, ⟨Ĵz²⟩) assuming unit norm.
    pub fn jz_moments(&self) -> (f64, f64) {
        let mut mean = 0.0;
        let mut second = 0.0;
        for (k, c) in self.amplitudes.iter().enumerate() {
            let p = c.norm_sqr();
            let m = self.spin.m(k);
            mean += m * p;
            second += m * m * p;
        }
        (mean, second)
    }
}

/// Rotation axis for [`rotation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Ladder and projection operators in the Dicke basis.
///
/// Also carries the eigendecomposition of Ĵx, from which every x/y rotation
/// is built without re-diagonalising.
#[derive(Clone, Debug)]
pub struct SpinOperators {
    spin: Spin,
    pub j_plus: CMatrix,
    pub j_minus: CMatrix,
    pub j_z: CMatrix,
    jx_vectors: DMatrix<f64>,
    jx_values: DVector<f64>,
}

/// ⟨J, m+1| Ĵ₊ |J, m⟩ = √(J(J+1) − m(m+1)).
pub fn ladder_coefficient(spin: Spin, m: f64) -> f64 {
    let j = spin.j();
    (j * (j + 1.0) - m * (m + 1.0)).max(0.0).sqrt()
}

/// Builds Ĵ₊, Ĵ₋, Ĵz for a (half-)integer J.
pub fn spin_operators(j: f64) -> Result<SpinOperators> {
    Ok(SpinOperators::new(Spin::new(j)?))
}

impl SpinOperators {
    pub fn new(spin: Spin) -> Self {
        let d = spin.dim();
        let mut j_plus = CMatrix::zeros(d, d);
        let mut jx = DMatrix::<f64>::zeros(d, d);
        for k in 0..d.saturating_sub(1) {
            let c = ladder_coefficient(spin, spin.m(k));
            j_plus[(k + 1, k)] = C64::new(c, 0.0);
            jx[(k + 1, k)] = 0.5 * c;
            jx[(k, k + 1)] = 0.5 * c;
        }
        let j_minus = j_plus.adjoint();
        let j_z = CMatrix::from_diagonal(&CVector::from_iterator(
            d,
            spin.m_values().map(|m| C64::new(m, 0.0)),
        ));
        let eig = SymmetricEigen::new(jx);
        SpinOperators {
            spin,
            j_plus,
            j_minus,
            j_z,
            jx_vectors: eig.eigenvectors,
            jx_values: eig.eigenvalues,
        }
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn j_x(&self) -> CMatrix {
        (&self.j_plus + &self.j_minus) * C64::new(0.5, 0.0)
    }

    pub fn j_y(&self) -> CMatrix {
        (&self.j_plus - &self.j_minus) * C64::new(0.0, -0.5)
    }

    /// Ĵ² = (Ĵ₊Ĵ₋ + Ĵ₋Ĵ₊)/2 + Ĵz².
    pub fn j_squared(&self) -> CMatrix {
        let pm = &self.j_plus * &self.j_minus;
        let mp = &self.j_minus * &self.j_plus;
        (pm + mp) * C64::new(0.5, 0.0) + &self.j_z * &self.j_z
    }

    /// exp(i·angle·Ĵ_axis).
    pub fn rotation(&self, axis: Axis, angle: f64) -> CMatrix {
        match axis {
            Axis::Z => z_phase(self.spin, angle),
            Axis::X => self.exp_i_jx(angle),
            Axis::Y => {
                // Ĵy = e^{−iπĴz/2} Ĵx e^{iπĴz/2}
                let frame = z_phase(self.spin, -FRAC_PI_2);
                let frame_inv = z_phase(self.spin, FRAC_PI_2);
                frame * self.exp_i_jx(angle) * frame_inv
            }
        }
    }

    fn exp_i_jx(&self, angle: f64) -> CMatrix {
        let d = self.spin.dim();
        let v = &self.jx_vectors;
        let phases: Vec<C64> = self
            .jx_values
            .iter()
            .map(|&l| C64::from_polar(1.0, angle * l))
            .collect();
        CMatrix::from_fn(d, d, |r, c| {
            (0..d)
                .map(|e| phases[e] * (v[(r, e)] * v[(c, e)]))
                .sum::<C64>()
        })
    }
}

/// exp(i·angle·Ĵz), diagonal.
pub fn z_phase(spin: Spin, angle: f64) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(
        spin.dim(),
        spin.m_values().map(|m| C64::from_polar(1.0, angle * m)),
    ))
}

/// exp(i·angle·Ĵ_axis) for spin J.
pub fn rotation(spin: Spin, axis: Axis, angle: f64) -> CMatrix {
    match axis {
        Axis::Z => z_phase(spin, angle),
        _ => SpinOperators::new(spin).rotation(axis, angle),
    }
}

/// Binomial coefficient as a float; exact up to C(56, 28).
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Atomic coherent state |θ, φ⟩.
///
/// c_m = √C(2J, J+m) sin^{J+m}(θ/2) cos^{J−m}(θ/2) e^{−iφ(J+m)}, which equals
/// exp(−iθ(Ĵx sinφ − Ĵy cosφ))|J,−J⟩ exactly, phase included.
pub fn coherent_state(spin: Spin, angles: BlochAngles) -> DickeVector {
    coherent_state_any(spin, angles.theta(), angles.phi())
}

/// The same amplitude formula evaluated at any real θ, φ.
///
/// Outside θ ∈ [0, π] this is still exp(−iθ(Ĵx sinφ − Ĵy cosφ))|J,−J⟩, which
/// the closed-form final states rely on.
pub(crate) fn coherent_state_any(spin: Spin, theta: f64, phi: f64) -> DickeVector {
    let n = spin.two_j();
    let (s, c) = (0.5 * theta).sin_cos();
    let amplitudes = CVector::from_iterator(
        spin.dim(),
        (0..=n).map(|k| {
            let mag = binomial(n, k).sqrt() * s.powi(k as i32) * c.powi((n - k) as i32);
            C64::from_polar(mag, -phi * k as f64)
        }),
    );
    DickeVector { spin, amplitudes }
}

/// Outcome statistics of a projective Ĵz measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementDistribution {
    spin: Spin,
    probabilities: Vec<f64>,
}

impl MeasurementDistribution {
    pub fn spin(&self) -> Spin {
        self.spin
    }

    /// P(m) indexed by k = m + J.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Probability of finding `n_e` atoms in |e⟩ (m = n_e − J).
    pub fn excited_count(&self, n_e: usize) -> f64 {
        self.probabilities.get(n_e).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(k, p)| self.spin.m(k) * p)
            .sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(k, p)| self.spin.m(k).powi(2) * p)
            .sum()
    }
}

/// P(m) = |c_m|² for a normalised state.
pub fn measurement_distribution(state: &DickeVector) -> Result<MeasurementDistribution> {
    let norm2 = state.amplitudes.norm_squared();
    if (norm2 - 1.0).abs() > 1e-10 {
        return Err(invalid(format!("state norm² = {norm2} is not 1")));
    }
    Ok(MeasurementDistribution {
        spin: state.spin,
        probabilities: state.amplitudes.iter().map(|c| c.norm_sqr()).collect(),
    })
}
