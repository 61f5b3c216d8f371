//! The interferometer pulse sequence in the dispersive limit.
//!
//! Each cavity acts as the one-axis-twisting unitary exp(±i(π/2)(Ĵz² − Ĵz)),
//! the Ramsey zones as spin rotations. The whole sequence is
//!
//! ```text
//! |ψ_final⟩ = U_R3 · U_C2 · U_R2(φ) · U_C1 · U_R1 |J, −J⟩
//! ```
//!
//! with U_R1 = U_R3 = exp(iπĴy/2) and U_R2(φ) = exp(iφĴy). With inversion the
//! second cavity runs with the opposite sign and the Ramsey zones R2, R3 pick
//! up the frames exp(±iπĴz).
//!
//! Alongside the unitary pipeline this module carries the closed-form final
//! states and signals, which serve as an independent route in tests.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{invalid, Error, Result};
use crate::spin::{coherent_state_any, z_phase, Axis, DickeVector, Spin, SpinOperators};
use crate::{CMatrix, CVector, C64};

/// Orientation of a cavity interaction: `Forward` is H, `Inverted` is −H.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CavitySign {
    Forward,
    Inverted,
}

impl CavitySign {
    pub fn value(self) -> f64 {
        match self {
            CavitySign::Forward => 1.0,
            CavitySign::Inverted => -1.0,
        }
    }
}

/// One run of the dispersive sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulseSequence {
    pub n_atoms: usize,
    /// Stark phase φ applied in R2 (radians).
    pub phase_shift: f64,
    /// Whether the second cavity interaction is sign-inverted.
    pub inversion: bool,
}

impl PulseSequence {
    pub fn new(n_atoms: usize, phase_shift: f64, inversion: bool) -> Result<Self> {
        if n_atoms == 0 {
            return Err(invalid("pulse sequence needs at least one atom"));
        }
        if !phase_shift.is_finite() {
            return Err(invalid("phase shift must be finite"));
        }
        Ok(PulseSequence {
            n_atoms,
            phase_shift,
            inversion,
        })
    }

    pub fn spin(&self) -> Spin {
        Spin::from_atoms(self.n_atoms)
    }

    fn second_cavity(&self) -> CavitySign {
        if self.inversion {
            CavitySign::Inverted
        } else {
            CavitySign::Forward
        }
    }
}

/// exp(i·s·(π/2)(Ĵz² − Ĵz)), the dispersive cavity at the π/2 pulse condition.
pub fn cavity_cat_unitary(spin: Spin, sign: CavitySign) -> CMatrix {
    let s = sign.value();
    CMatrix::from_diagonal(&CVector::from_iterator(
        spin.dim(),
        spin.m_values()
            .map(|m| C64::from_polar(1.0, s * FRAC_PI_2 * (m * m - m))),
    ))
}

/// exp(iπĴx/2) · exp(iφĴz) · exp(−iπĴx/2), i.e. exp(iφĴy).
pub fn stark_pulse_unitary(ops: &SpinOperators, phi: f64) -> CMatrix {
    let spin = ops.spin();
    ops.rotation(Axis::X, FRAC_PI_2) * z_phase(spin, phi) * ops.rotation(Axis::X, -FRAC_PI_2)
}

/// (U′_R2(φ), U′_R3) = (exp(iπĴz)·U_R2(φ), U_R3·exp(−iπĴz)).
pub fn inverted_sequence_pulses(ops: &SpinOperators, phi: f64) -> (CMatrix, CMatrix) {
    let spin = ops.spin();
    let r2 = z_phase(spin, PI) * stark_pulse_unitary(ops, phi);
    let r3 = ops.rotation(Axis::Y, FRAC_PI_2) * z_phase(spin, -PI);
    (r2, r3)
}

/// The Ramsey-zone unitaries (R1, R2(φ), R3) for a given scheme.
pub fn ramsey_pulses(ops: &SpinOperators, phi: f64, inversion: bool) -> [CMatrix; 3] {
    let r1 = ops.rotation(Axis::Y, FRAC_PI_2);
    if inversion {
        let (r2, r3) = inverted_sequence_pulses(ops, phi);
        [r1, r2, r3]
    } else {
        let r2 = stark_pulse_unitary(ops, phi);
        [r1.clone(), r2, r1]
    }
}

/// Runs the full dispersive sequence from |θ = 0⟩.
pub fn run_dispersive_sequence(seq: &PulseSequence) -> DickeVector {
    let spin = seq.spin();
    let ops = SpinOperators::new(spin);
    let [r1, r2, r3] = ramsey_pulses(&ops, seq.phase_shift, seq.inversion);
    let c1 = cavity_cat_unitary(spin, CavitySign::Forward);
    let c2 = cavity_cat_unitary(spin, seq.second_cavity());
    let u = r3 * c2 * r2 * c1 * r1;
    DickeVector::ground(spin).apply(&u)
}

/// Moments of the pipeline output and the slope of its signal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineMoments {
    pub jz_mean: f64,
    pub jz_second_moment: f64,
    /// ∂⟨Ĵz⟩/∂φ.
    pub slope: f64,
}

impl PipelineMoments {
    /// ΔĴz / |∂⟨Ĵz⟩/∂φ|, +∞ at zero slope.
    pub fn delta_phi(&self) -> f64 {
        uncertainty_ratio(self.jz_second_moment - self.jz_mean * self.jz_mean, self.slope)
    }
}

/// Runs the sequence and differentiates it in φ exactly: U_R2(φ) is a fixed
/// frame times exp(iφĴy), so ∂U_R2/∂φ = U_R2·iĴy.
pub fn pipeline_moments(seq: &PulseSequence) -> PipelineMoments {
    let spin = seq.spin();
    let ops = SpinOperators::new(spin);
    let [r1, r2, r3] = ramsey_pulses(&ops, seq.phase_shift, seq.inversion);
    let c1 = cavity_cat_unitary(spin, CavitySign::Forward);
    let c2 = cavity_cat_unitary(spin, seq.second_cavity());
    let before = c1 * r1 * DickeVector::ground(spin).amplitudes();
    let after = r3 * c2 * r2;
    let psi = &after * &before;
    let dpsi = &after * (ops.j_y() * &before) * C64::i();
    let jz_psi = &ops.j_z * &psi;
    let jz_mean = psi.dotc(&jz_psi).re;
    let slope = 2.0 * jz_psi.dotc(&dpsi).re;
    let floor = SLOPE_ROUNDING * spin.j().max(1.0).powi(2);
    PipelineMoments {
        jz_mean,
        jz_second_moment: jz_psi.norm_squared(),
        slope: if slope.abs() <= floor { 0.0 } else { slope },
    }
}

/// Relative size below which a pipeline slope is rounding noise.
const SLOPE_ROUNDING: f64 = 1e-12;

/// Final state from its closed-form superposition of coherent states.
///
/// Even N: −sin(Nφ/2)|θ=0⟩ + (−1)^{N/2} cos(Nφ/2)|θ=π⟩.
///
/// Odd N, with s = (−1)^{(N−1)/2}:
///
/// ```text
/// no inversion: ½[ |φ,π⟩ + |φ,0⟩ + i·s(|π−φ,π⟩ + |π−φ,0⟩) ]
/// inversion:    ½[ |φ,π⟩ − |φ,0⟩ − i·s(|π−φ,π⟩ − |π−φ,0⟩) ]
/// ```
///
/// equal to the pipeline output up to a global phase. The odd-N forms are
/// only provided for |φ| ≤ π/2.
pub fn closed_form_final_state(seq: &PulseSequence) -> Result<DickeVector> {
    let spin = seq.spin();
    let n = seq.n_atoms;
    let phi = seq.phase_shift;
    if n.is_multiple_of(2) {
        let sign = if (n / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
        let half = 0.5 * n as f64 * phi;
        let mut amps = CVector::zeros(spin.dim());
        amps[0] = C64::new(-half.sin(), 0.0);
        amps[n] = C64::new(sign * half.cos(), 0.0);
        return DickeVector::new(spin, amps);
    }
    if phi.abs() > FRAC_PI_2 {
        return Err(Error::UnsupportedDomain(format!(
            "odd-N closed form requires |phi| <= pi/2, got {phi}"
        )));
    }
    let s = if ((n - 1) / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
    let a = coherent_state_any(spin, phi, PI);
    let b = coherent_state_any(spin, phi, 0.0);
    let c = coherent_state_any(spin, PI - phi, PI);
    let d = coherent_state_any(spin, PI - phi, 0.0);
    let i_s = C64::new(0.0, s);
    let half = C64::new(0.5, 0.0);
    let amps = if seq.inversion {
        (a.amplitudes() - b.amplitudes() - (c.amplitudes() - d.amplitudes()) * i_s) * half
    } else {
        (a.amplitudes() + b.amplitudes() + (c.amplitudes() + d.amplitudes()) * i_s) * half
    };
    DickeVector::new(spin, amps)
}

/// ⟨Ĵz⟩ of the ideal final state: (N/2)cos(Nφ) for even N,
/// ∓(N/2)cos^{N−1}φ for odd N (upper sign without inversion).
pub fn ideal_signal(n_atoms: usize, phi: f64, inversion: bool) -> f64 {
    if n_atoms == 0 {
        return 0.0;
    }
    let n = n_atoms as f64;
    if n_atoms.is_multiple_of(2) {
        0.5 * n * (n * phi).cos()
    } else {
        odd_sign(inversion) * 0.5 * n * phi.cos().powi(n_atoms as i32 - 1)
    }
}

/// ∂⟨Ĵz⟩/∂φ of [`ideal_signal`].
pub fn ideal_signal_slope(n_atoms: usize, phi: f64, inversion: bool) -> f64 {
    if n_atoms <= 1 {
        return 0.0;
    }
    let n = n_atoms as f64;
    if n_atoms.is_multiple_of(2) {
        -0.5 * n * n * (n * phi).sin()
    } else {
        -odd_sign(inversion) * 0.5 * n * (n - 1.0) * phi.cos().powi(n_atoms as i32 - 2) * phi.sin()
    }
}

/// ⟨Ĵz²⟩ of the ideal final state (independent of inversion).
pub fn ideal_second_moment(n_atoms: usize, phi: f64) -> f64 {
    let n = n_atoms as f64;
    if n_atoms.is_multiple_of(2) {
        0.25 * n * n
    } else {
        let (s, c) = phi.sin_cos();
        0.25 * (n * n * c * c + n * s * s)
    }
}

fn odd_sign(inversion: bool) -> f64 {
    if inversion {
        1.0
    } else {
        -1.0
    }
}

/// Single-run phase uncertainty ΔĴz / |∂⟨Ĵz⟩/∂φ|.
///
/// ΔĴz comes from the pipeline final state, the slope from the analytic
/// signal. Returns `f64::INFINITY` where the slope vanishes.
pub fn single_run_sensitivity(n_atoms: usize, phi: f64, inversion: bool) -> Result<f64> {
    let seq = PulseSequence::new(n_atoms, phi, inversion)?;
    let state = run_dispersive_sequence(&seq);
    let slope = ideal_signal_slope(n_atoms, phi, inversion);
    Ok(uncertainty_ratio(state.jz_variance(), slope))
}

/// √variance / |slope| with the +∞ sentinel at zero slope.
pub fn uncertainty_ratio(variance: f64, slope: f64) -> f64 {
    if slope == 0.0 || !slope.is_finite() {
        return f64::INFINITY;
    }
    variance.max(0.0).sqrt() / slope.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{coherent_state, measurement_distribution, BlochAngles};
    use approx::assert_abs_diff_eq;

    fn coh(spin: Spin, theta: f64, phi: f64) -> DickeVector {
        coherent_state(spin, BlochAngles::new(theta, phi).unwrap())
    }

    fn combine(a: &DickeVector, ca: C64, b: &DickeVector, cb: C64) -> DickeVector {
        DickeVector::new(a.spin(), a.amplitudes() * ca + b.amplitudes() * cb).unwrap()
    }

    #[test]
    fn pipeline_moments_match_closed_forms() {
        for n in 1..=12 {
            for inversion in [false, true] {
                for phi in [-1.2, -0.3, 0.0, 0.17, 0.9] {
                    let p = pipeline_moments(&PulseSequence::new(n, phi, inversion).unwrap());
                    assert_abs_diff_eq!(p.jz_mean, ideal_signal(n, phi, inversion), epsilon = 1e-11);
                    assert_abs_diff_eq!(p.jz_second_moment, ideal_second_moment(n, phi), epsilon = 1e-10);
                    assert_abs_diff_eq!(p.slope, ideal_signal_slope(n, phi, inversion), epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn first_cavity_makes_two_component_cats() {
        let r = C64::new(0.5f64.sqrt(), 0.0);
        for n in 1..=14 {
            let spin = Spin::from_atoms(n);
            let ops = SpinOperators::new(spin);
            let after_r1 = DickeVector::ground(spin).apply(&ops.rotation(Axis::Y, FRAC_PI_2));
            let cat = after_r1.apply(&cavity_cat_unitary(spin, CavitySign::Forward));
            let (a, b, sign) = if n % 2 == 0 {
                let s = if (n / 2) % 2 == 0 { 1.0 } else { -1.0 };
                (coh(spin, FRAC_PI_2, FRAC_PI_2), coh(spin, FRAC_PI_2, 1.5 * PI), s)
            } else {
                let s = if ((n - 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
                (coh(spin, FRAC_PI_2, PI), coh(spin, FRAC_PI_2, 0.0), s)
            };
            let expected = combine(
                &a,
                C64::from_polar(1.0, PI / 4.0) * r,
                &b,
                C64::from_polar(sign, -PI / 4.0) * r,
            );
            assert_abs_diff_eq!(expected.norm(), 1.0, epsilon = 1e-12);
            assert!(cat.fidelity(&expected) > 1.0 - 1e-10, "N = {n}");
        }
    }

    #[test]
    fn stark_pulse_phase_imprint() {
        // After R2 the even-N components carry e^{±iNφ/2}; odd-N components
        // are tilted to θ = π/2 ∓ φ.
        let phi = 0.37;
        let r = C64::new(0.5f64.sqrt(), 0.0);
        for n in 2..=12 {
            let spin = Spin::from_atoms(n);
            let ops = SpinOperators::new(spin);
            let state = DickeVector::ground(spin)
                .apply(&ops.rotation(Axis::Y, FRAC_PI_2))
                .apply(&cavity_cat_unitary(spin, CavitySign::Forward))
                .apply(&stark_pulse_unitary(&ops, phi));
            let nf = n as f64;
            let expected = if n % 2 == 0 {
                let s = if (n / 2) % 2 == 0 { 1.0 } else { -1.0 };
                combine(
                    &coh(spin, FRAC_PI_2, FRAC_PI_2),
                    C64::from_polar(1.0, PI / 4.0 + nf * phi / 2.0) * r,
                    &coh(spin, FRAC_PI_2, 1.5 * PI),
                    C64::from_polar(s, -PI / 4.0 - nf * phi / 2.0) * r,
                )
            } else {
                let s = if ((n - 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
                combine(
                    &coh(spin, FRAC_PI_2 - phi, PI),
                    C64::from_polar(1.0, PI / 4.0) * r,
                    &coh(spin, FRAC_PI_2 + phi, 0.0),
                    C64::from_polar(s, -PI / 4.0) * r,
                )
            };
            assert!(state.fidelity(&expected) > 1.0 - 1e-10, "N = {n}");
        }
    }

    #[test]
    fn stark_pulse_is_y_rotation() {
        for n in 0..=12 {
            let ops = SpinOperators::new(Spin::from_atoms(n));
            for phi in [0.0, 0.3, 1.1, 2.9] {
                let diff = stark_pulse_unitary(&ops, phi) - ops.rotation(Axis::Y, phi);
                assert!(diff.norm() < 1e-12, "N = {n}, phi = {phi}");
            }
        }
    }

    #[test]
    fn stark_pi_pulse_swaps_single_atom() {
        let ops = SpinOperators::new(Spin::from_atoms(1));
        let u = stark_pulse_unitary(&ops, PI);
        let out = DickeVector::ground(ops.spin()).apply(&u);
        assert_abs_diff_eq!(out.amplitude(1).norm_sqr(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn cat_unitaries_are_inverse_pair() {
        for n in 0..=15 {
            let spin = Spin::from_atoms(n);
            let prod = cavity_cat_unitary(spin, CavitySign::Forward)
                * cavity_cat_unitary(spin, CavitySign::Inverted);
            assert!((prod - CMatrix::identity(n + 1, n + 1)).norm() < 1e-12);
        }
    }

    #[test]
    fn inverted_pulses_at_zero_phase() {
        for n in [3, 4, 5] {
            let spin = Spin::from_atoms(n);
            let ops = SpinOperators::new(spin);
            let (r2, r3) = inverted_sequence_pulses(&ops, 0.0);
            assert!((&r2 - z_phase(spin, PI)).norm() < 1e-12);
            assert!((z_phase(spin, PI) * z_phase(spin, -PI) - CMatrix::identity(n + 1, n + 1)).norm() < 1e-12);

            let r1 = ops.rotation(Axis::Y, FRAC_PI_2);
            let u = r3
                * cavity_cat_unitary(spin, CavitySign::Inverted)
                * r2
                * cavity_cat_unitary(spin, CavitySign::Forward)
                * r1;
            let out = DickeVector::ground(spin).apply(&u);
            assert!(out.fidelity(&DickeVector::excited(spin)) > 1.0 - 1e-12, "N = {n}");
        }
    }

    #[test]
    fn pipeline_examples() {
        for phi in [-2.0, -0.4, 0.0, 0.13, 1.7] {
            let s = run_dispersive_sequence(&PulseSequence::new(10, phi, false).unwrap());
            assert_abs_diff_eq!(s.jz_moments().0, 5.0 * (10.0 * phi).cos(), epsilon = 1e-10);
            let s = run_dispersive_sequence(&PulseSequence::new(9, phi, false).unwrap());
            assert_abs_diff_eq!(s.jz_moments().0, -4.5 * phi.cos().powi(8), epsilon = 1e-10);
            let s = run_dispersive_sequence(&PulseSequence::new(9, phi, true).unwrap());
            assert_abs_diff_eq!(s.jz_moments().0, 4.5 * phi.cos().powi(8), epsilon = 1e-10);
        }
    }

    #[test]
    fn pipeline_matches_closed_form_signals_on_grid() {
        for n in 1..=20 {
            for k in 0..41 {
                let phi = -PI + 2.0 * PI * k as f64 / 40.0;
                for inversion in [false, true] {
                    let s = run_dispersive_sequence(&PulseSequence::new(n, phi, inversion).unwrap());
                    let (mean, second) = s.jz_moments();
                    assert_abs_diff_eq!(mean, ideal_signal(n, phi, inversion), epsilon = 1e-10);
                    assert_abs_diff_eq!(second, ideal_second_moment(n, phi), epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn inversion_is_invisible_for_even_n() {
        for n in (2..=16).step_by(2) {
            for phi in [-1.3, 0.2, 2.2] {
                let a = run_dispersive_sequence(&PulseSequence::new(n, phi, false).unwrap());
                let b = run_dispersive_sequence(&PulseSequence::new(n, phi, true).unwrap());
                assert!(a.fidelity(&b) > 1.0 - 1e-10);
            }
        }
    }

    #[test]
    fn closed_form_states_match_pipeline() {
        for n in 1..=21 {
            for k in 0..=20 {
                let phi = -FRAC_PI_2 + PI * k as f64 / 20.0;
                for inversion in [false, true] {
                    let seq = PulseSequence::new(n, phi, inversion).unwrap();
                    let cf = closed_form_final_state(&seq).unwrap();
                    assert_abs_diff_eq!(cf.norm(), 1.0, epsilon = 1e-10);
                    let f = cf.fidelity(&run_dispersive_sequence(&seq));
                    assert!(f > 1.0 - 1e-10, "N={n} phi={phi} inv={inversion}: {f}");
                }
            }
        }
    }

    #[test]
    fn closed_form_even_at_zero_is_all_excited() {
        for n in (2..=12).step_by(2) {
            let cf = closed_form_final_state(&PulseSequence::new(n, 0.0, false).unwrap()).unwrap();
            let d = measurement_distribution(&cf).unwrap();
            assert_abs_diff_eq!(d.excited_count(n), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn closed_form_rejects_wide_odd_phase() {
        let seq = PulseSequence::new(9, 2.0, false).unwrap();
        assert!(matches!(closed_form_final_state(&seq), Err(Error::UnsupportedDomain(_))));
        assert!(closed_form_final_state(&PulseSequence::new(10, 2.0, false).unwrap()).is_ok());
    }

    #[test]
    fn even_final_populations_are_fringes() {
        let n = 8;
        for phi in [0.1, 0.5, 1.0] {
            let s = run_dispersive_sequence(&PulseSequence::new(n, phi, false).unwrap());
            let d = measurement_distribution(&s).unwrap();
            let half = n as f64 * phi / 2.0;
            assert_abs_diff_eq!(d.excited_count(n), half.cos().powi(2), epsilon = 1e-12);
            assert_abs_diff_eq!(d.excited_count(0), half.sin().powi(2), epsilon = 1e-12);
        }
    }

    #[test]
    fn sensitivity_examples() {
        assert_abs_diff_eq!(single_run_sensitivity(10, 0.37, false).unwrap(), 0.1, epsilon = 1e-10);
        let odd = single_run_sensitivity(9, 1e-4, false).unwrap();
        assert_abs_diff_eq!(odd, 1.0 / 3.0, epsilon = 1e-6);
        assert_eq!(single_run_sensitivity(10, 0.0, false).unwrap(), f64::INFINITY);
    }

    #[test]
    fn odd_sensitivity_matches_printed_expression_and_finite_difference() {
        let n = 9;
        let phi: f64 = 0.3;
        let nf = n as f64;
        let (s, c) = phi.sin_cos();
        let printed = (nf * nf * (1.0 - c.powi(2 * n as i32 - 2)) - nf * (nf - 1.0) * s * s).sqrt()
            / (nf * (nf - 1.0) * s.abs() * c.abs().powi(n as i32 - 2));
        let h = 1e-6;
        let mean = |p: f64| {
            run_dispersive_sequence(&PulseSequence::new(n, p, false).unwrap())
                .jz_moments()
                .0
        };
        let fd_slope = (mean(phi + h) - mean(phi - h)) / (2.0 * h);
        let state = run_dispersive_sequence(&PulseSequence::new(n, phi, false).unwrap());
        let numeric = state.jz_variance().sqrt() / fd_slope.abs();
        let analytic = single_run_sensitivity(n, phi, false).unwrap();
        assert_abs_diff_eq!(numeric, printed, epsilon = 1e-8);
        assert_abs_diff_eq!(analytic, printed, epsilon = 1e-10);
    }

    #[test]
    fn single_atom_has_no_fringe() {
        for phi in [-1.0, 0.2, 2.0] {
            let s = run_dispersive_sequence(&PulseSequence::new(1, phi, false).unwrap());
            assert_abs_diff_eq!(s.jz_moments().0, -0.5, epsilon = 1e-12);
        }
        assert_eq!(single_run_sensitivity(1, 0.4, false).unwrap(), f64::INFINITY);
    }

    #[test]
    fn slopes_match_finite_differences() {
        let h = 1e-6;
        for n in 1..=15 {
            for inversion in [false, true] {
                for phi in [-2.5, -0.3, 0.05, 0.9] {
                    let fd = (ideal_signal(n, phi + h, inversion) - ideal_signal(n, phi - h, inversion))
                        / (2.0 * h);
                    let an = ideal_signal_slope(n, phi, inversion);
                    assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "N={n} phi={phi}");
                }
            }
        }
    }
}
