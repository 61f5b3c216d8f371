//! Invariant checks shared by the property suite and the acceptance run.

#![allow(dead_code)]

use cat_ifm::dispersive::{closed_form_final_state, run_dispersive_sequence, PulseSequence};
use cat_ifm::exact::{evolve_through_cavity, CavityChannel, CavityOrientation, ExperimentConfig};
use cat_ifm::spin::{coherent_state, measurement_distribution, Axis, BlochAngles, DickeVector, Spin, SpinOperators};
use cat_ifm::CMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

pub const CASES: u32 = 100;

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if ok {
        Ok(())
    } else {
        Err(TestCaseError::fail(what()))
    }
}

fn axis(i: usize) -> Axis {
    [Axis::X, Axis::Y, Axis::Z][i % 3]
}

#[derive(Clone, Debug)]
pub struct SpinCase {
    pub atoms: usize,
    pub axis: usize,
    pub first: f64,
    pub second: f64,
    pub theta: f64,
    pub phi: f64,
}

pub fn spin_cases() -> impl Strategy<Value = SpinCase> {
    (1usize..=16, 0usize..3, -7.0..7.0f64, -7.0..7.0f64, 0.0..=std::f64::consts::PI, 0.0..std::f64::consts::TAU).prop_map(
        |(atoms, axis, first, second, theta, phi)| SpinCase {
            atoms,
            axis,
            first,
            second,
            theta,
            phi,
        },
    )
}

/// Rotations are unitary and compose additively; coherent states, their
/// rotations and the Ramsey pipeline keep unit norm; measurement
/// distributions are probability vectors; the closed-form final states agree
/// with the pipeline.
pub fn spin_invariants(c: &SpinCase) -> Result<(), TestCaseError> {
    let spin = Spin::from_atoms(c.atoms);
    let ops = SpinOperators::new(spin);
    let d = spin.dim();
    let ax = axis(c.axis);
    let u = ops.rotation(ax, c.first);
    let unitarity = (u.adjoint() * &u - CMatrix::identity(d, d)).norm();
    check(unitarity < 1e-10, || format!("rotation not unitary: {unitarity}"))?;
    let composed = (&u * ops.rotation(ax, c.second) - ops.rotation(ax, c.first + c.second)).norm();
    check(composed < 1e-9, || format!("rotations do not compose: {composed}"))?;

    let psi = coherent_state(spin, BlochAngles::new(c.theta, c.phi).unwrap());
    check((psi.norm() - 1.0).abs() < 1e-12, || format!("coherent norm {}", psi.norm()))?;
    let rotated = psi.apply(&u);
    check((rotated.norm() - 1.0).abs() < 1e-10, || format!("rotated norm {}", rotated.norm()))?;
    let dist = measurement_distribution(&rotated).unwrap();
    let total: f64 = dist.probabilities().iter().sum();
    check((total - 1.0).abs() < 1e-10, || format!("distribution sums to {total}"))?;
    check(dist.probabilities().iter().all(|&p| p >= -1e-15), || "negative probability".into())?;

    let phase = c.second.rem_euclid(std::f64::consts::PI) - std::f64::consts::FRAC_PI_2;
    for inversion in [false, true] {
        let seq = PulseSequence::new(c.atoms, phase, inversion).unwrap();
        let out = run_dispersive_sequence(&seq);
        check((out.norm() - 1.0).abs() < 1e-10, || format!("pipeline norm {}", out.norm()))?;
        if let Ok(closed) = closed_form_final_state(&seq) {
            let f = closed.fidelity(&out);
            check(f > 1.0 - 1e-9, || format!("closed form fidelity {f} at N = {}, φ = {phase}", c.atoms))?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ExactCase {
    pub atoms: usize,
    pub velocity: f64,
    pub cavity_decay: f64,
    pub theta: f64,
    pub phi: f64,
    pub inverted: bool,
}

pub fn exact_cases() -> impl Strategy<Value = ExactCase> {
    (
        1usize..=4,
        40.0..=180.0f64,
        prop_oneof![Just(0.0), 0.0..=1e4f64],
        0.0..=std::f64::consts::PI,
        0.0..std::f64::consts::TAU,
        any::<bool>(),
    )
        .prop_map(|(atoms, velocity, cavity_decay, theta, phi, inverted)| ExactCase {
            atoms,
            velocity,
            cavity_decay,
            theta,
            phi,
            inverted,
        })
}

/// One cavity passage returns a density matrix, keeps a lossless joint state
/// pure, and is converged in the step size.
pub fn exact_invariants(c: &ExactCase) -> Result<(), TestCaseError> {
    let spin = Spin::from_atoms(c.atoms);
    let config = ExperimentConfig {
        cavity_decay: c.cavity_decay,
        ..ExperimentConfig::at_velocity(c.velocity).unwrap()
    };
    let orientation = if c.inverted {
        CavityOrientation::Inverted
    } else {
        CavityOrientation::Forward
    };
    let rho = coherent_state(spin, BlochAngles::new(c.theta, c.phi).unwrap()).density_matrix();
    let out = evolve_through_cavity(&rho, &config, orientation).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let trace = out.trace();
    check((trace.re - 1.0).abs() < 1e-8 && trace.im.abs() < 1e-12, || format!("trace {trace}"))?;
    let herm = (&out - out.adjoint()).norm();
    check(herm < 1e-10, || format!("not Hermitian: {herm}"))?;
    let min_eig = out.clone().symmetric_eigenvalues().min();
    check(min_eig > -1e-8, || format!("negative eigenvalue {min_eig}"))?;

    if c.cavity_decay == 0.0 {
        let s = if c.inverted { -1.0 } else { 1.0 };
        let joint = CavityChannel::new(c.atoms, &config, s, s).unwrap().apply_joint(&rho).unwrap();
        check((joint.purity() - 1.0).abs() < 1e-8, || format!("purity {}", joint.purity()))?;
    }

    let steps = CavityChannel::new(c.atoms, &config, 1.0, 1.0).unwrap().steps();
    let finer = ExperimentConfig {
        integrator_steps: Some(2 * steps),
        ..config
    };
    let out_fine = evolve_through_cavity(&rho, &finer, orientation).unwrap();
    let jz = SpinOperators::new(spin).j_z;
    let shift = ((&out - &out_fine) * &jz).trace().norm();
    check(shift < 1e-6, || format!("step halving moves ⟨Ĵz⟩ by {shift}"))?;
    Ok(())
}

/// Runs `property` on `CASES` generated inputs with a fixed seed.
pub fn run_cases<T: std::fmt::Debug>(
    strategy: impl Strategy<Value = T>,
    property: impl Fn(&T) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, proptest::test_runner::TestRng::deterministic_rng(Default::default()));
    runner.run(&strategy, |v| property(&v)).map_err(|e| e.to_string())
}

pub fn dicke_ground(n: usize) -> DickeVector {
    DickeVector::ground(Spin::from_atoms(n))
}
