//! Full Tavis-Cummings dynamics with cavity damping.
//!
//! Each cavity passage is simulated on the joint atom-cavity density matrix,
//! with H(t)/ħ = −s_δ·δ·a†a + s_g·i(Ω(t)/2)(a†Ĵ₋ − aĴ₊) and
//! Ω(t) = Ω₀·exp(−v²t²/w²), over t ∈ [−k·w/v, k·w/v]. The cavity starts in
//! the vacuum and is traced out afterwards.

mod gemm;
mod joint;
mod propagator;

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

pub use joint::{BandedBlocks, BlockLayout, JointOperator, Propagated};
pub use propagator::{CavityDrive, CavityPropagator};

use crate::dispersive::{ramsey_pulses, uncertainty_ratio};
use crate::error::{invalid, Error, Result};
use crate::spin::{z_phase, Axis, DickeVector, Spin, SpinOperators};
use crate::stats::{poisson_probabilities, CurvePoint, CurveSource, SignalCurve};
use crate::{CMatrix, C64};

/// Largest population tolerated in the highest retained Fock level.
pub const LEAKAGE_THRESHOLD: f64 = 1e-6;

/// How the photon-number truncation is chosen for an N-atom run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum FockCutoff {
    /// Smallest cutoff from 4 up whose level population stays below
    /// [`ADAPTIVE_LEVEL_TARGET`]; never above N, where the truncation is
    /// exact.
    Adaptive,
    /// max(4, N + 2).
    Full,
    Fixed(usize),
}

/// Physical and numerical parameters of the exact simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    /// Ω₀ (rad/s).
    pub rabi_peak: f64,
    /// w (m).
    pub waist: f64,
    /// v (m/s).
    pub velocity: f64,
    /// δ (rad/s), magnitude; the second cavity flips its sign when inverted.
    pub detuning: f64,
    /// γ_c (1/s).
    pub cavity_decay: f64,
    /// γ_a (1/s), recorded only.
    pub atomic_decay: f64,
    pub mean_atoms: f64,
    pub efficiency: f64,
    pub fock_cutoff: FockCutoff,
    /// Integration window half-width in units of w/v.
    pub time_window_sigmas: f64,
    /// Steps per cavity passage; `None` picks [`passage_steps`].
    pub integrator_steps: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let (rabi_peak, waist, velocity) = (0.31e6, 6e-3, 40.0);
        ExperimentConfig {
            rabi_peak,
            waist,
            velocity,
            detuning: pulse_condition(rabi_peak, waist, velocity),
            cavity_decay: 1e3,
            atomic_decay: 33.3,
            mean_atoms: 10.0,
            efficiency: 1.0,
            fock_cutoff: FockCutoff::Adaptive,
            time_window_sigmas: 4.0,
            integrator_steps: None,
        }
    }
}

impl ExperimentConfig {
    /// Default parameters at atomic velocity `velocity`, with δ from the
    /// π/2 pulse condition.
    pub fn at_velocity(velocity: f64) -> Result<Self> {
        let base = ExperimentConfig::default();
        Ok(ExperimentConfig {
            velocity,
            detuning: detuning_from_pulse_condition(base.rabi_peak, base.waist, velocity)?,
            ..base
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rabi_peak", self.rabi_peak),
            ("waist", self.waist),
            ("velocity", self.velocity),
            ("time_window_sigmas", self.time_window_sigmas),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.detuning.is_finite() {
            return Err(invalid("detuning must be finite"));
        }
        if !(self.cavity_decay >= 0.0 && self.cavity_decay.is_finite()) {
            return Err(invalid("cavity_decay must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(invalid("efficiency must lie in [0, 1]"));
        }
        if self.mean_atoms.is_nan() || self.mean_atoms <= 0.0 {
            return Err(invalid("mean_atoms must be positive"));
        }
        if self.fock_cutoff == FockCutoff::Fixed(0) {
            return Err(invalid("fock_cutoff must be at least 1"));
        }
        if self.integrator_steps == Some(0) {
            return Err(invalid("integrator_steps must be positive"));
        }
        Ok(())
    }

    /// δ/Ω₀.
    pub fn detuning_ratio(&self) -> f64 {
        self.detuning / self.rabi_peak
    }

    fn drive(&self, detuning_sign: f64, coupling_sign: f64) -> CavityDrive {
        CavityDrive {
            rabi_peak: self.rabi_peak,
            waist: self.waist,
            velocity: self.velocity,
            detuning: self.detuning.abs(),
            cavity_decay: self.cavity_decay,
            window_sigmas: self.time_window_sigmas,
            detuning_sign: detuning_sign * self.detuning.signum(),
            coupling_sign,
        }
    }
}

fn pulse_condition(rabi_peak: f64, waist: f64, velocity: f64) -> f64 {
    rabi_peak * rabi_peak * waist * (PI / 2.0).sqrt() / (2.0 * PI * velocity)
}

/// δ = Ω₀²·w·√(π/2)/(2π·v), which makes ∫Ω(t)²/(4δ) dt = π/2.
pub fn detuning_from_pulse_condition(rabi_peak: f64, waist: f64, velocity: f64) -> Result<f64> {
    if [rabi_peak, waist, velocity].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid("pulse-condition inputs must be positive"));
    }
    Ok(pulse_condition(rabi_peak, waist, velocity))
}

/// Initial step count per passage: enough to resolve the detuning and the
/// collective Rabi frequency over the window.
pub fn default_steps(config: &ExperimentConfig, n_atoms: usize) -> usize {
    let window = 2.0 * config.time_window_sigmas * config.waist / config.velocity;
    let rate = config.detuning.abs() + config.rabi_peak * (n_atoms.max(1) as f64).sqrt();
    ((rate * window / STEP_PHASE).ceil() as usize).max(200)
}

/// Phase advanced per step at the fastest rate in the problem.
const STEP_PHASE: f64 = 4.0;

/// Worst-case trace defect tolerated per passage.
pub const TRACE_DEFECT_TARGET: f64 = 1e-9;

/// Largest |Tr Φ(ρ) − 1| over atomic inputs ρ with the cavity in the vacuum,
/// for the untruncated N-atom passage Φ with `steps` steps.
///
/// Tr Φ(ρ) = Tr(ρ·Φ†(1)), and Φ†(1) restricted to the vacuum is diagonal in
/// the Dicke basis, so the extremes sit on Dicke inputs.
pub fn trace_defect(n_atoms: usize, config: &ExperimentConfig, steps: usize) -> f64 {
    let layout = BlockLayout::new(Spin::from_atoms(n_atoms), n_atoms);
    let prop = CavityPropagator::new(&layout, config.drive(1.0, 1.0), steps);
    prop.pull_back(BandedBlocks::identity(&layout))
        .vacuum_diagonal()
        .into_iter()
        .map(|x| (x - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Steps per passage: `integrator_steps` if set, otherwise [`default_steps`]
/// refined until the [`trace_defect`] is at most [`TRACE_DEFECT_TARGET`].
pub fn passage_steps(n_atoms: usize, config: &ExperimentConfig) -> usize {
    if let Some(s) = config.integrator_steps {
        return s;
    }
    let mut steps = default_steps(config, n_atoms);
    if config.cavity_decay == 0.0 {
        return steps;
    }
    for _ in 0..MAX_STEP_REFINEMENTS {
        let defect = trace_defect(n_atoms, config, steps);
        if defect <= TRACE_DEFECT_TARGET {
            break;
        }
        // Fourth-order error: scale the step count by the fourth root.
        let factor = 1.1 * (defect / TRACE_DEFECT_TARGET).powf(0.25);
        steps = (steps as f64 * factor).ceil() as usize;
    }
    steps
}

const MAX_STEP_REFINEMENTS: usize = 4;

/// Truncation and step count for one N-atom passage, shared by both
/// cavities.
#[derive(Clone, Debug)]
pub struct PassagePlan {
    pub layout: BlockLayout,
    pub steps: usize,
}

/// Picks the step count, then the Fock truncation, for an N-atom passage.
pub fn plan_passage(n_atoms: usize, config: &ExperimentConfig) -> Result<PassagePlan> {
    config.validate()?;
    let steps = passage_steps(n_atoms, config);
    let layout = select_layout_with_steps(n_atoms, config, steps);
    Ok(PassagePlan { layout, steps })
}

/// Whether a cavity runs with H or with −H.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CavityOrientation {
    Forward,
    Inverted,
}

impl CavityOrientation {
    fn sign(self) -> f64 {
        match self {
            CavityOrientation::Forward => 1.0,
            CavityOrientation::Inverted => -1.0,
        }
    }
}

/// Dense H(t)/ħ on the full (2J+1)(cutoff+1) tensor-product space, index
/// k·(cutoff+1) + n. `orientation` multiplies the whole Hamiltonian.
pub fn tavis_cummings_hamiltonian(
    t: f64,
    config: &ExperimentConfig,
    spin_ops: &SpinOperators,
    cutoff: usize,
    orientation: CavityOrientation,
) -> CMatrix {
    let s = orientation.sign();
    let drive = config.drive(1.0, 1.0);
    let fock = cutoff + 1;
    let d = spin_ops.spin().dim();
    let mut a = CMatrix::zeros(fock, fock);
    for n in 1..fock {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    let num = a.adjoint() * &a;
    let id_spin = CMatrix::identity(d, d);
    let ad_jm = spin_ops.j_minus.kronecker(&a.adjoint());
    let a_jp = spin_ops.j_plus.kronecker(&a);
    let detuning = id_spin.kronecker(&num) * C64::new(-s * drive.detuning_sign * drive.detuning, 0.0);
    let coupling = (ad_jm - a_jp) * C64::new(0.0, 0.5 * s * drive.rabi(t));
    detuning + coupling
}

/// Chooses the Fock truncation for an N-atom passage.
///
/// The top-level population depends only on the diagonal excitation blocks,
/// which are unchanged by flipping the sign of δ or of the coupling, so one
/// layout serves both cavities.
pub fn select_layout(n_atoms: usize, config: &ExperimentConfig) -> Result<BlockLayout> {
    Ok(plan_passage(n_atoms, config)?.layout)
}

fn select_layout_with_steps(n_atoms: usize, config: &ExperimentConfig, steps: usize) -> BlockLayout {
    let spin = Spin::from_atoms(n_atoms);
    match config.fock_cutoff {
        FockCutoff::Fixed(c) => BlockLayout::new(spin, c),
        FockCutoff::Full => BlockLayout::new(spin, (n_atoms + 2).max(4)),
        FockCutoff::Adaptive => {
            let levels = photon_level_bounds(n_atoms, config, steps);
            let c = (ADAPTIVE_CUTOFF_MIN..n_atoms)
                .find(|&c| levels[c] <= ADAPTIVE_LEVEL_TARGET)
                .unwrap_or(n_atoms);
            BlockLayout::new(spin, c)
        }
    }
}

/// Smallest cutoff the adaptive rule will pick.
const ADAPTIVE_CUTOFF_MIN: usize = 4;

/// Level population at which the adaptive rule truncates; well below
/// [`LEAKAGE_THRESHOLD`] so that truncation errors in the moments stay small.
pub const ADAPTIVE_LEVEL_TARGET: f64 = 1e-9;

/// For each photon number n, the largest population of level n over the
/// passage, summed over all Dicke inputs, in the untruncated dynamics.
///
/// Level populations depend only on the diagonal of the atomic input in the
/// Dicke basis, so the sum over Dicke states bounds every normalised input.
pub fn photon_level_bounds(n_atoms: usize, config: &ExperimentConfig, steps: usize) -> Vec<f64> {
    level_bounds_on(&BlockLayout::new(Spin::from_atoms(n_atoms), n_atoms), config, steps)
}

fn level_bounds_on(layout: &BlockLayout, config: &ExperimentConfig, steps: usize) -> Vec<f64> {
    let prop = CavityPropagator::new(layout, config.drive(1.0, 1.0), steps);
    let mut worst = vec![0.0f64; layout.cutoff() + 1];
    prop.propagate(BandedBlocks::identity_with_vacuum(layout), |r| {
        for (w, p) in worst.iter_mut().zip(r.level_populations()) {
            *w = w.max(p);
        }
        Ok::<(), ()>(())
    })
    .unwrap_or_else(|()| unreachable!());
    worst
}

/// Fails if some atomic input could push more than [`LEAKAGE_THRESHOLD`]
/// into the top retained Fock level, in either cavity. The adaptive rule
/// already bounds that level by [`ADAPTIVE_LEVEL_TARGET`].
fn check_worst_case_leakage(plan: &PassagePlan, config: &ExperimentConfig) -> Result<()> {
    if !plan.layout.is_truncated() || config.fock_cutoff == FockCutoff::Adaptive {
        return Ok(());
    }
    let cutoff = plan.layout.cutoff();
    let population = level_bounds_on(&plan.layout, config, plan.steps)[cutoff];
    if population > LEAKAGE_THRESHOLD {
        return Err(Error::CutoffTooSmall {
            cutoff,
            population,
            threshold: LEAKAGE_THRESHOLD,
        });
    }
    Ok(())
}

/// One cavity passage as a channel on the atoms.
pub struct CavityChannel {
    propagator: CavityPropagator,
}

impl CavityChannel {
    /// Channel for `n_atoms` with the given detuning and coupling signs.
    pub fn new(n_atoms: usize, config: &ExperimentConfig, detuning_sign: f64, coupling_sign: f64) -> Result<Self> {
        let plan = plan_passage(n_atoms, config)?;
        Ok(CavityChannel::with_plan(&plan, config, detuning_sign, coupling_sign))
    }

    /// Channel on a given truncation and step count.
    pub fn with_plan(plan: &PassagePlan, config: &ExperimentConfig, detuning_sign: f64, coupling_sign: f64) -> Self {
        let drive = config.drive(detuning_sign, coupling_sign);
        CavityChannel {
            propagator: CavityPropagator::new(&plan.layout, drive, plan.steps),
        }
    }

    pub fn cutoff(&self) -> usize {
        self.propagator.layout().cutoff()
    }

    pub fn steps(&self) -> usize {
        self.propagator.steps()
    }

    /// Applies the passage to an atomic density matrix, checking leakage
    /// into the top Fock level after every step.
    pub fn apply(&self, rho_atoms: &CMatrix) -> Result<CMatrix> {
        Ok(self.apply_joint(rho_atoms)?.trace_cavity())
    }

    /// Like [`CavityChannel::apply`] but keeps the cavity.
    pub fn apply_joint(&self, rho_atoms: &CMatrix) -> Result<BandedBlocks> {
        let layout = self.propagator.layout();
        let truncated = layout.is_truncated();
        let cutoff = layout.cutoff();
        let rho = BandedBlocks::with_vacuum(layout, rho_atoms);
        self.propagator.propagate(rho, |r| {
            let population = r.top_level_population();
            if truncated && population > LEAKAGE_THRESHOLD {
                return Err(Error::CutoffTooSmall {
                    cutoff,
                    population,
                    threshold: LEAKAGE_THRESHOLD,
                });
            }
            Ok(())
        })
    }

    /// Heisenberg picture: the atomic observable O′ with
    /// Tr(O′ρ) = Tr(O·channel(ρ)) for every atomic ρ. `observable` must be
    /// Hermitian.
    pub fn pull_back(&self, observable: &CMatrix) -> CMatrix {
        self.pull_back_all(std::slice::from_ref(observable)).remove(0)
    }

    /// [`CavityChannel::pull_back`] for several observables in one pass.
    pub fn pull_back_all(&self, observables: &[CMatrix]) -> Vec<CMatrix> {
        let layout = self.propagator.layout();
        let embedded: Vec<BandedBlocks> = observables
            .iter()
            .map(|o| BandedBlocks::atomic_observable(layout, o, dicke_bandwidth(o)))
            .collect();
        self.propagator
            .pull_back(embedded)
            .iter()
            .map(BandedBlocks::vacuum_expectation)
            .collect()
    }
}

/// Largest |k − k′| with a matrix element above rounding level.
fn dicke_bandwidth(o: &CMatrix) -> usize {
    let floor = 1e-14 * o.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut width = 0;
    for ((r, c), z) in o.iter().enumerate().map(|(i, z)| ((i % o.nrows(), i / o.nrows()), z)) {
        if z.norm() > floor {
            width = width.max(r.abs_diff(c));
        }
    }
    width
}

/// Applies one passage of the exact dynamics to an atomic density matrix.
///
/// `orientation` flips the whole Hamiltonian.
pub fn evolve_through_cavity(
    rho_atoms: &CMatrix,
    config: &ExperimentConfig,
    orientation: CavityOrientation,
) -> Result<CMatrix> {
    let n = rho_atoms.nrows().checked_sub(1).ok_or_else(|| invalid("empty density matrix"))?;
    if rho_atoms.ncols() != rho_atoms.nrows() {
        return Err(invalid("density matrix must be square"));
    }
    let s = orientation.sign();
    CavityChannel::new(n, config, s, s)?.apply(rho_atoms)
}

fn conjugate(u: &CMatrix, rho: &CMatrix) -> CMatrix {
    u * rho * u.adjoint()
}

fn jz_moments_of(rho: &CMatrix, spin: Spin) -> (f64, f64) {
    let mut mean = 0.0;
    let mut second = 0.0;
    for (k, m) in spin.m_values().enumerate() {
        let p = rho[(k, k)].re;
        mean += p * m;
        second += p * m * m;
    }
    (mean, second)
}

/// Second-cavity signs: the physical inversion flips δ only and relies on
/// the exp(±iπĴz) frames in the Ramsey pulses.
fn second_cavity_signs(inversion: bool) -> (f64, f64) {
    if inversion {
        (-1.0, 1.0)
    } else {
        (1.0, 1.0)
    }
}

/// Runs R1, C1, R2(φ), C2, R3 with the exact cavity dynamics and returns
/// (⟨Ĵz⟩, ⟨Ĵz²⟩).
pub fn run_full_experiment_exact(
    n_atoms: usize,
    phi: f64,
    config: &ExperimentConfig,
    inversion: bool,
) -> Result<(f64, f64)> {
    if n_atoms == 0 {
        return Ok((0.0, 0.0));
    }
    let spin = Spin::from_atoms(n_atoms);
    let ops = SpinOperators::new(spin);
    let [r1, r2, r3] = ramsey_pulses(&ops, phi, inversion);
    let plan = plan_passage(n_atoms, config)?;
    let c1 = CavityChannel::with_plan(&plan, config, 1.0, 1.0);
    let (ds, cs) = second_cavity_signs(inversion);
    let c2 = CavityChannel::with_plan(&plan, config, ds, cs);
    let mut rho = DickeVector::ground(spin).density_matrix();
    rho = conjugate(&r1, &rho);
    rho = c1.apply(&rho)?;
    rho = conjugate(&r2, &rho);
    rho = c2.apply(&rho)?;
    rho = conjugate(&r3, &rho);
    Ok(jz_moments_of(&rho, spin))
}

/// Precomputed N-atom experiment for cheap evaluation at many phases.
///
/// The state after C1 is computed once in the Schrödinger picture; Ĵz and
/// Ĵz² after R3 are pulled back through C2 once in the Heisenberg picture.
/// A truncated Fock space is checked up front against the worst-case
/// leakage over all inputs, which covers every phase and both cavities.
pub struct ExactSweep {
    spin: Spin,
    ops: SpinOperators,
    inversion: bool,
    after_first: CMatrix,
    mean_obs: CMatrix,
    second_obs: CMatrix,
    cutoff: usize,
}

/// Everything up to and including C1, which does not depend on the
/// orientation of the second cavity.
struct FirstPassage {
    spin: Spin,
    ops: SpinOperators,
    plan: PassagePlan,
    after_first: CMatrix,
}

impl FirstPassage {
    fn new(n_atoms: usize, config: &ExperimentConfig) -> Result<Self> {
        if n_atoms == 0 {
            return Err(invalid("sweep needs at least one atom"));
        }
        let spin = Spin::from_atoms(n_atoms);
        let ops = SpinOperators::new(spin);
        let r1 = ops.rotation(Axis::Y, PI / 2.0);
        let plan = plan_passage(n_atoms, config)?;
        check_worst_case_leakage(&plan, config)?;
        let c1 = CavityChannel::with_plan(&plan, config, 1.0, 1.0);
        let rho0 = conjugate(&r1, &DickeVector::ground(spin).density_matrix());
        let after_first = c1.apply(&rho0)?;
        Ok(FirstPassage {
            spin,
            ops,
            plan,
            after_first,
        })
    }

    fn sweep(&self, config: &ExperimentConfig, inversion: bool) -> ExactSweep {
        let (spin, ops) = (self.spin, &self.ops);
        let (ds, cs) = second_cavity_signs(inversion);
        let c2 = CavityChannel::with_plan(&self.plan, config, ds, cs);

        // R3 (or U_R3·e^{−iπĴz}); its adjoint action on Ĵz, Ĵz².
        let r3 = if inversion {
            ops.rotation(Axis::Y, PI / 2.0) * z_phase(spin, -PI)
        } else {
            ops.rotation(Axis::Y, PI / 2.0)
        };
        let jz2 = &ops.j_z * &ops.j_z;
        let heis = |o: &CMatrix| r3.adjoint() * o * &r3;
        let frame = if inversion {
            z_phase(spin, PI)
        } else {
            CMatrix::identity(spin.dim(), spin.dim())
        };
        let mut pulled = c2
            .pull_back_all(&[heis(&ops.j_z), heis(&jz2)])
            .into_iter()
            .map(|back| frame.adjoint() * back * &frame);
        let (mean_obs, second_obs) = (pulled.next().unwrap(), pulled.next().unwrap());
        ExactSweep {
            spin,
            inversion,
            mean_obs,
            second_obs,
            after_first: self.after_first.clone(),
            ops: ops.clone(),
            cutoff: self.plan.layout.cutoff(),
        }
    }
}

/// Exact moments and slope at one phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExactPoint {
    pub jz_mean: f64,
    pub jz_second_moment: f64,
    pub slope: f64,
}

impl ExactSweep {
    pub fn new(n_atoms: usize, config: &ExperimentConfig, inversion: bool) -> Result<Self> {
        let first = FirstPassage::new(n_atoms, config)?;
        Ok(first.sweep(config, inversion))
    }

    /// One sweep per entry of `inversions`, sharing the truncation and the
    /// first passage.
    pub fn for_orientations(n_atoms: usize, config: &ExperimentConfig, inversions: &[bool]) -> Result<Vec<Self>> {
        let first = FirstPassage::new(n_atoms, config)?;
        Ok(inversions.iter().map(|&inv| first.sweep(config, inv)).collect())
    }

    pub fn inversion(&self) -> bool {
        self.inversion
    }

    /// Fock cutoff shared by both passages.
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// ⟨Ĵz⟩, ⟨Ĵz²⟩ and ∂⟨Ĵz⟩/∂φ at phase `phi`.
    pub fn point(&self, phi: f64) -> ExactPoint {
        let u = self.ops.rotation(Axis::Y, phi);
        let rho = conjugate(&u, &self.after_first);
        let jy = self.ops.j_y();
        let comm = (&jy * &rho - &rho * &jy) * C64::i();
        let expect = |a: &CMatrix, b: &CMatrix| (a * b).trace().re;
        ExactPoint {
            jz_mean: expect(&rho, &self.mean_obs),
            jz_second_moment: expect(&rho, &self.second_obs),
            slope: expect(&comm, &self.mean_obs),
        }
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }
}

/// Largest N kept when Poisson-averaging exact results: the Poisson tail
/// beyond it carries at most `tail` probability.
pub fn exact_poisson_truncation(mean: f64, tail: f64) -> usize {
    let mut n = 0;
    let mut cumulative = 0.0;
    loop {
        cumulative += poisson_probabilities(mean, n)[n];
        if 1.0 - cumulative <= tail {
            return n;
        }
        n += 1;
    }
}

/// Default Poisson tail dropped from exact averages.
pub const EXACT_POISSON_TAIL: f64 = 1e-4;

/// Per-N exact points on a grid, computed in parallel over N.
pub fn exact_points_per_n(
    n_values: &[usize],
    phi_grid: &[f64],
    config: &ExperimentConfig,
    inversion: bool,
) -> Result<Vec<Vec<ExactPoint>>> {
    Ok(exact_points_per_n_for(n_values, phi_grid, config, &[inversion])?.remove(0))
}

/// [`exact_points_per_n`] for several orientations at once, indexed
/// `[orientation][n][phase]`.
pub fn exact_points_per_n_for(
    n_values: &[usize],
    phi_grid: &[f64],
    config: &ExperimentConfig,
    inversions: &[bool],
) -> Result<Vec<Vec<Vec<ExactPoint>>>> {
    let per_n: Vec<Vec<Vec<ExactPoint>>> = n_values
        .par_iter()
        .map(|&n| {
            if n == 0 {
                let zero = ExactPoint {
                    jz_mean: 0.0,
                    jz_second_moment: 0.0,
                    slope: 0.0,
                };
                return Ok(vec![vec![zero; phi_grid.len()]; inversions.len()]);
            }
            Ok(ExactSweep::for_orientations(n, config, inversions)?
                .iter()
                .map(|sweep| phi_grid.iter().map(|&phi| sweep.point(phi)).collect())
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..inversions.len())
        .map(|o| per_n.iter().map(|by_orientation| by_orientation[o].clone()).collect())
        .collect())
}

/// Combines per-N exact points (indexed by N from 0) into a Poisson-averaged
/// curve with mean `mean`.
pub fn poisson_average_points(
    per_n: &[Vec<ExactPoint>],
    phi_grid: &[f64],
    mean: f64,
) -> Result<SignalCurve> {
    let probs = poisson_probabilities(mean, per_n.len().saturating_sub(1));
    let points: Vec<CurvePoint> = (0..phi_grid.len())
        .map(|i| {
            let (mut m, mut q, mut s) = (0.0, 0.0, 0.0);
            for (p, pts) in probs.iter().zip(per_n) {
                m += p * pts[i].jz_mean;
                q += p * pts[i].jz_second_moment;
                s += p * pts[i].slope;
            }
            CurvePoint {
                jz_mean: m,
                jz_second_moment: q,
                delta_phi: uncertainty_ratio(q - m * m, s),
            }
        })
        .collect();
    Ok(
        SignalCurve::from_points(phi_grid.to_vec(), &points, CurveSource::ExactDynamics)?
            .with_config("mean_atoms", mean)
            .with_config("max_atoms", per_n.len().saturating_sub(1)),
    )
}

/// Poisson-averaged exact curve, dropping a tail of [`EXACT_POISSON_TAIL`].
pub fn exact_poisson_curve(
    mean: f64,
    phi_grid: &[f64],
    config: &ExperimentConfig,
    inversion: bool,
) -> Result<SignalCurve> {
    let n_max = exact_poisson_truncation(mean, EXACT_POISSON_TAIL);
    let n_values: Vec<usize> = (0..=n_max).collect();
    let per_n = exact_points_per_n(&n_values, phi_grid, config, inversion)?;
    Ok(poisson_average_points(&per_n, phi_grid, mean)?
        .with_config("velocity", config.velocity)
        .with_config("detuning", config.detuning)
        .with_config("inversion", inversion))
}

/// Curve for a fixed atom number.
pub fn exact_curve(
    n_atoms: usize,
    phi_grid: &[f64],
    config: &ExperimentConfig,
    inversion: bool,
) -> Result<SignalCurve> {
    let sweep = ExactSweep::new(n_atoms, config, inversion)?;
    let points: Vec<CurvePoint> = phi_grid
        .iter()
        .map(|&phi| {
            let p = sweep.point(phi);
            CurvePoint {
                jz_mean: p.jz_mean,
                jz_second_moment: p.jz_second_moment,
                delta_phi: uncertainty_ratio(p.jz_second_moment - p.jz_mean * p.jz_mean, p.slope),
            }
        })
        .collect();
    Ok(
        SignalCurve::from_points(phi_grid.to_vec(), &points, CurveSource::ExactDynamics)?
            .with_config("n_atoms", n_atoms)
            .with_config("velocity", config.velocity)
            .with_config("detuning", config.detuning)
            .with_config("inversion", inversion),
    )
}
