//! Master-equation propagation through one cavity passage.
//!
//! dρ/dt = −i[H(t), ρ] + γ(aρa† − ½{a†a, ρ}) is split into the no-jump part,
//! generated by G = H − iγ/2·a†a, and the jump term γ·aρa†. The no-jump
//! propagator over each half step is a fourth-order Magnus exponential,
//! block by block; the jump term enters through a Lawson (integrating
//! factor) fourth-order Runge-Kutta step. The Heisenberg-picture step is the
//! exact Hilbert-Schmidt adjoint of the Schrödinger step.

use super::gemm::mul;
use super::joint::{BlockLayout, Propagated};
use crate::{CMatrix, C64};

/// Time-dependent parameters of one cavity passage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CavityDrive {
    pub rabi_peak: f64,
    pub waist: f64,
    pub velocity: f64,
    /// Magnitude of the atom-cavity detuning (rad/s).
    pub detuning: f64,
    pub cavity_decay: f64,
    pub window_sigmas: f64,
    /// ±1 multiplying the detuning term.
    pub detuning_sign: f64,
    /// ±1 multiplying the coupling term.
    pub coupling_sign: f64,
}

impl CavityDrive {
    /// Ω(t) = Ω₀·exp(−v²t²/w²).
    pub fn rabi(&self, t: f64) -> f64 {
        let x = self.velocity * t / self.waist;
        self.rabi_peak * (-x * x).exp()
    }

    /// Half-width of the integration window, k·w/v.
    pub fn half_window(&self) -> f64 {
        self.window_sigmas * self.waist / self.velocity
    }
}

/// Generator pieces of one excitation block: G(t) = D + Ω(t)·C.
struct BlockGenerator {
    diag: CMatrix,
    coupling: CMatrix,
    /// [C, D]
    commutator: CMatrix,
}

/// Precomputed generator for a fixed layout and drive.
pub struct CavityPropagator {
    layout: BlockLayout,
    drive: CavityDrive,
    blocks: Vec<BlockGenerator>,
    steps: usize,
}

const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_9; // √3/6

impl CavityPropagator {
    pub fn new(layout: &BlockLayout, drive: CavityDrive, steps: usize) -> Self {
        let spin = layout.spin();
        let j = spin.j();
        let blocks = (0..layout.blocks())
            .map(|b| {
                let d = layout.block_dim(b);
                let mut diag = CMatrix::zeros(d, d);
                let mut coupling = CMatrix::zeros(d, d);
                for n in 0..d {
                    diag[(n, n)] = C64::new(
                        -drive.detuning_sign * drive.detuning * n as f64,
                        -0.5 * drive.cavity_decay * n as f64,
                    );
                    if n + 1 < d {
                        let m = (b - n) as f64 - j;
                        let g = ((n + 1) as f64).sqrt() * (j * (j + 1.0) - m * (m - 1.0)).max(0.0).sqrt();
                        let v = 0.5 * drive.coupling_sign * g;
                        coupling[(n + 1, n)] = C64::new(0.0, v);
                        coupling[(n, n + 1)] = C64::new(0.0, -v);
                    }
                }
                let commutator = &coupling * &diag - &diag * &coupling;
                BlockGenerator {
                    diag,
                    coupling,
                    commutator,
                }
            })
            .collect();
        CavityPropagator {
            layout: layout.clone(),
            drive,
            blocks,
            steps: steps.max(1),
        }
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn step_size(&self) -> f64 {
        2.0 * self.drive.half_window() / self.steps as f64
    }

    fn step_start(&self, i: usize) -> f64 {
        -self.drive.half_window() + self.step_size() * i as f64
    }

    /// Magnus-4 no-jump propagator blocks over [t0, t0 + tau].
    fn no_jump(&self, t0: f64, tau: f64) -> Vec<CMatrix> {
        let o1 = self.drive.rabi(t0 + tau * (0.5 - GAUSS_OFFSET));
        let o2 = self.drive.rabi(t0 + tau * (0.5 + GAUSS_OFFSET));
        let mi = C64::new(0.0, -1.0);
        let comm_factor = -(3.0f64.sqrt() / 12.0) * tau * tau * (o2 - o1);
        self.blocks
            .iter()
            .map(|g| {
                let avg = (&g.diag * C64::new(2.0, 0.0) + &g.coupling * C64::new(o1 + o2, 0.0))
                    * (mi * 0.5 * tau);
                let exponent = avg + &g.commutator * C64::new(comm_factor, 0.0);
                expm(&exponent)
            })
            .collect()
    }

    /// Schrödinger-picture step.
    fn step<T: Propagated>(&self, y: &T, e1: &[CMatrix], e2: &[CMatrix], h: f64) -> T {
        let gamma = self.drive.cavity_decay;
        let p = y.conjugate(e1);
        let q = y.jump(gamma).conjugate(e1);
        let k2 = p.plus(0.5 * h, &q).jump(gamma);
        let k3 = p.plus(0.5 * h, &k2).jump(gamma);
        let k4 = p.plus(h, &k3).conjugate(e2).jump(gamma);
        let mut u = p;
        u.axpy(h / 6.0, &q);
        u.axpy(h / 3.0, &k2);
        u.axpy(h / 3.0, &k3);
        let mut out = u.conjugate(e2);
        out.axpy(h / 6.0, &k4);
        out
    }

    /// Hilbert-Schmidt adjoint of [`CavityPropagator::step`].
    fn step_adjoint<T: Propagated>(&self, x: &T, e1: &[CMatrix], e2: &[CMatrix], h: f64) -> T {
        let gamma = self.drive.cavity_decay;
        let u_bar = x.conjugate_adjoint(e2);
        let v_bar = x.jump_adjoint(gamma).conjugate_adjoint(e2).scaled(h / 6.0);
        let mut p_bar = u_bar.plus(1.0, &v_bar);
        let mut q_bar = u_bar.scaled(h / 6.0);
        let mut k2_bar = u_bar.scaled(h / 3.0);
        let k3_bar = u_bar.scaled(h / 3.0).plus(h, &v_bar);
        let w_bar = k3_bar.jump_adjoint(gamma);
        p_bar.axpy(1.0, &w_bar);
        k2_bar.axpy(0.5 * h, &w_bar);
        let z_bar = k2_bar.jump_adjoint(gamma);
        p_bar.axpy(1.0, &z_bar);
        q_bar.axpy(0.5 * h, &z_bar);
        let mut out = q_bar.conjugate_adjoint(e1).jump_adjoint(gamma);
        out.axpy(1.0, &p_bar.conjugate_adjoint(e1));
        out
    }

    /// Propagates a state through the window. `observe` sees the state after
    /// every step and may abort by returning an error.
    pub fn propagate<T: Propagated, E>(
        &self,
        mut rho: T,
        mut observe: impl FnMut(&T) -> std::result::Result<(), E>,
    ) -> std::result::Result<T, E> {
        let h = self.step_size();
        for i in 0..self.steps {
            let t = self.step_start(i);
            let e1 = self.no_jump(t, 0.5 * h);
            let e2 = self.no_jump(t + 0.5 * h, 0.5 * h);
            rho = self.step(&rho, &e1, &e2, h);
            observe(&rho)?;
        }
        Ok(rho)
    }

    /// Pulls an observable back from the end of the window to its start.
    pub fn pull_back<T: Propagated>(&self, mut obs: T) -> T {
        let h = self.step_size();
        for i in (0..self.steps).rev() {
            let t = self.step_start(i);
            let e1 = self.no_jump(t, 0.5 * h);
            let e2 = self.no_jump(t + 0.5 * h, 0.5 * h);
            obs = self.step_adjoint(&obs, &e1, &e2, h);
        }
        obs
    }
}

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
/// Largest 1-norms for which each Padé degree is accurate to unit roundoff.
const PADE_THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
];
const PADE_THETA_13: f64 = 5.371920351148152;

fn one_norm(a: &CMatrix) -> f64 {
    a.column_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

fn scale_add(terms: &[(f64, &CMatrix)], identity: f64, d: usize) -> CMatrix {
    let mut out = CMatrix::identity(d, d) * C64::new(identity, 0.0);
    for (b, m) in terms {
        out.zip_apply(*m, |x, y| *x += y * *b);
    }
    out
}

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant, choosing the degree from the 1-norm.
pub(crate) fn expm(a: &CMatrix) -> CMatrix {
    let d = a.nrows();
    let norm = one_norm(a);
    let a2 = mul(a, a);
    for &(m, theta) in &PADE_THETA {
        if norm <= theta {
            let b: &[f64] = match m {
                3 => &PADE_3,
                5 => &PADE_5,
                7 => &PADE_7,
                _ => &PADE_9,
            };
            // Even powers A², A⁴, ...
            let mut powers = vec![a2.clone()];
            while powers.len() < m / 2 {
                let next = mul(powers.last().unwrap(), &a2);
                powers.push(next);
            }
            let odd: Vec<(f64, &CMatrix)> = (1..=m / 2).map(|j| (b[2 * j + 1], &powers[j - 1])).collect();
            let even: Vec<(f64, &CMatrix)> = (1..=m / 2).map(|j| (b[2 * j], &powers[j - 1])).collect();
            let u = mul(a, &scale_add(&odd, b[1], d));
            let v = scale_add(&even, b[0], d);
            return pade_quotient(&u, &v);
        }
    }
    let s = if norm > PADE_THETA_13 {
        (norm / PADE_THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let scale = C64::new(0.5f64.powi(s), 0.0);
    let a1 = a * scale;
    let a2 = &a2 * (scale * scale);
    let a4 = mul(&a2, &a2);
    let a6 = mul(&a4, &a2);
    let b = &PADE_13;
    let u_inner = mul(&a6, &scale_add(&[(b[13], &a6), (b[11], &a4), (b[9], &a2)], 0.0, d));
    let u = mul(&a1, &scale_add(&[(1.0, &u_inner), (b[7], &a6), (b[5], &a4), (b[3], &a2)], b[1], d));
    let v_inner = mul(&a6, &scale_add(&[(b[12], &a6), (b[10], &a4), (b[8], &a2)], 0.0, d));
    let v = scale_add(&[(1.0, &v_inner), (b[6], &a6), (b[4], &a4), (b[2], &a2)], b[0], d);
    let mut r = pade_quotient(&u, &v);
    for _ in 0..s {
        r = mul(&r, &r);
    }
    r
}

/// (V − U)⁻¹(V + U).
fn pade_quotient(u: &CMatrix, v: &CMatrix) -> CMatrix {
    (v - u).lu().solve(&(v + u)).expect("Padé denominator is invertible within its degree bound")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::joint::{BandedBlocks, JointOperator};
    use crate::spin::{coherent_state, BlochAngles, Spin};
    use approx::assert_abs_diff_eq;

    fn drive(gamma: f64) -> CavityDrive {
        CavityDrive {
            rabi_peak: 0.31e6,
            waist: 6e-3,
            velocity: 180.0,
            detuning: 0.64e6,
            cavity_decay: gamma,
            window_sigmas: 4.0,
            detuning_sign: 1.0,
            coupling_sign: 1.0,
        }
    }

    #[test]
    fn heisenberg_step_is_exact_adjoint() {
        let spin = Spin::from_atoms(3);
        let layout = BlockLayout::new(spin, 3);
        let prop = CavityPropagator::new(&layout, drive(5e4), 40);
        let psi = coherent_state(spin, BlochAngles::new(1.2, 0.3).unwrap());
        let rho = JointOperator::pure_with_vacuum(&layout, &psi);
        let ops = crate::spin::SpinOperators::new(spin);
        let obs = JointOperator::atomic_observable(&layout, &(&ops.j_z * &ops.j_x()));
        let forward = prop.propagate(rho.clone(), |_| Ok::<(), ()>(())).unwrap();
        let lhs = obs.inner(&forward);
        let rhs = prop.pull_back(obs).inner(&rho);
        assert_abs_diff_eq!(lhs.re, rhs.re, epsilon = 1e-12);
        assert_abs_diff_eq!(lhs.im, rhs.im, epsilon = 1e-12);
    }

    #[test]
    fn pade_exponential_matches_reference() {
        for (d, scale) in [(1, 3.0), (4, 0.01), (6, 0.2), (9, 0.8), (12, 1.9), (17, 4.0), (20, 30.0)] {
            let a = CMatrix::from_fn(d, d, |r, c| {
                C64::new((0.7 * r as f64 + 1.3 * c as f64).sin(), (0.4 * (r * c) as f64).cos() - 0.5)
            });
            let a = &a * C64::new(scale / one_norm(&a), 0.0);
            let reference = a.clone().exp();
            let err = (expm(&a) - &reference).norm() / reference.norm();
            assert!(err < 1e-13, "d = {d}, ‖A‖₁ = {scale}: {err:e}");
        }
    }

    #[test]
    fn banded_blocks_follow_dense_operator() {
        let spin = Spin::from_atoms(5);
        let layout = BlockLayout::new(spin, 2);
        let prop = CavityPropagator::new(&layout, drive(5e4), 40);
        let ops = crate::spin::SpinOperators::new(spin);
        let rho = coherent_state(spin, BlochAngles::new(1.2, 0.3).unwrap()).density_matrix();

        let dense = prop.propagate(JointOperator::with_vacuum(&layout, &rho), |_| Ok::<(), ()>(())).unwrap();
        let banded = prop.propagate(BandedBlocks::with_vacuum(&layout, &rho), |_| Ok::<(), ()>(())).unwrap();
        assert!((dense.matrix() - banded.to_joint().matrix()).norm() < 1e-13);
        assert!((dense.trace_cavity() - banded.trace_cavity()).norm() < 1e-13);
        assert_abs_diff_eq!(dense.purity(), banded.purity(), epsilon = 1e-13);
        assert_abs_diff_eq!(dense.photon_number(), banded.photon_number(), epsilon = 1e-13);
        assert_abs_diff_eq!(dense.top_level_population(), banded.top_level_population(), epsilon = 1e-15);

        let jx = ops.j_x();
        for (obs, width) in [(jx.clone(), 1), (&jx * &jx, 2)] {
            let dense = prop.pull_back(JointOperator::atomic_observable(&layout, &obs));
            let banded = prop.pull_back(BandedBlocks::atomic_observable(&layout, &obs, width));
            assert!((dense.vacuum_expectation() - banded.vacuum_expectation()).norm() < 1e-12);
        }
    }
}
