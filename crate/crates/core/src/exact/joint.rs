//! Joint atom-cavity operators stored by excitation-number block.
//!
//! The Tavis-Cummings Hamiltonian conserves K = k + n, where k = J + m counts
//! excited atoms and n photons. Starting from the vacuum, K never exceeds
//! 2J and photon loss only lowers it, so the reachable space is
//! ⊕_{K=0}^{2J} span{|k = K − n, n⟩ : 0 ≤ n ≤ min(K, cutoff)}.
//!
//! Operators are kept as one dense matrix whose rows and columns are grouped
//! by K, so conjugation by a block-diagonal propagator is two passes of
//! small-by-wide products.

use super::gemm::mul;
use crate::spin::{DickeVector, Spin};
use crate::{CMatrix, C64};

/// Index bookkeeping for the block-structured joint space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    spin: Spin,
    cutoff: usize,
    offsets: Vec<usize>,
    dims: Vec<usize>,
}

impl BlockLayout {
    pub fn new(spin: Spin, cutoff: usize) -> Self {
        let blocks = spin.dim();
        let mut offsets = Vec::with_capacity(blocks);
        let mut dims = Vec::with_capacity(blocks);
        let mut off = 0;
        for k in 0..blocks {
            let d = k.min(cutoff) + 1;
            offsets.push(off);
            dims.push(d);
            off += d;
        }
        BlockLayout {
            spin,
            cutoff,
            offsets,
            dims,
        }
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0) + self.dims.last().copied().unwrap_or(0)
    }

    pub fn block_dim(&self, block: usize) -> usize {
        self.dims[block]
    }

    pub fn offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    /// Global index of |k, n⟩, if it lies in the truncated space.
    pub fn index(&self, excited: usize, photons: usize) -> Option<usize> {
        let block = excited + photons;
        if block >= self.blocks() || photons > self.cutoff {
            return None;
        }
        Some(self.offsets[block] + photons)
    }

    /// Whether the truncation can be reached at all; cutoffs at or above 2J
    /// are exact.
    pub fn is_truncated(&self) -> bool {
        self.cutoff < self.spin.two_j()
    }
}

/// Operator on the truncated joint space (density matrix or observable).
#[derive(Clone, Debug, PartialEq)]
pub struct JointOperator {
    layout: BlockLayout,
    matrix: CMatrix,
}

impl JointOperator {
    pub fn zeros(layout: &BlockLayout) -> Self {
        let d = layout.dim();
        JointOperator {
            layout: layout.clone(),
            matrix: CMatrix::zeros(d, d),
        }
    }

    /// ρ_atoms ⊗ |0⟩⟨0|.
    pub fn with_vacuum(layout: &BlockLayout, atoms: &CMatrix) -> Self {
        let mut out = JointOperator::zeros(layout);
        let d = layout.spin().dim();
        for k in 0..d {
            for kp in 0..d {
                out.matrix[(layout.offset(k), layout.offset(kp))] = atoms[(k, kp)];
            }
        }
        out
    }

    /// |ψ⟩⟨ψ| ⊗ |0⟩⟨0|.
    pub fn pure_with_vacuum(layout: &BlockLayout, state: &DickeVector) -> Self {
        JointOperator::with_vacuum(layout, &state.density_matrix())
    }

    /// O_atoms ⊗ 1_cavity, restricted to the reachable space.
    pub fn atomic_observable(layout: &BlockLayout, observable: &CMatrix) -> Self {
        let mut out = JointOperator::zeros(layout);
        let d = layout.spin().dim();
        for n in 0..=layout.cutoff() {
            for k in 0..d {
                let Some(r) = layout.index(k, n) else { continue };
                for kp in 0..d {
                    if let Some(c) = layout.index(kp, n) {
                        out.matrix[(r, c)] = observable[(k, kp)];
                    }
                }
            }
        }
        out
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// Partial trace over the cavity.
    pub fn trace_cavity(&self) -> CMatrix {
        let l = &self.layout;
        let d = l.spin().dim();
        let mut out = CMatrix::zeros(d, d);
        for n in 0..=l.cutoff() {
            for k in 0..d {
                let Some(r) = l.index(k, n) else { continue };
                for kp in 0..d {
                    if let Some(c) = l.index(kp, n) {
                        out[(k, kp)] += self.matrix[(r, c)];
                    }
                }
            }
        }
        out
    }

    /// ⟨0| X |0⟩ on the atoms, the vacuum-projected block of an observable.
    pub fn vacuum_expectation(&self) -> CMatrix {
        let l = &self.layout;
        let d = l.spin().dim();
        CMatrix::from_fn(d, d, |k, kp| self.matrix[(l.offset(k), l.offset(kp))])
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// Population of the highest retained Fock level.
    pub fn top_level_population(&self) -> f64 {
        let l = &self.layout;
        let c = l.cutoff();
        (c..l.blocks())
            .map(|k| self.matrix[(l.offset(k) + c, l.offset(k) + c)].re)
            .sum()
    }

    /// Mean photon number.
    pub fn photon_number(&self) -> f64 {
        let l = &self.layout;
        (0..l.blocks())
            .flat_map(|b| (0..l.block_dim(b)).map(move |n| (b, n)))
            .map(|(b, n)| n as f64 * self.matrix[(l.offset(b) + n, l.offset(b) + n)].re)
            .sum()
    }

    /// Tr(ρ²).
    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Tr(A†B) over the joint space.
    pub fn inner(&self, other: &JointOperator) -> C64 {
        self.matrix.dotc(&other.matrix)
    }

    fn sandwich(&self, blocks: &[CMatrix], adjoint: bool) -> JointOperator {
        let l = &self.layout;
        let d = l.dim();
        let mut left = CMatrix::zeros(d, d);
        for (b, e) in blocks.iter().enumerate() {
            let (off, n) = (l.offset(b), l.block_dim(b));
            let rows = self.matrix.rows(off, n);
            let prod = if adjoint { e.ad_mul(&rows) } else { e * rows };
            left.rows_mut(off, n).copy_from(&prod);
        }
        let mut out = CMatrix::zeros(d, d);
        for (b, e) in blocks.iter().enumerate() {
            let (off, n) = (l.offset(b), l.block_dim(b));
            let cols = left.columns(off, n);
            let prod = if adjoint { cols * e } else { cols * e.adjoint() };
            out.columns_mut(off, n).copy_from(&prod);
        }
        JointOperator {
            layout: l.clone(),
            matrix: out,
        }
    }
}

/// Linear operations the integrator needs from a propagated operator.
///
/// [`JointOperator`] is the dense reference; [`BandedBlocks`] is what the
/// channels use.
pub trait Propagated: Clone {
    /// B ↦ E B E† with E block diagonal.
    fn conjugate(&self, blocks: &[CMatrix]) -> Self;
    /// B ↦ E† B E.
    fn conjugate_adjoint(&self, blocks: &[CMatrix]) -> Self;
    /// rate · a B a†.
    fn jump(&self, rate: f64) -> Self;
    /// rate · a† B a, the Hilbert-Schmidt adjoint of `jump`.
    fn jump_adjoint(&self, rate: f64) -> Self;
    /// self += factor · other.
    fn axpy(&mut self, factor: f64, other: &Self);
    fn scaled(&self, factor: f64) -> Self;

    fn plus(&self, factor: f64, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(factor, other);
        out
    }
}

impl Propagated for JointOperator {
    fn conjugate(&self, blocks: &[CMatrix]) -> JointOperator {
        self.sandwich(blocks, false)
    }

    fn conjugate_adjoint(&self, blocks: &[CMatrix]) -> JointOperator {
        self.sandwich(blocks, true)
    }

    fn jump(&self, rate: f64) -> JointOperator {
        let mut out = JointOperator::zeros(&self.layout);
        if rate == 0.0 {
            return out;
        }
        let l = &self.layout;
        for b in 0..l.blocks().saturating_sub(1) {
            for bp in 0..l.blocks() - 1 {
                let nmax = l.block_dim(b + 1);
                let npmax = l.block_dim(bp + 1);
                for n in 1..nmax {
                    let src_r = l.offset(b + 1) + n;
                    let dst_r = l.offset(b) + n - 1;
                    let sn = (n as f64).sqrt();
                    for np in 1..npmax {
                        let f = rate * sn * (np as f64).sqrt();
                        out.matrix[(dst_r, l.offset(bp) + np - 1)] =
                            self.matrix[(src_r, l.offset(bp + 1) + np)] * f;
                    }
                }
            }
        }
        out
    }

    fn jump_adjoint(&self, rate: f64) -> JointOperator {
        let mut out = JointOperator::zeros(&self.layout);
        if rate == 0.0 {
            return out;
        }
        let l = &self.layout;
        for b in 0..l.blocks().saturating_sub(1) {
            for bp in 0..l.blocks() - 1 {
                let nmax = l.block_dim(b + 1);
                let npmax = l.block_dim(bp + 1);
                for n in 1..nmax {
                    let dst_r = l.offset(b + 1) + n;
                    let src_r = l.offset(b) + n - 1;
                    let sn = (n as f64).sqrt();
                    for np in 1..npmax {
                        let f = rate * sn * (np as f64).sqrt();
                        out.matrix[(dst_r, l.offset(bp + 1) + np)] =
                            self.matrix[(src_r, l.offset(bp) + np - 1)] * f;
                    }
                }
            }
        }
        out
    }

    fn axpy(&mut self, factor: f64, other: &JointOperator) {
        self.matrix.zip_apply(&other.matrix, |a, b| *a += b * factor);
    }

    fn scaled(&self, factor: f64) -> JointOperator {
        JointOperator {
            layout: self.layout.clone(),
            matrix: &self.matrix * C64::new(factor, 0.0),
        }
    }
}

/// A Hermitian operator stored as its excitation blocks (K, K + Δ) for
/// 0 ≤ Δ ≤ width; the blocks below the diagonal are their adjoints.
///
/// Block-diagonal conjugation and the jump term both keep K − K′ fixed, so
/// every band evolves on its own and a narrow band stays narrow. Width 0
/// is enough for photon-number populations.
#[derive(Clone, Debug, PartialEq)]
pub struct BandedBlocks {
    layout: BlockLayout,
    /// `bands[Δ][K]` is block (K, K + Δ).
    bands: Vec<Vec<CMatrix>>,
}

impl BandedBlocks {
    pub fn zeros(layout: &BlockLayout, width: usize) -> Self {
        let b = layout.blocks();
        let bands = (0..=width.min(b - 1))
            .map(|delta| {
                (0..b - delta)
                    .map(|k| CMatrix::zeros(layout.block_dim(k), layout.block_dim(k + delta)))
                    .collect()
            })
            .collect();
        BandedBlocks {
            layout: layout.clone(),
            bands,
        }
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn width(&self) -> usize {
        self.bands.len() - 1
    }

    /// ρ_atoms ⊗ |0⟩⟨0| for a Hermitian ρ_atoms, keeping every band.
    pub fn with_vacuum(layout: &BlockLayout, atoms: &CMatrix) -> Self {
        let mut out = BandedBlocks::zeros(layout, layout.blocks() - 1);
        for (delta, band) in out.bands.iter_mut().enumerate() {
            for (k, block) in band.iter_mut().enumerate() {
                block[(0, 0)] = atoms[(k, k + delta)];
            }
        }
        out
    }

    /// O_atoms ⊗ 1_cavity for a Hermitian O_atoms; Dicke matrix elements
    /// more than `width` off the diagonal are dropped.
    pub fn atomic_observable(layout: &BlockLayout, observable: &CMatrix, width: usize) -> Self {
        let mut out = BandedBlocks::zeros(layout, width);
        let c = layout.cutoff();
        for (delta, band) in out.bands.iter_mut().enumerate() {
            for (k, block) in band.iter_mut().enumerate() {
                for n in 0..=c.min(k) {
                    block[(n, n)] = observable[(k - n, k + delta - n)];
                }
            }
        }
        out
    }

    /// 1_atoms ⊗ |0⟩⟨0|, the sum of all Dicke inputs.
    pub fn identity_with_vacuum(layout: &BlockLayout) -> Self {
        let mut out = BandedBlocks::zeros(layout, 0);
        for b in &mut out.bands[0] {
            b[(0, 0)] = C64::new(1.0, 0.0);
        }
        out
    }

    /// The identity on the whole truncated space.
    pub fn identity(layout: &BlockLayout) -> Self {
        let mut out = BandedBlocks::zeros(layout, 0);
        for b in &mut out.bands[0] {
            b.fill_with_identity();
        }
        out
    }

    /// ⟨k, 0|X|k, 0⟩ for every Dicke index k.
    pub fn vacuum_diagonal(&self) -> Vec<f64> {
        self.bands[0].iter().map(|b| b[(0, 0)].re).collect()
    }

    /// ⟨0| X |0⟩ on the atoms, the vacuum-projected block of an observable.
    pub fn vacuum_expectation(&self) -> CMatrix {
        let d = self.layout.spin().dim();
        let mut out = CMatrix::zeros(d, d);
        for (delta, band) in self.bands.iter().enumerate() {
            for (k, block) in band.iter().enumerate() {
                out[(k, k + delta)] = block[(0, 0)];
                out[(k + delta, k)] = block[(0, 0)].conj();
            }
        }
        out
    }

    /// Partial trace over the cavity.
    pub fn trace_cavity(&self) -> CMatrix {
        let d = self.layout.spin().dim();
        let c = self.layout.cutoff();
        let mut out = CMatrix::zeros(d, d);
        for (delta, band) in self.bands.iter().enumerate() {
            for k in 0..band.len() {
                let mut sum = C64::new(0.0, 0.0);
                for n in 0..=c.min(band.len() - 1 - k) {
                    sum += band[k + n][(n, n)];
                }
                out[(k, k + delta)] = sum;
                out[(k + delta, k)] = sum.conj();
            }
        }
        out
    }

    /// Population of each photon number n = 0..=cutoff.
    pub fn level_populations(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.cutoff() + 1];
        for b in &self.bands[0] {
            for n in 0..b.nrows() {
                out[n] += b[(n, n)].re;
            }
        }
        out
    }

    /// Population of the highest retained Fock level.
    pub fn top_level_population(&self) -> f64 {
        let c = self.layout.cutoff();
        self.bands[0].iter().filter(|b| b.nrows() > c).map(|b| b[(c, c)].re).sum()
    }

    /// Mean photon number.
    pub fn photon_number(&self) -> f64 {
        self.level_populations().iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn trace(&self) -> f64 {
        self.bands[0].iter().map(|m| m.trace().re).sum()
    }

    /// Tr(ρ²).
    pub fn purity(&self) -> f64 {
        self.bands
            .iter()
            .enumerate()
            .map(|(delta, band)| {
                let w = if delta == 0 { 1.0 } else { 2.0 };
                w * band.iter().map(|b| b.norm_squared()).sum::<f64>()
            })
            .sum()
    }

    /// The same operator as a dense [`JointOperator`].
    pub fn to_joint(&self) -> JointOperator {
        let l = &self.layout;
        let mut out = JointOperator::zeros(l);
        for (delta, band) in self.bands.iter().enumerate() {
            for (k, block) in band.iter().enumerate() {
                let (r, c) = (l.offset(k), l.offset(k + delta));
                out.matrix.view_mut((r, c), block.shape()).copy_from(block);
                if delta > 0 {
                    out.matrix.view_mut((c, r), (block.ncols(), block.nrows())).copy_from(&block.adjoint());
                }
            }
        }
        out
    }

    /// Block (K, K′) ↦ left[K]·X·right[K′], one block row and then one
    /// block column at a time so that each product is a single wide one.
    fn sandwich(&self, left: &[CMatrix], right: &[CMatrix]) -> Self {
        let l = &self.layout;
        let b = l.blocks();
        let mut out = self.clone();
        for (k, left_k) in left.iter().enumerate().take(b) {
            let deltas = 0..self.bands.len().min(b - k);
            let width: usize = deltas.clone().map(|delta| l.block_dim(k + delta)).sum();
            let mut panel = CMatrix::zeros(l.block_dim(k), width);
            let mut col = 0;
            for delta in deltas.clone() {
                let w = l.block_dim(k + delta);
                panel.columns_mut(col, w).copy_from(&self.bands[delta][k]);
                col += w;
            }
            let product = mul(left_k, &panel);
            col = 0;
            for delta in deltas {
                let w = l.block_dim(k + delta);
                out.bands[delta][k].copy_from(&product.columns(col, w));
                col += w;
            }
        }
        for (kc, right_kc) in right.iter().enumerate().take(b) {
            let deltas = 0..self.bands.len().min(kc + 1);
            let height: usize = deltas.clone().map(|delta| l.block_dim(kc - delta)).sum();
            let mut panel = CMatrix::zeros(height, l.block_dim(kc));
            let mut row = 0;
            for delta in deltas.clone() {
                let h = l.block_dim(kc - delta);
                panel.rows_mut(row, h).copy_from(&out.bands[delta][kc - delta]);
                row += h;
            }
            let product = mul(&panel, right_kc);
            row = 0;
            for delta in deltas {
                let h = l.block_dim(kc - delta);
                out.bands[delta][kc - delta].copy_from(&product.rows(row, h));
                row += h;
            }
        }
        out
    }

    fn map_bands(&self, f: impl Fn(usize, usize, &CMatrix) -> CMatrix) -> Self {
        BandedBlocks {
            layout: self.layout.clone(),
            bands: self
                .bands
                .iter()
                .enumerate()
                .map(|(delta, band)| band.iter().enumerate().map(|(k, b)| f(delta, k, b)).collect())
                .collect(),
        }
    }
}

impl Propagated for BandedBlocks {
    fn conjugate(&self, e: &[CMatrix]) -> Self {
        let e_adj: Vec<CMatrix> = e.iter().map(|m| m.adjoint()).collect();
        self.sandwich(e, &e_adj)
    }

    fn conjugate_adjoint(&self, e: &[CMatrix]) -> Self {
        let e_adj: Vec<CMatrix> = e.iter().map(|m| m.adjoint()).collect();
        self.sandwich(&e_adj, e)
    }

    fn jump(&self, rate: f64) -> Self {
        let mut out = BandedBlocks::zeros(&self.layout, self.width());
        for (src, dst) in self.bands.iter().zip(&mut out.bands) {
            for k in 0..src.len().saturating_sub(1) {
                let from = &src[k + 1];
                let to = &mut dst[k];
                for n in 1..from.nrows() {
                    for np in 1..from.ncols() {
                        to[(n - 1, np - 1)] = from[(n, np)] * (rate * ((n * np) as f64).sqrt());
                    }
                }
            }
        }
        out
    }

    fn jump_adjoint(&self, rate: f64) -> Self {
        let mut out = BandedBlocks::zeros(&self.layout, self.width());
        for (src, dst) in self.bands.iter().zip(&mut out.bands) {
            for k in 0..src.len().saturating_sub(1) {
                let from = &src[k];
                let to = &mut dst[k + 1];
                for n in 1..to.nrows() {
                    for np in 1..to.ncols() {
                        to[(n, np)] = from[(n - 1, np - 1)] * (rate * ((n * np) as f64).sqrt());
                    }
                }
            }
        }
        out
    }

    fn axpy(&mut self, factor: f64, other: &Self) {
        for (a, b) in self.bands.iter_mut().flatten().zip(other.bands.iter().flatten()) {
            a.zip_apply(b, |x, y| *x += y * factor);
        }
    }

    fn scaled(&self, factor: f64) -> Self {
        let f = C64::new(factor, 0.0);
        self.map_bands(|_, _, b| b * f)
    }
}

/// Several operators carried through the same passage.
impl<T: Propagated> Propagated for Vec<T> {
    fn conjugate(&self, e: &[CMatrix]) -> Self {
        self.iter().map(|x| x.conjugate(e)).collect()
    }

    fn conjugate_adjoint(&self, e: &[CMatrix]) -> Self {
        self.iter().map(|x| x.conjugate_adjoint(e)).collect()
    }

    fn jump(&self, rate: f64) -> Self {
        self.iter().map(|x| x.jump(rate)).collect()
    }

    fn jump_adjoint(&self, rate: f64) -> Self {
        self.iter().map(|x| x.jump_adjoint(rate)).collect()
    }

    fn axpy(&mut self, factor: f64, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            a.axpy(factor, b);
        }
    }

    fn scaled(&self, factor: f64) -> Self {
        self.iter().map(|x| x.scaled(factor)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{coherent_state, BlochAngles};
    use approx::assert_abs_diff_eq;

    #[test]
    fn layout_counts() {
        let l = BlockLayout::new(Spin::from_atoms(4), 10);
        assert_eq!(l.dim(), 1 + 2 + 3 + 4 + 5);
        assert!(!l.is_truncated());
        let t = BlockLayout::new(Spin::from_atoms(4), 1);
        assert_eq!(t.dim(), 1 + 2 + 2 + 2 + 2);
        assert!(t.is_truncated());
        assert_eq!(t.index(2, 1), Some(t.offset(3) + 1));
        assert_eq!(t.index(2, 2), None);
        assert_eq!(t.index(4, 1), None);
    }

    #[test]
    fn embed_and_trace_round_trip() {
        let spin = Spin::from_atoms(5);
        let l = BlockLayout::new(spin, 3);
        let psi = coherent_state(spin, BlochAngles::new(1.1, 0.4).unwrap());
        let rho = JointOperator::pure_with_vacuum(&l, &psi);
        assert_abs_diff_eq!(rho.trace().re, 1.0, epsilon = 1e-14);
        let back = rho.trace_cavity();
        assert!((back - psi.density_matrix()).norm() < 1e-14);
    }

    fn filled(l: &BlockLayout, seed: f64) -> JointOperator {
        let d = l.dim();
        let mut op = JointOperator::zeros(l);
        for r in 0..d {
            for c in 0..d {
                op.matrix[(r, c)] = C64::new((seed * (r * d + c) as f64).sin(), (seed * (r + 3 * c) as f64).cos());
            }
        }
        op
    }

    #[test]
    fn jump_adjoint_is_hilbert_schmidt_adjoint() {
        let l = BlockLayout::new(Spin::from_atoms(4), 2);
        let x = filled(&l, 0.37);
        let y = filled(&l, 1.13);
        let lhs = x.inner(&y.jump(2.5));
        let rhs = x.jump_adjoint(2.5).inner(&y);
        assert_abs_diff_eq!(lhs.re, rhs.re, epsilon = 1e-12);
        assert_abs_diff_eq!(lhs.im, rhs.im, epsilon = 1e-12);
    }

    #[test]
    fn jump_preserves_trace_of_number_weighted_state() {
        // Tr(aρa†) = Tr(a†a ρ) = ⟨n⟩.
        let spin = Spin::from_atoms(3);
        let l = BlockLayout::new(spin, 3);
        let mut rho = JointOperator::zeros(&l);
        let i = l.index(1, 2).unwrap();
        rho.matrix[(i, i)] = C64::new(1.0, 0.0);
        assert_abs_diff_eq!(rho.photon_number(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rho.jump(1.0).trace().re, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn banded_operations_match_dense() {
        let spin = Spin::from_atoms(4);
        let l = BlockLayout::new(spin, 2);
        let h = CMatrix::from_fn(5, 5, |r, c| C64::new((0.3 * (r + c) as f64).cos(), 0.2 * (r as f64 - c as f64)));
        let banded = BandedBlocks::with_vacuum(&l, &h);
        let dense = JointOperator::with_vacuum(&l, &h);
        let e: Vec<CMatrix> = (0..l.blocks())
            .map(|b| {
                let d = l.block_dim(b);
                CMatrix::from_fn(d, d, |r, c| C64::new(0.1 * (r + 2 * c + b) as f64, 0.05 * (r * c) as f64))
            })
            .collect();
        let a = banded.conjugate(&e).jump(0.7).conjugate_adjoint(&e).jump_adjoint(0.3).plus(0.4, &banded);
        let b = dense.conjugate(&e).jump(0.7).conjugate_adjoint(&e).jump_adjoint(0.3).plus(0.4, &dense);
        assert!((a.to_joint().matrix - &b.matrix).norm() < 1e-12);
        assert!((a.trace_cavity() - b.trace_cavity()).norm() < 1e-12);
        assert!((a.vacuum_expectation() - b.vacuum_expectation()).norm() < 1e-12);
    }

    #[test]
    fn observable_embedding_gives_atomic_expectation() {
        let spin = Spin::from_atoms(3);
        let l = BlockLayout::new(spin, 3);
        let psi = coherent_state(spin, BlochAngles::new(0.7, 2.0).unwrap());
        let ops = crate::spin::SpinOperators::new(spin);
        let rho = JointOperator::pure_with_vacuum(&l, &psi);
        let obs = JointOperator::atomic_observable(&l, &ops.j_x());
        let joint = obs.inner(&rho).re;
        let atomic = (psi.density_matrix() * ops.j_x()).trace().re;
        assert_abs_diff_eq!(joint, atomic, epsilon = 1e-13);
        assert!((obs.vacuum_expectation() - ops.j_x()).norm() < 1e-14);
    }
}
