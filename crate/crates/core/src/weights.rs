//! Weighted estimator over detected-atom-number classes.
//!
//! The signal Σ P(N_d)·w(N_d)·⟨Ĵz(N_d)⟩ has phase uncertainty
//!
//! ```text
//! Δφ² = xᵀA x / (cᵀx)²,   A = diag(P·q) − b bᵀ,  b = P·s,  c = P·s′
//! ```
//!
//! where x = w and s, q, s′ are the conditional signal, second moment and
//! slope. The ratio is scale invariant, so the optimum is x ∝ A⁻¹c and
//! Δφ_min² = 1/(cᵀA⁻¹c).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::stats::{
    conditional_jz_squared, conditional_signal_and_slope, CurvePoint, CurveSource, DetectionModel,
    SignalCurve,
};

/// How a [`WeightVector`] has been scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// As supplied.
    Raw,
    /// max|w| = 1, positive at the class with the largest P·|w|.
    UnitMaxAbs,
}

/// Weights w(N_d) for N_d = 0..=cutoff.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightVector {
    weights: Vec<f64>,
    normalization: Normalization,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("weight vector is empty"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("weights must be finite"));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(invalid("weights are all zero"));
        }
        Ok(WeightVector {
            weights,
            normalization: Normalization::Raw,
        })
    }

    /// w ≡ 1 up to `cutoff`.
    pub fn uniform(cutoff: usize) -> Self {
        WeightVector {
            weights: vec![1.0; cutoff + 1],
            normalization: Normalization::Raw,
        }
    }

    /// w = 1 at N_d = `class`, 0 elsewhere.
    pub fn indicator(class: usize, cutoff: usize) -> Result<Self> {
        if class > cutoff {
            return Err(invalid(format!("class {class} beyond cutoff {cutoff}")));
        }
        let mut w = vec![0.0; cutoff + 1];
        w[class] = 1.0;
        WeightVector::new(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cutoff(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        WeightVector::new(self.weights.iter().map(|w| w * factor).collect())
    }

    /// Rescales to max|w| = 1 with a positive sign at the class carrying the
    /// largest P·|w|.
    pub fn normalized(&self, model: &DetectionModel) -> Self {
        let dominant = (0..self.weights.len())
            .max_by(|&a, &b| {
                let pa = detection_probability(a, model) * self.weights[a].abs();
                let pb = detection_probability(b, model) * self.weights[b].abs();
                pa.total_cmp(&pb)
            })
            .unwrap_or(0);
        let max_abs = self.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let sign = if self.weights[dominant] < 0.0 { -1.0 } else { 1.0 };
        WeightVector {
            weights: self.weights.iter().map(|w| sign * w / max_abs).collect(),
            normalization: Normalization::UnitMaxAbs,
        }
    }
}

/// P(N_d) = e^{−ηN̄}(ηN̄)^{N_d}/N_d!.
pub fn detection_probability(n_detected: usize, model: &DetectionModel) -> f64 {
    let mu = model.detected_mean();
    if mu == 0.0 {
        return if n_detected == 0 { 1.0 } else { 0.0 };
    }
    let ln_fact: f64 = (2..=n_detected).map(|k| (k as f64).ln()).sum();
    (-mu + n_detected as f64 * mu.ln() - ln_fact).exp()
}

/// Largest detected class kept: ⌈ηN̄ + 10√(ηN̄) + 10⌉.
pub fn detection_cutoff(model: &DetectionModel) -> usize {
    let mu = model.detected_mean();
    (mu + 10.0 * mu.sqrt() + 10.0).ceil() as usize
}

/// Per-class ingredients at one phase.
struct ClassTable {
    prob: Vec<f64>,
    signal: Vec<f64>,
    second: Vec<f64>,
    slope: Vec<f64>,
}

impl ClassTable {
    fn new(phi: f64, model: &DetectionModel, cutoff: usize) -> Self {
        let mut t = ClassTable {
            prob: Vec::with_capacity(cutoff + 1),
            signal: Vec::with_capacity(cutoff + 1),
            second: Vec::with_capacity(cutoff + 1),
            slope: Vec::with_capacity(cutoff + 1),
        };
        for n in 0..=cutoff {
            let (s, ds) = conditional_signal_and_slope(n, phi, model);
            t.prob.push(detection_probability(n, model));
            t.signal.push(s);
            t.second.push(conditional_jz_squared(n, phi, model));
            t.slope.push(ds);
        }
        t
    }

    /// (Σ P w s, Σ P w² q, Σ P w s′).
    fn sums(&self, w: &[f64]) -> (f64, f64, f64) {
        let mut out = (0.0, 0.0, 0.0);
        for (i, &wi) in w.iter().enumerate().take(self.prob.len()) {
            let pw = self.prob[i] * wi;
            out.0 += pw * self.signal[i];
            out.1 += pw * wi * self.second[i];
            out.2 += pw * self.slope[i];
        }
        out
    }
}

fn check_cutoff(wv: &WeightVector, cutoff: usize) -> Result<()> {
    if wv.cutoff() < cutoff {
        return Err(invalid(format!(
            "weight vector stops at {} but the model needs {cutoff}",
            wv.cutoff()
        )));
    }
    Ok(())
}

/// Σ P(N_d)·w(N_d)·⟨Ĵz(N_d)⟩.
pub fn weighted_signal(wv: &WeightVector, phi: f64, model: &DetectionModel) -> Result<f64> {
    Ok(weighted_moments(wv, phi, model)?.jz_mean)
}

/// Mean, second moment and Δφ of the weighted signal.
pub fn weighted_moments(wv: &WeightVector, phi: f64, model: &DetectionModel) -> Result<CurvePoint> {
    check_cutoff(wv, detection_cutoff(model))?;
    let table = ClassTable::new(phi, model, wv.cutoff());
    let (mean, second, slope) = table.sums(wv.weights());
    Ok(CurvePoint {
        jz_mean: mean,
        jz_second_moment: second,
        delta_phi: ratio(second - mean * mean, slope),
    })
}

/// Δφ of the weighted signal, +∞ where its slope vanishes.
pub fn weighted_phase_uncertainty(wv: &WeightVector, phi: f64, model: &DetectionModel) -> Result<f64> {
    Ok(weighted_moments(wv, phi, model)?.delta_phi)
}

fn ratio(variance: f64, slope: f64) -> f64 {
    crate::dispersive::uncertainty_ratio(variance, slope)
}

/// Weights minimising Δφ at `phi`, normalised to max|w| = 1.
///
/// Classes with q = 0 (no atoms) get weight zero. The remaining quadratic
/// problem is whitened to I − b′b′ᵀ and solved by Cholesky; if that matrix
/// is numerically singular the minimum-norm solution from its
/// eigendecomposition is used instead.
pub fn optimize_weights(phi: f64, model: &DetectionModel, cutoff: usize) -> Result<WeightVector> {
    let table = ClassTable::new(phi, model, cutoff);
    let active: Vec<usize> = (0..=cutoff)
        .filter(|&i| table.prob[i] > 0.0 && table.second[i] > 0.0)
        .collect();
    let sensitive = active.iter().filter(|&&i| table.slope[i] != 0.0).count();
    if sensitive == 0 {
        return Err(Error::NoSensitivity(format!("every class has zero slope at phi = {phi}")));
    }
    if active.len() < 2 {
        return Err(Error::NoSensitivity(format!(
            "fewer than two populated classes at phi = {phi}"
        )));
    }

    let k = active.len();
    let scale: Vec<f64> = active
        .iter()
        .map(|&i| 1.0 / (table.prob[i] * table.second[i]).sqrt())
        .collect();
    let b = DVector::from_iterator(
        k,
        active.iter().zip(&scale).map(|(&i, sc)| table.prob[i] * table.signal[i] * sc),
    );
    let c = DVector::from_iterator(
        k,
        active.iter().zip(&scale).map(|(&i, sc)| table.prob[i] * table.slope[i] * sc),
    );
    let a = DMatrix::<f64>::identity(k, k) - &b * b.transpose();

    let y = whitened_solve(a, &c, 1.0 - b.norm_squared());
    let mut w = vec![0.0; cutoff + 1];
    for ((&i, sc), yi) in active.iter().zip(&scale).zip(y.iter()) {
        w[i] = sc * yi;
    }
    Ok(WeightVector::new(w)
        .map_err(|_| Error::NoSensitivity(format!("optimal weights vanish at phi = {phi}")))?
        .normalized(model))
}

/// Solves (I − bbᵀ) y = c; `gap` is 1 − |b|², the small eigenvalue.
fn whitened_solve(a: DMatrix<f64>, c: &DVector<f64>, gap: f64) -> DVector<f64> {
    const SINGULAR_GAP: f64 = 1e-12;
    if gap > SINGULAR_GAP {
        if let Some(chol) = a.clone().cholesky() {
            return chol.solve(c);
        }
    }
    let eig = a.symmetric_eigen();
    let cutoff = SINGULAR_GAP * eig.eigenvalues.amax().max(1.0);
    let proj = eig.eigenvectors.transpose() * c;
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(p, &l)| if l > cutoff { p / l } else { 0.0 }),
    );
    eig.eigenvectors * scaled
}

/// Optimal curve together with the weights at its most sensitive point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimalCurve {
    pub curve: SignalCurve,
    /// Optimal weights per grid point; `None` where no class is sensitive.
    pub weights: Vec<Option<WeightVector>>,
    /// Index of the grid point with the smallest Δφ.
    pub best_index: Option<usize>,
}

impl OptimalCurve {
    pub fn best_weights(&self) -> Option<&WeightVector> {
        self.best_index.and_then(|i| self.weights[i].as_ref())
    }
}

/// Re-optimises the weights at every grid point.
///
/// Points without sensitivity keep a row with zero moments and Δφ = +∞.
pub fn optimal_signal_curve(
    phi_grid: &[f64],
    model: &DetectionModel,
    cutoff: usize,
) -> Result<OptimalCurve> {
    let mut points = Vec::with_capacity(phi_grid.len());
    let mut weights = Vec::with_capacity(phi_grid.len());
    for &phi in phi_grid {
        match optimize_weights(phi, model, cutoff) {
            Ok(w) => {
                points.push(weighted_moments(&w, phi, model)?);
                weights.push(Some(w));
            }
            Err(Error::NoSensitivity(_)) => {
                points.push(CurvePoint {
                    jz_mean: 0.0,
                    jz_second_moment: 0.0,
                    delta_phi: f64::INFINITY,
                });
                weights.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let curve = SignalCurve::from_points(phi_grid.to_vec(), &points, CurveSource::ClosedForm)?
        .with_config("mean_atoms", model.mean_atoms())
        .with_config("efficiency", model.efficiency())
        .with_config("detection_cutoff", cutoff);
    let best_index = curve.min_delta_phi().and_then(|(phi, _)| phi_grid.iter().position(|&p| p == phi));
    Ok(OptimalCurve {
        curve,
        weights,
        best_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{poisson_phase_uncertainty, poisson_signal};
    use approx::assert_abs_diff_eq;

    fn model(eta: f64, mean: f64) -> DetectionModel {
        DetectionModel::new(eta, mean).unwrap()
    }

    #[test]
    fn detection_probability_examples() {
        let m = model(1.0, 10.0);
        assert_abs_diff_eq!(detection_probability(10, &m), 0.12511003572113372, epsilon = 1e-14);
        let blind = model(0.0, 10.0);
        assert_eq!(detection_probability(0, &blind), 1.0);
        assert_eq!(detection_probability(3, &blind), 0.0);
        for (eta, mean) in [(0.8, 12.5), (0.3, 40.0), (1.0, 2.0)] {
            let m = model(eta, mean);
            let total: f64 = (0..=detection_cutoff(&m)).map(|n| detection_probability(n, &m)).sum();
            assert!(total >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn uniform_weights_give_poisson_signal_at_unit_efficiency() {
        let m = model(1.0, 10.0);
        let w = WeightVector::uniform(detection_cutoff(&m));
        for phi in [-0.9, -0.1, 0.03, 0.25, 1.3] {
            assert_abs_diff_eq!(
                weighted_signal(&w, phi, &m).unwrap(),
                poisson_signal(10.0, phi, true),
                epsilon = 1e-10
            );
            let a = weighted_phase_uncertainty(&w, phi, &m).unwrap();
            let b = poisson_phase_uncertainty(10.0, phi, true);
            assert!((a - b).abs() <= 1e-9 * b, "{phi}: {a} vs {b}");
        }
    }

    #[test]
    fn uniform_weights_match_thinned_moments() {
        // Binomial thinning: E[Jz_det] = η⟨Jz⟩, E[Jz_det²] = η²⟨Jz²⟩ + η(1−η)N̄/4.
        use crate::stats::{poisson_jz_squared, poisson_signal_slope};
        let (eta, mean) = (0.8, 12.5);
        let m = model(eta, mean);
        let w = WeightVector::uniform(detection_cutoff(&m));
        for phi in [0.02, 0.1, 0.4] {
            let s = eta * poisson_signal(mean, phi, true);
            let q = eta * eta * poisson_jz_squared(mean, phi) + eta * (1.0 - eta) * mean / 4.0;
            let ds = eta * poisson_signal_slope(mean, phi, true);
            let p = weighted_moments(&w, phi, &m).unwrap();
            assert_abs_diff_eq!(p.jz_mean, s, epsilon = 1e-10);
            assert_abs_diff_eq!(p.jz_second_moment, q, epsilon = 1e-9);
            assert_abs_diff_eq!(p.delta_phi, (q - s * s).sqrt() / ds.abs(), epsilon = 1e-9);
        }
    }

    #[test]
    fn indicator_weight_picks_one_class() {
        let m = model(1.0, 10.0);
        let cutoff = detection_cutoff(&m);
        for k in [2, 6, 10] {
            let w = WeightVector::indicator(k, cutoff).unwrap();
            for phi in [0.1, 0.5] {
                let expected = detection_probability(k, &m) * 0.5 * k as f64 * (k as f64 * phi).cos();
                assert_abs_diff_eq!(weighted_signal(&w, phi, &m).unwrap(), expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rejects_degenerate_vectors() {
        assert!(WeightVector::new(vec![0.0, 0.0]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
        assert!(WeightVector::new(vec![1.0, f64::NAN]).is_err());
        let m = model(1.0, 10.0);
        let short = WeightVector::uniform(5);
        assert!(weighted_signal(&short, 0.1, &m).is_err());
    }

    #[test]
    fn scale_invariance() {
        let m = model(0.8, 12.5);
        let w = WeightVector::new((0..=detection_cutoff(&m)).map(|i| 1.0 + 0.1 * i as f64).collect()).unwrap();
        for lambda in [0.01, 3.0, 1e4] {
            let a = weighted_phase_uncertainty(&w, 0.07, &m).unwrap();
            let b = weighted_phase_uncertainty(&w.scaled(lambda).unwrap(), 0.07, &m).unwrap();
            assert!((a - b).abs() <= 1e-12 * a);
        }
    }

    /// cᵀA⁺c from the eigendecomposition of the unwhitened A.
    fn rayleigh_oracle(phi: f64, m: &DetectionModel, cutoff: usize) -> f64 {
        let t = ClassTable::new(phi, m, cutoff);
        let idx: Vec<usize> = (1..=cutoff).collect();
        let k = idx.len();
        let mut a = DMatrix::<f64>::zeros(k, k);
        let mut c = DVector::<f64>::zeros(k);
        for (r, &i) in idx.iter().enumerate() {
            c[r] = t.prob[i] * t.slope[i];
            for (s, &j) in idx.iter().enumerate() {
                a[(r, s)] = -t.prob[i] * t.signal[i] * t.prob[j] * t.signal[j];
            }
            a[(r, r)] += t.prob[i] * t.second[i];
        }
        let eig = a.symmetric_eigen();
        let proj = eig.eigenvectors.transpose() * &c;
        let quad: f64 = proj
            .iter()
            .zip(eig.eigenvalues.iter())
            .filter(|(_, &l)| l > 1e-14)
            .map(|(p, l)| p * p / l)
            .sum();
        1.0 / quad.sqrt()
    }

    /// Sherman-Morrison closed form w = s′/q + α s/q.
    fn sherman_morrison(phi: f64, m: &DetectionModel, cutoff: usize) -> Vec<f64> {
        let t = ClassTable::new(phi, m, cutoff);
        let (mut num, mut den) = (0.0, 1.0);
        for i in 1..=cutoff {
            num += t.prob[i] * t.signal[i] * t.slope[i] / t.second[i];
            den -= t.prob[i] * t.signal[i] * t.signal[i] / t.second[i];
        }
        let alpha = num / den;
        let mut w = vec![0.0];
        w.extend((1..=cutoff).map(|i| (t.slope[i] + alpha * t.signal[i]) / t.second[i]));
        w
    }

    #[test]
    fn optimizer_matches_rayleigh_oracle_on_small_problems() {
        for (eta, mean) in [(0.8, 1.5), (0.6, 2.0), (0.95, 1.0)] {
            let m = model(eta, mean);
            for cutoff in 2..=6 {
                for phi in [0.05, 0.2, 0.7] {
                    let w = optimize_weights(phi, &m, cutoff).unwrap();
                    let t = ClassTable::new(phi, &m, cutoff);
                    let (s, q, ds) = t.sums(w.weights());
                    let got = ratio(q - s * s, ds);
                    let want = rayleigh_oracle(phi, &m, cutoff);
                    assert!((got - want).abs() <= 1e-6 * want, "{eta} {mean} {cutoff} {phi}: {got} {want}");
                }
            }
        }
    }

    #[test]
    fn optimizer_matches_sherman_morrison_weights() {
        let m = model(0.8, 12.5);
        let cutoff = detection_cutoff(&m);
        for phi in [0.01, 0.1, -0.3] {
            let w = optimize_weights(phi, &m, cutoff).unwrap();
            let sm = WeightVector::new(sherman_morrison(phi, &m, cutoff)).unwrap().normalized(&m);
            for (a, b) in w.weights().iter().zip(sm.weights()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn optimal_beats_uniform_and_post_selection() {
        for (eta, mean) in [(0.8, 12.5), (1.0, 10.0), (0.5, 6.0)] {
            let m = model(eta, mean);
            let cutoff = detection_cutoff(&m);
            for phi in [0.01, 0.05, 0.12, 0.3, -0.2] {
                let opt = weighted_phase_uncertainty(&optimize_weights(phi, &m, cutoff).unwrap(), phi, &m).unwrap();
                let uni = weighted_phase_uncertainty(&WeightVector::uniform(cutoff), phi, &m).unwrap();
                assert!(opt <= uni * (1.0 + 1e-12), "{eta} {mean} {phi}");
                for k in 1..=cutoff {
                    let ind = WeightVector::indicator(k, cutoff).unwrap();
                    let d = weighted_phase_uncertainty(&ind, phi, &m).unwrap();
                    assert!(opt <= d * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn optimal_weights_are_normalised() {
        let m = model(0.8, 12.5);
        let w = optimize_weights(0.05, &m, detection_cutoff(&m)).unwrap();
        assert_eq!(w.normalization(), Normalization::UnitMaxAbs);
        let max = w.weights().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert_abs_diff_eq!(max, 1.0, epsilon = 1e-15);
        assert_eq!(w.weights()[0], 0.0);
    }

    #[test]
    fn no_sensitivity_is_reported() {
        let m = model(1.0, 10.0);
        assert!(matches!(optimize_weights(0.0, &m, 30), Err(Error::NoSensitivity(_))));
    }

    #[test]
    fn optimal_curve_is_even() {
        let m = model(0.8, 12.5);
        let cutoff = detection_cutoff(&m);
        let grid: Vec<f64> = (-20..=20).map(|i| 0.01 * i as f64).collect();
        let oc = optimal_signal_curve(&grid, &m, cutoff).unwrap();
        let n = grid.len();
        for i in 0..n {
            let j = n - 1 - i;
            assert_abs_diff_eq!(oc.curve.jz_mean[i], oc.curve.jz_mean[j], epsilon = 1e-9);
            if oc.curve.delta_phi[i].is_finite() {
                assert_abs_diff_eq!(oc.curve.delta_phi[i], oc.curve.delta_phi[j], epsilon = 1e-9);
            }
        }
        assert!(oc.best_weights().is_some());
    }
}
