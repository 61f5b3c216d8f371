//! Browser bindings for the dispersive and weighted-estimator curves.
//!
//! Build with `wasm-pack build crates/web --target web --out-dir www/pkg`
//! and serve `crates/web/www/`.

use cat_ifm::dispersive::{ideal_second_moment, ideal_signal, ideal_signal_slope, uncertainty_ratio};
use cat_ifm::stats::{poisson_curve as poisson_signal_curve, DetectionModel, PhiGrid};
use cat_ifm::weights::{detection_cutoff, detection_probability, optimal_signal_curve, weighted_moments, WeightVector};
use wasm_bindgen::prelude::*;

/// Columns of one curve, each the length of the phase grid.
#[wasm_bindgen]
#[derive(Clone, Debug, Default)]
pub struct Curve {
    phi: Vec<f64>,
    jz_mean: Vec<f64>,
    delta_phi: Vec<f64>,
}

#[wasm_bindgen]
impl Curve {
    #[wasm_bindgen(getter)]
    pub fn phi(&self) -> Vec<f64> {
        self.phi.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn jz_mean(&self) -> Vec<f64> {
        self.jz_mean.clone()
    }

    /// +∞ where the slope vanishes.
    #[wasm_bindgen(getter)]
    pub fn delta_phi(&self) -> Vec<f64> {
        self.delta_phi.clone()
    }
}

/// Optimal estimator on a grid, with the equal-weight estimator alongside.
#[wasm_bindgen]
#[derive(Clone, Debug, Default)]
pub struct WeightedResult {
    optimal: Curve,
    equal: Curve,
    probabilities: Vec<f64>,
    weights: Vec<f64>,
    best_phi: f64,
    best_delta_phi: f64,
}

#[wasm_bindgen]
impl WeightedResult {
    #[wasm_bindgen(getter)]
    pub fn optimal(&self) -> Curve {
        self.optimal.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn equal(&self) -> Curve {
        self.equal.clone()
    }

    /// P(N_d) for N_d = 0..=cutoff.
    #[wasm_bindgen(getter)]
    pub fn probabilities(&self) -> Vec<f64> {
        self.probabilities.clone()
    }

    /// Normalised optimal weights at the best phase; empty if none exists.
    #[wasm_bindgen(getter)]
    pub fn weights(&self) -> Vec<f64> {
        self.weights.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn best_phi(&self) -> f64 {
        self.best_phi
    }

    #[wasm_bindgen(getter)]
    pub fn best_delta_phi(&self) -> f64 {
        self.best_delta_phi
    }
}

fn grid(start: f64, stop: f64, points: usize) -> Result<Vec<f64>, String> {
    PhiGrid::new(start, stop, points).map(|g| g.values()).map_err(|e| e.to_string())
}

pub fn ideal_curve_native(n_atoms: usize, inversion: bool, start: f64, stop: f64, points: usize) -> Result<Curve, String> {
    if n_atoms == 0 {
        return Err("atom number must be at least 1".into());
    }
    let phi = grid(start, stop, points)?;
    let jz_mean: Vec<f64> = phi.iter().map(|&p| ideal_signal(n_atoms, p, inversion)).collect();
    let delta_phi = phi
        .iter()
        .zip(&jz_mean)
        .map(|(&p, &m)| uncertainty_ratio(ideal_second_moment(n_atoms, p) - m * m, ideal_signal_slope(n_atoms, p, inversion)))
        .collect();
    Ok(Curve { phi, jz_mean, delta_phi })
}

pub fn poisson_curve_native(mean: f64, inversion: bool, start: f64, stop: f64, points: usize) -> Result<Curve, String> {
    let phi = grid(start, stop, points)?;
    let c = poisson_signal_curve(mean, &phi, inversion).map_err(|e| e.to_string())?;
    Ok(Curve {
        phi,
        jz_mean: c.jz_mean,
        delta_phi: c.delta_phi,
    })
}

pub fn optimal_weights_native(
    mean: f64,
    efficiency: f64,
    start: f64,
    stop: f64,
    points: usize,
) -> Result<WeightedResult, String> {
    let phi = grid(start, stop, points)?;
    let model = DetectionModel::new(efficiency, mean).map_err(|e| e.to_string())?;
    let cutoff = detection_cutoff(&model);
    let opt = optimal_signal_curve(&phi, &model, cutoff).map_err(|e| e.to_string())?;
    let uniform = WeightVector::uniform(cutoff);
    let equal_points = phi
        .iter()
        .map(|&p| weighted_moments(&uniform, p, &model))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let (best_phi, best_delta_phi, weights) = match (opt.best_index, opt.best_weights()) {
        (Some(i), Some(w)) => (phi[i], opt.curve.delta_phi[i], w.normalized(&model).weights().to_vec()),
        _ => (f64::NAN, f64::INFINITY, Vec::new()),
    };
    Ok(WeightedResult {
        optimal: Curve {
            phi: phi.clone(),
            jz_mean: opt.curve.jz_mean,
            delta_phi: opt.curve.delta_phi,
        },
        equal: Curve {
            jz_mean: equal_points.iter().map(|p| p.jz_mean).collect(),
            delta_phi: equal_points.iter().map(|p| p.delta_phi).collect(),
            phi,
        },
        probabilities: (0..=cutoff).map(|k| detection_probability(k, &model)).collect(),
        weights,
        best_phi,
        best_delta_phi,
    })
}

/// ⟨Ĵz⟩ and Δφ for a fixed atom number in the dispersive limit.
#[wasm_bindgen]
pub fn ideal_curve(n_atoms: usize, inversion: bool, start: f64, stop: f64, points: usize) -> Result<Curve, JsError> {
    ideal_curve_native(n_atoms, inversion, start, stop, points).map_err(|e| JsError::new(&e))
}

/// Poisson-averaged ⟨Ĵz⟩ and Δφ.
#[wasm_bindgen]
pub fn poisson_curve(mean: f64, inversion: bool, start: f64, stop: f64, points: usize) -> Result<Curve, JsError> {
    poisson_curve_native(mean, inversion, start, stop, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn optimal_weights(
    mean: f64,
    efficiency: f64,
    start: f64,
    stop: f64,
    points: usize,
) -> Result<WeightedResult, JsError> {
    optimal_weights_native(mean, efficiency, start, stop, points).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_matches_cosine() {
        let c = ideal_curve_native(10, false, -1.0, 1.0, 21).unwrap();
        for (p, m) in c.phi.iter().zip(&c.jz_mean) {
            assert!((m - 5.0 * (10.0 * p).cos()).abs() < 1e-12);
        }
        assert!(ideal_curve_native(0, false, 0.0, 1.0, 3).is_err());
        assert!(ideal_curve_native(4, false, 1.0, 0.0, 3).is_err());
    }

    #[test]
    fn poisson_minimum() {
        let c = poisson_curve_native(10.0, true, 0.0, 0.5, 501).unwrap();
        let best = c.delta_phi.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((best - 0.145).abs() < 0.005, "{best}");
    }

    #[test]
    fn optimal_beats_equal() {
        let r = optimal_weights_native(8.0, 0.8, 0.02, 0.4, 20).unwrap();
        for (o, e) in r.optimal.delta_phi.iter().zip(&r.equal.delta_phi) {
            assert!(*o <= e * (1.0 + 1e-9));
        }
        assert_eq!(r.probabilities.len(), r.weights.len());
        assert!(r.best_delta_phi.is_finite());
    }
}
