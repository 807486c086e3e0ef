//! Single-network error-bar predictor fitted to ensemble error bars, and the
//! composed value + error-bar predictor that replaces the ensemble.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MinMaxScaler};
use crate::ensemble::DEFAULT_SIGMA_FLOOR;
use crate::error::{check_dim, Error, Result};
use crate::nn::{train_mlp, MlpConfig, MlpModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledModel {
    pub net: MlpModel,
    /// Refit on the augmented features; applied after the α scaler.
    pub input_scaler: MinMaxScaler,
    pub sigma_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedPrediction {
    pub value: f64,
    pub error_bar: f64,
}

pub fn train_model_b(beta: &Dataset, config: &MlpConfig) -> Result<DistilledModel> {
    if beta.n_rows() == 0 {
        return Err(Error::invalid("cannot distill from an empty augmented set"));
    }
    if let Some((i, v)) = beta.targets.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::invalid(format!("error-bar target {v} at row {i} is negative")));
    }
    let input_scaler = MinMaxScaler::fit(beta.features.view())?;
    let x = input_scaler.transform(beta.features.view())?;
    let (net, _) = train_mlp(x.view(), beta.targets.view(), config)?;
    Ok(DistilledModel {
        net,
        input_scaler,
        sigma_floor: DEFAULT_SIGMA_FLOOR,
    })
}

impl DistilledModel {
    pub fn input_dim(&self) -> usize {
        self.net.input_dim
    }

    /// Error bars for features in α-scaled space, floored at `sigma_floor`.
    pub fn predict_error_bar(&self, x_scaled: ArrayView2<f64>) -> Result<Array1<f64>> {
        let x = self.input_scaler.transform(x_scaled)?;
        let floor = self.sigma_floor;
        Ok(self.net.forward(x.view())?.mapv_into(|v| v.max(floor)))
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate_shapes()?;
        check_dim(self.net.input_dim, self.input_scaler.n_features(), "distilled scaler columns")?;
        if !(self.sigma_floor > 0.0) {
            return Err(Error::invalid("sigma_floor must be positive"));
        }
        Ok(())
    }
}

pub fn predict_error_bar(b: &DistilledModel, x_scaled: ArrayView2<f64>) -> Result<Array1<f64>> {
    b.predict_error_bar(x_scaled)
}

/// Model A values with Model B error bars for raw-space rows. The ensemble
/// is never consulted: one forward pass of each network per call.
pub fn predict_combined(
    model_a: &MlpModel,
    b: &DistilledModel,
    alpha_scaler: &MinMaxScaler,
    x_raw: ArrayView2<f64>,
) -> Result<Vec<CombinedPrediction>> {
    check_dim(model_a.input_dim, b.input_dim(), "model A vs model B inputs")?;
    let x = alpha_scaler.transform(x_raw)?;
    let values = model_a.forward(x.view())?;
    let bars = b.predict_error_bar(x.view())?;
    Ok(values
        .iter()
        .zip(bars.iter())
        .map(|(&value, &error_bar)| CombinedPrediction { value, error_bar })
        .collect())
}

/// Multiply–accumulates per row of the composed predictor.
pub fn combined_macs_per_row(model_a: &MlpModel, b: &DistilledModel) -> usize {
    model_a.macs_per_row() + b.net.macs_per_row()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SpaceTag;
    use crate::ensemble::{train_ensemble, CalibrationParams, EnsembleModel};
    use crate::nn::{forward_passes_on_this_thread, init_mlp};
    use ndarray::{Array2, Axis};

    fn grid(n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |(i, j)| ((i * (j + 3) * 7 + j) % n) as f64 / (n - 1) as f64)
    }

    fn beta(targets: Array1<f64>, x: Array2<f64>) -> Dataset {
        let names = Dataset::default_feature_names(x.ncols());
        Dataset::new(x, targets, names, "sigma_A", SpaceTag::Scaled).unwrap()
    }

    #[test]
    fn constant_error_bars_are_recovered() {
        let c = 1.0;
        let d = beta(Array1::from_elem(64, c), grid(64, 3));
        let cfg = MlpConfig::default().with_hidden(&[16]).with_epochs(5000);
        let b = train_model_b(&d, &cfg).unwrap();
        let pred = b.predict_error_bar(d.features.view()).unwrap();
        assert!(pred.iter().all(|p| (p - c).abs() <= 0.01 * c), "{pred}");
        assert_eq!(b, train_model_b(&d, &cfg).unwrap());
    }

    #[test]
    fn negative_network_outputs_are_floored() {
        let mut net = init_mlp(2, &MlpConfig::default().with_hidden(&[3])).unwrap();
        net.weights.iter_mut().for_each(|w| w.fill(0.0));
        net.biases[1][0] = -5.0;
        let b = DistilledModel {
            net,
            input_scaler: MinMaxScaler { mins: vec![0.0; 2], maxs: vec![1.0; 2], degenerate_cols: vec![] },
            sigma_floor: 1e-8,
        };
        let out = b.predict_error_bar(grid(7, 2).view()).unwrap();
        assert_eq!(out.len(), 7);
        assert!(out.iter().all(|&v| v == 1e-8));
    }

    #[test]
    fn rejects_negative_targets_and_empty_sets() {
        let d = beta(Array1::from_vec(vec![0.1, -0.2, 0.3, 0.4]), grid(4, 2));
        assert!(train_model_b(&d, &MlpConfig::default()).is_err());
        let empty = beta(Array1::zeros(0), Array2::zeros((0, 2)));
        assert!(train_model_b(&empty, &MlpConfig::default()).is_err());
    }

    #[test]
    fn combined_values_equal_model_a_and_use_two_passes() {
        let x_raw = grid(30, 3).mapv(|v| 10.0 * v - 4.0);
        let alpha = MinMaxScaler::fit(x_raw.view()).unwrap();
        let a = init_mlp(3, &MlpConfig::default().with_hidden(&[8])).unwrap();
        let d = beta(Array1::from_elem(30, 0.2), alpha.transform(x_raw.view()).unwrap());
        let b = train_model_b(&d, &MlpConfig::default().with_hidden(&[8]).with_epochs(3)).unwrap();
        let before = forward_passes_on_this_thread();
        let out = predict_combined(&a, &b, &alpha, x_raw.view()).unwrap();
        assert_eq!(forward_passes_on_this_thread() - before, 2);
        assert_eq!(out.len(), 30);
        let alone = a.forward(alpha.transform(x_raw.view()).unwrap().view()).unwrap();
        for (p, v) in out.iter().zip(alone.iter()) {
            assert_eq!(p.value.to_bits(), v.to_bits());
            assert!(p.error_bar >= b.sigma_floor);
        }
        assert!(predict_combined(&a, &b, &alpha, Array2::zeros((2, 4)).view()).is_err());
    }

    #[test]
    fn zero_spread_chain_gives_floor_dominated_bars() {
        let x = grid(40, 2);
        let d = beta(x.map_axis(Axis(1), |r| r.sum()), x.clone());
        let cfg = MlpConfig::default().with_hidden(&[4]).with_epochs(2);
        let trained = train_ensemble(&d, 2, &cfg, 0).unwrap();
        let e = EnsembleModel {
            members: vec![trained.members[0].clone(); 3],
            calibration: CalibrationParams::identity(),
            member_seeds: vec![0; 3],
        };
        let labels = e.label_error_bars(x.view()).unwrap();
        assert!(labels.iter().all(|&l| l == e.calibration.sigma_floor));
        let b = train_model_b(&beta(labels, x.clone()), &MlpConfig::default().with_hidden(&[8]).with_epochs(5000)).unwrap();
        let bars = b.predict_error_bar(x.view()).unwrap();
        assert!(bars.iter().all(|&v| v >= b.sigma_floor && v < 1e-2), "{bars}");
    }

    #[test]
    fn mac_accounting() {
        let cfg = MlpConfig::default().with_hidden(&[8, 8]);
        let a = init_mlp(5, &cfg).unwrap();
        let b = DistilledModel {
            net: init_mlp(5, &cfg).unwrap(),
            input_scaler: MinMaxScaler { mins: vec![0.0; 5], maxs: vec![1.0; 5], degenerate_cols: vec![] },
            sigma_floor: 1e-8,
        };
        let members: Vec<_> = (0..20).map(|s| init_mlp(5, &MlpConfig { init_seed: s, ..cfg.clone() }).unwrap()).collect();
        let e = EnsembleModel { members, calibration: CalibrationParams::identity(), member_seeds: (0..20).collect() };
        assert_eq!(combined_macs_per_row(&a, &b) - a.macs_per_row(), e.macs_per_row() / 20);
    }
}
