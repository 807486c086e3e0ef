//! Seeded synthetic regression tables.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SpaceTag};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseProfile {
    Homoscedastic { sigma: f64 },
    /// Noise standard deviation `sigma_min + (sigma_max − sigma_min)·x₀`.
    Heteroscedastic { sigma_min: f64, sigma_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionTag {
    /// `10 sin(π x₀ x₁) + 20 (x₂ − ½)² + 10 x₃ + 5 x₄`
    FriedmanLike,
    /// Sum of all features.
    Linear,
    /// `sin(2π x₀) + ½ sin(4π x₁) + x₂`
    SineMix,
}

impl FunctionTag {
    pub fn active_inputs(self) -> usize {
        match self {
            FunctionTag::FriedmanLike => 5,
            FunctionTag::Linear => 1,
            FunctionTag::SineMix => 3,
        }
    }

    fn eval(self, x: ndarray::ArrayView1<f64>) -> f64 {
        use std::f64::consts::PI;
        match self {
            FunctionTag::FriedmanLike => {
                10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
            }
            FunctionTag::Linear => x.sum(),
            FunctionTag::SineMix => (2.0 * PI * x[0]).sin() + 0.5 * (4.0 * PI * x[1]).sin() + x[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub noise_profile: NoiseProfile,
    pub function_tag: FunctionTag,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 200,
            n_features: 10,
            noise_profile: NoiseProfile::Heteroscedastic {
                sigma_min: 0.1,
                sigma_max: 2.0,
            },
            function_tag: FunctionTag::FriedmanLike,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("synthetic dataset needs n_samples >= 1"));
        }
        if self.n_features < self.function_tag.active_inputs() {
            return Err(Error::invalid(format!(
                "{:?} needs at least {} features, got {}",
                self.function_tag,
                self.function_tag.active_inputs(),
                self.n_features
            )));
        }
        let ok = match self.noise_profile {
            NoiseProfile::Homoscedastic { sigma } => sigma >= 0.0 && sigma.is_finite(),
            NoiseProfile::Heteroscedastic { sigma_min, sigma_max } => {
                sigma_min >= 0.0 && sigma_max >= 0.0 && sigma_min.is_finite() && sigma_max.is_finite()
            }
        };
        if !ok {
            return Err(Error::invalid("noise levels must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Box–Muller standard normal.
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Features uniform on `[0,1]^d`, targets = function + noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut feature_rng = rng::stream(spec.seed, &[0x46454154]);
    let mut noise_rng = rng::stream(spec.seed, &[0x4e4f4953]);
    let features = Array2::from_shape_fn((spec.n_samples, spec.n_features), |_| feature_rng.random::<f64>());
    let targets: Array1<f64> = features
        .rows()
        .into_iter()
        .map(|row| {
            let sd = match spec.noise_profile {
                NoiseProfile::Homoscedastic { sigma } => sigma,
                NoiseProfile::Heteroscedastic { sigma_min, sigma_max } => sigma_min + (sigma_max - sigma_min) * row[0],
            };
            spec.function_tag.eval(row) + sd * standard_normal(&mut noise_rng)
        })
        .collect();
    Dataset::new(
        features,
        targets,
        Dataset::default_feature_names(spec.n_features),
        "y",
        SpaceTag::Raw,
    )
}
