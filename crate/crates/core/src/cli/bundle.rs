//! Versioned, checksummed JSON container for trained models.
//!
//! File layout:
//!
//! ```json
//! { "format_version": 1, "checksum": "<sha256 hex>", "payload": { ... } }
//! ```
//!
//! The checksum covers the compact serialization of `payload` (object keys
//! sorted). Floats are written in shortest round-trip form, so every weight
//! reloads bit-for-bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::data::MinMaxScaler;
use crate::distill::{predict_combined, CombinedPrediction, DistilledModel};
use crate::ensemble::EnsembleModel;
use crate::error::{check_dim, Error, Result};
use crate::nn::MlpModel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: RunConfig,
    /// SHA-256 of the raw training table.
    pub data_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub alpha_scaler: MinMaxScaler,
    pub model_a: Option<MlpModel>,
    pub ensemble: Option<EnsembleModel>,
    pub model_b: Option<DistilledModel>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    checksum: String,
    payload: serde_json::Value,
}

fn checksum(payload: &serde_json::Value) -> String {
    let text = serde_json::to_string(payload).expect("JSON value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl ModelBundle {
    pub fn is_distilled(&self) -> bool {
        self.model_b.is_some()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Human-readable state, e.g. `"not distilled"`.
    pub fn status(&self) -> &'static str {
        match (&self.model_a, &self.ensemble, &self.model_b) {
            (_, _, Some(_)) => "distilled",
            (_, Some(_), None) => "not distilled",
            (Some(_), None, None) => "model A only",
            (None, None, None) => "empty",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.n_features();
        check_dim(d, self.alpha_scaler.n_features(), "bundle scaler columns")?;
        if let Some(a) = &self.model_a {
            a.validate_shapes()?;
            check_dim(d, a.input_dim, "bundle model A inputs")?;
        }
        if let Some(e) = &self.ensemble {
            e.validate()?;
            check_dim(d, e.input_dim(), "bundle ensemble inputs")?;
        }
        if let Some(b) = &self.model_b {
            b.validate()?;
            check_dim(d, b.input_dim(), "bundle model B inputs")?;
        }
        Ok(())
    }

    /// Model A values and Model B error bars for raw-space rows.
    pub fn predict(&self, x_raw: ndarray::ArrayView2<f64>) -> Result<Vec<CombinedPrediction>> {
        let a = self
            .model_a
            .as_ref()
            .ok_or_else(|| Error::Bundle("bundle has no Model A".into()))?;
        let b = self
            .model_b
            .as_ref()
            .ok_or_else(|| Error::Bundle("bundle is not distilled (no Model B)".into()))?;
        predict_combined(a, b, &self.alpha_scaler, x_raw)
    }

    pub fn to_json(&self) -> Result<String> {
        let payload = serde_json::to_value(self)?;
        let envelope = Envelope {
            format_version: FORMAT_VERSION,
            checksum: checksum(&payload),
            payload,
        };
        Ok(serde_json::to_string(&envelope)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let envelope: Envelope =
            serde_json::from_str(text).map_err(|e| Error::Bundle(format!("not a model bundle: {e}")))?;
        if envelope.format_version > FORMAT_VERSION {
            return Err(Error::Bundle(format!(
                "format version {} is newer than supported version {FORMAT_VERSION}",
                envelope.format_version
            )));
        }
        if envelope.format_version != FORMAT_VERSION {
            return Err(Error::Bundle(format!(
                "unsupported format version {}",
                envelope.format_version
            )));
        }
        if checksum(&envelope.payload) != envelope.checksum {
            return Err(Error::Bundle("checksum mismatch: file is corrupted".into()));
        }
        let bundle: ModelBundle =
            serde_json::from_value(envelope.payload).map_err(|e| Error::Bundle(format!("malformed payload: {e}")))?;
        bundle.validate()?;
        Ok(bundle)
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bundle.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_json(&text)
}
