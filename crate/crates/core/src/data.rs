//! Dataset ingestion, min–max feature scaling and k-fold assignment.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceTag {
    Raw,
    Scaled,
}

/// Feature matrix, target vector and column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub targets: Array1<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub space: SpaceTag,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        targets: Array1<f64>,
        feature_names: Vec<String>,
        target_name: impl Into<String>,
        space: SpaceTag,
    ) -> Result<Self> {
        check_dim(features.nrows(), targets.len(), "target count vs feature rows")?;
        check_dim(features.ncols(), feature_names.len(), "feature names vs columns")?;
        if let Some(((r, c), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature at row {r}, column {c}")));
        }
        if let Some((r, _)) = targets.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite target at row {r}")));
        }
        Ok(Self {
            features,
            targets,
            feature_names,
            target_name: target_name.into(),
            space,
        })
    }

    /// Column names `x0, x1, ...`.
    pub fn default_feature_names(n: usize) -> Vec<String> {
        (0..n).map(|j| format!("x{j}")).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Rows `idx` (in the given order) as a new dataset.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), idx),
            targets: self.targets.select(Axis(0), idx),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            space: self.space,
        }
    }

    /// True when every feature lies in [0,1] up to `tol`.
    pub fn in_unit_box(&self, tol: f64) -> bool {
        self.features.iter().all(|&v| v >= -tol && v <= 1.0 + tol)
    }

    /// SHA-256 over names, shape and the little-endian bytes of every value.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.feature_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        h.update(self.target_name.as_bytes());
        h.update((self.n_rows() as u64).to_le_bytes());
        h.update((self.n_features() as u64).to_le_bytes());
        for v in self.features.iter().chain(self.targets.iter()) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Read a headered CSV. Without `feature_columns`, every non-target column
/// is a feature, in file order.
pub fn load_dataset_csv(
    path: impl AsRef<Path>,
    target_column: &str,
    feature_columns: Option<&[String]>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| csv_err(format!("missing column '{name}'")))
    };
    let target_idx = find(target_column)?;
    let feature_names: Vec<String> = match feature_columns {
        Some(cols) => cols.to_vec(),
        None => header
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != target_idx)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let feature_idx = feature_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;

    let mut values = Vec::new();
    let mut targets = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        let parse = |col: usize| -> Result<f64> {
            let cell = record.get(col).unwrap_or("").trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(csv_err(format!(
                    "row {}, column '{}': cannot use value '{cell}'",
                    row + 1,
                    header[col]
                ))),
            }
        };
        for &c in &feature_idx {
            values.push(parse(c)?);
        }
        targets.push(parse(target_idx)?);
    }
    let n = targets.len();
    let features = Array2::from_shape_vec((n, feature_idx.len()), values)
        .map_err(|e| csv_err(e.to_string()))?;
    Dataset::new(
        features,
        Array1::from(targets),
        feature_names,
        target_column,
        SpaceTag::Raw,
    )
}

/// Write features then the target column, header first.
pub fn write_dataset_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let io = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut header = d.feature_names.clone();
    header.push(d.target_name.clone());
    w.write_record(&header).map_err(io)?;
    for (row, t) in d.features.rows().into_iter().zip(d.targets.iter()) {
        let rec: Vec<String> = row.iter().chain(std::iter::once(t)).map(|v| v.to_string()).collect();
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-column min–max scaler mapping the fitted range onto [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    /// Columns whose fitted min equals max; these map to 0.
    pub degenerate_cols: Vec<usize>,
}

impl MinMaxScaler {
    pub fn fit(features: ArrayView2<f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::invalid("cannot fit a scaler on an empty dataset"));
        }
        let mut mins = Vec::with_capacity(features.ncols());
        let mut maxs = Vec::with_capacity(features.ncols());
        let mut degenerate_cols = Vec::new();
        for (j, col) in features.columns().into_iter().enumerate() {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                degenerate_cols.push(j);
            }
            mins.push(lo);
            maxs.push(hi);
        }
        Ok(Self {
            mins,
            maxs,
            degenerate_cols,
        })
    }

    pub fn n_features(&self) -> usize {
        self.mins.len()
    }

    fn is_degenerate(&self, j: usize) -> bool {
        self.mins[j] == self.maxs[j]
    }

    /// Scale a matrix. Values outside the fitted range pass through affinely.
    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(self.n_features(), x.ncols(), "scaler columns")?;
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            if self.is_degenerate(j) {
                col.fill(0.0);
            } else {
                let (lo, span) = (self.mins[j], self.maxs[j] - self.mins[j]);
                col.mapv_inplace(|v| (v - lo) / span);
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(self.n_features(), x.ncols(), "scaler columns")?;
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (lo, span) = (self.mins[j], self.maxs[j] - self.mins[j]);
            if self.is_degenerate(j) {
                col.fill(lo);
            } else {
                col.mapv_inplace(|v| lo + v * span);
            }
        }
        Ok(out)
    }
}

pub fn fit_scaler(d: &Dataset) -> Result<MinMaxScaler> {
    MinMaxScaler::fit(d.features.view())
}

pub fn apply_scaler(s: &MinMaxScaler, d: &Dataset) -> Result<Dataset> {
    Ok(Dataset {
        features: s.transform(d.features.view())?,
        space: SpaceTag::Scaled,
        ..d.clone()
    })
}

pub fn invert_scaler(s: &MinMaxScaler, d: &Dataset) -> Result<Dataset> {
    Ok(Dataset {
        features: s.inverse_transform(d.features.view())?,
        space: SpaceTag::Raw,
        ..d.clone()
    })
}

/// Assignment of each row to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_of_row: Vec<usize>,
    pub k: usize,
}

impl FoldAssignment {
    /// (training rows, held-out rows) for `fold`, each ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.fold_of_row.len()).partition(|&i| self.fold_of_row[i] != fold)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of_row {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffle rows with the seeded generator, then deal them round the folds.
pub fn kfold_split(n_rows: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    if n_rows < k {
        return Err(Error::invalid(format!("{n_rows} rows cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut rng::stream(seed, &[0x4b46]));
    let mut fold_of_row = vec![0; n_rows];
    for (pos, &row) in order.iter().enumerate() {
        fold_of_row[row] = pos % k;
    }
    Ok(FoldAssignment { fold_of_row, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn ds(features: Array2<f64>) -> Dataset {
        let n = features.nrows();
        let names = Dataset::default_feature_names(features.ncols());
        Dataset::new(features, Array1::zeros(n), names, "y", SpaceTag::Raw).unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_row_csv() {
        let f = write_tmp("f1,f2,y\n1,2,3\n4,5,6\n7,8.5,9\n");
        let d = load_dataset_csv(f.path(), "y", None).unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.feature_names, vec!["f1", "f2"]);
        assert_eq!(d.features[[2, 1]], 8.5);
        assert_eq!(d.targets.to_vec(), vec![3.0, 6.0, 9.0]);
        assert_eq!(d.space, SpaceTag::Raw);
    }

    #[test]
    fn loads_twenty_feature_csv() {
        let names: Vec<String> = (0..20).map(|j| format!("feat{j}")).collect();
        let mut text = format!("E_act,{}\n", names.join(","));
        for r in 0..5 {
            let row: Vec<String> = (0..21).map(|c| format!("{}", r * 21 + c)).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let f = write_tmp(&text);
        let d = load_dataset_csv(f.path(), "E_act", None).unwrap();
        assert_eq!(d.n_features(), 20);
        assert_eq!(d.targets[1], 21.0);
    }

    #[test]
    fn nan_cell_is_rejected_with_location() {
        let f = write_tmp("f1,f2,y\n1,2,3\n4,NaN,6\n");
        let err = load_dataset_csv(f.path(), "y", None).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
        assert!(err.contains("'f2'"), "{err}");
    }

    #[test]
    fn missing_column_and_file() {
        let f = write_tmp("f1,y\n1,2\n");
        let err = load_dataset_csv(f.path(), "target", None).unwrap_err();
        assert!(err.to_string().contains("missing column 'target'"));
        let cols = vec!["f9".to_string()];
        assert!(load_dataset_csv(f.path(), "y", Some(&cols)).is_err());
        assert!(load_dataset_csv("/nonexistent/file.csv", "y", None).is_err());
    }

    #[test]
    fn explicit_feature_subset_keeps_requested_order() {
        let f = write_tmp("a,b,c,y\n1,2,3,4\n");
        let cols = vec!["c".to_string(), "a".to_string()];
        let d = load_dataset_csv(f.path(), "y", Some(&cols)).unwrap();
        assert_eq!(d.features.row(0).to_vec(), vec![3.0, 1.0]);
    }

    #[test]
    fn scaler_extrema_and_degenerate_columns() {
        let s = fit_scaler(&ds(array![[2.0, 5.0], [4.0, 5.0], [6.0, 5.0]])).unwrap();
        assert_eq!(s.mins, vec![2.0, 5.0]);
        assert_eq!(s.maxs, vec![6.0, 5.0]);
        assert_eq!(s.degenerate_cols, vec![1]);

        let s = fit_scaler(&ds(array![[0.0, 10.0], [1.0, 30.0]])).unwrap();
        assert_eq!(s.mins, vec![0.0, 10.0]);
        assert_eq!(s.maxs, vec![1.0, 30.0]);
        assert!(s.degenerate_cols.is_empty());
    }

    #[test]
    fn empty_dataset_cannot_be_fitted() {
        assert!(fit_scaler(&ds(Array2::zeros((0, 2)))).is_err());
    }

    #[test]
    fn apply_and_invert_examples() {
        let s = MinMaxScaler {
            mins: vec![2.0, 5.0, 0.0],
            maxs: vec![6.0, 5.0, 1.0],
            degenerate_cols: vec![1],
        };
        let scaled = apply_scaler(&s, &ds(array![[4.0, 5.0, 1.0]])).unwrap();
        assert_eq!(scaled.features.row(0).to_vec(), vec![0.5, 0.0, 1.0]);
        assert_eq!(scaled.space, SpaceTag::Scaled);
        let back = invert_scaler(&s, &scaled).unwrap();
        assert_eq!(back.features.row(0).to_vec(), vec![4.0, 5.0, 1.0]);
        assert!(apply_scaler(&s, &ds(array![[1.0, 2.0]])).is_err());
        assert!(invert_scaler(&s, &ds(array![[1.0, 2.0]])).is_err());
    }

    #[test]
    fn fitted_data_maps_exactly_onto_unit_interval() {
        let d = ds(array![[-3.0, 1e6], [7.0, 2e6], [2.0, 1.5e6]]);
        let scaled = apply_scaler(&fit_scaler(&d).unwrap(), &d).unwrap();
        assert_eq!(scaled.features.column(0).to_vec(), vec![0.0, 1.0, 0.5]);
        assert_eq!(scaled.features[[0, 1]], 0.0);
        assert_eq!(scaled.features[[1, 1]], 1.0);
        assert!(scaled.in_unit_box(0.0));
    }

    #[test]
    fn out_of_range_values_pass_through() {
        let s = MinMaxScaler {
            mins: vec![0.0],
            maxs: vec![2.0],
            degenerate_cols: vec![],
        };
        let t = s.transform(array![[4.0], [-2.0]].view()).unwrap();
        assert_eq!(t.column(0).to_vec(), vec![2.0, -1.0]);
    }

    #[test]
    fn kfold_examples() {
        let f = kfold_split(10, 5, 1).unwrap();
        assert_eq!(f.fold_sizes(), vec![2; 5]);
        let mut sizes = kfold_split(11, 5, 1).unwrap().fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        assert_eq!(kfold_split(11, 5, 9).unwrap(), kfold_split(11, 5, 9).unwrap());
        assert_ne!(kfold_split(50, 5, 1).unwrap(), kfold_split(50, 5, 2).unwrap());
        assert!(kfold_split(10, 1, 0).is_err());
        assert!(kfold_split(3, 5, 0).is_err());
    }

    #[test]
    fn split_partitions_rows() {
        let f = kfold_split(23, 4, 3).unwrap();
        let mut seen = vec![0; 23];
        for fold in 0..4 {
            let (train, test) = f.split(fold);
            assert_eq!(train.len() + test.len(), 23);
            for i in test {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn dataset_rejects_inconsistent_shapes() {
        let r = Dataset::new(Array2::zeros((3, 2)), Array1::zeros(2), vec!["a".into(), "b".into()], "y", SpaceTag::Raw);
        assert!(r.is_err());
        let r = Dataset::new(Array2::zeros((2, 2)), Array1::zeros(2), vec!["a".into()], "y", SpaceTag::Raw);
        assert!(r.is_err());
        let r = Dataset::new(array![[f64::INFINITY]], Array1::zeros(1), vec!["a".into()], "y", SpaceTag::Raw);
        assert!(r.is_err());
    }
}
