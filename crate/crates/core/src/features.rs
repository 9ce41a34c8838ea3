//! Precomputed per-image visual features.
//!
//! Features are plain data: nothing here participates in gradients, and
//! training never writes back into a [`FeatureTable`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::textpipe::QaRecord;

/// Norms at or below this are left untouched by [`l2_normalize`].
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            rows: HashMap::new(),
        })
    }

    pub fn insert(&mut self, name: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let name = name.into();
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                op: "feature_table",
                lhs: vec![self.dim],
                rhs: vec![vector.len()],
            });
        }
        if self.rows.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate image name {name:?}")));
        }
        self.rows.insert(name, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.rows.get(name).map(Vec::as_slice)
    }

    /// Copy with every row l2-normalized.
    pub fn normalized(&self) -> Self {
        Self {
            dim: self.dim,
            rows: self
                .rows
                .iter()
                .map(|(k, v)| (k.clone(), l2_normalize(v)))
                .collect(),
        }
    }
}

/// Parses `name,f1,...,fD` lines. The dimension comes from the first row.
pub fn load_feature_table(bytes: &[u8]) -> Result<FeatureTable> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::format(1, "invalid UTF-8"))?;
    let mut table: Option<FeatureTable> = None;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let name = fields.next().unwrap_or("").trim();
        if name.is_empty() {
            return Err(Error::format(line_no, "missing image name"));
        }
        let values = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(line_no, format!("bad float {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(Error::format(line_no, "row has no feature values"));
        }
        let table = table.get_or_insert_with(|| FeatureTable {
            dim: values.len(),
            rows: HashMap::new(),
        });
        if values.len() != table.dim {
            return Err(Error::format(
                line_no,
                format!("expected {} values, found {}", table.dim, values.len()),
            ));
        }
        if table.rows.contains_key(name) {
            return Err(Error::format(
                line_no,
                format!("duplicate image name {name:?}"),
            ));
        }
        table.rows.insert(name.to_string(), values);
    }
    table.ok_or_else(|| Error::format(1, "empty feature file: dimension undeterminable"))
}

/// Row `i` is the feature vector of `records[i].image_name`.
pub fn align(records: &[QaRecord], table: &FeatureTable) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| {
            table
                .get(&r.image_name)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Lookup(format!("no features for image {:?}", r.image_name)))
        })
        .collect()
}

pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > NORM_FLOOR {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}
