//! Sparse-coefficient fingerprint index.
//!
//! Each record keeps only the nonzero coefficients of a sparse model. A
//! directory keyed by the concatenated `(cos, sin)` support lets queries skip
//! records whose nonzero locations do not match the probe before any
//! similarity is computed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Coefficients, OrientationModel, Variant};
use crate::par::{self, Execution};

pub const INDEX_FORMAT: &str = "ridgefield-index";
pub const INDEX_VERSION: u32 = 1;
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFeature {
    pub id: String,
    pub k: usize,
    #[serde(rename = "S")]
    pub sparsity: usize,
    #[serde(rename = "sc")]
    pub support_cos: Vec<usize>,
    #[serde(rename = "vc")]
    pub values_cos: Vec<f64>,
    #[serde(rename = "ss")]
    pub support_sin: Vec<usize>,
    #[serde(rename = "vs")]
    pub values_sin: Vec<f64>,
}

impl SparseFeature {
    pub fn dim(&self) -> usize {
        (2 * self.k + 1).pow(2)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for (name, support, values) in [
            ("cos", &self.support_cos, &self.values_cos),
            ("sin", &self.support_sin, &self.values_sin),
        ] {
            if support.len() != values.len() {
                return Err(Error::Malformed(format!(
                    "{}: {name} support and values differ in length",
                    self.id
                )));
            }
            if support.len() > self.sparsity {
                return Err(Error::Malformed(format!(
                    "{}: {name} support exceeds S = {}",
                    self.id, self.sparsity
                )));
            }
            if support.windows(2).any(|w| w[0] >= w[1]) || support.iter().any(|&j| j >= d) {
                return Err(Error::Malformed(format!(
                    "{}: {name} support must be strictly increasing below {d}",
                    self.id
                )));
            }
            if !values.iter().all(|v| v.is_finite()) {
                return Err(Error::Malformed(format!("{}: non-finite value", self.id)));
            }
        }
        Ok(())
    }

    /// Concatenated support: cos indices as-is, sin indices offset by `d`.
    pub fn signature(&self) -> Vec<usize> {
        let d = self.dim();
        self.support_cos
            .iter()
            .copied()
            .chain(self.support_sin.iter().map(|j| j + d))
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    // summed per half, in the same order as `sparse_dot`, so a feature's
    // similarity with itself is exactly 1
    fn norm_sq(&self) -> f64 {
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        sq(&self.values_cos) + sq(&self.values_sin)
    }

    pub fn nnz(&self) -> usize {
        self.support_cos.len() + self.support_sin.len()
    }

    /// Multiplies all values by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values_cos.iter_mut().for_each(|v| *v *= alpha);
        out.values_sin.iter_mut().for_each(|v| *v *= alpha);
        out
    }
}

pub fn extract_feature(model: &OrientationModel, id: impl Into<String>) -> Result<SparseFeature> {
    if model.variant == Variant::Classical {
        return Err(Error::DenseModel);
    }
    let split = |c: &Coefficients| match c {
        Coefficients::Sparse { support, values } => Ok((support.clone(), values.clone())),
        Coefficients::Dense(_) => Err(Error::DenseModel),
    };
    let (support_cos, values_cos) = split(&model.beta_cos)?;
    let (support_sin, values_sin) = split(&model.beta_sin)?;
    let feature = SparseFeature {
        id: id.into(),
        k: model.spec.k,
        sparsity: model.sparsity.ok_or(Error::DenseModel)?,
        support_cos,
        values_cos,
        support_sin,
        values_sin,
    };
    feature.validate()?;
    Ok(feature)
}

/// Cosine similarity of two sparse concatenated vectors, summed over the
/// support union only. Zero vectors have similarity 0.
pub fn cosine_similarity(a: &SparseFeature, b: &SparseFeature) -> f64 {
    let (na, nb) = (a.norm_sq(), b.norm_sq());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot = sparse_dot(&a.support_cos, &a.values_cos, &b.support_cos, &b.values_cos)
        + sparse_dot(&a.support_sin, &a.values_sin, &b.support_sin, &b.values_sin);
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

fn sparse_dot(ia: &[usize], va: &[f64], ib: &[usize], vb: &[f64]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < ia.len() && j < ib.len() {
        match ia[i].cmp(&ib[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += va[i] * vb[j];
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Jaccard overlap of two sorted index lists. Two empty lists overlap fully.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterMode {
    /// Only records whose concatenated support equals the probe's.
    ExactSupport,
    /// Records whose support Jaccard overlap with the probe is at least `tau`.
    Overlap(f64),
    None,
}

impl FilterMode {
    pub fn passes(&self, probe: &[usize], record: &[usize]) -> bool {
        match *self {
            FilterMode::ExactSupport => probe == record,
            FilterMode::Overlap(tau) => jaccard(probe, record) >= tau,
            FilterMode::None => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// Records that passed the support filter (= similarities computed).
    pub candidates: usize,
    pub hits: Vec<Hit>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    k: usize,
    #[serde(rename = "S")]
    sparsity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexStore {
    k: usize,
    sparsity: usize,
    records: BTreeMap<String, SparseFeature>,
    directory: BTreeMap<Vec<usize>, BTreeSet<String>>,
}

impl IndexStore {
    pub fn new(k: usize, sparsity: usize) -> Self {
        Self {
            k,
            sparsity,
            records: BTreeMap::new(),
            directory: BTreeMap::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sparsity(&self) -> usize {
        self.sparsity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SparseFeature> {
        self.records.get(id)
    }

    pub fn records(&self) -> impl Iterator<Item = &SparseFeature> {
        self.records.values()
    }

    /// Distinct support signatures and the ids filed under each.
    pub fn directory(&self) -> &BTreeMap<Vec<usize>, BTreeSet<String>> {
        &self.directory
    }

    fn check_config(&self, f: &SparseFeature) -> Result<()> {
        if f.k != self.k || f.sparsity != self.sparsity {
            return Err(Error::ConfigMismatch(format!(
                "feature {:?} has (k={}, S={}), store has (k={}, S={})",
                f.id, f.k, f.sparsity, self.k, self.sparsity
            )));
        }
        Ok(())
    }

    pub fn insert(&mut self, feature: SparseFeature) -> Result<()> {
        self.check_config(&feature)?;
        feature.validate()?;
        if self.records.contains_key(&feature.id) {
            return Err(Error::DuplicateId(feature.id));
        }
        self.directory
            .entry(feature.signature())
            .or_default()
            .insert(feature.id.clone());
        self.records.insert(feature.id.clone(), feature);
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Result<SparseFeature> {
        let feature = self
            .records
            .remove(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))?;
        let sig = feature.signature();
        if let Some(ids) = self.directory.get_mut(&sig) {
            ids.remove(id);
            if ids.is_empty() {
                self.directory.remove(&sig);
            }
        }
        Ok(feature)
    }

    pub fn query(&self, probe: &SparseFeature, top_k: usize, filter: FilterMode) -> Result<QueryResult> {
        self.query_with(probe, top_k, filter, Execution::default())
    }

    pub fn query_with(
        &self,
        probe: &SparseFeature,
        top_k: usize,
        filter: FilterMode,
        exec: Execution,
    ) -> Result<QueryResult> {
        if top_k == 0 {
            return Err(Error::InvalidParameter("top_k must be positive".into()));
        }
        if let FilterMode::Overlap(tau) = filter {
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::InvalidParameter(format!("overlap ratio {tau} outside [0, 1]")));
            }
        }
        self.check_config(probe)?;
        probe.validate()?;

        let sig = probe.signature();
        let candidates: Vec<&SparseFeature> = match filter {
            FilterMode::None => self.records.values().collect(),
            FilterMode::ExactSupport => self
                .directory
                .get(&sig)
                .into_iter()
                .flatten()
                .map(|id| &self.records[id])
                .collect(),
            FilterMode::Overlap(_) => self
                .directory
                .iter()
                .filter(|(s, _)| filter.passes(&sig, s))
                .flat_map(|(_, ids)| ids.iter().map(|id| &self.records[id]))
                .collect(),
        };
        let mut hits = par::map_slice(exec, &candidates, |rec| Hit {
            id: rec.id.clone(),
            similarity: cosine_similarity(probe, rec),
        });
        hits.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| a.id.cmp(&b.id))
        });
        hits.truncate(top_k);
        Ok(QueryResult {
            candidates: candidates.len(),
            hits,
        })
    }

    /// Writes a config header line followed by one JSON record per line, in id order.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let header = Header {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            k: self.k,
            sparsity: self.sparsity,
        };
        let io = |e| Error::io("<index stream>", e);
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n").map_err(io)?;
        for rec in self.records.values() {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let malformed = |n: usize, msg: String| Error::Malformed(format!("index line {}: {msg}", n + 1));
        let header: Header = match lines.next() {
            Some((n, line)) => {
                let line = line.map_err(|e| Error::io("<index stream>", e))?;
                serde_json::from_str(&line).map_err(|e| malformed(n, e.to_string()))?
            }
            None => return Err(Error::Malformed("empty index file".into())),
        };
        if header.format != INDEX_FORMAT {
            return Err(Error::Malformed(format!("not an index file: {:?}", header.format)));
        }
        if header.version != INDEX_VERSION {
            return Err(Error::VersionMismatch {
                found: header.version,
                expected: INDEX_VERSION,
            });
        }
        let mut store = IndexStore::new(header.k, header.sparsity);
        for (n, line) in lines {
            let line = line.map_err(|e| Error::io("<index stream>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SparseFeature =
                serde_json::from_str(&line).map_err(|e| malformed(n, e.to_string()))?;
            store.insert(rec).map_err(|e| malformed(n, e.to_string()))?;
        }
        Ok(store)
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}
