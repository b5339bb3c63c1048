//! Feature and concept matrices, standardization and stratified splitting.

pub(crate) mod io;

pub use io::{
    load_concepts, load_concepts_csv, load_features, read_concepts, read_features, save_concepts,
    save_concepts_csv, save_features, save_features_csv, write_concepts, write_features,
    ConceptFormat, FeatureFormat,
};

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantize::ClusterAssignment;
use crate::seed;

/// Default floor applied to per-dimension standard deviations.
pub const STD_EPSILON: f64 = 1e-8;

/// `n_samples × dim` representation vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_samples: usize,
    dim: usize,
    values: Vec<f64>,
    source_tag: String,
}

impl FeatureMatrix {
    pub fn new(
        n_samples: usize,
        dim: usize,
        values: Vec<f64>,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        if n_samples == 0 || dim == 0 {
            return Err(Error::Construction(format!(
                "feature matrix must be non-empty, got {n_samples}x{dim}"
            )));
        }
        if values.len() != n_samples * dim {
            return Err(Error::Construction(format!(
                "expected {} values for {n_samples}x{dim}, got {}",
                n_samples * dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            n_samples,
            dim,
            values,
            source_tag: source_tag.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], source_tag: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Data(format!(
                "ragged rows: row {i} has {} values, expected {dim}",
                rows[i].len()
            )));
        }
        Self::new(rows.len(), dim, rows.concat(), source_tag)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    /// Copy of the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n_samples) {
            return Err(Error::Argument(format!(
                "row index {bad} out of range for {} samples",
                self.n_samples
            )));
        }
        let mut values = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self::new(idx.len(), self.dim, values, self.source_tag.clone())
    }

    /// The same matrix with `f` applied to every value.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.n_samples,
            self.dim,
            self.values.iter().map(|&v| f(v)).collect(),
            self.source_tag.clone(),
        )
    }

    pub fn with_source_tag(mut self, tag: impl Into<String>) -> Self {
        self.source_tag = tag.into();
        self
    }
}

/// A named, contiguous block of concept columns coming from one annotation source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptGroup {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl ConceptGroup {
    pub fn new(name: impl Into<String>, start: usize, len: usize) -> Self {
        Self {
            name: name.into(),
            start,
            len,
        }
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// `n_samples × n_concepts` binary matrix; each row packed into `⌈M/8⌉` bytes,
/// bit `j` of a row is concept `j`, LSB first within each byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptMatrix {
    n_samples: usize,
    n_concepts: usize,
    row_bytes: usize,
    bits: Vec<u8>,
    concept_names: Vec<String>,
    groups: Vec<ConceptGroup>,
}

pub(crate) fn validate_groups(groups: &[ConceptGroup], m: usize) -> Result<()> {
    let mut names = HashSet::new();
    for g in groups {
        if !names.insert(g.name.as_str()) {
            return Err(Error::Format(format!("duplicate group name {:?}", g.name)));
        }
        if g.len == 0 {
            return Err(Error::Format(format!("group {:?} is empty", g.name)));
        }
    }
    let mut spans: Vec<&ConceptGroup> = groups.iter().collect();
    spans.sort_by_key(|g| g.start);
    let mut next = 0usize;
    for g in spans {
        if g.start < next {
            return Err(Error::Format(format!(
                "group {:?} [{}, {}) overlaps a previous group",
                g.name,
                g.start,
                g.start + g.len
            )));
        }
        if g.start > next {
            return Err(Error::Format(format!(
                "concepts [{next}, {}) are not covered by any group",
                g.start
            )));
        }
        next = g.start + g.len;
    }
    if next != m {
        return Err(Error::Format(format!(
            "groups cover [0, {next}) but there are {m} concepts"
        )));
    }
    Ok(())
}

impl ConceptMatrix {
    /// Build from already-packed rows. `bits.len()` must be `n_samples * ⌈M/8⌉` and
    /// padding bits past `M` must be zero.
    pub fn from_packed(
        n_samples: usize,
        n_concepts: usize,
        bits: Vec<u8>,
        concept_names: Vec<String>,
        groups: Vec<ConceptGroup>,
    ) -> Result<Self> {
        if n_samples == 0 || n_concepts == 0 {
            return Err(Error::Construction(format!(
                "concept matrix must be non-empty, got {n_samples}x{n_concepts}"
            )));
        }
        let row_bytes = n_concepts.div_ceil(8);
        if bits.len() != n_samples * row_bytes {
            return Err(Error::Construction(format!(
                "expected {} packed bytes, got {}",
                n_samples * row_bytes,
                bits.len()
            )));
        }
        if concept_names.len() != n_concepts {
            return Err(Error::Construction(format!(
                "{} concept names for {n_concepts} concepts",
                concept_names.len()
            )));
        }
        validate_groups(&groups, n_concepts)?;
        for g in &groups {
            let mut seen = HashSet::new();
            for name in &concept_names[g.range()] {
                if !seen.insert(name.as_str()) {
                    return Err(Error::Construction(format!(
                        "concept name {name:?} repeated in group {:?}",
                        g.name
                    )));
                }
            }
        }
        let pad = n_concepts % 8;
        if pad != 0 {
            let mask = !((1u8 << pad) - 1);
            for i in 0..n_samples {
                if bits[i * row_bytes + row_bytes - 1] & mask != 0 {
                    return Err(Error::Data(format!(
                        "row {i} has bits set past concept {n_concepts}"
                    )));
                }
            }
        }
        Ok(Self {
            n_samples,
            n_concepts,
            row_bytes,
            bits,
            concept_names,
            groups,
        })
    }

    /// Build from a dense row-major matrix whose entries must be 0 or 1.
    pub fn from_dense(
        n_samples: usize,
        n_concepts: usize,
        dense: &[u8],
        concept_names: Vec<String>,
        groups: Vec<ConceptGroup>,
    ) -> Result<Self> {
        if dense.len() != n_samples * n_concepts {
            return Err(Error::Construction(format!(
                "expected {} dense entries, got {}",
                n_samples * n_concepts,
                dense.len()
            )));
        }
        let row_bytes = n_concepts.div_ceil(8);
        let mut bits = vec![0u8; n_samples * row_bytes];
        for (pos, &v) in dense.iter().enumerate() {
            match v {
                0 => {}
                1 => {
                    let (i, j) = (pos / n_concepts, pos % n_concepts);
                    bits[i * row_bytes + j / 8] |= 1 << (j % 8);
                }
                other => {
                    return Err(Error::Data(format!(
                        "non-binary concept value {other} at row {}, column {}",
                        pos / n_concepts,
                        pos % n_concepts
                    )))
                }
            }
        }
        Self::from_packed(n_samples, n_concepts, bits, concept_names, groups)
    }

    /// Single-group matrix with generated names `c0, c1, ...`.
    pub fn from_rows_single_group(rows: &[Vec<bool>], group: &str) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Data("ragged concept rows".into()));
        }
        let dense: Vec<u8> = rows.iter().flatten().map(|&b| u8::from(b)).collect();
        Self::from_dense(
            rows.len(),
            m,
            &dense,
            (0..m).map(|j| format!("c{j}")).collect(),
            vec![ConceptGroup::new(group, 0, m)],
        )
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    pub fn concept_names(&self) -> &[String] {
        &self.concept_names
    }

    pub fn groups(&self) -> &[ConceptGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&ConceptGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn packed(&self) -> &[u8] {
        &self.bits
    }

    pub fn packed_row(&self, i: usize) -> &[u8] {
        &self.bits[i * self.row_bytes..(i + 1) * self.row_bytes]
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.row_bytes + j / 8] >> (j % 8) & 1 == 1
    }

    /// Indices of the concepts present in row `i`, ascending.
    pub fn active(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.packed_row(i)
            .iter()
            .enumerate()
            .flat_map(|(byte_idx, &byte)| {
                (0..8).filter_map(move |b| (byte >> b & 1 == 1).then_some(byte_idx * 8 + b))
            })
    }

    /// Column `j` as a boolean vector over samples.
    pub fn column(&self, j: usize) -> Vec<bool> {
        (0..self.n_samples).map(|i| self.get(i, j)).collect()
    }

    /// Keep only the named groups, in the order given. Group spans are renumbered.
    pub fn select_groups<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Argument("no concept groups selected".into()));
        }
        let mut selected = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref();
            let g = self.group(name).ok_or_else(|| {
                Error::Argument(format!(
                    "unknown concept group {name:?}; available: {}",
                    self.group_names().join(", ")
                ))
            })?;
            if selected.iter().any(|s: &&ConceptGroup| s.name == name) {
                return Err(Error::Argument(format!("group {name:?} selected twice")));
            }
            selected.push(g);
        }
        let columns: Vec<usize> = selected.iter().flat_map(|g| g.range()).collect();
        let mut groups = Vec::with_capacity(selected.len());
        let mut start = 0;
        for g in &selected {
            groups.push(ConceptGroup::new(g.name.clone(), start, g.len));
            start += g.len;
        }
        self.select_columns(&columns, groups)
    }

    fn select_columns(&self, columns: &[usize], groups: Vec<ConceptGroup>) -> Result<Self> {
        let m = columns.len();
        let mut dense = Vec::with_capacity(self.n_samples * m);
        for i in 0..self.n_samples {
            dense.extend(columns.iter().map(|&j| u8::from(self.get(i, j))));
        }
        let names = columns
            .iter()
            .map(|&j| self.concept_names[j].clone())
            .collect();
        Self::from_dense(self.n_samples, m, &dense, names, groups)
    }

    pub fn group_names(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.name.as_str()).collect()
    }

    /// Copy of the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n_samples) {
            return Err(Error::Argument(format!(
                "row index {bad} out of range for {} samples",
                self.n_samples
            )));
        }
        let mut bits = Vec::with_capacity(idx.len() * self.row_bytes);
        for &i in idx {
            bits.extend_from_slice(self.packed_row(i));
        }
        Self::from_packed(
            idx.len(),
            self.n_concepts,
            bits,
            self.concept_names.clone(),
            self.groups.clone(),
        )
    }

    /// Horizontal concatenation; groups of `other` are appended after ours.
    pub fn hconcat(&self, other: &ConceptMatrix) -> Result<Self> {
        if self.n_samples != other.n_samples {
            return Err(Error::Argument(format!(
                "cannot concatenate {} and {} samples",
                self.n_samples, other.n_samples
            )));
        }
        let m = self.n_concepts + other.n_concepts;
        let mut dense = Vec::with_capacity(self.n_samples * m);
        for i in 0..self.n_samples {
            dense.extend((0..self.n_concepts).map(|j| u8::from(self.get(i, j))));
            dense.extend((0..other.n_concepts).map(|j| u8::from(other.get(i, j))));
        }
        let mut names = self.concept_names.clone();
        names.extend(other.concept_names.iter().cloned());
        let mut groups = self.groups.clone();
        groups.extend(
            other
                .groups
                .iter()
                .map(|g| ConceptGroup::new(g.name.clone(), g.start + self.n_concepts, g.len)),
        );
        Self::from_dense(self.n_samples, m, &dense, names, groups)
    }

    /// Rows reordered so that row `i` of the result is row `perm[i]` of `self`.
    pub fn with_rows_permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_samples {
            return Err(Error::Argument("permutation length mismatch".into()));
        }
        self.select_rows(perm)
    }
}

/// Per-dimension mean and floored population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl StandardizationStats {
    pub fn compute(m: &FeatureMatrix, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Argument(format!(
                "epsilon must be > 0, got {epsilon}"
            )));
        }
        let n = m.n_samples() as f64;
        let d = m.dim();
        let mut mean = vec![0.0; d];
        for row in m.rows() {
            for (acc, &v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; d];
        for row in m.rows() {
            for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var.iter().map(|&s| (s / n).sqrt().max(epsilon)).collect();
        Ok(Self { mean, std, epsilon })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.dim() != self.dim() {
            return Err(Error::Argument(format!(
                "standardization stats have dimension {}, features have {}",
                self.dim(),
                m.dim()
            )));
        }
        let d = self.dim();
        let values = m
            .values()
            .iter()
            .enumerate()
            .map(|(pos, &v)| (v - self.mean[pos % d]) / self.std[pos % d])
            .collect();
        FeatureMatrix::new(m.n_samples(), d, values, m.source_tag())
    }
}

/// Standardize to zero mean and unit (population) standard deviation.
///
/// With `stats` given, those statistics are applied unchanged, which is what
/// transfer to another dataset needs.
pub fn standardize(
    m: &FeatureMatrix,
    stats: Option<&StandardizationStats>,
) -> Result<(FeatureMatrix, StandardizationStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => StandardizationStats::compute(m, STD_EPSILON)?,
    };
    Ok((stats.apply(m)?, stats))
}

/// Train / validation / test partition of sample indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    /// Clusters with fewer than three members; they went wholly to train.
    pub small_clusters: Vec<usize>,
}

impl SplitIndices {
    pub fn n_samples(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Smallest cluster that is split three ways; smaller clusters go to train.
pub const MIN_STRATIFIED_CLUSTER: usize = 3;

/// Per-cluster stratified split: `round(ratio_test · n_c)` samples of each
/// cluster go to test, then `round(ratio_val_of_train · rest)` of the remainder
/// go to validation. A zero validation ratio leaves validation empty.
///
/// If no cluster is large enough to contribute test samples (all singletons,
/// say), `round(ratio_test · n)` samples, at least one, are moved from train
/// to test uniformly at random.
pub fn stratified_split(
    assignments: &ClusterAssignment,
    ratio_test: f64,
    ratio_val_of_train: f64,
    seed: u64,
) -> Result<SplitIndices> {
    if !(ratio_test > 0.0 && ratio_test < 1.0) {
        return Err(Error::Argument(format!(
            "ratio_test must be in (0, 1), got {ratio_test}"
        )));
    }
    if !(0.0..1.0).contains(&ratio_val_of_train) {
        return Err(Error::Argument(format!(
            "ratio_val_of_train must be in [0, 1), got {ratio_val_of_train}"
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); assignments.k()];
    for (i, &c) in assignments.labels().iter().enumerate() {
        members[c].push(i);
    }
    let mut rng = seed::rng(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut small_clusters = Vec::new();
    for (c, mut idx) in members.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < MIN_STRATIFIED_CLUSTER {
            small_clusters.push(c);
            train.extend(idx);
            continue;
        }
        idx.shuffle(&mut rng);
        let n_test = (ratio_test * idx.len() as f64).round() as usize;
        let rest = idx.len() - n_test;
        let n_val = (ratio_val_of_train * rest as f64).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        val.extend_from_slice(&idx[n_test..n_test + n_val]);
        train.extend_from_slice(&idx[n_test + n_val..]);
    }
    if test.is_empty() && train.len() >= 2 {
        let n_test = ((ratio_test * assignments.n_samples() as f64).round() as usize)
            .clamp(1, train.len() - 1);
        train.shuffle(&mut rng);
        test = train.split_off(train.len() - n_test);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train,
        val,
        test,
        seed,
        small_clusters,
    })
}
