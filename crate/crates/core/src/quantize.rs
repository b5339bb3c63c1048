//! Vector quantization of representation vectors with Lloyd's K-means.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::io::ByteReader;
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::seed;

pub const QUANTIZER_MAGIC: &[u8; 4] = b"RPKQ";

/// Rows per chunk for parallel assignment; partial inertias are summed in chunk order.
const CHUNK_ROWS: usize = 2048;

/// Cluster id per sample together with per-cluster counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "AssignmentFile", try_from = "AssignmentFile")]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    k: usize,
    counts: Vec<usize>,
}

/// JSON shape of an assignment.
#[derive(Serialize, Deserialize)]
struct AssignmentFile {
    k: usize,
    labels: Vec<usize>,
}

impl From<ClusterAssignment> for AssignmentFile {
    fn from(a: ClusterAssignment) -> Self {
        Self {
            k: a.k,
            labels: a.labels,
        }
    }
}

impl TryFrom<AssignmentFile> for ClusterAssignment {
    type Error = Error;

    fn try_from(f: AssignmentFile) -> Result<Self> {
        Self::new(f.labels, f.k)
    }
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Construction("assignment has no samples".into()));
        }
        let mut counts = vec![0; k];
        for (i, &c) in labels.iter().enumerate() {
            if c >= k {
                return Err(Error::Construction(format!(
                    "label {c} of sample {i} out of range for k = {k}"
                )));
            }
            counts[c] += 1;
        }
        Ok(Self { labels, k, counts })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    /// Hex SHA-256 of `k` and the label sequence; equal fingerprints mean the same clustering.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.k as u64).to_le_bytes());
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::new(idx.iter().map(|&i| self.labels[i]).collect(), self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KmeansInit {
    /// D² sampling.
    #[default]
    PlusPlus,
    /// K distinct samples drawn uniformly.
    RandomSubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KmeansConfig {
    pub k: usize,
    pub max_steps: usize,
    pub n_restarts: usize,
    pub init: KmeansInit,
    pub seed: u64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            k: 1000,
            max_steps: 100,
            n_restarts: 5,
            init: KmeansInit::PlusPlus,
            seed: 0,
        }
    }
}

/// A fitted quantizer: `k` centroids in `dim` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    k: usize,
    dim: usize,
    centroids: Vec<f64>,
    inertia: f64,
    n_iterations_run: usize,
    seed: u64,
    inertia_history: Vec<f64>,
}

/// Outcome of one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartTrace {
    pub seed: u64,
    pub inertia: f64,
    /// Inertia after seeding, then after every Lloyd step.
    pub inertia_history: Vec<f64>,
}

/// Result of a single Lloyd iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydStep {
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Number of empty clusters that were re-seeded.
    pub repaired: usize,
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid for every row; ties go to the lowest centroid index.
fn nearest(features: &FeatureMatrix, centroids: &[f64]) -> (Vec<usize>, f64) {
    let dim = features.dim();
    let parts: Vec<(Vec<usize>, f64)> = features
        .values()
        .par_chunks(CHUNK_ROWS * dim)
        .map(|chunk| {
            let mut labels = Vec::with_capacity(chunk.len() / dim);
            let mut inertia = 0.0;
            for x in chunk.chunks_exact(dim) {
                let mut best = (0, f64::INFINITY);
                for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
                    let d = sq_dist(x, centroid);
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                labels.push(best.0);
                inertia += best.1;
            }
            (labels, inertia)
        })
        .collect();
    let mut labels = Vec::with_capacity(features.n_samples());
    let mut inertia = 0.0;
    for (l, s) in parts {
        labels.extend(l);
        inertia += s;
    }
    (labels, inertia)
}

fn inertia_of(features: &FeatureMatrix, centroids: &[f64], labels: &[usize]) -> f64 {
    let dim = features.dim();
    features
        .rows()
        .zip(labels)
        .map(|(x, &c)| sq_dist(x, &centroids[c * dim..(c + 1) * dim]))
        .sum()
}

/// One Lloyd iteration: recompute centroids as cluster means, re-seed empty
/// clusters, then reassign every sample to its nearest centroid.
///
/// An empty cluster takes the sample farthest from its own (updated) centroid,
/// lowest sample index on ties; a sample that is alone in its cluster is never
/// taken. The returned inertia is never larger than the inertia of
/// `current_labels` under `centroids`.
pub fn lloyd_step(
    features: &FeatureMatrix,
    centroids: &[f64],
    current_labels: &[usize],
) -> Result<LloydStep> {
    let dim = features.dim();
    if centroids.is_empty() || !centroids.len().is_multiple_of(dim) {
        return Err(Error::Argument(format!(
            "centroid buffer of length {} does not match dimension {dim}",
            centroids.len()
        )));
    }
    if current_labels.len() != features.n_samples() {
        return Err(Error::Argument("one label per sample required".into()));
    }
    let k = centroids.len() / dim;
    if let Some(&bad) = current_labels.iter().find(|&&c| c >= k) {
        return Err(Error::Argument(format!(
            "label {bad} out of range for k = {k}"
        )));
    }

    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (x, &c) in features.rows().zip(current_labels) {
        counts[c] += 1;
        for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x) {
            *s += v;
        }
    }
    let mut new_centroids = centroids.to_vec();
    for c in 0..k {
        if counts[c] > 0 {
            let n = counts[c] as f64;
            for (dst, &s) in new_centroids[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&sums[c * dim..(c + 1) * dim])
            {
                *dst = s / n;
            }
        }
    }

    let mut labels = current_labels.to_vec();
    let mut repaired = 0;
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() {
        let mut dist: Vec<f64> = features
            .rows()
            .zip(&labels)
            .map(|(x, &c)| sq_dist(x, &new_centroids[c * dim..(c + 1) * dim]))
            .collect();
        for e in empty {
            let mut best: Option<(usize, f64)> = None;
            for (i, &d) in dist.iter().enumerate() {
                if counts[labels[i]] < 2 || d < 0.0 {
                    continue;
                }
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((i, d));
                }
            }
            let Some((i, _)) = best else { break };
            counts[labels[i]] -= 1;
            counts[e] += 1;
            labels[i] = e;
            new_centroids[e * dim..(e + 1) * dim].copy_from_slice(features.row(i));
            // a moved sample is never picked again in this round
            dist[i] = -1.0;
            repaired += 1;
        }
    }

    let (labels, inertia) = nearest(features, &new_centroids);
    Ok(LloydStep {
        centroids: new_centroids,
        labels,
        inertia,
        repaired,
    })
}

fn seed_centroids<R: Rng>(
    features: &FeatureMatrix,
    k: usize,
    init: KmeansInit,
    rng: &mut R,
) -> Vec<f64> {
    let n = features.n_samples();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    match init {
        KmeansInit::RandomSubset => {
            chosen = rand::seq::index::sample(rng, n, k).into_vec();
        }
        KmeansInit::PlusPlus => {
            chosen.push(rng.gen_range(0..n));
            let mut d2: Vec<f64> = features
                .rows()
                .map(|x| sq_dist(x, features.row(chosen[0])))
                .collect();
            while chosen.len() < k {
                let total: f64 = d2.iter().sum();
                let next = if total > 0.0 {
                    let target = rng.gen::<f64>() * total;
                    let mut acc = 0.0;
                    let mut pick = None;
                    for (i, &d) in d2.iter().enumerate() {
                        acc += d;
                        if d > 0.0 && acc > target {
                            pick = Some(i);
                            break;
                        }
                    }
                    // rounding can leave target ≥ acc; fall back to the last positive weight
                    pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
                } else {
                    let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                    free[rng.gen_range(0..free.len())]
                };
                chosen.push(next);
                let c = features.row(next);
                for (d, x) in d2.iter_mut().zip(features.rows()) {
                    *d = d.min(sq_dist(x, c));
                }
            }
        }
    }
    let mut centroids = Vec::with_capacity(k * features.dim());
    for &i in &chosen {
        centroids.extend_from_slice(features.row(i));
    }
    centroids
}

fn run_once(
    features: &FeatureMatrix,
    cfg: &KmeansConfig,
    run_seed: u64,
) -> (Quantizer, RestartTrace) {
    let mut rng = seed::rng(run_seed);
    let mut centroids = seed_centroids(features, cfg.k, cfg.init, &mut rng);
    let (mut labels, inertia0) = nearest(features, &centroids);
    let mut history = vec![inertia0];
    let mut steps = 0;
    for _ in 0..cfg.max_steps {
        let step = lloyd_step(features, &centroids, &labels).expect("shapes are consistent");
        let prev = *history.last().unwrap();
        debug_assert!(
            step.inertia <= prev + 1e-9 * prev.max(1.0),
            "Lloyd inertia increased: {prev} -> {}",
            step.inertia
        );
        history.push(step.inertia);
        steps += 1;
        let converged = step.repaired == 0 && step.labels == labels;
        centroids = step.centroids;
        labels = step.labels;
        if converged {
            break;
        }
    }
    let inertia = *history.last().unwrap();
    let q = Quantizer {
        k: cfg.k,
        dim: features.dim(),
        centroids,
        inertia,
        n_iterations_run: steps,
        seed: run_seed,
        inertia_history: history.clone(),
    };
    let trace = RestartTrace {
        seed: run_seed,
        inertia,
        inertia_history: history,
    };
    (q, trace)
}

impl KmeansConfig {
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Argument(format!(
                "k must be at least 2, got {}",
                self.k
            )));
        }
        if self.k > n_samples {
            return Err(Error::Argument(format!(
                "k = {} exceeds the number of samples ({n_samples})",
                self.k
            )));
        }
        if self.n_restarts == 0 {
            return Err(Error::Argument("n_restarts must be at least 1".into()));
        }
        Ok(())
    }

    /// Fit and keep the restart with the lowest inertia (lowest restart index on ties).
    pub fn fit(&self, features: &FeatureMatrix) -> Result<Quantizer> {
        Ok(self.fit_traced(features)?.0)
    }

    /// Like [`fit`](Self::fit), also returning every restart's trace.
    pub fn fit_traced(&self, features: &FeatureMatrix) -> Result<(Quantizer, Vec<RestartTrace>)> {
        self.validate(features.n_samples())?;
        let runs: Vec<(Quantizer, RestartTrace)> = (0..self.n_restarts)
            .into_par_iter()
            .map(|r| {
                run_once(
                    features,
                    self,
                    seed::derive(self.seed, "kmeans-restart", r as u64),
                )
            })
            .collect();
        let mut best = 0;
        for (r, (q, _)) in runs.iter().enumerate() {
            if q.inertia < runs[best].0.inertia {
                best = r;
            }
        }
        let traces = runs.iter().map(|(_, t)| t.clone()).collect();
        let q = runs.into_iter().nth(best).unwrap().0;
        Ok((q, traces))
    }
}

/// K-means with k-means++ seeding; best of `n_restarts` independent runs.
pub fn kmeans_fit(
    features: &FeatureMatrix,
    k: usize,
    max_steps: usize,
    n_restarts: usize,
    seed: u64,
) -> Result<Quantizer> {
    KmeansConfig {
        k,
        max_steps,
        n_restarts,
        init: KmeansInit::PlusPlus,
        seed,
    }
    .fit(features)
}

impl Quantizer {
    pub fn from_centroids(k: usize, dim: usize, centroids: Vec<f64>, seed: u64) -> Result<Self> {
        if k == 0 || dim == 0 || centroids.len() != k * dim {
            return Err(Error::Construction(format!(
                "{} centroid values for k = {k}, dim = {dim}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite centroid".into()));
        }
        Ok(Self {
            k,
            dim,
            centroids,
            inertia: 0.0,
            n_iterations_run: 0,
            seed,
            inertia_history: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn n_iterations_run(&self) -> usize {
        self.n_iterations_run
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Inertia after seeding and after every Lloyd step of the kept run.
    pub fn inertia_history(&self) -> &[f64] {
        &self.inertia_history
    }

    pub fn assign(&self, features: &FeatureMatrix) -> Result<ClusterAssignment> {
        if features.dim() != self.dim {
            return Err(Error::Argument(format!(
                "features have dimension {}, quantizer expects {}",
                features.dim(),
                self.dim
            )));
        }
        let (labels, _) = nearest(features, &self.centroids);
        ClusterAssignment::new(labels, self.k)
    }

    /// Sum of squared distances of `features` to their assigned centroids.
    pub fn inertia_on(&self, features: &FeatureMatrix, labels: &ClusterAssignment) -> f64 {
        inertia_of(features, &self.centroids, labels.labels())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 8 * self.centroids.len());
        out.extend_from_slice(QUANTIZER_MAGIC);
        out.extend_from_slice(&crate::data::io::FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.inertia.to_le_bytes());
        for &v in &self.centroids {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(buf, "RPKQ");
        rd.magic(QUANTIZER_MAGIC)?;
        let k = rd.usize()?;
        let dim = rd.usize()?;
        let seed = rd.u64()?;
        let inertia = rd.f64()?;
        let count = rd.sized(k, dim)?;
        rd.sized(count, 8)?;
        let mut centroids = Vec::with_capacity(count);
        for _ in 0..count {
            centroids.push(rd.f64()?);
        }
        rd.finish()?;
        let mut q = Self::from_centroids(k, dim, centroids, seed)
            .map_err(|e| Error::Format(format!("RPKQ: {e}")))?;
        q.inertia = inertia;
        Ok(q)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// `assign` as a free function.
pub fn assign(q: &Quantizer, features: &FeatureMatrix) -> Result<ClusterAssignment> {
    q.assign(features)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points_1d(xs: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(xs.len(), 1, xs.to_vec(), "t").unwrap()
    }

    /// Brute force over all labelings of 4 points into 2 non-empty clusters.
    fn brute_force_two_clusters(xs: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << xs.len()) - 1 {
            let mut total = 0.0;
            for side in [true, false] {
                let members: Vec<f64> = xs
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| (mask >> i & 1 == 1) == side)
                    .map(|(_, &x)| x)
                    .collect();
                let mean = members.iter().sum::<f64>() / members.len() as f64;
                total += members.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
            }
            best = best.min(total);
        }
        best
    }

    #[test]
    fn four_point_instance_reaches_global_optimum() {
        let xs = [0.0, 0.1, 10.0, 10.1];
        let optimum = brute_force_two_clusters(&xs);
        assert!((optimum - 0.01).abs() < 1e-12);
        for seed in [0, 1, 2, 99] {
            let q = kmeans_fit(&points_1d(&xs), 2, 100, 5, seed).unwrap();
            assert!((q.inertia() - optimum).abs() < 1e-9);
            let mut c: Vec<f64> = q.centroids().to_vec();
            c.sort_by(f64::total_cmp);
            assert!((c[0] - 0.05).abs() < 1e-12 && (c[1] - 10.05).abs() < 1e-12);
        }
        let a = kmeans_fit(&points_1d(&xs), 2, 100, 20, 3).unwrap();
        let b = kmeans_fit(&points_1d(&xs), 2, 100, 20, 4).unwrap();
        assert!((a.inertia() - b.inertia()).abs() < 1e-9);
    }

    #[test]
    fn k_equal_n_is_an_exact_fit() {
        let q = kmeans_fit(&points_1d(&[3.0, -1.0, 7.5, 2.0]), 4, 100, 3, 11).unwrap();
        assert_eq!(q.inertia(), 0.0);
    }

    #[test]
    fn k_larger_than_n_is_rejected() {
        assert!(matches!(
            kmeans_fit(&points_1d(&[1.0, 2.0]), 3, 10, 1, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn assign_tie_goes_to_lowest_index() {
        let q = Quantizer::from_centroids(5, 1, vec![100.0, -1.0, 50.0, 3.0, 1.0], 0).unwrap();
        let a = q.assign(&points_1d(&[0.0, 3.0])).unwrap();
        assert_eq!(a.labels(), &[1, 3]);
        assert!(matches!(
            q.assign(&FeatureMatrix::new(1, 2, vec![0.0, 0.0], "t").unwrap()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn converged_fit_is_a_fixpoint() {
        let xs: Vec<f64> = (0..40)
            .map(|i| (i % 4) as f64 * 5.0 + (i as f64) * 0.01)
            .collect();
        let f = points_1d(&xs);
        let q = kmeans_fit(&f, 4, 100, 3, 5).unwrap();
        let labels = q.assign(&f).unwrap();
        let step = lloyd_step(&f, q.centroids(), labels.labels()).unwrap();
        assert_eq!(step.labels, labels.labels());
        assert!((step.inertia - q.inertia()).abs() < 1e-9);
        assert_eq!(step.centroids, q.centroids());
    }

    #[test]
    fn one_step_from_poor_init_strictly_decreases() {
        let f = points_1d(&[0.0, 0.1, 10.0, 10.1]);
        let centroids = [0.0, 0.1];
        let (labels, before) = nearest(&f, &centroids);
        // hand value: points 10, 10.1 sit at 9.9, 10.0 from centroid 0.1
        assert!((before - (9.9f64.powi(2) + 10.0f64.powi(2))).abs() < 1e-9);
        let step = lloyd_step(&f, &centroids, &labels).unwrap();
        assert!(step.inertia < before);
    }

    #[test]
    fn empty_cluster_is_repaired_to_farthest_point() {
        // 3 points, k = 2, every point labelled 0: cluster 1 is empty.
        let f = points_1d(&[0.0, 1.0, 5.0]);
        let centroids = [2.0, 100.0];
        let labels = [0, 0, 0];
        let before = inertia_of(&f, &centroids, &labels);
        let step = lloyd_step(&f, &centroids, &labels).unwrap();
        assert_eq!(step.repaired, 1);
        // mean of cluster 0 is 2; farthest point is 5.0 (distance 9)
        assert_eq!(step.centroids, vec![2.0, 5.0]);
        assert_eq!(step.labels, vec![0, 0, 1]);
        assert!((step.inertia - 5.0).abs() < 1e-12);
        assert!(step.inertia <= before);
    }

    #[test]
    fn quantizer_bytes_round_trip() {
        let q = kmeans_fit(&points_1d(&[0.0, 0.5, 4.0, 4.5, 9.0]), 3, 50, 2, 8).unwrap();
        let back = Quantizer::from_bytes(&q.to_bytes()).unwrap();
        assert_eq!(back.centroids(), q.centroids());
        assert_eq!(back.inertia(), q.inertia());
        assert_eq!(back.seed(), q.seed());
        let mut bad = q.to_bytes();
        bad[..4].copy_from_slice(b"RPFM");
        assert!(matches!(Quantizer::from_bytes(&bad), Err(Error::Format(_))));
    }
}
