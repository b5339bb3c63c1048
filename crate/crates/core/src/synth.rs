//! Synthetic datasets with known structure.
//!
//! * [`gen_toy`]: four 2-D blobs carrying a color and a shape attribute, in a
//!   layout where both attributes are linearly separable or one where color
//!   follows an XOR pattern.
//! * [`gen_oracle`]: cluster ids and concept bits that are conditionally
//!   independent given the cluster, so `I(cluster; concepts)` has a closed form.
//! * [`gen_group_structured`]: several concept groups of different informativeness.
//! * [`gen_blobs`]: Gaussian blobs in `D` dimensions whose latent class drives
//!   the concepts, for experiments that need features.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ConceptGroup, ConceptMatrix, FeatureMatrix};
use crate::error::{Error, Result};
use crate::quantize::ClusterAssignment;
use crate::seed;

/// Largest concept block whose joint distribution is summed exactly.
pub const MAX_EXACT_CONCEPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyLayout {
    Separable,
    Xor,
}

impl std::str::FromStr for ToyLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(Self::Separable),
            "xor" => Ok(Self::Xor),
            other => Err(Error::Argument(format!("unknown toy layout {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub n_per_cluster: usize,
    pub layout: ToyLayout,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            n_per_cluster: 200,
            layout: ToyLayout::Xor,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

/// Distance between adjacent blob centres.
pub const TOY_SPACING: f64 = 1.0;

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_cluster == 0 {
            return Err(Error::Argument("n_per_cluster must be at least 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std < 0.15 * TOY_SPACING) {
            return Err(Error::Argument(format!(
                "noise_std must be in [0, {}), got {}",
                0.15 * TOY_SPACING,
                self.noise_std
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ToyData {
    pub features: FeatureMatrix,
    /// Groups `color` (`red`, `blue`) and `shape` (`square`, `circle`).
    pub concepts: ConceptMatrix,
    /// Blob id: blob `c` sits at `(c & 1, c >> 1)`.
    pub clusters: ClusterAssignment,
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("std is finite and non-negative")
}

pub fn gen_toy(spec: &ToySpec) -> Result<ToyData> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let noise = normal(spec.noise_std);
    let n = 4 * spec.n_per_cluster;
    let mut values = Vec::with_capacity(2 * n);
    let mut dense = Vec::with_capacity(4 * n);
    let mut labels = Vec::with_capacity(n);
    for c in 0..4usize {
        let (x, y) = ((c & 1) as f64 * TOY_SPACING, (c >> 1) as f64 * TOY_SPACING);
        let red = match spec.layout {
            ToyLayout::Separable => c & 1 == 0,
            ToyLayout::Xor => (c & 1) == (c >> 1),
        };
        let square = c >> 1 == 0;
        for _ in 0..spec.n_per_cluster {
            values.push(x + noise.sample(&mut rng));
            values.push(y + noise.sample(&mut rng));
            dense.extend([
                u8::from(red),
                u8::from(!red),
                u8::from(square),
                u8::from(!square),
            ]);
            labels.push(c);
        }
    }
    let tag = format!("toy-{:?}", spec.layout).to_lowercase();
    Ok(ToyData {
        features: FeatureMatrix::new(n, 2, values, tag)?,
        concepts: ConceptMatrix::from_dense(
            n,
            4,
            &dense,
            ["red", "blue", "square", "circle"]
                .map(String::from)
                .to_vec(),
            vec![
                ConceptGroup::new("color", 0, 2),
                ConceptGroup::new("shape", 2, 2),
            ],
        )?,
        clusters: ClusterAssignment::new(labels, 4)?,
    })
}

/// Closed-form information quantities of a generating distribution, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticInfo {
    pub h_cluster: f64,
    pub cond_entropy: f64,
    pub mi: f64,
}

fn check_prior(prior: &[f64]) -> Result<()> {
    if prior.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Argument(
            "cluster prior entries must be in [0, 1]".into(),
        ));
    }
    let total: f64 = prior.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Argument(format!(
            "cluster prior sums to {total}, not 1"
        )));
    }
    Ok(())
}

fn check_bernoulli(params: &[Vec<f64>], k: usize, m: usize) -> Result<()> {
    if params.len() != k || params.iter().any(|r| r.len() != m) {
        return Err(Error::Argument(format!(
            "concept parameters must be {k}x{m}"
        )));
    }
    if params.iter().flatten().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Argument(
            "Bernoulli parameters must be in [0, 1]".into(),
        ));
    }
    Ok(())
}

/// Exact `H(C)`, `H(C | Y)` and `I(C; Y)` when the `m` bits of `Y` are
/// independent given `C` with `P(Y_j = 1 | C = c) = params[c][j]`.
pub fn analytic_info(prior: &[f64], params: &[Vec<f64>]) -> Result<AnalyticInfo> {
    let k = prior.len();
    let m = params.first().map_or(0, Vec::len);
    check_prior(prior)?;
    check_bernoulli(params, k, m)?;
    if m > MAX_EXACT_CONCEPTS {
        return Err(Error::Argument(format!(
            "exact enumeration supports at most {MAX_EXACT_CONCEPTS} concepts, got {m}"
        )));
    }
    let h_cluster: f64 = prior
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    let mut cond = 0.0;
    let mut joint = vec![0.0; k];
    for y in 0u32..(1 << m) {
        for (c, slot) in joint.iter_mut().enumerate() {
            let mut p = prior[c];
            for (j, &theta) in params[c].iter().enumerate() {
                p *= if y >> j & 1 == 1 { theta } else { 1.0 - theta };
            }
            *slot = p;
        }
        let py: f64 = joint.iter().sum();
        if py > 0.0 {
            cond -= joint
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * (p / py).ln())
                .sum::<f64>();
        }
    }
    let cond = cond.max(0.0);
    Ok(AnalyticInfo {
        h_cluster,
        cond_entropy: cond,
        mi: (h_cluster - cond).max(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub k: usize,
    pub m: usize,
    /// `k × m`, `P(bit j | cluster c)`.
    pub concept_given_cluster: Vec<Vec<f64>>,
    pub cluster_prior: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

impl OracleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.m == 0 || self.n_samples == 0 {
            return Err(Error::Argument(
                "oracle needs k >= 2, m >= 1, n >= 1".into(),
            ));
        }
        if self.cluster_prior.len() != self.k {
            return Err(Error::Argument("cluster prior must have k entries".into()));
        }
        check_prior(&self.cluster_prior)?;
        check_bernoulli(&self.concept_given_cluster, self.k, self.m)
    }

    /// Bits are the one-hot cluster indicator (`m = k`).
    pub fn deterministic(k: usize, n_samples: usize, seed: u64) -> Self {
        let params = (0..k)
            .map(|c| (0..k).map(|j| if j == c { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::uniform(k, k, params, n_samples, seed)
    }

    /// Every cluster has the same bit distribution.
    pub fn independent(k: usize, m: usize, p: f64, n_samples: usize, seed: u64) -> Self {
        Self::uniform(k, m, vec![vec![p; m]; k], n_samples, seed)
    }

    /// Bit `j` of cluster `c` is on with probability `hi` when bit `j` of `c`'s
    /// binary code is set, `lo` otherwise.
    pub fn patterned(k: usize, m: usize, hi: f64, lo: f64, n_samples: usize, seed: u64) -> Self {
        let params = (0..k)
            .map(|c| {
                (0..m)
                    .map(|j| if c >> j & 1 == 1 { hi } else { lo })
                    .collect()
            })
            .collect();
        Self::uniform(k, m, params, n_samples, seed)
    }

    pub fn uniform(k: usize, m: usize, params: Vec<Vec<f64>>, n_samples: usize, seed: u64) -> Self {
        Self {
            k,
            m,
            concept_given_cluster: params,
            cluster_prior: vec![1.0 / k as f64; k],
            n_samples,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleData {
    pub clusters: ClusterAssignment,
    pub concepts: ConceptMatrix,
    pub analytic: AnalyticInfo,
}

fn sample_categorical<R: Rng>(rng: &mut R, prior: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (c, &p) in prior.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    prior.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn sample_bits<R: Rng>(rng: &mut R, params: &[f64], out: &mut Vec<u8>) {
    for &p in params {
        out.push(u8::from(rng.gen::<f64>() < p));
    }
}

fn named_group(name: &str, prefix: &str, m: usize) -> (Vec<String>, ConceptGroup) {
    (
        (0..m).map(|j| format!("{prefix}{j}")).collect(),
        ConceptGroup::new(name, 0, m),
    )
}

pub fn gen_oracle(spec: &OracleSpec) -> Result<OracleData> {
    spec.validate()?;
    let analytic = analytic_info(&spec.cluster_prior, &spec.concept_given_cluster)?;
    let mut rng = seed::rng(spec.seed);
    let mut labels = Vec::with_capacity(spec.n_samples);
    let mut dense = Vec::with_capacity(spec.n_samples * spec.m);
    for _ in 0..spec.n_samples {
        let c = sample_categorical(&mut rng, &spec.cluster_prior);
        sample_bits(&mut rng, &spec.concept_given_cluster[c], &mut dense);
        labels.push(c);
    }
    let (names, group) = named_group("oracle", "bit", spec.m);
    Ok(OracleData {
        clusters: ClusterAssignment::new(labels, spec.k)?,
        concepts: ConceptMatrix::from_dense(spec.n_samples, spec.m, &dense, names, vec![group])?,
        analytic,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    /// `k × m_g`, `P(bit j | cluster c)`.
    pub concept_given_cluster: Vec<Vec<f64>>,
}

impl GroupSpec {
    pub fn width(&self) -> usize {
        self.concept_given_cluster.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStructuredSpec {
    pub k: usize,
    pub cluster_prior: Vec<f64>,
    pub groups: Vec<GroupSpec>,
    pub n_samples: usize,
    pub seed: u64,
}

impl GroupStructuredSpec {
    /// Three groups: `objects` is the exact one-hot cluster indicator, `texture`
    /// a noisy one-hot (`0.6` on, `0.1` off), and `style` four fair coins that
    /// ignore the cluster.
    pub fn standard(k: usize, n_samples: usize, seed: u64) -> Self {
        let one_hot = |on: f64, off: f64| -> Vec<Vec<f64>> {
            (0..k)
                .map(|c| (0..k).map(|j| if j == c { on } else { off }).collect())
                .collect()
        };
        Self {
            k,
            cluster_prior: vec![1.0 / k as f64; k],
            groups: vec![
                GroupSpec {
                    name: "objects".into(),
                    concept_given_cluster: one_hot(1.0, 0.0),
                },
                GroupSpec {
                    name: "texture".into(),
                    concept_given_cluster: one_hot(0.6, 0.1),
                },
                GroupSpec {
                    name: "style".into(),
                    concept_given_cluster: vec![vec![0.5; 4]; k],
                },
            ],
            n_samples,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.n_samples == 0 || self.groups.is_empty() {
            return Err(Error::Argument(
                "need k >= 2, n >= 1 and at least one group".into(),
            ));
        }
        if self.cluster_prior.len() != self.k {
            return Err(Error::Argument("cluster prior must have k entries".into()));
        }
        check_prior(&self.cluster_prior)?;
        for g in &self.groups {
            if g.width() == 0 {
                return Err(Error::Argument(format!(
                    "group {:?} has no concepts",
                    g.name
                )));
            }
            check_bernoulli(&g.concept_given_cluster, self.k, g.width())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GroupStructuredData {
    pub clusters: ClusterAssignment,
    pub concepts: ConceptMatrix,
    /// Exact `I(cluster; group)` for every group, in group order.
    pub group_info: Vec<(String, AnalyticInfo)>,
}

pub fn gen_group_structured(spec: &GroupStructuredSpec) -> Result<GroupStructuredData> {
    spec.validate()?;
    let group_info = spec
        .groups
        .iter()
        .map(|g| {
            Ok((
                g.name.clone(),
                analytic_info(&spec.cluster_prior, &g.concept_given_cluster)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let m: usize = spec.groups.iter().map(GroupSpec::width).sum();
    let mut rng = seed::rng(spec.seed);
    let mut labels = Vec::with_capacity(spec.n_samples);
    let mut dense = Vec::with_capacity(spec.n_samples * m);
    for _ in 0..spec.n_samples {
        let c = sample_categorical(&mut rng, &spec.cluster_prior);
        for g in &spec.groups {
            sample_bits(&mut rng, &g.concept_given_cluster[c], &mut dense);
        }
        labels.push(c);
    }
    let mut names = Vec::with_capacity(m);
    let mut groups = Vec::with_capacity(spec.groups.len());
    let mut start = 0;
    for g in &spec.groups {
        names.extend((0..g.width()).map(|j| format!("{}_{j}", g.name)));
        groups.push(ConceptGroup::new(g.name.clone(), start, g.width()));
        start += g.width();
    }
    Ok(GroupStructuredData {
        clusters: ClusterAssignment::new(labels, spec.k)?,
        concepts: ConceptMatrix::from_dense(spec.n_samples, m, &dense, names, groups)?,
        group_info,
    })
}

/// Gaussian blobs whose latent class drives the concept bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub n_latent: usize,
    pub dim: usize,
    pub n_per_latent: usize,
    /// Standard deviation of the blob centres around the origin.
    pub center_spread: f64,
    pub noise_std: f64,
    /// `n_latent × m`, `P(bit j | latent class)`.
    pub concept_given_latent: Vec<Vec<f64>>,
    pub seed: u64,
}

impl BlobSpec {
    /// Each latent class gets a random `m`-bit code; a code bit that is set
    /// fires with probability `hi`, an unset one with `lo`.
    pub fn coded(
        n_latent: usize,
        dim: usize,
        m: usize,
        hi: f64,
        lo: f64,
        n_per_latent: usize,
        seed: u64,
    ) -> Self {
        let mut rng = seed::rng(seed::derive(seed, "blob-codes", 0));
        let params = (0..n_latent)
            .map(|_| {
                (0..m)
                    .map(|_| if rng.gen::<bool>() { hi } else { lo })
                    .collect()
            })
            .collect();
        Self {
            n_latent,
            dim,
            n_per_latent,
            center_spread: 4.0,
            noise_std: 1.0,
            concept_given_latent: params,
            seed,
        }
    }

    /// Concepts are the exact one-hot latent indicator.
    pub fn one_hot(n_latent: usize, dim: usize, n_per_latent: usize, seed: u64) -> Self {
        let params = (0..n_latent)
            .map(|c| {
                (0..n_latent)
                    .map(|j| if j == c { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        Self {
            n_latent,
            dim,
            n_per_latent,
            center_spread: 4.0,
            noise_std: 1.0,
            concept_given_latent: params,
            seed,
        }
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_latent < 1 || self.dim < 1 || self.n_per_latent < 1 {
            return Err(Error::Argument("blob spec needs positive sizes".into()));
        }
        if !(self.noise_std >= 0.0 && self.center_spread >= 0.0) {
            return Err(Error::Argument("spreads must be non-negative".into()));
        }
        let m = self.concept_given_latent.first().map_or(0, Vec::len);
        if m == 0 {
            return Err(Error::Argument("blob spec has no concepts".into()));
        }
        check_bernoulli(&self.concept_given_latent, self.n_latent, m)
    }
}

#[derive(Debug, Clone)]
pub struct BlobData {
    pub features: FeatureMatrix,
    pub concepts: ConceptMatrix,
    pub latent: ClusterAssignment,
    /// `I(latent; concepts)` when the concept block is small enough to enumerate.
    pub analytic: Option<AnalyticInfo>,
}

pub fn gen_blobs(spec: &BlobSpec) -> Result<BlobData> {
    spec.validate()?;
    let m = spec.concept_given_latent[0].len();
    let mut center_rng = seed::rng(seed::derive(spec.seed, "blob-centers", 0));
    let spread = normal(spec.center_spread);
    let centers: Vec<f64> = (0..spec.n_latent * spec.dim)
        .map(|_| spread.sample(&mut center_rng))
        .collect();
    let mut rng = seed::rng(seed::derive(spec.seed, "blob-samples", 0));
    let noise = normal(spec.noise_std);
    let n = spec.n_latent * spec.n_per_latent;
    let mut values = Vec::with_capacity(n * spec.dim);
    let mut dense = Vec::with_capacity(n * m);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        // interleave classes so that prefixes of the data stay balanced
        let c = i % spec.n_latent;
        let center = &centers[c * spec.dim..(c + 1) * spec.dim];
        values.extend(center.iter().map(|&mu| mu + noise.sample(&mut rng)));
        sample_bits(&mut rng, &spec.concept_given_latent[c], &mut dense);
        labels.push(c);
    }
    let analytic = (m <= MAX_EXACT_CONCEPTS)
        .then(|| {
            analytic_info(
                &vec![1.0 / spec.n_latent as f64; spec.n_latent],
                &spec.concept_given_latent,
            )
        })
        .transpose()?;
    let (names, group) = named_group("concepts", "c", m);
    Ok(BlobData {
        features: FeatureMatrix::new(n, spec.dim, values, "blobs")?,
        concepts: ConceptMatrix::from_dense(n, m, &dense, names, vec![group])?,
        latent: ClusterAssignment::new(labels, spec.n_latent)?,
        analytic,
    })
}

/// Features for an existing assignment: sample `i` is drawn around a random
/// centre of its cluster.
pub fn embed_clusters(
    clusters: &ClusterAssignment,
    dim: usize,
    center_spread: f64,
    noise_std: f64,
    seed: u64,
) -> Result<FeatureMatrix> {
    if dim == 0 || !(center_spread >= 0.0 && noise_std >= 0.0) {
        return Err(Error::Argument(
            "embedding needs dim >= 1 and non-negative spreads".into(),
        ));
    }
    let mut center_rng = seed::rng(seed::derive(seed, "embed-centers", 0));
    let spread = normal(center_spread);
    let centers: Vec<f64> = (0..clusters.k() * dim)
        .map(|_| spread.sample(&mut center_rng))
        .collect();
    let mut rng = seed::rng(seed::derive(seed, "embed-samples", 0));
    let noise = normal(noise_std);
    let mut values = Vec::with_capacity(clusters.n_samples() * dim);
    for &c in clusters.labels() {
        values.extend(
            centers[c * dim..(c + 1) * dim]
                .iter()
                .map(|&mu| mu + noise.sample(&mut rng)),
        );
    }
    FeatureMatrix::new(clusters.n_samples(), dim, values, "embedded")
}
