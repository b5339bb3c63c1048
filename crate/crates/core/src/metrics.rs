//! Information-theoretic and classification metrics. All quantities are in nats.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ConceptMatrix;
use crate::error::{Error, Result};
use crate::probe::{ReverseProbe, ScoreMatrix};
use crate::quantize::ClusterAssignment;

/// Empirical entropy `−Σ p ln p` of a count vector, with `0 ln 0 = 0`.
pub fn entropy(counts: &[usize]) -> Result<f64> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::Argument(
            "entropy of an all-zero count vector".into(),
        ));
    }
    let n = n as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0))
}

/// Mutual-information estimate `H(f_K) − H(f_K | y)`, where the conditional
/// entropy is replaced by a probe's held-out cross-entropy (an upper bound).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoEstimate {
    pub h_clusters: f64,
    pub cond_entropy_bound: f64,
    /// May be negative; never clamped.
    pub mi_lower_bound: f64,
    /// `mi_lower_bound / h_clusters` clamped to `[0, 1]`.
    pub normalized: f64,
    pub normalized_raw: f64,
}

impl InfoEstimate {
    pub fn new(h_clusters: f64, cond_entropy_bound: f64) -> Self {
        let mi = h_clusters - cond_entropy_bound;
        let raw = if h_clusters > 0.0 {
            mi / h_clusters
        } else {
            0.0
        };
        Self {
            h_clusters,
            cond_entropy_bound,
            mi_lower_bound: mi,
            normalized: raw.clamp(0.0, 1.0),
            normalized_raw: raw,
        }
    }

    pub fn mi_bits(&self) -> f64 {
        self.mi_lower_bound / std::f64::consts::LN_2
    }
}

/// `H(f_K)` from the full assignment, the bound from the probe's cross-entropy on `test_idx`.
pub fn info_estimate(
    assignments: &ClusterAssignment,
    probe: &ReverseProbe,
    concepts: &ConceptMatrix,
    test_idx: &[usize],
) -> Result<InfoEstimate> {
    if test_idx.is_empty() {
        return Err(Error::Argument(
            "info estimate needs a non-empty test set".into(),
        ));
    }
    let h = entropy(assignments.counts())?;
    let ce = probe.cross_entropy(concepts, assignments, test_idx)?;
    Ok(InfoEstimate::new(h, ce))
}

/// Counts of co-occurring labels. Rows and columns are the distinct labels of
/// each side, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub rows: usize,
    pub cols: usize,
    /// `rows × cols`, row-major.
    pub counts: Vec<u64>,
    pub n: u64,
    pub row_labels: Vec<usize>,
    pub col_labels: Vec<usize>,
}

fn compact(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut uniq = labels.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let idx = labels
        .iter()
        .map(|l| uniq.binary_search(l).unwrap())
        .collect();
    (uniq, idx)
}

pub fn contingency(labels_a: &[usize], labels_b: &[usize]) -> Result<ContingencyTable> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::Argument(format!(
            "labelings have different lengths ({} vs {})",
            labels_a.len(),
            labels_b.len()
        )));
    }
    if labels_a.is_empty() {
        return Err(Error::Argument("contingency of empty labelings".into()));
    }
    let (row_labels, ra) = compact(labels_a);
    let (col_labels, cb) = compact(labels_b);
    let (rows, cols) = (row_labels.len(), col_labels.len());
    let mut counts = vec![0u64; rows * cols];
    for (&r, &c) in ra.iter().zip(&cb) {
        counts[r * cols + c] += 1;
    }
    Ok(ContingencyTable {
        rows,
        cols,
        counts,
        n: labels_a.len() as u64,
        row_labels,
        col_labels,
    })
}

impl ContingencyTable {
    pub fn from_counts(rows: usize, cols: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != rows * cols {
            return Err(Error::Construction("count matrix shape mismatch".into()));
        }
        let n = counts.iter().sum();
        if n == 0 {
            return Err(Error::Construction("contingency table with n = 0".into()));
        }
        Ok(Self {
            rows,
            cols,
            counts,
            n,
            row_labels: (0..rows).collect(),
            col_labels: (0..cols).collect(),
        })
    }

    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.counts[r * self.cols + c]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts
            .chunks_exact(self.cols)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let mut s = vec![0; self.cols];
        for r in self.counts.chunks_exact(self.cols) {
            for (acc, &v) in s.iter_mut().zip(r) {
                *acc += v;
            }
        }
        s
    }
}

fn entropy_u64(counts: &[u64]) -> f64 {
    let v: Vec<usize> = counts.iter().map(|&c| c as usize).collect();
    entropy(&v).unwrap_or(0.0)
}

/// How the two entropies are combined into the NMI/AMI denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiNormalizer {
    #[default]
    Arithmetic,
    Geometric,
    Max,
    Min,
}

impl NmiNormalizer {
    pub fn combine(self, ha: f64, hb: f64) -> f64 {
        match self {
            NmiNormalizer::Arithmetic => 0.5 * (ha + hb),
            NmiNormalizer::Geometric => (ha * hb).sqrt(),
            NmiNormalizer::Max => ha.max(hb),
            NmiNormalizer::Min => ha.min(hb),
        }
    }
}

impl std::str::FromStr for NmiNormalizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arithmetic" => Ok(Self::Arithmetic),
            "geometric" => Ok(Self::Geometric),
            "max" => Ok(Self::Max),
            "min" => Ok(Self::Min),
            other => Err(Error::Argument(format!("unknown NMI normalizer {other:?}"))),
        }
    }
}

/// Plug-in mutual information of a table.
#[allow(clippy::needless_range_loop)]
pub fn mutual_information(table: &ContingencyTable) -> f64 {
    let rs = table.row_sums();
    let cs = table.col_sums();
    let n = table.n as f64;
    let mut mi = 0.0;
    for r in 0..table.rows {
        for c in 0..table.cols {
            let nab = table.get(r, c);
            if nab == 0 {
                continue;
            }
            // the ratio is formed from exact integer products
            let num = u128::from(table.n) * u128::from(nab);
            let den = u128::from(rs[r]) * u128::from(cs[c]);
            mi += nab as f64 / n * (num as f64 / den as f64).ln();
        }
    }
    mi
}

/// `(MI, NMI)`; NMI is `1` when both labelings are constant.
pub fn mi_nmi(table: &ContingencyTable, normalizer: NmiNormalizer) -> (f64, f64) {
    let mi = mutual_information(table);
    let ha = entropy_u64(&table.row_sums());
    let hb = entropy_u64(&table.col_sums());
    if ha == 0.0 && hb == 0.0 {
        return (mi, 1.0);
    }
    let denom = normalizer.combine(ha, hb);
    let nmi = if denom > 0.0 { mi / denom } else { 0.0 };
    (mi, nmi.clamp(0.0, 1.0))
}

/// `ln k!` for `k = 0..=n`.
fn log_factorials(n: usize) -> Vec<f64> {
    (0..=n).map(|k| libm::lgamma(k as f64 + 1.0)).collect()
}

/// Expected mutual information of two labelings with the given margins under
/// the fixed-margin permutation (hypergeometric) model.
pub fn expected_mi(row_sums: &[u64], col_sums: &[u64], n: u64) -> Result<f64> {
    let total_a: u64 = row_sums.iter().sum();
    let total_b: u64 = col_sums.iter().sum();
    if total_a != n || total_b != n {
        return Err(Error::Argument(format!(
            "margins sum to {total_a} and {total_b}, expected {n}"
        )));
    }
    if n == 0 {
        return Err(Error::Argument("expected MI with n = 0".into()));
    }
    let nn = n as usize;
    let lf = log_factorials(nn);
    let nf = n as f64;
    let ln_n = nf.ln();
    let per_row: Vec<f64> = row_sums
        .par_iter()
        .map(|&a| {
            let a = a as usize;
            let mut row_total = 0.0;
            for &b in col_sums {
                let b = b as usize;
                let lo = (a + b).saturating_sub(nn).max(1);
                let hi = a.min(b);
                if lo > hi {
                    continue;
                }
                let fixed = lf[a] + lf[b] + lf[nn - a] + lf[nn - b] - lf[nn];
                let ln_ab = (a as f64).ln() + (b as f64).ln();
                for nij in lo..=hi {
                    let log_p = fixed - lf[nij] - lf[a - nij] - lf[b - nij] - lf[nn + nij - a - b];
                    let x = nij as f64;
                    row_total += x / nf * (ln_n + x.ln() - ln_ab) * log_p.exp();
                }
            }
            row_total
        })
        .collect();
    Ok(per_row.iter().sum())
}

/// Chance-adjusted mutual information `(MI − E[MI]) / (norm(H_a, H_b) − E[MI])`.
pub fn ami(table: &ContingencyTable, normalizer: NmiNormalizer) -> Result<f64> {
    let rs = table.row_sums();
    let cs = table.col_sums();
    // a single cluster on both sides: the labelings agree trivially
    if (table.rows == 1 && table.cols == 1)
        || (table.rows as u64 == table.n && table.cols as u64 == table.n)
    {
        return Ok(1.0);
    }
    let mi = mutual_information(table);
    let emi = expected_mi(&rs, &cs, table.n)?;
    let norm = normalizer.combine(entropy_u64(&rs), entropy_u64(&cs));
    let num = mi - emi;
    let mut den = norm - emi;
    if den.abs() < f64::EPSILON {
        if num.abs() < f64::EPSILON {
            return Ok(1.0);
        }
        den = f64::EPSILON.copysign(den);
    }
    Ok((num / den).min(1.0))
}

/// Top-1 accuracy and macro mean average precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub top1: f64,
    pub map: f64,
    /// Classes with at least one test sample (the ones averaged by mAP).
    pub classes_evaluated: usize,
    /// Classes in `0..k` with no test sample.
    pub absent_classes: Vec<usize>,
}

/// Average precision of ranking all samples by `score_of(i)` (descending, ties
/// by sample index) against `is_positive`.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / n_pos as f64)
}

pub fn top1_and_map(scores: &ScoreMatrix, labels: &[usize]) -> Result<RankingMetrics> {
    if scores.n == 0 || labels.len() != scores.n {
        return Err(Error::Argument(format!(
            "{} score rows for {} labels",
            scores.n,
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= scores.k) {
        return Err(Error::Argument(format!(
            "label {bad} out of range for k = {}",
            scores.k
        )));
    }
    let pred = scores.argmax();
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    let top1 = hits as f64 / scores.n as f64;

    let aps: Vec<Option<f64>> = (0..scores.k)
        .into_par_iter()
        .map(|c| {
            let col: Vec<f64> = (0..scores.n).map(|i| scores.row(i)[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            average_precision(&col, &pos)
        })
        .collect();
    let present: Vec<f64> = aps.iter().flatten().copied().collect();
    let absent_classes = aps
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_none())
        .map(|(c, _)| c)
        .collect();
    Ok(RankingMetrics {
        top1,
        map: present.iter().sum::<f64>() / present.len() as f64,
        classes_evaluated: present.len(),
        absent_classes,
    })
}

/// `k × k` confusion matrix with rows normalized by true-class counts.
pub fn confusion_matrix(pred: &[usize], labels: &[usize], k: usize) -> Result<Vec<f64>> {
    if pred.len() != labels.len() {
        return Err(Error::Argument(
            "prediction and label lengths differ".into(),
        ));
    }
    let mut counts = vec![0.0; k * k];
    let mut totals = vec![0usize; k];
    for (&p, &t) in pred.iter().zip(labels) {
        if p >= k || t >= k {
            return Err(Error::Argument(format!(
                "label {} out of range for k = {k}",
                p.max(t)
            )));
        }
        counts[t * k + p] += 1.0;
        totals[t] += 1;
    }
    for t in 0..k {
        if totals[t] > 0 {
            let n = totals[t] as f64;
            counts[t * k..(t + 1) * k].iter_mut().for_each(|v| *v /= n);
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub i: usize,
    pub j: usize,
    pub confusion_a: f64,
    pub confusion_b: f64,
    /// `confusion_a − confusion_b`.
    pub drop: f64,
}

/// Every unordered cluster pair ranked by how much less probe B confuses it
/// than probe A; ties by `(i, j)`.
pub fn confusion_pairs(
    pred_a: &[usize],
    pred_b: &[usize],
    labels: &[usize],
    k: usize,
) -> Result<Vec<ConfusionPair>> {
    if pred_a.len() != pred_b.len() {
        return Err(Error::Argument(
            "prediction sets cover different samples".into(),
        ));
    }
    let ca = confusion_matrix(pred_a, labels, k)?;
    let cb = confusion_matrix(pred_b, labels, k)?;
    let mut pairs = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let a = ca[i * k + j] + ca[j * k + i];
            let b = cb[i * k + j] + cb[j * k + i];
            pairs.push(ConfusionPair {
                i,
                j,
                confusion_a: a,
                confusion_b: b,
                drop: a - b,
            });
        }
    }
    pairs.sort_by(|x, y| {
        y.drop
            .total_cmp(&x.drop)
            .then(x.i.cmp(&y.i))
            .then(x.j.cmp(&y.j))
    });
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDiff {
    pub concept: usize,
    pub name: String,
    /// `θ[i][concept] − θ[j][concept]`; positive favours cluster `i`.
    pub diff: f64,
}

/// The `top_n` concepts with the largest `|θ[i] − θ[j]|`, ties by concept index.
pub fn coefficient_diff(
    probe: &ReverseProbe,
    cluster_i: usize,
    cluster_j: usize,
    top_n: usize,
) -> Result<Vec<CoefficientDiff>> {
    if cluster_i == cluster_j {
        return Err(Error::Argument(
            "coefficient difference of a cluster with itself".into(),
        ));
    }
    if cluster_i >= probe.k() || cluster_j >= probe.k() {
        return Err(Error::Argument(format!(
            "clusters ({cluster_i}, {cluster_j}) out of range for k = {}",
            probe.k()
        )));
    }
    let mut diffs: Vec<CoefficientDiff> = (0..probe.m())
        .map(|m| CoefficientDiff {
            concept: m,
            name: probe.concept_names()[m].clone(),
            diff: probe.weight(cluster_i, m) - probe.weight(cluster_j, m),
        })
        .collect();
    diffs.sort_by(|a, b| {
        b.diff
            .abs()
            .total_cmp(&a.diff.abs())
            .then(a.concept.cmp(&b.concept))
    });
    diffs.truncate(top_n);
    Ok(diffs)
}

/// Seeds and configuration that produced a report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub kmeans_seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub probe_seed: u64,
    pub probe_config: Option<crate::probe::ProbeConfig>,
    pub concept_groups: Vec<String>,
    pub clustering_fingerprint: String,
    pub selected_epoch: Option<usize>,
    pub toolkit_version: String,
}

/// Everything measured for one probe on one clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub info: InfoEstimate,
    /// NMI between the probe's predictions and the cluster ids on the test split.
    pub nmi: f64,
    pub ami: f64,
    pub top1: f64,
    pub map: f64,
    /// Plug-in MI between predictions and cluster ids on the test split.
    pub prediction_mi: f64,
    pub nmi_normalizer: NmiNormalizer,
    pub k: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub absent_test_clusters: Vec<usize>,
    pub small_clusters: Vec<usize>,
    pub provenance: Provenance,
}

/// Score `probe` against `targets` on `test_idx`. `h_assignments` supplies the
/// cluster frequencies used for `H(f_K)`.
pub fn evaluate_probe(
    probe: &ReverseProbe,
    concepts: &ConceptMatrix,
    targets: &ClusterAssignment,
    test_idx: &[usize],
    normalizer: NmiNormalizer,
) -> Result<ProbeReport> {
    let info = info_estimate(targets, probe, concepts, test_idx)?;
    let scores = probe.logits(concepts, test_idx)?;
    let truth: Vec<usize> = test_idx.iter().map(|&i| targets.labels()[i]).collect();
    let ranking = top1_and_map(&scores, &truth)?;
    let pred = scores.argmax();
    let table = contingency(&pred, &truth)?;
    let (mi, nmi) = mi_nmi(&table, normalizer);
    let ami = ami(&table, normalizer)?;
    Ok(ProbeReport {
        info,
        nmi,
        ami,
        top1: ranking.top1,
        map: ranking.map,
        prediction_mi: mi,
        nmi_normalizer: normalizer,
        k: targets.k(),
        n_train: 0,
        n_val: 0,
        n_test: test_idx.len(),
        absent_test_clusters: ranking.absent_classes,
        small_clusters: Vec::new(),
        provenance: Provenance {
            probe_seed: probe.config().seed,
            probe_config: Some(probe.config().clone()),
            clustering_fingerprint: targets.fingerprint(),
            selected_epoch: probe.selected_epoch(),
            toolkit_version: crate::VERSION.to_string(),
            ..Provenance::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::LinearModel;

    #[test]
    fn entropy_examples() {
        assert!((entropy(&[5; 8]).unwrap() - 8f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[0, 7, 0]).unwrap(), 0.0);
        let expected = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert!((entropy(&[1, 3]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.5623).abs() < 1e-4);
        assert!(entropy(&[0, 0]).is_err());
    }

    #[test]
    fn contingency_examples() {
        let t = contingency(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap();
        assert_eq!((t.rows, t.cols), (2, 2));
        assert_eq!(t.counts, vec![0, 2, 2, 0]);
        let t = contingency(&[4], &[9]).unwrap();
        assert_eq!(t.counts, vec![1]);
        let t = contingency(&[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(t.counts, vec![1, 0, 0, 0, 1, 0, 0, 0, 1]);
        assert!(contingency(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn mi_and_nmi_examples() {
        let t = ContingencyTable::from_counts(2, 2, vec![2, 0, 0, 2]).unwrap();
        let (mi, nmi) = mi_nmi(&t, NmiNormalizer::Arithmetic);
        assert!((mi - 2f64.ln()).abs() < 1e-15);
        assert!((nmi - 1.0).abs() < 1e-15);
        // outer product of margins [1,2] and [3,1]
        let t = ContingencyTable::from_counts(2, 2, vec![3, 1, 6, 2]).unwrap();
        assert_eq!(mutual_information(&t), 0.0);
        let t = contingency(&[3, 3, 3], &[1, 1, 1]).unwrap();
        assert_eq!(mi_nmi(&t, NmiNormalizer::Arithmetic), (0.0, 1.0));
    }

    #[test]
    fn emi_single_row_is_zero() {
        assert_eq!(expected_mi(&[6], &[1, 2, 3], 6).unwrap(), 0.0);
        assert!(expected_mi(&[5], &[1, 2, 3], 6).is_err());
    }

    #[test]
    fn ami_of_identical_labelings_is_one() {
        let u = [0, 0, 1, 2, 2, 2, 3, 1, 0];
        let t = contingency(&u, &u).unwrap();
        assert!((ami(&t, NmiNormalizer::Arithmetic).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_constant_scores() {
        let labels = [0, 2, 1, 2];
        let mut v = vec![0.0; 12];
        for (i, &l) in labels.iter().enumerate() {
            v[i * 3 + l] = 1.0;
        }
        let r = top1_and_map(&ScoreMatrix::new(4, 3, v).unwrap(), &labels).unwrap();
        assert_eq!((r.top1, r.map), (1.0, 1.0));
        let r = top1_and_map(&ScoreMatrix::new(4, 3, vec![0.5; 12]).unwrap(), &labels).unwrap();
        assert_eq!(r.top1, 0.25);
    }

    #[test]
    fn one_inversion_average_precision() {
        // class 1 positives are samples 0 and 2; sample 1 (negative) outranks sample 2
        let scores = ScoreMatrix::new(4, 2, vec![0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.9, 0.1]).unwrap();
        let labels = [1, 0, 1, 0];
        let col1: Vec<f64> = (0..4).map(|i| scores.row(i)[1]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        let ap = average_precision(&col1, &pos).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_are_excluded_from_map() {
        let scores = ScoreMatrix::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let r = top1_and_map(&scores, &[0, 1]).unwrap();
        assert_eq!(r.absent_classes, vec![2]);
        assert_eq!(r.classes_evaluated, 2);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn confusion_pairs_rank_the_fixed_pair_first() {
        let labels = [2, 2, 5, 5, 0, 1];
        let a = [5, 2, 2, 5, 0, 1];
        let pairs = confusion_pairs(&a, &labels, &labels, 6).unwrap();
        assert_eq!((pairs[0].i, pairs[0].j), (2, 5));
        assert!((pairs[0].drop - 1.0).abs() < 1e-15);
        assert!(pairs[1..].iter().all(|p| p.drop == 0.0));
        let same = confusion_pairs(&a, &a, &labels, 6).unwrap();
        assert!(same.iter().all(|p| p.drop == 0.0));
        let swapped = confusion_pairs(&labels, &a, &labels, 6).unwrap();
        let find =
            |v: &[ConfusionPair], i, j| v.iter().find(|p| p.i == i && p.j == j).unwrap().drop;
        for p in &pairs {
            assert_eq!(find(&swapped, p.i, p.j), -p.drop);
        }
    }

    #[test]
    fn coefficient_diff_unit_vector() {
        let mut w = vec![0.0; 2 * 5];
        w[3] = 1.0;
        let probe = ReverseProbe::from_model(
            LinearModel {
                k: 2,
                m: 5,
                weights: w,
                bias: vec![0.0; 2],
            },
            (0..5).map(|j| format!("c{j}")).collect(),
        )
        .unwrap();
        let d = coefficient_diff(&probe, 0, 1, 2).unwrap();
        assert_eq!(d[0].concept, 3);
        assert_eq!(d[0].diff, 1.0);
        assert_eq!(d[1].diff, 0.0);
        assert_eq!(d[1].concept, 0);
        assert!(coefficient_diff(&probe, 1, 1, 2).is_err());
        let zero = ReverseProbe::zeros(3, vec!["a".into()]);
        assert!(coefficient_diff(&zero, 0, 2, 1)
            .unwrap()
            .iter()
            .all(|d| d.diff == 0.0));
    }

    #[test]
    fn info_estimate_with_untrained_probe_is_ln_k() {
        let c = crate::data::ConceptMatrix::from_rows_single_group(
            &[vec![true], vec![false], vec![true], vec![true], vec![false]],
            "g",
        )
        .unwrap();
        let a = ClusterAssignment::new(vec![0, 1, 2, 3, 4], 7).unwrap();
        let p = ReverseProbe::zeros(7, c.concept_names().to_vec());
        let est = info_estimate(&a, &p, &c, &[0, 2, 3]).unwrap();
        assert_eq!(est.cond_entropy_bound, 7f64.ln());
        assert!(est.mi_lower_bound <= 0.0);
        assert_eq!(est.normalized, 0.0);
        assert!(info_estimate(&a, &p, &c, &[]).is_err());
    }
}
