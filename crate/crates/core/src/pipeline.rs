//! End-to-end experiments: repeated evaluation, concept-group breakdowns,
//! K sweeps, confusion studies and transfer to new data.
//!
//! Every experiment is a pure function of its inputs and [`RunConfig`]. Seeds
//! for clustering, splitting and probe training are derived from the master
//! seed and the run index, so run `r` of any experiment sees the same
//! clustering and split.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    standardize, stratified_split, ConceptMatrix, FeatureMatrix, SplitIndices,
    StandardizationStats, STD_EPSILON,
};
use crate::error::{Error, Result};
use crate::metrics::{
    coefficient_diff, confusion_pairs, evaluate_probe, CoefficientDiff, ConfusionPair,
    NmiNormalizer, ProbeReport,
};
use crate::probe::{
    train_forward_probes, train_reverse_probe, ForwardProbe, ProbeConfig, ReverseProbe,
};
use crate::quantize::{ClusterAssignment, KmeansConfig, KmeansInit, Quantizer};
use crate::seed;
use crate::synth::{gen_toy, ToySpec};

/// Where transfer experiments take their standardization statistics from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatsMode {
    #[default]
    Source,
    Target,
}

impl std::str::FromStr for StatsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Self::Source),
            "target" => Ok(Self::Target),
            other => Err(Error::Argument(format!("unknown stats mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub k: usize,
    pub n_clusterings: usize,
    pub kmeans_max_steps: usize,
    pub kmeans_restarts: usize,
    pub kmeans_init: KmeansInit,
    pub probe: ProbeConfig,
    /// Forward probes see real-valued features, where the reverse-probe step
    /// size oscillates; they get their own schedule.
    pub forward_probe: ProbeConfig,
    pub test_ratio: f64,
    /// Fraction of the non-test part held out for epoch selection.
    pub val_ratio: f64,
    pub seed: u64,
    /// Concept groups fed to the probe; empty means all.
    pub groups: Vec<String>,
    pub normalizer: NmiNormalizer,
    pub standardize: bool,
    pub std_epsilon: f64,
    pub transfer_stats: StatsMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 1000,
            n_clusterings: 5,
            kmeans_max_steps: 100,
            kmeans_restarts: 5,
            kmeans_init: KmeansInit::default(),
            probe: ProbeConfig::default(),
            forward_probe: ProbeConfig {
                lr: 0.1,
                ..ProbeConfig::default()
            },
            test_ratio: 0.2,
            val_ratio: 0.2,
            seed: 0,
            groups: Vec::new(),
            normalizer: NmiNormalizer::default(),
            standardize: true,
            std_epsilon: STD_EPSILON,
            transfer_stats: StatsMode::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusterings == 0 {
            return Err(Error::Argument("n_clusterings must be at least 1".into()));
        }
        if !(self.test_ratio > 0.0 && self.test_ratio < 1.0) {
            return Err(Error::Argument(format!(
                "test_ratio {} not in (0, 1)",
                self.test_ratio
            )));
        }
        if !(0.0..1.0).contains(&self.val_ratio) {
            return Err(Error::Argument(format!(
                "val_ratio {} not in [0, 1)",
                self.val_ratio
            )));
        }
        if !(self.std_epsilon > 0.0) {
            return Err(Error::Argument("std_epsilon must be positive".into()));
        }
        self.probe.validate()?;
        self.forward_probe.validate()?;
        self.kmeans(0).validate(usize::MAX)
    }

    /// Validation that also needs the data.
    pub fn validate_for(&self, n_samples: usize, concepts: &ConceptMatrix) -> Result<()> {
        self.validate()?;
        self.kmeans(0).validate(n_samples)?;
        self.select_concepts(concepts).map(|_| ())
    }

    pub fn kmeans_seed(&self, run: usize) -> u64 {
        seed::derive(self.seed, "kmeans", run as u64)
    }

    pub fn split_seed(&self, run: usize) -> u64 {
        seed::derive(self.seed, "split", run as u64)
    }

    pub fn probe_seed(&self, run: usize) -> u64 {
        seed::derive(self.seed, "probe", run as u64)
    }

    pub fn kmeans(&self, run: usize) -> KmeansConfig {
        KmeansConfig {
            k: self.k,
            max_steps: self.kmeans_max_steps,
            n_restarts: self.kmeans_restarts,
            init: self.kmeans_init,
            seed: self.kmeans_seed(run),
        }
    }

    pub fn probe_config(&self, run: usize) -> ProbeConfig {
        ProbeConfig {
            seed: self.probe_seed(run),
            ..self.probe.clone()
        }
    }

    pub fn forward_probe_config(&self, run: usize) -> ProbeConfig {
        ProbeConfig {
            seed: seed::derive(self.seed, "forward-probe", run as u64),
            ..self.forward_probe.clone()
        }
    }

    /// The configured groups, or every group in file order.
    pub fn group_names(&self, concepts: &ConceptMatrix) -> Vec<String> {
        if self.groups.is_empty() {
            concepts
                .group_names()
                .into_iter()
                .map(String::from)
                .collect()
        } else {
            self.groups.clone()
        }
    }

    pub fn select_concepts(&self, concepts: &ConceptMatrix) -> Result<ConceptMatrix> {
        if self.groups.is_empty() {
            Ok(concepts.clone())
        } else {
            concepts.select_groups(&self.groups)
        }
    }
}

fn check_aligned(features: &FeatureMatrix, concepts: &ConceptMatrix) -> Result<()> {
    if features.n_samples() != concepts.n_samples() {
        return Err(Error::Argument(format!(
            "{} feature rows but {} concept rows",
            features.n_samples(),
            concepts.n_samples()
        )));
    }
    Ok(())
}

/// Standardized features (or the raw ones when standardization is off) and
/// the statistics that produced them.
pub fn prepare_features(
    features: &FeatureMatrix,
    cfg: &RunConfig,
) -> Result<(FeatureMatrix, StandardizationStats)> {
    if cfg.standardize {
        let stats = StandardizationStats::compute(features, cfg.std_epsilon)?;
        Ok((stats.apply(features)?, stats))
    } else {
        let d = features.dim();
        let stats = StandardizationStats {
            mean: vec![0.0; d],
            std: vec![1.0; d],
            epsilon: cfg.std_epsilon,
        };
        Ok((features.clone(), stats))
    }
}

/// Split for run `run` of `cfg`.
pub fn split_for(
    assignment: &ClusterAssignment,
    cfg: &RunConfig,
    run: usize,
) -> Result<SplitIndices> {
    stratified_split(
        assignment,
        cfg.test_ratio,
        cfg.val_ratio,
        cfg.split_seed(run),
    )
}

/// Trains a probe on an existing clustering and split and fills in the report
/// fields that only the caller knows.
pub fn probe_on_split(
    concepts: &ConceptMatrix,
    assignment: &ClusterAssignment,
    split: &SplitIndices,
    cfg: &RunConfig,
    run: usize,
) -> Result<(ReverseProbe, ProbeReport)> {
    if concepts.n_samples() != assignment.n_samples() {
        return Err(Error::Argument(format!(
            "{} concept rows but {} cluster labels",
            concepts.n_samples(),
            assignment.n_samples()
        )));
    }
    if split.test.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let probe = train_reverse_probe(concepts, assignment, split, &cfg.probe_config(run))?;
    let mut report = evaluate_probe(&probe, concepts, assignment, &split.test, cfg.normalizer)?;
    report.n_train = split.train.len();
    report.n_val = split.val.len();
    report.small_clusters = split.small_clusters.clone();
    report.provenance.split_seed = Some(split.seed);
    report.provenance.concept_groups = concepts
        .group_names()
        .into_iter()
        .map(String::from)
        .collect();
    Ok((probe, report))
}

/// Everything produced by one clustering run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub quantizer: Quantizer,
    pub assignment: ClusterAssignment,
    pub split: SplitIndices,
    pub probe: ReverseProbe,
    pub report: ProbeReport,
}

/// Run `run` on already standardized features.
pub fn evaluate_run(
    features: &FeatureMatrix,
    concepts: &ConceptMatrix,
    cfg: &RunConfig,
    run: usize,
) -> Result<RunArtifacts> {
    check_aligned(features, concepts)?;
    let selected = cfg.select_concepts(concepts)?;
    let kcfg = cfg.kmeans(run);
    let quantizer = kcfg.fit(features)?;
    let assignment = quantizer.assign(features)?;
    let split = split_for(&assignment, cfg, run)?;
    let (probe, mut report) = probe_on_split(&selected, &assignment, &split, cfg, run)?;
    report.provenance.kmeans_seed = Some(kcfg.seed);
    Ok(RunArtifacts {
        quantizer,
        assignment,
        split,
        probe,
        report,
    })
}

/// Runs `f` for every index in parallel and returns the results in index
/// order, or the error of the lowest failing index.
fn par_runs<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = (0..n).into_par_iter().map(&f).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(r, res)| res.map_err(|e| e.in_run(r)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation; 0 for a single run.
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "summary of no values");
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        Self {
            mean,
            std: var.sqrt(),
            median,
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n_runs: usize,
    pub mi_lower_bound: MetricSummary,
    pub normalized_mi: MetricSummary,
    pub cond_entropy_bound: MetricSummary,
    pub h_clusters: MetricSummary,
    pub nmi: MetricSummary,
    pub ami: MetricSummary,
    pub top1: MetricSummary,
    pub map: MetricSummary,
    /// Run with the largest information estimate, lowest index on ties.
    pub best_run: usize,
}

impl Aggregates {
    pub fn of(runs: &[ProbeReport]) -> Self {
        let field =
            |f: fn(&ProbeReport) -> f64| MetricSummary::of(&runs.iter().map(f).collect::<Vec<_>>());
        let mut best_run = 0;
        for (r, rep) in runs.iter().enumerate() {
            if rep.info.mi_lower_bound > runs[best_run].info.mi_lower_bound {
                best_run = r;
            }
        }
        Self {
            n_runs: runs.len(),
            mi_lower_bound: field(|r| r.info.mi_lower_bound),
            normalized_mi: field(|r| r.info.normalized),
            cond_entropy_bound: field(|r| r.info.cond_entropy_bound),
            h_clusters: field(|r| r.info.h_clusters),
            nmi: field(|r| r.nmi),
            ami: field(|r| r.ami),
            top1: field(|r| r.top1),
            map: field(|r| r.map),
            best_run,
        }
    }
}

/// Content digests and shapes of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputProvenance {
    pub features_sha256: Option<String>,
    pub concepts_sha256: String,
    pub n_samples: usize,
    pub dim: Option<usize>,
    pub n_concepts: usize,
    pub toolkit_version: String,
}

impl InputProvenance {
    pub fn new(features: Option<&FeatureMatrix>, concepts: &ConceptMatrix) -> Self {
        Self {
            features_sha256: features.map(features_digest),
            concepts_sha256: concepts_digest(concepts),
            n_samples: concepts.n_samples(),
            dim: features.map(FeatureMatrix::dim),
            n_concepts: concepts.n_concepts(),
            toolkit_version: crate::VERSION.to_string(),
        }
    }
}

pub fn features_digest(m: &FeatureMatrix) -> String {
    let mut h = Sha256::new();
    h.update((m.n_samples() as u64).to_le_bytes());
    h.update((m.dim() as u64).to_le_bytes());
    for v in m.values() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn concepts_digest(c: &ConceptMatrix) -> String {
    let mut h = Sha256::new();
    h.update((c.n_samples() as u64).to_le_bytes());
    h.update((c.n_concepts() as u64).to_le_bytes());
    for g in c.groups() {
        h.update((g.name.len() as u64).to_le_bytes());
        h.update(g.name.as_bytes());
        h.update((g.start as u64).to_le_bytes());
        h.update((g.len as u64).to_le_bytes());
    }
    for name in c.concept_names() {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
    }
    h.update(c.packed());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: RunConfig,
    pub runs: Vec<ProbeReport>,
    pub aggregate: Aggregates,
    pub inputs: InputProvenance,
}

/// `n_clusterings` independent K-means runs, each followed by a probe.
pub fn run_full_eval(
    features: &FeatureMatrix,
    concepts: &ConceptMatrix,
    cfg: &RunConfig,
) -> Result<ExperimentReport> {
    check_aligned(features, concepts)?;
    cfg.validate_for(features.n_samples(), concepts)?;
    let (std_features, _) = prepare_features(features, cfg)?;
    let runs = par_runs(cfg.n_clusterings, |r| {
        evaluate_run(&std_features, concepts, cfg, r).map(|a| a.report)
    })?;
    Ok(ExperimentReport {
        config: cfg.clone(),
        aggregate: Aggregates::of(&runs),
        runs,
        inputs: InputProvenance::new(Some(features), concepts),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreakdownMode {
    /// Each row adds the next group to all previous ones.
    Incremental,
    /// Each row is the anchor group plus one other group.
    Isolation,
}

impl std::str::FromStr for BreakdownMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "incremental" => Ok(Self::Incremental),
            "isolation" => Ok(Self::Isolation),
            other => Err(Error::Argument(format!("unknown breakdown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub groups: Vec<String>,
    pub report: ProbeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownReport {
    pub mode: BreakdownMode,
    pub anchor: Option<String>,
    pub order: Vec<String>,
    pub clustering_fingerprint: String,
    pub rows: Vec<BreakdownRow>,
    pub inputs: Option<InputProvenance>,
}

fn breakdown_sets(
    concepts: &ConceptMatrix,
    mode: BreakdownMode,
    anchor: Option<&str>,
    order: &[String],
) -> Result<Vec<Vec<String>>> {
    let known = concepts.group_names();
    let mut seen = std::collections::HashSet::new();
    for g in order.iter().map(String::as_str).chain(anchor) {
        if !known.contains(&g) {
            return Err(Error::Argument(format!("unknown concept group {g:?}")));
        }
    }
    for g in order {
        if !seen.insert(g.as_str()) {
            return Err(Error::Argument(format!("group {g:?} listed twice")));
        }
    }
    match mode {
        BreakdownMode::Incremental => {
            if order.is_empty() {
                return Err(Error::Argument("breakdown needs at least one group".into()));
            }
            Ok((1..=order.len()).map(|n| order[..n].to_vec()).collect())
        }
        BreakdownMode::Isolation => {
            let others: Vec<&String> = order
                .iter()
                .filter(|g| Some(g.as_str()) != anchor)
                .collect();
            if others.is_empty() || (anchor.is_none() && others.len() < 2) {
                return Err(Error::Argument(
                    "isolation breakdown needs at least two groups".into(),
                ));
            }
            let mut sets = Vec::with_capacity(others.len() + 1);
            if let Some(a) = anchor {
                sets.push(vec![a.to_string()]);
            }
            for g in others {
                sets.push(
                    anchor
                        .map(String::from)
                        .into_iter()
                        .chain([g.clone()])
                        .collect(),
                );
            }
            Ok(sets)
        }
    }
}

/// Breakdown on a fixed clustering. `order` defaults to the configured groups
/// (or the file's group order).
pub fn breakdown_on_clustering(
    concepts: &ConceptMatrix,
    assignment: &ClusterAssignment,
    cfg: &RunConfig,
    mode: BreakdownMode,
    anchor: Option<&str>,
    order: Option<&[String]>,
) -> Result<BreakdownReport> {
    cfg.validate()?;
    let order = order.map_or_else(|| cfg.group_names(concepts), <[String]>::to_vec);
    let sets = breakdown_sets(concepts, mode, anchor, &order)?;
    let split = split_for(assignment, cfg, 0)?;
    let fingerprint = assignment.fingerprint();
    let rows = par_runs(sets.len(), |i| {
        let selected = concepts.select_groups(&sets[i])?;
        let (_, report) = probe_on_split(&selected, assignment, &split, cfg, 0)?;
        Ok(BreakdownRow {
            groups: sets[i].clone(),
            report,
        })
    })?;
    if let Some(row) = rows
        .iter()
        .find(|r| r.report.provenance.clustering_fingerprint != fingerprint)
    {
        return Err(Error::Data(format!(
            "breakdown row {:?} was evaluated on a different clustering",
            row.groups
        )));
    }
    Ok(BreakdownReport {
        mode,
        anchor: anchor.map(String::from),
        order,
        clustering_fingerprint: fingerprint,
        rows,
        inputs: None,
    })
}

/// Clusters once with the seeds of run 0, then trains one probe per group set.
pub fn run_breakdown(
    features: &FeatureMatrix,
    concepts: &ConceptMatrix,
    cfg: &RunConfig,
    mode: BreakdownMode,
    anchor: Option<&str>,
    order: Option<&[String]>,
) -> Result<BreakdownReport> {
    check_aligned(features, concepts)?;
    cfg.validate()?;
    cfg.kmeans(0).validate(features.n_samples())?;
    let (std_features, _) = prepare_features(features, cfg)?;
    let kcfg = cfg.kmeans(0);
    let assignment = kcfg.fit(&std_features)?.assign(&std_features)?;
    let mut report = breakdown_on_clustering(concepts, &assignment, cfg, mode, anchor, order)?;
    for row in &mut report.rows {
        row.report.provenance.kmeans_seed = Some(kcfg.seed);
    }
    report.inputs = Some(InputProvenance::new(Some(features), concepts));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsweepPoint {
    pub k: usize,
    pub runs: Vec<ProbeReport>,
    pub aggregate: Aggregates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsweepReport {
    pub config: RunConfig,
    pub points: Vec<KsweepPoint>,
    pub inputs: InputProvenance,
}

/// Full evaluation for each `k` in `ks` (ascending) with one shared
/// standardization.
pub fn run_ksweep(
    features: &FeatureMatrix,
    concepts: &ConceptMatrix,
    cfg: &RunConfig,
    ks: &[usize],
) -> Result<KsweepReport> {
    check_aligned(features, concepts)?;
    if ks.is_empty() {
        return Err(Error::Argument("no K values given".into()));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(format!(
            "K values must be strictly ascending, got {ks:?}"
        )));
    }
    for &k in ks {
        RunConfig { k, ..cfg.clone() }.validate_for(features.n_samples(), concepts)?;
    }
    let (std_features, _) = prepare_features(features, cfg)?;
    let points = ks
        .iter()
        .map(|&k| {
            let kcfg = RunConfig { k, ..cfg.clone() };
            let runs = par_runs(cfg.n_clusterings, |r| {
                evaluate_run(&std_features, concepts, &kcfg, r).map(|a| a.report)
            })?;
            Ok(KsweepPoint {
                k,
                aggregate: Aggregates::of(&runs),
                runs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KsweepReport {
        config: cfg.clone(),
        points,
        inputs: InputProvenance::new(Some(features), concepts),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub pair: ConfusionPair,
    /// Coefficient differences of the extended probe for this pair.
    pub top_concepts: Vec<CoefficientDiff>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionStudy {
    pub base_groups: Vec<String>,
    pub extra_group: Option<String>,
    pub clustering_fingerprint: String,
    pub base_report: ProbeReport,
    pub extended_report: ProbeReport,
    pub pairs: Vec<ConfusionEntry>,
}

impl ConfusionStudy {
    /// Plain-text listing of the ranked pairs.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let extra = self.extra_group.as_deref().unwrap_or("(none)");
        let _ = writeln!(out, "base groups: {}", self.base_groups.join(", "));
        let _ = writeln!(out, "extra group: {extra}");
        let _ = writeln!(
            out,
            "top-1: {:.4} -> {:.4}",
            self.base_report.top1, self.extended_report.top1
        );
        for (rank, e) in self.pairs.iter().enumerate() {
            let p = &e.pair;
            let _ = writeln!(
                out,
                "{:>3}. clusters {} / {}: confusion {:.4} -> {:.4} (drop {:.4})",
                rank + 1,
                p.i,
                p.j,
                p.confusion_a,
                p.confusion_b,
                p.drop
            );
            for c in &e.top_concepts {
                let side = if c.diff >= 0.0 { p.i } else { p.j };
                let _ = writeln!(
                    out,
                    "       {:<24} {:+.4}  (favours {side})",
                    c.name, c.diff
                );
            }
        }
        out
    }
}

/// Compares a probe on `base_groups` with one that also sees `extra_group`,
/// both on the same clustering and split.
pub fn confusion_study_on_clustering(
    concepts: &ConceptMatrix,
    assignment: &ClusterAssignment,
    cfg: &RunConfig,
    base_groups: &[String],
    extra_group: Option<&str>,
    top_pairs: usize,
    top_concepts: usize,
) -> Result<ConfusionStudy> {
    cfg.validate()?;
    if base_groups.is_empty() {
        return Err(Error::Argument(
            "confusion study needs at least one base group".into(),
        ));
    }
    let mut extended_groups = base_groups.to_vec();
    if let Some(extra) = extra_group {
        if base_groups.iter().any(|g| g == extra) {
            return Err(Error::Argument(format!(
                "extra group {extra:?} is already in the base"
            )));
        }
        extended_groups.push(extra.to_string());
    }
    let base = concepts.select_groups(base_groups)?;
    let extended = concepts.select_groups(&extended_groups)?;
    let split = split_for(assignment, cfg, 0)?;
    let (base_probe, base_report) = probe_on_split(&base, assignment, &split, cfg, 0)?;
    let (ext_probe, ext_report) = if extra_group.is_some() {
        probe_on_split(&extended, assignment, &split, cfg, 0)?
    } else {
        (base_probe.clone(), base_report.clone())
    };
    let truth: Vec<usize> = split.test.iter().map(|&i| assignment.labels()[i]).collect();
    let pred_base = base_probe.predict(&base, &split.test)?;
    let pred_ext = ext_probe.predict(&extended, &split.test)?;
    let pairs = confusion_pairs(&pred_base, &pred_ext, &truth, assignment.k())?
        .into_iter()
        .take(top_pairs)
        .map(|pair| {
            let top = coefficient_diff(&ext_probe, pair.i, pair.j, top_concepts)?;
            Ok(ConfusionEntry {
                pair,
                top_concepts: top,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConfusionStudy {
        base_groups: base_groups.to_vec(),
        extra_group: extra_group.map(String::from),
        clustering_fingerprint: assignment.fingerprint(),
        base_report,
        extended_report: ext_report,
        pairs,
    })
}

/// Clusters once with the seeds of run 0, then runs the confusion study.
pub fn run_confusion_study(
    features: &FeatureMatrix,
    concepts: &ConceptMatrix,
    cfg: &RunConfig,
    base_groups: &[String],
    extra_group: Option<&str>,
    top_pairs: usize,
    top_concepts: usize,
) -> Result<ConfusionStudy> {
    check_aligned(features, concepts)?;
    cfg.validate()?;
    cfg.kmeans(0).validate(features.n_samples())?;
    let (std_features, _) = prepare_features(features, cfg)?;
    let assignment = cfg.kmeans(0).fit(&std_features)?.assign(&std_features)?;
    confusion_study_on_clustering(
        concepts,
        &assignment,
        cfg,
        base_groups,
        extra_group,
        top_pairs,
        top_concepts,
    )
}

/// Applies source artifacts to new data without retraining: target features
/// are standardized (with the source statistics unless `mode` says
/// otherwise), assigned with the source quantizer, and the source probe
/// predicts those clusters from the target concepts.
#[allow(clippy::too_many_arguments)]
pub fn run_transfer(
    quantizer: &Quantizer,
    probe: &ReverseProbe,
    stats: &StandardizationStats,
    target_features: &FeatureMatrix,
    target_concepts: &ConceptMatrix,
    mode: StatsMode,
    normalizer: NmiNormalizer,
) -> Result<ProbeReport> {
    check_aligned(target_features, target_concepts)?;
    if target_features.dim() != quantizer.dim() || stats.dim() != quantizer.dim() {
        return Err(Error::Argument(format!(
            "target features have {} dims, quantizer {}, statistics {}",
            target_features.dim(),
            quantizer.dim(),
            stats.dim()
        )));
    }
    if target_concepts.n_concepts() != probe.m() {
        return Err(Error::Argument(format!(
            "target has {} concepts but the probe expects {}",
            target_concepts.n_concepts(),
            probe.m()
        )));
    }
    if quantizer.k() != probe.k() {
        return Err(Error::Argument(format!(
            "quantizer has {} clusters but the probe predicts {}",
            quantizer.k(),
            probe.k()
        )));
    }
    let standardized = match mode {
        StatsMode::Source => stats.apply(target_features)?,
        StatsMode::Target => standardize(target_features, None)?.0,
    };
    let assignment = quantizer.assign(&standardized)?;
    let all: Vec<usize> = (0..target_concepts.n_samples()).collect();
    let mut report = evaluate_probe(probe, target_concepts, &assignment, &all, normalizer)?;
    report.provenance.kmeans_seed = Some(quantizer.seed());
    report.provenance.concept_groups = target_concepts
        .group_names()
        .into_iter()
        .map(String::from)
        .collect();
    Ok(report)
}

/// Reverse probe with ground-truth classes as targets instead of clusters.
pub fn concepts_to_labels_probe(
    concepts: &ConceptMatrix,
    labels: &[usize],
    cfg: &RunConfig,
) -> Result<ProbeReport> {
    cfg.validate()?;
    if labels.len() != concepts.n_samples() {
        return Err(Error::Argument(format!(
            "{} labels for {} concept rows",
            labels.len(),
            concepts.n_samples()
        )));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let targets = ClusterAssignment::new(labels.to_vec(), k)?;
    let selected = cfg.select_concepts(concepts)?;
    let split = split_for(&targets, cfg, 0)?;
    Ok(probe_on_split(&selected, &targets, &split, cfg, 0)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub spec: ToySpec,
    /// Forward probes from the 2-D features to each attribute bit.
    pub forward: Vec<ForwardProbe>,
    pub color_accuracy: f64,
    pub shape_accuracy: f64,
    /// Reverse probe from both attributes to K = 4 K-means clusters.
    pub reverse: ProbeReport,
}

/// Forward probes versus a reverse probe on the four-blob toy data.
///
/// The features are standardized, clustered into four groups, and split
/// stratified by cluster; the forward probes and the reverse probe share that
/// split.
pub fn run_toy(spec: &ToySpec, cfg: &RunConfig) -> Result<ToyReport> {
    let data = gen_toy(spec)?;
    let cfg = RunConfig {
        k: 4,
        ..cfg.clone()
    };
    cfg.validate()?;
    let (features, _) = prepare_features(&data.features, &cfg)?;
    let kcfg = cfg.kmeans(0);
    let assignment = kcfg.fit(&features)?.assign(&features)?;
    let split = split_for(&assignment, &cfg, 0)?;
    let red = 0;
    let square = 2;
    let forward = train_forward_probes(
        &features,
        &data.concepts,
        &[red, square],
        &split,
        &cfg.forward_probe_config(0),
    )?;
    let (_, mut reverse) = probe_on_split(&data.concepts, &assignment, &split, &cfg, 0)?;
    reverse.provenance.kmeans_seed = Some(kcfg.seed);
    Ok(ToyReport {
        spec: *spec,
        color_accuracy: forward.probes[0].accuracy,
        shape_accuracy: forward.probes[1].accuracy,
        forward: forward.probes,
        reverse,
    })
}

/// One line of a plot-ready metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method_tag: String,
    pub k: usize,
    pub nmi: f64,
    pub ami: f64,
    pub top1: f64,
    pub map: f64,
    pub mi_nats: f64,
}

pub const CSV_HEADER: &str = "method_tag,K,nmi,ami,top1,map,mi_nats";

impl CsvRow {
    pub fn from_aggregate(method_tag: &str, k: usize, a: &Aggregates) -> Self {
        Self {
            method_tag: method_tag.to_string(),
            k,
            nmi: a.nmi.mean,
            ami: a.ami.mean,
            top1: a.top1.mean,
            map: a.map.mean,
            mi_nats: a.mi_lower_bound.mean,
        }
    }

    pub fn from_report(method_tag: &str, r: &ProbeReport) -> Self {
        Self {
            method_tag: method_tag.to_string(),
            k: r.k,
            nmi: r.nmi,
            ami: r.ami,
            top1: r.top1,
            map: r.map,
            mi_nats: r.info.mi_lower_bound,
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_string(rows: &[CsvRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&r.method_tag),
            r.k,
            r.nmi,
            r.ami,
            r.top1,
            r.map,
            r.mi_nats
        );
    }
    out
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    std::fs::write(path, csv_string(rows)).map_err(|e| Error::io(path, e))
}

impl ExperimentReport {
    pub fn csv_rows(&self, method_tag: &str) -> Vec<CsvRow> {
        vec![CsvRow::from_aggregate(
            method_tag,
            self.config.k,
            &self.aggregate,
        )]
    }
}

impl KsweepReport {
    pub fn csv_rows(&self, method_tag: &str) -> Vec<CsvRow> {
        self.points
            .iter()
            .map(|p| CsvRow::from_aggregate(method_tag, p.k, &p.aggregate))
            .collect()
    }
}

impl BreakdownReport {
    /// One row per group set, tagged `method_tag:g1+g2+...`.
    pub fn csv_rows(&self, method_tag: &str) -> Vec<CsvRow> {
        self.rows
            .iter()
            .map(|r| {
                CsvRow::from_report(&format!("{method_tag}:{}", r.groups.join("+")), &r.report)
            })
            .collect()
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_blobs, BlobSpec};

    fn small_cfg(k: usize, runs: usize) -> RunConfig {
        RunConfig {
            k,
            n_clusterings: runs,
            kmeans_restarts: 2,
            probe: ProbeConfig {
                epochs: 20,
                lr_drop_epochs: vec![12, 16],
                batch_size: 64,
                ..ProbeConfig::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn summary_statistics() {
        let s = MetricSummary::of(&[1.0, 3.0, 2.0, 6.0]);
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.median, 2.5);
        assert_eq!((s.min, s.max), (1.0, 6.0));
        assert!((s.std - 3.5f64.sqrt()).abs() < 1e-15);
        let one = MetricSummary::of(&[0.7]);
        assert_eq!((one.mean, one.std, one.median), (0.7, 0.0, 0.7));
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_fields() {
        let cfg = small_cfg(8, 2);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        let partial: RunConfig = serde_json::from_str(r#"{"k": 12}"#).unwrap();
        assert_eq!(partial.k, 12);
        assert_eq!(partial.n_clusterings, 5);
        assert!(serde_json::from_str::<RunConfig>(r#"{"kk": 12}"#).is_err());
    }

    #[test]
    fn run_errors_carry_the_run_index() {
        let d = gen_blobs(&BlobSpec::one_hot(3, 2, 20, 0)).unwrap();
        let cfg = RunConfig {
            probe: ProbeConfig {
                lr: 1e306,
                epochs: 5,
                lr_drop_epochs: vec![],
                ..ProbeConfig::default()
            },
            ..small_cfg(3, 2)
        };
        let err = run_full_eval(&d.features, &d.concepts, &cfg).unwrap_err();
        assert!(matches!(err, Error::Run { run: 0, .. }));
        assert!(err.is_divergence());
    }

    #[test]
    fn breakdown_sets_follow_mode() {
        let d = crate::synth::gen_group_structured(&crate::synth::GroupStructuredSpec::standard(
            3, 30, 0,
        ))
        .unwrap();
        let order: Vec<String> = ["objects", "texture", "style"].map(String::from).to_vec();
        let inc = breakdown_sets(&d.concepts, BreakdownMode::Incremental, None, &order).unwrap();
        assert_eq!(inc.len(), 3);
        assert_eq!(inc[2], order);
        let iso = breakdown_sets(
            &d.concepts,
            BreakdownMode::Isolation,
            Some("objects"),
            &order,
        )
        .unwrap();
        assert_eq!(
            iso,
            vec![
                vec!["objects".to_string()],
                vec!["objects".into(), "texture".into()],
                vec!["objects".into(), "style".into()]
            ]
        );
        assert!(breakdown_sets(
            &d.concepts,
            BreakdownMode::Incremental,
            None,
            &["nope".to_string()]
        )
        .is_err());
        assert!(breakdown_sets(
            &d.concepts,
            BreakdownMode::Isolation,
            Some("objects"),
            &order[..1]
        )
        .is_err());
    }

    #[test]
    fn csv_quotes_awkward_tags() {
        let row = CsvRow {
            method_tag: "a,\"b\"".into(),
            k: 4,
            nmi: 0.5,
            ami: 0.25,
            top1: 1.0,
            map: 1.0,
            mi_nats: 0.125,
        };
        let text = csv_string(&[row]);
        assert_eq!(
            text,
            "method_tag,K,nmi,ami,top1,map,mi_nats\n\"a,\"\"b\"\"\",4,0.5,0.25,1,1,0.125\n"
        );
    }
}
