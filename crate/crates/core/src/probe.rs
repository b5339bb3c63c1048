//! Linear probes.
//!
//! The reverse probe is a multinomial logistic regression from binary concept
//! vectors to cluster ids. Its held-out cross-entropy upper-bounds the
//! conditional entropy of the clusters given the concepts. Forward probes go
//! the other way, one binary classifier per attribute on the raw features.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::io::ByteReader;
use crate::data::{ConceptMatrix, FeatureMatrix, SplitIndices};
use crate::error::{Error, Result};
use crate::quantize::ClusterAssignment;
use crate::seed;

pub const PROBE_MAGIC: &[u8; 4] = b"RPLP";

/// Batches with at least this many `rows × classes` are evaluated in parallel.
const PAR_THRESHOLD: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub select_by_val: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 512,
            lr: 3.5,
            momentum: 0.9,
            lr_drop_epochs: vec![60, 80],
            lr_drop_factor: 0.1,
            weight_decay: 3e-6,
            seed: 0,
            select_by_val: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Argument(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if !(self.lr_drop_factor > 0.0) {
            return fail(format!(
                "lr_drop_factor must be > 0, got {}",
                self.lr_drop_factor
            ));
        }
        if self.lr_drop_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return fail("lr_drop_epochs must be strictly increasing".into());
        }
        // with zero epochs there is no schedule to apply
        if self.epochs > 0
            && self
                .lr_drop_epochs
                .last()
                .is_some_and(|&e| e >= self.epochs)
        {
            return fail(format!(
                "lr_drop_epochs {:?} must all be < epochs ({})",
                self.lr_drop_epochs, self.epochs
            ));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.lr_drop_factor.powi(drops as i32)
    }
}

/// Row-wise access to probe inputs, visiting only nonzero entries.
pub trait ProbeInputs: Sync {
    fn n_rows(&self) -> usize;
    fn width(&self) -> usize;
    fn for_each_nonzero(&self, i: usize, f: impl FnMut(usize, f64));
}

impl ProbeInputs for ConceptMatrix {
    fn n_rows(&self) -> usize {
        self.n_samples()
    }

    fn width(&self) -> usize {
        self.n_concepts()
    }

    fn for_each_nonzero(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        for j in self.active(i) {
            f(j, 1.0);
        }
    }
}

impl ProbeInputs for FeatureMatrix {
    fn n_rows(&self) -> usize {
        self.n_samples()
    }

    fn width(&self) -> usize {
        self.dim()
    }

    fn for_each_nonzero(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        for (j, &v) in self.row(i).iter().enumerate() {
            if v != 0.0 {
                f(j, v);
            }
        }
    }
}

/// `n × k` row-major scores (logits).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub n: usize,
    pub k: usize,
    pub values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * k {
            return Err(Error::Argument(format!(
                "{} scores for a {n}x{k} matrix",
                values.len()
            )));
        }
        Ok(Self { n, k, values })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    /// Arg-max per row; ties go to the lowest class index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n).map(|i| argmax(self.row(i))).collect()
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> ScoreMatrix {
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.n {
            values.extend(softmax(self.row(i)));
        }
        ScoreMatrix {
            n: self.n,
            k: self.k,
            values,
        }
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Numerically stable log-softmax (max subtraction).
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|&v| v - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `logits = weights · x + bias` with `weights` stored `k × m` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub k: usize,
    pub m: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient of the regularized objective with respect to weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(k: usize, m: usize) -> Self {
        Self {
            k,
            m,
            weights: vec![0.0; k * m],
            bias: vec![0.0; k],
        }
    }

    pub fn logits_into<I: ProbeInputs>(&self, inputs: &I, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        let m = self.m;
        inputs.for_each_nonzero(i, |j, x| {
            for (c, o) in out.iter_mut().enumerate() {
                *o += self.weights[c * m + j] * x;
            }
        });
    }

    pub fn scores<I: ProbeInputs>(&self, inputs: &I, idx: &[usize]) -> ScoreMatrix {
        let k = self.k;
        let mut values = vec![0.0; idx.len() * k];
        let fill = |(out, &i): (&mut [f64], &usize)| self.logits_into(inputs, i, out);
        if idx.len() * k >= PAR_THRESHOLD {
            values.par_chunks_mut(k).zip(idx.par_iter()).for_each(fill);
        } else {
            values.chunks_mut(k).zip(idx.iter()).for_each(fill);
        }
        ScoreMatrix {
            n: idx.len(),
            k,
            values,
        }
    }

    /// Mean `−ln q(target | x)` over `idx`.
    ///
    /// The running mean is exact when every term is equal, so an all-zero
    /// model scores exactly `ln k`.
    pub fn cross_entropy<I: ProbeInputs>(
        &self,
        inputs: &I,
        targets: &[usize],
        idx: &[usize],
    ) -> f64 {
        let scores = self.scores(inputs, idx);
        let mut mean = 0.0;
        for (n, &i) in idx.iter().enumerate() {
            let row = scores.row(n);
            let nll = log_sum_exp(row) - row[targets[i]];
            mean += (nll - mean) / (n + 1) as f64;
        }
        mean
    }

    fn l2(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Mean softmax cross-entropy over `batch` plus `(weight_decay / 2)·‖W‖²`.
/// The bias is not regularized.
pub fn objective<I: ProbeInputs>(
    model: &LinearModel,
    inputs: &I,
    targets: &[usize],
    batch: &[usize],
    weight_decay: f64,
) -> f64 {
    model.cross_entropy(inputs, targets, batch) + 0.5 * weight_decay * model.l2()
}

/// Residuals `softmax(logits) − onehot(target)` for a batch plus the batch's summed NLL.
fn residuals<I: ProbeInputs>(
    model: &LinearModel,
    inputs: &I,
    targets: &[usize],
    batch: &[usize],
) -> (Vec<f64>, f64) {
    let k = model.k;
    let mut res = vec![0.0; batch.len() * k];
    let fill = |(out, &i): (&mut [f64], &usize)| -> f64 {
        model.logits_into(inputs, i, out);
        let lse = log_sum_exp(out);
        let nll = lse - out[targets[i]];
        for o in out.iter_mut() {
            *o = (*o - lse).exp();
        }
        out[targets[i]] -= 1.0;
        nll
    };
    let nlls: Vec<f64> = if batch.len() * k >= PAR_THRESHOLD {
        res.par_chunks_mut(k)
            .zip(batch.par_iter())
            .map(fill)
            .collect()
    } else {
        res.chunks_mut(k).zip(batch.iter()).map(fill).collect()
    };
    (res, nlls.iter().sum())
}

fn accumulate_gradient<I: ProbeInputs>(
    model: &LinearModel,
    inputs: &I,
    batch: &[usize],
    res: &[f64],
    weight_decay: f64,
) -> Gradient {
    let (k, m) = (model.k, model.m);
    let scale = 1.0 / batch.len() as f64;
    let mut gw = vec![0.0; k * m];
    let mut gb = vec![0.0; k];
    for (n, &i) in batch.iter().enumerate() {
        let r = &res[n * k..(n + 1) * k];
        for (g, &v) in gb.iter_mut().zip(r) {
            *g += v;
        }
        inputs.for_each_nonzero(i, |j, x| {
            for (c, &v) in r.iter().enumerate() {
                gw[c * m + j] += v * x;
            }
        });
    }
    for (g, &w) in gw.iter_mut().zip(&model.weights) {
        *g = *g * scale + weight_decay * w;
    }
    gb.iter_mut().for_each(|g| *g *= scale);
    Gradient {
        weights: gw,
        bias: gb,
    }
}

/// Analytic gradient of [`objective`].
pub fn gradient<I: ProbeInputs>(
    model: &LinearModel,
    inputs: &I,
    targets: &[usize],
    batch: &[usize],
    weight_decay: f64,
) -> Result<Gradient> {
    if batch.is_empty() {
        return Err(Error::Argument("gradient of an empty batch".into()));
    }
    if inputs.width() != model.m {
        return Err(Error::Argument(format!(
            "inputs have width {}, model expects {}",
            inputs.width(),
            model.m
        )));
    }
    let (res, _) = residuals(model, inputs, targets, batch);
    Ok(accumulate_gradient(
        model,
        inputs,
        batch,
        &res,
        weight_decay,
    ))
}

/// Per-epoch record of a training run. Losses are in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean minibatch cross-entropy seen during the epoch.
    pub train_ce: f64,
    /// Cross-entropy on the validation split after the epoch.
    pub val_ce: Option<f64>,
}

struct Trained {
    model: LinearModel,
    history: Vec<EpochRecord>,
    selected_epoch: Option<usize>,
}

fn train_softmax<I: ProbeInputs>(
    inputs: &I,
    targets: &[usize],
    k: usize,
    train: &[usize],
    val: &[usize],
    cfg: &ProbeConfig,
) -> Result<Trained> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    let m = inputs.width();
    let mut model = LinearModel::zeros(k, m);
    let mut vel_w = vec![0.0; k * m];
    let mut vel_b = vec![0.0; k];
    let mut rng = seed::rng(cfg.seed);
    let mut order = train.to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, LinearModel)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut nll_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (res, nll) = residuals(&model, inputs, targets, batch);
            if !nll.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    lr,
                    loss: nll / batch.len() as f64,
                });
            }
            nll_sum += nll;
            let g = accumulate_gradient(&model, inputs, batch, &res, cfg.weight_decay);
            for ((w, v), gw) in model.weights.iter_mut().zip(&mut vel_w).zip(&g.weights) {
                *v = cfg.momentum * *v + gw;
                *w -= lr * *v;
            }
            for ((b, v), gb) in model.bias.iter_mut().zip(&mut vel_b).zip(&g.bias) {
                *v = cfg.momentum * *v + gb;
                *b -= lr * *v;
            }
        }
        if !model.is_finite() {
            return Err(Error::Divergence {
                epoch,
                lr,
                loss: f64::NAN,
            });
        }
        let val_ce = (!val.is_empty()).then(|| model.cross_entropy(inputs, targets, val));
        if let Some(v) = val_ce {
            if !v.is_finite() {
                return Err(Error::Divergence { epoch, lr, loss: v });
            }
            if cfg.select_by_val && best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_ce: nll_sum / train.len() as f64,
            val_ce,
        });
    }

    let (model, selected_epoch) = match best {
        Some((_, epoch, snapshot)) => (snapshot, Some(epoch)),
        None => (model, cfg.epochs.checked_sub(1)),
    };
    Ok(Trained {
        model,
        history,
        selected_epoch,
    })
}

/// Trained concepts → clusters predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseProbe {
    model: LinearModel,
    config: ProbeConfig,
    train_history: Vec<EpochRecord>,
    selected_epoch: Option<usize>,
    concept_names: Vec<String>,
}

/// Metadata stored as the JSON tail of an `RPLP` file.
#[derive(Debug, Serialize, Deserialize)]
struct ProbeMeta {
    config: ProbeConfig,
    train_history: Vec<EpochRecord>,
    selected_epoch: Option<usize>,
    concept_names: Vec<String>,
}

fn check_split(n: usize, splits: &SplitIndices) -> Result<()> {
    let max = splits
        .train
        .iter()
        .chain(&splits.val)
        .chain(&splits.test)
        .copied()
        .max();
    match max {
        Some(i) if i >= n => Err(Error::Argument(format!(
            "split index {i} out of range for {n} samples"
        ))),
        _ => Ok(()),
    }
}

/// Fit the reverse probe on `splits.train`, selecting on `splits.val`.
pub fn train_reverse_probe(
    concepts: &ConceptMatrix,
    targets: &ClusterAssignment,
    splits: &SplitIndices,
    config: &ProbeConfig,
) -> Result<ReverseProbe> {
    if concepts.n_samples() != targets.n_samples() {
        return Err(Error::Argument(format!(
            "{} concept rows but {} cluster labels",
            concepts.n_samples(),
            targets.n_samples()
        )));
    }
    check_split(concepts.n_samples(), splits)?;
    let trained = train_softmax(
        concepts,
        targets.labels(),
        targets.k(),
        &splits.train,
        &splits.val,
        config,
    )?;
    Ok(ReverseProbe {
        model: trained.model,
        config: config.clone(),
        train_history: trained.history,
        selected_epoch: trained.selected_epoch,
        concept_names: concepts.concept_names().to_vec(),
    })
}

impl ReverseProbe {
    /// Untrained probe: zero weights and bias, i.e. a uniform posterior.
    pub fn zeros(k: usize, concept_names: Vec<String>) -> Self {
        Self {
            model: LinearModel::zeros(k, concept_names.len()),
            config: ProbeConfig {
                epochs: 0,
                ..ProbeConfig::default()
            },
            train_history: Vec::new(),
            selected_epoch: None,
            concept_names,
        }
    }

    pub fn from_model(model: LinearModel, concept_names: Vec<String>) -> Result<Self> {
        if model.weights.len() != model.k * model.m
            || model.bias.len() != model.k
            || concept_names.len() != model.m
        {
            return Err(Error::Construction("inconsistent probe shapes".into()));
        }
        if !model.is_finite() {
            return Err(Error::Data("non-finite probe parameter".into()));
        }
        Ok(Self {
            model,
            config: ProbeConfig::default(),
            train_history: Vec::new(),
            selected_epoch: None,
            concept_names,
        })
    }

    pub fn k(&self) -> usize {
        self.model.k
    }

    pub fn m(&self) -> usize {
        self.model.m
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    /// `k × m` row-major.
    pub fn weights(&self) -> &[f64] {
        &self.model.weights
    }

    pub fn weight(&self, cluster: usize, concept: usize) -> f64 {
        self.model.weights[cluster * self.model.m + concept]
    }

    pub fn bias(&self) -> &[f64] {
        &self.model.bias
    }

    pub fn config(&self) -> &ProbeConfig {
        &self.config
    }

    pub fn train_history(&self) -> &[EpochRecord] {
        &self.train_history
    }

    pub fn selected_epoch(&self) -> Option<usize> {
        self.selected_epoch
    }

    pub fn concept_names(&self) -> &[String] {
        &self.concept_names
    }

    fn check_concepts(&self, concepts: &ConceptMatrix) -> Result<()> {
        if concepts.n_concepts() != self.m() {
            return Err(Error::Argument(format!(
                "concept matrix has {} concepts, probe expects {}",
                concepts.n_concepts(),
                self.m()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, concepts: &ConceptMatrix, idx: &[usize]) -> Result<ScoreMatrix> {
        self.check_concepts(concepts)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= concepts.n_samples()) {
            return Err(Error::Argument(format!("row index {bad} out of range")));
        }
        Ok(self.model.scores(concepts, idx))
    }

    pub fn predict(&self, concepts: &ConceptMatrix, idx: &[usize]) -> Result<Vec<usize>> {
        Ok(self.logits(concepts, idx)?.argmax())
    }

    /// Mean held-out cross-entropy in nats.
    pub fn cross_entropy(
        &self,
        concepts: &ConceptMatrix,
        targets: &ClusterAssignment,
        idx: &[usize],
    ) -> Result<f64> {
        self.check_concepts(concepts)?;
        if targets.k() != self.k() {
            return Err(Error::Argument(format!(
                "targets have k = {}, probe has k = {}",
                targets.k(),
                self.k()
            )));
        }
        if idx.is_empty() {
            return Err(Error::Argument(
                "cross-entropy over an empty index set".into(),
            ));
        }
        Ok(self.model.cross_entropy(concepts, targets.labels(), idx))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&ProbeMeta {
            config: self.config.clone(),
            train_history: self.train_history.clone(),
            selected_epoch: self.selected_epoch,
            concept_names: self.concept_names.clone(),
        })?;
        let mut out =
            Vec::with_capacity(32 + 8 * (self.model.weights.len() + self.k()) + meta.len());
        out.extend_from_slice(PROBE_MAGIC);
        out.extend_from_slice(&crate::data::io::FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k() as u64).to_le_bytes());
        out.extend_from_slice(&(self.m() as u64).to_le_bytes());
        for &w in self.model.weights.iter().chain(&self.model.bias) {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(buf, "RPLP");
        rd.magic(PROBE_MAGIC)?;
        let k = rd.usize()?;
        let m = rd.usize()?;
        rd.sized(rd.sized(k, m)?, 8)?;
        let mut weights = Vec::with_capacity(k * m);
        for _ in 0..k * m {
            weights.push(rd.f64()?);
        }
        let mut bias = Vec::with_capacity(k);
        for _ in 0..k {
            bias.push(rd.f64()?);
        }
        let meta_len = rd.usize()?;
        let meta: ProbeMeta = serde_json::from_slice(rd.take(meta_len)?)
            .map_err(|e| Error::Format(format!("RPLP: bad metadata: {e}")))?;
        rd.finish()?;
        let mut probe = Self::from_model(
            LinearModel {
                k,
                m,
                weights,
                bias,
            },
            meta.concept_names,
        )
        .map_err(|e| Error::Format(format!("RPLP: {e}")))?;
        probe.config = meta.config;
        probe.train_history = meta.train_history;
        probe.selected_epoch = meta.selected_epoch;
        Ok(probe)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Free-function form of [`ReverseProbe::logits`].
pub fn probe_logits(
    p: &ReverseProbe,
    concepts: &ConceptMatrix,
    idx: &[usize],
) -> Result<ScoreMatrix> {
    p.logits(concepts, idx)
}

/// One per-attribute forward probe: features → attribute bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardProbe {
    pub attribute: usize,
    pub name: String,
    /// Decision function `weights · x + bias > 0` predicts the attribute is present.
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Held-out (test split) accuracy.
    pub accuracy: f64,
    /// The attribute was constant on the training split; `accuracy` is that of
    /// predicting the constant.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardProbeSet {
    pub probes: Vec<ForwardProbe>,
}

impl ForwardProbeSet {
    pub fn accuracy_of(&self, name: &str) -> Option<f64> {
        self.probes
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.accuracy)
    }
}

/// Train one binary linear classifier per listed attribute on the features.
pub fn train_forward_probes(
    features: &FeatureMatrix,
    concepts: &ConceptMatrix,
    attribute_ids: &[usize],
    splits: &SplitIndices,
    config: &ProbeConfig,
) -> Result<ForwardProbeSet> {
    if features.n_samples() != concepts.n_samples() {
        return Err(Error::Argument(format!(
            "{} feature rows but {} concept rows",
            features.n_samples(),
            concepts.n_samples()
        )));
    }
    check_split(features.n_samples(), splits)?;
    if splits.test.is_empty() {
        return Err(Error::Argument("test split is empty".into()));
    }
    let mut probes = Vec::with_capacity(attribute_ids.len());
    for &a in attribute_ids {
        if a >= concepts.n_concepts() {
            return Err(Error::Argument(format!("attribute {a} out of range")));
        }
        let targets: Vec<usize> = concepts.column(a).into_iter().map(usize::from).collect();
        let accuracy_of = |pred: &dyn Fn(usize) -> usize| {
            let hits = splits
                .test
                .iter()
                .filter(|&&i| pred(i) == targets[i])
                .count();
            hits as f64 / splits.test.len() as f64
        };
        let positives = splits.train.iter().filter(|&&i| targets[i] == 1).count();
        let name = concepts.concept_names()[a].clone();
        if positives == 0 || positives == splits.train.len() {
            let constant = usize::from(positives > 0);
            probes.push(ForwardProbe {
                attribute: a,
                name,
                weights: vec![0.0; features.dim()],
                bias: if constant == 1 { 1.0 } else { -1.0 },
                accuracy: accuracy_of(&|_| constant),
                degenerate: true,
            });
            continue;
        }
        let trained = train_softmax(features, &targets, 2, &splits.train, &splits.val, config)?;
        let d = features.dim();
        let w = &trained.model.weights;
        let weights: Vec<f64> = (0..d).map(|j| w[d + j] - w[j]).collect();
        let bias = trained.model.bias[1] - trained.model.bias[0];
        let decide = |i: usize| {
            let z: f64 = features
                .row(i)
                .iter()
                .zip(&weights)
                .map(|(x, w)| x * w)
                .sum::<f64>()
                + bias;
            usize::from(z > 0.0)
        };
        probes.push(ForwardProbe {
            attribute: a,
            name,
            accuracy: accuracy_of(&decide),
            weights,
            bias,
            degenerate: false,
        });
    }
    Ok(ForwardProbeSet { probes })
}
