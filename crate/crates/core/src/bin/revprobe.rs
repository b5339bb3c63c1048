use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use revprobe::data::{
    load_concepts, load_concepts_csv, load_features, save_concepts, save_features, ConceptFormat,
    FeatureFormat,
};
use revprobe::pipeline::{
    self, concepts_to_labels_probe, read_json, run_breakdown, run_confusion_study, run_full_eval,
    run_ksweep, run_toy, run_transfer, write_csv, write_json, BreakdownMode, RunConfig, StatsMode,
};
use revprobe::synth::{self, BlobSpec, GroupStructuredSpec, OracleSpec, ToyLayout, ToySpec};
use revprobe::{
    ClusterAssignment, ConceptMatrix, Error, FeatureMatrix, Quantizer, ReverseProbe,
    StandardizationStats,
};

#[derive(Parser)]
#[command(
    name = "revprobe",
    version,
    about = "Quantized reverse probing of frozen representations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Standardize features and fit K-means; save the quantizer, statistics and assignment.
    Cluster(ClusterArgs),
    /// Train a reverse probe from concepts to a saved cluster assignment.
    Probe(ProbeArgs),
    /// Repeated K-means plus reverse probe, aggregated over runs.
    Evaluate(EvalArgs),
    /// Per-group contribution of the concept groups.
    Breakdown(BreakdownArgs),
    /// Full evaluation for several K.
    Ksweep(KsweepArgs),
    /// Cluster pairs whose confusion drops most when a concept group is added.
    Confusion(ConfusionArgs),
    /// Forward versus reverse probes on the four-blob toy data.
    Toy(ToyArgs),
    /// Write a synthetic dataset with known information content.
    Synth(SynthArgs),
    /// Apply saved quantizer, statistics and probe to another dataset.
    Transfer(TransferArgs),
    /// Reverse probe from concepts to ground-truth labels.
    LabelsProbe(LabelsProbeArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Number of independent clusterings.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated concept groups (default: all).
    #[arg(long, value_delimiter = ',')]
    groups: Option<Vec<String>>,
    /// JSON report path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn run_config(&self) -> revprobe::Result<RunConfig> {
        let mut cfg: RunConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => RunConfig::default(),
        };
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(r) = self.runs {
            cfg.n_clusterings = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(g) = &self.groups {
            cfg.groups = g.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn emit<T: Serialize>(&self, value: &T) -> revprobe::Result<()> {
        emit(self.out.as_deref(), value)
    }
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> revprobe::Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

#[derive(Args)]
struct Inputs {
    /// Features (.rpfm binary or headerless .csv).
    #[arg(long)]
    features: PathBuf,
    /// Concepts (.rpcm binary or .csv with a header row).
    #[arg(long)]
    concepts: PathBuf,
}

impl Inputs {
    fn load(&self) -> revprobe::Result<(FeatureMatrix, ConceptMatrix)> {
        Ok((
            read_features(&self.features)?,
            read_concepts(&self.concepts)?,
        ))
    }
}

fn read_features(p: &Path) -> revprobe::Result<FeatureMatrix> {
    load_features(p, FeatureFormat::from_path(p))
}

fn read_concepts(p: &Path) -> revprobe::Result<ConceptMatrix> {
    match ConceptFormat::from_path(p) {
        ConceptFormat::Csv => load_concepts_csv(p, None),
        ConceptFormat::Binary => load_concepts(p),
    }
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Run index whose derived seed is used.
    #[arg(long, default_value_t = 0)]
    run: usize,
    #[arg(long)]
    quantizer: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Assignment JSON (`{"k": .., "labels": [..]}`).
    #[arg(long)]
    assignments: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    concepts: PathBuf,
    /// Assignment JSON written by `cluster`.
    #[arg(long)]
    assignments: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0)]
    run: usize,
    /// Where to save the trained probe.
    #[arg(long)]
    probe_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    common: Common,
    /// Table export path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Method name written to the table.
    #[arg(long, default_value = "run")]
    tag: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Incremental,
    Isolation,
}

#[derive(Args)]
struct BreakdownArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "incremental")]
    mode: ModeArg,
    /// Group combined with every other group in isolation mode.
    #[arg(long)]
    anchor: Option<String>,
    /// Comma-separated group order (default: --groups, else file order).
    #[arg(long, value_delimiter = ',')]
    order: Option<Vec<String>>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    tag: String,
}

#[derive(Args)]
struct KsweepArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    common: Common,
    /// Comma-separated ascending K values.
    #[arg(long, value_delimiter = ',', required = true)]
    ks: Vec<usize>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    tag: String,
}

#[derive(Args)]
struct ConfusionArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    common: Common,
    /// Comma-separated base groups.
    #[arg(long, value_delimiter = ',', required = true)]
    base: Vec<String>,
    #[arg(long)]
    extra: Option<String>,
    #[arg(long, default_value_t = 10)]
    top_pairs: usize,
    #[arg(long, default_value_t = 10)]
    top_concepts: usize,
    /// Human-readable listing (default: stderr).
    #[arg(long)]
    text: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Separable,
    Xor,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, value_enum, default_value = "xor")]
    layout: LayoutArg,
    #[arg(long, default_value_t = 200)]
    n_per_cluster: usize,
    #[arg(long, default_value_t = 0.05)]
    noise_std: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Toy,
    Oracle,
    Groups,
    Blobs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthKind,
    /// Full generator spec as JSON; otherwise built from the flags below.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory; files are `<name>.rpfm`, `<name>.rpcm`, `<name>.json`.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value = "synth")]
    name: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Concept bits (oracle) or feature dimension (blobs).
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, value_enum, default_value = "xor")]
    layout: LayoutArg,
}

#[derive(Args)]
struct TransferArgs {
    /// Quantizer saved by `cluster`.
    #[arg(long)]
    quantizer: PathBuf,
    /// Probe saved by `probe`.
    #[arg(long)]
    probe: PathBuf,
    /// Standardization statistics saved by `cluster`.
    #[arg(long)]
    stats: PathBuf,
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_enum, default_value = "source")]
    stats_mode: StatsArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatsArg {
    Source,
    Target,
}

#[derive(Args)]
struct LabelsProbeArgs {
    #[arg(long)]
    concepts: PathBuf,
    /// JSON array of integer class ids, one per sample.
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    common: Common,
}

fn layout(l: LayoutArg) -> ToyLayout {
    match l {
        LayoutArg::Separable => ToyLayout::Separable,
        LayoutArg::Xor => ToyLayout::Xor,
    }
}

fn cluster(a: ClusterArgs) -> revprobe::Result<()> {
    let cfg = a.common.run_config()?;
    let features = read_features(&a.features)?;
    let (standardized, stats) = pipeline::prepare_features(&features, &cfg)?;
    let kcfg = cfg.kmeans(a.run);
    let q = kcfg.fit(&standardized)?;
    let assignment = q.assign(&standardized)?;
    q.save(&a.quantizer)?;
    if let Some(p) = &a.stats {
        write_json(p, &stats)?;
    }
    if let Some(p) = &a.assignments {
        write_json(p, &assignment)?;
    }
    a.common.emit(&json!({
        "k": q.k(),
        "dim": q.dim(),
        "seed": q.seed(),
        "inertia": q.inertia(),
        "iterations": q.n_iterations_run(),
        "clustering_fingerprint": assignment.fingerprint(),
        "counts": assignment.counts(),
    }))
}

fn probe(a: ProbeArgs) -> revprobe::Result<()> {
    let cfg = a.common.run_config()?;
    let concepts = cfg.select_concepts(&read_concepts(&a.concepts)?)?;
    let assignment: ClusterAssignment = read_json(&a.assignments)?;
    let split = pipeline::split_for(&assignment, &cfg, a.run)?;
    let (probe, report) = pipeline::probe_on_split(&concepts, &assignment, &split, &cfg, a.run)?;
    if let Some(p) = &a.probe_out {
        probe.save(p)?;
    }
    a.common.emit(&report)
}

fn evaluate(a: EvalArgs) -> revprobe::Result<()> {
    let cfg = a.common.run_config()?;
    let (f, c) = a.inputs.load()?;
    let report = run_full_eval(&f, &c, &cfg)?;
    if let Some(p) = &a.csv {
        write_csv(p, &report.csv_rows(&a.tag))?;
    }
    a.common.emit(&report)
}

fn breakdown(a: BreakdownArgs) -> revprobe::Result<()> {
    let cfg = a.common.run_config()?;
    let (f, c) = a.inputs.load()?;
    let mode = match a.mode {
        ModeArg::Incremental => BreakdownMode::Incremental,
        ModeArg::Isolation => BreakdownMode::Isolation,
    };
    let report = run_breakdown(&f, &c, &cfg, mode, a.anchor.as_deref(), a.order.as_deref())?;
    if let Some(p) = &a.csv {
        write_csv(p, &report.csv_rows(&a.tag))?;
    }
    a.common.emit(&report)
}

fn ksweep(a: KsweepArgs) -> revprobe::Result<()> {
    let cfg = a.common.run_config()?;
    let (f, c) = a.inputs.load()?;
    let report = run_ksweep(&f, &c, &cfg, &a.ks)?;
    if let Some(p) = &a.csv {
        write_csv(p, &report.csv_rows(&a.tag))?;
    }
    a.common.emit(&report)
}

fn confusion(a: ConfusionArgs) -> revprobe::Result<()> {
    let cfg = a.common.run_config()?;
    let (f, c) = a.inputs.load()?;
    let study = run_confusion_study(
        &f,
        &c,
        &cfg,
        &a.base,
        a.extra.as_deref(),
        a.top_pairs,
        a.top_concepts,
    )?;
    let text = study.to_text();
    match &a.text {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e))?,
        None => eprint!("{text}"),
    }
    a.common.emit(&study)
}

fn toy(a: ToyArgs) -> revprobe::Result<()> {
    let cfg = a.common.run_config()?;
    let spec = ToySpec {
        n_per_cluster: a.n_per_cluster,
        layout: layout(a.layout),
        noise_std: a.noise_std,
        seed: cfg.seed,
    };
    a.common.emit(&run_toy(&spec, &cfg)?)
}

fn write_dataset(
    dir: &Path,
    name: &str,
    features: Option<&FeatureMatrix>,
    concepts: &ConceptMatrix,
    sidecar: serde_json::Value,
) -> revprobe::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if let Some(f) = features {
        save_features(f, &dir.join(format!("{name}.rpfm")))?;
    }
    save_concepts(concepts, &dir.join(format!("{name}.rpcm")))?;
    write_json(&dir.join(format!("{name}.json")), &sidecar)
}

fn synth_cmd(a: SynthArgs) -> revprobe::Result<()> {
    fn spec_or<T: serde::de::DeserializeOwned>(
        p: &Option<PathBuf>,
        f: impl FnOnce() -> T,
    ) -> revprobe::Result<T> {
        p.as_deref().map_or_else(|| Ok(f()), read_json)
    }
    match a.kind {
        SynthKind::Toy => {
            let spec = spec_or(&a.spec, || ToySpec {
                n_per_cluster: a.n,
                layout: layout(a.layout),
                seed: a.seed,
                ..ToySpec::default()
            })?;
            let d = synth::gen_toy(&spec)?;
            write_dataset(
                &a.dir,
                &a.name,
                Some(&d.features),
                &d.concepts,
                json!({ "kind": "toy", "spec": spec, "clusters": d.clusters }),
            )
        }
        SynthKind::Oracle => {
            let spec = spec_or(&a.spec, || {
                OracleSpec::patterned(a.k, a.m, 0.9, 0.1, a.n, a.seed)
            })?;
            let d = synth::gen_oracle(&spec)?;
            write_dataset(
                &a.dir,
                &a.name,
                None,
                &d.concepts,
                json!({ "kind": "oracle", "spec": spec, "analytic": d.analytic, "clusters": d.clusters }),
            )
        }
        SynthKind::Groups => {
            let spec = spec_or(&a.spec, || GroupStructuredSpec::standard(a.k, a.n, a.seed))?;
            let d = synth::gen_group_structured(&spec)?;
            let features = synth::embed_clusters(&d.clusters, 8, 4.0, 1.0, a.seed)?;
            write_dataset(
                &a.dir,
                &a.name,
                Some(&features),
                &d.concepts,
                json!({ "kind": "groups", "spec": spec, "group_info": d.group_info, "clusters": d.clusters }),
            )
        }
        SynthKind::Blobs => {
            let spec = spec_or(&a.spec, || {
                BlobSpec::coded(a.k, a.m, 8, 0.9, 0.1, a.n.div_ceil(a.k.max(1)), a.seed)
            })?;
            let d = synth::gen_blobs(&spec)?;
            write_dataset(
                &a.dir,
                &a.name,
                Some(&d.features),
                &d.concepts,
                json!({ "kind": "blobs", "spec": spec, "analytic": d.analytic, "latent": d.latent }),
            )
        }
    }
}

fn transfer(a: TransferArgs) -> revprobe::Result<()> {
    let cfg: RunConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    let q = Quantizer::load(&a.quantizer)?;
    let p = ReverseProbe::load(&a.probe)?;
    let stats: StandardizationStats = read_json(&a.stats)?;
    let (f, c) = a.inputs.load()?;
    let mode = match a.stats_mode {
        StatsArg::Source => StatsMode::Source,
        StatsArg::Target => StatsMode::Target,
    };
    let report = run_transfer(&q, &p, &stats, &f, &c, mode, cfg.normalizer)?;
    emit(a.out.as_deref(), &report)
}

fn labels_probe(a: LabelsProbeArgs) -> revprobe::Result<()> {
    let cfg = a.common.run_config()?;
    let concepts = read_concepts(&a.concepts)?;
    let labels: Vec<usize> = read_json(&a.labels)?;
    let report = concepts_to_labels_probe(&concepts, &labels, &cfg)?;
    a.common.emit(&report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cluster(a) => cluster(a),
        Command::Probe(a) => probe(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Breakdown(a) => breakdown(a),
        Command::Ksweep(a) => ksweep(a),
        Command::Confusion(a) => confusion(a),
        Command::Toy(a) => toy(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Transfer(a) => transfer(a),
        Command::LabelsProbe(a) => labels_probe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_divergence() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
