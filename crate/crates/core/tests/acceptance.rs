//! Acceptance criteria, one check per criterion, each printing a PASS/FAIL line.
//!
//! Runs without the libtest harness so the lines show up in a plain
//! `cargo test` run: `cargo test -p revprobe --test acceptance`.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use revprobe::data::{ConceptGroup, ConceptMatrix, FeatureMatrix};
use revprobe::metrics::{ami, contingency, expected_mi, mi_nmi, top1_and_map, NmiNormalizer};
use revprobe::pipeline::{
    self, evaluate_run, prepare_features, run_ksweep, run_toy, run_transfer, RunConfig, StatsMode,
};
use revprobe::probe::{gradient, objective, LinearModel, ReverseProbe, ScoreMatrix};
use revprobe::quantize::{ClusterAssignment, KmeansConfig};
use revprobe::synth::{gen_blobs, gen_oracle, BlobSpec, OracleSpec, ToyLayout, ToySpec};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

/// Plug-in MI in nats straight from label vectors.
fn naive_mi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut joint = vec![0.0; ka * kb];
    let mut pa = vec![0.0; ka];
    let mut pb = vec![0.0; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1.0;
        pa[x] += 1.0;
        pb[y] += 1.0;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let j = joint[x * kb + y];
            if j > 0.0 {
                mi += j / n * (j * n / (pa[x] * pb[y])).ln();
            }
        }
    }
    mi
}

fn toy_cfg() -> RunConfig {
    RunConfig {
        n_clusterings: 1,
        ..RunConfig::default()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for layout in [ToyLayout::Xor, ToyLayout::Separable] {
        let spec = ToySpec {
            n_per_cluster: 200,
            layout,
            noise_std: 0.05,
            seed: 0,
        };
        let r = match run_toy(&spec, &toy_cfg()) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("{layout:?}: {e}")),
        };
        let color_ok = match layout {
            ToyLayout::Xor => (0.45..=0.55).contains(&r.color_accuracy),
            ToyLayout::Separable => r.color_accuracy == 1.0,
        };
        ok &= color_ok && r.shape_accuracy == 1.0 && r.reverse.top1 >= 0.99;
        lines.push(format!(
            "{layout:?}: color {:.4}, shape {:.4}, reverse top-1 {:.4}",
            r.color_accuracy, r.shape_accuracy, r.reverse.top1
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(5);
    outcome(ok, format!("{}; {:.2?}", lines.join("; "), elapsed))
}

fn oracle_specs() -> Vec<(&'static str, OracleSpec)> {
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut random = |k: usize, m: usize| -> Vec<Vec<f64>> {
        (0..k)
            .map(|_| (0..m).map(|_| rng.gen_range(0.02..0.98)).collect())
            .collect()
    };
    let mut skewed = OracleSpec::uniform(3, 5, random(3, 5), n, 10);
    skewed.cluster_prior = vec![0.6, 0.3, 0.1];
    let mut five = OracleSpec::uniform(5, 6, random(5, 6), n, 7);
    five.cluster_prior = vec![0.1, 0.15, 0.2, 0.25, 0.3];
    vec![
        ("deterministic k8", OracleSpec::deterministic(8, n, 1)),
        (
            "independent k4 m4",
            OracleSpec::independent(4, 4, 0.3, n, 2),
        ),
        (
            "patterned k4 m3",
            OracleSpec::patterned(4, 3, 0.9, 0.1, n, 3),
        ),
        (
            "patterned k8 m3",
            OracleSpec::patterned(8, 3, 0.9, 0.1, n, 4),
        ),
        (
            "patterned k8 m8",
            OracleSpec::patterned(8, 8, 0.8, 0.2, n, 5),
        ),
        (
            "patterned k2 m1",
            OracleSpec::patterned(2, 1, 0.7, 0.3, n, 6),
        ),
        ("random k5 m6 skewed prior", five),
        (
            "random k6 m8",
            OracleSpec::uniform(6, 8, random(6, 8), n, 8),
        ),
        (
            "patterned k4 m2 sharp",
            OracleSpec::patterned(4, 2, 0.99, 0.01, n, 9),
        ),
        ("random k3 m5 skewed prior", skewed),
    ]
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let mut ok = true;
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    let mut deterministic_gap = f64::NAN;
    for (name, spec) in oracle_specs() {
        let d = match gen_oracle(&spec) {
            Ok(d) => d,
            Err(e) => return outcome(false, format!("{name}: {e}")),
        };
        let split = match pipeline::split_for(&d.clusters, &cfg, 0) {
            Ok(s) => s,
            Err(e) => return outcome(false, format!("{name}: {e}")),
        };
        let report = match pipeline::probe_on_split(&d.concepts, &d.clusters, &split, &cfg, 0) {
            Ok((_, r)) => r,
            Err(e) => return outcome(false, format!("{name}: {e}")),
        };
        let est = report.info.mi_lower_bound;
        let excess = est - d.analytic.mi;
        worst = worst.max(excess);
        if excess > 0.05 {
            ok = false;
            failures.push(format!(
                "{name}: estimate {est:.4} > analytic {:.4} + 0.05",
                d.analytic.mi
            ));
        }
        if name.starts_with("deterministic") {
            deterministic_gap = d.analytic.mi - est;
            if deterministic_gap > 0.05 {
                ok = false;
                failures.push(format!(
                    "{name}: estimate {est:.4} < analytic {:.4} - 0.05",
                    d.analytic.mi
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(60) {
        ok = false;
        failures.push("runtime over 1 min".into());
    }
    outcome(
        ok,
        format!(
            "max(estimate - analytic) {worst:.4} nats, deterministic shortfall {deterministic_gap:.4}; {:.2?}{}",
            elapsed,
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

/// Integer partitions of `n` in non-increasing order.
fn partitions(n: u64) -> Vec<Vec<u64>> {
    fn go(rest: u64, max: u64, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if rest == 0 {
            out.push(cur.clone());
            return;
        }
        for part in (1..=rest.min(max)).rev() {
            cur.push(part);
            go(rest - part, part, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(n, n, &mut Vec::new(), &mut out);
    out
}

fn labels_from_margins(margins: &[u64]) -> Vec<usize> {
    margins
        .iter()
        .enumerate()
        .flat_map(|(c, &m)| std::iter::repeat_n(c, m as usize))
        .collect()
}

/// Mean MI of `a` against every permutation of `b` (Heap's algorithm).
fn permutation_emi(a: &[usize], b: &[usize]) -> f64 {
    let mut b = b.to_vec();
    let n = b.len();
    let mut c = vec![0usize; n];
    let mut total = naive_mi(a, &b);
    let mut count = 1u64;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                b.swap(0, i);
            } else {
                b.swap(c[i], i);
            }
            total += naive_mi(a, &b);
            count += 1;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    total / count as f64
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    let mut pairs = 0usize;
    for n in 1..=8u64 {
        let parts = partitions(n);
        for rows in &parts {
            for cols in &parts {
                let oracle =
                    permutation_emi(&labels_from_margins(rows), &labels_from_margins(cols));
                let mut reversed = rows.clone();
                reversed.reverse();
                for r in [rows, &reversed] {
                    match expected_mi(r, cols, n) {
                        Ok(v) => worst = worst.max((v - oracle).abs()),
                        Err(e) => return outcome(false, format!("margins {r:?} / {cols:?}: {e}")),
                    }
                }
                pairs += 1;
            }
        }
    }
    outcome(
        worst <= 1e-9,
        format!("{pairs} margin pairs, max |error| {worst:.2e}"),
    )
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..k)).collect()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut notes = Vec::new();
    let mut ok = true;

    let mut self_ami_worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(2..200);
        let k = rng.gen_range(1..12);
        let u = random_labels(&mut rng, n, k);
        for norm in [
            NmiNormalizer::Arithmetic,
            NmiNormalizer::Geometric,
            NmiNormalizer::Max,
            NmiNormalizer::Min,
        ] {
            let v = ami(&contingency(&u, &u).unwrap(), norm).unwrap();
            self_ami_worst = self_ami_worst.max((v - 1.0).abs());
        }
    }
    ok &= self_ami_worst <= 1e-12;
    notes.push(format!("max |AMI(U,U) - 1| {self_ami_worst:.1e}"));

    let a = random_labels(&mut rng, 10_000, 10);
    let b = random_labels(&mut rng, 10_000, 10);
    let indep = ami(&contingency(&a, &b).unwrap(), NmiNormalizer::Arithmetic).unwrap();
    ok &= (-0.02..=0.02).contains(&indep);
    notes.push(format!("independent AMI {indep:.5}"));

    let mut out_of_range = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..60);
        let k = rng.gen_range(1..8);
        let pred = random_labels(&mut rng, n, k);
        let truth = random_labels(&mut rng, n, k);
        let (_, nmi) = mi_nmi(
            &contingency(&pred, &truth).unwrap(),
            NmiNormalizer::Arithmetic,
        );
        let scores =
            ScoreMatrix::new(n, k, (0..n * k).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let r = top1_and_map(&scores, &truth).unwrap();
        for v in [nmi, r.top1, r.map] {
            if !(0.0..=1.0).contains(&v) {
                out_of_range += 1;
            }
        }
    }
    ok &= out_of_range == 0;
    notes.push(format!(
        "{out_of_range} NMI/top-1/mAP values outside [0, 1] over 1000 instances"
    ));

    let mut ce_exact = true;
    for k in [2usize, 3, 7, 10, 1000] {
        let m = 5;
        let dense: Vec<u8> = (0..20 * m).map(|_| rng.gen_range(0..2)).collect();
        let concepts = ConceptMatrix::from_dense(
            20,
            m,
            &dense,
            (0..m).map(|j| format!("c{j}")).collect(),
            vec![ConceptGroup::new("g", 0, m)],
        )
        .unwrap();
        let targets = ClusterAssignment::new((0..20).map(|i| i % k.min(20)).collect(), k).unwrap();
        let p = ReverseProbe::zeros(k, concepts.concept_names().to_vec());
        let idx: Vec<usize> = (0..20).collect();
        ce_exact &= p.cross_entropy(&concepts, &targets, &idx).unwrap() == (k as f64).ln();
    }
    ok &= ce_exact;
    notes.push(format!("untrained cross-entropy == ln K: {ce_exact}"));
    outcome(ok, notes.join("; "))
}

/// Largest relative error between the analytic gradient and central
/// differences; the denominator is floored at 1e-6 so that exactly-zero
/// components compare on an absolute scale.
fn gradient_check(rng: &mut ChaCha8Rng, shape: Option<(usize, usize)>, two_point: bool) -> f64 {
    let (k, m) = shape.unwrap_or_else(|| (rng.gen_range(2..=6), rng.gen_range(1..=10)));
    let n = rng.gen_range(1..=24);
    let dense: Vec<u8> = (0..n * m).map(|_| rng.gen_range(0..2)).collect();
    let concepts = ConceptMatrix::from_dense(
        n,
        m,
        &dense,
        (0..m).map(|j| format!("c{j}")).collect(),
        vec![ConceptGroup::new("g", 0, m)],
    )
    .unwrap();
    let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let batch: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.8)).collect();
    let batch = if batch.is_empty() { vec![0] } else { batch };
    let wd = if rng.gen_bool(0.5) {
        0.0
    } else {
        rng.gen_range(1e-4..1e-1)
    };
    let mut model = LinearModel::zeros(k, m);
    for w in model.weights.iter_mut().chain(model.bias.iter_mut()) {
        *w = rng.gen_range(-2.0..2.0);
    }
    let g = gradient(&model, &concepts, &targets, &batch, wd).unwrap();
    let analytic: Vec<f64> = g.weights.iter().chain(&g.bias).copied().collect();
    let h = if two_point { 1e-6 } else { 1e-3 };
    let mut worst = 0.0f64;
    for (p, &a) in analytic.iter().enumerate() {
        let probe = |delta: f64| {
            let mut mm = model.clone();
            if p < k * m {
                mm.weights[p] += delta;
            } else {
                mm.bias[p - k * m] += delta;
            }
            objective(&mm, &concepts, &targets, &batch, wd)
        };
        let numeric = if two_point {
            (probe(h) - probe(-h)) / (2.0 * h)
        } else {
            // fourth-order central stencil
            (8.0 * (probe(h) - probe(-h)) - (probe(2.0 * h) - probe(-2.0 * h))) / (12.0 * h)
        };
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fixed = (0..20)
        .map(|_| gradient_check(&mut rng, Some((5, 4)), true))
        .fold(0.0f64, f64::max);
    let worst = (0..100)
        .map(|_| gradient_check(&mut rng, None, false))
        .fold(0.0f64, f64::max);
    outcome(
        fixed < 1e-5 && worst < 1e-5,
        format!("5x4 at h=1e-6: {fixed:.2e}; 100 random shapes: {worst:.2e}"),
    )
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FeatureMatrix {
    let values = (0..n * d).map(|_| rng.gen_range(-5.0..5.0)).collect();
    FeatureMatrix::new(n, d, values, "fuzz").unwrap()
}

/// Minimum inertia over every labeling that uses all `k` clusters.
fn brute_force_inertia(f: &FeatureMatrix, k: usize) -> f64 {
    let n = f.n_samples();
    let d = f.dim();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for j in 0..d {
                sums[c * d + j] += f.row(i)[j];
            }
        }
        if counts.iter().all(|&c| c > 0) {
            let inertia: f64 = labels
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    (0..d)
                        .map(|j| (f.row(i)[j] - sums[c * d + j] / counts[c] as f64).powi(2))
                        .sum::<f64>()
                })
                .sum();
            best = best.min(inertia);
        }
        let mut pos = 0;
        while pos < n {
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
        if pos == n {
            return best;
        }
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut increases = 0usize;
    let mut fits = 0usize;
    while fits < 1000 {
        let n = rng.gen_range(3..300);
        let d = rng.gen_range(1..6);
        let k = rng.gen_range(2..=n.min(12));
        let f = random_features(&mut rng, n, d);
        let cfg = KmeansConfig {
            k,
            max_steps: 100,
            n_restarts: 1,
            seed: rng.gen(),
            ..KmeansConfig::default()
        };
        let (_, traces) = match cfg.fit_traced(&f) {
            Ok(t) => t,
            Err(e) => return outcome(false, format!("fit failed: {e}")),
        };
        for t in &traces {
            increases += t.inertia_history.windows(2).filter(|w| w[1] > w[0]).count();
        }
        fits += 1;
    }

    let mut worst_gap = 0.0f64;
    let mut instances = 0;
    for n in 2..=10usize {
        for k in 2..=3usize.min(n) {
            for _ in 0..6 {
                let d = rng.gen_range(1..=3);
                let f = random_features(&mut rng, n, d);
                let cfg = KmeansConfig {
                    k,
                    max_steps: 100,
                    n_restarts: 20,
                    seed: rng.gen(),
                    ..KmeansConfig::default()
                };
                let q = match cfg.fit(&f) {
                    Ok(q) => q,
                    Err(e) => return outcome(false, format!("fit failed: {e}")),
                };
                worst_gap = worst_gap.max((q.inertia() - brute_force_inertia(&f, k)).abs());
                instances += 1;
            }
        }
    }
    outcome(
        increases == 0 && worst_gap <= 1e-9,
        format!(
            "{fits} fuzzed fits, {increases} inertia increases; {instances} brute-force instances, max gap {worst_gap:.2e}"
        ),
    )
}

fn ksweep_data() -> (FeatureMatrix, ConceptMatrix) {
    let spec = BlobSpec::coded(16, 8, 8, 0.9, 0.1, 250, 77);
    let d = gen_blobs(&spec).unwrap();
    (d.features, d.concepts)
}

fn criterion_7() -> Outcome {
    let (f, c) = ksweep_data();
    let cfg = RunConfig {
        n_clusterings: 5,
        seed: 7,
        ..RunConfig::default()
    };
    let ks = [2, 4, 8, 16];
    let report = match run_ksweep(&f, &c, &cfg, &ks) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let medians: Vec<f64> = report
        .points
        .iter()
        .map(|p| p.aggregate.mi_lower_bound.median)
        .collect();
    let worst_drop = medians
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        worst_drop <= 0.03,
        format!(
            "median MI bound by K {:?}: {}; largest decrease {worst_drop:.4}",
            ks,
            medians
                .iter()
                .map(|m| format!("{m:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = BlobSpec::coded(6, 4, 6, 0.85, 0.1, 80, 8);
    let d = gen_blobs(&spec).unwrap();
    let fp = dir.path().join("f.rpfm");
    let cp = dir.path().join("c.rpcm");
    revprobe::data::save_features(&d.features, &fp).unwrap();
    revprobe::data::save_concepts(&d.concepts, &cp).unwrap();
    let bin = env!("CARGO_BIN_EXE_revprobe");
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("report{run}.json"));
        let status = Command::new(bin)
            .args([
                "evaluate",
                "--k",
                "6",
                "--runs",
                "3",
                "--seed",
                "11",
                "--features",
            ])
            .arg(&fp)
            .arg("--concepts")
            .arg(&cp)
            .arg("--out")
            .arg(&out)
            .status();
        match status {
            Ok(s) if s.success() => outputs.push(std::fs::read(&out).unwrap()),
            other => return outcome(false, format!("evaluate failed: {other:?}")),
        }
    }
    outcome(
        outputs[0] == outputs[1] && !outputs[0].is_empty(),
        format!(
            "two CLI runs, {} bytes each, identical: {}",
            outputs[0].len(),
            outputs[0] == outputs[1]
        ),
    )
}

fn criterion_9() -> Outcome {
    let spec = BlobSpec::coded(8, 6, 8, 0.9, 0.1, 150, 9);
    let d = gen_blobs(&spec).unwrap();
    let cfg = RunConfig {
        k: 8,
        n_clusterings: 1,
        seed: 9,
        ..RunConfig::default()
    };
    let (std_features, stats) = prepare_features(&d.features, &cfg).unwrap();
    let source = match evaluate_run(&std_features, &d.concepts, &cfg, 0) {
        Ok(a) => a,
        Err(e) => return outcome(false, e.to_string()),
    };
    let scale: f64 = stats.std.iter().fold(0.0, |a, &s| a.max(s));
    let shifted = d.features.map_values(|v| v + 3.0 * scale).unwrap();
    let transfer = match run_transfer(
        &source.quantizer,
        &source.probe,
        &stats,
        &shifted,
        &d.concepts,
        StatsMode::Source,
        cfg.normalizer,
    ) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    outcome(
        transfer.top1 < source.report.top1,
        format!(
            "in-domain top-1 {:.4}, shifted-copy top-1 {:.4} (benchmark-scale numbers excluded: need large-scale features and expert outputs)",
            source.report.top1, transfer.top1
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("toy forward vs reverse probes", criterion_1),
        ("information bound on oracle data", criterion_2),
        ("expected MI exactness", criterion_3),
        ("metric identities", criterion_4),
        ("gradient check", criterion_5),
        ("k-means monotone and optimal", criterion_6),
        ("k-sweep monotonicity", criterion_7),
        ("evaluate determinism", criterion_8),
        ("shifted-copy transfer", criterion_9),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let label = format!("criterion {} ({name})", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let status = if result.ok { "PASS" } else { "FAIL" };
        println!(
            "{status} {label}: {} [{:.2?}]",
            result.detail,
            start.elapsed()
        );
        failed += usize::from(!result.ok);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
