//! Subcommand implementations. Each writes its artifacts under `out`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sctlab_core::synthdata::{featurize_labeled, read_jsonl, write_jsonl, SynthExample};
use sctlab_core::tuning::{train, LossKind, ModulationKind, TrainedPrompt};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::gradcheck::{run_gradcheck, GradcheckReport};
use crate::pipeline::{evaluate, method_label, run_cohort_seed, run_methods, Benchmark, CohortRecord, EvalMetrics, TestSet};
use crate::report::{aggregate, bar_chart_svg, rows_for, sha256_hex, write_csv, write_json, Envelope, MetricRow};

pub const ID_TRAIN: &str = "id_train.jsonl";
pub const ID_TEST: &str = "id_test.jsonl";
pub const OOD_TEST: &str = "ood_test.jsonl";
pub const MANIFEST: &str = "manifest.json";

fn prepare_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    Ok(())
}

/// Thread pool bounded by `SCTLAB_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SCTLAB_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("SCTLAB_THREADS must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))
}

#[derive(Debug, Serialize)]
struct FileEntry {
    file: String,
    examples: usize,
    sha256: String,
}

fn write_split(out: &Path, name: &str, cfg: &ExperimentConfig, data: &[SynthExample]) -> Result<FileEntry, CliError> {
    let path = out.join(name);
    write_jsonl(BufWriter::new(File::create(&path)?), &cfg.synth, data)?;
    Ok(FileEntry {
        file: name.into(),
        examples: data.len(),
        sha256: sha256_hex(&fs::read(&path)?),
    })
}

/// Writes the ID train/test and OOD test splits plus a manifest.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    prepare_dir(out)?;
    let bench = Benchmark::generate(cfg)?;
    let files = vec![
        write_split(out, ID_TRAIN, cfg, &bench.train)?,
        write_split(out, ID_TEST, cfg, &bench.id_test)?,
        write_split(out, OOD_TEST, cfg, &bench.ood_test)?,
    ];
    write_json(&out.join(MANIFEST), &Envelope::new("gen", cfg, files))?;
    Ok([ID_TRAIN, ID_TEST, OOD_TEST, MANIFEST].iter().map(|f| out.join(f)).collect())
}

fn read_split(out: &Path, name: &str, cfg: &ExperimentConfig) -> Result<Vec<SynthExample>, CliError> {
    let path = out.join(name);
    let file = File::open(&path)
        .map_err(|e| CliError::Input(format!("cannot open {} (run `gen` first?): {e}", path.display())))?;
    let (synth, data) = read_jsonl(BufReader::new(file))?;
    if synth != cfg.synth {
        return Err(CliError::Input(format!(
            "{} was generated with a different synth config",
            path.display()
        )));
    }
    Ok(data)
}

/// Applies `--modulation` to the config (SCT only).
pub fn with_modulation(cfg: &ExperimentConfig, modulation: Option<ModulationKind>) -> ExperimentConfig {
    let mut c = cfg.clone();
    if let Some(m) = modulation {
        c.train.modulation = m;
    }
    c
}

pub fn prompt_path(out: &Path, label: &str) -> PathBuf {
    out.join(format!("prompt_{label}.json"))
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

/// Trains one method on the generated train split.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, kind: LossKind) -> Result<TrainedPrompt, CliError> {
    let train_set = read_split(out, ID_TRAIN, cfg)?;
    let enc = crate::pipeline::build_benchmark_encoders(cfg)?;
    let feats = featurize_labeled(&train_set, &enc)?;
    let outcome = train(&feats, &enc, &cfg.train, kind)?;
    let label = method_label(kind, cfg);
    let prompt = TrainedPrompt::from_context(&outcome.prompt, &cfg.train, kind, outcome.loss_trace.clone());
    fs::write(prompt_path(out, &label), prompt.to_json()? + "\n")?;
    let rows: Vec<LossRow> = outcome
        .loss_trace
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| LossRow { epoch, loss })
        .collect();
    write_csv(&out.join(format!("loss_{label}.csv")), &rows)?;
    Ok(prompt)
}

#[derive(Serialize)]
struct EvalResult<'a> {
    method: String,
    prompt_file: String,
    prompt_sha256: String,
    metrics: &'a EvalMetrics,
}

/// Scores the generated test splits with a trained prompt.
pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path, kind: LossKind, prompt_file: Option<&Path>) -> Result<EvalMetrics, CliError> {
    let label = method_label(kind, cfg);
    let path = prompt_file.map(Path::to_path_buf).unwrap_or_else(|| prompt_path(out, &label));
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Input(format!("cannot read prompt {}: {e}", path.display())))?;
    let prompt = TrainedPrompt::from_json(&text)?;
    let omega = prompt.context::<f64>()?;
    let train_set = read_split(out, ID_TRAIN, cfg)?;
    let id_test = read_split(out, ID_TEST, cfg)?;
    let ood_test = read_split(out, OOD_TEST, cfg)?;
    let enc = crate::pipeline::build_benchmark_encoders(cfg)?;
    if omega.dim() != enc.dims.embed_dim {
        return Err(CliError::Input(format!(
            "prompt dimension {} does not match encoder embed_dim {}",
            omega.dim(),
            enc.dims.embed_dim
        )));
    }
    let test = TestSet::new(&enc, &id_test, &ood_test, &train_set)?;
    let metrics = evaluate(&enc, &omega, &test, &cfg.detectors, cfg.train.tau_train, cfg.eval.ece_bins)?;
    let result = EvalResult {
        method: label.clone(),
        prompt_file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        prompt_sha256: sha256_hex(text.as_bytes()),
        metrics: &metrics,
    };
    write_json(&out.join(format!("eval_{label}.json")), &Envelope::new("eval", cfg, result))?;
    let record = crate::pipeline::RunRecord {
        method: label.clone(),
        seed: cfg.train.seed,
        metrics: metrics.clone(),
        loss_trace: prompt.loss_trace.clone(),
    };
    write_csv(&out.join(format!("eval_{label}.csv")), &rows_for(&record))?;
    Ok(metrics)
}

#[derive(Serialize)]
struct CompareResult<'a> {
    methods: Vec<String>,
    n_seeds: usize,
    rows: &'a [MetricRow],
    aggregates: &'a [MetricRow],
}

/// Trains and evaluates every method on `n_seeds` runs.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path, methods: &[LossKind], n_seeds: usize) -> Result<Vec<MetricRow>, CliError> {
    if n_seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(CliError::Config("at least one method is required".into()));
    }
    prepare_dir(out)?;
    let pool = thread_pool()?;
    let per_seed = pool.install(|| {
        (0..n_seeds as u64)
            .into_par_iter()
            .map(|s| run_methods(cfg, methods, s))
            .collect::<Vec<_>>()
    });
    let mut rows = Vec::new();
    for records in per_seed {
        for r in records? {
            rows.extend(rows_for(&r));
        }
    }
    // method-major order, seeds ascending
    let labels: Vec<String> = methods.iter().map(|&k| method_label(k, cfg)).collect();
    rows.sort_by_key(|r| labels.iter().position(|l| *l == r.method));
    let aggregates = aggregate(&rows);
    let mut all = rows.clone();
    all.extend(aggregates.iter().cloned());
    write_csv(&out.join("compare.csv"), &all)?;
    write_json(
        &out.join("compare.json"),
        &Envelope::new(
            "compare",
            cfg,
            CompareResult {
                methods: labels,
                n_seeds,
                rows: &rows,
                aggregates: &aggregates,
            },
        ),
    )?;
    fs::write(out.join("compare.svg"), bar_chart_svg(&aggregates))?;
    Ok(all)
}

/// One row of the cohort table (GL-MCM metrics, or the first detector).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortRow {
    pub cohort: String,
    pub seed: String,
    pub detector: String,
    pub fpr95: f64,
    pub auroc: f64,
    pub id_acc: f64,
    pub ece: f64,
}

fn cohort_row(cohort: &str, seed: String, m: &EvalMetrics) -> CohortRow {
    let d = m.detector("glmcm").unwrap_or(&m.detectors[0]);
    CohortRow {
        cohort: cohort.into(),
        seed,
        detector: d.detector.clone(),
        fpr95: d.fpr95,
        auroc: d.auroc,
        id_acc: m.id_acc,
        ece: m.ece,
    }
}

#[derive(Serialize)]
struct CohortResult<'a> {
    n_seeds: usize,
    all_disjoint: bool,
    runs: &'a [CohortRecord],
}

/// LoCoOp trained on low- versus high-uncertainty cohorts.
pub fn cmd_cohort(cfg: &ExperimentConfig, out: &Path, n_seeds: usize) -> Result<Vec<CohortRow>, CliError> {
    if n_seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    prepare_dir(out)?;
    let pool = thread_pool()?;
    let runs = pool
        .install(|| {
            (0..n_seeds as u64)
                .into_par_iter()
                .map(|s| run_cohort_seed(cfg, s))
                .collect::<Vec<_>>()
        })
        .into_iter()
        .collect::<sctlab_core::Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(2 * n_seeds + 2);
    for r in &runs {
        rows.push(cohort_row("low", r.seed.to_string(), &r.low));
        rows.push(cohort_row("high", r.seed.to_string(), &r.high));
    }
    for cohort in ["low", "high"] {
        let mine: Vec<&CohortRow> = rows.iter().filter(|r| r.cohort == cohort).collect();
        let mean = |f: fn(&CohortRow) -> f64| mine.iter().map(|r| f(r)).sum::<f64>() / mine.len() as f64;
        let summary = CohortRow {
            cohort: cohort.into(),
            seed: "mean".into(),
            detector: mine[0].detector.clone(),
            fpr95: mean(|r| r.fpr95),
            auroc: mean(|r| r.auroc),
            id_acc: mean(|r| r.id_acc),
            ece: mean(|r| r.ece),
        };
        rows.push(summary);
    }
    write_csv(&out.join("cohort.csv"), &rows)?;
    let all_disjoint = runs.iter().all(|r| r.disjoint);
    write_json(
        &out.join("cohort.json"),
        &Envelope::new(
            "cohort",
            cfg,
            CohortResult {
                n_seeds,
                all_disjoint,
                runs: &runs,
            },
        ),
    )?;
    if !all_disjoint {
        return Err(CliError::Verification("uncertainty cohorts overlap".into()));
    }
    Ok(rows)
}

/// Writes the gradient-check report; fails with a verification error when
/// any combination exceeds the tolerance.
pub fn cmd_gradcheck(cfg: &ExperimentConfig, out: &Path, n_fixtures: usize, corrupt: bool) -> Result<GradcheckReport, CliError> {
    if n_fixtures == 0 {
        return Err(CliError::Config("--fixtures must be at least 1".into()));
    }
    prepare_dir(out)?;
    let report = run_gradcheck(n_fixtures, cfg.train.seed, corrupt)?;
    write_json(&out.join("gradcheck.json"), &Envelope::new("gradcheck", cfg, &report))?;
    write_csv(&out.join("gradcheck.csv"), &report.entries)?;
    if let Some(bad) = report.entries.iter().find(|e| !e.passed) {
        return Err(CliError::Verification(format!(
            "gradient mismatch for loss={} modulation={} regularizer={} (max relative error {:e})",
            bad.loss, bad.modulation, bad.regularizer, bad.max_rel_error
        )));
    }
    Ok(report)
}
