//! Command implementations. Each returns its result as data; `main` does the
//! printing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use esn_core::data::{batch_iterator, load_corpus, FilterStats, Vocabulary};
use esn_core::eval::{load_pairs, minimal_pair_accuracy, validation_nll};
use esn_core::reservoir::{count_params, ParamCounts};
use esn_core::rng::{stream_rng, Stream};
use esn_core::train::{EpochStats, Trainer};
use esn_core::{
    CorpusManifest, EsnLm, EvalReport, Execution, MinimalPair, OptimizerState, OutputHead, PairScoring, Reservoir,
    TokenSequence,
};
use serde::Serialize;

use crate::checkpoint::{Checkpoint, Cursor};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::metrics::{Event, MetricsLog};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// State sizes reported by `count-params` when none are given.
pub const DEFAULT_COUNT_SIZES: [usize; 7] = [1024, 2048, 4096, 8192, 16384, 32768, 65536];

/// Base setup used by `count-params` without `--config`.
pub const STANDARD_SETUP: &str = r#"state_size = 4096
vocab_size = 50257
spectral_radius = 0.99
input_scale = 1.0
rec_degree = 32
leak_min = 0.0
leak_max = 1.0
activation = "tanh"
output_rank = 512
seed = 0
batch_size = 32
min_len = 6
max_len = 512
"#;

/// Prefixes every line of the resolved config with `# `.
pub fn config_echo(cfg: &RunConfig) -> String {
    cfg.to_toml().lines().map(|l| format!("# {l}\n")).collect()
}

// ---------------------------------------------------------------- data

fn check_vocab(cfg: &RunConfig, vocab: &Vocabulary, source: &Path) -> Result<()> {
    if vocab.vocab_size != cfg.vocab_size {
        return Err(CliError::config(
            source,
            format!(
                "corpus vocabulary has {} ids but the config sets vocab_size = {}",
                vocab.vocab_size, cfg.vocab_size
            ),
        ));
    }
    Ok(())
}

/// Loads, verifies and length-filters the corpus behind a manifest.
pub fn load_filtered(
    cfg: &RunConfig,
    manifest_path: &Path,
    exec: Execution,
) -> Result<(Vec<TokenSequence>, FilterStats)> {
    let manifest = CorpusManifest::load(manifest_path)?;
    check_vocab(cfg, &manifest.vocab, manifest_path)?;
    let corpus = load_corpus(&manifest, exec)?;
    let (seqs, stats) = cfg.length_filter().apply_all(corpus.sequences);
    if seqs.is_empty() {
        return Err(esn_core::EsnError::CorpusIntegrity(format!(
            "{}: no sentence survives the length filter",
            manifest_path.display()
        ))
        .into());
    }
    Ok((seqs, stats))
}

fn pair_vocab(cfg: &RunConfig, ckpt: &Checkpoint, manifest: Option<&Path>) -> Result<Vocabulary> {
    // BOS/EOS ids come from whichever manifest the run used.
    let path = manifest
        .map(Path::to_path_buf)
        .or_else(|| cfg.train_manifest.clone())
        .or_else(|| ckpt.config.valid_manifest.clone())
        .ok_or_else(|| CliError::Usage("pair evaluation needs a manifest for BOS/EOS ids (use --manifest)".into()))?;
    let vocab = CorpusManifest::load(&path)?.vocab;
    check_vocab(cfg, &vocab, &path)?;
    Ok(vocab)
}

// ---------------------------------------------------------------- count-params

#[derive(Debug, Clone, Serialize)]
pub struct ParamRow {
    pub state_size: usize,
    pub counts: ParamCounts,
}

pub fn count_params_rows(base: &RunConfig, sizes: &[usize]) -> Result<Vec<ParamRow>> {
    sizes
        .iter()
        .map(|&n| {
            let mut hp = base.hyperparams();
            hp.state_size = n;
            Ok(ParamRow {
                state_size: n,
                counts: count_params(&hp)?,
            })
        })
        .collect()
}

fn millions(x: u64) -> u64 {
    (x as f64 / 1e6).round() as u64
}

pub fn render_param_table(base: &RunConfig, rows: &[ParamRow]) -> String {
    let mut out = config_echo(base);
    out.push_str("state_size\tfrozen\ttrainable\ttotal\ttrainable_M\ttotal_M\n");
    for r in rows {
        let c = r.counts;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.state_size,
            c.frozen,
            c.trainable,
            c.total,
            millions(c.trainable),
            millions(c.total)
        );
    }
    out
}

// ---------------------------------------------------------------- train

/// Reservoir, head and optimizer for a fresh run.
pub fn init_model(cfg: &RunConfig) -> Result<(Reservoir, OutputHead<f32>, OptimizerState)> {
    let hp = cfg.hyperparams();
    let reservoir = Reservoir::new(hp.clone())?;
    let head = OutputHead::init(&hp, &mut stream_rng(hp.seed, Stream::OutputHead))?;
    let opt = OptimizerState::new(cfg.optimizer(), &head);
    Ok((reservoir, head, opt))
}

/// Initializes and trains one epoch without touching the filesystem.
pub fn train_in_memory(cfg: &RunConfig, corpus: &[TokenSequence], exec: Execution) -> Result<(EsnLm, EpochStats)> {
    let (reservoir, head, opt) = init_model(cfg)?;
    let batches = batch_iterator(corpus, cfg.batch_size, cfg.shuffle_seed())?;
    let mut trainer = Trainer::new(&reservoir, head, opt, exec)?;
    let stats = trainer.train_epoch(batches, |_, _| Ok::<_, CliError>(()))?;
    let (head, _, _) = trainer.into_parts();
    Ok((EsnLm::new(reservoir, head)?.with_execution(exec), stats))
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    pub exec: Execution,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub final_path: PathBuf,
    pub digest: String,
    pub filter: FilterStats,
    pub resumed_from: usize,
}

fn snapshot(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.out_dir = None;
    c
}

pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    let manifest = cfg.require_path("train_manifest", &cfg.train_manifest)?;
    let (corpus, filter) = load_filtered(cfg, manifest, opts.exec)?;
    let batches = batch_iterator(&corpus, cfg.batch_size, cfg.shuffle_seed())?;
    let total = batches.num_batches();

    let (reservoir, head, opt, stats, start) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if snapshot(&ck.config) != snapshot(cfg) {
                return Err(CliError::checkpoint(
                    path,
                    "checkpoint was written for a different configuration",
                ));
            }
            if ck.cursor.total_batches != total {
                return Err(CliError::checkpoint(
                    path,
                    format!(
                        "checkpoint expects {} batches, corpus yields {total}",
                        ck.cursor.total_batches
                    ),
                ));
            }
            (ck.reservoir, ck.head, ck.optimizer, ck.stats, ck.cursor.batches_done)
        }
        None => {
            let (r, h, o) = init_model(cfg)?;
            (r, h, o, EpochStats::default(), 0)
        }
    };

    fs::create_dir_all(&opts.out_dir).map_err(|e| CliError::io(&opts.out_dir, e))?;
    let mut log = MetricsLog::open(&opts.out_dir.join(METRICS_FILE))?;
    log.record(&Event::Config {
        config: &snapshot(cfg).to_toml(),
    })?;

    let started = Instant::now();
    let mut trainer = Trainer::resume(&reservoir, head, opt, stats, opts.exec)?;
    let checkpoint_of = |t: &Trainer| Checkpoint {
        config: snapshot(cfg),
        cursor: Cursor {
            batches_done: t.stats.batches,
            total_batches: total,
        },
        stats: t.stats,
        reservoir: reservoir.clone(),
        head: t.head.clone(),
        optimizer: t.opt.clone(),
    };

    if start < total {
        trainer.train_epoch(batches.skip(start), |t, report| {
            log.record(&Event::Batch {
                batch: report.index,
                tokens: report.loss.predicted_token_count,
                train_nll: report.loss.nll_per_token(),
                running_train_nll: t.stats.train_nll(),
                wall_ms: started.elapsed().as_millis(),
            })?;
            let done = report.index + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < total {
                let path = opts.out_dir.join(format!("ckpt-{done:06}.ckpt"));
                let digest = checkpoint_of(t).save(&path)?;
                log.record(&Event::Checkpoint {
                    batch: done,
                    path: &path.display().to_string(),
                    digest: &digest,
                })?;
            }
            Ok::<_, CliError>(())
        })?;
    }

    let checkpoint = checkpoint_of(&trainer);
    let final_path = opts.out_dir.join(FINAL_CHECKPOINT);
    let digest = checkpoint.save(&final_path)?;
    log.record(&Event::Checkpoint {
        batch: total,
        path: &final_path.display().to_string(),
        digest: &digest,
    })?;
    log.record(&Event::EpochEnd {
        batches: trainer.stats.batches,
        tokens: trainer.stats.tokens,
        train_nll: trainer.stats.train_nll(),
        wall_ms: started.elapsed().as_millis(),
    })?;
    Ok(TrainOutcome {
        checkpoint,
        final_path,
        digest,
        filter,
        resumed_from: start,
    })
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NllReport {
    pub checkpoint_digest: String,
    pub manifest: PathBuf,
    pub sentences: usize,
    pub validation_nll: f64,
}

fn model_of(ck: &Checkpoint, exec: Execution) -> Result<EsnLm> {
    Ok(EsnLm::new(ck.reservoir.clone(), ck.head.clone())?.with_execution(exec))
}

fn write_report(out: Option<&Path>, name: &str, body: &str) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

/// Validation NLL of a checkpoint. Without `manifest` the checkpoint's
/// `valid_manifest` is used.
pub fn eval_nll(ckpt_path: &Path, manifest: Option<&Path>, out: Option<&Path>, exec: Execution) -> Result<NllReport> {
    let ck = Checkpoint::load(ckpt_path)?;
    let manifest = match manifest {
        Some(p) => p.to_path_buf(),
        None => ck
            .config
            .require_path("valid_manifest", &ck.config.valid_manifest)?
            .to_path_buf(),
    };
    let (corpus, _) = load_filtered(&ck.config, &manifest, exec)?;
    let nll = validation_nll(&model_of(&ck, exec)?, &corpus)?;
    let report = NllReport {
        checkpoint_digest: ck.digest(),
        manifest,
        sentences: corpus.len(),
        validation_nll: nll,
    };
    if let Some(dir) = out {
        write_report(
            out,
            "eval_nll.json",
            &serde_json::to_string_pretty(&report).expect("serializes"),
        )?;
        MetricsLog::open(&dir.join(METRICS_FILE))?.record(&Event::Eval {
            validation_nll: Some(nll),
            pair_accuracy: None,
        })?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PairsOptions {
    pub pairs: Option<PathBuf>,
    pub tags: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub scoring: Option<PairScoring>,
}

pub fn render_pair_table(report: &EvalReport) -> String {
    let mut out = String::from("phenomenon\tpairs\tcorrect\taccuracy\n");
    for (name, r) in &report.per_phenomenon {
        let _ = writeln!(out, "{name}\t{}\t{}\t{:.6}", r.pairs, r.correct, r.accuracy);
    }
    let correct: usize = report.per_phenomenon.values().map(|r| r.correct).sum();
    let _ = writeln!(
        out,
        "overall(micro)\t{}\t{correct}\t{:.6}",
        report.pair_count, report.overall_accuracy
    );
    let _ = writeln!(
        out,
        "overall(macro)\t{}\t-\t{:.6}",
        report.pair_count, report.macro_accuracy
    );
    out
}

pub fn eval_pairs(ckpt_path: &Path, opts: &PairsOptions, out: Option<&Path>, exec: Execution) -> Result<EvalReport> {
    let ck = Checkpoint::load(ckpt_path)?;
    let cfg = &ck.config;
    let pairs_path = match &opts.pairs {
        Some(p) => p.clone(),
        None => cfg.require_path("pairs", &cfg.pairs)?.to_path_buf(),
    };
    let tags = opts.tags.clone().or_else(|| cfg.pair_tags.clone());
    let vocab = pair_vocab(cfg, &ck, opts.manifest.as_deref())?;
    let pairs = load_pairs(&pairs_path, tags.as_deref(), vocab)?;
    let scoring = opts.scoring.unwrap_or(cfg.pair_scoring);
    let report = minimal_pair_accuracy(&model_of(&ck, exec)?, &pairs, scoring)?;
    if let Some(dir) = out {
        write_report(out, "pairs.tsv", &render_pair_table(&report))?;
        write_report(
            out,
            "pairs.json",
            &serde_json::to_string_pretty(&report).expect("serializes"),
        )?;
        MetricsLog::open(&dir.join(METRICS_FILE))?.record(&Event::Eval {
            validation_nll: None,
            pair_accuracy: Some(report.overall_accuracy),
        })?;
    }
    Ok(report)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    StateSize,
    Connectivity,
    LeakMin,
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "state_size" => Ok(Axis::StateSize),
            "connectivity" => Ok(Axis::Connectivity),
            "leak_min" => Ok(Axis::LeakMin),
            other => Err(CliError::Usage(format!(
                "unknown axis `{other}` (expected state_size, connectivity or leak_min)"
            ))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::StateSize => "state_size",
            Axis::Connectivity => "connectivity",
            Axis::LeakMin => "leak_min",
        }
    }

    /// Returns `base` with this axis set to `value`, fully validated.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        match self {
            Axis::StateSize => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(CliError::Usage(format!(
                        "state_size value {value} is not a positive integer"
                    )));
                }
                cfg.state_size = value as usize;
            }
            Axis::Connectivity => {
                if !(value > 0.0 && value <= 1.0) {
                    return Err(CliError::Usage(format!("connectivity {value} must lie in (0, 1]")));
                }
                let degree = value * cfg.state_size as f64;
                if (degree - degree.round()).abs() > 1e-9 {
                    return Err(CliError::Usage(format!(
                        "connectivity {value} times state_size {} is not an integer degree",
                        cfg.state_size
                    )));
                }
                cfg.rec_degree = degree.round() as usize;
            }
            Axis::LeakMin => cfg.leak_min = value,
        }
        cfg.validate()
            .map_err(|e| CliError::Usage(format!("{} = {value}: {e}", self.name())))?;
        Ok(cfg)
    }
}

/// Parses a comma-separated list; each item is a number or `base^exp`
/// (e.g. `2^-7`).
pub fn parse_values(list: &str) -> Result<Vec<f64>> {
    let parse_one = |item: &str| -> Option<f64> {
        match item.split_once('^') {
            Some((b, e)) => Some(b.trim().parse::<f64>().ok()?.powf(e.trim().parse::<f64>().ok()?)),
            None => item.parse().ok(),
        }
    };
    let values: Vec<f64> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            parse_one(s)
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("bad value `{s}`")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("--values is empty".into()));
    }
    Ok(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation over `√n`; absent for a single run.
    pub std_err: Option<f64>,
    pub median: f64,
}

pub fn summarize(xs: &[f64]) -> Summary {
    assert!(!xs.is_empty(), "summary of no values");
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std_err = (xs.len() > 1).then(|| {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt() / n.sqrt()
    });
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    Summary { mean, std_err, median }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRun {
    pub value: f64,
    pub seed: u64,
    pub train_nll: f64,
    pub validation_nll: f64,
    pub pair_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub params: ParamCounts,
    pub train_nll: Summary,
    pub validation_nll: Summary,
    pub pair_accuracy: Option<Summary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub axis: Axis,
    pub seeds: usize,
    pub base_config: String,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<SweepRun>,
}

/// Trains and evaluates one model per (value, seed). Run `i` uses seed
/// `base.seed + i` for both the reservoir and the data order.
pub fn sweep(base: &RunConfig, axis: Axis, values: &[f64], seeds: usize, exec: Execution) -> Result<SweepReport> {
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let configs: Vec<RunConfig> = values.iter().map(|&v| axis.apply(base, v)).collect::<Result<_>>()?;

    let train_path = base.require_path("train_manifest", &base.train_manifest)?;
    let valid_path = base.require_path("valid_manifest", &base.valid_manifest)?;
    let (train, _) = load_filtered(base, train_path, exec)?;
    let (valid, _) = load_filtered(base, valid_path, exec)?;
    let pairs: Option<Vec<MinimalPair>> = match &base.pairs {
        Some(p) => {
            let vocab = CorpusManifest::load(train_path)?.vocab;
            Some(load_pairs(p, base.pair_tags.as_deref(), vocab)?)
        }
        None => None,
    };

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (cfg, &value) in configs.iter().zip(values) {
        let mut per_value = Vec::new();
        for i in 0..seeds {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = base.seed + i as u64;
            run_cfg.shuffle_seed = None;
            let (model, stats) = train_in_memory(&run_cfg, &train, exec)?;
            let validation_nll = validation_nll(&model, &valid)?;
            let pair_accuracy = match &pairs {
                Some(p) => Some(minimal_pair_accuracy(&model, p, run_cfg.pair_scoring)?.overall_accuracy),
                None => None,
            };
            per_value.push(SweepRun {
                value,
                seed: run_cfg.seed,
                train_nll: stats.train_nll(),
                validation_nll,
                pair_accuracy,
            });
        }
        let col = |f: fn(&SweepRun) -> f64| summarize(&per_value.iter().map(f).collect::<Vec<_>>());
        rows.push(SweepRow {
            value,
            params: count_params(&cfg.hyperparams())?,
            train_nll: col(|r| r.train_nll),
            validation_nll: col(|r| r.validation_nll),
            pair_accuracy: pairs.as_ref().map(|_| col(|r| r.pair_accuracy.unwrap_or(f64::NAN))),
        });
        runs.extend(per_value);
    }
    Ok(SweepReport {
        axis,
        seeds,
        base_config: base.to_toml(),
        rows,
        runs,
    })
}

fn fmt_summary(s: Option<&Summary>) -> String {
    match s {
        None => "-\t-\t-".into(),
        Some(s) => format!(
            "{:.6}\t{}\t{:.6}",
            s.mean,
            s.std_err.map_or("-".into(), |e| format!("{e:.6}")),
            s.median
        ),
    }
}

pub fn render_sweep_table(report: &SweepReport) -> String {
    let mut out: String = report.base_config.lines().map(|l| format!("# {l}\n")).collect();
    let _ = writeln!(out, "# axis = {}\n# seeds = {}", report.axis.name(), report.seeds);
    out.push_str(
        "value\tfrozen\ttrainable\ttotal\ttrain_nll_mean\ttrain_nll_se\ttrain_nll_median\t\
         valid_nll_mean\tvalid_nll_se\tvalid_nll_median\tpair_acc_mean\tpair_acc_se\tpair_acc_median\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.value,
            r.params.frozen,
            r.params.trainable,
            r.params.total,
            fmt_summary(Some(&r.train_nll)),
            fmt_summary(Some(&r.validation_nll)),
            fmt_summary(r.pair_accuracy.as_ref())
        );
    }
    out
}

pub fn render_sweep_runs(report: &SweepReport) -> String {
    let mut out = String::from("value\tseed\ttrain_nll\tvalid_nll\tpair_acc\n");
    for r in &report.runs {
        let acc = r.pair_accuracy.map_or("-".into(), |a| format!("{a:.6}"));
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{acc}",
            r.value, r.seed, r.train_nll, r.validation_nll
        );
    }
    out
}

pub fn write_sweep(report: &SweepReport, dir: &Path) -> Result<()> {
    write_report(Some(dir), "sweep.tsv", &render_sweep_table(report))?;
    write_report(Some(dir), "sweep_runs.tsv", &render_sweep_runs(report))?;
    write_report(
        Some(dir),
        "sweep.json",
        &serde_json::to_string_pretty(report).expect("serializes"),
    )
}

// ---------------------------------------------------------------- inspect

pub fn inspect(path: &Path) -> Result<String> {
    let ck = Checkpoint::load(path)?;
    let mut out = String::new();
    let r = &ck.reservoir;
    let _ = writeln!(out, "checkpoint      {}", path.display());
    let _ = writeln!(out, "digest          {}", ck.digest());
    let _ = writeln!(out, "format version  {}", crate::checkpoint::FORMAT_VERSION);
    let _ = writeln!(
        out,
        "rng             {} seed {}",
        esn_core::rng::RNG_FAMILY,
        ck.config.seed
    );
    let _ = writeln!(
        out,
        "cursor          {}/{} batches",
        ck.cursor.batches_done, ck.cursor.total_batches
    );
    if ck.stats.batches > 0 {
        let _ = writeln!(out, "train nll       {:.6}", ck.stats.train_nll());
    }
    let _ = writeln!(out, "tokens          {}", ck.stats.tokens);
    let _ = writeln!(out, "optimizer steps {}", ck.optimizer.step_count);
    let _ = writeln!(
        out,
        "spectral radius {:.6} (raw, before scaling)",
        r.measured_spectral_radius()
    );
    let _ = writeln!(
        out,
        "W_in            {}x{} nnz {}",
        r.w_in().rows(),
        r.w_in().cols(),
        r.w_in().nnz()
    );
    let _ = writeln!(
        out,
        "W_rec           {}x{} nnz {}",
        r.w_rec().rows(),
        r.w_rec().cols(),
        r.w_rec().nnz()
    );
    let _ = writeln!(
        out,
        "head            A {}x{}, B {}x{}",
        ck.head.vocab_size(),
        ck.head.rank(),
        ck.head.rank(),
        ck.head.state_size()
    );
    out.push_str(&config_echo(&ck.config));
    Ok(out)
}
