//! Single runs, seed grids, and their persisted records.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adfl_core::eval::{cross_domain_evaluate, EvalConfig, EvalReport};
use adfl_core::label::VariantLabel;
use adfl_core::model::Model;
use adfl_core::train::{train, EpochLog};
use adfl_core::{Error as CoreError, Mode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::config::{hex, ExperimentConfig};
use crate::dataset::{read_manifest, write_dataset, DomainData, MANIFEST};
use crate::error::{BenchError, Result};
use crate::synth::generate;

pub const RESULTS_FILE: &str = "results.csv";
pub const RESULTS_HEADER: &str = "run_id,label,src_rank1,src_map,tgt_rank1,tgt_map,seed";
pub const RECORD_FILE: &str = "record.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";

/// Source and target data shared by every run of a grid.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub source: DomainData,
    pub target: DomainData,
}

impl Benchmark {
    /// Loads `data_dir` when configured (rendering it first if it has no
    /// manifest), otherwise renders both domains in memory.
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let (source, target) = match &cfg.data_dir {
            Some(dir) => {
                if !dir.join(MANIFEST).exists() {
                    write_dataset(dir, &[cfg.source.clone(), cfg.target.clone()])?;
                }
                let rows = read_manifest(dir)?;
                (DomainData::load(dir, &rows, &cfg.source.domain)?, DomainData::load(dir, &rows, &cfg.target.domain)?)
            }
            None => {
                let s = generate(&cfg.source).map_err(BenchError::Config)?;
                let t = generate(&cfg.target).map_err(BenchError::Config)?;
                (DomainData::from_samples(&cfg.source.domain, &s)?, DomainData::from_samples(&cfg.target.domain, &t)?)
            }
        };
        if source.train.images.is_empty() {
            return Err(BenchError::Data(format!("domain {} has no training images", source.domain)));
        }
        if source.test.is_none() || target.test.is_none() {
            return Err(BenchError::Data("both domains need query and gallery images".into()));
        }
        Ok(Self { source, target })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
    pub cmc: Vec<f64>,
    pub per_query_ap: Vec<f64>,
}

impl From<&EvalReport> for ReportJson {
    fn from(r: &EvalReport) -> Self {
        Self {
            rank1: r.rank(1),
            rank5: r.rank(5),
            rank10: r.rank(10),
            map: r.map,
            cmc: r.cmc.clone(),
            per_query_ap: r.per_query_ap.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub label: String,
    pub status: RunStatus,
    pub diagnostic: Option<String>,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    /// Canonical configuration text; re-parsing it reproduces the run.
    pub config: String,
    pub log_path: PathBuf,
    pub checkpoint_path: Option<PathBuf>,
    pub source: Option<ReportJson>,
    pub target: Option<ReportJson>,
    /// Scores under the other test-time extraction mode; present only for
    /// batch-dependent variants.
    #[serde(default)]
    pub other_extraction: Option<OtherExtraction>,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtherExtraction {
    pub batched: bool,
    pub source: ReportJson,
    pub target: ReportJson,
}

/// Hash identifying the code version that produced a record. Both crates
/// share the workspace version; `ADFL_CODE_VERSION` at build time (e.g. a
/// commit id) refines it.
pub fn code_version() -> String {
    let text = format!("{} {}", env!("CARGO_PKG_VERSION"), option_env!("ADFL_CODE_VERSION").unwrap_or(""));
    hex(&Sha256::digest(text.as_bytes()))[..16].to_string()
}

/// Seeds for initialisation, sampling and augmentation derived from one run seed.
pub fn apply_seed(cfg: &ExperimentConfig, seed: u64) -> adfl_core::train::TrainConfig {
    let mut recipe = cfg.recipe.clone();
    recipe.sampler.seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5151;
    recipe.seed = seed.wrapping_mul(0xbf58_476d_1ce4_e5b9) ^ 0xa0a0;
    recipe
}

/// Result of training and scoring one model, before anything is written.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub model: Model,
    pub logs: Vec<EpochLog>,
    pub source: EvalReport,
    pub target: EvalReport,
    /// Both splits scored with the opposite `batched` setting, for batch-dependent models.
    pub other: Option<(EvalReport, EvalReport)>,
}

/// Trains on the source training split and scores on both test splits.
pub fn execute(
    cfg: &ExperimentConfig,
    seed: u64,
    bench: &Benchmark,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<RunOutcome> {
    let mut model = Model::build(&cfg.model_for(bench.source.num_train_identities()), seed)?;
    let logs = train(&mut model, &bench.source.train, &apply_seed(cfg, seed), on_epoch)?;
    model.set_mode(Mode::Eval);
    let source_split = bench.source.test.as_ref().expect("checked in prepare");
    let target_split = bench.target.test.as_ref().expect("checked in prepare");
    let (source, target) = cross_domain_evaluate(&model, source_split, target_split, cfg.eval)?;
    let other = if model.is_batch_dependent() {
        let flipped = EvalConfig { batched: !cfg.eval.batched, ..cfg.eval };
        Some(cross_domain_evaluate(&model, source_split, target_split, flipped)?)
    } else {
        None
    };
    Ok(RunOutcome { model, logs, source, target, other })
}

pub fn run_id(label: &VariantLabel, seed: u64, config_hash: &str) -> String {
    format!("{label}-s{seed}-{}", &config_hash[..8])
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

/// Trains, evaluates and persists one run under `cfg.output_dir/<run_id>/`,
/// appending a row to `cfg.output_dir/results.csv`.
///
/// A diverged run still writes its record (status `diverged`) before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, bench: &Benchmark) -> Result<RunRecord> {
    let started = Instant::now();
    let hash = cfg.hash();
    let id = run_id(&cfg.label, seed, &hash);
    let dir = cfg.output_dir.join(&id);
    fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
    let log_path = dir.join(LOG_FILE);
    let mut log = fs::File::create(&log_path).map_err(|e| BenchError::io(&log_path, e))?;
    let mut log_err = None;
    let outcome = execute(cfg, seed, bench, |e| {
        let line = serde_json::json!({
            "epoch": e.epoch,
            "lr": e.lr,
            "softmax_loss": e.softmax_loss,
            "triplet_loss": e.triplet_loss,
            "train_acc": e.train_acc,
        });
        if let Err(err) = writeln!(log, "{line}") {
            log_err.get_or_insert(err);
        }
    });
    if let Some(err) = log_err {
        return Err(BenchError::io(&log_path, err));
    }
    let mut record = RunRecord {
        run_id: id.clone(),
        label: cfg.label.to_string(),
        status: RunStatus::Ok,
        diagnostic: None,
        config_hash: hash,
        code_version: code_version(),
        seed,
        config: cfg.to_text(),
        log_path,
        checkpoint_path: None,
        source: None,
        target: None,
        other_extraction: None,
        wall_clock_secs: 0.0,
    };
    let result = match outcome {
        Ok(out) => {
            checkpoint::save(&dir, &out.model, Some(&record.config))?;
            record.checkpoint_path = Some(dir.clone());
            record.source = Some((&out.source).into());
            record.target = Some((&out.target).into());
            record.other_extraction = out.other.as_ref().map(|(s, t)| OtherExtraction {
                batched: !cfg.eval.batched,
                source: s.into(),
                target: t.into(),
            });
            Ok(())
        }
        Err(BenchError::Core(e @ CoreError::Divergence { .. })) => {
            record.status = RunStatus::Diverged;
            record.diagnostic = Some(e.to_string());
            Err(BenchError::Core(e))
        }
        Err(e) => return Err(e),
    };
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    let rec_path = dir.join(RECORD_FILE);
    let json = serde_json::to_string_pretty(&record).map_err(|e| BenchError::format(&rec_path, e))?;
    write_text(&rec_path, &json)?;
    if record.status == RunStatus::Ok {
        write_text(&dir.join(METRICS_FILE), &metrics_rows(&record))?;
        append_result(&cfg.output_dir.join(RESULTS_FILE), &record)?;
    }
    result.map(|_| record)
}

/// Per-domain-pair rows: run id, label, domain pair, rank-1/5/10 and mAP.
pub fn metrics_rows(r: &RunRecord) -> String {
    let mut s = String::from("run_id,label,domain_pair,rank1,rank5,rank10,map\n");
    let mut rows =
        vec![("source->source".to_string(), r.source.as_ref()), ("source->target".to_string(), r.target.as_ref())];
    if let Some(o) = &r.other_extraction {
        let mode = if o.batched { "batched" } else { "per-image" };
        rows.push((format!("source->source {mode}"), Some(&o.source)));
        rows.push((format!("source->target {mode}"), Some(&o.target)));
    }
    for (pair, rep) in rows {
        if let Some(rep) = rep {
            s += &format!(
                "{},{},{pair},{:.4},{:.4},{:.4},{:.4}\n",
                r.run_id, r.label, rep.rank1, rep.rank5, rep.rank10, rep.map
            );
        }
    }
    s
}

/// One results line in the fixed column layout.
pub fn result_row(r: &RunRecord) -> Option<String> {
    let (s, t) = (r.source.as_ref()?, r.target.as_ref()?);
    Some(format!("{},{},{:.4},{:.4},{:.4},{:.4},{}", r.run_id, r.label, s.rank1, s.map, t.rank1, t.map, r.seed))
}

/// Appends a row, writing the header first when the file is new. Each row is
/// written with a single call.
pub fn append_result(path: &Path, r: &RunRecord) -> Result<()> {
    let Some(row) = result_row(r) else { return Ok(()) };
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| BenchError::io(path, e))?;
    let text = if fresh { format!("{RESULTS_HEADER}\n{row}\n") } else { format!("{row}\n") };
    f.write_all(text.as_bytes()).map_err(|e| BenchError::io(path, e))
}

pub fn read_record(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| BenchError::format(path, e))
}

/// Runs every `(label, seed)` pair in order. Diverged runs are kept with their
/// diagnostic; other errors stop the grid.
pub fn run_grid(base: &ExperimentConfig, labels: &[VariantLabel], seeds: &[u64]) -> Result<Vec<RunRecord>> {
    let bench = Benchmark::prepare(base)?;
    let mut out = Vec::new();
    for label in labels {
        let cfg = base.with_label(*label);
        for &seed in seeds {
            match run_experiment(&cfg, seed, &bench) {
                Ok(r) => out.push(r),
                Err(BenchError::Core(CoreError::Divergence { .. })) => {
                    let id = run_id(label, seed, &cfg.hash());
                    out.push(read_record(&cfg.output_dir.join(id).join(RECORD_FILE))?);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Re-executes a stored record's configuration and seed and returns the fresh
/// scores alongside whether they equal the stored ones bit for bit.
pub fn reproduce(record: &RunRecord) -> Result<(ReportJson, ReportJson, bool)> {
    let cfg = ExperimentConfig::parse(&record.config)?;
    let bench = Benchmark::prepare(&cfg)?;
    let out = execute(&cfg, record.seed, &bench, |_| {})?;
    let (s, t): (ReportJson, ReportJson) = ((&out.source).into(), (&out.target).into());
    let other = out.other.as_ref().map(|(a, b)| (ReportJson::from(a), ReportJson::from(b)));
    let stored_other = record.other_extraction.as_ref().map(|o| (o.source.clone(), o.target.clone()));
    let same = record.source.as_ref() == Some(&s) && record.target.as_ref() == Some(&t) && other == stored_other;
    Ok((s, t, same))
}
