//! `adfl` command line: dataset generation, single runs, seed grids and reports.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 usage, 3 configuration,
//! 4 data, 5 training divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adfl_bench::config::{DataSpecFile, ExperimentConfig};
use adfl_bench::dataset::{read_manifest, write_dataset, DomainData};
use adfl_bench::runner::{run_experiment, run_grid, Benchmark, ReportJson, RunRecord, RunStatus};
use adfl_bench::{checkpoint, report, BenchError, Result};
use adfl_core::eval::{evaluate_split, EvalConfig};
use adfl_core::label::VariantLabel;
use adfl_core::Mode;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adfl", version, about = "Cross-domain person re-identification experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a two-domain dataset and its manifest.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides `out_dir` from the spec.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate one variant.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        label: Option<VariantLabel>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Score a stored checkpoint on every test split of a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train every label under every seed.
    Grid {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated variant labels.
        #[arg(long, value_delimiter = ',', required = true)]
        labels: Vec<VariantLabel>,
        /// Number of seeds, counted up from `--first-seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        first_seed: u64,
    },
    /// Summarise a finished run directory as a markdown table and CMC series.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// Where to write the CMC series; defaults to `<runs>/cmc.csv`.
        #[arg(long)]
        cmc: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn scores(name: &str, r: &ReportJson) -> String {
    format!("{name}: rank1 {:.4} rank5 {:.4} rank10 {:.4} mAP {:.4}", r.rank1, r.rank5, r.rank10, r.map)
}

fn print_record(r: &RunRecord) {
    match r.status {
        RunStatus::Ok => {
            println!("{}", r.run_id);
            for (name, rep) in [("  source->source", &r.source), ("  source->target", &r.target)] {
                if let Some(rep) = rep {
                    println!("{}", scores(name, rep));
                }
            }
        }
        RunStatus::Diverged => {
            println!("{} diverged: {}", r.run_id, r.diagnostic.as_deref().unwrap_or("unknown"));
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| BenchError::io(&spec, e))?;
            let mut spec = DataSpecFile::parse(&text)?;
            if let Some(out) = out {
                spec.out_dir = out;
            }
            let rows = write_dataset(&spec.out_dir, &[spec.source, spec.target])?;
            println!("wrote {} images to {}", rows.len(), spec.out_dir.display());
        }
        Command::Train { run, label, seed } => {
            let mut cfg = run.load()?;
            if let Some(label) = label {
                cfg = cfg.with_label(label);
            }
            let bench = Benchmark::prepare(&cfg)?;
            print_record(&run_experiment(&cfg, seed, &bench)?);
        }
        Command::Eval { checkpoint, data } => {
            let (mut model, manifest) = checkpoint::load(&checkpoint)?;
            model.set_mode(Mode::Eval);
            let eval_cfg = match manifest.config.as_deref().map(ExperimentConfig::parse) {
                Some(Ok(cfg)) => cfg.eval,
                _ => EvalConfig::default(),
            };
            let rows = read_manifest(&data)?;
            let mut domains: Vec<&str> = Vec::new();
            for r in &rows {
                if !domains.contains(&r.domain.as_str()) {
                    domains.push(&r.domain);
                }
            }
            for domain in domains {
                if let Some(split) = DomainData::load(&data, &rows, domain)?.test {
                    let rep = evaluate_split(&model, &split, eval_cfg)?;
                    println!("{}", scores(domain, &(&rep).into()));
                }
            }
        }
        Command::Grid { run, labels, seeds, first_seed } => {
            let cfg = run.load()?;
            let seeds: Vec<u64> = (first_seed..first_seed + seeds).collect();
            let records = run_grid(&cfg, &labels, &seeds)?;
            records.iter().for_each(print_record);
            let diverged: Vec<String> =
                records.iter().filter(|r| r.status == RunStatus::Diverged).map(|r| r.run_id.clone()).collect();
            if !diverged.is_empty() {
                return Err(BenchError::Diverged(diverged));
            }
        }
        Command::Report { runs, cmc } => {
            let (table, series) = report::report(&runs)?;
            let cmc = cmc.unwrap_or_else(|| runs.join("cmc.csv"));
            write(&runs.join("report.md"), &table)?;
            write(&cmc, &series)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
