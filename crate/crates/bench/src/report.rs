//! Tables and plot series assembled from stored results.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{BenchError, Result};
use crate::runner::{read_record, RunRecord, RunStatus, RECORD_FILE, RESULTS_FILE};

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub label: String,
    pub src_rank1: f64,
    pub src_map: f64,
    pub tgt_rank1: f64,
    pub tgt_map: f64,
    pub seed: u64,
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| BenchError::format(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| BenchError::format(path, e))).collect()
}

/// Mean scores of one label over its seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSummary {
    pub label: String,
    pub runs: usize,
    pub src_rank1: f64,
    pub src_map: f64,
    pub tgt_rank1: f64,
    pub tgt_map: f64,
}

/// Groups rows by label in order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<LabelSummary> {
    let mut out: Vec<(LabelSummary, [f64; 4])> = Vec::new();
    for r in rows {
        let idx = match out.iter().position(|(s, _)| s.label == r.label) {
            Some(i) => i,
            None => {
                let empty = LabelSummary {
                    label: r.label.clone(),
                    runs: 0,
                    src_rank1: 0.0,
                    src_map: 0.0,
                    tgt_rank1: 0.0,
                    tgt_map: 0.0,
                };
                out.push((empty, [0.0; 4]));
                out.len() - 1
            }
        };
        let (s, acc) = &mut out[idx];
        s.runs += 1;
        for (a, v) in acc.iter_mut().zip([r.src_rank1, r.src_map, r.tgt_rank1, r.tgt_map]) {
            *a += v;
        }
    }
    out.into_iter()
        .map(|(mut s, acc)| {
            let n = s.runs as f64;
            [s.src_rank1, s.src_map, s.tgt_rank1, s.tgt_map] = acc.map(|v| v / n);
            s
        })
        .collect()
}

/// Markdown table: one row per label, rank-1 and mAP for each domain pair.
pub fn markdown_table(summaries: &[LabelSummary]) -> String {
    let mut s = String::from(
        "| Label | Source→Source Rank-1 | Source→Source mAP | Source→Target Rank-1 | Source→Target mAP | Runs |\n\
         |---|---|---|---|---|---|\n",
    );
    for r in summaries {
        s += &format!(
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {} |\n",
            r.label, r.src_rank1, r.src_map, r.tgt_rank1, r.tgt_map, r.runs
        );
    }
    s
}

/// Completed run records found one level below `dir`, sorted by run id.
pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| BenchError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| BenchError::io(dir, e))?.path().join(RECORD_FILE);
        if path.is_file() {
            let r = read_record(&path)?;
            if r.status == RunStatus::Ok {
                out.push(r);
            }
        }
    }
    out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(out)
}

/// Long-format CSV `label,domain_pair,rank,cmc` with the CMC curve averaged over seeds.
pub fn cmc_series(records: &[RunRecord]) -> String {
    let mut s = String::from("label,domain_pair,rank,cmc\n");
    let mut labels: Vec<&str> = Vec::new();
    for r in records {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    for label in labels {
        let mine: Vec<&RunRecord> = records.iter().filter(|r| r.label == label).collect();
        for (pair, pick) in [
            ("source->source", (|r: &RunRecord| r.source.clone()) as fn(&RunRecord) -> _),
            ("source->target", |r: &RunRecord| r.target.clone()),
        ] {
            let curves: Vec<Vec<f64>> = mine.iter().filter_map(|r| pick(r)).map(|rep| rep.cmc).collect();
            let Some(len) = curves.iter().map(Vec::len).min() else { continue };
            for k in 0..len {
                let mean = curves.iter().map(|c| c[k]).sum::<f64>() / curves.len() as f64;
                s += &format!("{label},{pair},{},{mean:.4}\n", k + 1);
            }
        }
    }
    s
}

/// Builds the table from `dir/results.csv` and the CMC series from the run records.
pub fn report(dir: &Path) -> Result<(String, String)> {
    let rows = read_results(&dir.join(RESULTS_FILE))?;
    if rows.is_empty() {
        return Err(BenchError::Data(format!("{} has no result rows", dir.join(RESULTS_FILE).display())));
    }
    let records = read_records(dir)?;
    let mut table = markdown_table(&summarize(&rows));
    let mut flagged: Vec<&str> =
        records.iter().filter(|r| r.other_extraction.is_some()).map(|r| r.label.as_str()).collect();
    flagged.dedup();
    if !flagged.is_empty() {
        table += &format!(
            "\nBatch-composition-dependent at test time: {}. Scores under the other extraction mode are in each run's metrics.csv.\n",
            flagged.join(", ")
        );
    }
    Ok((table, cmc_series(&records)))
}
