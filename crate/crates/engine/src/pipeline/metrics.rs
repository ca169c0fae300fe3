//! Metrics recomputed from the files of a run directory.
//!
//! Nothing here is a source of truth: deleting `metrics.json` and running
//! [`compute_iteration_metrics`] again gives the same numbers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use evoforge_core::{BatchRecord, CuratedExample};
use serde::{Deserialize, Serialize};

use super::phases::CurationStats;
use super::store::{read_dataset, read_json, read_jsonl, RunLayout, StoreError};
use super::Phase;

pub const HISTOGRAM_BINS: usize = 10;

/// Ten equal bins over [0, 1]; 1.0 lands in the last bin.
pub fn unit_histogram(values: impl IntoIterator<Item = f64>) -> Vec<usize> {
    let mut bins = vec![0; HISTOGRAM_BINS];
    for v in values {
        let bin = ((v.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) + 1e-9).floor() as usize;
        bins[bin.min(HISTOGRAM_BINS - 1)] += 1;
    }
    bins
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub phase: Phase,
    pub step: u32,
    pub records: usize,
    pub groups: usize,
    /// Groups whose rewards were all equal (zero advantages).
    pub degenerate_groups: usize,
    pub mean_total: Option<f64>,
    pub format_rate: Option<f64>,
    pub mean_difficulty: Option<f64>,
    pub mean_diversity_penalty: Option<f64>,
    pub mean_temporal_aware: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub mean_iou: Option<f64>,
}

pub fn step_metrics(phase: Phase, step: u32, records: &[BatchRecord]) -> StepMetrics {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.group_id).or_default().push(r.reward_total);
    }
    let degenerate_groups = groups
        .values()
        .filter(|totals| totals.iter().all(|&t| t == totals[0]))
        .count();
    let components = || records.iter().map(|r| &r.reward_components);
    let questioner = phase == Phase::Questioner;
    let valid_questions = || components().filter(|c| c.format_gate == 1);
    StepMetrics {
        phase,
        step,
        records: records.len(),
        groups: groups.len(),
        degenerate_groups,
        mean_total: mean(records.iter().map(|r| r.reward_total)),
        format_rate: mean(components().map(|c| f64::from(c.format_gate))),
        mean_difficulty: if questioner { mean(valid_questions().map(|c| c.difficulty)) } else { None },
        mean_diversity_penalty: if questioner {
            mean(valid_questions().map(|c| c.diversity_penalty))
        } else {
            None
        },
        mean_temporal_aware: if questioner { mean(valid_questions().map(|c| c.temporal_aware)) } else { None },
        mean_accuracy: if questioner { None } else { mean(components().map(|c| f64::from(c.accuracy))) },
        mean_iou: if questioner { None } else { mean(components().map(|c| c.iou)) },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u32,
    pub questioner_steps: Vec<StepMetrics>,
    pub solver_steps: Vec<StepMetrics>,
    pub curation: CurationStats,
    pub curation_yield: Option<f64>,
    pub confidence_histogram: Vec<usize>,
    /// Cluster size of each valid question, counted per question.
    pub cluster_size_histogram: BTreeMap<usize, usize>,
    pub iou_histogram: Vec<usize>,
}

pub fn compute_iteration_metrics(
    layout: &RunLayout,
    iteration: u32,
    steps: u32,
) -> Result<IterationMetrics, StoreError> {
    let mut questioner_steps = Vec::new();
    let mut cluster_size_histogram = BTreeMap::new();
    for step in 1..=steps {
        let records: Vec<BatchRecord> = read_jsonl(&layout.questioner_batch(iteration, step))?;
        for r in &records {
            if let Some(size) = r.reward_components.cluster_size {
                *cluster_size_histogram.entry(size).or_insert(0) += 1;
            }
        }
        questioner_steps.push(step_metrics(Phase::Questioner, step, &records));
    }
    let mut solver_steps = Vec::new();
    let mut ious = Vec::new();
    for step in 1..=steps {
        let records: Vec<BatchRecord> = read_jsonl(&layout.solver_batch(iteration, step))?;
        ious.extend(records.iter().map(|r| r.reward_components.iou));
        solver_steps.push(step_metrics(Phase::Solver, step, &records));
    }
    let dataset: Vec<CuratedExample> = read_dataset(&layout.curated(iteration))?;
    let curation: CurationStats = read_json(&layout.curation_stats(iteration))?;
    Ok(IterationMetrics {
        iteration,
        questioner_steps,
        solver_steps,
        curation_yield: curation.yield_rate(),
        curation,
        confidence_histogram: unit_histogram(dataset.iter().map(|e| e.confidence)),
        cluster_size_histogram,
        iou_histogram: unit_histogram(ious),
    })
}

#[derive(Serialize)]
struct StepRow {
    iteration: u32,
    phase: Phase,
    step: u32,
    records: usize,
    groups: usize,
    degenerate_groups: usize,
    mean_total: Option<f64>,
    format_rate: Option<f64>,
    mean_difficulty: Option<f64>,
    mean_diversity_penalty: Option<f64>,
    mean_temporal_aware: Option<f64>,
    mean_accuracy: Option<f64>,
    mean_iou: Option<f64>,
}

impl StepRow {
    fn new(iteration: u32, m: &StepMetrics) -> Self {
        Self {
            iteration,
            phase: m.phase,
            step: m.step,
            records: m.records,
            groups: m.groups,
            degenerate_groups: m.degenerate_groups,
            mean_total: m.mean_total,
            format_rate: m.format_rate,
            mean_difficulty: m.mean_difficulty,
            mean_diversity_penalty: m.mean_diversity_penalty,
            mean_temporal_aware: m.mean_temporal_aware,
            mean_accuracy: m.mean_accuracy,
            mean_iou: m.mean_iou,
        }
    }
}

#[derive(Serialize)]
struct CurationRow {
    iteration: u32,
    videos: usize,
    skipped_short: usize,
    format_rejected: usize,
    no_valid_answers: usize,
    out_of_band: usize,
    kept: usize,
    curation_yield: Option<f64>,
}

#[derive(Serialize)]
struct HistogramRow {
    iteration: u32,
    metric: &'static str,
    bin_low: f64,
    bin_high: f64,
    count: usize,
}

fn csv_error(path: &Path, e: csv::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

/// Writes `steps.csv`, `curation.csv` and `histograms.csv` into `out`.
pub fn write_report(iterations: &[IterationMetrics], out: &Path) -> Result<Vec<PathBuf>, StoreError> {
    std::fs::create_dir_all(out).map_err(|e| StoreError::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let steps_path = out.join("steps.csv");
    let mut steps = csv::Writer::from_path(&steps_path).map_err(|e| csv_error(&steps_path, e))?;
    let curation_path = out.join("curation.csv");
    let mut curation = csv::Writer::from_path(&curation_path).map_err(|e| csv_error(&curation_path, e))?;
    let hist_path = out.join("histograms.csv");
    let mut hist = csv::Writer::from_path(&hist_path).map_err(|e| csv_error(&hist_path, e))?;
    for m in iterations {
        for step in m.questioner_steps.iter().chain(&m.solver_steps) {
            steps
                .serialize(StepRow::new(m.iteration, step))
                .map_err(|e| csv_error(&steps_path, e))?;
        }
        curation
            .serialize(CurationRow {
                iteration: m.iteration,
                videos: m.curation.videos,
                skipped_short: m.curation.skipped_short,
                format_rejected: m.curation.format_rejected,
                no_valid_answers: m.curation.no_valid_answers,
                out_of_band: m.curation.out_of_band,
                kept: m.curation.kept,
                curation_yield: m.curation_yield,
            })
            .map_err(|e| csv_error(&curation_path, e))?;
        let unit_bins = [("confidence", &m.confidence_histogram), ("iou", &m.iou_histogram)];
        for (metric, bins) in unit_bins {
            for (i, &count) in bins.iter().enumerate() {
                hist.serialize(HistogramRow {
                    iteration: m.iteration,
                    metric,
                    bin_low: i as f64 / HISTOGRAM_BINS as f64,
                    bin_high: (i + 1) as f64 / HISTOGRAM_BINS as f64,
                    count,
                })
                .map_err(|e| csv_error(&hist_path, e))?;
            }
        }
        for (&size, &count) in &m.cluster_size_histogram {
            hist.serialize(HistogramRow {
                iteration: m.iteration,
                metric: "cluster_size",
                bin_low: size as f64,
                bin_high: size as f64,
                count,
            })
            .map_err(|e| csv_error(&hist_path, e))?;
        }
    }
    for (path, writer) in [(&steps_path, &mut steps), (&curation_path, &mut curation), (&hist_path, &mut hist)] {
        writer.flush().map_err(|e| StoreError::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    Ok(vec![steps_path, curation_path, hist_path])
}
