//! Experiment runner: feeds a task stream to a learner exactly once, collects
//! the accuracy matrix and resource ledger, and writes deterministic outputs.
//!
//! A run directory receives four files:
//! * `results.csv`: one row per task (accuracies, parameters added, flops),
//! * `summary.json`: stream-level metrics and the chosen paths,
//! * `checkpoint.bin`: the learner's final state,
//! * `config.json`: echo of the configuration that produced the run.
//!
//! Transfer is measured against an isolated reference: a fresh learner trained
//! on the last task alone with the same seed.  For the `independent` learner
//! the in-stream run *is* that reference, so its transfer is exactly zero and
//! no extra training happens.  When the regularized learner runs without an
//! explicit penalty strength, the whole stream is repeated once per value of
//! [`LAMBDA_GRID`](crate::config::LAMBDA_GRID) and only the winner is reported.

use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ResolvedConfig, LAMBDA_GRID};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::graph::ArchShape;
use crate::learners::{build_learner, ContinualLearner, LearnerKind, LearnerSettings};
use crate::metrics::{avg_accuracy, forgetting, lca_mean, transfer, AccuracyMatrix};
use crate::seed::child_seed;
use crate::streams::{
    build_stream_with_ways, generate_dataset, load_stream_dir, Stream, INPUT_DIM,
};

/// Where task data comes from: synthesized on demand, or preloaded from a
/// directory written by `gen-stream`.  Synthesis is deterministic, so tasks
/// are regenerated for end-of-stream evaluation instead of being kept alive.
#[derive(Debug)]
pub enum StreamSource {
    Generated(Stream),
    Loaded(Stream, Vec<LabeledDataset>),
}

impl StreamSource {
    /// Build the source a resolved configuration asks for.  A stream
    /// directory, when given, must agree with the configured kind/scale/seed.
    pub fn open(resolved: &ResolvedConfig) -> Result<StreamSource> {
        match &resolved.stream_dir {
            None => {
                let stream = build_stream_with_ways(
                    resolved.kind,
                    resolved.scale,
                    resolved.stream_seed,
                    resolved.ways,
                )?;
                Ok(StreamSource::Generated(stream))
            }
            Some(dir) => {
                let (stream, datasets) = load_stream_dir(dir)?;
                if stream.kind != resolved.kind
                    || stream.scale != resolved.scale
                    || stream.seed != resolved.stream_seed
                {
                    return Err(Error::Invalid(format!(
                        "stream directory {} holds {}/{:?}/seed {}, configuration asks for {}/{:?}/seed {}",
                        dir.display(),
                        stream.kind.token(),
                        stream.scale,
                        stream.seed,
                        resolved.kind.token(),
                        resolved.scale,
                        resolved.stream_seed,
                    )));
                }
                Ok(StreamSource::Loaded(stream, datasets))
            }
        }
    }

    pub fn stream(&self) -> &Stream {
        match self {
            StreamSource::Generated(s) => s,
            StreamSource::Loaded(s, _) => s,
        }
    }

    pub fn task_count(&self) -> usize {
        self.stream().tasks.len()
    }

    pub fn input_dim(&self) -> usize {
        match self {
            StreamSource::Generated(_) => INPUT_DIM,
            StreamSource::Loaded(_, datasets) => {
                datasets.first().map_or(INPUT_DIM, |d| d.train.inputs.cols())
            }
        }
    }

    /// Task `t`'s dataset.  Generated sources rebuild it from the seed, so
    /// calling twice yields identical data.
    pub fn dataset(&self, t: usize) -> Result<LabeledDataset> {
        let stream = self.stream();
        let spec = stream.tasks.get(t).ok_or_else(|| {
            Error::Invalid(format!("task {t} outside stream of {}", stream.tasks.len()))
        })?;
        match self {
            StreamSource::Generated(s) => Ok(generate_dataset(spec, s.seed)),
            StreamSource::Loaded(_, datasets) => Ok(datasets[t].clone()),
        }
    }
}

/// Per-task row of `results.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    /// Test accuracy right after the task was learned.
    pub just_learned: f64,
    /// Test accuracy once the whole stream is done.
    pub at_end: f64,
    /// Validation accuracy of the selected model at learning time.
    pub val_accuracy: f64,
    pub params_added: usize,
    pub flops_used: u64,
    /// Slot index per layer of the path serving this task.
    pub chosen_path: Vec<usize>,
}

/// Stream-level metrics written to `summary.json`.  Field order is the file's
/// line order; keep it stable so repeated runs are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub learner: String,
    pub stream: String,
    pub scale: String,
    pub stream_seed: u64,
    pub seed: u64,
    pub tasks: usize,
    pub avg_accuracy: f64,
    pub forgetting: f64,
    /// Absent for streams whose final task has no isolated reference.
    pub transfer: Option<f64>,
    /// Test accuracy of the isolated reference on the last task.
    pub isolated_accuracy: Option<f64>,
    pub lca: f64,
    pub parameter_bytes: u64,
    pub auxiliary_bytes: u64,
    pub total_bytes: u64,
    pub flops: u64,
    /// Penalty strength actually used (regularized learner only).
    pub lambda: Option<f64>,
    /// Slot index per layer, one row per task, in stream order.
    pub chosen_paths: Vec<Vec<usize>>,
}

/// Everything one traversal of the stream produced.
pub struct StreamRun {
    pub records: Vec<TaskRecord>,
    pub matrix: AccuracyMatrix,
    pub curves: Vec<Vec<f64>>,
    /// Mean end-of-stream *validation* accuracy; drives penalty selection.
    pub mean_val_at_end: f64,
    pub learner: Box<dyn ContinualLearner>,
}

fn make_learner(
    resolved: &ResolvedConfig,
    input_dim: usize,
    lambda: Option<f64>,
) -> Result<Box<dyn ContinualLearner>> {
    let shape = ArchShape {
        input_dim,
        hidden_dim: resolved.hidden_dim,
        depth: resolved.depth,
    };
    let mut settings: LearnerSettings = resolved.settings.clone();
    if let Some(l) = lambda {
        settings.lambda = l;
    }
    build_learner(resolved.learner, shape, &settings)
}

/// Traverse the stream once, in order, each task exactly once.  The access
/// log double-checks that no task is ever revisited.
pub fn run_stream(
    resolved: &ResolvedConfig,
    source: &StreamSource,
    lambda: Option<f64>,
) -> Result<StreamRun> {
    let tasks = source.task_count();
    let mut learner = make_learner(resolved, source.input_dim(), lambda)?;

    let mut access_log: Vec<usize> = Vec::with_capacity(tasks);
    let mut records = Vec::with_capacity(tasks);
    let mut curves = Vec::with_capacity(tasks);

    for t in 0..tasks {
        if access_log.contains(&t) {
            return Err(Error::Protocol(format!("task {t} visited twice")));
        }
        access_log.push(t);

        let data = source.dataset(t)?;
        let outcome = learner.learn_task(t, &data, child_seed(resolved.seed, &[t as u64]))?;
        curves.push(outcome.learning_curve.iter().map(|&(_, a)| a).collect());
        records.push(TaskRecord {
            task: t,
            just_learned: outcome.test_accuracy,
            at_end: 0.0,
            val_accuracy: outcome.val_accuracy,
            params_added: outcome.params_added,
            flops_used: outcome.flops_used,
            chosen_path: outcome.chosen_path.modules.iter().map(|m| m.slot).collect(),
        });
    }

    let mut seen = access_log.clone();
    seen.sort_unstable();
    seen.dedup();
    if access_log.len() != tasks || seen.len() != tasks {
        return Err(Error::Protocol(format!(
            "stream of {tasks} tasks was traversed as {access_log:?}"
        )));
    }

    learner.verify_frozen()?;

    let mut val_sum = 0.0;
    for t in 0..tasks {
        let data = source.dataset(t)?;
        records[t].at_end = learner.evaluate(t, &data.test)?;
        val_sum += learner.evaluate(t, &data.val)?;
    }

    let matrix = AccuracyMatrix {
        just_learned: records.iter().map(|r| r.just_learned).collect(),
        at_end: records.iter().map(|r| r.at_end).collect(),
    };

    Ok(StreamRun {
        records,
        matrix,
        curves,
        mean_val_at_end: val_sum / tasks as f64,
        learner,
    })
}

/// Train a fresh learner on the last task alone, same task id and seed as the
/// in-stream run, and return its test accuracy.  This is the reference point
/// for the transfer metric.
fn isolated_reference(resolved: &ResolvedConfig, source: &StreamSource) -> Result<f64> {
    let last = source.task_count() - 1;
    let data = source.dataset(last)?;
    let mut learner = make_learner(resolved, source.input_dim(), None)?;
    let outcome = learner.learn_task(last, &data, child_seed(resolved.seed, &[last as u64]))?;
    Ok(outcome.test_accuracy)
}

/// Artifacts of a finished run.
pub struct RunReport {
    pub out_dir: PathBuf,
    pub summary: RunSummary,
    pub records: Vec<TaskRecord>,
}

/// Execute a configuration end to end and write the run directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let resolved = cfg.resolve()?;
    let source = StreamSource::open(&resolved)?;
    if source.task_count() < 2 {
        return Err(Error::Invalid(format!(
            "stream has {} task(s); continual metrics need at least 2",
            source.task_count()
        )));
    }

    // Penalty-strength selection repeats the whole stream and keeps the run
    // with the best mean end-of-stream validation accuracy (ties: smaller
    // value).  Everything else runs the stream exactly once.
    let mut chosen_lambda: Option<f64> = None;
    let mut best: Option<StreamRun> = None;
    if resolved.lambda_search {
        for &l in LAMBDA_GRID.iter() {
            let run = run_stream(&resolved, &source, Some(l))?;
            let better = match &best {
                None => true,
                Some(b) => run.mean_val_at_end > b.mean_val_at_end,
            };
            if better {
                chosen_lambda = Some(l);
                best = Some(run);
            }
        }
    } else {
        if resolved.learner == LearnerKind::EwcOnline {
            chosen_lambda = Some(resolved.settings.lambda);
        }
        best = Some(run_stream(&resolved, &source, chosen_lambda)?);
    }
    let run = best.expect("at least one stream run");

    let tasks = source.task_count();
    let (transfer_value, isolated) = if !resolved.kind.has_transfer_metric() {
        (None, None)
    } else if resolved.learner == LearnerKind::Independent {
        // The in-stream run of the independent learner already trains the
        // last task from scratch with the reference seed.
        (Some(0.0), Some(run.matrix.just_learned[tasks - 1]))
    } else {
        let reference = isolated_reference(&resolved, &source)?;
        (
            Some(transfer(run.matrix.just_learned[tasks - 1], reference)),
            Some(reference),
        )
    };

    let ledger = run.learner.ledger();
    let summary = RunSummary {
        learner: resolved.learner.token().to_string(),
        stream: resolved.kind.token().to_string(),
        scale: format!("{:?}", resolved.scale).to_lowercase(),
        stream_seed: resolved.stream_seed,
        seed: resolved.seed,
        tasks,
        avg_accuracy: avg_accuracy(&run.matrix)?,
        forgetting: forgetting(&run.matrix)?,
        transfer: transfer_value,
        isolated_accuracy: isolated,
        lca: lca_mean(&run.curves, resolved.settings.budget.curve_batches)?,
        parameter_bytes: ledger.parameter_bytes(),
        auxiliary_bytes: ledger.auxiliary_bytes(),
        total_bytes: ledger.total_bytes(),
        flops: ledger.flops(),
        lambda: chosen_lambda,
        chosen_paths: run.records.iter().map(|r| r.chosen_path.clone()).collect(),
    };

    std::fs::create_dir_all(&resolved.out_dir)?;
    write_results_csv(&resolved.out_dir.join("results.csv"), &run.records)?;
    write_json(&resolved.out_dir.join("summary.json"), &summary)?;
    write_json(&resolved.out_dir.join("config.json"), cfg)?;
    std::fs::write(resolved.out_dir.join("checkpoint.bin"), run.learner.checkpoint()?)?;

    Ok(RunReport {
        out_dir: resolved.out_dir,
        summary,
        records: run.records,
    })
}

/// Fixed-precision float so repeated runs serialize to identical bytes.
fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

fn write_results_csv(path: &FsPath, records: &[TaskRecord]) -> Result<()> {
    let mut text = String::from("task,just_learned,at_end,val_accuracy,params_added,flops,path\n");
    for r in records {
        let path_str: Vec<String> = r.chosen_path.iter().map(|s| s.to_string()).collect();
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.task,
            fmt_f64(r.just_learned),
            fmt_f64(r.at_end),
            fmt_f64(r.val_accuracy),
            r.params_added,
            r.flops_used,
            path_str.join("-"),
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &FsPath, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Read a run directory's `summary.json` back.
pub fn load_summary(dir: &FsPath) -> Result<RunSummary> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| {
        Error::Invalid(format!("run directory {}: {e}", dir.display()))
    })?;
    Ok(serde_json::from_str(&text)?)
}
