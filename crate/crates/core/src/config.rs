//! Experiment configuration: the JSON schema accepted by the `run` command,
//! exhaustive validation, and environment overrides.
//!
//! A configuration file names a stream (kind, scale, seed), a learner, and
//! optional overrides for the hyperparameter grid, training budget, and
//! network shape.  [`ExperimentConfig::resolve`] checks *everything* and
//! reports all problems at once, so a run never starts on a half-valid file.
//!
//! Two environment variables override the file: `MODCL_OUT_DIR` replaces the
//! output directory and `MODCL_THREADS` sets the worker count.  Execution is
//! sequential, so any accepted thread count yields identical results; the
//! variable exists so wrappers can pass it without branching per tool.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{LearnerKind, LearnerSettings};
use crate::prior::PriorBreadth;
use crate::streams::{Scale, StreamKind, CLASSES_PER_FAMILY, DEFAULT_WAYS};
use crate::train::{HyperGrid, TrainBudget};

/// Penalty strengths tried when the regularized learner is run without an
/// explicit `lambda`: the whole stream is repeated per value and the best
/// mean end-of-stream validation accuracy wins (ties go to the smaller value).
pub const LAMBDA_GRID: [f64; 9] = [
    1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1_000.0, 5_000.0, 10_000.0,
];

/// Environment variable overriding the output directory.
pub const ENV_OUT_DIR: &str = "MODCL_OUT_DIR";
/// Environment variable overriding the worker count.
pub const ENV_THREADS: &str = "MODCL_THREADS";

/// Root of a configuration file.  Unknown keys anywhere in the tree are
/// rejected at parse time so typos cannot silently fall back to defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamSection,
    pub learner: LearnerSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchSection>,
    /// Directory receiving results.csv, summary.json, checkpoint.bin.
    pub out_dir: String,
    /// Root seed for the run; every task derives its own child seed from it.
    pub seed: u64,
}

/// Which task stream to run on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    /// One of `S-`, `S+`, `Sin`, `Sout`, `Spl`, `Slong`.
    pub kind: String,
    /// `paper` or `desk`.
    pub scale: String,
    pub seed: u64,
    /// Classes per task; defaults to 5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ways: Option<usize>,
    /// Load task data from a directory written by `gen-stream` instead of
    /// synthesizing it in memory.  The manifest must match kind/scale/seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

/// Which learner to run and its knobs.  Options only apply to the learners
/// that use them; setting one on the wrong learner is a validation error.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    /// One of the eight learner tokens, e.g. `mntdp_d` or `finetune`.
    pub name: String,
    /// Candidate-set breadth for the path searchers: `top1` or `all`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breadth: Option<String>,
    /// Ablation for the path searchers: pick the source task at random.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_prior: Option<bool>,
    /// Neighbourhood size of the task-similarity ranking (path searchers).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_neighbors: Option<usize>,
    /// Penalty strength for `ewc_online`; omit to search [`LAMBDA_GRID`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Stored examples per (task, class) for `er`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_per_class: Option<usize>,
}

/// Overrides for the hyperparameter grid; omitted fields keep the defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decays: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_learning_rates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_weight: Option<f64>,
}

/// Overrides for the training budget; omitted fields keep the defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_batches: Option<usize>,
}

/// Overrides for the network shape; the input width always comes from the
/// stream itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
}

/// A fully checked configuration, every default filled in.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub kind: StreamKind,
    pub scale: Scale,
    pub stream_seed: u64,
    pub ways: usize,
    pub stream_dir: Option<PathBuf>,
    pub learner: LearnerKind,
    pub settings: LearnerSettings,
    /// Run the whole stream once per [`LAMBDA_GRID`] value and keep the best.
    pub lambda_search: bool,
    pub hidden_dim: usize,
    pub depth: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Accepted for interface stability; execution is sequential either way.
    pub threads: usize,
}

pub const DEFAULT_HIDDEN_DIM: usize = 32;
pub const DEFAULT_DEPTH: usize = 4;

impl ExperimentConfig {
    /// Parse a configuration from JSON text.  Unknown keys are an error.
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        Ok(serde_json::from_str(text)?)
    }

    /// Validate everything and fill in defaults.  All problems are collected
    /// into a single [`Error::Config`] so a bad file is fixed in one pass.
    /// Environment overrides (`MODCL_OUT_DIR`, `MODCL_THREADS`) apply here.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        self.resolve_with_env(
            std::env::var(ENV_OUT_DIR).ok().as_deref(),
            std::env::var(ENV_THREADS).ok().as_deref(),
        )
    }

    /// [`ExperimentConfig::resolve`] with the environment passed explicitly.
    pub fn resolve_with_env(
        &self,
        env_out_dir: Option<&str>,
        env_threads: Option<&str>,
    ) -> Result<ResolvedConfig> {
        let mut errors = Vec::new();

        let kind = match StreamKind::parse(&self.stream.kind) {
            Ok(k) => Some(k),
            Err(e) => {
                errors.push(format!("stream.kind: {e}"));
                None
            }
        };
        let scale = match Scale::parse(&self.stream.scale) {
            Ok(s) => Some(s),
            Err(e) => {
                errors.push(format!("stream.scale: {e}"));
                None
            }
        };
        let ways = self.stream.ways.unwrap_or(DEFAULT_WAYS);
        if ways < 2 || ways > CLASSES_PER_FAMILY {
            errors.push(format!(
                "stream.ways: {ways} outside 2..={CLASSES_PER_FAMILY}"
            ));
        }
        let stream_dir = match &self.stream.dir {
            Some(d) if d.is_empty() => {
                errors.push("stream.dir: empty path".to_string());
                None
            }
            Some(d) => Some(PathBuf::from(d)),
            None => None,
        };

        let learner = match LearnerKind::parse(&self.learner.name) {
            Some(k) => Some(k),
            None => {
                let tokens: Vec<&str> = LearnerKind::ALL.iter().map(|k| k.token()).collect();
                errors.push(format!(
                    "learner.name: unknown learner {:?}, expected one of {}",
                    self.learner.name,
                    tokens.join(", ")
                ));
                None
            }
        };

        let is_searcher = matches!(learner, Some(LearnerKind::MntdpD | LearnerKind::MntdpS));
        let breadth = match self.learner.breadth.as_deref() {
            None => PriorBreadth::Top1,
            Some("top1") => PriorBreadth::Top1,
            Some("all") => PriorBreadth::All,
            Some(other) => {
                errors.push(format!(
                    "learner.breadth: unknown value {other:?}, expected top1 or all"
                ));
                PriorBreadth::Top1
            }
        };
        if self.learner.breadth.is_some() && learner.is_some() && !is_searcher {
            errors.push(format!(
                "learner.breadth: only applies to mntdp_d / mntdp_s, not {}",
                self.learner.name
            ));
        }
        if self.learner.random_prior == Some(true) && learner.is_some() && !is_searcher {
            errors.push(format!(
                "learner.random_prior: only applies to mntdp_d / mntdp_s, not {}",
                self.learner.name
            ));
        }
        if self.learner.n_neighbors.is_some() && learner.is_some() && !is_searcher {
            errors.push(format!(
                "learner.n_neighbors: only applies to mntdp_d / mntdp_s, not {}",
                self.learner.name
            ));
        }
        let n_neighbors = self.learner.n_neighbors.unwrap_or(5);
        if n_neighbors == 0 {
            errors.push("learner.n_neighbors: must be at least 1".to_string());
        }

        if self.learner.lambda.is_some() && learner.is_some() && learner != Some(LearnerKind::EwcOnline)
        {
            errors.push(format!(
                "learner.lambda: only applies to ewc_online, not {}",
                self.learner.name
            ));
        }
        if let Some(l) = self.learner.lambda {
            if !l.is_finite() || l < 0.0 {
                errors.push(format!("learner.lambda: {l} is not a finite value >= 0"));
            }
        }
        let lambda_search = learner == Some(LearnerKind::EwcOnline) && self.learner.lambda.is_none();

        if self.learner.replay_per_class.is_some() && learner.is_some() && learner != Some(LearnerKind::Er)
        {
            errors.push(format!(
                "learner.replay_per_class: only applies to er, not {}",
                self.learner.name
            ));
        }
        let replay_per_class = self.learner.replay_per_class.unwrap_or(15);
        if replay_per_class == 0 {
            errors.push("learner.replay_per_class: must be at least 1".to_string());
        }

        let mut grid = HyperGrid::default();
        if let Some(g) = &self.grid {
            if let Some(v) = &g.learning_rates {
                grid.learning_rates = v.clone();
            }
            if let Some(v) = &g.weight_decays {
                grid.weight_decays = v.clone();
            }
            if let Some(v) = &g.gamma_learning_rates {
                grid.gamma_learning_rates = v.clone();
            }
            if let Some(w) = g.entropy_weight {
                grid.entropy_weight = w;
            }
        }
        if let Err(e) = grid.validate() {
            errors.push(format!("grid: {e}"));
        }

        let mut budget = TrainBudget::default();
        if let Some(b) = &self.budget {
            if let Some(v) = b.batch_size {
                budget.batch_size = v;
            }
            if let Some(v) = b.eval_every {
                budget.eval_every = v;
            }
            if let Some(v) = b.patience {
                budget.patience = v;
            }
            if let Some(v) = b.max_iterations {
                budget.max_iterations = v;
            }
            if let Some(v) = b.curve_batches {
                budget.curve_batches = v;
            }
        }
        if let Err(e) = budget.validate() {
            errors.push(format!("budget: {e}"));
        } else {
            // The learning-curve area needs curve_batches + 1 recorded points,
            // which exist only if training is allowed to reach that far.
            let horizon = budget.eval_every * budget.curve_batches;
            if budget.max_iterations < horizon {
                errors.push(format!(
                    "budget.max_iterations: {} is too small to record {} curve points \
                     (needs at least eval_every * curve_batches = {horizon})",
                    budget.max_iterations,
                    budget.curve_batches + 1
                ));
            }
            if budget.patience < horizon {
                errors.push(format!(
                    "budget.patience: {} may stop before {} curve points exist \
                     (needs at least eval_every * curve_batches = {horizon})",
                    budget.patience,
                    budget.curve_batches + 1
                ));
            }
        }

        let hidden_dim = self.arch.as_ref().and_then(|a| a.hidden_dim).unwrap_or(DEFAULT_HIDDEN_DIM);
        let depth = self.arch.as_ref().and_then(|a| a.depth).unwrap_or(DEFAULT_DEPTH);
        if hidden_dim == 0 {
            errors.push("arch.hidden_dim: must be at least 1".to_string());
        }
        if depth < 2 {
            errors.push(format!("arch.depth: {depth} is below the minimum of 2"));
        }

        let out_dir = match env_out_dir {
            Some(dir) => dir.to_string(),
            None => self.out_dir.clone(),
        };
        if out_dir.is_empty() {
            errors.push("out_dir: empty path".to_string());
        }

        let threads = match env_threads {
            None => 1,
            Some(raw) => match raw.parse::<usize>() {
                Ok(n) if n >= 1 => n,
                _ => {
                    errors.push(format!(
                        "{ENV_THREADS}: {raw:?} is not a positive worker count"
                    ));
                    1
                }
            },
        };

        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }

        let settings = LearnerSettings {
            grid,
            budget,
            breadth,
            n_neighbors,
            random_prior: self.learner.random_prior.unwrap_or(false),
            lambda: self.learner.lambda.unwrap_or(1.0),
            replay_per_class,
        };

        Ok(ResolvedConfig {
            kind: kind.expect("checked above"),
            scale: scale.expect("checked above"),
            stream_seed: self.stream.seed,
            ways,
            stream_dir,
            learner: learner.expect("checked above"),
            settings,
            lambda_search,
            hidden_dim,
            depth,
            out_dir: PathBuf::from(out_dir),
            seed: self.seed,
            threads,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(learner: &str) -> String {
        format!(
            r#"{{
                "stream": {{ "kind": "S-", "scale": "desk", "seed": 7 }},
                "learner": {{ "name": "{learner}" }},
                "out_dir": "runs/x",
                "seed": 1
            }}"#
        )
    }

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let cfg = ExperimentConfig::from_json(&minimal("mntdp_d")).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.kind, StreamKind::Minus);
        assert_eq!(r.ways, DEFAULT_WAYS);
        assert_eq!(r.hidden_dim, DEFAULT_HIDDEN_DIM);
        assert_eq!(r.depth, DEFAULT_DEPTH);
        assert_eq!(r.settings.budget.batch_size, 32);
        assert_eq!(r.settings.grid.learning_rates, vec![1e-2, 1e-3]);
        assert!(!r.lambda_search);
        assert_eq!(r.threads, 1);
    }

    #[test]
    fn unknown_keys_are_rejected_at_parse_time() {
        let text = r#"{
            "stream": { "kind": "S-", "scale": "desk", "seed": 7, "color": 3 },
            "learner": { "name": "finetune" },
            "out_dir": "runs/x",
            "seed": 1
        }"#;
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert!(err.to_string().contains("color"), "{err}");
    }

    #[test]
    fn all_problems_are_reported_together() {
        let text = r#"{
            "stream": { "kind": "S?", "scale": "galactic", "seed": 7, "ways": 1 },
            "learner": { "name": "nobody", "n_neighbors": 0 },
            "budget": { "batch_size": 0 },
            "arch": { "depth": 1 },
            "out_dir": "",
            "seed": 1
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let err = cfg.resolve().unwrap_err();
        match err {
            Error::Config(list) => {
                let joined = list.join("\n");
                for needle in [
                    "stream.kind",
                    "stream.scale",
                    "stream.ways",
                    "learner.name",
                    "learner.n_neighbors",
                    "budget",
                    "arch.depth",
                    "out_dir",
                ] {
                    assert!(joined.contains(needle), "missing {needle} in:\n{joined}");
                }
                assert!(list.len() >= 8, "expected >= 8 problems, got {}", list.len());
            }
            other => panic!("expected Config error, got {other}"),
        }
    }

    #[test]
    fn options_bound_to_other_learners_are_rejected() {
        let text = r#"{
            "stream": { "kind": "S-", "scale": "desk", "seed": 7 },
            "learner": { "name": "finetune", "lambda": 5.0, "replay_per_class": 3,
                         "breadth": "all", "random_prior": true, "n_neighbors": 2 },
            "out_dir": "runs/x",
            "seed": 1
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        match cfg.resolve().unwrap_err() {
            Error::Config(list) => {
                let joined = list.join("\n");
                for needle in ["lambda", "replay_per_class", "breadth", "random_prior", "n_neighbors"] {
                    assert!(joined.contains(needle), "missing {needle} in:\n{joined}");
                }
            }
            other => panic!("expected Config error, got {other}"),
        }
    }

    #[test]
    fn ewc_without_lambda_searches_and_with_lambda_does_not() {
        let cfg = ExperimentConfig::from_json(&minimal("ewc_online")).unwrap();
        assert!(cfg.resolve().unwrap().lambda_search);

        let text = r#"{
            "stream": { "kind": "S-", "scale": "desk", "seed": 7 },
            "learner": { "name": "ewc_online", "lambda": 50.0 },
            "out_dir": "runs/x",
            "seed": 1
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let r = cfg.resolve().unwrap();
        assert!(!r.lambda_search);
        assert_eq!(r.settings.lambda, 50.0);
    }

    #[test]
    fn curve_inconsistent_budget_is_caught() {
        let text = r#"{
            "stream": { "kind": "S-", "scale": "desk", "seed": 7 },
            "learner": { "name": "finetune" },
            "budget": { "max_iterations": 20, "patience": 10, "eval_every": 10, "curve_batches": 5 },
            "out_dir": "runs/x",
            "seed": 1
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        match cfg.resolve().unwrap_err() {
            Error::Config(list) => {
                assert!(list.iter().any(|e| e.contains("max_iterations")));
                assert!(list.iter().any(|e| e.contains("patience")));
            }
            other => panic!("expected Config error, got {other}"),
        }
    }

    #[test]
    fn environment_overrides_out_dir_and_threads() {
        let cfg = ExperimentConfig::from_json(&minimal("mntdp_s")).unwrap();
        let r = cfg.resolve_with_env(Some("elsewhere"), Some("4")).unwrap();
        assert_eq!(r.out_dir, PathBuf::from("elsewhere"));
        assert_eq!(r.threads, 4);

        match cfg.resolve_with_env(None, Some("zero")).unwrap_err() {
            Error::Config(list) => assert!(list[0].contains(ENV_THREADS), "{list:?}"),
            other => panic!("expected Config error, got {other}"),
        }
        match cfg.resolve_with_env(Some(""), None).unwrap_err() {
            Error::Config(list) => assert!(list[0].contains("out_dir"), "{list:?}"),
            other => panic!("expected Config error, got {other}"),
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig::from_json(&minimal("er")).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back.learner.name, "er");
        assert_eq!(back.stream.seed, 7);
    }
}
