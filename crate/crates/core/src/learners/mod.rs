//! Continual-learning strategies and their shared vocabulary.
//!
//! Two families cover every strategy the harness accepts:
//!
//! * [`modular`]: learners that grow a frozen module library and search for
//!   a path per task (the transfer-seeking strategies plus the no-sharing /
//!   fixed-sharing baselines, which are the same machinery under a forced
//!   candidate policy). Committed parameters never change again, so these
//!   learners cannot forget.
//! * [`shared`]: learners that keep one never-frozen network and keep
//!   training it across tasks (plain fine-tuning, quadratic-penalty
//!   regularization, and replay rehearsal). These can forget.
//!
//! Every learner consumes tasks strictly in stream order through
//! [`ContinualLearner::learn_task`] and can re-score any past task at any
//! time through [`ContinualLearner::evaluate`], which is all the harness
//! needs to fill the accuracy matrix.

pub mod modular;
pub mod shared;

pub use modular::{CandidatePolicy, ModularLearner, SearchStrategy};
pub use shared::{SharedLearner, SharedVariant};

use crate::data::{LabeledDataset, SplitData};
use crate::error::{Error, Result};
use crate::graph::{ArchShape, Path};
use crate::metrics::ResourceLedger;
use crate::prior::PriorBreadth;
use crate::train::{HyperGrid, TrainBudget};

/// Everything a learner reports about one consumed task.
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    /// The path now serving this task.
    pub chosen_path: Path,
    /// Best validation accuracy of the selected configuration.
    pub val_accuracy: f64,
    /// Test accuracy right after the task was learned.
    pub test_accuracy: f64,
    /// (batches seen, test accuracy) from the task's very first update on;
    /// index 0 is the untrained predictor.
    pub learning_curve: Vec<(usize, f64)>,
    /// Modules added to the learner's permanent state by this task.
    pub params_added: usize,
    /// Training compute spent on this task (search + fits + similarity
    /// ranking; measurement-only evaluations excluded).
    pub flops_used: u64,
}

impl TaskOutcome {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in
            [("val", self.val_accuracy), ("test", self.test_accuracy)]
        {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Invalid(format!("{name} accuracy {a} outside [0,1]")));
            }
        }
        for pair in self.learning_curve.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::Invalid(format!(
                    "learning curve indices not strictly increasing: {} then {}",
                    pair[0].0, pair[1].0
                )));
            }
        }
        Ok(())
    }
}

/// The eight strategy names the harness accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerKind {
    Independent,
    Finetune,
    NewHead,
    NewLeg,
    EwcOnline,
    Er,
    MntdpD,
    MntdpS,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 8] = [
        LearnerKind::Independent,
        LearnerKind::Finetune,
        LearnerKind::NewHead,
        LearnerKind::NewLeg,
        LearnerKind::EwcOnline,
        LearnerKind::Er,
        LearnerKind::MntdpD,
        LearnerKind::MntdpS,
    ];

    pub fn token(&self) -> &'static str {
        match self {
            LearnerKind::Independent => "independent",
            LearnerKind::Finetune => "finetune",
            LearnerKind::NewHead => "new_head",
            LearnerKind::NewLeg => "new_leg",
            LearnerKind::EwcOnline => "ewc_online",
            LearnerKind::Er => "er",
            LearnerKind::MntdpD => "mntdp_d",
            LearnerKind::MntdpS => "mntdp_s",
        }
    }

    pub fn parse(s: &str) -> Option<LearnerKind> {
        LearnerKind::ALL.iter().copied().find(|k| k.token() == s)
    }
}

/// A learner consuming an ordered task stream.
pub trait ContinualLearner {
    /// Consume the next task. `seed` drives every random choice the learner
    /// makes for this task (initialization, batch order, sampling).
    fn learn_task(&mut self, task: usize, data: &LabeledDataset, seed: u64)
        -> Result<TaskOutcome>;

    /// Accuracy of the current predictor for `task` on a split. Measurement
    /// only: never touches the ledger.
    fn evaluate(&self, task: usize, split: &SplitData) -> Result<f64>;

    /// Memory and compute accounting.
    fn ledger(&self) -> &ResourceLedger;

    /// Confirm that no committed parameter changed since its commit.
    /// Learners without frozen state trivially pass.
    fn verify_frozen(&self) -> Result<()> {
        Ok(())
    }

    /// Serialized learner state as tagged container sections.
    fn checkpoint(&self) -> Result<Vec<u8>>;
}

/// Container section tags used by learner checkpoints.
pub const SECTION_LIBRARY: u32 = 1;
pub const SECTION_SHARED_NET: u32 = 2;
pub const SECTION_PENALTY: u32 = 3;
pub const SECTION_BUFFER: u32 = 4;

/// Knobs shared by every learner the factory can build.
#[derive(Debug, Clone)]
pub struct LearnerSettings {
    pub grid: HyperGrid,
    pub budget: TrainBudget,
    /// How many past tasks seed the candidate set of the path searchers.
    pub breadth: PriorBreadth,
    /// Neighbourhood size of the task-similarity ranking.
    pub n_neighbors: usize,
    /// Ablation: replace the similarity ranking with a random past task.
    pub random_prior: bool,
    /// Penalty strength for the regularized shared learner.
    pub lambda: f64,
    /// Stored examples per (task, class) for the rehearsal learner.
    pub replay_per_class: usize,
}

impl Default for LearnerSettings {
    fn default() -> LearnerSettings {
        LearnerSettings {
            grid: HyperGrid::default(),
            budget: TrainBudget::default(),
            breadth: PriorBreadth::Top1,
            n_neighbors: 5,
            random_prior: false,
            lambda: 1.0,
            replay_per_class: 15,
        }
    }
}

/// Construct the named learner for a given architecture.
pub fn build_learner(
    kind: LearnerKind,
    shape: ArchShape,
    settings: &LearnerSettings,
) -> Result<Box<dyn ContinualLearner>> {
    let grid = settings.grid.clone();
    let budget = settings.budget;
    Ok(match kind {
        LearnerKind::Independent => Box::new(ModularLearner::new(
            shape,
            CandidatePolicy::AllNew,
            SearchStrategy::PerCandidateGrid,
            grid,
            budget,
            settings.n_neighbors,
        )?),
        LearnerKind::NewHead => Box::new(ModularLearner::new(
            shape,
            CandidatePolicy::HeadOnly,
            SearchStrategy::PerCandidateGrid,
            grid,
            budget,
            settings.n_neighbors,
        )?),
        LearnerKind::NewLeg => Box::new(ModularLearner::new(
            shape,
            CandidatePolicy::LegOnly,
            SearchStrategy::PerCandidateGrid,
            grid,
            budget,
            settings.n_neighbors,
        )?),
        LearnerKind::MntdpD => Box::new(ModularLearner::new(
            shape,
            if settings.random_prior {
                CandidatePolicy::RandomPrior
            } else {
                CandidatePolicy::DataDriven { breadth: settings.breadth }
            },
            SearchStrategy::PerCandidateGrid,
            grid,
            budget,
            settings.n_neighbors,
        )?),
        LearnerKind::MntdpS => Box::new(ModularLearner::new(
            shape,
            if settings.random_prior {
                CandidatePolicy::RandomPrior
            } else {
                CandidatePolicy::DataDriven { breadth: settings.breadth }
            },
            SearchStrategy::Stochastic,
            grid,
            budget,
            settings.n_neighbors,
        )?),
        LearnerKind::Finetune => {
            Box::new(SharedLearner::new(shape, SharedVariant::Plain, grid, budget)?)
        }
        LearnerKind::EwcOnline => Box::new(SharedLearner::new(
            shape,
            SharedVariant::Ewc { lambda: settings.lambda },
            grid,
            budget,
        )?),
        LearnerKind::Er => Box::new(SharedLearner::new(
            shape,
            SharedVariant::Replay { per_class: settings.replay_per_class },
            grid,
            budget,
        )?),
    })
}
