//! Learners that grow a frozen module library.
//!
//! Each task gets a candidate set of paths (how the set is produced is the
//! [`CandidatePolicy`]), the candidates are trained under the hyperparameter
//! grid (independently, or jointly under a sampled-path distribution; the
//! [`SearchStrategy`]), and the winner is committed: its new modules freeze,
//! every losing fresh module is discarded, and the task is permanently bound
//! to its path. Frozen parameters never change, so none of these learners can
//! forget.

use crate::data::LabeledDataset;
use crate::data::SplitData;
use crate::error::{Error, Result};
use crate::graph::{ArchShape, ModuleId, ModuleLibrary, NeuralModule, Path};
use crate::metrics::{account_flops, Phase, ResourceLedger};
use crate::prior::{
    candidate_paths, closest_task, random_prior, CandidateSet, CandidateSpec, PriorBreadth,
    SlotSpec, TaskAffinity,
};
use crate::seed::child_seed;
use crate::snapshot::{encode_container, encode_library};
use crate::train::{
    evaluate_accuracy, fit_stochastic, fit_with_early_stopping, grid_search_gamma,
    grid_search_task, FitContext, FitResult, HyperGrid, TrainBudget,
};

use super::{ContinualLearner, TaskOutcome, SECTION_LIBRARY};

/// How the candidate set for a new task is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidatePolicy {
    /// Rank past tasks by feature-space similarity and enumerate the
    /// branch-right perturbations of the best match (`breadth` widens the
    /// enumeration to every ranked task).
    DataDriven { breadth: PriorBreadth },
    /// Ablation: perturb a uniformly random past task instead of the ranked
    /// best match.
    RandomPrior,
    /// A single all-new path for every task: no sharing at all.
    AllNew,
    /// Reuse the first task's trunk; only the head is ever new.
    HeadOnly,
    /// Reuse everything from the first task except the input layer. The head
    /// is also replaced when the class count differs.
    LegOnly,
}

/// How candidates are trained and the winner picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStrategy {
    /// Train every candidate independently (private fresh modules), pick the
    /// best validation run. Ties prefer the candidate with more reuse.
    PerCandidateGrid,
    /// Train one shared fresh module per layer under a categorical path
    /// distribution updated by policy gradient, then fine-tune the argmax.
    Stochastic,
}

/// A library-growing learner: policy × strategy over one module library.
pub struct ModularLearner {
    lib: ModuleLibrary,
    policy: CandidatePolicy,
    strategy: SearchStrategy,
    grid: HyperGrid,
    budget: TrainBudget,
    n_neighbors: usize,
    ledger: ResourceLedger,
}

impl ModularLearner {
    pub fn new(
        shape: ArchShape,
        policy: CandidatePolicy,
        strategy: SearchStrategy,
        grid: HyperGrid,
        budget: TrainBudget,
        n_neighbors: usize,
    ) -> Result<ModularLearner> {
        grid.validate()?;
        budget.validate()?;
        if n_neighbors == 0 {
            return Err(Error::Invalid("neighbourhood size must be positive".into()));
        }
        Ok(ModularLearner {
            lib: ModuleLibrary::new(shape)?,
            policy,
            strategy,
            grid,
            budget,
            n_neighbors,
            ledger: ResourceLedger::new(),
        })
    }

    pub fn library(&self) -> &ModuleLibrary {
        &self.lib
    }

    /// Compute cost of the similarity ranking: feature extraction for the
    /// train and validation inputs through every committed trunk, plus one
    /// multiply-accumulate sweep over all (train, val) pairs per task.
    fn ranking_flops(&self, n_train: usize, n_val: usize) -> u64 {
        let mut flops = 0u64;
        for task in self.lib.committed_tasks() {
            let path = self.lib.task_path(task).expect("committed");
            let mut dim = self.lib.shape().input_dim;
            for &id in &path.modules[..path.depth() - 1] {
                let m = self.lib.module(id).expect("on a committed path");
                flops += account_flops(m.in_dim(), m.out_dim(), n_train + n_val, Phase::Forward);
                dim = m.out_dim();
            }
            flops += account_flops(dim, 1, n_train * n_val, Phase::Forward);
        }
        flops
    }

    /// Produce the candidate set for a new task plus the flops the ranking
    /// cost. The first task always gets the single all-new path.
    fn plan_candidates(
        &self,
        data: &LabeledDataset,
        seed: u64,
    ) -> Result<(CandidateSet, u64)> {
        let depth = self.lib.depth();
        let committed = self.lib.committed_tasks();
        if committed.is_empty() {
            return Ok((
                CandidateSet {
                    candidates: vec![CandidateSpec::all_new(depth)],
                    source_task: None,
                },
                0,
            ));
        }
        let first = committed[0];
        match self.policy {
            CandidatePolicy::AllNew => Ok((
                CandidateSet {
                    candidates: vec![CandidateSpec::all_new(depth)],
                    source_task: None,
                },
                0,
            )),
            CandidatePolicy::HeadOnly => {
                let base = self.lib.task_path(first).expect("committed");
                let mut slots: Vec<SlotSpec> = base.modules[..depth - 1]
                    .iter()
                    .map(|&id| SlotSpec::Reuse(id))
                    .collect();
                slots.push(SlotSpec::Fresh);
                Ok((
                    CandidateSet {
                        candidates: vec![CandidateSpec { slots }],
                        source_task: Some(first),
                    },
                    0,
                ))
            }
            CandidatePolicy::LegOnly => {
                let base = self.lib.task_path(first).expect("committed");
                let mut slots = vec![SlotSpec::Fresh];
                for &id in &base.modules[1..] {
                    slots.push(SlotSpec::Reuse(id));
                }
                let head = *base.modules.last().expect("nonempty path");
                if depth > 1 && self.lib.module(head)?.out_dim() != data.classes {
                    *slots.last_mut().expect("nonempty") = SlotSpec::Fresh;
                }
                Ok((
                    CandidateSet {
                        candidates: vec![CandidateSpec { slots }],
                        source_task: Some(first),
                    },
                    0,
                ))
            }
            CandidatePolicy::DataDriven { breadth } => {
                let ranking =
                    closest_task(&self.lib, &data.train, &data.val, self.n_neighbors)?;
                let flops = self.ranking_flops(data.train.len(), data.val.len());
                Ok((candidate_paths(&self.lib, &ranking, breadth)?, flops))
            }
            CandidatePolicy::RandomPrior => {
                let source = random_prior(&self.lib, child_seed(seed, &[12]))?;
                let ranking = vec![TaskAffinity { past_task: source, knn_accuracy: 0.0 }];
                Ok((candidate_paths(&self.lib, &ranking, PriorBreadth::Top1)?, 0))
            }
        }
    }

    /// Spawn the fresh modules of one candidate. Initialization depends only
    /// on (task seed, candidate index, layer), so every grid cell of the
    /// candidate starts from identical parameters.
    fn realize(
        &mut self,
        spec: &CandidateSpec,
        ways: usize,
        seed: u64,
        candidate: usize,
    ) -> Result<(Path, Vec<ModuleId>)> {
        let depth = self.lib.depth();
        let mut ids = Vec::with_capacity(depth);
        let mut fresh = Vec::new();
        for (l, slot) in spec.slots.iter().enumerate() {
            match slot {
                SlotSpec::Reuse(id) => ids.push(*id),
                SlotSpec::Fresh => {
                    let out =
                        if l + 1 == depth { ways } else { self.lib.shape().hidden_dim };
                    let id = self.lib.spawn_new_module(
                        l,
                        out,
                        child_seed(seed, &[10, candidate as u64, l as u64]),
                    )?;
                    ids.push(id);
                    fresh.push(id);
                }
            }
        }
        Ok((Path::new(ids), fresh))
    }

    /// Train every candidate independently over the grid and commit the best
    /// validation run. Candidates are ordered most-reuse-first and selection
    /// is strict, so exact ties commit the cheaper architecture.
    fn run_deterministic(
        &mut self,
        task: usize,
        data: &LabeledDataset,
        seed: u64,
        set: &CandidateSet,
        base_flops: u64,
    ) -> Result<TaskOutcome> {
        let mut realized: Vec<(Path, Vec<NeuralModule>)> =
            Vec::with_capacity(set.candidates.len());
        for (c, spec) in set.candidates.iter().enumerate() {
            let (path, fresh) = self.realize(spec, data.classes, seed, c)?;
            let owned = self.lib.detach_unfrozen(&fresh)?;
            realized.push((path, owned));
        }
        let live = self.lib.parameter_count()
            + realized
                .iter()
                .flat_map(|(_, o)| o.iter())
                .map(|m| m.parameter_count())
                .sum::<usize>();
        self.ledger.record_parameters(live);

        let mut total_flops = base_flops;
        let mut best: Option<(usize, f64, FitResult, Vec<NeuralModule>)> = None;
        for (c, (path, owned_init)) in realized.iter().enumerate() {
            let fit_seed = child_seed(seed, &[11, c as u64]);
            let mut cand_flops = 0u64;
            let won = grid_search_task(&self.grid, |lr, wd| {
                let mut owned = owned_init.clone();
                let ctx = FitContext::plain(&self.lib);
                let fit = fit_with_early_stopping(
                    &ctx,
                    &mut owned,
                    path,
                    data,
                    lr,
                    wd,
                    &self.budget,
                    fit_seed,
                )?;
                cand_flops += fit.flops;
                Ok((fit.val_accuracy, (fit, owned)))
            })?;
            total_flops += cand_flops;
            let better = best.as_ref().map_or(true, |(_, v, _, _)| won.val_accuracy > *v);
            if better {
                let (fit, trained) = won.payload;
                best = Some((c, won.val_accuracy, fit, trained));
            }
        }
        let (winner, val_accuracy, fit, trained) =
            best.expect("candidate set is never empty");
        let path = realized[winner].0.clone();
        let params_added = trained.len();
        self.lib.attach_modules(trained)?;
        self.lib.commit_path(&path, task)?;
        self.ledger.record_parameters(self.lib.parameter_count());
        self.ledger.add_flops(total_flops);
        let test_accuracy = evaluate_accuracy(&self.lib, &path, &data.test)?;
        Ok(TaskOutcome {
            chosen_path: path,
            val_accuracy,
            test_accuracy,
            learning_curve: fit.curve,
            params_added,
            flops_used: total_flops,
        })
    }

    /// Train one shared fresh module per layer under a sampled-path
    /// distribution, fine-tune the argmax path, and commit it. Shared fresh
    /// modules left off the committed path are discarded by the commit.
    fn run_stochastic(
        &mut self,
        task: usize,
        data: &LabeledDataset,
        seed: u64,
        set: &CandidateSet,
        base_flops: u64,
    ) -> Result<TaskOutcome> {
        let depth = self.lib.depth();
        let mut shared: Vec<Option<ModuleId>> = vec![None; depth];
        for l in 0..depth {
            let needed =
                set.candidates.iter().any(|c| matches!(c.slots[l], SlotSpec::Fresh));
            if needed {
                let out = if l + 1 == depth { data.classes } else { self.lib.shape().hidden_dim };
                shared[l] = Some(self.lib.spawn_new_module(
                    l,
                    out,
                    child_seed(seed, &[10, 0, l as u64]),
                )?);
            }
        }
        let fresh_ids: Vec<ModuleId> = shared.iter().flatten().copied().collect();
        let paths: Vec<Path> = set
            .candidates
            .iter()
            .map(|spec| {
                Path::new(
                    spec.slots
                        .iter()
                        .enumerate()
                        .map(|(l, s)| match s {
                            SlotSpec::Reuse(id) => *id,
                            SlotSpec::Fresh => shared[l].expect("fresh slot spawned"),
                        })
                        .collect(),
                )
            })
            .collect();
        let owned_init = self.lib.detach_unfrozen(&fresh_ids)?;
        let live = self.lib.parameter_count()
            + owned_init.iter().map(|m| m.parameter_count()).sum::<usize>();
        self.ledger.record_parameters(live);
        self.ledger.record_auxiliary_bytes(paths.len() as u64 * 8);

        let fit_seed = child_seed(seed, &[11, 0]);
        let entropy_weight = self.grid.entropy_weight;
        let mut total_flops = base_flops;
        let mut cand_flops = 0u64;
        let won = grid_search_gamma(&self.grid, |lr, wd, gamma_lr| {
            let mut owned = owned_init.clone();
            let ctx = FitContext::plain(&self.lib);
            let res = fit_stochastic(
                &ctx,
                &mut owned,
                &paths,
                data,
                lr,
                wd,
                gamma_lr,
                entropy_weight,
                &self.budget,
                fit_seed,
            )?;
            cand_flops += res.search_flops + res.fit.flops;
            Ok((res.fit.val_accuracy, (res, owned)))
        })?;
        total_flops += cand_flops;
        let (res, trained) = won.payload;
        let path = paths[res.chosen].clone();
        let params_added =
            path.modules.iter().filter(|id| fresh_ids.contains(id)).count();
        self.lib.attach_modules(trained)?;
        self.lib.commit_path(&path, task)?;
        self.ledger.record_parameters(self.lib.parameter_count());
        self.ledger.add_flops(total_flops);
        let test_accuracy = evaluate_accuracy(&self.lib, &path, &data.test)?;
        Ok(TaskOutcome {
            chosen_path: path,
            val_accuracy: res.fit.val_accuracy,
            test_accuracy,
            learning_curve: res.search_curve,
            params_added,
            flops_used: total_flops,
        })
    }
}

impl ContinualLearner for ModularLearner {
    fn learn_task(
        &mut self,
        task: usize,
        data: &LabeledDataset,
        seed: u64,
    ) -> Result<TaskOutcome> {
        if self.lib.task_path(task).is_some() {
            return Err(Error::Protocol(format!("task {task} was already learned")));
        }
        data.validate()?;
        if data.classes == 0 {
            return Err(Error::Invalid("task without classes".into()));
        }
        let (set, prior_flops) = self.plan_candidates(data, seed)?;
        let outcome = match self.strategy {
            SearchStrategy::PerCandidateGrid => {
                self.run_deterministic(task, data, seed, &set, prior_flops)?
            }
            // a single candidate makes the path distribution degenerate:
            // skip straight to plain fitting
            SearchStrategy::Stochastic if set.candidates.len() == 1 => {
                self.run_deterministic(task, data, seed, &set, prior_flops)?
            }
            SearchStrategy::Stochastic => {
                self.run_stochastic(task, data, seed, &set, prior_flops)?
            }
        };
        outcome.validate()?;
        self.lib.verify_frozen()?;
        Ok(outcome)
    }

    fn evaluate(&self, task: usize, split: &SplitData) -> Result<f64> {
        let path = self
            .lib
            .task_path(task)
            .ok_or_else(|| Error::Protocol(format!("task {task} was never learned")))?;
        evaluate_accuracy(&self.lib, path, split)
    }

    fn ledger(&self) -> &ResourceLedger {
        &self.ledger
    }

    fn verify_frozen(&self) -> Result<()> {
        self.lib.verify_frozen()
    }

    fn checkpoint(&self) -> Result<Vec<u8>> {
        Ok(encode_container(&[(SECTION_LIBRARY, encode_library(&self.lib))]))
    }
}
