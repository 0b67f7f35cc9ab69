//! Learners that keep one never-frozen network and keep training it.
//!
//! All three variants share the mechanics: a single trunk serves every task,
//! each new task continues training from the previous task's parameters, and
//! the classification head is swapped per task only when the class count
//! changes (with a constant class count the head too is fully shared). What
//! differs is the anti-forgetting extra:
//!
//! * [`SharedVariant::Plain`]: nothing, past tasks degrade freely.
//! * [`SharedVariant::Ewc`]: a quadratic penalty pulls parameters toward
//!   anchors, weighted by an accumulated squared-gradient curvature estimate.
//! * [`SharedVariant::Replay`]: a small stored sample of past tasks is mixed
//!   into every minibatch.

use std::collections::BTreeMap;

use crate::data::{LabeledDataset, SplitData};
use crate::error::{Error, Result};
use crate::graph::{
    backward_path, forward_path, ArchShape, ModuleId, ModuleLibrary, NeuralModule,
    OverlaySource, Path,
};
use crate::matrix::Matrix;
use crate::metrics::ResourceLedger;
use crate::nn;
use crate::seed::{child_seed, rng};
use crate::snapshot::{encode_container, ByteWriter};
use crate::train::{
    backward_flops, evaluate_accuracy, fit_with_early_stopping, forward_flops,
    grid_search_task, FitContext, HyperGrid, Penalty, PenaltyTerm, TrainBudget,
};

use super::{
    ContinualLearner, TaskOutcome, SECTION_BUFFER, SECTION_PENALTY, SECTION_SHARED_NET,
};

/// The anti-forgetting mechanism of a shared-network learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SharedVariant {
    Plain,
    Ewc { lambda: f64 },
    Replay { per_class: usize },
}

/// One shared network trained across the whole stream.
pub struct SharedLearner {
    /// Id factory and shape authority; owns no modules (they live detached in
    /// `modules` so they are never frozen).
    lib: ModuleLibrary,
    modules: Vec<NeuralModule>,
    trunk: Vec<ModuleId>,
    /// Heads in creation order; the most recent one is reused while the
    /// class count matches.
    heads: Vec<ModuleId>,
    task_heads: BTreeMap<usize, ModuleId>,
    variant: SharedVariant,
    penalty: Option<Penalty>,
    buffer: Option<SplitData>,
    grid: HyperGrid,
    budget: TrainBudget,
    ledger: ResourceLedger,
}

impl SharedLearner {
    pub fn new(
        shape: ArchShape,
        variant: SharedVariant,
        grid: HyperGrid,
        budget: TrainBudget,
    ) -> Result<SharedLearner> {
        grid.validate()?;
        budget.validate()?;
        let penalty = match variant {
            SharedVariant::Ewc { lambda } => {
                if !(lambda.is_finite() && lambda >= 0.0) {
                    return Err(Error::Invalid(format!("penalty strength {lambda}")));
                }
                Some(Penalty { lambda, terms: BTreeMap::new() })
            }
            SharedVariant::Replay { per_class } => {
                if per_class == 0 {
                    return Err(Error::Invalid("replay capacity must be positive".into()));
                }
                None
            }
            SharedVariant::Plain => None,
        };
        Ok(SharedLearner {
            lib: ModuleLibrary::new(shape)?,
            modules: Vec::new(),
            trunk: Vec::new(),
            heads: Vec::new(),
            task_heads: BTreeMap::new(),
            variant,
            penalty,
            buffer: None,
            grid,
            budget,
            ledger: ResourceLedger::new(),
        })
    }

    pub fn variant(&self) -> SharedVariant {
        self.variant
    }

    /// The accumulated penalty state, when the variant keeps one.
    pub fn penalty(&self) -> Option<&Penalty> {
        self.penalty.as_ref()
    }

    /// The stored replay examples, when the variant keeps them.
    pub fn buffer(&self) -> Option<&SplitData> {
        self.buffer.as_ref()
    }

    pub fn modules(&self) -> &[NeuralModule] {
        &self.modules
    }

    fn module(&self, id: ModuleId) -> Result<&NeuralModule> {
        self.modules
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| Error::Protocol(format!("module {id} is not held here")))
    }

    fn path_for_head(&self, head: ModuleId) -> Path {
        let mut ids = self.trunk.clone();
        ids.push(head);
        Path::new(ids)
    }

    /// The path serving `task`, if the task was learned.
    pub fn task_path(&self, task: usize) -> Option<Path> {
        self.task_heads.get(&task).map(|&h| self.path_for_head(h))
    }

    /// Mean squared single-example gradient on the task's training data,
    /// added onto the running curvature estimate; anchors move to the
    /// just-trained parameters. Returns the flops spent.
    fn accumulate_penalty(&mut self, path: &Path, train: &SplitData) -> Result<u64> {
        let mut acc: BTreeMap<ModuleId, (Matrix, Vec<f64>)> = BTreeMap::new();
        let mut flops = 0u64;
        let n = train.len() as f64;
        for i in 0..train.len() {
            let (x, y) = train.batch(&[i]);
            let source = OverlaySource { lib: &self.lib, owned: &self.modules };
            let acts = forward_path(&source, path, &x, true)?;
            let loss = nn::softmax_cross_entropy(&acts.logits, &y)?;
            let grads = backward_path(&source, path, &acts, &loss.grad)?;
            flops += forward_flops(&source, path, 1)?;
            flops += backward_flops(&source, path, 1, acts.boundary())?;
            for (id, gw, gb) in grads.entries {
                let entry = acc.entry(id).or_insert_with(|| {
                    (Matrix::zeros(gw.rows(), gw.cols()), vec![0.0; gb.len()])
                });
                for (d, g) in entry.0.data_mut().iter_mut().zip(gw.data()) {
                    *d += g * g / n;
                }
                for (d, g) in entry.1.iter_mut().zip(&gb) {
                    *d += g * g / n;
                }
            }
        }
        let penalty = self.penalty.as_mut().expect("regularized variant");
        for (id, (fw, fb)) in acc {
            let m = self
                .modules
                .iter()
                .find(|m| m.id == id)
                .ok_or_else(|| Error::Protocol(format!("gradient for unheld module {id}")))?;
            let term = penalty.terms.entry(id).or_insert_with(|| PenaltyTerm {
                fisher_w: Matrix::zeros(fw.rows(), fw.cols()),
                fisher_b: vec![0.0; fb.len()],
                anchor_w: m.weight().clone(),
                anchor_b: m.bias().to_vec(),
            });
            for (t, f) in term.fisher_w.data_mut().iter_mut().zip(fw.data()) {
                *t += f;
            }
            for (t, f) in term.fisher_b.iter_mut().zip(&fb) {
                *t += f;
            }
            term.anchor_w = m.weight().clone();
            term.anchor_b = m.bias().to_vec();
        }
        // curvature + anchor: two extra stored values per tracked parameter
        let tracked: usize =
            penalty.terms.values().map(|t| t.fisher_w.len() + t.fisher_b.len()).sum();
        self.ledger.record_auxiliary_bytes(16 * tracked as u64);
        Ok(flops)
    }

    /// Store up to `per_class` uniformly chosen training examples per class.
    fn refill_buffer(
        &mut self,
        data: &LabeledDataset,
        per_class: usize,
        seed: u64,
    ) -> Result<()> {
        let mut r = rng(child_seed(seed, &[13]));
        let train = &data.train;
        let mut picked: Vec<usize> = Vec::new();
        for c in 0..data.classes {
            let members: Vec<usize> =
                (0..train.len()).filter(|&i| train.labels[i] == c).collect();
            let take = per_class.min(members.len());
            if take == 0 {
                continue;
            }
            let sel = rand::seq::index::sample(&mut r, members.len(), take);
            picked.extend(sel.iter().map(|j| members[j]));
        }
        let addition = train.subset(&picked);
        self.buffer = Some(match self.buffer.take() {
            None => addition,
            Some(b) => SplitData {
                inputs: b.inputs.vstack(&addition.inputs)?,
                labels: b.labels.into_iter().chain(addition.labels).collect(),
            },
        });
        let b = self.buffer.as_ref().expect("just set");
        self.ledger.record_auxiliary_bytes((b.len() * b.inputs.cols() * 8) as u64);
        Ok(())
    }
}

impl ContinualLearner for SharedLearner {
    fn learn_task(
        &mut self,
        task: usize,
        data: &LabeledDataset,
        seed: u64,
    ) -> Result<TaskOutcome> {
        if self.task_heads.contains_key(&task) {
            return Err(Error::Protocol(format!("task {task} was already learned")));
        }
        data.validate()?;
        if data.classes == 0 {
            return Err(Error::Invalid("task without classes".into()));
        }
        let depth = self.lib.depth();
        let mut params_added = 0usize;
        if self.trunk.is_empty() && depth > 1 {
            for l in 0..depth - 1 {
                let id = self.lib.spawn_new_module(
                    l,
                    self.lib.shape().hidden_dim,
                    child_seed(seed, &[10, 0, l as u64]),
                )?;
                self.trunk.push(id);
            }
            let detached = self.lib.detach_unfrozen(&self.trunk.clone())?;
            self.modules.extend(detached);
            params_added += self.trunk.len();
        }
        let head = match self.heads.last() {
            Some(&h) if self.module(h)?.out_dim() == data.classes => h,
            _ => {
                let id = self.lib.spawn_new_module(
                    depth - 1,
                    data.classes,
                    child_seed(seed, &[10, 0, (depth - 1) as u64]),
                )?;
                let detached = self.lib.detach_unfrozen(&[id])?;
                self.modules.extend(detached);
                self.heads.push(id);
                params_added += 1;
                id
            }
        };
        self.task_heads.insert(task, head);
        let path = self.path_for_head(head);
        let live: usize = self.modules.iter().map(|m| m.parameter_count()).sum();
        self.ledger.record_parameters(live);

        let start: Vec<NeuralModule> = self.modules.clone();
        let fit_seed = child_seed(seed, &[11, 0]);
        let mut total_flops = 0u64;
        let won = {
            let lib = &self.lib;
            let penalty = self.penalty.as_ref();
            let buffer = self.buffer.as_ref().filter(|b| !b.is_empty());
            let budget = &self.budget;
            grid_search_task(&self.grid, |lr, wd| {
                let mut owned = start.clone();
                let ctx = FitContext { lib, penalty, replay: buffer };
                let fit = fit_with_early_stopping(
                    &ctx, &mut owned, &path, data, lr, wd, budget, fit_seed,
                )?;
                total_flops += fit.flops;
                Ok((fit.val_accuracy, (fit, owned)))
            })?
        };
        let (fit, trained) = won.payload;
        self.modules = trained;

        match self.variant {
            SharedVariant::Plain => {}
            SharedVariant::Ewc { .. } => {
                total_flops += self.accumulate_penalty(&path, &data.train)?;
            }
            SharedVariant::Replay { per_class } => {
                self.refill_buffer(data, per_class, seed)?;
            }
        }
        self.ledger.add_flops(total_flops);

        let source = OverlaySource { lib: &self.lib, owned: &self.modules };
        let test_accuracy = evaluate_accuracy(&source, &path, &data.test)?;
        let outcome = TaskOutcome {
            chosen_path: path,
            val_accuracy: won.val_accuracy,
            test_accuracy,
            learning_curve: fit.curve,
            params_added,
            flops_used: total_flops,
        };
        outcome.validate()?;
        Ok(outcome)
    }

    fn evaluate(&self, task: usize, split: &SplitData) -> Result<f64> {
        let path = self
            .task_path(task)
            .ok_or_else(|| Error::Protocol(format!("task {task} was never learned")))?;
        let source = OverlaySource { lib: &self.lib, owned: &self.modules };
        evaluate_accuracy(&source, &path, split)
    }

    fn ledger(&self) -> &ResourceLedger {
        &self.ledger
    }

    fn checkpoint(&self) -> Result<Vec<u8>> {
        let mut sections: Vec<(u32, Vec<u8>)> = Vec::new();

        let mut w = ByteWriter::new();
        w.u32(self.modules.len() as u32);
        for m in &self.modules {
            w.u32(m.id.layer as u32);
            w.u32(m.id.slot as u32);
            w.u32(m.in_dim() as u32);
            w.u32(m.out_dim() as u32);
            w.f64_slice(m.weight().data());
            w.f64_slice(m.bias());
        }
        w.u32(self.trunk.len() as u32);
        for id in &self.trunk {
            w.u32(id.layer as u32);
            w.u32(id.slot as u32);
        }
        w.u32(self.task_heads.len() as u32);
        for (&task, head) in &self.task_heads {
            w.u32(task as u32);
            w.u32(head.layer as u32);
            w.u32(head.slot as u32);
        }
        sections.push((SECTION_SHARED_NET, w.into_vec()));

        if let Some(p) = &self.penalty {
            let mut w = ByteWriter::new();
            w.f64(p.lambda);
            w.u32(p.terms.len() as u32);
            for (id, term) in &p.terms {
                w.u32(id.layer as u32);
                w.u32(id.slot as u32);
                w.u32(term.fisher_w.rows() as u32);
                w.u32(term.fisher_w.cols() as u32);
                w.f64_slice(term.fisher_w.data());
                w.f64_slice(&term.fisher_b);
                w.f64_slice(term.anchor_w.data());
                w.f64_slice(&term.anchor_b);
            }
            sections.push((SECTION_PENALTY, w.into_vec()));
        }

        if let Some(b) = &self.buffer {
            let mut w = ByteWriter::new();
            w.u32(b.inputs.rows() as u32);
            w.u32(b.inputs.cols() as u32);
            w.f64_slice(b.inputs.data());
            for &y in &b.labels {
                w.u32(y as u32);
            }
            sections.push((SECTION_BUFFER, w.into_vec()));
        }

        Ok(encode_container(&sections))
    }
}
