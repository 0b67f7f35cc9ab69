//! Training engine: minibatch Adam with patience-based early stopping, the
//! per-task hyperparameter grid, and the stochastic path-search loop that
//! trains module parameters and a path distribution side by side.
//!
//! Every entry point is deterministic given its seed: batch order, candidate
//! sampling and initialization replay bit for bit.

use std::collections::BTreeMap;

use crate::adam::{adam_step, AdamState};
use crate::data::{LabeledDataset, SplitData};
use crate::error::{Error, Result};
use crate::graph::{
    backward_path, forward_path, ModuleId, ModuleLibrary, ModuleSource, NeuralModule,
    OverlaySource, Path,
};
use crate::matrix::Matrix;
use crate::metrics::{account_flops, Phase};
use crate::nn;
use crate::prior::PathDistribution;
use crate::seed::{child_seed, rng};
use rand::Rng;

/// Iteration budget and evaluation cadence for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainBudget {
    pub batch_size: usize,
    /// Validation accuracy is checked every this many iterations.
    pub eval_every: usize,
    /// Stop once this many iterations pass without a validation improvement.
    pub patience: usize,
    pub max_iterations: usize,
    /// The learning curve records test accuracy after 0..=curve_batches
    /// updates.
    pub curve_batches: usize,
}

impl Default for TrainBudget {
    fn default() -> TrainBudget {
        TrainBudget {
            batch_size: 32,
            eval_every: 10,
            patience: 300,
            max_iterations: 5000,
            curve_batches: 5,
        }
    }
}

impl TrainBudget {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::Invalid(
                "batch_size, eval_every and patience must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::Invalid("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// The per-task search grid. Cells are visited in ascending (lr, wd) order
/// and selection uses strict improvement, so exact validation ties resolve
/// toward the lower learning rate, then the lower weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    /// Used only by the stochastic path search.
    pub gamma_learning_rates: Vec<f64>,
    pub entropy_weight: f64,
}

impl Default for HyperGrid {
    fn default() -> HyperGrid {
        HyperGrid {
            learning_rates: vec![1e-2, 1e-3],
            weight_decays: vec![0.0, 1e-5, 1e-4],
            gamma_learning_rates: vec![1e-2, 1e-3],
            entropy_weight: 1.0,
        }
    }
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.weight_decays.is_empty() {
            return Err(Error::Invalid("empty hyperparameter grid".into()));
        }
        for &lr in self.learning_rates.iter().chain(&self.gamma_learning_rates) {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Invalid(format!("learning rate {lr}")));
            }
        }
        for &wd in &self.weight_decays {
            if !(wd.is_finite() && wd >= 0.0) {
                return Err(Error::Invalid(format!("weight decay {wd}")));
            }
        }
        if !(self.entropy_weight.is_finite() && self.entropy_weight >= 0.0) {
            return Err(Error::Invalid(format!("entropy weight {}", self.entropy_weight)));
        }
        Ok(())
    }

    fn sorted(v: &[f64]) -> Vec<f64> {
        let mut s = v.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        s.dedup();
        s
    }

    /// (lr, wd) cells in ascending order.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &lr in &Self::sorted(&self.learning_rates) {
            for &wd in &Self::sorted(&self.weight_decays) {
                out.push((lr, wd));
            }
        }
        out
    }

    /// (lr, wd, gamma_lr) cells in ascending order.
    pub fn gamma_cells(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &lr in &Self::sorted(&self.learning_rates) {
            for &wd in &Self::sorted(&self.weight_decays) {
                for &glr in &Self::sorted(&self.gamma_learning_rates) {
                    out.push((lr, wd, glr));
                }
            }
        }
        out
    }
}

/// Quadratic pull toward anchored parameters, weighted per parameter:
/// gradient contribution λ·f⊙(θ−a) for every module with a registered term.
#[derive(Debug, Clone, Default)]
pub struct Penalty {
    pub lambda: f64,
    pub terms: BTreeMap<ModuleId, PenaltyTerm>,
}

#[derive(Debug, Clone)]
pub struct PenaltyTerm {
    pub fisher_w: Matrix,
    pub fisher_b: Vec<f64>,
    pub anchor_w: Matrix,
    pub anchor_b: Vec<f64>,
}

/// Frozen context and optional per-step extras for one training run.
pub struct FitContext<'a> {
    pub lib: &'a ModuleLibrary,
    pub penalty: Option<&'a Penalty>,
    /// Stored past examples; when present, every step trains on the current
    /// minibatch concatenated with an equally sized draw from here.
    pub replay: Option<&'a SplitData>,
}

impl<'a> FitContext<'a> {
    pub fn plain(lib: &'a ModuleLibrary) -> FitContext<'a> {
        FitContext { lib, penalty: None, replay: None }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Best validation accuracy (the restored snapshot's).
    pub val_accuracy: f64,
    pub best_iteration: usize,
    pub iterations: usize,
    /// (batches seen, test accuracy) for batches 0..=curve_batches.
    pub curve: Vec<(usize, f64)>,
    pub flops: u64,
}

/// Accuracy of a path on a split (evaluation mode).
pub fn evaluate_accuracy<S: ModuleSource>(
    source: &S,
    path: &Path,
    split: &SplitData,
) -> Result<f64> {
    let acts = forward_path(source, path, &split.inputs, false)?;
    Ok(nn::accuracy(&acts.logits, &split.labels))
}

/// Forward cost of one batch through a path.
pub fn forward_flops<S: ModuleSource>(source: &S, path: &Path, batch: usize) -> Result<u64> {
    let mut total = 0;
    for &id in &path.modules {
        let m = source.module(id)?;
        total += account_flops(m.in_dim(), m.out_dim(), batch, Phase::Forward);
    }
    Ok(total)
}

/// Backward cost: layers at or above the boundary participate.
pub fn backward_flops<S: ModuleSource>(
    source: &S,
    path: &Path,
    batch: usize,
    boundary: usize,
) -> Result<u64> {
    let mut total = 0;
    for &id in &path.modules[boundary.min(path.depth())..] {
        let m = source.module(id)?;
        total += account_flops(m.in_dim(), m.out_dim(), batch, Phase::Backward);
    }
    Ok(total)
}

struct ParamSnapshot {
    params: Vec<(ModuleId, Matrix, Vec<f64>)>,
}

fn snapshot_params(owned: &[NeuralModule]) -> ParamSnapshot {
    ParamSnapshot {
        params: owned
            .iter()
            .map(|m| (m.id, m.weight().clone(), m.bias().to_vec()))
            .collect(),
    }
}

fn restore_params(owned: &mut [NeuralModule], snap: &ParamSnapshot) -> Result<()> {
    for (id, w, b) in &snap.params {
        let m = owned
            .iter_mut()
            .find(|m| m.id == *id)
            .ok_or_else(|| Error::Protocol(format!("snapshot holds unknown module {id}")))?;
        m.set_params(w.clone(), b.clone())?;
    }
    Ok(())
}

/// Adam moments per module, split into weight and bias blocks.
struct Optimizer {
    states: BTreeMap<ModuleId, (AdamState, AdamState)>,
}

impl Optimizer {
    fn new() -> Optimizer {
        Optimizer { states: BTreeMap::new() }
    }

    /// Apply one update and return its flop cost.
    fn apply(
        &mut self,
        owned: &mut [NeuralModule],
        grads: &[(ModuleId, Matrix, Vec<f64>)],
        lr: f64,
        wd: f64,
        penalty: Option<&Penalty>,
    ) -> Result<u64> {
        let mut flops = 0;
        for (id, gw, gb) in grads {
            let m = owned
                .iter_mut()
                .find(|m| m.id == *id)
                .ok_or_else(|| Error::Protocol(format!("gradient for unowned module {id}")))?;
            let (in_dim, out_dim) = (m.in_dim(), m.out_dim());
            let mut gw = gw.clone();
            let mut gb = gb.clone();
            if let Some(p) = penalty {
                if let Some(term) = p.terms.get(id) {
                    let (w, b) = {
                        let (w, b) = m.params_mut()?;
                        (w.clone(), b.clone())
                    };
                    for i in 0..gw.len() {
                        gw.data_mut()[i] += p.lambda
                            * term.fisher_w.data()[i]
                            * (w.data()[i] - term.anchor_w.data()[i]);
                    }
                    for i in 0..gb.len() {
                        gb[i] += p.lambda * term.fisher_b[i] * (b[i] - term.anchor_b[i]);
                    }
                }
            }
            let (ws, bs) = self
                .states
                .entry(*id)
                .or_insert_with(|| (AdamState::new(in_dim * out_dim), AdamState::new(out_dim)));
            let (w, b) = m.params_mut()?;
            adam_step(w.data_mut(), gw.data(), ws, lr, wd)?;
            adam_step(b, &gb, bs, lr, wd)?;
            flops += account_flops(in_dim, out_dim, 0, Phase::AdamUpdate);
        }
        Ok(flops)
    }
}

/// One gradient step of `path` on the given batch. Returns the step's flops.
fn train_step<S: ModuleSource>(
    source: &S,
    path: &Path,
    batch_x: &Matrix,
    batch_y: &[usize],
) -> Result<(Vec<(ModuleId, Matrix, Vec<f64>)>, usize, u64)> {
    let acts = forward_path(source, path, batch_x, true)?;
    let loss = nn::softmax_cross_entropy(&acts.logits, batch_y)?;
    let grads = backward_path(source, path, &acts, &loss.grad)?;
    let flops = forward_flops(source, path, batch_x.rows())?
        + backward_flops(source, path, batch_x.rows(), acts.boundary())?;
    Ok((grads.entries, acts.boundary(), flops))
}

fn sample_batch(r: &mut rand_chacha::ChaCha8Rng, n: usize, size: usize) -> Vec<usize> {
    (0..size.min(n).max(1)).map(|_| r.gen_range(0..n)).collect()
}

/// Train the owned modules of `path` with Adam until the validation accuracy
/// stops improving for `budget.patience` iterations, then restore the
/// best-validation parameters. Records a short test-accuracy learning curve
/// (batch 0 = untrained) and every flop spent on training and validation.
pub fn fit_with_early_stopping(
    ctx: &FitContext,
    owned: &mut Vec<NeuralModule>,
    path: &Path,
    data: &LabeledDataset,
    lr: f64,
    wd: f64,
    budget: &TrainBudget,
    seed: u64,
) -> Result<FitResult> {
    budget.validate()?;
    if data.train.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let mut r = rng(seed);
    let mut opt = Optimizer::new();
    let mut flops: u64 = 0;

    let eval = |owned: &[NeuralModule], split: &SplitData| -> Result<f64> {
        let source = OverlaySource { lib: ctx.lib, owned };
        evaluate_accuracy(&source, path, split)
    };

    // batch 0: the untrained predictor
    let mut curve = vec![(0usize, eval(owned, &data.test)?)];
    let mut best_val = eval(owned, &data.val)?;
    flops += forward_flops(&OverlaySource { lib: ctx.lib, owned }, path, data.val.len())?;
    let mut best_iter = 0usize;
    let mut best_snap = snapshot_params(owned);
    let mut iterations = 0usize;

    for iter in 1..=budget.max_iterations {
        iterations = iter;
        let idx = sample_batch(&mut r, data.train.len(), budget.batch_size);
        let (mut bx, mut by) = data.train.batch(&idx);
        if let Some(buffer) = ctx.replay {
            if !buffer.is_empty() {
                let take = budget.batch_size.min(buffer.len());
                let ridx = rand::seq::index::sample(&mut r, buffer.len(), take).into_vec();
                let (rx, ry) = buffer.batch(&ridx);
                bx = bx.vstack(&rx)?;
                by.extend(ry);
            }
        }
        let (grads, _, step_flops) = {
            let source = OverlaySource { lib: ctx.lib, owned };
            train_step(&source, path, &bx, &by)?
        };
        flops += step_flops;
        flops += opt.apply(owned, &grads, lr, wd, ctx.penalty)?;

        if iter <= budget.curve_batches {
            curve.push((iter, eval(owned, &data.test)?));
        }
        if iter % budget.eval_every == 0 {
            let acc = eval(owned, &data.val)?;
            flops += forward_flops(&OverlaySource { lib: ctx.lib, owned }, path, data.val.len())?;
            if acc > best_val {
                best_val = acc;
                best_iter = iter;
                best_snap = snapshot_params(owned);
            }
            if iter - best_iter >= budget.patience {
                break;
            }
        }
    }
    restore_params(owned, &best_snap)?;
    Ok(FitResult { val_accuracy: best_val, best_iteration: best_iter, iterations, curve, flops })
}

/// Winning cell of a hyperparameter search.
#[derive(Debug, Clone)]
pub struct GridOutcome<T> {
    pub lr: f64,
    pub wd: f64,
    pub gamma_lr: Option<f64>,
    pub val_accuracy: f64,
    pub payload: T,
}

/// Run the closure once per (lr, wd) cell and keep the best validation
/// accuracy. Strict improvement + ascending cell order = ties resolve to the
/// lower learning rate, then the lower weight decay.
pub fn grid_search_task<T>(
    grid: &HyperGrid,
    mut run: impl FnMut(f64, f64) -> Result<(f64, T)>,
) -> Result<GridOutcome<T>> {
    grid.validate()?;
    let mut best: Option<GridOutcome<T>> = None;
    for (lr, wd) in grid.cells() {
        let (val, payload) = run(lr, wd)?;
        let better = best.as_ref().map_or(true, |b| val > b.val_accuracy);
        if better {
            best = Some(GridOutcome { lr, wd, gamma_lr: None, val_accuracy: val, payload });
        }
    }
    best.ok_or_else(|| Error::Invalid("empty grid".into()))
}

/// As [`grid_search_task`] but over (lr, wd, gamma_lr) cells.
pub fn grid_search_gamma<T>(
    grid: &HyperGrid,
    mut run: impl FnMut(f64, f64, f64) -> Result<(f64, T)>,
) -> Result<GridOutcome<T>> {
    grid.validate()?;
    let mut best: Option<GridOutcome<T>> = None;
    for (lr, wd, glr) in grid.gamma_cells() {
        let (val, payload) = run(lr, wd, glr)?;
        let better = best.as_ref().map_or(true, |b| val > b.val_accuracy);
        if better {
            best = Some(GridOutcome { lr, wd, gamma_lr: Some(glr), val_accuracy: val, payload });
        }
    }
    best.ok_or_else(|| Error::Invalid("empty grid".into()))
}

#[derive(Debug, Clone)]
pub struct StochasticResult {
    /// Index of the candidate the distribution settled on.
    pub chosen: usize,
    pub gamma: PathDistribution,
    /// First iteration at which the max path probability passed 0.99.
    pub converged_at: Option<usize>,
    /// Outcome of the final full-data fine-tune of the chosen path.
    pub fit: FitResult,
    /// Search-phase test curve of the current argmax path.
    pub search_curve: Vec<(usize, f64)>,
    pub search_flops: u64,
}

/// Stochastic path search: train candidate parameters and a categorical path
/// distribution in alternation. Odd iterations take a gradient step on a
/// sampled path using the first half of the training data; even iterations
/// update the distribution by policy gradient using the negative minibatch
/// loss on the second half as reward (entropy-regularized, EMA baseline).
/// Once one candidate holds more than 0.99 probability the distribution is
/// left alone. The argmax path is then fine-tuned on the full training set.
#[allow(clippy::too_many_arguments)]
pub fn fit_stochastic(
    ctx: &FitContext,
    owned: &mut Vec<NeuralModule>,
    paths: &[Path],
    data: &LabeledDataset,
    lr: f64,
    wd: f64,
    gamma_lr: f64,
    entropy_weight: f64,
    budget: &TrainBudget,
    seed: u64,
) -> Result<StochasticResult> {
    budget.validate()?;
    if paths.is_empty() {
        return Err(Error::Invalid("no candidate paths".into()));
    }
    if data.train.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let n = data.train.len();
    let (theta_half, gamma_half): (Vec<usize>, Vec<usize>) = if n < 2 {
        ((0..n).collect(), (0..n).collect())
    } else {
        ((0..n / 2).collect(), (n / 2..n).collect())
    };
    let theta_data = data.train.subset(&theta_half);
    let gamma_data = data.train.subset(&gamma_half);

    let mut r = rng(child_seed(seed, &[1]));
    let mut gamma = PathDistribution::new(paths.len())?;
    let mut opt = Optimizer::new();
    let mut baseline = 0.0f64;
    let mut baseline_set = false;
    let mut converged_at: Option<usize> = None;
    let mut search_flops: u64 = 0;

    let eval = |owned: &[NeuralModule], path: &Path, split: &SplitData| -> Result<f64> {
        let source = OverlaySource { lib: ctx.lib, owned };
        evaluate_accuracy(&source, path, split)
    };

    let mut search_curve =
        vec![(0usize, eval(owned, &paths[gamma.argmax()], &data.test)?)];
    let mut best_val = eval(owned, &paths[gamma.argmax()], &data.val)?;
    search_flops +=
        forward_flops(&OverlaySource { lib: ctx.lib, owned }, &paths[gamma.argmax()], data.val.len())?;
    let mut best_iter = 0usize;
    let mut best_snap = snapshot_params(owned);

    for iter in 1..=budget.max_iterations {
        let converged = converged_at.is_some();
        let k = gamma.sample(&mut r);
        let theta_turn = iter % 2 == 1 || converged;
        if theta_turn {
            let idx = sample_batch(&mut r, theta_data.len(), budget.batch_size);
            let (bx, by) = theta_data.batch(&idx);
            let (grads, _, step_flops) = {
                let source = OverlaySource { lib: ctx.lib, owned };
                train_step(&source, &paths[k], &bx, &by)?
            };
            search_flops += step_flops;
            search_flops += opt.apply(owned, &grads, lr, wd, ctx.penalty)?;
        } else {
            let idx = sample_batch(&mut r, gamma_data.len(), budget.batch_size);
            let (bx, by) = gamma_data.batch(&idx);
            let source = OverlaySource { lib: ctx.lib, owned };
            let acts = forward_path(&source, &paths[k], &bx, false)?;
            let loss = nn::softmax_cross_entropy(&acts.logits, &by)?;
            search_flops += forward_flops(&source, &paths[k], bx.rows())?;
            let reward = -loss.value;
            if !baseline_set {
                baseline = reward;
                baseline_set = true;
            }
            gamma.reinforce_step(k, reward - baseline, entropy_weight, gamma_lr)?;
            baseline = 0.9 * baseline + 0.1 * reward;
            if gamma.max_prob() > 0.99 {
                converged_at = Some(iter);
            }
        }

        if iter <= budget.curve_batches {
            search_curve.push((iter, eval(owned, &paths[gamma.argmax()], &data.test)?));
        }
        if iter % budget.eval_every == 0 {
            let acc = eval(owned, &paths[gamma.argmax()], &data.val)?;
            search_flops += forward_flops(
                &OverlaySource { lib: ctx.lib, owned },
                &paths[gamma.argmax()],
                data.val.len(),
            )?;
            if acc > best_val {
                best_val = acc;
                best_iter = iter;
                best_snap = snapshot_params(owned);
            }
            if iter - best_iter >= budget.patience {
                break;
            }
        }
    }
    restore_params(owned, &best_snap)?;

    let chosen = gamma.argmax();
    let fit = fit_with_early_stopping(
        ctx,
        owned,
        &paths[chosen],
        data,
        lr,
        wd,
        budget,
        child_seed(seed, &[2]),
    )?;
    Ok(StochasticResult { chosen, gamma, converged_at, fit, search_curve, search_flops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ArchShape;
    use crate::seed::fnv1a;

    fn toy_library(depth: usize, input: usize, hidden: usize) -> ModuleLibrary {
        ModuleLibrary::new(ArchShape { input_dim: input, hidden_dim: hidden, depth }).unwrap()
    }

    /// Two linearly separable 2-D blobs.
    fn separable_dataset(n: usize, seed: u64) -> LabeledDataset {
        let mut r = rng(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let cx = if y == 0 { -1.0 } else { 1.0 };
            rows.push(vec![
                cx + r.gen_range(-0.3..0.3),
                cx * 0.5 + r.gen_range(-0.3..0.3),
            ]);
            labels.push(y);
        }
        let split = |lo: usize, hi: usize| {
            SplitData::new(
                Matrix::from_rows(&rows[lo..hi].to_vec()).unwrap(),
                labels[lo..hi].to_vec(),
            )
            .unwrap()
        };
        let a = n * 6 / 10;
        let b = n * 8 / 10;
        LabeledDataset { train: split(0, a), val: split(a, b), test: split(b, n), classes: 2 }
    }

    fn spawn_fresh(lib: &mut ModuleLibrary, classes: usize, seed: u64) -> (Vec<NeuralModule>, Path) {
        let depth = lib.depth();
        let mut ids = Vec::new();
        for l in 0..depth {
            let out = if l + 1 == depth { classes } else { lib.shape().hidden_dim };
            ids.push(lib.spawn_new_module(l, out, child_seed(seed, &[l as u64])).unwrap());
        }
        let owned = lib.detach_unfrozen(&ids).unwrap();
        (owned, Path::new(ids))
    }

    #[test]
    fn grid_enumerates_cells_in_ascending_order() {
        let grid = HyperGrid::default();
        let cells = grid.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0], (1e-3, 0.0));
        assert_eq!(cells[5], (1e-2, 1e-4));
        for w in cells.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert_eq!(grid.gamma_cells().len(), 12);
    }

    #[test]
    fn grid_search_returns_the_argmax_cell() {
        let grid = HyperGrid::default();
        // injected oracle: a specific cell wins
        let best = grid_search_task(&grid, |lr, wd| {
            let score = if (lr, wd) == (1e-2, 1e-5) { 0.9 } else { 0.5 };
            Ok((score, (lr, wd)))
        })
        .unwrap();
        assert_eq!((best.lr, best.wd), (1e-2, 1e-5));
        assert_eq!(best.val_accuracy, 0.9);
    }

    #[test]
    fn grid_search_breaks_ties_toward_lower_lr_then_lower_wd() {
        let grid = HyperGrid::default();
        let best = grid_search_task(&grid, |lr, wd| Ok((0.5, (lr, wd)))).unwrap();
        assert_eq!((best.lr, best.wd), (1e-3, 0.0));
        // tie between two cells of one lr → lower wd
        let best = grid_search_task(&grid, |lr, wd| {
            let score = if lr == 1e-2 { 0.9 } else { 0.1 };
            Ok((score, wd))
        })
        .unwrap();
        assert_eq!((best.lr, best.wd), (1e-2, 0.0));
    }

    #[test]
    fn singleton_grid_returns_its_only_cell() {
        let grid = HyperGrid {
            learning_rates: vec![3e-3],
            weight_decays: vec![1e-5],
            ..HyperGrid::default()
        };
        let best = grid_search_task(&grid, |_, _| Ok((0.4, ()))).unwrap();
        assert_eq!((best.lr, best.wd), (3e-3, 1e-5));
    }

    #[test]
    fn separable_toy_data_reaches_high_validation_accuracy() {
        let mut lib = toy_library(2, 2, 8);
        let data = separable_dataset(100, 11);
        let (mut owned, path) = spawn_fresh(&mut lib, 2, 21);
        let budget = TrainBudget { max_iterations: 400, patience: 200, ..TrainBudget::default() };
        let ctx = FitContext::plain(&lib);
        let res =
            fit_with_early_stopping(&ctx, &mut owned, &path, &data, 1e-2, 0.0, &budget, 31)
                .unwrap();
        assert!(res.val_accuracy >= 0.95, "val accuracy {}", res.val_accuracy);
        assert!(res.flops > 0);
    }

    #[test]
    fn zero_progress_run_restores_the_initial_parameters() {
        let mut lib = toy_library(1, 2, 2);
        let data = separable_dataset(50, 13);
        let (mut owned, path) = spawn_fresh(&mut lib, 2, 23);
        let before: Vec<u64> = owned.iter().map(|m| m.digest()).collect();
        // lr = 0 → parameters never move → validation never improves
        let budget = TrainBudget {
            eval_every: 1,
            patience: 5,
            max_iterations: 100,
            ..TrainBudget::default()
        };
        let ctx = FitContext::plain(&lib);
        let res =
            fit_with_early_stopping(&ctx, &mut owned, &path, &data, 0.0, 0.0, &budget, 37).unwrap();
        assert_eq!(res.best_iteration, 0);
        assert_eq!(res.iterations, 5); // stopped by patience
        let after: Vec<u64> = owned.iter().map(|m| m.digest()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn identical_seeds_give_identical_parameters() {
        let run = || {
            let mut lib = toy_library(2, 2, 4);
            let data = separable_dataset(60, 17);
            let (mut owned, path) = spawn_fresh(&mut lib, 2, 29);
            let budget =
                TrainBudget { max_iterations: 60, patience: 60, ..TrainBudget::default() };
            let ctx = FitContext::plain(&lib);
            fit_with_early_stopping(&ctx, &mut owned, &path, &data, 1e-2, 1e-5, &budget, 41)
                .unwrap();
            let mut bytes = Vec::new();
            for m in &owned {
                for v in m.weight().data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                for v in m.bias() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            fnv1a(&bytes)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn curve_starts_untrained_and_has_increasing_batch_indices() {
        let mut lib = toy_library(2, 2, 4);
        let data = separable_dataset(60, 19);
        let (mut owned, path) = spawn_fresh(&mut lib, 2, 43);
        let init_acc = {
            let source = OverlaySource { lib: &lib, owned: &owned };
            evaluate_accuracy(&source, &path, &data.test).unwrap()
        };
        let budget = TrainBudget { max_iterations: 30, patience: 30, ..TrainBudget::default() };
        let ctx = FitContext::plain(&lib);
        let res =
            fit_with_early_stopping(&ctx, &mut owned, &path, &data, 1e-2, 0.0, &budget, 47)
                .unwrap();
        assert_eq!(res.curve.len(), 6);
        assert_eq!(res.curve[0], (0, init_acc));
        for (i, (b, acc)) in res.curve.iter().enumerate() {
            assert_eq!(*b, i);
            assert!((0.0..=1.0).contains(acc));
        }
    }

    #[test]
    fn strong_quadratic_penalty_pins_parameters_to_the_anchor() {
        let mut lib = toy_library(1, 2, 2);
        let data = separable_dataset(50, 23);
        let (mut owned, path) = spawn_fresh(&mut lib, 2, 53);
        let anchor_w = owned[0].weight().clone();
        let anchor_b = owned[0].bias().to_vec();
        let term = PenaltyTerm {
            fisher_w: Matrix::from_fn(anchor_w.rows(), anchor_w.cols(), |_, _| 1.0),
            fisher_b: vec![1.0; anchor_b.len()],
            anchor_w: anchor_w.clone(),
            anchor_b: anchor_b.clone(),
        };
        let mut terms = BTreeMap::new();
        terms.insert(owned[0].id, term);
        let penalty = Penalty { lambda: 1e6, terms };
        let ctx = FitContext { lib: &lib, penalty: Some(&penalty), replay: None };
        let budget = TrainBudget { max_iterations: 200, patience: 200, ..TrainBudget::default() };
        fit_with_early_stopping(&ctx, &mut owned, &path, &data, 1e-2, 0.0, &budget, 59).unwrap();
        for (a, b) in owned[0].weight().data().iter().zip(anchor_w.data()) {
            assert!((a - b).abs() < 0.05, "{a} strayed from anchor {b}");
        }
    }

    #[test]
    fn replay_batches_are_mixed_into_every_step() {
        // current task data holds only class 0; class 1 exists solely in the
        // replay buffer, so above-chance accuracy proves the mixing happens.
        // Orthogonal class means keep one-class gradients uninformative about
        // the other class (antipodal blobs would leak through -logit pushes).
        let mut lib = toy_library(1, 2, 2);
        let full = {
            let mut r = rng(29);
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for i in 0..120 {
                let y = i % 2;
                let (cx, cy) = if y == 0 { (1.0, 0.0) } else { (0.0, 1.0) };
                rows.push(vec![cx + r.gen_range(-0.2..0.2), cy + r.gen_range(-0.2..0.2)]);
                labels.push(y);
            }
            let split = |lo: usize, hi: usize| {
                SplitData::new(
                    Matrix::from_rows(&rows[lo..hi].to_vec()).unwrap(),
                    labels[lo..hi].to_vec(),
                )
                .unwrap()
            };
            LabeledDataset { train: split(0, 72), val: split(72, 96), test: split(96, 120), classes: 2 }
        };
        let zeros: Vec<usize> =
            (0..full.train.len()).filter(|&i| full.train.labels[i] == 0).collect();
        let ones: Vec<usize> =
            (0..full.train.len()).filter(|&i| full.train.labels[i] == 1).collect();
        let data = LabeledDataset {
            train: full.train.subset(&zeros),
            val: full.val.clone(),
            test: full.test.clone(),
            classes: 2,
        };
        let buffer = full.train.subset(&ones);
        let budget = TrainBudget { max_iterations: 150, patience: 150, ..TrainBudget::default() };
        // start from an always-predicts-0 head so only replay can surface
        // class 1 (gradients from class-0-only batches never will)
        let rig = |m: &mut NeuralModule| {
            m.set_params(Matrix::zeros(2, 2), vec![1.0, 0.0]).unwrap();
        };

        let (mut plain_owned, path) = spawn_fresh(&mut lib, 2, 61);
        rig(&mut plain_owned[0]);
        let ctx = FitContext::plain(&lib);
        let plain =
            fit_with_early_stopping(&ctx, &mut plain_owned, &path, &data, 1e-2, 0.0, &budget, 67)
                .unwrap();

        let (mut replay_owned, path2) = spawn_fresh(&mut lib, 2, 61);
        rig(&mut replay_owned[0]);
        let ctx = FitContext { lib: &lib, penalty: None, replay: Some(&buffer) };
        let replayed =
            fit_with_early_stopping(&ctx, &mut replay_owned, &path2, &data, 1e-2, 0.0, &budget, 67)
                .unwrap();
        assert!(replayed.val_accuracy >= 0.9, "with replay {}", replayed.val_accuracy);
        assert!(plain.val_accuracy <= 0.6, "class-0-only training {}", plain.val_accuracy);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let mut lib = toy_library(1, 2, 2);
        let (mut owned, path) = spawn_fresh(&mut lib, 2, 71);
        let empty = SplitData::new(Matrix::zeros(0, 2), vec![]).unwrap();
        let data = LabeledDataset {
            train: empty.clone(),
            val: empty.clone(),
            test: empty,
            classes: 2,
        };
        let ctx = FitContext::plain(&lib);
        let err = fit_with_early_stopping(
            &ctx,
            &mut owned,
            &path,
            &data,
            1e-2,
            0.0,
            &TrainBudget::default(),
            73,
        );
        assert!(err.is_err());
    }

    #[test]
    fn stochastic_with_one_candidate_reduces_to_plain_fitting() {
        let mut lib = toy_library(2, 2, 6);
        let data = separable_dataset(100, 31);
        let (mut owned, path) = spawn_fresh(&mut lib, 2, 79);
        let budget = TrainBudget { max_iterations: 500, patience: 300, ..TrainBudget::default() };
        let ctx = FitContext::plain(&lib);
        let res = fit_stochastic(
            &ctx,
            &mut owned,
            &[path],
            &data,
            1e-2,
            0.0,
            1e-2,
            1.0,
            &budget,
            83,
        )
        .unwrap();
        assert_eq!(res.chosen, 0);
        let p = res.gamma.probabilities();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(res.fit.val_accuracy >= 0.95, "val {}", res.fit.val_accuracy);
    }

    #[test]
    fn rigged_candidate_pair_concentrates_the_path_distribution() {
        // candidate 0: frozen trunk that projects onto a class-blind
        // direction at huge scale: through any nonzero head its logits are
        // confidently wrong, and the bounded optimizer step cannot shrink
        // the shared head fast enough to hedge. candidate 1: frozen trunk
        // that passes the (shifted) inputs through. The reward gap is tens
        // of nats, so the path distribution must collapse onto candidate 1.
        let mut lib = toy_library(2, 2, 2);
        // freeze each trunk by committing a throwaway task over it before the
        // next spawn (committing discards any unfrozen leftovers)
        let bad_trunk = lib.spawn_new_module(0, 2, 997).unwrap();
        {
            let m = lib.module_mut(bad_trunk).unwrap();
            // class centers differ along (2,1); rows are the coefficients of
            // x0 and x1, so both features read 100·(x0 − 2·x1) + 300: pure
            // noise with respect to the labels, magnitude in the hundreds
            let s = 100.0;
            let w = Matrix::from_rows(&[vec![s, s], vec![-2.0 * s, -2.0 * s]]).unwrap();
            m.set_params(w, vec![300.0, 300.0]).unwrap();
        }
        let h0 = lib.spawn_new_module(1, 2, 1000).unwrap();
        lib.commit_path(&Path::new(vec![bad_trunk, h0]), 0).unwrap();
        let good_trunk = lib.spawn_new_module(0, 2, 998).unwrap();
        {
            let m = lib.module_mut(good_trunk).unwrap();
            let eye = Matrix::from_fn(2, 2, |r, c| if r == c { 1.0 } else { 0.0 });
            m.set_params(eye, vec![2.0, 2.0]).unwrap(); // keep inputs in relu's linear zone
        }
        let h1 = lib.spawn_new_module(1, 2, 1001).unwrap();
        lib.commit_path(&Path::new(vec![good_trunk, h1]), 1).unwrap();
        let shared_head = lib.spawn_new_module(1, 2, 1002).unwrap();
        let mut owned = lib.detach_unfrozen(&[shared_head]).unwrap();

        let paths =
            vec![Path::new(vec![bad_trunk, shared_head]), Path::new(vec![good_trunk, shared_head])];
        let data = separable_dataset(120, 37);
        let budget = TrainBudget {
            max_iterations: 1200,
            patience: 1200,
            eval_every: 50,
            ..TrainBudget::default()
        };
        let ctx = FitContext::plain(&lib);
        let res = fit_stochastic(
            &ctx,
            &mut owned,
            &paths,
            &data,
            1e-2,
            0.0,
            1e-2,
            1.0,
            &budget,
            89,
        )
        .unwrap();
        assert_eq!(res.chosen, 1, "gamma: {:?}", res.gamma.probabilities());
        assert!(res.gamma.max_prob() > 0.99, "max prob {}", res.gamma.max_prob());
        assert!(res.converged_at.is_some());
    }

    #[test]
    fn stochastic_runs_are_seed_deterministic() {
        let run = || {
            let mut lib = toy_library(2, 2, 4);
            let data = separable_dataset(80, 41);
            let (mut owned, path) = spawn_fresh(&mut lib, 2, 91);
            let budget =
                TrainBudget { max_iterations: 80, patience: 80, ..TrainBudget::default() };
            let ctx = FitContext::plain(&lib);
            let res = fit_stochastic(
                &ctx,
                &mut owned,
                &[path],
                &data,
                1e-2,
                0.0,
                1e-2,
                1.0,
                &budget,
                93,
            )
            .unwrap();
            (res.fit.val_accuracy.to_bits(), res.gamma.logits().to_vec())
        };
        assert_eq!(run(), run());
    }
}
