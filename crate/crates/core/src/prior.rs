//! Task-similarity prior and restricted candidate enumeration.
//!
//! Before training a new task, we ask which past predictor's features already
//! organize the new data best: for every committed task we push the new
//! training set through that task's trunk, fit a brute-force k-nearest-
//! neighbour classifier on the resulting features, and score it on the new
//! validation split. The winner's path seeds the search space.
//!
//! The search space itself is deliberately tiny: candidates may reuse a
//! frozen *prefix* of the source path and must be fresh from the branch point
//! down (the head is always fresh). That yields exactly `depth` candidates
//! regardless of how many tasks or modules the library holds.

use crate::data::SplitData;
use crate::error::{Error, Result};
use crate::graph::{ModuleId, ModuleLibrary, ModuleSource, Path};
use crate::matrix::Matrix;
use crate::nn;
use crate::seed::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// How widely the candidate enumeration looks at past paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorBreadth {
    /// Branch-right set of the single best-matching past path.
    Top1,
    /// Union of branch-right sets over every past task, best match first.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskAffinity {
    pub past_task: usize,
    pub knn_accuracy: f64,
}

/// One slot of a candidate: reuse a committed module or spawn a fresh one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotSpec {
    Reuse(ModuleId),
    Fresh,
}

/// A candidate architecture: one slot per layer. Reused slots always form a
/// prefix (possibly empty) and everything after the branch point is fresh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSpec {
    pub slots: Vec<SlotSpec>,
}

impl CandidateSpec {
    pub fn all_new(depth: usize) -> CandidateSpec {
        CandidateSpec { slots: vec![SlotSpec::Fresh; depth] }
    }

    /// Number of reused layers (the frozen prefix length).
    pub fn reused_prefix(&self) -> usize {
        self.slots.iter().take_while(|s| matches!(s, SlotSpec::Reuse(_))).count()
    }

    pub fn is_all_new(&self) -> bool {
        self.reused_prefix() == 0
    }

    pub fn fresh_layers(&self) -> usize {
        self.slots.len() - self.reused_prefix()
    }

    /// The reused module ids, in layer order.
    pub fn reused_ids(&self) -> Vec<ModuleId> {
        self.slots
            .iter()
            .filter_map(|s| match s {
                SlotSpec::Reuse(id) => Some(*id),
                SlotSpec::Fresh => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub candidates: Vec<CandidateSpec>,
    /// Best-matching past task, if any existed.
    pub source_task: Option<usize>,
}

/// Activations feeding the classification head: the features the similarity
/// prior compares tasks in. A depth-1 path has no trunk, so the features are
/// the raw inputs.
pub fn extract_features<S: ModuleSource>(
    source: &S,
    path: &Path,
    inputs: &Matrix,
) -> Result<Matrix> {
    let depth = source.depth();
    if path.depth() != depth {
        return Err(Error::Path(format!("path depth {} vs library depth {depth}", path.depth())));
    }
    let mut x = inputs.clone();
    for &id in &path.modules[..depth - 1] {
        let m = source.module(id)?;
        if m.in_dim() != x.cols() {
            return Err(Error::Path(format!(
                "module {id} expects width {}, gets {}",
                m.in_dim(),
                x.cols()
            )));
        }
        let z = nn::linear_forward(&x, m.weight(), m.bias())?;
        x = nn::relu_forward(&z);
    }
    Ok(x)
}

/// Brute-force k-nearest-neighbour classification (Euclidean distance).
///
/// Deterministic throughout: neighbours are ordered by (distance, index), and
/// a vote tie goes to the tied class with the nearest neighbour.
pub fn knn_classify(
    train: &Matrix,
    labels: &[usize],
    queries: &Matrix,
    k: usize,
) -> Result<Vec<usize>> {
    if train.rows() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} training rows but {} labels",
            train.rows(),
            labels.len()
        )));
    }
    if train.rows() == 0 {
        return Err(Error::Invalid("empty reference set".into()));
    }
    if train.cols() != queries.cols() {
        return Err(Error::Dimension(format!(
            "reference width {} vs query width {}",
            train.cols(),
            queries.cols()
        )));
    }
    let k = k.min(train.rows()).max(1);
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut out = Vec::with_capacity(queries.rows());
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(train.rows());
    for q in 0..queries.rows() {
        let qr = queries.row(q);
        dists.clear();
        for i in 0..train.rows() {
            let d2: f64 = train.row(i).iter().zip(qr).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push((d2, i));
        }
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; classes];
        let mut first_seen = vec![usize::MAX; classes];
        for (rank, &(_, idx)) in dists.iter().take(k).enumerate() {
            let y = labels[idx];
            votes[y] += 1;
            if first_seen[y] == usize::MAX {
                first_seen[y] = rank;
            }
        }
        let mut best = 0;
        for c in 1..classes {
            let better = votes[c] > votes[best]
                || (votes[c] == votes[best] && first_seen[c] < first_seen[best]);
            if better {
                best = c;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Rank every committed task by how well the new data separates in its
/// feature space: fit k-NN on the new training features, score on the new
/// validation features. Ties go to the most recent task. An empty library
/// yields an empty ranking (the caller falls back to an all-new path).
pub fn closest_task(
    lib: &ModuleLibrary,
    train: &SplitData,
    val: &SplitData,
    n_neighbors: usize,
) -> Result<Vec<TaskAffinity>> {
    let tasks = lib.committed_tasks();
    if tasks.is_empty() {
        return Ok(Vec::new());
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Invalid("similarity ranking needs nonempty train and val".into()));
    }
    let mut ranking = Vec::with_capacity(tasks.len());
    for task in tasks {
        let path = lib.task_path(task).expect("committed");
        let train_feats = extract_features(lib, path, &train.inputs)?;
        let val_feats = extract_features(lib, path, &val.inputs)?;
        let pred = knn_classify(&train_feats, &train.labels, &val_feats, n_neighbors)?;
        let correct = pred.iter().zip(&val.labels).filter(|(a, b)| a == b).count();
        let knn_accuracy = correct as f64 / val.labels.len() as f64;
        ranking.push(TaskAffinity { past_task: task, knn_accuracy });
    }
    // descending accuracy; ties → most recent task first
    ranking.sort_by(|a, b| {
        b.knn_accuracy
            .partial_cmp(&a.knn_accuracy)
            .expect("finite")
            .then(b.past_task.cmp(&a.past_task))
    });
    Ok(ranking)
}

/// The branch-right perturbations of one source path, most reuse first:
/// prefix lengths depth−1 down to 0, head always fresh.
fn branch_right_set(source: &Path) -> Vec<CandidateSpec> {
    let depth = source.depth();
    (0..depth)
        .rev()
        .map(|prefix| {
            let slots = (0..depth)
                .map(|l| {
                    if l < prefix {
                        SlotSpec::Reuse(source.modules[l])
                    } else {
                        SlotSpec::Fresh
                    }
                })
                .collect();
            CandidateSpec { slots }
        })
        .collect()
}

/// Enumerate the candidate set for a new task given the similarity ranking.
/// With no past tasks the set is the single all-new path. Candidates are
/// ordered most-reuse-first (argmax selection with strict improvement then
/// prefers the cheaper architecture on exact ties).
pub fn candidate_paths(
    lib: &ModuleLibrary,
    ranking: &[TaskAffinity],
    breadth: PriorBreadth,
) -> Result<CandidateSet> {
    if ranking.is_empty() {
        return Ok(CandidateSet {
            candidates: vec![CandidateSpec::all_new(lib.depth())],
            source_task: None,
        });
    }
    let source_task = ranking[0].past_task;
    let sources: Vec<usize> = match breadth {
        PriorBreadth::Top1 => vec![source_task],
        PriorBreadth::All => ranking.iter().map(|a| a.past_task).collect(),
    };
    let mut candidates: Vec<CandidateSpec> = Vec::new();
    for task in sources {
        let path = lib
            .task_path(task)
            .ok_or_else(|| Error::Path(format!("no committed path for task {task}")))?;
        for spec in branch_right_set(path) {
            if !candidates.contains(&spec) {
                candidates.push(spec);
            }
        }
    }
    Ok(CandidateSet { candidates, source_task: Some(source_task) })
}

/// Ablation prior: ignore the data and pick a past task uniformly at random.
pub fn random_prior(lib: &ModuleLibrary, seed: u64) -> Result<usize> {
    let tasks = lib.committed_tasks();
    if tasks.is_empty() {
        return Err(Error::Invalid("no committed tasks to choose from".into()));
    }
    let mut r = rng(seed);
    Ok(tasks[r.gen_range(0..tasks.len())])
}

/// Categorical distribution over a candidate set, parameterized by logits.
///
/// Updated by score-function gradient ascent: the chosen candidate's reward
/// advantage reweights the softmax, and an entropy bonus keeps exploration
/// alive until one candidate genuinely dominates.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDistribution {
    logits: Vec<f64>,
}

impl PathDistribution {
    pub fn new(n: usize) -> Result<PathDistribution> {
        if n == 0 {
            return Err(Error::Invalid("distribution over zero candidates".into()));
        }
        Ok(PathDistribution { logits: vec![0.0; n] })
    }

    pub fn from_logits(logits: Vec<f64>) -> Result<PathDistribution> {
        if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("logits must be nonempty and finite".into()));
        }
        Ok(PathDistribution { logits })
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let max = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.logits.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|&e| e / sum).collect()
    }

    pub fn sample(&self, r: &mut ChaCha8Rng) -> usize {
        let p = self.probabilities();
        let u: f64 = r.gen();
        let mut acc = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    }

    /// Highest-probability candidate; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.logits.len() {
            if self.logits[i] > self.logits[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_prob(&self) -> f64 {
        let p = self.probabilities();
        p.iter().cloned().fold(0.0, f64::max)
    }

    pub fn entropy(&self) -> f64 {
        self.probabilities().iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
    }

    /// One ascent step on `advantage·log p(chosen) + entropy_weight·H`.
    pub fn reinforce_step(
        &mut self,
        chosen: usize,
        advantage: f64,
        entropy_weight: f64,
        lr: f64,
    ) -> Result<()> {
        if chosen >= self.logits.len() {
            return Err(Error::Invalid(format!("candidate {chosen} out of range")));
        }
        let p = self.probabilities();
        let h = self.entropy();
        for j in 0..self.logits.len() {
            let indicator = if j == chosen { 1.0 } else { 0.0 };
            let score = advantage * (indicator - p[j]);
            // d/dz_j of −Σ p ln p
            let ln_pj = if p[j] > 0.0 { p[j].ln() } else { 0.0 };
            let ent = -p[j] * (ln_pj + h);
            self.logits[j] += lr * (score + entropy_weight * ent);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{forward_path, ArchShape};
    use crate::nn::gradcheck::{central_diff, rel_err};
    use crate::seed::child_seed;

    fn library(depth: usize, input: usize, hidden: usize) -> ModuleLibrary {
        ModuleLibrary::new(ArchShape { input_dim: input, hidden_dim: hidden, depth }).unwrap()
    }

    /// Commit an all-new path for `task`, optionally overriding parameters.
    fn commit_fresh(
        lib: &mut ModuleLibrary,
        task: usize,
        classes: usize,
        params: Option<&dyn Fn(usize) -> (Matrix, Vec<f64>)>,
    ) -> Path {
        let depth = lib.depth();
        let mut ids = Vec::new();
        for l in 0..depth {
            let out = if l + 1 == depth { classes } else { lib.shape().hidden_dim };
            let id = lib.spawn_new_module(l, out, child_seed(900 + task as u64, &[l as u64])).unwrap();
            if let Some(f) = params {
                let (w, b) = f(l);
                lib.module_mut(id).unwrap().set_params(w, b).unwrap();
            }
            ids.push(id);
        }
        let path = Path::new(ids);
        lib.commit_path(&path, task).unwrap();
        path
    }

    #[test]
    fn depth_one_features_are_the_raw_inputs() {
        let mut lib = library(1, 3, 3);
        let path = commit_fresh(&mut lib, 0, 4, None);
        let x = Matrix::from_rows(&[vec![0.1, -0.2, 0.3], vec![1.0, 2.0, 3.0]]).unwrap();
        let f = extract_features(&lib, &path, &x).unwrap();
        assert_eq!(f, x);
    }

    #[test]
    fn identity_trunk_features_equal_relu_of_input() {
        let mut lib = library(3, 4, 4);
        let eye = |_: usize| (Matrix::from_fn(4, 4, |r, c| if r == c { 1.0 } else { 0.0 }), vec![0.0; 4]);
        let path = commit_fresh(&mut lib, 0, 4, Some(&eye));
        let x = Matrix::from_rows(&[vec![0.5, -1.0, 2.0, -0.1]]).unwrap();
        let f = extract_features(&lib, &path, &x).unwrap();
        assert_eq!(f.row(0), &[0.5, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn features_match_the_head_input_of_a_training_forward_pass() {
        let mut lib = library(3, 5, 6);
        // keep the path uncommitted so a training-mode pass retains all inputs
        let mut ids = Vec::new();
        for l in 0..3 {
            let out = if l == 2 { 4 } else { 6 };
            ids.push(lib.spawn_new_module(l, out, 77 + l as u64).unwrap());
        }
        let path = Path::new(ids);
        let x = Matrix::from_fn(3, 5, |r, c| (r as f64 - c as f64) * 0.37);
        let acts = forward_path(&lib, &path, &x, true).unwrap();
        let f = extract_features(&lib, &path, &x).unwrap();
        assert_eq!(&f, acts.inputs[2].as_ref().unwrap());
    }

    #[test]
    fn knn_matches_a_hand_worked_example() {
        // 1-D points: class 0 at {0.0, 0.1}, class 1 at {1.0, 1.1, 1.2}
        let train = Matrix::from_rows(&[vec![0.0], vec![0.1], vec![1.0], vec![1.1], vec![1.2]]).unwrap();
        let labels = vec![0, 0, 1, 1, 1];
        let queries = Matrix::from_rows(&[vec![0.05], vec![1.05], vec![0.56]]).unwrap();
        // k=3 around 0.05: neighbours {0.0, 0.1, 1.0} → votes 2:1 → class 0
        // around 1.05: {1.0, 1.1, 1.2} → class 1
        // at 0.56: distances 0.44/0.46/0.54 → {1.0, 0.1, 1.1} → 2:1 → class 1
        let pred = knn_classify(&train, &labels, &queries, 3).unwrap();
        assert_eq!(pred, vec![0, 1, 1]);
    }

    #[test]
    fn knn_vote_tie_goes_to_the_nearer_class() {
        // k=2: one neighbour each; class of the strictly closer point wins
        let train = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let labels = vec![1, 0]; // nearer point carries class 1
        let queries = Matrix::from_rows(&[vec![0.3]]).unwrap();
        let pred = knn_classify(&train, &labels, &queries, 2).unwrap();
        assert_eq!(pred, vec![1]);
    }

    #[test]
    fn knn_caps_k_at_the_reference_size() {
        let train = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let labels = vec![0, 1];
        let queries = Matrix::from_rows(&[vec![0.1]]).unwrap();
        let pred = knn_classify(&train, &labels, &queries, 5).unwrap();
        assert_eq!(pred, vec![0]);
    }

    /// Two committed tasks whose trunks project onto disjoint coordinate
    /// pairs; the current data separates only in the second pair.
    fn projection_library() -> (ModuleLibrary, SplitData, SplitData) {
        let mut lib = library(2, 4, 2);
        let proj = |lo: usize| {
            move |l: usize| {
                if l == 0 {
                    (Matrix::from_fn(4, 2, |r, c| if r == lo + c { 1.0 } else { 0.0 }), vec![0.0; 2])
                } else {
                    (Matrix::from_fn(2, 3, |_, _| 0.0), vec![0.0; 3])
                }
            }
        };
        commit_fresh(&mut lib, 0, 3, Some(&proj(0)));
        commit_fresh(&mut lib, 1, 3, Some(&proj(2)));
        // class signal lives in coordinates 2,3; coordinates 0,1 are constant
        let mk = |centers: &[(f64, f64)], n: usize| {
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for i in 0..n {
                let y = i % centers.len();
                let (a, b) = centers[y];
                let jitter = (i / centers.len()) as f64 * 0.01;
                rows.push(vec![0.5, 0.5, a + jitter, b - jitter]);
                labels.push(y);
            }
            SplitData::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap()
        };
        let centers = [(0.1, 0.1), (0.9, 0.9), (0.1, 0.9)];
        (lib, mk(&centers, 30), mk(&centers, 12))
    }

    #[test]
    fn closest_task_prefers_the_feature_space_that_separates() {
        let (lib, train, val) = projection_library();
        let ranking = closest_task(&lib, &train, &val, 5).unwrap();
        assert_eq!(ranking.len(), 2);
        assert_eq!(ranking[0].past_task, 1);
        assert!(ranking[0].knn_accuracy > ranking[1].knn_accuracy);
        assert!((ranking[0].knn_accuracy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closest_task_breaks_exact_ties_toward_the_recent_task() {
        let mut lib = library(2, 4, 2);
        let zero = |_: usize| (Matrix::from_fn(4, 2, |_, _| 0.0), vec![0.0; 2]);
        let zero_head = |l: usize| {
            if l == 0 {
                (Matrix::from_fn(4, 2, |_, _| 0.0), vec![0.0; 2])
            } else {
                (Matrix::from_fn(2, 3, |_, _| 0.0), vec![0.0; 3])
            }
        };
        let _ = zero;
        commit_fresh(&mut lib, 0, 3, Some(&zero_head));
        commit_fresh(&mut lib, 1, 3, Some(&zero_head));
        let x = Matrix::from_fn(10, 4, |r, c| ((r * 7 + c) % 5) as f64 / 5.0);
        let train = SplitData::new(x.clone(), (0..10).map(|i| i % 2).collect()).unwrap();
        let val = SplitData::new(x, (0..10).map(|i| i % 2).collect()).unwrap();
        let ranking = closest_task(&lib, &train, &val, 5).unwrap();
        // both trunks map everything to the origin → identical accuracy
        assert_eq!(ranking[0].knn_accuracy, ranking[1].knn_accuracy);
        assert_eq!(ranking[0].past_task, 1);
    }

    #[test]
    fn empty_library_ranks_nothing_and_yields_one_all_new_candidate() {
        let lib = library(3, 4, 4);
        let train = SplitData::new(Matrix::from_fn(4, 4, |_, _| 0.5), vec![0, 1, 0, 1]).unwrap();
        let ranking = closest_task(&lib, &train, &train, 5).unwrap();
        assert!(ranking.is_empty());
        let set = candidate_paths(&lib, &ranking, PriorBreadth::Top1).unwrap();
        assert_eq!(set.candidates.len(), 1);
        assert!(set.candidates[0].is_all_new());
        assert_eq!(set.source_task, None);
    }

    #[test]
    fn branch_right_enumeration_matches_the_rule() {
        let mut lib = library(3, 4, 4);
        let path = commit_fresh(&mut lib, 0, 5, None);
        let ranking = vec![TaskAffinity { past_task: 0, knn_accuracy: 0.9 }];
        let set = candidate_paths(&lib, &ranking, PriorBreadth::Top1).unwrap();
        assert_eq!(set.candidates.len(), 3);
        assert_eq!(set.source_task, Some(0));
        // most reuse first: [m0,m1,n], [m0,n,n], [n,n,n]
        assert_eq!(set.candidates[0].reused_ids(), vec![path.modules[0], path.modules[1]]);
        assert_eq!(set.candidates[1].reused_ids(), vec![path.modules[0]]);
        assert!(set.candidates[2].is_all_new());
        for c in &set.candidates {
            // branch-right: reused slots form a prefix; the head is fresh
            let p = c.reused_prefix();
            assert!(c.slots[p..].iter().all(|s| matches!(s, SlotSpec::Fresh)));
            assert!(matches!(c.slots.last().unwrap(), SlotSpec::Fresh));
        }
    }

    #[test]
    fn candidate_count_stays_at_depth_regardless_of_library_size() {
        let mut lib = library(4, 4, 4);
        for t in 0..6 {
            commit_fresh(&mut lib, t, 5, None);
        }
        let ranking = vec![TaskAffinity { past_task: 3, knn_accuracy: 0.8 }];
        let set = candidate_paths(&lib, &ranking, PriorBreadth::Top1).unwrap();
        assert_eq!(set.candidates.len(), 4);
    }

    #[test]
    fn breadth_all_unions_and_dedupes() {
        let mut lib = library(2, 4, 4);
        commit_fresh(&mut lib, 0, 5, None);
        commit_fresh(&mut lib, 1, 5, None);
        let ranking = vec![
            TaskAffinity { past_task: 1, knn_accuracy: 0.9 },
            TaskAffinity { past_task: 0, knn_accuracy: 0.2 },
        ];
        let set = candidate_paths(&lib, &ranking, PriorBreadth::All).unwrap();
        // per source: [reuse trunk, all-new]; the all-new candidate dedupes
        assert_eq!(set.candidates.len(), 3);
        assert_eq!(set.source_task, Some(1));
        assert_eq!(set.candidates[0].reused_ids(), vec![lib.task_path(1).unwrap().modules[0]]);
        assert_eq!(set.candidates[2].reused_ids(), vec![lib.task_path(0).unwrap().modules[0]]);
    }

    #[test]
    fn random_prior_is_uniform_and_deterministic() {
        let mut lib = library(2, 4, 4);
        for t in 0..4 {
            commit_fresh(&mut lib, t, 5, None);
        }
        assert_eq!(random_prior(&lib, 5).unwrap(), random_prior(&lib, 5).unwrap());
        let mut counts = [0usize; 4];
        for s in 0..10_000u64 {
            counts[random_prior(&lib, s).unwrap()] += 1;
        }
        for &c in &counts {
            assert!((2350..=2650).contains(&c), "counts {counts:?}");
        }
    }

    #[test]
    fn random_prior_on_empty_library_is_an_error() {
        let lib = library(2, 4, 4);
        assert!(random_prior(&lib, 1).is_err());
    }

    #[test]
    fn probabilities_sum_to_one_even_for_extreme_logits() {
        let d = PathDistribution::from_logits(vec![1000.0, -1000.0, 999.5]).unwrap();
        let p = d.probabilities();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let u = PathDistribution::new(4).unwrap();
        assert!((u.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((u.max_prob() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let mut r = rng(314);
        for _ in 0..50 {
            let n = 2 + (rand::Rng::gen_range(&mut r, 0..4) as usize);
            let logits: Vec<f64> =
                (0..n).map(|_| rand::Rng::gen_range(&mut r, -2.0..2.0)).collect();
            let d = PathDistribution::from_logits(logits.clone()).unwrap();
            let p = d.probabilities();
            let h = d.entropy();
            for j in 0..n {
                let analytic = -p[j] * (p[j].ln() + h);
                let mut z = logits.clone();
                let numeric = central_diff(
                    &mut |v: f64| {
                        z[j] = v;
                        PathDistribution::from_logits(z.clone()).unwrap().entropy()
                    },
                    logits[j],
                    1e-5,
                );
                assert!(rel_err(analytic, numeric) < 1e-6, "{analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn expected_score_gradient_matches_expected_reward_derivative() {
        // E_{k~p}[ (r_k − b)(δ_jk − p_j) ] must equal d/dz_j Σ_k p_k r_k for
        // any baseline b; check the analytic identity against finite
        // differences of the softmax-weighted reward.
        let mut r = rng(2718);
        for _ in 0..50 {
            let n = 2 + (rand::Rng::gen_range(&mut r, 0..4) as usize);
            let logits: Vec<f64> =
                (0..n).map(|_| rand::Rng::gen_range(&mut r, -2.0..2.0)).collect();
            let rewards: Vec<f64> =
                (0..n).map(|_| rand::Rng::gen_range(&mut r, -3.0..3.0)).collect();
            let baseline: f64 = rand::Rng::gen_range(&mut r, -1.0..1.0);
            let d = PathDistribution::from_logits(logits.clone()).unwrap();
            let p = d.probabilities();
            for j in 0..n {
                let expected_score: f64 = (0..n)
                    .map(|k| {
                        let ind = if k == j { 1.0 } else { 0.0 };
                        p[k] * (rewards[k] - baseline) * (ind - p[j])
                    })
                    .sum();
                let mut z = logits.clone();
                let numeric = central_diff(
                    &mut |v: f64| {
                        z[j] = v;
                        let q = PathDistribution::from_logits(z.clone()).unwrap().probabilities();
                        q.iter().zip(&rewards).map(|(qi, ri)| qi * ri).sum::<f64>()
                    },
                    logits[j],
                    1e-5,
                );
                assert!(rel_err(expected_score, numeric) < 1e-6);
            }
        }
    }

    #[test]
    fn ascent_with_unit_entropy_converges_to_the_boltzmann_weights() {
        // fixed rewards r = [0, 2]: the stationary point of ascent on
        // Σ p r + H is p ∝ exp(r), i.e. p[1] = σ(2) ≈ 0.8808
        let rewards = [0.0, 2.0];
        let mut d = PathDistribution::new(2).unwrap();
        let mut r = rng(99);
        let mut baseline = 0.0;
        for step in 0..60_000 {
            let k = d.sample(&mut r);
            let reward = rewards[k];
            if step == 0 {
                baseline = reward;
            }
            d.reinforce_step(k, reward - baseline, 1.0, 0.05).unwrap();
            baseline = 0.9 * baseline + 0.1 * reward;
        }
        let p = d.probabilities();
        let target = (2.0f64).exp() / (1.0 + (2.0f64).exp());
        assert!((p[1] - target).abs() < 0.05, "p={p:?} target={target}");
    }

    #[test]
    fn sampling_is_seed_deterministic_and_respects_support() {
        let d = PathDistribution::from_logits(vec![0.0, 3.0, -1.0]).unwrap();
        let mut r1 = rng(7);
        let mut r2 = rng(7);
        let a: Vec<usize> = (0..100).map(|_| d.sample(&mut r1)).collect();
        let b: Vec<usize> = (0..100).map(|_| d.sample(&mut r2)).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|&k| k < 3));
        assert_eq!(d.argmax(), 1);
    }
}
