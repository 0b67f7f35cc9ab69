//! The modular predictor substrate: per-layer module slots, path
//! composition, freeze-on-commit semantics, and the task→path registry.
//!
//! A path picks exactly one module per layer. Hidden layers apply
//! linear+ReLU, the final layer (the classification head) is linear only.
//! Committing a path for a task freezes every unfrozen module on it and
//! physically discards unfrozen modules that lost the search; frozen
//! parameters are immutable forever, which is what makes forgetting zero by
//! construction. A checksum of every module is recorded at freeze time so the
//! immutability claim can be audited at any later point.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn;
use crate::seed;

/// Identity of a module: layer index plus an ordinal that is never reused,
/// even after discarded candidates are removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModuleId {
    pub layer: usize,
    pub slot: usize,
}

impl std::fmt::Display for ModuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}/{}", self.layer, self.slot)
    }
}

#[derive(Debug, Clone)]
pub struct NeuralModule {
    pub id: ModuleId,
    weight: Matrix,
    bias: Vec<f64>,
    frozen: bool,
    origin_task: Option<usize>,
}

impl NeuralModule {
    pub fn new(id: ModuleId, weight: Matrix, bias: Vec<f64>) -> NeuralModule {
        NeuralModule { id, weight, bias, frozen: false, origin_task: None }
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn origin_task(&self) -> Option<usize> {
        self.origin_task
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Mutable parameter access; refused once frozen.
    pub fn params_mut(&mut self) -> Result<(&mut Matrix, &mut Vec<f64>)> {
        if self.frozen {
            return Err(Error::Frozen(format!("{} is frozen", self.id)));
        }
        Ok((&mut self.weight, &mut self.bias))
    }

    /// Overwrite parameters (same shapes); refused once frozen.
    pub fn set_params(&mut self, weight: Matrix, bias: Vec<f64>) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen(format!("{} is frozen", self.id)));
        }
        if weight.rows() != self.weight.rows()
            || weight.cols() != self.weight.cols()
            || bias.len() != self.bias.len()
        {
            return Err(Error::Dimension(format!("shape change on {}", self.id)));
        }
        self.weight = weight;
        self.bias = bias;
        Ok(())
    }

    pub(crate) fn freeze(&mut self, task: usize) {
        self.frozen = true;
        self.origin_task = Some(task);
    }

    /// Byte-level checksum of the parameters.
    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::with_capacity(8 * (self.weight.len() + self.bias.len()) + 16);
        bytes.extend_from_slice(&(self.weight.rows() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.weight.cols() as u64).to_le_bytes());
        for v in self.weight.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.bias {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        seed::fnv1a(&bytes)
    }
}

/// One module per layer, in depth order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub modules: Vec<ModuleId>,
}

impl Path {
    pub fn new(modules: Vec<ModuleId>) -> Path {
        Path { modules }
    }

    pub fn depth(&self) -> usize {
        self.modules.len()
    }
}

impl std::fmt::Display for Path {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.modules.iter().map(|m| m.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// Fixed widths of the architecture: layer 0 consumes `input_dim`, hidden
/// layers are `hidden_dim` wide, the head's width is the task's class count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
}

impl ArchShape {
    pub fn in_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    /// Fixed output width for non-head layers; the head takes the class count.
    pub fn hidden_out_dim(&self, layer: usize) -> Option<usize> {
        if layer + 1 == self.depth {
            None
        } else {
            Some(self.hidden_dim)
        }
    }
}

/// Anything that can resolve module ids: the library itself, or the library
/// overlaid with privately owned (detached) modules during candidate training.
pub trait ModuleSource {
    fn module(&self, id: ModuleId) -> Result<&NeuralModule>;
    fn depth(&self) -> usize;
}

#[derive(Debug, Clone)]
pub struct ModuleLibrary {
    shape: ArchShape,
    layers: Vec<Vec<NeuralModule>>,
    next_slot: Vec<usize>,
    task_paths: BTreeMap<usize, Path>,
    frozen_digests: BTreeMap<(usize, usize), u64>,
}

impl ModuleLibrary {
    pub fn new(shape: ArchShape) -> Result<ModuleLibrary> {
        if shape.depth == 0 || shape.input_dim == 0 || shape.hidden_dim == 0 {
            return Err(Error::Invalid(format!("degenerate architecture {shape:?}")));
        }
        Ok(ModuleLibrary {
            shape,
            layers: (0..shape.depth).map(|_| Vec::new()).collect(),
            next_slot: vec![0; shape.depth],
            task_paths: BTreeMap::new(),
            frozen_digests: BTreeMap::new(),
        })
    }

    pub fn shape(&self) -> ArchShape {
        self.shape
    }

    pub fn depth(&self) -> usize {
        self.shape.depth
    }

    pub fn layer_modules(&self, layer: usize) -> &[NeuralModule] {
        &self.layers[layer]
    }

    pub fn module(&self, id: ModuleId) -> Result<&NeuralModule> {
        self.layers
            .get(id.layer)
            .and_then(|l| l.iter().find(|m| m.id.slot == id.slot))
            .ok_or_else(|| Error::Path(format!("module {id} does not exist")))
    }

    /// Mutable module access; errors on frozen modules or missing ids.
    pub fn module_mut(&mut self, id: ModuleId) -> Result<&mut NeuralModule> {
        let m = self
            .layers
            .get_mut(id.layer)
            .and_then(|l| l.iter_mut().find(|m| m.id.slot == id.slot))
            .ok_or_else(|| Error::Path(format!("module {id} does not exist")))?;
        if m.frozen {
            return Err(Error::Frozen(format!("{id} is frozen")));
        }
        Ok(m)
    }

    /// Append a fresh, unfrozen, randomly initialized module.
    ///
    /// `out_dim` must equal the architecture's hidden width for non-head
    /// layers; for the head layer it is the class count of the task under
    /// search.
    pub fn spawn_new_module(&mut self, layer: usize, out_dim: usize, seed_val: u64) -> Result<ModuleId> {
        if layer >= self.shape.depth {
            return Err(Error::Invalid(format!(
                "layer {layer} out of range for depth {}",
                self.shape.depth
            )));
        }
        if let Some(fixed) = self.shape.hidden_out_dim(layer) {
            if out_dim != fixed {
                return Err(Error::Dimension(format!(
                    "layer {layer} emits width {fixed}, requested {out_dim}"
                )));
            }
        }
        if out_dim == 0 {
            return Err(Error::Invalid("zero-width module".into()));
        }
        let in_dim = self.shape.in_dim(layer);
        let id = ModuleId { layer, slot: self.next_slot[layer] };
        self.next_slot[layer] += 1;
        let mut r = seed::rng(seed_val);
        let weight = nn::glorot_uniform(in_dim, out_dim, &mut r);
        self.layers[layer].push(NeuralModule::new(id, weight, vec![0.0; out_dim]));
        Ok(id)
    }

    /// Hand the listed unfrozen modules to a trainer, removing them from the
    /// library. Candidate training owns its modules outright so parallel
    /// candidates can never alias trainable state.
    pub fn detach_unfrozen(&mut self, ids: &[ModuleId]) -> Result<Vec<NeuralModule>> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let layer = self
                .layers
                .get_mut(id.layer)
                .ok_or_else(|| Error::Path(format!("module {id} does not exist")))?;
            let pos = layer
                .iter()
                .position(|m| m.id.slot == id.slot)
                .ok_or_else(|| Error::Path(format!("module {id} does not exist")))?;
            if layer[pos].frozen {
                return Err(Error::Frozen(format!("cannot detach frozen {id}")));
            }
            out.push(layer.remove(pos));
        }
        Ok(out)
    }

    /// Return previously detached modules (trained in place).
    pub fn attach_modules(&mut self, modules: Vec<NeuralModule>) -> Result<()> {
        for m in modules {
            if m.frozen {
                return Err(Error::Invalid(format!("attaching frozen {}", m.id)));
            }
            if m.id.layer >= self.shape.depth {
                return Err(Error::Path(format!("module {} beyond depth", m.id)));
            }
            if self.layers[m.id.layer].iter().any(|e| e.id.slot == m.id.slot) {
                return Err(Error::Path(format!("module {} already present", m.id)));
            }
            if m.id.slot >= self.next_slot[m.id.layer] {
                return Err(Error::Path(format!("module {} was never spawned here", m.id)));
            }
            let layer = &mut self.layers[m.id.layer];
            let pos = layer.partition_point(|e| e.id.slot < m.id.slot);
            layer.insert(pos, m);
        }
        Ok(())
    }

    /// Validate that a path exists, is in depth order, and composes.
    pub fn validate_path(&self, path: &Path) -> Result<()> {
        if path.depth() != self.shape.depth {
            return Err(Error::Path(format!(
                "path of depth {} in a depth-{} library",
                path.depth(),
                self.shape.depth
            )));
        }
        let mut width = self.shape.input_dim;
        for (l, &id) in path.modules.iter().enumerate() {
            if id.layer != l {
                return Err(Error::Path(format!("module {id} at position {l}")));
            }
            let m = self.module(id)?;
            if m.in_dim() != width {
                return Err(Error::Path(format!(
                    "module {id} expects width {}, gets {width}",
                    m.in_dim()
                )));
            }
            width = m.out_dim();
        }
        Ok(())
    }

    /// Freeze the path's modules for `task`, discard every other unfrozen
    /// module, and register the path.
    pub fn commit_path(&mut self, path: &Path, task: usize) -> Result<()> {
        if self.task_paths.contains_key(&task) {
            return Err(Error::Protocol(format!("task {task} already committed")));
        }
        self.validate_path(path)?;
        for &id in &path.modules {
            let layer = &mut self.layers[id.layer];
            let m = layer.iter_mut().find(|m| m.id.slot == id.slot).expect("validated");
            if !m.frozen {
                m.freeze(task);
                let digest = m.digest();
                self.frozen_digests.insert((id.layer, id.slot), digest);
            }
        }
        for layer in &mut self.layers {
            layer.retain(|m| m.frozen);
        }
        self.task_paths.insert(task, path.clone());
        Ok(())
    }

    pub fn task_path(&self, task: usize) -> Option<&Path> {
        self.task_paths.get(&task)
    }

    pub fn committed_tasks(&self) -> Vec<usize> {
        self.task_paths.keys().copied().collect()
    }

    pub fn task_paths(&self) -> &BTreeMap<usize, Path> {
        &self.task_paths
    }

    /// Total live parameters across all modules currently in the library.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flatten().map(|m| m.parameter_count()).sum()
    }

    pub fn module_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn frozen_digests(&self) -> &BTreeMap<(usize, usize), u64> {
        &self.frozen_digests
    }

    /// Re-checksum every frozen module against its value at commit time.
    pub fn verify_frozen(&self) -> Result<()> {
        for ((layer, slot), recorded) in &self.frozen_digests {
            let id = ModuleId { layer: *layer, slot: *slot };
            let m = self.module(id)?;
            if m.digest() != *recorded {
                return Err(Error::Frozen(format!("{id} changed after freeze")));
            }
        }
        Ok(())
    }

    pub(crate) fn raw_next_slot(&self, layer: usize) -> usize {
        self.next_slot[layer]
    }

    pub(crate) fn restore(
        shape: ArchShape,
        layers: Vec<Vec<NeuralModule>>,
        next_slot: Vec<usize>,
        task_paths: BTreeMap<usize, Path>,
        frozen_digests: BTreeMap<(usize, usize), u64>,
    ) -> ModuleLibrary {
        ModuleLibrary { shape, layers, next_slot, task_paths, frozen_digests }
    }
}

impl ModuleSource for ModuleLibrary {
    fn module(&self, id: ModuleId) -> Result<&NeuralModule> {
        ModuleLibrary::module(self, id)
    }

    fn depth(&self) -> usize {
        self.shape.depth
    }
}

/// Library plus privately owned modules (typically detached fresh candidates).
pub struct OverlaySource<'a> {
    pub lib: &'a ModuleLibrary,
    pub owned: &'a [NeuralModule],
}

impl ModuleSource for OverlaySource<'_> {
    fn module(&self, id: ModuleId) -> Result<&NeuralModule> {
        if let Some(m) = self.owned.iter().find(|m| m.id == id) {
            return Ok(m);
        }
        self.lib.module(id)
    }

    fn depth(&self) -> usize {
        self.lib.depth()
    }
}

/// Per-layer activations retained for the backward pass, plus the logits.
///
/// `inputs[l]` is the batch fed into layer `l`. When training, inputs are
/// retained only from the shallowest unfrozen layer upward; nothing below it
/// ever needs a gradient.
pub struct PathActivations {
    pub inputs: Vec<Option<Matrix>>,
    pub logits: Matrix,
    boundary: usize,
}

impl PathActivations {
    /// Index of the shallowest layer with retained activations.
    pub fn boundary(&self) -> usize {
        self.boundary
    }
}

/// Gradients for the unfrozen modules of a path, in depth order.
pub struct PathGradients {
    pub entries: Vec<(ModuleId, Matrix, Vec<f64>)>,
}

/// Run a batch through a path. Hidden layers are linear+ReLU, the head is
/// linear. With `train` set, activations are retained for every layer at or
/// above the shallowest unfrozen module so [`backward_path`] can run.
pub fn forward_path<S: ModuleSource>(
    source: &S,
    path: &Path,
    input: &Matrix,
    train: bool,
) -> Result<PathActivations> {
    let depth = source.depth();
    if path.depth() != depth {
        return Err(Error::Path(format!("path depth {} vs library depth {depth}", path.depth())));
    }
    let boundary = if train {
        let mut b = depth;
        for (l, &id) in path.modules.iter().enumerate() {
            if !source.module(id)?.frozen() {
                b = l;
                break;
            }
        }
        b
    } else {
        depth
    };
    let mut inputs: Vec<Option<Matrix>> = vec![None; depth];
    let mut x = input.clone();
    for (l, &id) in path.modules.iter().enumerate() {
        let m = source.module(id)?;
        if m.in_dim() != x.cols() {
            return Err(Error::Path(format!(
                "module {id} expects width {}, gets {}",
                m.in_dim(),
                x.cols()
            )));
        }
        if l >= boundary {
            inputs[l] = Some(x.clone());
        }
        let z = nn::linear_forward(&x, m.weight(), m.bias())?;
        x = if l + 1 == depth { z } else { nn::relu_forward(&z) };
    }
    Ok(PathActivations { inputs, logits: x, boundary })
}

/// Backward through a path given the loss gradient w.r.t. the logits.
/// Produces parameter gradients for unfrozen modules only; frozen modules get
/// no entries (deeper frozen layers still pass the input gradient through).
pub fn backward_path<S: ModuleSource>(
    source: &S,
    path: &Path,
    acts: &PathActivations,
    loss_grad: &Matrix,
) -> Result<PathGradients> {
    let depth = source.depth();
    if acts.boundary >= depth {
        // nothing unfrozen, nothing to do
        return Ok(PathGradients { entries: Vec::new() });
    }
    let mut entries: Vec<(ModuleId, Matrix, Vec<f64>)> = Vec::new();
    let mut grad = loss_grad.clone();
    for l in (acts.boundary..depth).rev() {
        let id = path.modules[l];
        let m = source.module(id)?;
        let x = acts.inputs[l]
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("no training activations for layer {l}")))?;
        let g = nn::linear_backward(x, m.weight(), &grad)?;
        if !m.frozen() {
            entries.push((id, g.grad_weight, g.grad_bias));
        }
        if l > acts.boundary {
            // ReLU sits between layer l-1 and l; its output is exactly x.
            grad = nn::relu_backward_from_output(x, &g.grad_input)?;
        }
    }
    entries.reverse();
    Ok(PathGradients { entries })
}
