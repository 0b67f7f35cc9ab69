//! Synthetic task streams with controllable relatedness.
//!
//! Inputs are 64-dimensional vectors. Each generative family owns a disjoint
//! 8-coordinate block; a class is a fixed prototype inside that block (a
//! repetition-coded bit pattern, so any two classes of a family sit more than
//! 6σ apart) plus isotropic Gaussian noise. Cross-family tasks are unrelated
//! by construction, same-family tasks share exactly the structure a reusable
//! feature extractor can exploit.
//!
//! Six templates are built on top of this: a big first task revisited at the
//! end with less data (S-), the reverse (S+), an input-shifted revisit (Sin,
//! recolored background block), an output-shifted revisit (Sout, permuted
//! labels), five unrelated tasks ending big (Spl), and a long stream that
//! grows increasingly dominated by tiny tasks (Slong).

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, SplitData};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::{child_seed, rng};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const INPUT_DIM: usize = 64;
pub const FAMILY_BLOCK: usize = 8;
/// Families 0..6 carry class information; block 7 is the shared "background".
pub const FAMILY_COUNT: usize = 7;
pub const BACKGROUND_BLOCK: usize = 7;
pub const CLASSES_PER_FAMILY: usize = 16;
pub const NOISE_SIGMA: f64 = 0.15;
pub const DEFAULT_WAYS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamKind {
    #[serde(rename = "S-")]
    Minus,
    #[serde(rename = "S+")]
    Plus,
    #[serde(rename = "Sin")]
    In,
    #[serde(rename = "Sout")]
    Out,
    #[serde(rename = "Spl")]
    Plasticity,
    #[serde(rename = "Slong")]
    Long,
}

impl StreamKind {
    pub fn parse(s: &str) -> Result<StreamKind> {
        match s.to_ascii_lowercase().as_str() {
            "s-" | "sminus" | "s_minus" => Ok(StreamKind::Minus),
            "s+" | "splus" | "s_plus" => Ok(StreamKind::Plus),
            "sin" | "s_in" => Ok(StreamKind::In),
            "sout" | "s_out" => Ok(StreamKind::Out),
            "spl" | "s_pl" => Ok(StreamKind::Plasticity),
            "slong" | "s_long" => Ok(StreamKind::Long),
            other => Err(Error::Invalid(format!(
                "unknown stream kind '{other}' (expected S-, S+, Sin, Sout, Spl or Slong)"
            ))),
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            StreamKind::Minus => "S-",
            StreamKind::Plus => "S+",
            StreamKind::In => "Sin",
            StreamKind::Out => "Sout",
            StreamKind::Plasticity => "Spl",
            StreamKind::Long => "Slong",
        }
    }

    /// Streams ending in a revisited/probe task for which transfer is reported.
    pub fn has_transfer_metric(&self) -> bool {
        !matches!(self, StreamKind::Long)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Paper,
    Desk,
}

impl Scale {
    pub fn parse(s: &str) -> Result<Scale> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::Invalid(format!("unknown scale '{other}' (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputTransform {
    None,
    /// Add a constant offset (derived from the seed) to the background block.
    Recolor { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelTransform {
    None,
    /// Bijective relabeling derived from the seed (never the identity).
    Permutation { seed: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub family: usize,
    /// Ordered class subset of the family; position = label index.
    pub classes: Vec<usize>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub input_transform: InputTransform,
    pub label_transform: LabelTransform,
}

impl TaskSpec {
    pub fn ways(&self) -> usize {
        self.classes.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stream {
    pub kind: StreamKind,
    pub scale: Scale,
    pub seed: u64,
    pub tasks: Vec<TaskSpec>,
}

struct Sizes {
    big: (usize, usize),
    small: (usize, usize),
    tiny: (usize, usize),
    test: usize,
    long_tasks: usize,
    long_big: (usize, usize),
    // tiny tasks of the long stream keep their absolute size at every scale;
    // a tenth of 25 samples would no longer be a task
    long_small: (usize, usize),
}

fn sizes(scale: Scale) -> Sizes {
    match scale {
        Scale::Paper => Sizes {
            big: (4000, 2000),
            small: (400, 200),
            tiny: (50, 30),
            test: 2500,
            long_tasks: 100,
            long_big: (5000, 2500),
            long_small: (25, 15),
        },
        Scale::Desk => Sizes {
            big: (400, 200),
            small: (40, 20),
            tiny: (5, 3),
            test: 250,
            long_tasks: 20,
            long_big: (500, 250),
            long_small: (25, 15),
        },
    }
}

/// Fixed prototype for (family, class): a ±-coded bit pattern on the family's
/// 8-coordinate block, each bit written twice, all other coordinates zero.
/// Distinct classes of a family differ in at least two coordinates, hence a
/// prototype distance of at least 0.9·√2 > 6σ.
pub fn prototype(family: usize, class: usize) -> Result<Vec<f64>> {
    if family >= FAMILY_COUNT {
        return Err(Error::Invalid(format!("family {family} out of range")));
    }
    if class >= CLASSES_PER_FAMILY {
        return Err(Error::Invalid(format!("class {class} out of range")));
    }
    let mut p = vec![0.0; INPUT_DIM];
    let base = family * FAMILY_BLOCK;
    for j in 0..FAMILY_BLOCK {
        let bit = (class >> (j / 2)) & 1;
        p[base + j] = if bit == 1 { 0.95 } else { 0.05 };
    }
    Ok(p)
}

/// One sample: prototype plus N(0, σ²) noise on every coordinate, clipped to
/// [0,1]. Fully determined by (family, class, seed).
pub fn gen_family_sample(family: usize, class: usize, seed: u64) -> Result<Vec<f64>> {
    let proto = prototype(family, class)?;
    let mut r = rng(child_seed(seed, &[family as u64, class as u64]));
    let normal = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    Ok(proto
        .iter()
        .map(|&p| (p + normal.sample(&mut r)).clamp(0.0, 1.0))
        .collect())
}

/// Derived label permutation; never the identity for 2+ classes.
pub fn permutation_for(seed: u64, ways: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..ways).collect();
    perm.shuffle(&mut rng(seed));
    if ways > 1 && perm.iter().enumerate().all(|(i, &p)| i == p) {
        perm.rotate_left(1);
    }
    perm
}

/// Derived background offset for the recolor transform.
pub fn recolor_offset(seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..FAMILY_BLOCK).map(|_| r.gen_range(0.2..0.8)).collect()
}

/// Apply the task's input/label transforms to a generated dataset.
pub fn apply_transforms(spec: &TaskSpec, mut data: LabeledDataset) -> LabeledDataset {
    if let InputTransform::Recolor { seed } = spec.input_transform {
        let offset = recolor_offset(seed);
        let base = BACKGROUND_BLOCK * FAMILY_BLOCK;
        for split in [&mut data.train, &mut data.val, &mut data.test] {
            for row in 0..split.inputs.rows() {
                let r = split.inputs.row_mut(row);
                for (j, &o) in offset.iter().enumerate() {
                    r[base + j] += o;
                }
            }
        }
    }
    if let LabelTransform::Permutation { seed } = spec.label_transform {
        let perm = permutation_for(seed, spec.ways());
        for split in [&mut data.train, &mut data.val, &mut data.test] {
            for y in &mut split.labels {
                *y = perm[*y];
            }
        }
    }
    data
}

fn generate_split(spec: &TaskSpec, stream_seed: u64, split_idx: u64, n: usize) -> SplitData {
    let ways = spec.ways();
    let mut data = Vec::with_capacity(n * INPUT_DIM);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % ways;
        let class = spec.classes[label];
        let s = child_seed(stream_seed, &[spec.task_id as u64, split_idx, i as u64]);
        let x = gen_family_sample(spec.family, class, s).expect("spec validated");
        data.extend_from_slice(&x);
        labels.push(label);
    }
    SplitData { inputs: Matrix::from_vec(n, INPUT_DIM, data).expect("well-formed"), labels }
}

/// Generate one task's dataset (transforms applied).
pub fn generate_dataset(spec: &TaskSpec, stream_seed: u64) -> LabeledDataset {
    let raw = LabeledDataset {
        train: generate_split(spec, stream_seed, 0, spec.n_train),
        val: generate_split(spec, stream_seed, 1, spec.n_val),
        test: generate_split(spec, stream_seed, 2, spec.n_test),
        classes: spec.ways(),
    };
    apply_transforms(spec, raw)
}

fn pick_classes(r: &mut rand_chacha::ChaCha8Rng, ways: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..CLASSES_PER_FAMILY).collect();
    all.shuffle(r);
    all.truncate(ways);
    all
}

/// Build the stream manifest for (kind, scale, seed). Datasets are
/// generated separately (see [`generate_dataset`]) so long streams stay cheap
/// to describe.
pub fn build_stream(kind: StreamKind, scale: Scale, seed: u64) -> Result<Stream> {
    build_stream_with_ways(kind, scale, seed, DEFAULT_WAYS)
}

pub fn build_stream_with_ways(
    kind: StreamKind,
    scale: Scale,
    seed: u64,
    ways: usize,
) -> Result<Stream> {
    if ways < 2 || ways > CLASSES_PER_FAMILY {
        return Err(Error::Invalid(format!("ways {ways} out of range")));
    }
    let sz = sizes(scale);
    let mut r = rng(child_seed(seed, &[0x57_72]));
    let mut families: Vec<usize> = (0..FAMILY_COUNT).collect();
    families.shuffle(&mut r);

    let mut tasks: Vec<TaskSpec> = Vec::new();
    let push = |tasks: &mut Vec<TaskSpec>,
                    family: usize,
                    classes: Vec<usize>,
                    (n_train, n_val): (usize, usize),
                    n_test: usize| {
        let task_id = tasks.len();
        tasks.push(TaskSpec {
            task_id,
            family,
            classes,
            n_train,
            n_val,
            n_test,
            input_transform: InputTransform::None,
            label_transform: LabelTransform::None,
        });
    };

    match kind {
        StreamKind::Minus | StreamKind::Plus | StreamKind::In | StreamKind::Out => {
            let first = families[0];
            let first_classes = pick_classes(&mut r, ways);
            let (first_sz, last_sz) = match kind {
                StreamKind::Plus => (sz.small, sz.big),
                StreamKind::In => (sz.big, sz.tiny),
                _ => (sz.big, sz.small),
            };
            push(&mut tasks, first, first_classes.clone(), first_sz, sz.test);
            for d in 0..4 {
                let classes = pick_classes(&mut r, ways);
                push(&mut tasks, families[1 + d], classes, sz.small, sz.test);
            }
            push(&mut tasks, first, first_classes, last_sz, sz.test);
            let last = tasks.last_mut().expect("just pushed");
            match kind {
                StreamKind::In => {
                    last.input_transform =
                        InputTransform::Recolor { seed: child_seed(seed, &[0x52_43]) };
                }
                StreamKind::Out => {
                    last.label_transform =
                        LabelTransform::Permutation { seed: child_seed(seed, &[0x50_4d]) };
                }
                _ => {}
            }
        }
        StreamKind::Plasticity => {
            for i in 0..5 {
                let classes = pick_classes(&mut r, ways);
                let s = if i == 4 { sz.big } else { sz.small };
                push(&mut tasks, families[i], classes, s, sz.test);
            }
        }
        StreamKind::Long => {
            let total = sz.long_tasks;
            for i in 0..total {
                // fraction of small tasks rises by thirds: 50% → 75% → 100%
                let third = (i * 3) / total;
                let p_small = [0.5, 0.75, 1.0][third];
                let small = r.gen_bool(p_small);
                let family = r.gen_range(0..FAMILY_COUNT);
                let classes = pick_classes(&mut r, ways);
                let s = if small { sz.long_small } else { sz.long_big };
                push(&mut tasks, family, classes, s, sz.test);
            }
        }
    }
    Ok(Stream { kind, scale, seed, tasks })
}

/// Generate every task's dataset for a stream.
pub fn generate_all(stream: &Stream) -> Vec<LabeledDataset> {
    stream.tasks.iter().map(|t| generate_dataset(t, stream.seed)).collect()
}

// ---------------------------------------------------------------------------
// Stream directory I/O: a JSON manifest plus one CSV per task and split.

fn split_file(task: usize, split: &str) -> String {
    format!("task{task:03}_{split}.csv")
}

fn write_split_csv(path: &std::path::Path, split: &SplitData) -> Result<()> {
    let mut out = String::new();
    out.push_str("label");
    for j in 0..split.inputs.cols() {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for i in 0..split.len() {
        out.push_str(&split.labels[i].to_string());
        for v in split.inputs.row(i) {
            // shortest round-trip form keeps the files exact and diffable
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_split_csv(path: &std::path::Path) -> Result<SplitData> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Invalid(format!("{}: empty", path.display())))?;
    let width = header.split(',').count() - 1;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Invalid(format!("{}:{}: bad label", path.display(), lineno + 2)))?;
        labels.push(label);
        let mut n = 0;
        for f in fields {
            let v: f64 = f.parse().map_err(|_| {
                Error::Invalid(format!("{}:{}: bad value '{f}'", path.display(), lineno + 2))
            })?;
            data.push(v);
            n += 1;
        }
        if n != width {
            return Err(Error::Invalid(format!(
                "{}:{}: {n} values, expected {width}",
                path.display(),
                lineno + 2
            )));
        }
    }
    let rows = labels.len();
    SplitData::new(Matrix::from_vec(rows, width, data)?, labels)
}

/// Write manifest + per-task CSVs under `dir`.
pub fn write_stream_dir(
    dir: &std::path::Path,
    stream: &Stream,
    datasets: &[LabeledDataset],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = serde_json::to_string_pretty(stream)?;
    std::fs::write(dir.join("stream.json"), manifest + "\n")?;
    for (spec, data) in stream.tasks.iter().zip(datasets) {
        write_split_csv(&dir.join(split_file(spec.task_id, "train")), &data.train)?;
        write_split_csv(&dir.join(split_file(spec.task_id, "val")), &data.val)?;
        write_split_csv(&dir.join(split_file(spec.task_id, "test")), &data.test)?;
    }
    Ok(())
}

/// Load a stream directory written by [`write_stream_dir`].
pub fn load_stream_dir(dir: &std::path::Path) -> Result<(Stream, Vec<LabeledDataset>)> {
    let manifest = std::fs::read_to_string(dir.join("stream.json"))?;
    let stream: Stream = serde_json::from_str(&manifest)?;
    let mut datasets = Vec::with_capacity(stream.tasks.len());
    for spec in &stream.tasks {
        let data = LabeledDataset {
            train: read_split_csv(&dir.join(split_file(spec.task_id, "train")))?,
            val: read_split_csv(&dir.join(split_file(spec.task_id, "val")))?,
            test: read_split_csv(&dir.join(split_file(spec.task_id, "test")))?,
            classes: spec.ways(),
        };
        data.validate()?;
        datasets.push(data);
    }
    Ok((stream, datasets))
}
