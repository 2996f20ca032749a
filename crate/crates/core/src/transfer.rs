//! Linear-probe transfer on frozen pooled features.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::datasets::{RawExample, Target};
use crate::metrics;
use crate::model::{Batch, Model};
use crate::nn::{sigmoid, softplus, Linear};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::rng::{streams, SeededRng};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum TaskType {
    Multiclass,
    MultilabelBinary,
    Binary,
    Regression,
}

impl TaskType {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Multiclass => "multiclass",
            TaskType::MultilabelBinary => "multilabel_binary",
            TaskType::Binary => "binary",
            TaskType::Regression => "regression",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Metric {
    Accuracy,
    MeanAuroc,
    Pearson,
    Spearman,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MeanAuroc => "mean_auroc",
            Metric::Pearson => "pearson",
            Metric::Spearman => "spearman",
        }
    }

    /// Inclusive range of valid values.
    pub fn range(self) -> (f64, f64) {
        match self {
            Metric::Accuracy | Metric::MeanAuroc => (0.0, 100.0),
            Metric::Pearson | Metric::Spearman => (-1.0, 1.0),
        }
    }

    pub fn compatible_with(self, task: TaskType) -> bool {
        match self {
            Metric::Accuracy => matches!(task, TaskType::Multiclass | TaskType::Binary),
            Metric::MeanAuroc => task == TaskType::MultilabelBinary,
            Metric::Pearson | Metric::Spearman => task == TaskType::Regression,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Metric::Accuracy, Metric::MeanAuroc, Metric::Pearson, Metric::Spearman]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeTask {
    pub name: String,
    pub task_type: TaskType,
    pub num_outputs: usize,
    pub metric: Metric,
}

impl ProbeTask {
    pub fn new(name: impl Into<String>, task_type: TaskType, num_outputs: usize, metric: Metric) -> Result<Self> {
        if !metric.compatible_with(task_type) {
            return Err(Error::MetricTaskMismatch { metric: metric.as_str(), task: task_type.as_str() });
        }
        let ok = match task_type {
            TaskType::Multiclass => num_outputs >= 2,
            TaskType::Binary | TaskType::Regression => num_outputs == 1,
            TaskType::MultilabelBinary => num_outputs >= 1,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!("{} task with {num_outputs} outputs", task_type.as_str())));
        }
        Ok(Self { name: name.into(), task_type, num_outputs, metric })
    }

    /// Task shape implied by a metric and the targets it will be scored on.
    pub fn infer(name: impl Into<String>, metric: Metric, targets: &[Target]) -> Result<Self> {
        match (metric, targets.first()) {
            (_, None) => Err(Error::DegenerateTargets("no targets".into())),
            (Metric::Accuracy, Some(Target::Category(_))) => {
                let k = targets
                    .iter()
                    .map(|t| match t {
                        Target::Category(c) => Ok(*c + 1),
                        _ => Err(Error::DegenerateTargets("mixed target kinds".into())),
                    })
                    .try_fold(0, |m, c| c.map(|c| m.max(c)))?;
                Self::new(name, TaskType::Multiclass, k.max(2), metric)
            }
            (Metric::MeanAuroc, Some(Target::MultiLabel(v))) => Self::new(name, TaskType::MultilabelBinary, v.len(), metric),
            (Metric::Pearson | Metric::Spearman, Some(Target::Scalar(_))) => Self::new(name, TaskType::Regression, 1, metric),
            (m, Some(_)) => Err(Error::MetricTaskMismatch { metric: m.as_str(), task: "target kind" }),
        }
    }
}

/// Pooled features with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub n: usize,
    pub dim: usize,
    /// Row-major `n x dim`.
    pub values: Vec<f64>,
    pub targets: Vec<Target>,
}

impl Features {
    pub fn new(values: Vec<f64>, dim: usize, targets: Vec<Target>) -> Result<Self> {
        if dim == 0 || values.len() != targets.len() * dim {
            return Err(Error::Shape(format!("{} values for {} rows of width {dim}", values.len(), targets.len())));
        }
        Ok(Self { n: targets.len(), dim, values, targets })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Eval-mode pooled features for every example; never touches parameters.
pub fn extract_features<T: Real>(model: &Model<T>, examples: &[RawExample], batch_size: usize) -> Result<Features> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let dim = model.encoder.config.proj_dim;
    let mut values = Vec::with_capacity(examples.len() * dim);
    let mut targets = Vec::with_capacity(examples.len());
    for (c, chunk) in examples.chunks(batch_size).enumerate() {
        let refs: Vec<&RawExample> = chunk.iter().collect();
        let batch = Batch::from_examples(&model.config, &refs)?;
        values.extend(model.features(&batch)?.into_iter().map(|v| v.as_f64()));
        for (i, ex) in chunk.iter().enumerate() {
            let t = ex
                .label
                .clone()
                .ok_or_else(|| Error::InvalidArgument(format!("example {} has no label", c * batch_size + i)))?;
            targets.push(t);
        }
    }
    Features::new(values, dim, targets)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Z-score each feature with training-set statistics before the affine map.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 256, optimizer: AdamConfig::probe(), standardize: true }
    }
}

/// Affine map `dim -> outputs`, preceded by a fixed per-feature standardization.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearProbe {
    pub dim: usize,
    pub outputs: usize,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// Row-major `dim x outputs`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearProbe {
    fn standardized(&self, f: &Features) -> Vec<f64> {
        let mut x = f.values.clone();
        for row in x.chunks_exact_mut(self.dim) {
            for ((v, s), c) in row.iter_mut().zip(&self.shift).zip(&self.scale) {
                *v = (*v - s) * c;
            }
        }
        x
    }

    /// Raw outputs (logits or regression values), `n x outputs`.
    pub fn predict(&self, f: &Features) -> Result<Vec<f64>> {
        if f.dim != self.dim {
            return Err(Error::Shape(format!("probe expects {}-d features, got {}", self.dim, f.dim)));
        }
        let x = self.standardized(f);
        let mut out = Vec::with_capacity(f.n * self.outputs);
        for row in x.chunks_exact(self.dim) {
            for o in 0..self.outputs {
                let mut acc = self.bias[o];
                for (i, &v) in row.iter().enumerate() {
                    acc += v * self.weight[i * self.outputs + o];
                }
                out.push(acc);
            }
        }
        Ok(out)
    }
}

enum Encoded {
    Classes(Vec<usize>),
    Bits(Vec<f64>),
    Values(Vec<f64>),
}

fn encode_targets(targets: &[Target], task: &ProbeTask) -> Result<Encoded> {
    let mismatch = || Error::MetricTaskMismatch { metric: task.metric.as_str(), task: task.task_type.as_str() };
    match task.task_type {
        TaskType::Multiclass => {
            let c = targets
                .iter()
                .map(|t| match t {
                    Target::Category(c) if *c < task.num_outputs => Ok(*c),
                    Target::Category(c) => Err(Error::InvalidArgument(format!("class {c} >= {}", task.num_outputs))),
                    _ => Err(mismatch()),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Encoded::Classes(c))
        }
        TaskType::Binary => {
            let b = targets
                .iter()
                .map(|t| match t {
                    Target::Category(c @ (0 | 1)) => Ok(*c as f64),
                    _ => Err(mismatch()),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Encoded::Bits(b))
        }
        TaskType::MultilabelBinary => {
            let mut b = Vec::with_capacity(targets.len() * task.num_outputs);
            for t in targets {
                match t {
                    Target::MultiLabel(v) if v.len() == task.num_outputs => b.extend(v.iter().map(|&x| x as u8 as f64)),
                    _ => return Err(mismatch()),
                }
            }
            Ok(Encoded::Bits(b))
        }
        TaskType::Regression => {
            let v = targets
                .iter()
                .map(|t| match t {
                    Target::Scalar(v) => Ok(*v),
                    _ => Err(mismatch()),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Encoded::Values(v))
        }
    }
}

/// Trains the probe with mini-batch Adam on frozen features.
///
/// Losses: softmax cross-entropy (multiclass), per-output binary
/// cross-entropy (binary / multilabel), mean squared error (regression).
pub fn train_linear_probe(features: &Features, task: &ProbeTask, config: &ProbeConfig, seed: u64) -> Result<LinearProbe> {
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("probe batch size must be positive".into()));
    }
    if features.n == 0 {
        return Err(Error::DegenerateTargets("no training examples".into()));
    }
    let targets = encode_targets(&features.targets, task)?;
    let distinct = match &targets {
        Encoded::Classes(c) => c.iter().any(|&x| x != c[0]),
        Encoded::Bits(b) => {
            let o = task.num_outputs;
            b.chunks_exact(o).any(|r| r != &b[..o])
        }
        Encoded::Values(v) => v.iter().any(|&x| x != v[0]),
    };
    if !distinct {
        return Err(Error::DegenerateTargets(format!("task `{}` has a single target value", task.name)));
    }
    let (dim, outs) = (features.dim, task.num_outputs);
    let (shift, scale) = if config.standardize {
        standardizer(features)
    } else {
        (vec![0.0; dim], vec![1.0; dim])
    };

    let mut rng = SeededRng::with_stream(seed, streams::PROBE);
    let mut store = ParamStore::<f64>::new();
    // zero init: with lr 1e-4 any random init would dominate short runs
    let layer = Linear::new(&mut store, "probe", dim, outs, 0.0, &mut rng);
    let mut opt = Adam::new(config.optimizer, &store)?;
    let mut grads = store.zeros_like();

    let mut probe = LinearProbe { dim, outputs: outs, shift, scale, weight: Vec::new(), bias: Vec::new() };
    let x_all = probe.standardized(features);
    let mut order: Vec<usize> = (0..features.n).collect();
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let m = chunk.len();
            let mut x = Vec::with_capacity(m * dim);
            for &i in chunk {
                x.extend_from_slice(&x_all[i * dim..(i + 1) * dim]);
            }
            let z = layer.forward(&store, &x, m);
            let dz = loss_grad(&z, chunk, &targets, outs);
            grads.zero();
            layer.backward(&store, &mut grads, &x, &dz, m, false);
            opt.step(&mut store, &mut grads);
        }
    }
    probe.weight = store.get(layer.weight).to_vec();
    probe.bias = store.get(layer.bias).to_vec();
    if !probe.weight.iter().chain(&probe.bias).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("probe parameters".into()));
    }
    Ok(probe)
}

fn standardizer(f: &Features) -> (Vec<f64>, Vec<f64>) {
    let n = f.n as f64;
    let mut mean = vec![0.0; f.dim];
    for r in f.values.chunks_exact(f.dim) {
        mean.iter_mut().zip(r).for_each(|(m, &v)| *m += v / n);
    }
    let mut var = vec![0.0; f.dim];
    for r in f.values.chunks_exact(f.dim) {
        var.iter_mut().zip(r).zip(&mean).for_each(|((s, &v), &m)| *s += (v - m) * (v - m) / n);
    }
    let scale = var.iter().map(|&v| if v > 1e-24 { 1.0 / libm::sqrt(v) } else { 1.0 }).collect();
    (mean, scale)
}

/// Gradient of the batch-mean loss with respect to the outputs.
fn loss_grad(z: &[f64], rows: &[usize], targets: &Encoded, outs: usize) -> Vec<f64> {
    let m = rows.len() as f64;
    let mut dz = vec![0.0; z.len()];
    for (r, &i) in rows.iter().enumerate() {
        let zr = &z[r * outs..(r + 1) * outs];
        let dr = &mut dz[r * outs..(r + 1) * outs];
        match targets {
            Encoded::Classes(c) => {
                let max = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = zr.iter().map(|v| libm::exp(v - max)).sum();
                for o in 0..outs {
                    let p = libm::exp(zr[o] - max) / sum;
                    dr[o] = (p - (o == c[i]) as u8 as f64) / m;
                }
            }
            Encoded::Bits(b) => {
                for o in 0..outs {
                    dr[o] = (sigmoid(zr[o]) - b[i * outs + o]) / (m * outs as f64);
                }
            }
            Encoded::Values(v) => dr[0] = 2.0 * (zr[0] - v[i]) / m,
        }
    }
    dz
}

/// Mean training loss of a probe; used for diagnostics and tests.
pub fn probe_loss(probe: &LinearProbe, features: &Features, task: &ProbeTask) -> Result<f64> {
    let z = probe.predict(features)?;
    let outs = task.num_outputs;
    let n = features.n as f64;
    let t = encode_targets(&features.targets, task)?;
    let mut total = 0.0;
    for i in 0..features.n {
        let zr = &z[i * outs..(i + 1) * outs];
        total += match &t {
            Encoded::Classes(c) => {
                let max = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + libm::log(zr.iter().map(|v| libm::exp(v - max)).sum::<f64>());
                lse - zr[c[i]]
            }
            Encoded::Bits(b) => {
                (0..outs).map(|o| softplus(zr[o]) - zr[o] * b[i * outs + o]).sum::<f64>() / outs as f64
            }
            Encoded::Values(v) => (zr[0] - v[i]) * (zr[0] - v[i]),
        };
    }
    Ok(total / n)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub task: String,
    pub metric: Metric,
    pub value: f64,
    pub n_examples: usize,
    pub checkpoint: String,
    pub seed: u64,
}

/// Scores a trained probe on held-out features.
pub fn evaluate(probe: &LinearProbe, features: &Features, task: &ProbeTask, checkpoint: &str, seed: u64) -> Result<MetricReport> {
    if !task.metric.compatible_with(task.task_type) {
        return Err(Error::MetricTaskMismatch { metric: task.metric.as_str(), task: task.task_type.as_str() });
    }
    if probe.outputs != task.num_outputs {
        return Err(Error::Shape(format!("probe has {} outputs, task {}", probe.outputs, task.num_outputs)));
    }
    let z = probe.predict(features)?;
    let value = score(&z, &features.targets, task)?;
    Ok(MetricReport {
        task: task.name.clone(),
        metric: task.metric,
        value,
        n_examples: features.n,
        checkpoint: checkpoint.into(),
        seed,
    })
}

/// Applies the task metric to raw outputs.
pub fn score(outputs: &[f64], targets: &[Target], task: &ProbeTask) -> Result<f64> {
    let t = encode_targets(targets, task)?;
    match (task.metric, t) {
        (Metric::Accuracy, Encoded::Classes(c)) => metrics::accuracy(outputs, task.num_outputs, &c),
        (Metric::Accuracy, Encoded::Bits(b)) => {
            let hits = outputs.iter().zip(&b).filter(|(&z, &y)| (z > 0.0) == (y > 0.5)).count();
            Ok(100.0 * hits as f64 / b.len().max(1) as f64)
        }
        (Metric::MeanAuroc, Encoded::Bits(b)) => {
            let l: Vec<bool> = b.iter().map(|&v| v > 0.5).collect();
            metrics::mean_auroc(outputs, &l, task.num_outputs)
        }
        (Metric::Pearson, Encoded::Values(v)) => metrics::pearson(outputs, &v),
        (Metric::Spearman, Encoded::Values(v)) => metrics::spearman(outputs, &v),
        (m, _) => Err(Error::MetricTaskMismatch { metric: m.as_str(), task: task.task_type.as_str() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize, seed: u64, shuffle_labels: bool) -> Features {
        let mut rng = SeededRng::new(seed);
        let dim = 8;
        let mut values = Vec::new();
        let mut targets = Vec::new();
        for i in 0..n {
            let c = i % 2;
            // every coordinate carries the class, so the classes are separated
            // along the all-ones direction
            for _ in 0..dim {
                values.push(if c == 0 { -1.0 } else { 1.0 } + 0.5 * rng.normal());
            }
            targets.push(Target::Category(c));
        }
        if shuffle_labels {
            rng.shuffle(&mut targets);
        }
        Features::new(values, dim, targets).unwrap()
    }

    #[test]
    fn metric_task_compatibility() {
        assert!(ProbeTask::new("t", TaskType::Multiclass, 3, Metric::Accuracy).is_ok());
        assert_eq!(
            ProbeTask::new("t", TaskType::Multiclass, 3, Metric::MeanAuroc).unwrap_err(),
            Error::MetricTaskMismatch { metric: "mean_auroc", task: "multiclass" }
        );
        assert!(ProbeTask::new("t", TaskType::Regression, 1, Metric::Accuracy).is_err());
        assert!(ProbeTask::new("t", TaskType::MultilabelBinary, 5, Metric::MeanAuroc).is_ok());
    }

    #[test]
    fn separable_features_are_learned() {
        let train = separable(512, 1, false);
        let task = ProbeTask::infer("sep", Metric::Accuracy, &train.targets).unwrap();
        let probe = train_linear_probe(&train, &task, &ProbeConfig::default(), 0).unwrap();
        let r = evaluate(&probe, &train, &task, "ckpt", 0).unwrap();
        assert!(r.value > 95.0, "{}", r.value);
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        let train = separable(512, 2, true);
        let test = separable(2000, 3, true);
        let task = ProbeTask::infer("null", Metric::Accuracy, &train.targets).unwrap();
        let probe = train_linear_probe(&train, &task, &ProbeConfig::default(), 0).unwrap();
        let r = evaluate(&probe, &test, &task, "ckpt", 0).unwrap();
        assert!((r.value - 50.0).abs() <= 5.0, "{}", r.value);
    }

    #[test]
    fn zero_epochs_return_initialization() {
        let train = separable(16, 1, false);
        let task = ProbeTask::infer("t", Metric::Accuracy, &train.targets).unwrap();
        let cfg = ProbeConfig { epochs: 0, ..ProbeConfig::default() };
        let a = train_linear_probe(&train, &task, &cfg, 9).unwrap();
        let b = train_linear_probe(&train, &task, &ProbeConfig { epochs: 1, ..cfg }, 9).unwrap();
        assert!(a.weight.iter().chain(&a.bias).all(|&w| w == 0.0));
        assert_ne!(a.weight, b.weight);
    }

    #[test]
    fn degenerate_targets_are_rejected() {
        let f = Features::new(vec![0.0; 8], 2, vec![Target::Category(1); 4]).unwrap();
        let task = ProbeTask::new("t", TaskType::Multiclass, 2, Metric::Accuracy).unwrap();
        assert!(matches!(train_linear_probe(&f, &task, &ProbeConfig::default(), 0), Err(Error::DegenerateTargets(_))));
    }

    #[test]
    fn regression_probe_reports_correlation() {
        let mut rng = SeededRng::new(4);
        let mut values = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..300 {
            let a = rng.normal();
            values.extend([a, rng.normal()]);
            targets.push(Target::Scalar(3.0 * a + 0.1 * rng.normal()));
        }
        let f = Features::new(values, 2, targets).unwrap();
        let task = ProbeTask::infer("reg", Metric::Pearson, &f.targets).unwrap();
        let cfg = ProbeConfig { optimizer: AdamConfig { lr: 1e-2, ..AdamConfig::probe() }, ..ProbeConfig::default() };
        let probe = train_linear_probe(&f, &task, &cfg, 0).unwrap();
        let r = evaluate(&probe, &f, &task, "c", 0).unwrap();
        assert!(r.value > 0.95, "{}", r.value);
        assert!(probe_loss(&probe, &f, &task).unwrap().is_finite());
    }

    #[test]
    fn scoring_perfect_predictions() {
        let t: Vec<Target> = [1.0, 2.0, 5.0].iter().map(|&v| Target::Scalar(v)).collect();
        let task = ProbeTask::new("r", TaskType::Regression, 1, Metric::Pearson).unwrap();
        assert!((score(&[1.0, 2.0, 5.0], &t, &task).unwrap() - 1.0).abs() < 1e-15);
        let ml = vec![Target::MultiLabel(vec![true]), Target::MultiLabel(vec![false])];
        let task = ProbeTask::new("m", TaskType::MultilabelBinary, 1, Metric::MeanAuroc).unwrap();
        assert_eq!(score(&[3.0, -1.0], &ml, &task).unwrap(), 100.0);
    }
}
