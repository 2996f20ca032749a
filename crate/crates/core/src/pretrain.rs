//! One pretraining step per objective, and the stateful trainer loop.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::datasets::RawExample;
use crate::embedding::EmbeddingSequence;
use crate::encoder::Mode;
use crate::model::{Batch, Model};
use crate::objectives::shed::{apply_shuffle_backward, ShufflePlan};
use crate::objectives::{
    apply_mix, apply_mix_backward, apply_shuffle, emix_loss, sample_mix_plan, sample_shuffle_plan, shed_loss, virtual_labels,
    LabelMode, MixPlan, Objective, ObjectiveConfig,
};
use crate::optim::{Adam, AdamConfig, AdamState};
use crate::params::Grads;
use crate::rng::{streams, RngState, SeededRng};
use crate::{Error, Real, Result};

/// e-Mix loss and parameter gradients for an explicit mixing plan.
///
/// Content embeddings are mixed before positions are added to either view.
/// The mixed view is valid wherever either source row is valid.
pub fn emix_loss_and_grads<T: Real>(
    model: &Model<T>,
    batch: &Batch<T>,
    plan: &MixPlan,
    label_mode: LabelMode,
    temperature: f64,
    mode: Mode,
    dropout: &mut SeededRng,
    grads: &mut Grads<T>,
) -> Result<f64> {
    let n = batch.size;
    if plan.len() != n {
        return Err(Error::Shape(format!("mix plan for {} rows, batch of {n}", plan.len())));
    }
    let content = model.embed_content(batch)?;
    let row_len = content.len * content.d_model;
    let mut mixed = content.clone();
    mixed.values = apply_mix(&content.values, n, row_len, plan)?;
    for i in 0..n {
        let j = plan.pi[i];
        for p in 0..content.len {
            mixed.mask[i * content.len + p] = content.mask[i * content.len + p] || content.mask[j * content.len + p];
        }
    }
    let anchor = model.add_positions(content)?;
    let mixed = model.add_positions(mixed)?;

    let enc = &model.encoder;
    let (out_a, trace_a) = enc.encode(&model.params, &anchor, mode, dropout)?;
    let (out_m, trace_m) = enc.encode(&model.params, &mixed, mode, dropout)?;
    let (feat_a, mean_a) = enc.pool_project(&model.params, &out_a)?;
    let (feat_m, mean_m) = enc.pool_project(&model.params, &out_m)?;
    let labels = virtual_labels(plan, label_mode);
    let l = emix_loss(&feat_a, &feat_m, n, enc.config.proj_dim, &labels, temperature)?;

    let ds_a = enc.pool_project_backward(&model.params, grads, &out_a, &mean_a, &l.d_anchor);
    let ds_m = enc.pool_project_backward(&model.params, grads, &out_m, &mean_m, &l.d_mixed);
    let dx_a = enc.backward(&model.params, grads, &trace_a, &ds_a);
    let dx_m = enc.backward(&model.params, grads, &trace_m, &ds_m);
    model.positions_backward(grads, &anchor, &dx_a);
    model.positions_backward(grads, &mixed, &dx_m);
    let mut d_content = apply_mix_backward(&dx_m, n, row_len, plan);
    d_content.iter_mut().zip(&dx_a).for_each(|(g, &x)| *g += x);
    model.embed_backward(grads, batch, &anchor, &d_content)?;
    Ok(l.loss)
}

/// Per-row shuffle plans for ShED, drawn over each row's valid positions.
pub fn sample_shed_plans<T: Real>(seq: &EmbeddingSequence<T>, rate: f64, rng: &mut SeededRng) -> Result<Vec<ShufflePlan>> {
    (0..seq.batch)
        .map(|b| sample_shuffle_plan(&seq.valid_positions(b), seq.len, rate, rng))
        .collect()
}

/// ShED loss and parameter gradients for explicit per-row shuffle plans.
pub fn shed_loss_and_grads<T: Real>(
    model: &Model<T>,
    batch: &Batch<T>,
    plans: &[ShufflePlan],
    mode: Mode,
    dropout: &mut SeededRng,
    grads: &mut Grads<T>,
) -> Result<f64> {
    let content = model.embed_content(batch)?;
    shed_from_content(model, batch, content, plans, mode, dropout, grads)
}

fn shed_from_content<T: Real>(
    model: &Model<T>,
    batch: &Batch<T>,
    content: EmbeddingSequence<T>,
    plans: &[ShufflePlan],
    mode: Mode,
    dropout: &mut SeededRng,
    grads: &mut Grads<T>,
) -> Result<f64> {
    if plans.len() != batch.size {
        return Err(Error::Shape(format!("{} shuffle plans for a batch of {}", plans.len(), batch.size)));
    }
    let (l, d) = (content.len, content.d_model);
    let mut shuffled = content.clone();
    let mut labels = Vec::with_capacity(batch.size * l);
    for (b, plan) in plans.iter().enumerate() {
        let row = apply_shuffle(content.row(b), d, content.mask_row(b), plan)?;
        shuffled.values[b * l * d..(b + 1) * l * d].copy_from_slice(&row);
        labels.extend_from_slice(&plan.labels);
    }
    let seq = model.add_positions(shuffled)?;
    let enc = &model.encoder;
    let (out, trace) = enc.encode(&model.params, &seq, mode, dropout)?;
    let logits = enc.per_position_logits(&model.params, &out);
    let (loss, d_logits) = shed_loss(&logits, &labels, &seq.mask)?;
    let ds = enc.per_position_logits_backward(&model.params, grads, &out, &d_logits);
    let dx = enc.backward(&model.params, grads, &trace, &ds);
    model.positions_backward(grads, &seq, &dx);
    let mut d_content = vec![T::zero(); dx.len()];
    for (b, plan) in plans.iter().enumerate() {
        let r = b * l * d..(b + 1) * l * d;
        d_content[r.clone()].copy_from_slice(&apply_shuffle_backward(&dx[r], d, plan));
    }
    model.embed_backward(grads, batch, &seq, &d_content)?;
    Ok(loss)
}

/// Eval-mode detection logits for explicit shuffle plans, with the shuffle
/// labels and validity mask of every position (`batch x len` each).
pub fn shed_scores<T: Real>(model: &Model<T>, batch: &Batch<T>, plans: &[ShufflePlan]) -> Result<(Vec<f64>, Vec<u8>, Vec<bool>)> {
    if plans.len() != batch.size {
        return Err(Error::Shape(format!("{} shuffle plans for a batch of {}", plans.len(), batch.size)));
    }
    let content = model.embed_content(batch)?;
    let (l, d) = (content.len, content.d_model);
    let mut shuffled = content.clone();
    let mut labels = Vec::with_capacity(batch.size * l);
    for (b, plan) in plans.iter().enumerate() {
        let row = apply_shuffle(content.row(b), d, content.mask_row(b), plan)?;
        shuffled.values[b * l * d..(b + 1) * l * d].copy_from_slice(&row);
        labels.extend_from_slice(&plan.labels);
    }
    let seq = model.add_positions(shuffled)?;
    let (out, _) = model.encoder.encode(&model.params, &seq, Mode::Eval, &mut SeededRng::new(0))?;
    let logits = model.encoder.per_position_logits(&model.params, &out).iter().map(|x| x.as_f64()).collect();
    Ok((logits, labels, seq.mask))
}

/// Epoch-wise shuffled index order; the trailing partial batch is dropped.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplerState {
    pub epoch: u64,
    pub cursor: usize,
    pub order: Vec<usize>,
    pub rng: RngState,
}

#[derive(Debug, Clone)]
pub struct EpochSampler {
    epoch: u64,
    cursor: usize,
    order: Vec<usize>,
    rng: SeededRng,
}

impl EpochSampler {
    pub fn new(seed: u64) -> Self {
        Self { epoch: 0, cursor: 0, order: Vec::new(), rng: SeededRng::with_stream(seed, streams::DATA_ORDER) }
    }

    pub fn next_batch(&mut self, num_examples: usize, batch_size: usize) -> Result<Vec<usize>> {
        if batch_size == 0 || batch_size > num_examples {
            return Err(Error::InvalidArgument(format!("batch size {batch_size} with {num_examples} examples")));
        }
        if self.order.len() != num_examples || self.cursor + batch_size > self.order.len() {
            if !self.order.is_empty() {
                self.epoch += 1;
            }
            self.order = (0..num_examples).collect();
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + batch_size].to_vec();
        self.cursor += batch_size;
        Ok(out)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn state(&self) -> SamplerState {
        SamplerState { epoch: self.epoch, cursor: self.cursor, order: self.order.clone(), rng: self.rng.state() }
    }

    pub fn from_state(s: SamplerState) -> Self {
        Self { epoch: s.epoch, cursor: s.cursor, order: s.order, rng: SeededRng::from_state(s.rng) }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PretrainConfig {
    pub objective: ObjectiveConfig,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn new(objective: ObjectiveConfig, batch_size: usize, seed: u64) -> Self {
        Self { objective, optimizer: AdamConfig::pretrain(), batch_size, seed }
    }
}

/// Everything besides the parameters needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainerSnapshot<T> {
    pub step: u64,
    pub optimizer: AdamState<T>,
    pub sampler: SamplerState,
    pub dropout_rng: RngState,
    pub plan_rng: RngState,
}

#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub config: PretrainConfig,
    optimizer: Adam<T>,
    grads: Grads<T>,
    sampler: EpochSampler,
    dropout_rng: SeededRng,
    plan_rng: SeededRng,
    step: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, config: PretrainConfig) -> Result<Self> {
        config.objective.validate()?;
        let optimizer = Adam::new(config.optimizer, &model.params)?;
        let seed = config.seed;
        Ok(Self {
            grads: model.params.zeros_like(),
            optimizer,
            sampler: EpochSampler::new(seed),
            dropout_rng: SeededRng::with_stream(seed, streams::DROPOUT),
            plan_rng: SeededRng::with_stream(seed, streams::PLANS),
            step: 0,
            model,
            config,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.sampler.epoch()
    }

    /// Samples a batch from `data`, computes the objective and applies one
    /// optimizer update. Returns the loss.
    pub fn step(&mut self, data: &[RawExample]) -> Result<f64> {
        let objective = self.config.objective;
        if objective.objective == Objective::None {
            return Err(Error::InvalidArgument("objective `none` has no training step".into()));
        }
        let idx = self.sampler.next_batch(data.len(), self.config.batch_size)?;
        let refs: Vec<&RawExample> = idx.iter().map(|&i| &data[i]).collect();
        let batch = Batch::from_examples(&self.model.config, &refs)?;
        self.grads.zero();
        let loss = match objective.objective {
            Objective::Emix => {
                let plan = sample_mix_plan(batch.size, &mut self.plan_rng)?;
                emix_loss_and_grads(
                    &self.model,
                    &batch,
                    &plan,
                    objective.label_mode,
                    objective.temperature,
                    Mode::Train,
                    &mut self.dropout_rng,
                    &mut self.grads,
                )?
            }
            Objective::Shed => {
                let content = self.model.embed_content(&batch)?;
                let plans = sample_shed_plans(&content, objective.shuffle_rate, &mut self.plan_rng)?;
                shed_from_content(&self.model, &batch, content, &plans, Mode::Train, &mut self.dropout_rng, &mut self.grads)?
            }
            Objective::None => unreachable!(),
        };
        if !loss.is_finite() || !self.grads.all_finite() {
            return Err(Error::NonFiniteLoss { step: self.step, loss, objective: objective.objective.to_string() });
        }
        self.optimizer.step(&mut self.model.params, &mut self.grads);
        self.step += 1;
        Ok(loss)
    }

    pub fn snapshot(&self) -> TrainerSnapshot<T> {
        TrainerSnapshot {
            step: self.step,
            optimizer: self.optimizer.state.clone(),
            sampler: self.sampler.state(),
            dropout_rng: self.dropout_rng.state(),
            plan_rng: self.plan_rng.state(),
        }
    }

    /// Rebuilds a trainer whose next step matches the snapshotted run.
    pub fn restore(model: Model<T>, config: PretrainConfig, snap: TrainerSnapshot<T>) -> Result<Self> {
        config.objective.validate()?;
        if snap.optimizer.step != snap.step {
            return Err(Error::InvalidArgument("optimizer step count disagrees with trainer step".into()));
        }
        let optimizer = Adam::with_state(config.optimizer, snap.optimizer, &model.params)?;
        Ok(Self {
            grads: model.params.zeros_like(),
            optimizer,
            sampler: EpochSampler::from_state(snap.sampler),
            dropout_rng: SeededRng::from_state(snap.dropout_rng),
            plan_rng: SeededRng::from_state(snap.plan_rng),
            step: snap.step,
            model,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{load_spec, make_synthetic_domain, SyntheticDomainConfig};
    use crate::encoder::EncoderConfig;
    use crate::model::ModelConfig;

    fn setup(spec: &str, objective: Objective) -> (Trainer<f32>, Vec<RawExample>) {
        let spec = load_spec(spec).unwrap();
        let mc = ModelConfig::for_spec(&spec, EncoderConfig::reduced(1, 16, 2)).unwrap();
        let mut dc = SyntheticDomainConfig::for_spec(&spec, 7);
        dc.num_train = 24;
        dc.num_val = 0;
        let data = make_synthetic_domain(&dc).unwrap().train;
        let oc = ObjectiveConfig { objective, ..ObjectiveConfig::default() };
        let t = Trainer::new(Model::new(mc, 7).unwrap(), PretrainConfig::new(oc, 8, 7)).unwrap();
        (t, data)
    }

    #[test]
    fn sampler_covers_each_epoch_once() {
        let mut s = EpochSampler::new(1);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch(10, 3).unwrap()).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        assert_eq!(s.epoch(), 0);
        s.next_batch(10, 3).unwrap();
        assert_eq!(s.epoch(), 1);
    }

    #[test]
    fn both_objectives_step_and_change_parameters() {
        for obj in [Objective::Emix, Objective::Shed] {
            let (mut t, data) = setup("synth_tokens", obj);
            let before = t.model.params.checksum();
            let loss = t.step(&data).unwrap();
            assert!(loss.is_finite() && loss > 0.0);
            assert_ne!(t.model.params.checksum(), before);
            assert_eq!(t.step_count(), 1);
        }
    }

    #[test]
    fn none_objective_refuses_to_step() {
        let (mut t, data) = setup("synth_image", Objective::None);
        assert!(t.step(&data).is_err());
    }

    #[test]
    fn restore_continues_identically() {
        let (mut a, data) = setup("synth_image", Objective::Emix);
        a.step(&data).unwrap();
        let mut b = Trainer::restore(a.model.clone(), a.config.clone(), a.snapshot()).unwrap();
        for _ in 0..3 {
            assert_eq!(a.step(&data).unwrap(), b.step(&data).unwrap());
        }
        assert_eq!(a.model.params.checksum(), b.model.params.checksum());
    }
}
