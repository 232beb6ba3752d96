//! Optimization loop, learning-rate schedule and the two-phase pipeline.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::tokenizer::{tokenize, EOS};
use crate::data::PreferenceExample;
use crate::error::{Error, Result};
use crate::init::{init_d2lora, initialize, InitScheme, InitSpec};
use crate::model::{save_adapters, Bound, Model, Trainable};
use crate::objectives::{objective_loss, Encoded, ObjectiveConfig, ObjectiveKind, ReferenceLogProbs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Adapt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    Cosine,
    Constant,
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::Contract(format!("cosine step {step} outside 0..={total_steps}")));
    }
    let t = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub hyper: AdamWConfig,
}

impl OptimizerState {
    pub fn new(shapes: &[usize], hyper: AdamWConfig) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            hyper,
        }
    }

    pub fn for_params(params: &[&mut Tensor], hyper: AdamWConfig) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.numel()).collect();
        Self::new(&sizes, hyper)
    }
}

/// One AdamW update with bias correction and decoupled weight decay.
pub fn adamw_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "{} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.numel() {
            return Err(Error::Contract(format!(
                "parameter {i} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.step as i32);
    let bc2 = 1.0 - h.beta2.powi(state.step as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = h.beta1 * *mi + (1.0 - h.beta1) * gi;
            *vi = h.beta2 * *vi + (1.0 - h.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *x -= lr * (m_hat / (v_hat.sqrt() + h.eps) + h.weight_decay * *x);
        }
    }
    Ok(())
}

/// Desk-scale default learning rates.
pub const DESK_WARMUP_LR: f64 = 1e-2;
pub const DESK_ADAPT_LR: f64 = 3e-3;
pub const DESK_BATCH_SIZE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub phase: Phase,
    pub sample_count: usize,
    pub objective: ObjectiveConfig,
    pub lr_max: f64,
    #[serde(default)]
    pub lr_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub scheduler: Scheduler,
    #[serde(default)]
    pub optimizer: AdamWConfig,
}

impl PhasePlan {
    /// Desk-scale warm-up: SFT on `m` general samples.
    pub fn warmup(m: usize, seed: u64) -> Self {
        Self {
            phase: Phase::Warmup,
            sample_count: m,
            objective: ObjectiveConfig::new(ObjectiveKind::Sft),
            lr_max: DESK_WARMUP_LR,
            lr_min: 0.0,
            epochs: 1,
            batch_size: DESK_BATCH_SIZE,
            seed,
            scheduler: Scheduler::Cosine,
            optimizer: AdamWConfig::default(),
        }
    }

    /// Desk-scale task adaptation on `n` task samples.
    pub fn adapt(kind: ObjectiveKind, n: usize, seed: u64) -> Self {
        Self {
            phase: Phase::Adapt,
            sample_count: n,
            objective: ObjectiveConfig::new(kind),
            lr_max: DESK_ADAPT_LR,
            epochs: paper_epochs(kind),
            ..Self::warmup(n, seed)
        }
    }

    /// The published 8B-scale settings: warm-up lr 1e-7 for one epoch.
    pub fn paper_warmup(m: usize, seed: u64) -> Self {
        Self { lr_max: 1e-7, ..Self::warmup(m, seed) }
    }

    /// The published 8B-scale task settings: lr 1e-6, three SFT epochs or
    /// four preference epochs, β 0.1.
    pub fn paper_adapt(kind: ObjectiveKind, n: usize, seed: u64) -> Self {
        Self { lr_max: 1e-6, ..Self::adapt(kind, n, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phase == Phase::Warmup && self.objective.kind != ObjectiveKind::Sft {
            return Err(Error::Config(format!("warm-up must use sft, got {}", self.objective.kind.name())));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr_max >= 0.0 && self.lr_min >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        self.objective.validate()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.sample_count / self.batch_size
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }

    fn lr_at(&self, step: usize) -> Result<f64> {
        match self.scheduler {
            Scheduler::Constant => Ok(self.lr_max),
            Scheduler::Cosine => cosine_lr(step, self.total_steps(), self.lr_max, self.lr_min),
        }
    }
}

/// Epoch count of the published settings for an objective.
pub fn paper_epochs(kind: ObjectiveKind) -> usize {
    match kind {
        ObjectiveKind::Sft => 3,
        ObjectiveKind::Dpo | ObjectiveKind::Orpo => 4,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedState {
    pub model: Model,
    pub trace: Vec<StepRecord>,
}

impl TrainedState {
    /// Mean loss of each epoch, in order.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.trace {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss;
            out[r.epoch].1 += 1;
        }
        out.into_iter().filter(|(_, c)| *c > 0).map(|(s, c)| s / c as f64).collect()
    }
}

/// Shared loop: shuffles `items` indices per epoch, averages per-example
/// gradients over each full batch and applies AdamW to the `mode` tensors.
fn optimize<F>(
    mut model: Model,
    mode: Trainable,
    items: usize,
    plan: &PhasePlan,
    loss_of: F,
) -> Result<TrainedState>
where
    F: Fn(&Model, &mut Tape, &Bound, usize) -> Result<Var> + Sync,
{
    let total = plan.total_steps();
    let mut trace = Vec::with_capacity(total);
    if total == 0 {
        return Ok(TrainedState { model, trace });
    }
    let mut state = OptimizerState::for_params(&model.trainable_tensors_mut(mode), plan.optimizer);
    let mut step = 0;
    for epoch in 0..plan.epochs {
        let mut order: Vec<usize> = (0..items).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        for batch in order.chunks_exact(plan.batch_size) {
            let per_example: Vec<Result<(f64, Vec<Tensor>)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut tape = Tape::new();
                    let bound = model.bind(&mut tape, mode);
                    let loss = loss_of(&model, &mut tape, &bound, i)?;
                    let value = tape.value(loss).item();
                    tape.backward(loss)?;
                    let grads = bound.params.iter().map(|&p| tape.grad(p).expect("trainable leaf")).collect();
                    Ok((value, grads))
                })
                .collect();
            let mut loss_sum = 0.0;
            let mut grads: Option<Vec<Tensor>> = None;
            for r in per_example {
                let (l, g) = r?;
                loss_sum += l;
                grads = Some(match grads {
                    None => g,
                    Some(acc) => acc.iter().zip(&g).map(|(a, b)| a.add(b)).collect::<Result<_>>()?,
                });
            }
            let inv = 1.0 / batch.len() as f64;
            let grads: Vec<Tensor> = grads.expect("non-empty batch").into_iter().map(|g| g.scale(inv)).collect();
            let loss = loss_sum * inv;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss became {loss} at step {step}")));
            }
            let lr = plan.lr_at(step)?;
            adamw_step(&mut model.trainable_tensors_mut(mode), &grads, &mut state, lr)?;
            trace.push(StepRecord { phase: plan.phase, epoch, step, lr, loss });
            step += 1;
        }
    }
    Ok(TrainedState { model, trace })
}

/// Trains the adapters of `model` on the first `plan.sample_count` examples
/// of `corpus`. The DPO reference policy is `model` as passed in.
pub fn run_phase(model: Model, corpus: &[PreferenceExample], plan: &PhasePlan) -> Result<TrainedState> {
    plan.validate()?;
    if model.adapters().is_none() {
        return Err(Error::Contract("run_phase needs initialized adapters".into()));
    }
    if corpus.len() < plan.sample_count {
        return Err(Error::Data(format!(
            "phase needs {} examples, corpus has {}",
            plan.sample_count,
            corpus.len()
        )));
    }
    let encoded: Vec<Encoded> = corpus[..plan.sample_count].iter().map(Encoded::from_example).collect();
    let cfg = plan.objective;
    if cfg.kind.needs_rejected() {
        if let Some(i) = encoded.iter().position(|e| e.rejected.is_none()) {
            return Err(Error::ObjectiveMismatch(format!(
                "{} needs rejected completions; example {i} has none",
                cfg.kind.name()
            )));
        }
    }
    let references: Vec<Option<ReferenceLogProbs>> = if cfg.kind == ObjectiveKind::Dpo && plan.total_steps() > 0 {
        encoded
            .par_iter()
            .map(|e| ReferenceLogProbs::compute(&model, e, &cfg).map(Some))
            .collect::<Result<_>>()?
    } else {
        vec![None; encoded.len()]
    };
    optimize(model, Trainable::Adapters, encoded.len(), plan, |m, tape, bound, i| {
        objective_loss(tape, m, bound, &encoded[i], &cfg, references[i])
    })
}

#[derive(Clone, Debug)]
pub struct D2loraRun {
    pub warmup: TrainedState,
    pub adapt: TrainedState,
}

/// Warm-up on `general`, checkpoint, then task adaptation on `task`.
///
/// The warm-up starts from vanilla adapters drawn with `init_seed`, so
/// `m = 0` reproduces plain LoRA exactly. When `checkpoint` is given the
/// warm-up adapters are written there and reloaded before adaptation.
pub fn run_d2lora(
    base: &Model,
    init_seed: u64,
    general: &[PreferenceExample],
    task: &[PreferenceExample],
    warmup_plan: &PhasePlan,
    adapt_plan: &PhasePlan,
    checkpoint: Option<&Path>,
) -> Result<D2loraRun> {
    if warmup_plan.phase != Phase::Warmup || adapt_plan.phase != Phase::Adapt {
        return Err(Error::Config("run_d2lora needs a warm-up plan then an adapt plan".into()));
    }
    adapt_plan.validate()?;
    let start = initialize(base, &InitSpec::new(InitScheme::Vanilla, init_seed))?;
    let warmup = run_phase(start, general, warmup_plan)?;
    let mut adapt_start = warmup.model.clone();
    if let Some(path) = checkpoint {
        let set = warmup.model.adapters().expect("adapters attached");
        let provenance = format!("warmup m={} seed={}", warmup_plan.sample_count, warmup_plan.seed);
        save_adapters(set, &base.config, Some(init_seed), &provenance, path)?;
        adapt_start.adapters = None;
        adapt_start.attach(init_d2lora(path, &base.config)?)?;
    }
    let adapt = run_phase(adapt_start, task, adapt_plan)?;
    Ok(D2loraRun { warmup, adapt })
}

/// Full-parameter language-model training of the base weights on plain text.
pub fn pretrain_base(model: Model, documents: &[String], plan: &PhasePlan) -> Result<TrainedState> {
    plan.validate()?;
    if model.adapters().is_some() {
        return Err(Error::Contract("pretraining expects a model without adapters".into()));
    }
    let max = model.config.max_seq;
    let seqs: Vec<Vec<usize>> = documents
        .iter()
        .take(plan.sample_count)
        .map(|d| {
            let mut ids = tokenize(d);
            ids.push(EOS);
            ids.truncate(max);
            ids
        })
        .filter(|ids| ids.len() >= 2)
        .collect();
    if seqs.len() < plan.sample_count {
        return Err(Error::Data(format!(
            "pretraining needs {} usable documents, found {}",
            plan.sample_count,
            seqs.len()
        )));
    }
    optimize(model, Trainable::Base, seqs.len(), plan, |m, tape, bound, i| {
        let ids = &seqs[i];
        let logits = m.forward_bound(tape, bound, ids)?;
        let mut targets = vec![0; ids.len()];
        let mut mask = vec![0.0; ids.len()];
        for t in 0..ids.len() - 1 {
            targets[t] = ids[t + 1];
            mask[t] = 1.0;
        }
        tape.softmax_cross_entropy(logits, &targets, &mask)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_corpus, TaskTag};
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig { d_model: 16, n_heads: 2, d_ff: 24, n_layers: 1, max_seq: 128, rank: 2, alpha: 2.0, ..ModelConfig::default() }
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 1.0, 0.0).unwrap(), 1.0);
        assert!(cosine_lr(10, 10, 1.0, 0.1).unwrap() - 0.1 < 1e-15);
        assert!((cosine_lr(5, 10, 1.0, 0.2).unwrap() - 0.6).abs() < 1e-12);
        assert!(matches!(cosine_lr(11, 10, 1.0, 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn adamw_first_step() {
        let mut p = Tensor::new(vec![1], vec![0.0]).unwrap();
        let g = [Tensor::new(vec![1], vec![1.0]).unwrap()];
        let mut st = OptimizerState::new(&[1], AdamWConfig::default());
        adamw_step(&mut [&mut p], &g, &mut st, 0.1).unwrap();
        assert_eq!(p.data()[0], -0.1 / (1.0 + 1e-8));
    }

    #[test]
    fn adamw_decay_only() {
        let mut p = Tensor::new(vec![2], vec![2.0, -4.0]).unwrap();
        let g = [Tensor::zeros(&[2])];
        let hyper = AdamWConfig { weight_decay: 0.5, ..AdamWConfig::default() };
        let mut st = OptimizerState::new(&[2], hyper);
        adamw_step(&mut [&mut p], &g, &mut st, 0.1).unwrap();
        assert_eq!(p.data(), &[2.0 - 0.1 * 0.5 * 2.0, -4.0 + 0.1 * 0.5 * 4.0]);
        let mut q = Tensor::zeros(&[3]);
        assert!(adamw_step(&mut [&mut q], &g, &mut st, 0.1).is_err());
    }

    #[test]
    fn warmup_must_be_sft() {
        let mut p = PhasePlan::warmup(10, 0);
        p.objective.kind = ObjectiveKind::Dpo;
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn paper_presets() {
        assert_eq!(PhasePlan::paper_warmup(5, 0).lr_max, 1e-7);
        assert_eq!(PhasePlan::paper_warmup(5, 0).epochs, 1);
        let sft = PhasePlan::paper_adapt(ObjectiveKind::Sft, 5, 0);
        assert_eq!((sft.lr_max, sft.epochs), (1e-6, 3));
        let dpo = PhasePlan::paper_adapt(ObjectiveKind::Dpo, 5, 0);
        assert_eq!((dpo.epochs, dpo.objective.beta), (4, 0.1));
    }

    #[test]
    fn corpus_too_small_is_data_error() {
        let base = Model::build(tiny(), 0).unwrap();
        let m = initialize(&base, &InitSpec::new(InitScheme::Vanilla, 0)).unwrap();
        let corpus = gen_corpus(TaskTag::Math, 4, 0).unwrap();
        let err = run_phase(m, &corpus.examples, &PhasePlan::adapt(ObjectiveKind::Sft, 8, 0)).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn phase_trains_only_adapters_and_is_deterministic() {
        let base = Model::build(tiny(), 0).unwrap();
        let m = initialize(&base, &InitSpec::new(InitScheme::Vanilla, 0)).unwrap();
        let corpus = gen_corpus(TaskTag::Math, 8, 1).unwrap();
        let plan = PhasePlan { batch_size: 4, epochs: 2, ..PhasePlan::adapt(ObjectiveKind::Sft, 8, 3) };
        let a = run_phase(m.clone(), &corpus.examples, &plan).unwrap();
        let b = run_phase(m.clone(), &corpus.examples, &plan).unwrap();
        assert_eq!(a.trace.len(), 4);
        assert_eq!(a.model.adapters(), b.model.adapters());
        assert_eq!(a.model.base.digest(), base.base.digest());
        assert_ne!(a.model.adapters(), m.adapters());
    }

    #[test]
    fn zero_samples_is_zero_steps() {
        let base = Model::build(tiny(), 0).unwrap();
        let m = initialize(&base, &InitSpec::new(InitScheme::Vanilla, 0)).unwrap();
        let out = run_phase(m.clone(), &[], &PhasePlan::adapt(ObjectiveKind::Dpo, 0, 0)).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.model.adapters(), m.adapters());
    }
}
