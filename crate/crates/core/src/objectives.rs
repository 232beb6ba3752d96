//! Post-training losses: supervised fine-tuning, DPO and ORPO.
//!
//! Each loss is recorded on a caller-supplied tape against a [`Bound`] set
//! of model leaves, so one bind can serve the chosen and rejected passes.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::tokenizer::{completion_ids, prompt_ids};
use crate::data::PreferenceExample;
use crate::error::{Error, Result};
use crate::model::{completion_log_prob, Bound, Model, Normalization, Trainable};

/// Probability clamp applied before forming odds.
pub const ORPO_PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Sft,
    Dpo,
    Orpo,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Sft => "sft",
            ObjectiveKind::Dpo => "dpo",
            ObjectiveKind::Orpo => "orpo",
        }
    }

    pub fn needs_rejected(self) -> bool {
        self != ObjectiveKind::Sft
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sft" => Ok(ObjectiveKind::Sft),
            "dpo" => Ok(ObjectiveKind::Dpo),
            "orpo" => Ok(ObjectiveKind::Orpo),
            other => Err(Error::Config(format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// DPO temperature.
    pub beta: f64,
    /// ORPO odds-ratio weight λ.
    pub orpo_weight: f64,
    pub dpo_length_norm: bool,
    pub orpo_length_norm: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self::new(ObjectiveKind::Sft)
    }
}

impl ObjectiveConfig {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self { kind, beta: 0.1, orpo_weight: 0.1, dpo_length_norm: false, orpo_length_norm: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta {} must be positive", self.beta)));
        }
        if !(self.orpo_weight >= 0.0) {
            return Err(Error::Config(format!("orpo weight {} must be non-negative", self.orpo_weight)));
        }
        Ok(())
    }

    fn dpo_norm(&self) -> Normalization {
        if self.dpo_length_norm {
            Normalization::Mean
        } else {
            Normalization::Sum
        }
    }

    fn orpo_norm(&self) -> Normalization {
        if self.orpo_length_norm {
            Normalization::Mean
        } else {
            Normalization::Sum
        }
    }
}

/// Token ids of an example: prompt ends with the separator, completions with
/// end-of-sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub prompt: Vec<usize>,
    pub chosen: Vec<usize>,
    pub rejected: Option<Vec<usize>>,
}

impl Encoded {
    pub fn from_example(ex: &PreferenceExample) -> Self {
        Self {
            prompt: prompt_ids(&ex.prompt),
            chosen: completion_ids(&ex.chosen),
            rejected: ex.rejected.as_deref().map(completion_ids),
        }
    }

    fn rejected(&self) -> Result<&[usize]> {
        self.rejected
            .as_deref()
            .ok_or_else(|| Error::ObjectiveMismatch("preference loss needs a rejected completion".into()))
    }

    pub fn max_len(&self) -> usize {
        self.prompt.len() + self.chosen.len().max(self.rejected.as_ref().map_or(0, Vec::len))
    }
}

/// Reference-policy log-probabilities of the chosen and rejected
/// completions, fixed for the whole training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceLogProbs {
    pub chosen: f64,
    pub rejected: f64,
}

impl ReferenceLogProbs {
    pub fn compute(reference: &Model, ex: &Encoded, cfg: &ObjectiveConfig) -> Result<Self> {
        let norm = cfg.dpo_norm();
        Ok(Self {
            chosen: reference.sequence_log_prob(&ex.prompt, &ex.chosen, norm)?,
            rejected: reference.sequence_log_prob(&ex.prompt, ex.rejected()?, norm)?,
        })
    }
}

fn concat(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().chain(b).copied().collect()
}

/// Mean cross-entropy over `completion` positions; prompt positions are
/// masked out.
fn masked_ce(tape: &mut Tape, logits: Var, prompt_len: usize, tokens: &[usize]) -> Result<Var> {
    let t = tokens.len();
    let mut targets = vec![0; t];
    let mut mask = vec![0.0; t];
    for i in prompt_len - 1..t - 1 {
        targets[i] = tokens[i + 1];
        mask[i] = 1.0;
    }
    tape.softmax_cross_entropy(logits, &targets, &mask)
}

pub fn sft_loss(tape: &mut Tape, model: &Model, bound: &Bound, ex: &Encoded) -> Result<Var> {
    if ex.chosen.is_empty() {
        return Err(Error::Input("empty completion".into()));
    }
    if ex.prompt.is_empty() {
        return Err(Error::Input("empty prompt".into()));
    }
    let tokens = concat(&ex.prompt, &ex.chosen);
    let logits = model.forward_bound(tape, bound, &tokens)?;
    masked_ce(tape, logits, ex.prompt.len(), &tokens)
}

/// `−log σ(β·[(π_c − ref_c) − (π_r − ref_r)])` with policy log-probs taken
/// from `bound` and reference log-probs supplied as constants.
pub fn dpo_loss(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    ex: &Encoded,
    reference: ReferenceLogProbs,
    cfg: &ObjectiveConfig,
) -> Result<Var> {
    let rejected = ex.rejected()?;
    let norm = cfg.dpo_norm();
    let pc = model.sequence_log_prob_tape(tape, bound, &ex.prompt, &ex.chosen, norm)?;
    let pr = model.sequence_log_prob_tape(tape, bound, &ex.prompt, rejected, norm)?;
    let margin = tape.sub(pc, pr)?;
    let z = tape.add_scalar(margin, -(reference.chosen - reference.rejected));
    let z = tape.scale(z, cfg.beta);
    let ls = tape.log_sigmoid(z);
    Ok(tape.neg(ls))
}

/// Log-odds `log p − log(1 − p)` of a completion whose (clamped)
/// probability is `p = exp(log_p)`.
fn log_odds(tape: &mut Tape, log_p: Var) -> Result<Var> {
    let lp = tape.clamp(log_p, ORPO_PROB_CLAMP.ln(), (1.0 - ORPO_PROB_CLAMP).ln());
    let p = tape.exp(lp);
    let neg_p = tape.scale(p, -1.0);
    let one_minus = tape.add_scalar(neg_p, 1.0);
    let log_one_minus = tape.log(one_minus)?;
    tape.sub(lp, log_one_minus)
}

/// ORPO components recorded on a tape.
pub struct OrpoTerms {
    pub total: Var,
    pub sft: Var,
    pub odds_ratio: Var,
}

pub fn orpo_terms(tape: &mut Tape, model: &Model, bound: &Bound, ex: &Encoded, cfg: &ObjectiveConfig) -> Result<OrpoTerms> {
    let rejected = ex.rejected()?;
    let norm = cfg.orpo_norm();
    let tokens = concat(&ex.prompt, &ex.chosen);
    let logits_c = model.forward_bound(tape, bound, &tokens)?;
    let sft = masked_ce(tape, logits_c, ex.prompt.len(), &tokens)?;
    let lp_c = completion_log_prob(tape, logits_c, ex.prompt.len(), &ex.chosen, norm)?;
    let lp_r = model.sequence_log_prob_tape(tape, bound, &ex.prompt, rejected, norm)?;
    let odds_c = log_odds(tape, lp_c)?;
    let odds_r = log_odds(tape, lp_r)?;
    let diff = tape.sub(odds_c, odds_r)?;
    let ls = tape.log_sigmoid(diff);
    let odds_ratio = tape.neg(ls);
    let weighted = tape.scale(odds_ratio, cfg.orpo_weight);
    let total = tape.add(sft, weighted)?;
    Ok(OrpoTerms { total, sft, odds_ratio })
}

pub fn orpo_loss(tape: &mut Tape, model: &Model, bound: &Bound, ex: &Encoded, cfg: &ObjectiveConfig) -> Result<Var> {
    Ok(orpo_terms(tape, model, bound, ex, cfg)?.total)
}

/// Dispatches on `cfg.kind`. DPO requires `reference`.
pub fn objective_loss(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    ex: &Encoded,
    cfg: &ObjectiveConfig,
    reference: Option<ReferenceLogProbs>,
) -> Result<Var> {
    match cfg.kind {
        ObjectiveKind::Sft => sft_loss(tape, model, bound, ex),
        ObjectiveKind::Dpo => {
            let r = reference
                .ok_or_else(|| Error::ObjectiveMismatch("dpo needs reference log-probabilities".into()))?;
            dpo_loss(tape, model, bound, ex, r, cfg)
        }
        ObjectiveKind::Orpo => orpo_loss(tape, model, bound, ex, cfg),
    }
}

/// Loss value of `ex` under `cfg`, with `reference` as the DPO reference
/// policy.
pub fn loss_value(model: &Model, reference: &Model, ex: &PreferenceExample, cfg: &ObjectiveConfig) -> Result<f64> {
    let enc = Encoded::from_example(ex);
    let r = match cfg.kind {
        ObjectiveKind::Dpo => Some(ReferenceLogProbs::compute(reference, &enc, cfg)?),
        _ => None,
    };
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, Trainable::Nothing);
    let v = objective_loss(&mut tape, model, &bound, &enc, cfg, r)?;
    Ok(tape.value(v).item())
}
