//! Decoder-only transformer with frozen base weights and low-rank adapters.

mod adapter;
pub mod checkpoint;
mod config;
mod decode;
mod weights;

pub use adapter::{AdapterSet, LoraAdapter};
pub use checkpoint::{load_adapters, save_adapters, Checkpoint, Manifest, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Role};
pub use weights::{BaseWeights, Block, Linear};

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::tokenizer::EOS;
use crate::error::{Error, Result};

/// Which tensors enter the tape as trainable leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    /// Adapter factors only; the base is recorded as constants.
    Adapters,
    /// Every base tensor; adapters (if any) are constants.
    Base,
    Nothing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundAdapter {
    pub a: Var,
    pub b: Var,
    pub scale: f64,
}

#[derive(Clone, Debug)]
pub struct BoundBlock {
    /// ln1 gain, ln1 bias, ln2 gain, ln2 bias
    pub norms: [Var; 4],
    /// `(weight, bias)` indexed by `Role as usize`
    pub linears: [(Var, Var); 6],
}

/// Tape leaves for every tensor of a [`Model`].
#[derive(Clone, Debug)]
pub struct Bound {
    pub token_embed: Var,
    pub pos_embed: Var,
    pub blocks: Vec<BoundBlock>,
    pub lnf_gain: Var,
    pub lnf_bias: Var,
    pub unembed: Var,
    pub adapters: BTreeMap<String, BoundAdapter>,
    /// Trainable leaves in canonical order (see [`Model::trainable_tensors`]).
    pub params: Vec<Var>,
}

impl Bound {
    /// Points the adapter factors at caller-owned leaves, `A` then `B` per
    /// tag in tag order, and makes those the trainable set.
    pub fn rebind_adapters(&mut self, vars: &[Var]) -> Result<()> {
        if vars.len() != 2 * self.adapters.len() {
            return Err(Error::Contract(format!(
                "{} adapter leaves supplied for {} adapters",
                vars.len(),
                self.adapters.len()
            )));
        }
        for (ad, pair) in self.adapters.values_mut().zip(vars.chunks(2)) {
            ad.a = pair[0];
            ad.b = pair[1];
        }
        self.params = vars.to_vec();
        Ok(())
    }
}

/// Output of a recorded forward pass.
pub struct Forward {
    /// `T × vocab` logits.
    pub logits: Var,
    /// Trainable leaves in canonical order (see [`Model::trainable_tensors`]).
    pub params: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub base: BaseWeights,
    pub adapters: Option<AdapterSet>,
}

impl Model {
    /// Fresh base weights from a seeded scaled Gaussian, no adapters.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let base = BaseWeights::init(&config, seed);
        Ok(Self { config, base, adapters: None })
    }

    pub fn with_adapters(mut self, adapters: AdapterSet) -> Result<Self> {
        self.attach(adapters)?;
        Ok(self)
    }

    pub fn attach(&mut self, adapters: AdapterSet) -> Result<()> {
        adapters.validate(&self.config)?;
        self.adapters = Some(adapters);
        Ok(())
    }

    pub fn adapters(&self) -> Option<&AdapterSet> {
        self.adapters.as_ref()
    }

    pub fn trainable_tensors(&self, mode: Trainable) -> Vec<&Tensor> {
        match mode {
            Trainable::Adapters => self.adapters.as_ref().map(|a| a.tensors()).unwrap_or_default(),
            Trainable::Base => self.base.tensors(),
            Trainable::Nothing => Vec::new(),
        }
    }

    pub fn trainable_tensors_mut(&mut self, mode: Trainable) -> Vec<&mut Tensor> {
        match mode {
            Trainable::Adapters => self.adapters.as_mut().map(|a| a.tensors_mut()).unwrap_or_default(),
            Trainable::Base => self.base.tensors_mut(),
            Trainable::Nothing => Vec::new(),
        }
    }

    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_seq {
            return Err(Error::Input(format!(
                "{} tokens exceed max_seq {}",
                tokens.len(),
                self.config.max_seq
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Records every model tensor on `tape` as a leaf; those selected by
    /// `mode` are trainable.
    pub fn bind(&self, tape: &mut Tape, mode: Trainable) -> Bound {
        let mut params = Vec::new();
        let base_rg = mode == Trainable::Base;
        let adapter_rg = mode == Trainable::Adapters;
        let mut leaf = |tape: &mut Tape, t: &Tensor, rg: bool| {
            let v = tape.leaf(t.clone(), rg);
            if rg {
                params.push(v);
            }
            v
        };
        let b = &self.base;
        let token_embed = leaf(tape, &b.token_embed, base_rg);
        let pos_embed = leaf(tape, &b.pos_embed, base_rg);
        let mut blocks = Vec::with_capacity(b.blocks.len());
        for blk in &b.blocks {
            let norms = [
                leaf(tape, &blk.ln1_gain, base_rg),
                leaf(tape, &blk.ln1_bias, base_rg),
                leaf(tape, &blk.ln2_gain, base_rg),
                leaf(tape, &blk.ln2_bias, base_rg),
            ];
            let linears = Role::ALL.map(|role| {
                let l = blk.linear(role);
                (leaf(tape, &l.weight, base_rg), leaf(tape, &l.bias, base_rg))
            });
            blocks.push(BoundBlock { norms, linears });
        }
        let lnf_gain = leaf(tape, &b.lnf_gain, base_rg);
        let lnf_bias = leaf(tape, &b.lnf_bias, base_rg);
        let unembed = leaf(tape, &b.unembed, base_rg);
        let mut adapters = BTreeMap::new();
        if let Some(set) = &self.adapters {
            for (tag, ad) in &set.adapters {
                let a = leaf(tape, &ad.a, adapter_rg);
                let bm = leaf(tape, &ad.b, adapter_rg);
                adapters.insert(tag.clone(), BoundAdapter { a, b: bm, scale: ad.scale() });
            }
        }
        Bound { token_embed, pos_embed, blocks, lnf_gain, lnf_bias, unembed, adapters, params }
    }

    /// Records a causal forward pass of `tokens` on `tape`.
    pub fn forward_tape(&self, tape: &mut Tape, tokens: &[usize], mode: Trainable) -> Result<Forward> {
        let bound = self.bind(tape, mode);
        let logits = self.forward_bound(tape, &bound, tokens)?;
        Ok(Forward { logits, params: bound.params })
    }

    /// Causal `T × vocab` logits of `tokens` using already-bound leaves.
    pub fn forward_bound(&self, tape: &mut Tape, bound: &Bound, tokens: &[usize]) -> Result<Var> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let t = tokens.len();
        let positions: Vec<usize> = (0..t).collect();
        let tok = tape.embedding(bound.token_embed, tokens)?;
        let pos = tape.embedding(bound.pos_embed, &positions)?;
        let mut x = tape.add(tok, pos)?;

        let hd = cfg.head_dim();
        let inv_sqrt = 1.0 / (hd as f64).sqrt();
        for (layer, blk) in bound.blocks.iter().enumerate() {
            let linear = |tape: &mut Tape, input: Var, role: Role| -> Result<Var> {
                let (w, bias) = blk.linears[role as usize];
                let mut y = tape.matmul_t(input, w)?;
                if let Some(ad) = bound.adapters.get(&ModelConfig::tag(layer, role)) {
                    let low = tape.matmul_t(input, ad.b)?;
                    let up = tape.matmul_t(low, ad.a)?;
                    let up = tape.scale(up, ad.scale);
                    y = tape.add(y, up)?;
                }
                tape.add_row(y, bias)
            };

            let h = tape.layer_norm(x, blk.norms[0], blk.norms[1])?;
            let q = linear(tape, h, Role::AttnQ)?;
            let k = linear(tape, h, Role::AttnK)?;
            let v = linear(tape, h, Role::AttnV)?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let qh = tape.slice_cols(q, head * hd, hd)?;
                let kh = tape.slice_cols(k, head * hd, hd)?;
                let vh = tape.slice_cols(v, head * hd, hd)?;
                let scores = tape.matmul_t(qh, kh)?;
                let scores = tape.scale(scores, inv_sqrt);
                let probs = tape.causal_softmax(scores)?;
                heads.push(tape.matmul(probs, vh)?);
            }
            let attn = tape.concat_cols(&heads)?;
            let attn = linear(tape, attn, Role::AttnO)?;
            x = tape.add(x, attn)?;

            let h = tape.layer_norm(x, blk.norms[2], blk.norms[3])?;
            let ff = linear(tape, h, Role::MlpIn)?;
            let ff = tape.relu(ff);
            let ff = linear(tape, ff, Role::MlpOut)?;
            x = tape.add(x, ff)?;
        }
        let h = tape.layer_norm(x, bound.lnf_gain, bound.lnf_bias)?;
        tape.matmul_t(h, bound.unembed)
    }

    /// Causal logits `T × vocab` without recording gradients.
    pub fn forward(&self, tokens: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = self.forward_tape(&mut tape, tokens, Trainable::Nothing)?;
        Ok(tape.value(f.logits).clone())
    }

    /// A copy whose linear weights are `W + (α/r)·A·B` and which carries no
    /// adapters. `self` is untouched.
    pub fn merge(&self) -> Model {
        let mut base = self.base.clone();
        if let Some(set) = &self.adapters {
            for (tag, layer, role) in self.config.adapter_slots() {
                let ad = &set.adapters[&tag];
                let lin = base.blocks[layer].linear_mut(role);
                lin.weight = lin.weight.add(&ad.delta()).expect("validated adapter shape");
            }
        }
        Model { config: self.config.clone(), base, adapters: None }
    }

    /// Greedy decoding after `prompt` until end-of-sequence, `max_new`
    /// tokens, or the context limit. The stop token is not returned.
    pub fn generate(&self, prompt: &[usize], max_new: usize) -> Result<Vec<usize>> {
        self.generate_until(prompt, max_new, |_| false)
    }

    /// [`generate`](Self::generate) that also stops once `stop` accepts the
    /// tokens produced so far.
    pub fn generate_until(&self, prompt: &[usize], max_new: usize, stop: impl Fn(&[usize]) -> bool) -> Result<Vec<usize>> {
        self.check_tokens(prompt)?;
        let mut dec = decode::Decoder::new(self);
        let mut logits = Vec::new();
        for &t in prompt {
            logits = dec.push(t)?;
        }
        let mut out = Vec::new();
        let mut len = prompt.len();
        while out.len() < max_new && len < self.config.max_seq {
            let best = decode::argmax(&logits);
            if best == EOS {
                break;
            }
            out.push(best);
            len += 1;
            if stop(&out) || out.len() == max_new || len == self.config.max_seq {
                break;
            }
            logits = dec.push(best)?;
        }
        Ok(out)
    }

    /// Sum (or per-token mean) log-probability of `completion` given
    /// `prompt`, over completion positions only.
    pub fn sequence_log_prob(&self, prompt: &[usize], completion: &[usize], norm: Normalization) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, Trainable::Nothing);
        let v = self.sequence_log_prob_tape(&mut tape, &bound, prompt, completion, norm)?;
        Ok(tape.value(v).item())
    }

    /// Taped variant of [`sequence_log_prob`](Self::sequence_log_prob).
    pub fn sequence_log_prob_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        prompt: &[usize],
        completion: &[usize],
        norm: Normalization,
    ) -> Result<Var> {
        if completion.is_empty() {
            return Err(Error::Input("empty completion".into()));
        }
        if prompt.is_empty() {
            return Err(Error::Input("empty prompt".into()));
        }
        let tokens: Vec<usize> = prompt.iter().chain(completion).copied().collect();
        let logits = self.forward_bound(tape, bound, &tokens)?;
        completion_log_prob(tape, logits, prompt.len(), completion, norm)
    }
}

/// Log-probability of `completion` read off causal `logits` whose first
/// `prompt_len` rows belong to the prompt.
pub fn completion_log_prob(
    tape: &mut Tape,
    logits: Var,
    prompt_len: usize,
    completion: &[usize],
    norm: Normalization,
) -> Result<Var> {
    let logp = tape.log_softmax(logits)?;
    let picks: Vec<(usize, usize)> = completion
        .iter()
        .enumerate()
        .map(|(j, &id)| (prompt_len - 1 + j, id))
        .collect();
    let picked = tape.gather(logp, &picks)?;
    Ok(match norm {
        Normalization::Sum => tape.sum(picked),
        Normalization::Mean => tape.mean(picked),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig { d_model: 16, n_heads: 2, d_ff: 24, max_seq: 12, rank: 2, alpha: 3.0, ..ModelConfig::default() }
    }

    fn random_adapters(cfg: &ModelConfig, seed: u64) -> AdapterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = AdapterSet::default();
        for (tag, _, role) in cfg.adapter_slots() {
            let (o, i) = cfg.role_dims(role);
            let a = Tensor::randn(&[o, cfg.rank], 0.3, &mut rng);
            let b = Tensor::randn(&[cfg.rank, i], 0.3, &mut rng);
            set.adapters.insert(tag, LoraAdapter::new(a, b, cfg.alpha).unwrap());
        }
        set
    }

    #[test]
    fn same_seed_same_base() {
        let a = Model::build(small(), 5).unwrap();
        let b = Model::build(small(), 5).unwrap();
        assert_eq!(a.base, b.base);
        assert_ne!(a.base, Model::build(small(), 6).unwrap().base);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = ModelConfig { n_heads: 3, ..ModelConfig::default() };
        assert!(matches!(Model::build(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn single_token_logits_shape() {
        let m = Model::build(small(), 1).unwrap();
        assert_eq!(m.forward(&[7]).unwrap().shape(), &[1, m.config.vocab_size]);
    }

    #[test]
    fn out_of_range_token_is_input_error() {
        let m = Model::build(small(), 1).unwrap();
        assert!(matches!(m.forward(&[1, 9999]), Err(Error::Input(_))));
        assert!(matches!(m.forward(&[1; 13]), Err(Error::Input(_))));
    }

    #[test]
    fn zero_delta_is_exactly_base() {
        let cfg = small();
        let base = Model::build(cfg.clone(), 2).unwrap();
        let mut set = random_adapters(&cfg, 9);
        for ad in set.adapters.values_mut() {
            ad.a = Tensor::zeros(ad.a.shape());
        }
        let adapted = base.clone().with_adapters(set).unwrap();
        let toks = [3, 1, 4, 1, 5, 9];
        assert_eq!(adapted.forward(&toks).unwrap(), base.forward(&toks).unwrap());
        assert_eq!(adapted.merge().base, base.base);
    }

    #[test]
    fn merged_matches_adapted() {
        let cfg = small();
        let adapted = Model::build(cfg.clone(), 2).unwrap().with_adapters(random_adapters(&cfg, 4)).unwrap();
        let merged = adapted.merge();
        assert!(merged.adapters.is_none());
        let toks = [10, 20, 30, 40, 50];
        let d = adapted.forward(&toks).unwrap().max_abs_diff(&merged.forward(&toks).unwrap());
        assert!(d < 1e-9, "{d}");
        assert_eq!(adapted.merge(), merged);
    }

    #[test]
    fn uniform_model_log_prob() {
        let cfg = small();
        let mut m = Model::build(cfg.clone(), 0).unwrap();
        m.base.unembed = Tensor::zeros(m.base.unembed.shape());
        let v = cfg.vocab_size as f64;
        let sum = m.sequence_log_prob(&[1, 2], &[3, 4, 5], Normalization::Sum).unwrap();
        assert!((sum + 3.0 * v.ln()).abs() < 1e-12);
        let mean = m.sequence_log_prob(&[1, 2], &[3, 4, 5], Normalization::Mean).unwrap();
        assert!((mean - sum / 3.0).abs() < 1e-15);
        assert!(matches!(m.sequence_log_prob(&[1], &[], Normalization::Sum), Err(Error::Input(_))));
    }

    #[test]
    fn log_prob_matches_explicit_gather() {
        let cfg = small();
        let m = Model::build(cfg.clone(), 3).unwrap().with_adapters(random_adapters(&cfg, 8)).unwrap();
        let (prompt, completion) = ([5usize, 6, 7], [8usize, 9]);
        let logits = m.forward(&[5, 6, 7, 8, 9]).unwrap();
        let mut expected = 0.0;
        for (j, &id) in completion.iter().enumerate() {
            let row = logits.row(prompt.len() - 1 + j);
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            expected += row[id] - lse;
        }
        let got = m.sequence_log_prob(&prompt, &completion, Normalization::Sum).unwrap();
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn adapter_set_validation() {
        let cfg = small();
        let mut set = random_adapters(&cfg, 1);
        assert_eq!(set.param_count(), cfg.adapter_param_count());
        set.adapters.pop_first();
        assert!(Model::build(cfg, 0).unwrap().with_adapters(set).is_err());
    }

    #[test]
    fn cached_decoding_matches_full_forward() {
        let cfg = ModelConfig { max_seq: 24, ..small() };
        let m = Model::build(cfg.clone(), 8).unwrap().with_adapters(random_adapters(&cfg, 9)).unwrap();
        let prompt = [5, 80, 256];
        let mut ctx = prompt.to_vec();
        let mut naive = Vec::new();
        while ctx.len() < cfg.max_seq {
            let logits = m.forward(&ctx).unwrap();
            let best = decode::argmax(logits.row(logits.rows() - 1));
            if best == EOS {
                break;
            }
            naive.push(best);
            ctx.push(best);
        }
        assert_eq!(m.generate(&prompt, 100).unwrap(), naive);
        assert_eq!(m.generate(&prompt, 2).unwrap(), naive[..2.min(naive.len())]);
    }
}
