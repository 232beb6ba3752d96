use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, Role};
use crate::autodiff::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `d_out × d_in`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub attn_q: Linear,
    pub attn_k: Linear,
    pub attn_v: Linear,
    pub attn_o: Linear,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl Block {
    pub fn linear(&self, role: Role) -> &Linear {
        match role {
            Role::AttnQ => &self.attn_q,
            Role::AttnK => &self.attn_k,
            Role::AttnV => &self.attn_v,
            Role::AttnO => &self.attn_o,
            Role::MlpIn => &self.mlp_in,
            Role::MlpOut => &self.mlp_out,
        }
    }

    pub fn linear_mut(&mut self, role: Role) -> &mut Linear {
        match role {
            Role::AttnQ => &mut self.attn_q,
            Role::AttnK => &mut self.attn_k,
            Role::AttnV => &mut self.attn_v,
            Role::AttnO => &mut self.attn_o,
            Role::MlpIn => &mut self.mlp_in,
            Role::MlpOut => &mut self.mlp_out,
        }
    }
}

/// Frozen base of the model. Adapter training never writes to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseWeights {
    pub token_embed: Tensor,
    pub pos_embed: Tensor,
    pub blocks: Vec<Block>,
    pub lnf_gain: Tensor,
    pub lnf_bias: Tensor,
    /// `vocab × d_model` output projection.
    pub unembed: Tensor,
}

impl BaseWeights {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let linear = |rng: &mut ChaCha8Rng, role: Role| {
            let (o, i) = config.role_dims(role);
            Linear {
                weight: Tensor::randn(&[o, i], 1.0 / (i as f64).sqrt(), rng),
                bias: Tensor::zeros(&[o]),
            }
        };
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1_gain: Tensor::ones(&[d]),
                ln1_bias: Tensor::zeros(&[d]),
                ln2_gain: Tensor::ones(&[d]),
                ln2_bias: Tensor::zeros(&[d]),
                attn_q: linear(&mut rng, Role::AttnQ),
                attn_k: linear(&mut rng, Role::AttnK),
                attn_v: linear(&mut rng, Role::AttnV),
                attn_o: linear(&mut rng, Role::AttnO),
                mlp_in: linear(&mut rng, Role::MlpIn),
                mlp_out: linear(&mut rng, Role::MlpOut),
            })
            .collect();
        Self {
            token_embed: Tensor::randn(&[config.vocab_size, d], 0.1, &mut rng),
            pos_embed: Tensor::randn(&[config.max_seq, d], 0.1, &mut rng),
            blocks,
            lnf_gain: Tensor::ones(&[d]),
            lnf_bias: Tensor::zeros(&[d]),
            unembed: Tensor::randn(&[config.vocab_size, d], 1.0 / (d as f64).sqrt(), &mut rng),
        }
    }

    /// Every tensor in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.token_embed, &self.pos_embed];
        for b in &self.blocks {
            out.extend([&b.ln1_gain, &b.ln1_bias, &b.ln2_gain, &b.ln2_bias]);
            for role in Role::ALL {
                let l = b.linear(role);
                out.extend([&l.weight, &l.bias]);
            }
        }
        out.extend([&self.lnf_gain, &self.lnf_bias, &self.unembed]);
        out
    }

    /// Every tensor in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_embed, &mut self.pos_embed];
        for b in &mut self.blocks {
            out.push(&mut b.ln1_gain);
            out.push(&mut b.ln1_bias);
            out.push(&mut b.ln2_gain);
            out.push(&mut b.ln2_bias);
            let Block { attn_q, attn_k, attn_v, attn_o, mlp_in, mlp_out, .. } = b;
            for l in [attn_q, attn_k, attn_v, attn_o, mlp_in, mlp_out] {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out.push(&mut self.lnf_gain);
        out.push(&mut self.lnf_bias);
        out.push(&mut self.unembed);
        out
    }

    /// SHA-256 over every value, for the frozen-base invariant.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in self.tensors() {
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
