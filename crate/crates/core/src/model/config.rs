use serde::{Deserialize, Serialize};

use crate::data::tokenizer::VOCAB_SIZE;
use crate::error::{Error, Result};

/// The six linear maps of a transformer block that can carry an adapter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    AttnQ,
    AttnK,
    AttnV,
    AttnO,
    MlpIn,
    MlpOut,
}

impl Role {
    pub const ALL: [Role; 6] = [Role::AttnQ, Role::AttnK, Role::AttnV, Role::AttnO, Role::MlpIn, Role::MlpOut];

    pub fn name(self) -> &'static str {
        match self {
            Role::AttnQ => "attn_q",
            Role::AttnK => "attn_k",
            Role::AttnV => "attn_v",
            Role::AttnO => "attn_o",
            Role::MlpIn => "mlp_in",
            Role::MlpOut => "mlp_out",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown target module `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub rank: usize,
    pub alpha: f64,
    pub target_modules: Vec<Role>,
}

impl Default for ModelConfig {
    /// Desk-scale model: trains in seconds on one core.
    fn default() -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_seq: 256,
            rank: 4,
            alpha: 4.0,
            target_modules: Role::ALL.to_vec(),
        }
    }
}

impl ModelConfig {
    /// Adapter rank and alpha used for the 8B-parameter runs.
    pub fn paper_scale(mut self) -> Self {
        self.rank = 16;
        self.alpha = 16.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return fail("model extents must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.rank == 0 || self.rank > self.d_model.min(self.d_ff) {
            return fail(format!(
                "adapter rank {} outside [1, {}]",
                self.rank,
                self.d_model.min(self.d_ff)
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("adapter alpha {} must be positive", self.alpha));
        }
        if self.max_seq < 2 {
            return fail(format!("max_seq {} must be at least 2", self.max_seq));
        }
        let mut seen = self.target_modules.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.target_modules.len() {
            return fail("duplicate target module".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// `(d_out, d_in)` of the weight matrix behind `role`.
    pub fn role_dims(&self, role: Role) -> (usize, usize) {
        match role {
            Role::AttnQ | Role::AttnK | Role::AttnV | Role::AttnO => (self.d_model, self.d_model),
            Role::MlpIn => (self.d_ff, self.d_model),
            Role::MlpOut => (self.d_model, self.d_ff),
        }
    }

    pub fn adapter_scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Trainable adapter parameters: `r·(d_out + d_in)` per adapted layer.
    pub fn adapter_param_count(&self) -> usize {
        self.n_layers
            * self
                .target_modules
                .iter()
                .map(|&r| {
                    let (o, i) = self.role_dims(r);
                    self.rank * (o + i)
                })
                .sum::<usize>()
    }

    /// Adapter tag for `role` in block `layer`.
    pub fn tag(layer: usize, role: Role) -> String {
        format!("layers.{layer}.{}", role.name())
    }

    /// Every `(tag, layer, role)` an adapter set must cover, in tag order.
    pub fn adapter_slots(&self) -> Vec<(String, usize, Role)> {
        let mut slots: Vec<_> = (0..self.n_layers)
            .flat_map(|l| self.target_modules.iter().map(move |&r| (Self::tag(l, r), l, r)))
            .collect();
        slots.sort();
        slots
    }
}
