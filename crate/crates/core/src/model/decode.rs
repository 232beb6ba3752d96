//! Incremental greedy decoding with per-layer key/value caches.

use super::{Linear, Model, Role};
use crate::autodiff::{Tensor, LAYER_NORM_EPS};
use crate::error::{Error, Result};

fn layer_norm(x: &[f64], gain: &Tensor, bias: &Tensor) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    x.iter()
        .zip(gain.data().iter().zip(bias.data()))
        .map(|(v, (g, b))| (v - mean) * r * g + b)
        .collect()
}

fn apply(l: &Linear, x: &[f64]) -> Vec<f64> {
    let d_in = x.len();
    l.weight
        .data()
        .chunks_exact(d_in)
        .zip(l.bias.data())
        .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
        .collect()
}

/// Runs a merged model one position at a time.
pub(crate) struct Decoder {
    model: Model,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl Decoder {
    pub(crate) fn new(model: &Model) -> Self {
        let model = model.merge();
        let n = model.config.n_layers;
        Self { model, keys: vec![Vec::new(); n], values: vec![Vec::new(); n], len: 0 }
    }

    /// Appends `token` and returns the next-token logits.
    pub(crate) fn push(&mut self, token: usize) -> Result<Vec<f64>> {
        let cfg = &self.model.config;
        if self.len >= cfg.max_seq {
            return Err(Error::Input(format!("{} tokens exceed max_seq {}", self.len + 1, cfg.max_seq)));
        }
        if token >= cfg.vocab_size {
            return Err(Error::Input(format!("token id {token} outside vocabulary of {}", cfg.vocab_size)));
        }
        let base = &self.model.base;
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let inv_sqrt = 1.0 / (hd as f64).sqrt();
        let mut x: Vec<f64> =
            base.token_embed.row(token).iter().zip(base.pos_embed.row(self.len)).map(|(a, b)| a + b).collect();
        let t = self.len + 1;
        for (layer, blk) in base.blocks.iter().enumerate() {
            let h = layer_norm(&x, &blk.ln1_gain, &blk.ln1_bias);
            let q = apply(blk.linear(Role::AttnQ), &h);
            self.keys[layer].extend(apply(blk.linear(Role::AttnK), &h));
            self.values[layer].extend(apply(blk.linear(Role::AttnV), &h));
            let (keys, values) = (&self.keys[layer], &self.values[layer]);
            let mut attn = vec![0.0; d];
            for head in 0..cfg.n_heads {
                let off = head * hd;
                let qh = &q[off..off + hd];
                let scores: Vec<f64> = (0..t)
                    .map(|j| qh.iter().zip(&keys[j * d + off..j * d + off + hd]).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt)
                    .collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (j, e) in exps.iter().enumerate() {
                    let p = e / z;
                    for (o, v) in attn[off..off + hd].iter_mut().zip(&values[j * d + off..j * d + off + hd]) {
                        *o += p * v;
                    }
                }
            }
            let o = apply(blk.linear(Role::AttnO), &attn);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            let h = layer_norm(&x, &blk.ln2_gain, &blk.ln2_bias);
            let mut ff = apply(blk.linear(Role::MlpIn), &h);
            ff.iter_mut().for_each(|v| *v = v.max(0.0));
            let ff = apply(blk.linear(Role::MlpOut), &ff);
            x.iter_mut().zip(&ff).for_each(|(a, b)| *a += b);
        }
        self.len = t;
        let h = layer_norm(&x, &base.lnf_gain, &base.lnf_bias);
        Ok(base.unembed.data().chunks_exact(d).map(|row| row.iter().zip(&h).map(|(a, b)| a * b).sum()).collect())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
