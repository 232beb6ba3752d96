use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Low-rank update `ΔW = (α/r)·A·B` for one linear map, with `A` of shape
/// `d_out × r` and `B` of shape `r × d_in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub a: Tensor,
    pub b: Tensor,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraAdapter {
    pub fn new(a: Tensor, b: Tensor, alpha: f64) -> Result<Self> {
        let (_, r) = a.dims2()?;
        let (r2, _) = b.dims2()?;
        if r != r2 {
            return Err(Error::Dimension(format!(
                "adapter factors {:?} and {:?} disagree on rank",
                a.shape(),
                b.shape()
            )));
        }
        Ok(Self { a, b, rank: r, alpha })
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn d_out(&self) -> usize {
        self.a.rows()
    }

    pub fn d_in(&self) -> usize {
        self.b.cols()
    }

    pub fn delta(&self) -> Tensor {
        self.a.matmul(&self.b).expect("rank agrees by construction").scale(self.scale())
    }

    pub fn param_count(&self) -> usize {
        self.a.numel() + self.b.numel()
    }
}

/// Adapters keyed by tag (`layers.{i}.{role}`), iterated in tag order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterSet {
    pub adapters: BTreeMap<String, LoraAdapter>,
}

impl AdapterSet {
    pub fn get(&self, tag: &str) -> Option<&LoraAdapter> {
        self.adapters.get(tag)
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.adapters.values().map(LoraAdapter::param_count).sum()
    }

    /// `A` then `B` of each adapter, in tag order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.adapters.values().flat_map(|a| [&a.a, &a.b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.adapters.values_mut().flat_map(|a| [&mut a.a, &mut a.b]).collect()
    }

    /// Checks exact, shape-correct coverage of the config's target modules.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let slots = config.adapter_slots();
        if slots.len() != self.adapters.len() || slots.iter().any(|(t, _, _)| !self.adapters.contains_key(t)) {
            let want: Vec<_> = slots.iter().map(|s| s.0.as_str()).collect();
            let have: Vec<_> = self.adapters.keys().map(String::as_str).collect();
            return Err(Error::Config(format!("adapter tags {have:?} do not cover {want:?}")));
        }
        for (tag, _, role) in &slots {
            let ad = &self.adapters[tag];
            let (o, i) = config.role_dims(*role);
            if ad.a.shape() != [o, config.rank] || ad.b.shape() != [config.rank, i] || ad.rank != config.rank {
                return Err(Error::Dimension(format!(
                    "adapter {tag}: A {:?}, B {:?} for a {o}×{i} weight at rank {}",
                    ad.a.shape(),
                    ad.b.shape(),
                    config.rank
                )));
            }
        }
        Ok(())
    }
}
