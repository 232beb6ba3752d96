//! Adapter initialization schemes.
//!
//! Vanilla and Kaiming start from `ΔW = 0`. PiSSA and OLoRA move the
//! leading factors of each weight into the adapter and leave the remainder
//! in the frozen base. D²LoRA loads a warm-up checkpoint.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::linalg::{qr, svd};
use crate::model::{load_adapters, AdapterSet, LoraAdapter, Model, ModelConfig};

/// Standard deviation of the Gaussian factor in vanilla initialization.
pub const VANILLA_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    Vanilla,
    Kaiming,
    Pissa,
    Olora,
    D2lora,
}

impl InitScheme {
    pub const ALL: [InitScheme; 5] =
        [InitScheme::Vanilla, InitScheme::Kaiming, InitScheme::Pissa, InitScheme::Olora, InitScheme::D2lora];

    pub fn name(self) -> &'static str {
        match self {
            InitScheme::Vanilla => "vanilla",
            InitScheme::Kaiming => "kaiming",
            InitScheme::Pissa => "pissa",
            InitScheme::Olora => "olora",
            InitScheme::D2lora => "d2lora",
        }
    }
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InitScheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown init scheme `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub scheme: InitScheme,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_checkpoint: Option<PathBuf>,
}

impl InitSpec {
    pub fn new(scheme: InitScheme, seed: u64) -> Self {
        Self { scheme, seed, source_checkpoint: None }
    }

    pub fn d2lora(checkpoint: impl Into<PathBuf>, seed: u64) -> Self {
        Self { scheme: InitScheme::D2lora, seed, source_checkpoint: Some(checkpoint.into()) }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.scheme, &self.source_checkpoint) {
            (InitScheme::D2lora, None) => Err(Error::Config("d2lora init needs a source checkpoint".into())),
            (s, Some(p)) if s != InitScheme::D2lora => Err(Error::Config(format!(
                "{s} init takes no checkpoint, got {}",
                p.display()
            ))),
            _ => Ok(()),
        }
    }
}

/// Adapter plus the frozen residual that replaces the original weight.
#[derive(Clone, Debug)]
pub struct PissaResult {
    pub adapter: LoraAdapter,
    pub residual: Tensor,
}

fn check_rank(d_out: usize, d_in: usize, r: usize) -> Result<()> {
    if r == 0 || r > d_out.min(d_in) {
        return Err(Error::Config(format!("rank {r} outside 1..={} for a {d_out}x{d_in} layer", d_out.min(d_in))));
    }
    Ok(())
}

fn vanilla_with(d_out: usize, d_in: usize, r: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<LoraAdapter> {
    check_rank(d_out, d_in, r)?;
    let normal = Normal::new(0.0, VANILLA_STD).expect("positive std");
    let b = Tensor::from_fn(&[r, d_in], |_| normal.sample(rng));
    LoraAdapter::new(Tensor::zeros(&[d_out, r]), b, alpha)
}

fn kaiming_with(d_out: usize, d_in: usize, r: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<LoraAdapter> {
    check_rank(d_out, d_in, r)?;
    let bound = (6.0 / d_in as f64).sqrt();
    let b = Tensor::from_fn(&[r, d_in], |_| rng.gen_range(-bound..=bound));
    LoraAdapter::new(Tensor::zeros(&[d_out, r]), b, alpha)
}

/// `B ~ N(0, 0.02²)`, `A = 0`.
pub fn init_vanilla(dims: (usize, usize), r: usize, alpha: f64, seed: u64) -> Result<LoraAdapter> {
    vanilla_with(dims.0, dims.1, r, alpha, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `B ~ U(±√(6/d_in))`, `A = 0`.
pub fn init_kaiming(dims: (usize, usize), r: usize, alpha: f64, seed: u64) -> Result<LoraAdapter> {
    kaiming_with(dims.0, dims.1, r, alpha, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn split_scale(r: usize, alpha: f64) -> f64 {
    (r as f64 / alpha).sqrt()
}

fn residual_of(w: &Tensor, adapter: LoraAdapter) -> Result<PissaResult> {
    let residual = w.sub(&adapter.delta())?;
    Ok(PissaResult { adapter, residual })
}

/// Top-`r` singular triplets of `w`, split evenly between the factors.
pub fn init_pissa(w: &Tensor, r: usize, alpha: f64) -> Result<PissaResult> {
    let (d_out, d_in) = w.dims2()?;
    check_rank(d_out, d_in, r)?;
    let d = svd(w)?;
    let c = split_scale(r, alpha);
    let a = Tensor::from_fn(&[d_out, r], |i| d.u.at(i / r, i % r) * d.s[i % r].sqrt() * c);
    let b = Tensor::from_fn(&[r, d_in], |i| d.s[i / d_in].sqrt() * d.v.at(i % d_in, i / d_in) * c);
    residual_of(w, LoraAdapter::new(a, b, alpha)?)
}

/// Leading `r` columns of `Q` and rows of `R` from a QR factorization of `w`.
pub fn init_olora(w: &Tensor, r: usize, alpha: f64) -> Result<PissaResult> {
    let (d_out, d_in) = w.dims2()?;
    check_rank(d_out, d_in, r)?;
    let (q, rm) = qr(w)?;
    let c = split_scale(r, alpha);
    let a = q.cols_range(0, r).scale(c);
    let b = rm.rows_range(0, r).scale(c);
    residual_of(w, LoraAdapter::new(a, b, alpha)?)
}

/// Fields of two configs that must agree for adapters to transfer.
pub fn config_differences(found: &ModelConfig, expected: &ModelConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut cmp = |name: &str, same: bool| {
        if !same {
            out.push(name.to_string());
        }
    };
    cmp("vocab_size", found.vocab_size == expected.vocab_size);
    cmp("d_model", found.d_model == expected.d_model);
    cmp("n_layers", found.n_layers == expected.n_layers);
    cmp("n_heads", found.n_heads == expected.n_heads);
    cmp("d_ff", found.d_ff == expected.d_ff);
    cmp("max_seq", found.max_seq == expected.max_seq);
    cmp("rank", found.rank == expected.rank);
    cmp("alpha", found.alpha == expected.alpha);
    let mut a = found.target_modules.clone();
    let mut b = expected.target_modules.clone();
    a.sort();
    b.sort();
    cmp("target_modules", a == b);
    out
}

/// Adapters from a warm-up checkpoint saved for a model shaped like `config`.
pub fn init_d2lora(checkpoint: impl AsRef<Path>, config: &ModelConfig) -> Result<AdapterSet> {
    let ckpt = load_adapters(checkpoint)?;
    let fields = config_differences(&ckpt.manifest.config, config);
    if !fields.is_empty() {
        return Err(Error::Compatibility { fields });
    }
    ckpt.adapters.validate(config)?;
    Ok(ckpt.adapters)
}

/// Fresh random adapters for every slot of `config`; slot `i` draws from
/// stream `i` of a generator seeded with `seed`.
pub fn random_adapters(config: &ModelConfig, scheme: InitScheme, seed: u64) -> Result<AdapterSet> {
    let mut set = AdapterSet::default();
    for (i, (tag, _, role)) in config.adapter_slots().into_iter().enumerate() {
        let (d_out, d_in) = config.role_dims(role);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let ad = match scheme {
            InitScheme::Vanilla => vanilla_with(d_out, d_in, config.rank, config.alpha, &mut rng)?,
            InitScheme::Kaiming => kaiming_with(d_out, d_in, config.rank, config.alpha, &mut rng)?,
            other => return Err(Error::Config(format!("{other} init is not random"))),
        };
        set.adapters.insert(tag, ad);
    }
    Ok(set)
}

/// `base` (without adapters) with adapters initialized per `spec`. PiSSA
/// and OLoRA also replace each adapted weight with its residual.
pub fn initialize(base: &Model, spec: &InitSpec) -> Result<Model> {
    spec.validate()?;
    let config = &base.config;
    let mut model = Model { config: config.clone(), base: base.base.clone(), adapters: None };
    let set = match spec.scheme {
        InitScheme::Vanilla | InitScheme::Kaiming => random_adapters(config, spec.scheme, spec.seed)?,
        InitScheme::D2lora => init_d2lora(spec.source_checkpoint.as_ref().expect("validated"), config)?,
        InitScheme::Pissa | InitScheme::Olora => {
            let mut set = AdapterSet::default();
            for (tag, layer, role) in config.adapter_slots() {
                let lin = model.base.blocks[layer].linear_mut(role);
                let res = if spec.scheme == InitScheme::Pissa {
                    init_pissa(&lin.weight, config.rank, config.alpha)?
                } else {
                    init_olora(&lin.weight, config.rank, config.alpha)?
                };
                lin.weight = res.residual;
                set.adapters.insert(tag, res.adapter);
            }
            set
        }
    };
    model.attach(set)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig { d_model: 16, n_heads: 2, d_ff: 24, max_seq: 16, rank: 3, alpha: 6.0, ..ModelConfig::default() }
    }

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
        Tensor::randn(&[rows, cols], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn vanilla_is_zero_delta_and_seeded() {
        let a = init_vanilla((8, 5), 2, 2.0, 9).unwrap();
        assert_eq!(a.delta(), Tensor::zeros(&[8, 5]));
        assert_eq!(a, init_vanilla((8, 5), 2, 2.0, 9).unwrap());
        assert_ne!(a.b, init_vanilla((8, 5), 2, 2.0, 10).unwrap().b);
    }

    #[test]
    fn vanilla_rank_bounds() {
        assert!(matches!(init_vanilla((4, 3), 4, 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(init_vanilla((4, 3), 0, 1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn kaiming_support() {
        let a = init_kaiming((6, 24), 4, 4.0, 1).unwrap();
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(a.b.data().iter().all(|v| v.abs() <= bound));
        assert_eq!(a.a, Tensor::zeros(&[6, 4]));
    }

    #[test]
    fn pissa_full_rank_leaves_zero_residual() {
        let w = rand_matrix(5, 4, 3);
        let p = init_pissa(&w, 4, 8.0).unwrap();
        assert!(p.residual.max_abs() < 1e-10);
    }

    #[test]
    fn olora_factors_reconstruct() {
        let w = rand_matrix(6, 6, 4);
        let p = init_olora(&w, 6, 2.0).unwrap();
        assert!(p.residual.max_abs() < 1e-10);
        assert!(matches!(init_olora(&w, 0, 2.0), Err(Error::Config(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(InitSpec::new(InitScheme::D2lora, 0).validate().is_err());
        let mut s = InitSpec::new(InitScheme::Pissa, 0);
        s.source_checkpoint = Some("x".into());
        assert!(s.validate().is_err());
        assert!(InitSpec::d2lora("x", 0).validate().is_ok());
        assert_eq!("olora".parse::<InitScheme>().unwrap(), InitScheme::Olora);
        assert!("milora".parse::<InitScheme>().is_err());
    }

    #[test]
    fn random_adapters_reject_factorized_schemes() {
        assert!(random_adapters(&small(), InitScheme::Pissa, 0).is_err());
    }

    #[test]
    fn initialize_preserves_function() {
        let base = Model::build(small(), 2).unwrap();
        let tokens = [1, 40, 77, 256, 3, 9];
        let reference = base.forward(&tokens).unwrap();
        for scheme in [InitScheme::Vanilla, InitScheme::Kaiming] {
            let m = initialize(&base, &InitSpec::new(scheme, 5)).unwrap();
            assert_eq!(m.forward(&tokens).unwrap(), reference, "{scheme}");
        }
        for scheme in [InitScheme::Pissa, InitScheme::Olora] {
            let m = initialize(&base, &InitSpec::new(scheme, 5)).unwrap();
            assert!(m.forward(&tokens).unwrap().max_abs_diff(&reference) < 1e-9, "{scheme}");
            assert_ne!(m.base.digest(), base.base.digest());
        }
    }

    #[test]
    fn d2lora_rejects_mismatched_rank() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("warm.json");
        let cfg = small();
        let set = random_adapters(&cfg, InitScheme::Vanilla, 1).unwrap();
        crate::model::save_adapters(&set, &cfg, Some(1), "test", &path).unwrap();
        assert_eq!(init_d2lora(&path, &cfg).unwrap(), set);
        let other = ModelConfig { rank: 2, alpha: 2.0, ..cfg };
        match init_d2lora(&path, &other) {
            Err(Error::Compatibility { fields }) => assert_eq!(fields, vec!["rank", "alpha"]),
            other => panic!("{other:?}"),
        }
    }
}
