use d2lora::autodiff::{grad_check, Tape, Tensor};
use d2lora::data::{gen_corpus, PreferenceExample, TaskTag};
use d2lora::init::{init_d2lora, initialize, random_adapters, InitScheme, InitSpec};
use d2lora::model::{save_adapters, Model, ModelConfig, Normalization, Trainable};
use d2lora::objectives::{
    dpo_loss, orpo_loss, sft_loss, Encoded, ObjectiveConfig, ObjectiveKind, ReferenceLogProbs,
};
use d2lora::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tokens() -> Vec<usize> {
    b"Ann has 4 pens.".iter().map(|&b| b as usize).collect()
}

#[test]
fn every_scheme_preserves_initial_logits() {
    let base = Model::build(ModelConfig::default(), 3).unwrap();
    let reference = base.forward(&tokens()).unwrap();
    for scheme in [InitScheme::Vanilla, InitScheme::Kaiming, InitScheme::Pissa, InitScheme::Olora] {
        let m = initialize(&base, &InitSpec::new(scheme, 9)).unwrap();
        let diff = m.forward(&tokens()).unwrap().max_abs_diff(&reference);
        match scheme {
            InitScheme::Vanilla | InitScheme::Kaiming => assert_eq!(diff, 0.0, "{scheme}"),
            _ => assert!(diff < 1e-9, "{scheme}: {diff:.2e}"),
        }
    }
}

#[test]
fn d2lora_rejects_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig::default();
    let path = dir.path().join("w.json");
    save_adapters(&random_adapters(&cfg, InitScheme::Vanilla, 1).unwrap(), &cfg, Some(1), "test", &path).unwrap();
    assert!(init_d2lora(&path, &cfg).is_ok());
    let other = ModelConfig { rank: 8, alpha: 8.0, ..cfg };
    match init_d2lora(&path, &other) {
        Err(Error::Compatibility { fields }) => assert!(fields.iter().any(|f| f.contains("rank"))),
        other => panic!("expected a compatibility error, got {other:?}"),
    }
    assert!(InitSpec::new(InitScheme::D2lora, 0).validate().is_err());
}

fn small_config() -> ModelConfig {
    ModelConfig { d_model: 16, n_heads: 2, d_ff: 32, n_layers: 2, max_seq: 64, rank: 2, alpha: 4.0, ..ModelConfig::default() }
}

/// Model whose adapters have nonzero A and B, so every adapter gradient is
/// informative.
fn drifted_model(cfg: ModelConfig) -> Model {
    let mut set = random_adapters(&cfg, InitScheme::Kaiming, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for ad in set.adapters.values_mut() {
        ad.a = Tensor::randn(ad.a.shape(), 0.3, &mut rng);
    }
    Model::build(cfg, 2).unwrap().with_adapters(set).unwrap()
}

fn short_pair() -> PreferenceExample {
    PreferenceExample::new("2+3?", "5. boxed{5}", TaskTag::Math).with_rejected("6. boxed{6}")
}

/// Every adapter element of a small model. The desk-scale version is an
/// acceptance criterion.
#[test]
fn full_losses_pass_gradient_check() {
    let policy = drifted_model(small_config());
    let reference = Model::build(small_config(), 2).unwrap();
    let ex = Encoded::from_example(&short_pair());
    let inputs: Vec<Tensor> = policy.adapters().unwrap().tensors().into_iter().cloned().collect();
    for kind in [ObjectiveKind::Sft, ObjectiveKind::Dpo, ObjectiveKind::Orpo] {
        let cfg = ObjectiveConfig::new(kind);
        let refs = ReferenceLogProbs::compute(&reference, &ex, &cfg).unwrap();
        let err = grad_check(
            |tape, vars| {
                let mut bound = policy.bind(tape, Trainable::Adapters);
                bound.rebind_adapters(vars)?;
                match kind {
                    ObjectiveKind::Sft => sft_loss(tape, &policy, &bound, &ex),
                    ObjectiveKind::Dpo => dpo_loss(tape, &policy, &bound, &ex, refs, &cfg),
                    ObjectiveKind::Orpo => orpo_loss(tape, &policy, &bound, &ex, &cfg),
                }
            },
            &inputs,
            1e-5,
        );
        assert!(err < 1e-4, "{}: relative gradient error {err:.3e}", kind.name());
    }
}

#[test]
fn dpo_step_widens_the_preference_margin() {
    let policy = drifted_model(ModelConfig::default());
    let reference = policy.clone();
    let pair = short_pair();
    let ex = Encoded::from_example(&pair);
    let cfg = ObjectiveConfig::new(ObjectiveKind::Dpo);
    let refs = ReferenceLogProbs::compute(&reference, &ex, &cfg).unwrap();
    let margin = |m: &Model| {
        let c = m.sequence_log_prob(&ex.prompt, &ex.chosen, Normalization::Sum).unwrap();
        let r = m.sequence_log_prob(&ex.prompt, ex.rejected.as_ref().unwrap(), Normalization::Sum).unwrap();
        c - r
    };
    let mut tape = Tape::new();
    let bound = policy.bind(&mut tape, Trainable::Adapters);
    let loss = dpo_loss(&mut tape, &policy, &bound, &ex, refs, &cfg).unwrap();
    tape.backward(loss).unwrap();
    let grads: Vec<Tensor> = bound.params.iter().map(|&v| tape.grad(v).unwrap()).collect();
    let mut stepped = policy.clone();
    let mut set = stepped.adapters().unwrap().clone();
    for (t, g) in set.tensors_mut().into_iter().zip(&grads) {
        *t = t.sub(&g.scale(1e-3)).unwrap();
    }
    stepped = stepped.with_adapters(set).unwrap();
    assert!(margin(&stepped) > margin(&policy));
}

#[test]
fn dpo_is_ln2_at_zero_delta_on_20_examples() {
    let base = Model::build(ModelConfig::default(), 7).unwrap();
    let corpus = gen_corpus(TaskTag::Math, 20, 3).unwrap();
    let cfg = ObjectiveConfig::new(ObjectiveKind::Dpo);
    for (i, ex) in corpus.examples.iter().enumerate() {
        let policy = initialize(&base, &InitSpec::new(InitScheme::Vanilla, i as u64)).unwrap();
        let v = d2lora::objectives::loss_value(&policy, &base, ex, &cfg).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12, "example {i}: {v}");
    }
}

#[test]
fn preference_objectives_need_rejected() {
    let base = Model::build(ModelConfig::default(), 0).unwrap();
    let ex = PreferenceExample::new("Title?", "A title", TaskTag::Title);
    for kind in [ObjectiveKind::Dpo, ObjectiveKind::Orpo] {
        let r = d2lora::objectives::loss_value(&base, &base, &ex, &ObjectiveConfig::new(kind));
        assert!(matches!(r, Err(Error::ObjectiveMismatch(_))), "{}", kind.name());
    }
}
