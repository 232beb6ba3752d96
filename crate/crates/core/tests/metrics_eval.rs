use d2lora::autodiff::Tensor;
use d2lora::data::{gen_corpus, TaskTag};
use d2lora::metrics::{mcq_accuracy, predict_option, rouge, RougeVariant};
use d2lora::model::{Model, ModelConfig};
use d2lora::trainer::{pretrain_base, PhasePlan};
use proptest::prelude::*;

const VARIANTS: [RougeVariant; 3] = [RougeVariant::R1, RougeVariant::R2, RougeVariant::RL];

#[test]
fn rouge_reference_vectors() {
    for v in VARIANTS {
        assert_eq!(rouge("growth and trade in Asia", "growth and trade in Asia", v).f1, 1.0);
        let z = rouge("alpha beta", "gamma delta", v);
        assert_eq!((z.precision, z.recall, z.f1), (0.0, 0.0, 0.0));
    }
    // Unigrams: candidate {the, cat, sat}, reference {the, cat}; 2 overlaps.
    let s = rouge("the cat sat", "the cat", RougeVariant::R1);
    assert_eq!(s.precision, 2.0 / 3.0);
    assert_eq!(s.recall, 1.0);
    assert!((s.f1 - 0.8).abs() < 1e-15);
}

fn zero_logit_model() -> Model {
    let mut m = Model::build(ModelConfig::default(), 0).unwrap();
    m.base.unembed = Tensor::zeros(m.base.unembed.shape());
    m
}

#[test]
fn uniform_model_is_at_chance() {
    let probe = gen_corpus(TaskTag::Mcq, 400, 1_000_000_001).unwrap();
    let acc = mcq_accuracy(&zero_logit_model(), &probe).unwrap().value;
    assert!((acc - 0.25).abs() <= 0.08, "{acc}");
}

#[test]
fn identical_options_pick_the_first() {
    let m = Model::build(ModelConfig::default(), 1).unwrap();
    let opts = vec!["moss".to_string(); 4];
    assert_eq!(predict_option(&m, "The zorb eats", &opts).unwrap(), 0);
}

#[test]
fn training_on_the_probe_memorizes_it() {
    let probe = gen_corpus(TaskTag::Mcq, 200, 1_000_000_001).unwrap();
    let docs: Vec<String> = probe.examples.iter().map(|e| format!("{} {}.", e.prompt, e.chosen)).collect();
    let config = ModelConfig { max_seq: 64, ..ModelConfig::default() };
    let plan = PhasePlan { lr_max: 3e-3, batch_size: 4, epochs: 4, ..PhasePlan::warmup(docs.len(), 0) };
    let model = pretrain_base(Model::build(config, 0).unwrap(), &docs, &plan).unwrap().model;
    let acc = mcq_accuracy(&model, &probe).unwrap().value;
    assert!(acc > 0.9, "{acc}");
}

#[test]
fn mcq_needs_four_options() {
    let mut probe = gen_corpus(TaskTag::Mcq, 3, 1).unwrap();
    probe.examples[1].options.pop();
    assert!(matches!(mcq_accuracy(&zero_logit_model(), &probe), Err(d2lora::Error::Data(_))));
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..8).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn rouge_swap_symmetry_and_bounds(c in sentence(), r in sentence()) {
        let fwd = rouge(&c, &r, RougeVariant::R1);
        let back = rouge(&r, &c, RougeVariant::R1);
        prop_assert_eq!(fwd.precision, back.recall);
        for v in VARIANTS {
            let s = rouge(&c, &r, v);
            for x in [s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
            prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-15);
        }
    }
}
