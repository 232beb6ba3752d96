use d2lora::data::{gen_corpus, TaskTag};
use d2lora::init::{initialize, InitScheme, InitSpec};
use d2lora::metrics::exact_match_accuracy;
use d2lora::model::{Model, ModelConfig};
use d2lora::objectives::ObjectiveKind;
use d2lora::trainer::{run_d2lora, run_phase, PhasePlan, Scheduler};

fn config() -> ModelConfig {
    ModelConfig { d_model: 16, n_heads: 2, d_ff: 32, n_layers: 1, max_seq: 128, rank: 2, alpha: 2.0, ..ModelConfig::default() }
}

#[test]
fn sft_loss_decreases_over_epochs() {
    let base = Model::build(config(), 1).unwrap();
    let start = initialize(&base, &InitSpec::new(InitScheme::Vanilla, 1)).unwrap();
    let task = gen_corpus(TaskTag::Math, 24, 2).unwrap();
    let plan = PhasePlan { epochs: 6, ..PhasePlan::adapt(ObjectiveKind::Sft, 24, 2) };
    let losses = run_phase(start, &task.examples, &plan).unwrap().epoch_losses();
    assert_eq!(losses.len(), 6);
    assert!(losses[5] < losses[0], "{losses:?}");
}

#[test]
fn every_objective_trains_without_error() {
    let base = Model::build(config(), 1).unwrap();
    let task = gen_corpus(TaskTag::Math, 8, 3).unwrap();
    for kind in [ObjectiveKind::Sft, ObjectiveKind::Dpo, ObjectiveKind::Orpo] {
        let start = initialize(&base, &InitSpec::new(InitScheme::Kaiming, 0)).unwrap();
        let plan = PhasePlan { scheduler: Scheduler::Constant, ..PhasePlan::adapt(kind, 8, 0) };
        let out = run_phase(start, &task.examples, &plan).unwrap();
        assert_eq!(out.trace.len(), plan.total_steps());
        assert!(out.trace.iter().all(|r| r.loss.is_finite()));
    }
}

#[test]
fn d2lora_with_zero_warmup_is_vanilla_lora() {
    let dir = tempfile::tempdir().unwrap();
    let base = Model::build(config(), 4).unwrap();
    let task = gen_corpus(TaskTag::Math, 16, 5).unwrap();
    let eval = gen_corpus(TaskTag::Math, 10, 1_000_000_000).unwrap();
    for kind in [ObjectiveKind::Sft, ObjectiveKind::Dpo] {
        let adapt = PhasePlan::adapt(kind, 16, 5);
        let two_phase = run_d2lora(
            &base,
            5,
            &[],
            &task.examples,
            &PhasePlan::warmup(0, 5),
            &adapt,
            Some(&dir.path().join(format!("w-{}.json", kind.name()))),
        )
        .unwrap();
        let lora = run_phase(initialize(&base, &InitSpec::new(InitScheme::Vanilla, 5)).unwrap(), &task.examples, &adapt)
            .unwrap();
        assert!(two_phase.warmup.trace.is_empty());
        assert_eq!(two_phase.adapt.model.adapters(), lora.model.adapters());
        assert_eq!(two_phase.adapt.trace, lora.trace);
        assert_eq!(
            exact_match_accuracy(&two_phase.adapt.model, &eval).unwrap(),
            exact_match_accuracy(&lora.model, &eval).unwrap()
        );
    }
}

#[test]
fn training_is_reproducible() {
    let base = Model::build(config(), 6).unwrap();
    let task = gen_corpus(TaskTag::Math, 12, 7).unwrap();
    let run = || {
        let start = initialize(&base, &InitSpec::new(InitScheme::Kaiming, 3)).unwrap();
        run_phase(start, &task.examples, &PhasePlan::adapt(ObjectiveKind::Orpo, 12, 3)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.model, b.model);
    assert_eq!(a.trace, b.trace);
}
