//! Warm-up on the general mix, then DPO on math pairs, from a small
//! pretrained base. Prints per-epoch losses for both phases.

use d2lora::data::{gen_corpus, pretraining_documents, TaskTag};
use d2lora::model::{Model, ModelConfig};
use d2lora::objectives::ObjectiveKind;
use d2lora::trainer::{pretrain_base, run_d2lora, PhasePlan};

fn main() -> d2lora::Result<()> {
    let config = ModelConfig::default();
    let docs = pretraining_documents(400, 0);
    let plan = PhasePlan { lr_max: 3e-3, batch_size: 8, ..PhasePlan::warmup(docs.len(), 0) };
    let base = pretrain_base(Model::build(config, 0)?, &docs, &plan)?.model;

    let general = gen_corpus(TaskTag::General, 200, 500_000_001)?;
    let task = gen_corpus(TaskTag::Math, 40, 1)?;
    let warmup = PhasePlan::warmup(general.len(), 1);
    let adapt = PhasePlan::adapt(ObjectiveKind::Dpo, task.len(), 1);
    let ckpt = std::env::temp_dir().join("d2lora-two-phase-warmup.json");
    let run = run_d2lora(&base, 1, &general.examples, &task.examples, &warmup, &adapt, Some(&ckpt))?;
    println!("warm-up epoch losses: {:.4?}", run.warmup.epoch_losses());
    println!("dpo epoch losses:     {:.4?}", run.adapt.epoch_losses());
    println!("warm-up checkpoint:   {}", ckpt.display());
    Ok(())
}
