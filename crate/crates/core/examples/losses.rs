//! SFT, DPO and ORPO losses on one preference pair, before and after the
//! policy drifts from the reference.

use d2lora::data::{PreferenceExample, TaskTag};
use d2lora::init::{random_adapters, InitScheme};
use d2lora::model::{Model, ModelConfig};
use d2lora::objectives::{loss_value, ObjectiveConfig, ObjectiveKind};

fn main() -> d2lora::Result<()> {
    let config = ModelConfig::default();
    let reference = Model::build(config.clone(), 0)?;
    // Kaiming starts with A = 0; nudge A so the policy leaves the reference.
    let mut adapters = random_adapters(&config, InitScheme::Kaiming, 5)?;
    for ad in adapters.adapters.values_mut() {
        ad.a = ad.a.map(|_| 0.05);
    }
    let policy = reference.clone().with_adapters(adapters)?;
    let ex = PreferenceExample::new("Tom has 3 apples and gets 4 more.", "3+4=7. boxed{7}", TaskTag::Math)
        .with_rejected("3+4=8. boxed{8}");
    for kind in [ObjectiveKind::Sft, ObjectiveKind::Dpo, ObjectiveKind::Orpo] {
        let cfg = ObjectiveConfig::new(kind);
        println!(
            "{:4}  at reference {:.4}  drifted {:.4}",
            kind.name(),
            loss_value(&reference, &reference, &ex, &cfg)?,
            loss_value(&policy, &reference, &ex, &cfg)?
        );
    }
    println!("DPO at the reference is ln 2 = {:.4}", std::f64::consts::LN_2);
    Ok(())
}
