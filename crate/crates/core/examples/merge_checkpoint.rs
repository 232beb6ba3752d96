//! Attaches random adapters, merges them into the base and round-trips them
//! through a checkpoint.

use d2lora::init::{random_adapters, InitScheme};
use d2lora::model::{load_adapters, save_adapters, Model, ModelConfig};

fn main() -> d2lora::Result<()> {
    let config = ModelConfig::default();
    let adapters = random_adapters(&config, InitScheme::Kaiming, 11)?;
    println!("{} adapters, {} trainable parameters", adapters.len(), adapters.param_count());
    let model = Model::build(config.clone(), 0)?.with_adapters(adapters.clone())?;

    let tokens: Vec<usize> = b"merge me".iter().map(|&b| b as usize).collect();
    let adapted = model.forward(&tokens)?;
    let merged = model.merge().forward(&tokens)?;
    println!("adapter path vs merged weights: max |diff| = {:.2e}", adapted.max_abs_diff(&merged));

    let dir = std::env::temp_dir().join("d2lora-merge-example");
    let path = dir.join("adapters.json");
    std::fs::create_dir_all(&dir).map_err(|e| d2lora::Error::Io { path: dir.clone(), source: e })?;
    save_adapters(&adapters, &config, Some(11), "merge example", &path)?;
    let back = load_adapters(&path)?;
    println!("checkpoint round trip exact: {}", back.adapters == adapters);
    Ok(())
}
