//! Renders a forgetting-style plot from hand-made records, including the
//! n = 0 starting point and a spread across three seeds.

use d2lora::xp::{emit_plot, MetricsRecord};

fn main() -> d2lora::Result<()> {
    let mut records = Vec::new();
    for (scheme, start) in [("vanilla", 0.30), ("d2lora", 0.42)] {
        for seed in 0..3u64 {
            for (i, n) in [0usize, 100, 500, 2000].into_iter().enumerate() {
                records.push(MetricsRecord {
                    experiment: "forgetting".into(),
                    method: "sft".into(),
                    scheme: scheme.into(),
                    m: if scheme == "d2lora" { 2000 } else { 0 },
                    n,
                    seed,
                    metric: "mcq_accuracy".into(),
                    value: start - 0.02 * i as f64 + 0.01 * seed as f64,
                    wall_time: 0.0,
                });
            }
        }
    }
    let svg = emit_plot(&records, "mcq_accuracy")?;
    let path = std::env::temp_dir().join("d2lora-forgetting-example.svg");
    std::fs::write(&path, &svg).map_err(|e| d2lora::Error::Io { path: path.clone(), source: e })?;
    println!("{} bytes written to {}", svg.len(), path.display());
    Ok(())
}
