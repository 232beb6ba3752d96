//! A scaled-down effectiveness sweep: LoRA vs D²LoRA on math at two sizes,
//! written to a metrics file and plotted.
//!
//! Output goes under `$D2LORA_OUT` (or `d2lora-out`) in `example-sweep/`.

use d2lora::xp::{default_out_dir, plot_file, run_experiment, ExperimentKind, ExperimentSpec};

fn main() -> d2lora::Result<()> {
    let mut spec = ExperimentSpec::new(ExperimentKind::Effectiveness);
    spec.n_grid = vec![40, 120];
    spec.m = 300;
    spec.eval_size = 40;
    spec.base.documents = 2000;
    spec.out_dir = default_out_dir().join("example-sweep");
    println!("{}", spec.to_toml_string()?);

    let out = run_experiment(&spec, &mut |r| {
        println!("{:8} n={:4} {:17} {:.4}", r.scheme, r.n, r.metric, r.value);
    })?;
    let svg = out.metrics_path.with_extension("svg");
    plot_file(&out.metrics_path, "exact_match", &svg)?;
    println!("metrics: {}\nplot:    {}", out.metrics_path.display(), svg.display());
    Ok(())
}
