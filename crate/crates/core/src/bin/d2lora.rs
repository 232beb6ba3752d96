use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use d2lora::data::{gen_corpus, TaskTag};
use d2lora::init::{initialize, InitScheme, InitSpec};
use d2lora::model::{load_adapters, save_adapters};
use d2lora::objectives::ObjectiveKind;
use d2lora::xp::{plot_file, run_experiment, ExperimentKind, ExperimentSpec, Lab, OUT_ENV};
use d2lora::{Error, Result};

#[derive(Parser)]
#[command(name = "d2lora", version, about = "Two-phase LoRA fine-tuning lab on a tiny transformer")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config in TOML, mirroring the ExperimentSpec fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; replaces the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root.
    #[arg(long, global = true, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Rank 16, alpha 16 and the published learning rates and epochs.
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated corpus as JSON lines.
    GenData {
        #[arg(long, default_value = "math")]
        task: TaskTag,
        #[arg(long, default_value_t = 100)]
        size: usize,
    },
    /// Train (or reuse) the warm-up checkpoint for the configured m.
    Warmup {
        #[arg(long)]
        m: Option<usize>,
    },
    /// Task adaptation for one (method, scheme, n) cell; saves the adapters.
    Train {
        #[arg(long, default_value = "sft")]
        method: ObjectiveKind,
        #[arg(long, default_value = "vanilla")]
        scheme: InitScheme,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        task: Option<TaskTag>,
    },
    /// Task and probe metrics for the base or a saved adapter checkpoint.
    Eval {
        /// Adapter manifest written by `train` or `warmup`.
        #[arg(long)]
        adapters: Option<PathBuf>,
        /// Scheme the adapters were trained from; PiSSA and OLoRA need the
        /// matching residual base.
        #[arg(long, default_value = "vanilla")]
        scheme: InitScheme,
        #[arg(long)]
        task: Option<TaskTag>,
    },
    /// Run a full sweep and write metrics plus a manifest.
    Sweep { experiment: ExperimentKind },
    /// Render one metric of a metrics file as SVG.
    Plot {
        metrics: PathBuf,
        #[arg(long, default_value = "exact_match")]
        metric: String,
        /// Output file; defaults to `{metrics stem}-{metric}.svg` beside the input.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

impl Common {
    fn spec(&self, kind: ExperimentKind) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => {
                let spec = ExperimentSpec::load(path)?;
                if spec.experiment != kind {
                    return Err(Error::Config(format!(
                        "{} describes {}, not {}",
                        path.display(),
                        spec.experiment.name(),
                        kind.name()
                    )));
                }
                spec
            }
            None => ExperimentSpec::new(kind),
        };
        if self.paper_scale {
            spec = spec.paper_scale();
        }
        if let Some(seed) = self.seed {
            spec.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            spec.out_dir = out.clone();
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Spec for single-cell commands: the config's experiment if one is
    /// given, otherwise effectiveness defaults.
    fn cell_spec(&self) -> Result<ExperimentSpec> {
        let kind = match &self.config {
            Some(path) => ExperimentSpec::load(path)?.experiment,
            None => ExperimentKind::Effectiveness,
        };
        self.spec(kind)
    }
}

fn print_metrics(rows: &[(String, f64)]) -> Result<()> {
    let map: serde_json::Map<String, serde_json::Value> =
        rows.iter().map(|(k, v)| (k.clone(), serde_json::json!(v))).collect();
    println!("{}", serde_json::Value::Object(map));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::GenData { task, size } => {
            let seed = common.seed.unwrap_or(0);
            let corpus = gen_corpus(task, size, seed)?;
            let dir = common.out.clone().unwrap_or_else(d2lora::xp::default_out_dir);
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            let path = dir.join(format!("{}-{size}-s{seed}.jsonl", task.name()));
            let mut text = String::new();
            for ex in &corpus.examples {
                text.push_str(&serde_json::to_string(ex)?);
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            println!("{}", path.display());
        }
        Command::Warmup { m } => {
            let mut spec = common.cell_spec()?;
            if let Some(m) = m {
                spec.m = m;
            }
            let seed = spec.seeds[0];
            let lab = Lab::new(spec)?;
            println!("{}", lab.warmup_checkpoint(seed)?.display());
        }
        Command::Train { method, scheme, n, task } => {
            let mut spec = common.cell_spec()?;
            if let Some(task) = task {
                spec.task = task;
            }
            spec.methods = vec![method];
            spec.validate()?;
            let seed = spec.seeds[0];
            let out = spec.out_dir.join(format!("adapters-{}-{}-n{n}-s{seed}.json", method.name(), scheme.name()));
            let config = spec.model.clone();
            let lab = Lab::new(spec)?;
            let (model, loss) = lab.train(method, scheme, n, seed)?;
            let set = model.adapters().ok_or_else(|| Error::Contract("trained model has no adapters".into()))?;
            save_adapters(set, &config, Some(seed), &format!("{} {} n={n}", method.name(), scheme.name()), &out)?;
            let mut rows = lab.evaluate_task(&model)?;
            rows.push(("final_train_loss".into(), loss));
            print_metrics(&rows)?;
            eprintln!("adapters written to {}", out.display());
        }
        Command::Eval { adapters, scheme, task } => {
            let mut spec = common.cell_spec()?;
            if let Some(task) = task {
                spec.task = task;
            }
            let seed = spec.seeds[0];
            let lab = Lab::new(spec)?;
            let model = match adapters {
                None => lab.base().clone(),
                Some(path) => {
                    let ckpt = load_adapters(&path)?;
                    let start = match scheme {
                        InitScheme::Pissa | InitScheme::Olora => initialize(lab.base(), &InitSpec::new(scheme, seed))?,
                        _ => lab.base().clone(),
                    };
                    start.with_adapters(ckpt.adapters)?
                }
            };
            let mut rows = lab.evaluate_task(&model)?;
            rows.push(("mcq_accuracy".into(), lab.evaluate_probe(&model)?));
            print_metrics(&rows)?;
        }
        Command::Sweep { experiment } => {
            let spec = common.spec(experiment)?;
            let stderr = std::io::stderr();
            let outcome = run_experiment(&spec, &mut |r| {
                let _ = writeln!(
                    stderr.lock(),
                    "{} {} seed={} n={} {}={:.4} ({:.1}s)",
                    r.method,
                    r.scheme,
                    r.seed,
                    r.n,
                    r.metric,
                    r.value,
                    r.wall_time
                );
            })?;
            println!("{}", outcome.metrics_path.display());
            println!("{}", outcome.manifest_path.display());
        }
        Command::Plot { metrics, metric, svg } => {
            let svg = svg.unwrap_or_else(|| {
                let stem = metrics.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                metrics.with_file_name(format!("{stem}-{metric}.svg"))
            });
            plot_file(&metrics, &metric, &svg)?;
            println!("{}", svg.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
