use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::records::{fresh_path, unix_now, CorpusSeeds, MetricsRecord, MetricsWriter, RunManifest};
use super::spec::{ExperimentKind, ExperimentSpec};
use crate::data::{gen_corpus, pretraining_documents, Corpus, TaskTag, EVAL_SEED_OFFSET};
use crate::error::{Error, Result};
use crate::init::{init_d2lora, initialize, InitScheme, InitSpec};
use crate::metrics::{exact_match_accuracy, mcq_accuracy, rouge_reports};
use crate::model::{save_adapters, Model, ModelConfig};
use crate::objectives::ObjectiveKind;
use crate::trainer::{pretrain_base, run_phase};

/// Run seeds must stay below this so derived corpus seeds remain in the
/// training half of the seed space.
pub const MAX_RUN_SEED: u64 = 500_000_000;

/// Offset separating the general-mix corpus seed from the task corpus seed.
pub const GENERAL_SEED_OFFSET: u64 = 500_000_000;

pub const TASK_EVAL_SEED: u64 = EVAL_SEED_OFFSET;
pub const PROBE_SEED: u64 = EVAL_SEED_OFFSET + 1;

fn short_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(&Sha256::digest(bytes)[..8]))
}

fn write_tensors(path: &Path, model: &Model) -> Result<()> {
    let mut blob = Vec::new();
    for t in model.base.tensors() {
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, blob).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_tensors(path: &Path, config: &ModelConfig) -> Result<Model> {
    let blob = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut model = Model::build(config.clone(), 0)?;
    let need: usize = model.base.tensors().iter().map(|t| t.numel()).sum();
    if blob.len() != need * 8 {
        return Err(Error::Format(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            blob.len(),
            need * 8
        )));
    }
    let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for t in model.base.tensors_mut() {
        for v in t.data_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(model)
}

/// Shared state of a sweep: the pretrained base, corpora and caches.
pub struct Lab {
    pub spec: ExperimentSpec,
    base: Model,
    task_eval: Corpus,
    probe: Corpus,
}

impl Lab {
    /// Loads the cached base for `spec` or pretrains and caches it.
    pub fn new(spec: ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        if let Some(&s) = spec.seeds.iter().find(|&&s| s >= MAX_RUN_SEED) {
            return Err(Error::Config(format!("seed {s} must be below {MAX_RUN_SEED}")));
        }
        let base = load_or_pretrain_base(&spec)?;
        let task_eval = gen_corpus(spec.task, spec.eval_size, TASK_EVAL_SEED)?;
        let probe = gen_corpus(TaskTag::Mcq, spec.probe_size, PROBE_SEED)?;
        Ok(Self { spec, base, task_eval, probe })
    }

    pub fn base(&self) -> &Model {
        &self.base
    }

    pub fn task_eval(&self) -> &Corpus {
        &self.task_eval
    }

    pub fn corpus_seeds(&self) -> CorpusSeeds {
        CorpusSeeds {
            task_train: "run seed".into(),
            general_train: format!("run seed + {GENERAL_SEED_OFFSET}"),
            task_eval: TASK_EVAL_SEED,
            probe: PROBE_SEED,
            pretraining: self.spec.base.seed,
        }
    }

    pub fn task_train(&self, size: usize, seed: u64) -> Result<Corpus> {
        gen_corpus(self.spec.task, size.max(1), seed)
    }

    pub fn general_train(&self, size: usize, seed: u64) -> Result<Corpus> {
        gen_corpus(TaskTag::General, size.max(1), seed + GENERAL_SEED_OFFSET)
    }

    /// Path of the warm-up checkpoint for `seed`, training it on first use.
    pub fn warmup_checkpoint(&self, seed: u64) -> Result<PathBuf> {
        let spec = &self.spec;
        let plan = spec.training.warmup_plan(spec.m, seed);
        let general = self.general_train(spec.m, seed)?;
        let key = short_hash(&(&spec.model, &plan, self.base.base.digest(), short_hash(&general.examples)?))?;
        let path = spec.cache_dir().join(format!("warmup-m{}-s{seed}-{key}.json", spec.m));
        if path.exists() {
            return Ok(path);
        }
        let start = initialize(&self.base, &InitSpec::new(InitScheme::Vanilla, seed))?;
        let trained = run_phase(start, &general.examples, &plan)?;
        let set = trained.model.adapters().expect("warm-up keeps adapters");
        let tmp = path.with_extension("partial.json");
        save_adapters(set, &spec.model, Some(seed), &format!("warmup m={} seed={seed}", spec.m), &tmp)?;
        std::fs::rename(tmp.with_extension("bin"), path.with_extension("bin")).map_err(|e| Error::io(&path, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Model at the start of task adaptation for `scheme`.
    pub fn initial_model(&self, scheme: InitScheme, seed: u64) -> Result<Model> {
        match scheme {
            InitScheme::D2lora => {
                let path = self.warmup_checkpoint(seed)?;
                self.base.clone().with_adapters(init_d2lora(path, &self.spec.model)?)
            }
            other => initialize(&self.base, &InitSpec::new(other, seed)),
        }
    }

    /// Task adaptation on the first `n` task examples for `seed`.
    pub fn train(&self, method: ObjectiveKind, scheme: InitScheme, n: usize, seed: u64) -> Result<(Model, f64)> {
        let start = self.initial_model(scheme, seed)?;
        let corpus = self.task_train(n, seed)?;
        let plan = self.spec.training.adapt_plan(method, n, seed);
        let out = run_phase(start, &corpus.examples, &plan)?;
        let loss = out.epoch_losses().last().copied().unwrap_or(f64::NAN);
        Ok((out.model, loss))
    }

    /// Task metrics in a fixed order: exact match for math, ROUGE-1/2/L F1
    /// for titles.
    pub fn evaluate_task(&self, model: &Model) -> Result<Vec<(String, f64)>> {
        Ok(match self.spec.task {
            TaskTag::Math => {
                let r = exact_match_accuracy(model, &self.task_eval)?;
                vec![(r.metric, r.value)]
            }
            _ => rouge_reports(model, &self.task_eval)?.into_iter().map(|r| (r.metric, r.value)).collect(),
        })
    }

    pub fn evaluate_probe(&self, model: &Model) -> Result<f64> {
        Ok(mcq_accuracy(model, &self.probe)?.value)
    }
}

fn load_or_pretrain_base(spec: &ExperimentSpec) -> Result<Model> {
    let c = &spec.model;
    let shape = (c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq);
    let docs = pretraining_documents(spec.base.documents, spec.base.seed);
    let key = short_hash(&(shape, &spec.base, short_hash(&docs)?))?;
    let path = spec.cache_dir().join(format!("base-{key}.bin"));
    if path.exists() {
        return read_tensors(&path, c);
    }
    let model = Model::build(c.clone(), spec.base.seed)?;
    let model = if docs.is_empty() { model } else { pretrain_base(model, &docs, &spec.base.plan())?.model };
    write_tensors(&path, &model)?;
    Ok(model)
}

/// Result of a sweep.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub metrics_path: PathBuf,
    pub manifest_path: PathBuf,
    pub records: Vec<MetricsRecord>,
}

/// Runs `spec`, writing one JSONL metrics file and a manifest under
/// `spec.out_dir`. `progress` sees every record as it is written.
pub fn run_experiment(spec: &ExperimentSpec, progress: &mut dyn FnMut(&MetricsRecord)) -> Result<SweepOutcome> {
    let started = unix_now();
    let lab = Lab::new(spec.clone())?;
    let exp = spec.experiment.name();
    let mut writer = MetricsWriter::create(&spec.out_dir, exp)?;
    let mut records = Vec::new();
    let mut emit = |rec: MetricsRecord, records: &mut Vec<MetricsRecord>| -> Result<()> {
        writer.write(&rec)?;
        progress(&rec);
        records.push(rec);
        Ok(())
    };
    let forgetting = spec.experiment == ExperimentKind::Forgetting;
    for &seed in &spec.seeds {
        for &method in &spec.methods {
            for &scheme in &spec.init_schemes {
                let m = if scheme == InitScheme::D2lora { spec.m } else { 0 };
                let record = |n: usize, metric: &str, value: f64, wall_time: f64| MetricsRecord {
                    experiment: exp.to_string(),
                    method: method.name().to_string(),
                    scheme: scheme.name().to_string(),
                    m,
                    n,
                    seed,
                    metric: metric.to_string(),
                    value,
                    wall_time,
                };
                if forgetting {
                    let t = Instant::now();
                    let start = lab.initial_model(scheme, seed)?;
                    let probe = lab.evaluate_probe(&start)?;
                    let task = lab.evaluate_task(&start)?;
                    let wall = t.elapsed().as_secs_f64();
                    for (metric, value) in task {
                        emit(record(0, &metric, value, wall), &mut records)?;
                    }
                    emit(record(0, "mcq_accuracy", probe, wall), &mut records)?;
                }
                for &n in &spec.n_grid {
                    let t = Instant::now();
                    let (model, loss) = lab.train(method, scheme, n, seed)?;
                    let task = lab.evaluate_task(&model)?;
                    let probe = if forgetting { Some(lab.evaluate_probe(&model)?) } else { None };
                    let wall = t.elapsed().as_secs_f64();
                    for (metric, value) in task {
                        emit(record(n, &metric, value, wall), &mut records)?;
                    }
                    if let Some(p) = probe {
                        emit(record(n, "mcq_accuracy", p, wall), &mut records)?;
                    }
                    emit(record(n, "final_train_loss", loss, wall), &mut records)?;
                }
            }
        }
    }
    let manifest = RunManifest {
        spec: spec.clone(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        base_digest: lab.base().base.digest(),
        corpus_seeds: lab.corpus_seeds(),
        metrics_file: writer.path().to_path_buf(),
        started_unix: started,
        finished_unix: unix_now(),
    };
    let manifest_path = fresh_path(&spec.out_dir, &format!("manifest-{exp}"), "json")?;
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(SweepOutcome { metrics_path: writer.path().to_path_buf(), manifest_path, records })
}

fn run_kind(spec: &ExperimentSpec, kind: ExperimentKind) -> Result<SweepOutcome> {
    if spec.experiment != kind {
        return Err(Error::Config(format!(
            "spec describes {}, not {}",
            spec.experiment.name(),
            kind.name()
        )));
    }
    run_experiment(spec, &mut |_| {})
}

/// Vanilla-LoRA accuracy across the `n` grid for each method.
pub fn run_data_scaling(spec: &ExperimentSpec) -> Result<SweepOutcome> {
    run_kind(spec, ExperimentKind::DataScaling)
}

/// Paired D²LoRA(m, n) and LoRA(n) task metrics.
pub fn run_effectiveness(spec: &ExperimentSpec) -> Result<SweepOutcome> {
    run_kind(spec, ExperimentKind::Effectiveness)
}

/// Multiple-choice probe accuracy before (n = 0) and after task adaptation.
pub fn run_forgetting(spec: &ExperimentSpec) -> Result<SweepOutcome> {
    run_kind(spec, ExperimentKind::Forgetting)
}

/// Small-sample comparison on a grid capped at 1000.
pub fn run_scarce(spec: &ExperimentSpec) -> Result<SweepOutcome> {
    run_kind(spec, ExperimentKind::Scarce)
}

/// Median of `values`; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// `(scheme, n, seed) → value` for one metric and method.
pub fn index_records(records: &[MetricsRecord], method: &str, metric: &str) -> BTreeMap<(String, usize, u64), f64> {
    records
        .iter()
        .filter(|r| r.method == method && r.metric == metric)
        .map(|r| ((r.scheme.clone(), r.n, r.seed), r.value))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn base_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig { d_model: 8, n_heads: 2, d_ff: 8, n_layers: 1, max_seq: 16, rank: 2, alpha: 2.0, ..ModelConfig::default() };
        let m = Model::build(cfg.clone(), 4).unwrap();
        let p = dir.path().join("b.bin");
        write_tensors(&p, &m).unwrap();
        assert_eq!(read_tensors(&p, &cfg).unwrap().base, m.base);
        std::fs::write(&p, [0u8; 5]).unwrap();
        assert!(matches!(read_tensors(&p, &cfg), Err(Error::Format(_))));
    }

    #[test]
    fn large_seed_rejected() {
        let mut spec = ExperimentSpec::new(ExperimentKind::Effectiveness);
        spec.seeds = vec![MAX_RUN_SEED];
        spec.base.documents = 0;
        spec.out_dir = tempfile::tempdir().unwrap().path().to_path_buf();
        assert!(matches!(Lab::new(spec), Err(Error::Config(_))));
    }
}
