use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::spec::ExperimentSpec;
use crate::error::{Error, Result};

/// One evaluation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub experiment: String,
    pub method: String,
    pub scheme: String,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    /// Seconds spent producing the point. Not part of the determinism
    /// contract.
    pub wall_time: f64,
}

type RecordKey = (String, String, String, usize, usize, u64, String);

impl MetricsRecord {
    pub fn key(&self) -> RecordKey {
        (
            self.experiment.clone(),
            self.method.clone(),
            self.scheme.clone(),
            self.m,
            self.n,
            self.seed,
            self.metric.clone(),
        )
    }

    /// The record with `wall_time` zeroed, for determinism comparisons.
    pub fn timeless(&self) -> Self {
        Self { wall_time: 0.0, ..self.clone() }
    }
}

/// Appends records to a fresh JSONL file, flushing after each line.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
    seen: BTreeSet<RecordKey>,
}

/// First `{stem}-NNN.{ext}` in `dir` that does not exist yet.
pub fn fresh_path(dir: &Path, stem: &str, ext: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0..100_000 {
        let p = dir.join(format!("{stem}-{i:03}.{ext}"));
        if !p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Config(format!("no free file name for {stem} in {}", dir.display())))
}

impl MetricsWriter {
    /// Creates `metrics-{experiment}-NNN.jsonl` under `dir`; an existing file
    /// is never reopened.
    pub fn create(dir: &Path, experiment: &str) -> Result<Self> {
        let path = fresh_path(dir, &format!("metrics-{experiment}"), "jsonl")?;
        let file = File::options().write(true).create_new(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, file, seen: BTreeSet::new() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        if !self.seen.insert(record.key()) {
            return Err(Error::Contract(format!("duplicate metrics record {:?}", record.key())));
        }
        let line = serde_json::to_string(record)?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

/// Everything needed to re-run a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec: ExperimentSpec,
    pub crate_version: String,
    pub base_digest: String,
    pub corpus_seeds: CorpusSeeds,
    pub metrics_file: PathBuf,
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// Generator seeds used for each corpus, as functions of the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSeeds {
    pub task_train: String,
    pub general_train: String,
    pub task_eval: u64,
    pub probe: u64,
    pub pretraining: u64,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}
