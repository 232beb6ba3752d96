use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::TaskTag;
use crate::error::{Error, Result};
use crate::init::InitScheme;
use crate::model::ModelConfig;
use crate::objectives::{ObjectiveConfig, ObjectiveKind};
use crate::trainer::{paper_epochs, Phase, PhasePlan, Scheduler, DESK_ADAPT_LR, DESK_BATCH_SIZE, DESK_WARMUP_LR};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "D2LORA_OUT";

/// Output root used when neither `--out` nor [`OUT_ENV`] is given.
pub const DEFAULT_OUT: &str = "d2lora-out";

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DataScaling,
    Effectiveness,
    Forgetting,
    Scarce,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] =
        [ExperimentKind::DataScaling, ExperimentKind::Effectiveness, ExperimentKind::Forgetting, ExperimentKind::Scarce];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::DataScaling => "data_scaling",
            ExperimentKind::Effectiveness => "effectiveness",
            ExperimentKind::Forgetting => "forgetting",
            ExperimentKind::Scarce => "scarce",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// How the frozen base model is obtained: a seeded random build followed by
/// language-model pretraining on generated plain text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseSpec {
    pub seed: u64,
    pub documents: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for BaseSpec {
    fn default() -> Self {
        Self { seed: 0, documents: 16_000, lr: 3e-3, batch_size: 8, epochs: 1 }
    }
}

impl BaseSpec {
    pub fn plan(&self) -> PhasePlan {
        PhasePlan {
            lr_max: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            ..PhasePlan::warmup(self.documents, self.seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    pub warmup_lr: f64,
    pub warmup_epochs: usize,
    pub adapt_lr: f64,
    pub sft_epochs: usize,
    pub preference_epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub orpo_weight: f64,
    pub scheduler: Scheduler,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            warmup_lr: DESK_WARMUP_LR,
            warmup_epochs: 1,
            adapt_lr: DESK_ADAPT_LR,
            sft_epochs: paper_epochs(ObjectiveKind::Sft),
            preference_epochs: paper_epochs(ObjectiveKind::Dpo),
            batch_size: DESK_BATCH_SIZE,
            beta: 0.1,
            orpo_weight: 0.1,
            scheduler: Scheduler::Cosine,
        }
    }
}

impl TrainingSpec {
    /// Learning rates and epochs of the published 8B-scale runs.
    pub fn paper_scale() -> Self {
        Self { warmup_lr: 1e-7, adapt_lr: 1e-6, ..Self::default() }
    }

    pub fn warmup_plan(&self, m: usize, seed: u64) -> PhasePlan {
        PhasePlan {
            lr_max: self.warmup_lr,
            epochs: self.warmup_epochs,
            batch_size: self.batch_size,
            scheduler: self.scheduler,
            ..PhasePlan::warmup(m, seed)
        }
    }

    pub fn adapt_plan(&self, kind: ObjectiveKind, n: usize, seed: u64) -> PhasePlan {
        let epochs = match kind {
            ObjectiveKind::Sft => self.sft_epochs,
            ObjectiveKind::Dpo | ObjectiveKind::Orpo => self.preference_epochs,
        };
        PhasePlan {
            phase: Phase::Adapt,
            objective: ObjectiveConfig { beta: self.beta, orpo_weight: self.orpo_weight, ..ObjectiveConfig::new(kind) },
            lr_max: self.adapt_lr,
            epochs,
            batch_size: self.batch_size,
            scheduler: self.scheduler,
            ..PhasePlan::adapt(kind, n, seed)
        }
    }
}

/// A full sweep description, readable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    #[serde(default = "default_methods")]
    pub methods: Vec<ObjectiveKind>,
    #[serde(default)]
    pub init_schemes: Vec<InitScheme>,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_task")]
    pub task: TaskTag,
    /// Held-out items scored per evaluation.
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
    /// Multiple-choice probe items for forgetting curves.
    #[serde(default = "default_probe_size")]
    pub probe_size: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub base: BaseSpec,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Where base weights and warm-up checkpoints are cached; defaults to
    /// `out_dir/cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

fn default_methods() -> Vec<ObjectiveKind> {
    vec![ObjectiveKind::Sft]
}

fn default_m() -> usize {
    2000
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_task() -> TaskTag {
    TaskTag::Math
}

fn default_eval_size() -> usize {
    100
}

fn default_probe_size() -> usize {
    200
}

impl ExperimentSpec {
    /// Desk-scale defaults for `kind`. Empty grid and scheme lists, here or
    /// in TOML, take the per-experiment defaults.
    pub fn new(kind: ExperimentKind) -> Self {
        let mut spec = Self {
            experiment: kind,
            methods: default_methods(),
            init_schemes: Vec::new(),
            n_grid: Vec::new(),
            m: default_m(),
            seeds: default_seeds(),
            task: default_task(),
            eval_size: default_eval_size(),
            probe_size: default_probe_size(),
            model: ModelConfig::default(),
            base: BaseSpec::default(),
            training: TrainingSpec::default(),
            out_dir: default_out_dir(),
            cache_dir: None,
        };
        if kind == ExperimentKind::Scarce {
            spec.methods = vec![ObjectiveKind::Orpo];
        }
        spec.fill_defaults();
        spec
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut spec: Self = toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        spec.fill_defaults();
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot render config: {e}")))
    }

    fn fill_defaults(&mut self) {
        if self.init_schemes.is_empty() {
            self.init_schemes = match self.experiment {
                ExperimentKind::DataScaling => vec![InitScheme::Vanilla],
                _ => vec![InitScheme::Vanilla, InitScheme::D2lora],
            };
        }
        if self.n_grid.is_empty() {
            self.n_grid = match self.experiment {
                ExperimentKind::DataScaling => vec![100, 200, 500, 1000, 2000],
                ExperimentKind::Effectiveness => vec![100, 500, 2000],
                ExperimentKind::Forgetting => vec![100, 500, 2000],
                ExperimentKind::Scarce => vec![100, 200, 500, 1000],
            };
        }
    }

    /// Switches to the published adapter shape and training settings.
    pub fn paper_scale(mut self) -> Self {
        self.model = self.model.paper_scale();
        self.training = TrainingSpec::paper_scale();
        self
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        if self.n_grid.is_empty() {
            return Err(Error::Config("n_grid must not be empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("n_grid {:?} must be strictly increasing", self.n_grid)));
        }
        if self.n_grid[0] == 0 {
            return Err(Error::Config("n_grid entries must be positive".into()));
        }
        if self.eval_size == 0 || self.probe_size == 0 {
            return Err(Error::Config("eval_size and probe_size must be positive".into()));
        }
        if !matches!(self.task, TaskTag::Math | TaskTag::Title) {
            return Err(Error::Config(format!("task must be math or title, got {}", self.task.name())));
        }
        if self.task == TaskTag::Title && self.methods.iter().any(|k| k.needs_rejected()) {
            return Err(Error::ObjectiveMismatch("the title task has no rejected completions; use sft".into()));
        }
        let mut schemes = self.init_schemes.clone();
        schemes.sort();
        schemes.dedup();
        if schemes.len() != self.init_schemes.len() {
            return Err(Error::Config("duplicate init scheme".into()));
        }
        match self.experiment {
            ExperimentKind::Effectiveness | ExperimentKind::Forgetting => {
                for needed in [InitScheme::Vanilla, InitScheme::D2lora] {
                    if !self.init_schemes.contains(&needed) {
                        return Err(Error::Config(format!(
                            "{} compares vanilla and d2lora; {needed} is missing",
                            self.experiment.name()
                        )));
                    }
                }
            }
            ExperimentKind::Scarce => {
                if let Some(&n) = self.n_grid.iter().find(|&&n| n > 1000) {
                    return Err(Error::Config(format!("scarce-data grid allows n <= 1000, got {n}")));
                }
            }
            ExperimentKind::DataScaling => {}
        }
        Ok(())
    }
}
