//! Corpora: example types, synthetic generators and JSONL ingestion.

mod generate;
mod jsonl;
pub mod tokenizer;
pub mod world;

use serde::{Deserialize, Serialize};

pub use generate::{gen_corpus, pretraining_documents, Split, EVAL_SEED_OFFSET};
pub use jsonl::{load_jsonl, JsonlSchema};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum TaskTag {
    Math,
    Title,
    General,
    Mcq,
}

impl TaskTag {
    pub fn name(self) -> &'static str {
        match self {
            TaskTag::Math => "math",
            TaskTag::Title => "title",
            TaskTag::General => "general",
            TaskTag::Mcq => "mcq",
        }
    }
}

impl std::str::FromStr for TaskTag {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "math" => Ok(TaskTag::Math),
            "title" => Ok(TaskTag::Title),
            "general" => Ok(TaskTag::General),
            "mcq" => Ok(TaskTag::Mcq),
            other => Err(crate::Error::Config(format!("unknown corpus kind `{other}`"))),
        }
    }
}

/// One training or evaluation item.
///
/// Multiple-choice items carry their four candidate completions in
/// `options`, with `chosen` equal to `options[correct]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub prompt: String,
    pub chosen: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<String>,
    pub task: TaskTag,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<usize>,
}

impl PreferenceExample {
    pub fn new(prompt: impl Into<String>, chosen: impl Into<String>, task: TaskTag) -> Self {
        Self {
            prompt: prompt.into(),
            chosen: chosen.into(),
            rejected: None,
            task,
            options: Vec::new(),
            correct: None,
        }
    }

    pub fn with_rejected(mut self, rejected: impl Into<String>) -> Self {
        self.rejected = Some(rejected.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub task: TaskTag,
    pub seed: u64,
    pub examples: Vec<PreferenceExample>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// The first `n` examples as a new corpus.
    pub fn take(&self, n: usize) -> Corpus {
        Corpus {
            task: self.task,
            seed: self.seed,
            examples: self.examples[..n.min(self.len())].to_vec(),
        }
    }
}
