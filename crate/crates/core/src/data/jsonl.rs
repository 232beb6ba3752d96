use std::path::Path;

use serde_json::Value;

use super::{Corpus, PreferenceExample, TaskTag};
use crate::error::{Error, Result};

/// Record layouts accepted by [`load_jsonl`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JsonlSchema {
    /// `{"prompt", "chosen", "rejected"}` stepwise math preference pairs.
    StepDpo,
    /// `{"text", "title"}` abstract/title pairs.
    EconTitle,
}

impl std::str::FromStr for JsonlSchema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step_dpo" | "step-dpo" => Ok(JsonlSchema::StepDpo),
            "econ_title" | "econ-title" => Ok(JsonlSchema::EconTitle),
            other => Err(Error::Config(format!("unknown jsonl schema `{other}`"))),
        }
    }
}

pub fn load_jsonl(path: impl AsRef<Path>, schema: JsonlSchema) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&bytes, schema)
}

pub(crate) fn parse_jsonl(bytes: &[u8], schema: JsonlSchema) -> Result<Corpus> {
    let mut examples = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = i + 1;
        let text = std::str::from_utf8(raw)
            .map_err(|e| Error::Encoding(format!("line {line}: invalid UTF-8 ({e})")))?;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let field = |name: &str| -> Result<String> {
            match value.get(name) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(Error::Parse { line, msg: format!("field `{name}` is not a string") }),
                None => Err(Error::Parse { line, msg: format!("missing field `{name}`") }),
            }
        };
        let ex = match schema {
            JsonlSchema::StepDpo => {
                PreferenceExample::new(field("prompt")?, field("chosen")?, TaskTag::Math).with_rejected(field("rejected")?)
            }
            JsonlSchema::EconTitle => PreferenceExample::new(field("text")?, field("title")?, TaskTag::Title),
        };
        examples.push(ex);
    }
    let task = match schema {
        JsonlSchema::StepDpo => TaskTag::Math,
        JsonlSchema::EconTitle => TaskTag::Title,
    };
    Ok(Corpus { task, seed: 0, examples })
}
