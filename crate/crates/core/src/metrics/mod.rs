//! Task evaluation: boxed-answer exact match, ROUGE and multiple-choice
//! accuracy.

mod rouge;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use rouge::{rouge, RougeScore, RougeVariant};

use crate::data::tokenizer::{detokenize, prompt_ids, tokenize};
use crate::data::{Corpus, TaskTag};
use crate::error::{Error, Result};
use crate::model::{Model, Normalization};

/// Generation budget for exact-match scoring.
pub const MAX_NEW_TOKENS: usize = 128;

/// One scalar evaluation of a model on a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskTag,
    pub metric: String,
    pub value: f64,
    pub sample_count: usize,
    pub seed: u64,
}

/// Content of the last `boxed{...}` span, trimmed. Braces inside the span
/// nest; an unclosed span counts as absent.
pub fn extract_boxed(text: &str) -> Option<String> {
    let start = text.rfind("boxed{")? + "boxed{".len();
    let mut depth = 1usize;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[start..start + i].trim().to_string());
                }
            }
            _ => {}
        }
    }
    None
}

/// Strips surrounding whitespace and leading zeros (`"007"` → `"7"`).
pub fn normalize_answer(answer: &str) -> String {
    let t = answer.trim();
    let (sign, digits) = match t.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", t),
    };
    let stripped = digits.trim_start_matches('0');
    if stripped.is_empty() && !digits.is_empty() {
        "0".to_string()
    } else {
        format!("{sign}{stripped}")
    }
}

fn require_nonempty(corpus: &Corpus) -> Result<()> {
    if corpus.is_empty() {
        Err(Error::Data("evaluation corpus is empty".into()))
    } else {
        Ok(())
    }
}

fn lossy_text(ids: &[usize]) -> String {
    detokenize(ids).unwrap_or_else(|_| {
        let bytes: Vec<u8> = ids.iter().filter(|&&i| i < 256).map(|&i| i as u8).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    })
}

/// Greedy completion of `prompt`, decoded as text (lossy on invalid UTF-8).
pub fn complete(model: &Model, prompt: &str, max_new: usize) -> Result<String> {
    Ok(lossy_text(&model.generate(&prompt_ids(prompt), max_new)?))
}

/// Greedy completion that stops as soon as a `boxed{...}` span closes;
/// nothing after that span can change the extracted answer.
pub fn complete_boxed(model: &Model, prompt: &str, max_new: usize) -> Result<String> {
    let ids = model.generate_until(&prompt_ids(prompt), max_new, |out| {
        out.last() == Some(&(b'}' as usize)) && extract_boxed(&lossy_text(out)).is_some()
    })?;
    Ok(lossy_text(&ids))
}

/// Fraction of items whose greedy completion boxes the reference answer
/// (the boxed content of `chosen`). A missing span is incorrect.
pub fn exact_match_accuracy(model: &Model, corpus: &Corpus) -> Result<EvalReport> {
    require_nonempty(corpus)?;
    let hits: Vec<bool> = corpus
        .examples
        .par_iter()
        .map(|ex| -> Result<bool> {
            let truth = extract_boxed(&ex.chosen)
                .ok_or_else(|| Error::Data(format!("reference has no boxed answer: {}", ex.chosen)))?;
            let output = complete_boxed(model, &ex.prompt, MAX_NEW_TOKENS)?;
            Ok(extract_boxed(&output).is_some_and(|a| normalize_answer(&a) == normalize_answer(&truth)))
        })
        .collect::<Result<_>>()?;
    let correct = hits.iter().filter(|&&h| h).count();
    Ok(EvalReport {
        task: corpus.task,
        metric: "exact_match".into(),
        value: correct as f64 / corpus.len() as f64,
        sample_count: corpus.len(),
        seed: corpus.seed,
    })
}

/// Mean ROUGE-1/2/L F1 of greedy completions against `chosen`, in that
/// order. ROUGE-L F1 is the headline title metric.
pub fn rouge_reports(model: &Model, corpus: &Corpus) -> Result<Vec<EvalReport>> {
    require_nonempty(corpus)?;
    let outputs: Vec<String> = corpus
        .examples
        .par_iter()
        .map(|ex| complete(model, &ex.prompt, MAX_NEW_TOKENS))
        .collect::<Result<_>>()?;
    let n = corpus.len() as f64;
    Ok([RougeVariant::R1, RougeVariant::R2, RougeVariant::RL]
        .into_iter()
        .map(|variant| {
            let total: f64 = outputs
                .iter()
                .zip(&corpus.examples)
                .map(|(out, ex)| rouge(out, &ex.chosen, variant).f1)
                .sum();
            EvalReport {
                task: corpus.task,
                metric: format!("{}_f1", variant.name()),
                value: total / n,
                sample_count: corpus.len(),
                seed: corpus.seed,
            }
        })
        .collect())
}

/// Index of the option with the highest mean log-probability as a plain-text
/// continuation of `prompt` (no separator), the way a base model reads a
/// cloze item. Ties go to the lowest index.
pub fn predict_option(model: &Model, prompt: &str, options: &[String]) -> Result<usize> {
    let p = tokenize(prompt);
    let mut best = (0, f64::NEG_INFINITY);
    for (i, opt) in options.iter().enumerate() {
        let lp = model.sequence_log_prob(&p, &tokenize(&format!(" {opt}")), Normalization::Mean)?;
        if lp > best.1 {
            best = (i, lp);
        }
    }
    Ok(best.0)
}

pub fn mcq_accuracy(model: &Model, corpus: &Corpus) -> Result<EvalReport> {
    require_nonempty(corpus)?;
    let hits: Vec<bool> = corpus
        .examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| -> Result<bool> {
            let correct = match (ex.options.len(), ex.correct) {
                (4, Some(c)) if c < 4 => c,
                _ => {
                    return Err(Error::Data(format!(
                        "item {i} needs exactly 4 options with a correct index, has {}",
                        ex.options.len()
                    )))
                }
            };
            Ok(predict_option(model, &ex.prompt, &ex.options)? == correct)
        })
        .collect::<Result<_>>()?;
    let correct = hits.iter().filter(|&&h| h).count();
    Ok(EvalReport {
        task: corpus.task,
        metric: "mcq_accuracy".into(),
        value: correct as f64 / corpus.len() as f64,
        sample_count: corpus.len(),
        seed: corpus.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxed_extraction() {
        assert_eq!(extract_boxed("so boxed{42}.").as_deref(), Some("42"));
        assert_eq!(extract_boxed("no answer here"), None);
        assert_eq!(extract_boxed("boxed{1} then boxed{ 2 }").as_deref(), Some("2"));
        assert_eq!(extract_boxed("boxed{unclosed"), None);
        assert_eq!(extract_boxed("boxed{a{b}c}").as_deref(), Some("a{b}c"));
    }

    #[test]
    fn boxed_is_idempotent_when_rewrapped() {
        for s in ["x boxed{ 17 } y", "boxed{a{b}}", "boxed{}"] {
            let once = extract_boxed(s).unwrap();
            assert_eq!(extract_boxed(&format!("boxed{{{once}}}")).unwrap(), once);
        }
    }

    #[test]
    fn answer_normalization() {
        assert_eq!(normalize_answer(" 007 "), "7");
        assert_eq!(normalize_answer("0"), "0");
        assert_eq!(normalize_answer("000"), "0");
        assert_eq!(normalize_answer("120"), "120");
    }

    #[test]
    fn empty_corpus_is_data_error() {
        let m = crate::model::Model::build(crate::model::ModelConfig::default(), 0).unwrap();
        let empty = Corpus { task: TaskTag::Math, seed: 0, examples: vec![] };
        assert!(matches!(exact_match_accuracy(&m, &empty), Err(Error::Data(_))));
        assert!(matches!(mcq_accuracy(&m, &empty), Err(Error::Data(_))));
    }
}
