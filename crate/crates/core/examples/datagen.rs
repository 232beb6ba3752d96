//! Generates each corpus kind, prints a sample, and reloads a math corpus
//! through the stepwise-preference JSONL schema.

use d2lora::data::{gen_corpus, load_jsonl, JsonlSchema, TaskTag};

fn main() -> d2lora::Result<()> {
    for task in [TaskTag::Math, TaskTag::Title, TaskTag::General, TaskTag::Mcq] {
        let c = gen_corpus(task, 3, 1)?;
        let ex = &c.examples[0];
        println!("[{}] {}\n    -> {}", task.name(), ex.prompt, ex.chosen);
        if let Some(r) = &ex.rejected {
            println!("    rejected: {r}");
        }
    }

    let math = gen_corpus(TaskTag::Math, 20, 2)?;
    let lines: String = math
        .examples
        .iter()
        .map(|e| {
            serde_json::json!({"prompt": e.prompt, "chosen": e.chosen, "rejected": e.rejected}).to_string() + "\n"
        })
        .collect();
    let path = std::env::temp_dir().join("d2lora-datagen-example.jsonl");
    std::fs::write(&path, lines).map_err(|e| d2lora::Error::Io { path: path.clone(), source: e })?;
    let back = load_jsonl(&path, JsonlSchema::StepDpo)?;
    println!("reloaded {} pairs, identical: {}", back.len(), back.examples == math.examples);
    Ok(())
}
