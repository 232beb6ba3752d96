//! ROUGE scores and boxed-answer extraction on hand-written strings.

use d2lora::metrics::{extract_boxed, normalize_answer, rouge, RougeVariant};

fn main() {
    let reference = "Trade and labor in Europe";
    for cand in ["Trade and labor in Europe", "Labor and trade in Europe", "Taxes in Africa"] {
        let scores: Vec<String> = [RougeVariant::R1, RougeVariant::R2, RougeVariant::RL]
            .iter()
            .map(|&v| format!("{}={:.3}", v.name(), rouge(cand, reference, v).f1))
            .collect();
        println!("{cand:28} {}", scores.join(" "));
    }
    for out in ["so boxed{ 12 } then boxed{7}", "the answer is 7", "boxed{ 007 }"] {
        let ans = extract_boxed(out);
        println!("{out:30} -> {:?} (normalized {:?})", ans, ans.as_deref().map(normalize_answer));
    }
}
