use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RougeVariant {
    R1,
    R2,
    RL,
}

impl RougeVariant {
    pub fn name(self) -> &'static str {
        match self {
            RougeVariant::R1 => "rouge1",
            RougeVariant::R2 => "rouge2",
            RougeVariant::RL => "rougeL",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(hits: usize, cand_total: usize, ref_total: usize) -> Self {
        if hits == 0 || cand_total == 0 || ref_total == 0 {
            return Self::default();
        }
        let precision = hits as f64 / cand_total as f64;
        let recall = hits as f64 / ref_total as f64;
        Self { precision, recall, f1: 2.0 * precision * recall / (precision + recall) }
    }
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in toks.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE between whitespace-tokenized, lowercased strings. N-gram overlap
/// is clipped by reference counts; an empty side scores all zeros.
pub fn rouge(candidate: &str, reference: &str, variant: RougeVariant) -> RougeScore {
    let (c, r) = (tokens(candidate), tokens(reference));
    match variant {
        RougeVariant::R1 | RougeVariant::R2 => {
            let n = if variant == RougeVariant::R1 { 1 } else { 2 };
            let (cc, rc) = (ngram_counts(&c, n), ngram_counts(&r, n));
            let hits = cc.iter().map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0))).sum();
            let total = |t: &[String]| t.len().saturating_sub(n - 1);
            RougeScore::from_counts(hits, total(&c), total(&r))
        }
        RougeVariant::RL => RougeScore::from_counts(lcs_len(&c, &r), c.len(), r.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALL: [RougeVariant; 3] = [RougeVariant::R1, RougeVariant::R2, RougeVariant::RL];

    #[test]
    fn identical_strings_score_one() {
        for v in ALL {
            assert_eq!(rouge("Trade and wages in Asia", "trade and  wages in asia", v).f1, 1.0);
        }
    }

    #[test]
    fn unigram_by_enumeration() {
        let s = rouge("the cat sat", "the cat", RougeVariant::R1);
        assert_eq!(s.precision, 2.0 / 3.0);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn disjoint_is_zero() {
        for v in ALL {
            assert_eq!(rouge("alpha beta", "gamma delta", v), RougeScore::default());
            assert_eq!(rouge("", "gamma delta", v), RougeScore::default());
        }
    }

    #[test]
    fn clipping_and_lcs() {
        let s = rouge("the the the", "the cat", RougeVariant::R1);
        assert_eq!(s.precision, 1.0 / 3.0);
        assert_eq!(rouge("a b c d", "a c b d", RougeVariant::RL).recall, 0.75);
        assert_eq!(rouge("a b c", "a b d", RougeVariant::R2).f1, 0.5);
    }

    fn sentence() -> impl Strategy<Value = String> {
        proptest::collection::vec(prop_oneof!["a", "b", "c", "dd"], 0..8).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn precision_recall_swap_and_bounds(c in sentence(), r in sentence()) {
            for v in ALL {
                let fwd = rouge(&c, &r, v);
                let back = rouge(&r, &c, v);
                prop_assert_eq!(fwd.precision, back.recall);
                for x in [fwd.precision, fwd.recall, fwd.f1] {
                    prop_assert!((0.0..=1.0).contains(&x));
                }
                prop_assert!(fwd.f1 <= fwd.precision.max(fwd.recall) + 1e-15);
            }
        }
    }
}
