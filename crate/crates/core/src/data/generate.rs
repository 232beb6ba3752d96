//! Deterministic synthetic corpora.
//!
//! Every generator is a pure function of `(kind, size, seed)`. Seeds at or
//! above [`EVAL_SEED_OFFSET`] draw from the evaluation half of the prompt
//! space, seeds below it from the training half, so train and eval corpora
//! built from the two ranges never share a prompt.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::world::{self, Fact};
use super::{Corpus, PreferenceExample, TaskTag};
use crate::error::{Error, Result};

pub const EVAL_SEED_OFFSET: u64 = 1_000_000_000;

/// Which half of the prompt space a seed draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn of_seed(seed: u64) -> Self {
        if seed >= EVAL_SEED_OFFSET {
            Split::Eval
        } else {
            Split::Train
        }
    }

    fn admits(self, prompt: &str) -> bool {
        let eval_bucket = fnv1a(prompt.as_bytes()) % 5 == 0;
        match self {
            Split::Eval => eval_bucket,
            Split::Train => !eval_bucket,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

fn kind_salt(kind: TaskTag) -> u64 {
    match kind {
        TaskTag::Math => 0x6d61_7468,
        TaskTag::Title => 0x7469_746c,
        TaskTag::General => 0x6765_6e6c,
        TaskTag::Mcq => 0x6d63_7121,
    }
}

fn rng_for(salt: u64, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.rotate_left(32))
}

pub fn gen_corpus(kind: TaskTag, size: usize, seed: u64) -> Result<Corpus> {
    if size == 0 {
        return Err(Error::Config("corpus size must be at least 1".into()));
    }
    let split = Split::of_seed(seed);
    let mut rng = rng_for(kind_salt(kind), seed);
    let mut examples = Vec::with_capacity(size);
    while examples.len() < size {
        let ex = match kind {
            TaskTag::Math => math_example(&mut rng),
            TaskTag::Title => title_example(&mut rng),
            TaskTag::General => general_example(&mut rng),
            TaskTag::Mcq => mcq_example(&mut rng),
        };
        // The multiple-choice probe draws from a small fixed question set and
        // is never trained on directly, so it is not partitioned.
        if kind == TaskTag::Mcq || split.admits(&ex.prompt) {
            examples.push(ex);
        }
    }
    Ok(Corpus { task: kind, seed, examples })
}

const NAMES: [&str; 12] = ["Ann", "Bo", "Cal", "Dee", "Eli", "Fay", "Gus", "Ivy", "Jo", "Kim", "Lu", "Max"];
const ITEMS: [&str; 8] = ["pens", "cups", "eggs", "coins", "books", "keys", "hats", "nuts"];
const GAINS: [&str; 4] = ["gets", "buys", "finds", "wins"];
const LOSSES: [&str; 4] = ["loses", "gives away", "sells", "drops"];

#[derive(Clone, Copy, Debug)]
struct Step {
    lhs: i64,
    delta: i64,
}

impl Step {
    fn result(&self) -> i64 {
        self.lhs + self.delta
    }

    fn render(&self) -> String {
        if self.delta >= 0 {
            format!("{}+{}={}", self.lhs, self.delta, self.result())
        } else {
            format!("{}-{}={}", self.lhs, -self.delta, self.result())
        }
    }
}

fn render_chain(steps: &[Step]) -> String {
    let mut out = String::new();
    for s in steps {
        out.push_str(&s.render());
        out.push_str(". ");
    }
    let answer = steps.last().map_or(0, Step::result);
    out.push_str(&format!("boxed{{{answer}}}"));
    out
}

/// Largest value any intermediate result of a chain may take.
pub const CHAIN_MAX: i64 = 9;

/// Random chain of `ops` non-zero additions/subtractions; every
/// intermediate value stays within `0..=CHAIN_MAX`.
fn arithmetic_chain<R: Rng>(rng: &mut R, ops: usize) -> (i64, Vec<i64>) {
    let start = rng.gen_range(1..=CHAIN_MAX);
    let mut cur = start;
    let mut deltas = Vec::with_capacity(ops);
    for _ in 0..ops {
        let up = cur < CHAIN_MAX && (cur == 0 || rng.gen_bool(0.5));
        let d = if up { rng.gen_range(1..=CHAIN_MAX - cur) } else { -rng.gen_range(1..=cur) };
        cur += d;
        deltas.push(d);
    }
    (start, deltas)
}

fn steps_of(start: i64, deltas: &[i64]) -> Vec<Step> {
    let mut cur = start;
    deltas
        .iter()
        .map(|&delta| {
            let s = Step { lhs: cur, delta };
            cur = s.result();
            s
        })
        .collect()
}

fn math_example<R: Rng>(rng: &mut R) -> PreferenceExample {
    let ops = rng.gen_range(2..=4);
    let (start, deltas) = arithmetic_chain(rng, ops);
    let name = NAMES.choose(rng).unwrap();
    let item = ITEMS.choose(rng).unwrap();
    let mut prompt = format!("{name} has {start} {item}");
    for &d in &deltas {
        let verb = if d >= 0 { GAINS.choose(rng) } else { LOSSES.choose(rng) }.unwrap();
        prompt.push_str(&format!(", {verb} {}", d.abs()));
    }
    prompt.push_str(&format!(". How many {item}?"));

    let steps = steps_of(start, &deltas);
    let chosen = render_chain(&steps);

    // Corrupt one step's result upward and carry the wrong value forward, so
    // the rejected chain ends on a different (still non-negative) answer.
    let bad = rng.gen_range(0..steps.len());
    let bump = rng.gen_range(1..=2);
    let mut wrong = steps.clone();
    let mut carry = 0;
    for (i, s) in wrong.iter_mut().enumerate() {
        s.lhs += carry;
        if i == bad {
            carry = bump;
            s.delta += bump;
        }
    }
    let mut rejected = String::new();
    for (i, s) in wrong.iter().enumerate() {
        if i == bad {
            let true_op = Step { lhs: s.lhs, delta: s.delta - bump };
            let op = true_op.render();
            let expr = op.split('=').next().unwrap();
            rejected.push_str(&format!("{expr}={}. ", s.result()));
        } else {
            rejected.push_str(&s.render());
            rejected.push_str(". ");
        }
    }
    rejected.push_str(&format!("boxed{{{}}}", wrong.last().unwrap().result()));

    PreferenceExample::new(prompt, chosen, TaskTag::Math).with_rejected(rejected)
}

const TOPICS: [&str; 12] = [
    "inflation", "trade", "wages", "housing", "credit", "tariffs", "labor", "growth", "taxes", "savings",
    "energy", "banking",
];
const REGIONS: [&str; 8] = ["Asia", "Europe", "Africa", "Chile", "Canada", "India", "Brazil", "Japan"];
const METHODS: [&str; 6] = ["panel data", "a survey", "a field trial", "tax records", "firm data", "a model"];
const EFFECTS: [&str; 4] = ["raises", "lowers", "shapes", "drives"];

fn capitalize(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Deterministic keyword title for a pseudo-abstract: the topics in order of
/// appearance (last first) and the first region mentioned.
pub fn keyword_title(text: &str) -> String {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect();
    let mut topics: Vec<&str> = Vec::new();
    for w in &words {
        let lw = w.to_lowercase();
        if let Some(t) = TOPICS.iter().find(|t| **t == lw) {
            if !topics.contains(t) {
                topics.push(t);
            }
        }
    }
    let region = words.iter().find(|w| REGIONS.contains(&w.as_str()));
    let mut title = match topics.as_slice() {
        [] => String::from("Notes"),
        [one] => capitalize(one),
        [first, .., last] => format!("{} and {}", capitalize(last), first),
    };
    if let Some(r) = region {
        title.push_str(" in ");
        title.push_str(r);
    }
    title
}

fn title_example<R: Rng>(rng: &mut R) -> PreferenceExample {
    let picks: Vec<&&str> = TOPICS.choose_multiple(rng, 2).collect();
    let (t1, t2) = (*picks[0], *picks[1]);
    let region = REGIONS.choose(rng).unwrap();
    let method = METHODS.choose(rng).unwrap();
    let effect = EFFECTS.choose(rng).unwrap();
    let text = format!("We study {t1} in {region}. Using {method}, we find that {t2} {effect} {t1}.");
    let title = keyword_title(&text);
    PreferenceExample::new(text, title, TaskTag::Title)
}

const CONTAINERS: [&str; 4] = ["jar", "box", "bag", "tray"];
const THINGS: [&str; 4] = ["marbles", "shells", "stamps", "cards"];

/// Container-style word problem, phrased unlike the math task's templates.
fn container_problem<R: Rng>(rng: &mut R) -> PreferenceExample {
    let ops = rng.gen_range(1..=3);
    let (start, deltas) = arithmetic_chain(rng, ops);
    let container = CONTAINERS.choose(rng).unwrap();
    let thing = THINGS.choose(rng).unwrap();
    let mut prompt = format!("A {container} holds {start} {thing}.");
    for &d in &deltas {
        let verb = if d >= 0 { "are put in" } else { "are taken out" };
        prompt.push_str(&format!(" {} {verb}.", d.abs()));
    }
    prompt.push_str(&format!(" How many {thing} are in the {container}?"));
    PreferenceExample::new(prompt, render_chain(&steps_of(start, &deltas)), TaskTag::General)
}

fn general_example<R: Rng>(rng: &mut R) -> PreferenceExample {
    match rng.gen_range(0..6) {
        5 => container_problem(rng),
        0 => {
            let ops = rng.gen_range(1..=2);
            let (start, deltas) = arithmetic_chain(rng, ops);
            let steps = steps_of(start, &deltas);
            let mut expr = start.to_string();
            for d in &deltas {
                expr.push_str(&if *d >= 0 { format!("+{d}") } else { format!("-{}", -d) });
            }
            PreferenceExample::new(format!("Compute {expr}."), render_chain(&steps), TaskTag::General)
        }
        1 => {
            let topic = TOPICS.choose(rng).unwrap();
            let region = REGIONS.choose(rng).unwrap();
            let text = format!("We study {topic} in {region}.");
            let title = keyword_title(&text);
            PreferenceExample::new(format!("Give a title: {text}"), title, TaskTag::General)
        }
        2 => {
            let all = world::facts();
            let fact = all.choose(rng).unwrap();
            PreferenceExample::new(fact.stem(), fact.answer, TaskTag::General)
        }
        3 => {
            let words = random_words(rng);
            PreferenceExample::new(format!("Repeat: {words}"), words, TaskTag::General)
        }
        _ => {
            let words = random_words(rng);
            PreferenceExample::new(format!("Uppercase: {words}"), words.to_uppercase(), TaskTag::General)
        }
    }
}

fn random_words<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(2..=3);
    (0..n)
        .map(|_| match rng.gen_range(0..3) {
            0 => *world::COLORS.choose(rng).unwrap(),
            1 => *world::OBJECTS.choose(rng).unwrap(),
            _ => *world::FOODS.choose(rng).unwrap(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn mcq_example<R: Rng>(rng: &mut R) -> PreferenceExample {
    let all = world::facts();
    let fact: &Fact = all.choose(rng).unwrap();
    let distractors: Vec<&str> = fact
        .answer_pool()
        .iter()
        .copied()
        .filter(|a| *a != fact.answer)
        .collect::<Vec<_>>()
        .choose_multiple(rng, 3)
        .copied()
        .collect();
    let mut options: Vec<String> = distractors.iter().map(|s| s.to_string()).collect();
    let correct = rng.gen_range(0..4);
    options.insert(correct, fact.answer.to_string());
    let mut ex = PreferenceExample::new(fact.stem(), fact.answer, TaskTag::Mcq);
    ex.options = options;
    ex.correct = Some(correct);
    ex
}

fn extract_answer(chain: &str) -> &str {
    chain.rsplit_once("boxed{").map_or("", |(_, rest)| rest.trim_end_matches('}'))
}

/// Plain-text documents for language-model pre-training of the base model:
/// fact statements, worked arithmetic, training-split word problems with
/// their solutions written as prose, and abstract-style sentences. None use
/// the prompt/answer layout or boxed answers.
pub fn pretraining_documents(size: usize, seed: u64) -> Vec<String> {
    let mut rng = rng_for(0x7072_6574, seed);
    let facts = world::facts();
    (0..size)
        .map(|_| match rng.gen_range(0..20) {
            0..=3 => {
                let picks: Vec<&Fact> = facts.choose_multiple(&mut rng, 3).collect();
                picks.iter().map(|f| f.statement()).collect::<Vec<_>>().join(" ")
            }
            4..=9 => {
                let ops = rng.gen_range(2..=4);
                let (start, deltas) = arithmetic_chain(&mut rng, ops);
                steps_of(start, &deltas).iter().map(|s| format!("{}.", s.render())).collect::<Vec<_>>().join(" ")
            }
            10..=16 => loop {
                let ex = math_example(&mut rng);
                if Split::Train.admits(&ex.prompt) {
                    let question = ex.prompt.rsplit_once(". How many").map_or(ex.prompt.as_str(), |(q, _)| q);
                    let work = ex.chosen.rsplit_once(" boxed{").map_or(ex.chosen.as_str(), |(w, _)| w);
                    let answer = extract_answer(&ex.chosen);
                    break format!("{question}. {work} So the answer is {answer}.");
                }
            },
            _ => {
                let topic = TOPICS.choose(&mut rng).unwrap();
                let other = TOPICS.choose(&mut rng).unwrap();
                let region = REGIONS.choose(&mut rng).unwrap();
                let effect = EFFECTS.choose(&mut rng).unwrap();
                format!("In {region}, {other} {effect} {topic}.")
            }
        })
        .collect()
}
