//! A small fixed world of facts shared by the knowledge-style corpora:
//! pre-training statements, general question answering and the
//! multiple-choice probe all draw on the same table.

pub const COUNTRIES: [&str; 16] = [
    "Zorvia", "Kelmar", "Adrun", "Bexley", "Talvo", "Morin", "Quessa", "Undra", "Pravel", "Sorna",
    "Velkis", "Harrow", "Istra", "Lumen", "Ostrel", "Ferra",
];
pub const CAPITALS: [&str; 16] = [
    "Qel", "Mip", "Tor", "Vax", "Dun", "Rell", "Sabo", "Kip", "Nox", "Lira", "Gant", "Hesk", "Obi",
    "Pell", "Wyn", "Yar",
];
pub const CREATURES: [&str; 16] = [
    "zorb", "plim", "gax", "trell", "wump", "snib", "fel", "quarn", "doba", "mirk", "hask", "vell",
    "yoon", "brek", "lud", "tamp",
];
pub const FOODS: [&str; 8] = ["moss", "seeds", "fish", "bark", "fruit", "worms", "grass", "roots"];
pub const OBJECTS: [&str; 16] = [
    "kettle", "lantern", "saddle", "ribbon", "anvil", "barrel", "cloak", "drum", "flask", "glove",
    "helmet", "ladder", "mallet", "oar", "quill", "sieve",
];
pub const COLORS: [&str; 8] = ["red", "blue", "green", "gold", "gray", "pink", "black", "white"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Capital,
    Diet,
    Color,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fact {
    pub relation: Relation,
    pub subject: &'static str,
    pub answer: &'static str,
}

impl Fact {
    pub fn question(&self) -> String {
        match self.relation {
            Relation::Capital => format!("What is the capital of {}?", self.subject),
            Relation::Diet => format!("What does the {} eat?", self.subject),
            Relation::Color => format!("What color is the {}?", self.subject),
        }
    }

    /// Sentence prefix that the answer completes, as in "The zorb eats".
    pub fn stem(&self) -> String {
        match self.relation {
            Relation::Capital => format!("The capital of {} is", self.subject),
            Relation::Diet => format!("The {} eats", self.subject),
            Relation::Color => format!("The {} is", self.subject),
        }
    }

    pub fn statement(&self) -> String {
        format!("{} {}.", self.stem(), self.answer)
    }

    /// Every answer of the same relation, the pool distractors come from.
    pub fn answer_pool(&self) -> &'static [&'static str] {
        match self.relation {
            Relation::Capital => &CAPITALS,
            Relation::Diet => &FOODS,
            Relation::Color => &COLORS,
        }
    }
}

pub fn facts() -> Vec<Fact> {
    let mut out = Vec::new();
    for (i, &subject) in COUNTRIES.iter().enumerate() {
        out.push(Fact { relation: Relation::Capital, subject, answer: CAPITALS[i] });
    }
    for (i, &subject) in CREATURES.iter().enumerate() {
        out.push(Fact { relation: Relation::Diet, subject, answer: FOODS[(i * 3) % FOODS.len()] });
    }
    for (i, &subject) in OBJECTS.iter().enumerate() {
        out.push(Fact { relation: Relation::Color, subject, answer: COLORS[(i * 5 + 1) % COLORS.len()] });
    }
    out
}
