//! Seeded template corpus of student-style responses for desk-scale
//! experiments: ordinary answers, hyperbolic hard negatives that borrow
//! alarming words, and alert responses, with typo and run-together noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Label;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub responses: usize,
    /// Expected alerts per million responses.
    pub alerts_per_million: f64,
    pub seed: u64,
    /// Per-word probability of a single random edit.
    pub typo_rate: f64,
    /// Per-gap probability of dropping the space between two words.
    pub concat_rate: f64,
    /// Share of normal responses written as hyperbole.
    pub hyperbole_rate: f64,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            responses: 100_000,
            alerts_per_million: 85.0,
            seed: 1,
            typo_rate: 0.05,
            concat_rate: 0.01,
            hyperbole_rate: 0.06,
            id_prefix: "r".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1e6).contains(&self.alerts_per_million) {
            return Err(Error::invalid("alerts per million must lie in [0, 1e6]"));
        }
        for (name, p) in [("typo", self.typo_rate), ("concat", self.concat_rate), ("hyperbole", self.hyperbole_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} rate must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub id: String,
    pub text: String,
    pub label: Label,
}

/// `floor(n·p)` alerts plus one more with probability equal to the remainder.
pub fn alert_count(responses: usize, alerts_per_million: f64, rng: &mut impl Rng) -> usize {
    let expected = responses as f64 * alerts_per_million / 1e6;
    let base = expected.floor();
    let extra = rng.gen_bool((expected - base).clamp(0.0, 1.0));
    base as usize + usize::from(extra)
}

/// A corpus of `responses` records with a seeded alert count at the
/// configured prevalence, alerts placed at random positions.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let alerts = alert_count(cfg.responses, cfg.alerts_per_million, &mut rng);
    let mut labels: Vec<Label> = (0..cfg.responses)
        .map(|i| if i < alerts { Label::Alert } else { Label::Normal })
        .collect();
    labels.shuffle(&mut rng);
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let text = match label {
                Label::Alert => alert_text(&mut rng),
                Label::Normal if rng.gen_bool(cfg.hyperbole_rate) => hyperbole_text(&mut rng),
                Label::Normal => normal_text(&mut rng),
            };
            SynthRecord {
                id: format!("{}{:07}", cfg.id_prefix, i),
                text: add_noise(&text, cfg, &mut rng),
                label,
            }
        })
        .collect())
}

/// `count` alert records only, for held-out evaluation sets.
pub fn generate_alerts(count: usize, cfg: &SynthConfig) -> Result<Vec<SynthRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..count)
        .map(|i| {
            let text = alert_text(&mut rng);
            SynthRecord {
                id: format!("{}{:07}", cfg.id_prefix, i),
                text: add_noise(&text, cfg, &mut rng),
                label: Label::Alert,
            }
        })
        .collect())
}

fn pick<'a>(rng: &mut impl Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

const SUBJECTS: &[&str] = &[
    "the author", "the character", "my friend", "the narrator", "our class", "the scientist", "my brother",
    "the teacher", "the farmer", "the family", "the main character", "the students", "my team", "the poet",
];
const VERBS: &[&str] = &[
    "explains", "describes", "shows", "learns", "builds", "discovers", "remembers", "visits", "writes about",
    "argues for", "compares", "explores", "finds", "studies", "plants", "draws",
];
const OBJECTS: &[&str] = &[
    "the history of the town", "a small garden", "the water cycle", "the causes of the war", "a new bridge",
    "the life of a bee", "the rules of the game", "a trip to the mountains", "the solar system", "an old map",
    "the election", "the importance of recycling", "a science project", "the ocean tides", "the big storm",
    "the summer festival", "the value of friendship", "the lost puppy", "the ending of the story",
    "the weather in spring", "a recipe for bread", "the parts of a plant", "the speech", "the museum",
];
const ADVERBIALS: &[&str] = &[
    "in the first chapter", "because it matters", "with a lot of detail", "after school", "during the summer",
    "in a clear way", "at the end", "for the project", "on the weekend", "with evidence from the text",
    "", "", "",
];
const OPINIONS: &[&str] = &[
    "i think this is important because it helps people",
    "in my opinion the evidence supports this idea",
    "this reminds me of when we went to the lake",
    "i liked this part the most because it was funny",
    "the details make the argument stronger",
    "i agree with the author for three reasons",
    "my favorite part was when they won the game",
    "this shows that hard work pays off",
    "we should all try to help our community",
    "i learned that plants need sunlight and water",
    "the answer is {n} because you multiply both sides",
    "there were {n} people at the meeting",
    "i would give this book {n} stars",
];

fn number(rng: &mut impl Rng) -> String {
    rng.gen_range(2..500).to_string()
}

fn sentence(rng: &mut impl Rng) -> String {
    if rng.gen_bool(0.4) {
        pick(rng, OPINIONS).replace("{n}", &number(rng))
    } else {
        let adv = pick(rng, ADVERBIALS);
        let s = format!("{} {} {}", pick(rng, SUBJECTS), pick(rng, VERBS), pick(rng, OBJECTS));
        if adv.is_empty() {
            s
        } else {
            format!("{s} {adv}")
        }
    }
}

fn normal_text(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(1..=4);
    (0..n).map(|_| sentence(rng)).collect::<Vec<_>>().join(". ") + "."
}

const BORING: &[&str] = &[
    "this test", "this homework", "this essay", "this question", "math class", "this assignment", "this reading",
    "the worksheet",
];
const HYPERBOLE: &[&str] = &[
    "{b} is so boring kill me now",
    "if i have to do {b} again i will die",
    "{b} is killing me lol",
    "my mom is going to kill me if i fail {b}",
    "i almost died laughing at {b}",
    "ugh {b} makes me want to die of boredom",
    "i would rather die than redo {b}",
    "{b} is so hard i want to scream",
];

fn hyperbole_text(rng: &mut impl Rng) -> String {
    let core = pick(rng, HYPERBOLE).replace("{b}", pick(rng, BORING));
    if rng.gen_bool(0.5) {
        format!("{}. {}.", sentence(rng), core)
    } else {
        format!("{}. {}.", core, sentence(rng))
    }
}

const ALERT_CORES: &[&str] = &[
    "i want to kill myself",
    "i wanna end my life",
    "nobody loves me and i am stupid and ugly",
    "i dont want to be alive anymore",
    "i think about hurting myself every night",
    "i cut myself again last night",
    "my dad hits me when he gets drunk",
    "i am scared to go home because of what happens there",
    "i have a plan to end it all this weekend",
    "everyone would be better off if i was dead",
    "i want to hurt the kids who bully me",
    "someone at home touches me and i dont know who to tell",
    "i feel so alone and i cant stop crying",
    "please help me i dont feel safe",
    "i took a lot of pills last week",
    "nobody would even notice if i disappeared",
    "i hate myself and i want to die",
    "i am going to bring a knife to school",
];
const ALERT_TAILS: &[&str] = &[
    "", "", "please dont tell anyone", "i dont know what to do", "no one listens to me", "i am so tired of everything",
    "i am sorry for writing this here",
];

fn alert_text(rng: &mut impl Rng) -> String {
    let mut parts = Vec::new();
    if rng.gen_bool(0.5) {
        parts.push(sentence(rng));
    }
    parts.push(pick(rng, ALERT_CORES).to_string());
    if rng.gen_bool(0.3) {
        parts.push(pick(rng, ALERT_CORES).to_string());
    }
    let tail = pick(rng, ALERT_TAILS);
    if !tail.is_empty() {
        parts.push(tail.to_string());
    }
    parts.join(". ") + "."
}

fn typo(word: &str, rng: &mut impl Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    if chars.len() < 3 {
        return word.to_string();
    }
    let i = rng.gen_range(1..chars.len());
    match rng.gen_range(0..4) {
        0 => chars.swap(i - 1, i),
        1 => {
            chars.remove(i);
        }
        2 => chars.insert(i, chars[i]),
        _ => chars[i] = (b'a' + rng.gen_range(0..26u8)) as char,
    }
    chars.into_iter().collect()
}

fn add_noise(text: &str, cfg: &SynthConfig, rng: &mut impl Rng) -> String {
    let mut out = String::with_capacity(text.len() + 8);
    for (i, word) in text.split(' ').enumerate() {
        if i > 0 && !rng.gen_bool(cfg.concat_rate) {
            out.push(' ');
        }
        let alpha = word.chars().all(|c| c.is_ascii_alphabetic());
        if alpha && rng.gen_bool(cfg.typo_rate) {
            out.push_str(&typo(word, rng));
        } else {
            out.push_str(word);
        }
    }
    out
}
