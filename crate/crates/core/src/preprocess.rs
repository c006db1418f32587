//! Raw response text to in-vocabulary token sequences.
//!
//! The pipeline is `strip_markup` → `tokenize` → `resolve_token` per word →
//! head truncation. Misspellings are tolerated rather than corrected when the
//! vocabulary has them; words glued together by a missing space are split back
//! into vocabulary fragments.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::embedding::{Vocabulary, NUM, OOV};
use crate::error::{Error, Result};

/// Words longer than this are truncated before computing edit distances.
pub const MAX_DISTANCE_WORD_LEN: usize = 64;
pub const DEFAULT_MAX_TOKENS: usize = 400;

/// Serialized as the integer 0 (normal) or 1 (alert).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Normal,
    Alert,
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_int()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Label, String> {
        Label::from_int(v).ok_or_else(|| format!("label must be 0 or 1, got {v}"))
    }
}

impl Label {
    pub fn from_int(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Normal),
            1 => Some(Label::Alert),
            _ => None,
        }
    }

    pub fn as_int(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Alert => 1,
        }
    }

    pub fn target(self) -> f64 {
        f64::from(self.as_int())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawResponse {
    pub id: String,
    pub payload: String,
    pub label: Option<Label>,
}

impl RawResponse {
    pub fn new(id: impl Into<String>, payload: impl Into<String>, label: Option<Label>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("response id must be nonempty"));
        }
        Ok(RawResponse {
            id,
            payload: payload.into(),
            label,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    /// The word was in the vocabulary as written.
    Direct,
    /// One piece of a concatenated word.
    SplitFragment,
    /// Replaced by its nearest vocabulary word.
    Corrected,
    /// Not representable; embeds as the OOV row.
    OutOfVocabulary,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub provenance: Provenance,
}

impl Token {
    fn new(text: impl Into<String>, provenance: Provenance) -> Self {
        Token {
            text: text.into(),
            provenance,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    pub fn truncate(&mut self, max_len: usize) {
        self.tokens.truncate(max_len);
    }

    /// Builds a sequence of direct tokens from plain words.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        TokenSequence {
            tokens: words.iter().map(|w| Token::new(w.as_ref(), Provenance::Direct)).collect(),
        }
    }
}

static COMMENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<!--.*?-->").unwrap());
static CDATA: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<!\[CDATA\[(.*?)\]\]>").unwrap());
static SCRIPT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<script\b[^>]*>.*?</script\s*>").unwrap());
static STYLE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<style\b[^>]*>.*?</style\s*>").unwrap());
static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[/!?]?[A-Za-z][^<>]*>").unwrap());
static ENTITY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"&(#[0-9]{1,7}|#[xX][0-9a-fA-F]{1,6}|[A-Za-z][A-Za-z0-9]{1,31});").unwrap());
static WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\p{L}+(?:['\u{2019}]\p{L}+)*|\p{N}+(?:[.,]\p{N}+)*").unwrap());

fn decode_entity(body: &str) -> Option<String> {
    if let Some(num) = body.strip_prefix('#') {
        let code = match num.strip_prefix(['x', 'X']) {
            Some(hex) => u32::from_str_radix(hex, 16).ok()?,
            None => num.parse::<u32>().ok()?,
        };
        return char::from_u32(code).map(String::from);
    }
    let s = match body {
        "amp" => "&",
        "lt" => "<",
        "gt" => ">",
        "quot" => "\"",
        "apos" => "'",
        "nbsp" => " ",
        "rsquo" | "lsquo" => "'",
        "ldquo" | "rdquo" => "\"",
        "hellip" => "...",
        "mdash" | "ndash" => "-",
        _ => return None,
    };
    Some(s.to_string())
}

fn strip_pass(text: &str) -> String {
    let s = COMMENT.replace_all(text, " ");
    let s = CDATA.replace_all(&s, "$1");
    let s = SCRIPT.replace_all(&s, " ");
    let s = STYLE.replace_all(&s, " ");
    let s = TAG.replace_all(&s, " ");
    // unknown named entities are dropped
    let s = ENTITY.replace_all(&s, |caps: &regex::Captures<'_>| decode_entity(&caps[1]).unwrap_or_default());

    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            pending_space = true;
        } else if ch.is_control() {
            continue;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        }
    }
    out
}

/// Removes tags, comments, script/style blocks and entity escapes, and
/// collapses whitespace. Runs to a fixpoint, so escaped markup such as
/// `&lt;b&gt;` is removed too and the result is idempotent.
pub fn strip_markup(payload: &str) -> String {
    let mut current = strip_pass(payload);
    loop {
        let next = strip_pass(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Lowercased word tokens. Punctuation separates words; apostrophes inside
/// a word are kept. Numerals become the NUM token.
pub fn tokenize(text: &str) -> TokenSequence {
    let tokens = WORD
        .find_iter(text)
        .map(|m| {
            let w = m.as_str();
            if w.starts_with(|c: char| c.is_numeric()) {
                Token::new(NUM, Provenance::Direct)
            } else {
                Token::new(w.to_lowercase().replace('\u{2019}', "'"), Provenance::Direct)
            }
        })
        .collect();
    TokenSequence { tokens }
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().take(MAX_DISTANCE_WORD_LEN).collect();
    let b: Vec<char> = b.chars().take(MAX_DISTANCE_WORD_LEN).collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// What to do with a word within the distance bound of the vocabulary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MisspellingPolicy {
    /// Replace with the nearest vocabulary word (ties: lexicographically first).
    #[default]
    Correct,
    /// Keep the word verbatim, flagged out-of-vocabulary.
    Retain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub max_tokens: usize,
    pub max_distance: usize,
    pub misspelling: MisspellingPolicy,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            max_tokens: DEFAULT_MAX_TOKENS,
            max_distance: 2,
            misspelling: MisspellingPolicy::Correct,
        }
    }
}

fn is_fragment_word(w: &str) -> bool {
    w.chars().count() >= 2 || w == "a" || w == "i"
}

/// Splits `word` into vocabulary words, minimizing the number of fragments,
/// then the summed vocabulary rank (rarer words rank later), then
/// lexicographic order of the fragment list.
pub fn segment(word: &str, vocab: &Vocabulary) -> Option<Vec<String>> {
    let bounds: Vec<usize> = word
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(word.len()))
        .collect();
    let n = bounds.len() - 1;
    // best[i] = best split of word[bounds[i]..]
    let mut best: Vec<Option<(usize, usize, Vec<String>)>> = vec![None; n + 1];
    best[n] = Some((0, 0, Vec::new()));
    for i in (0..n).rev() {
        let mut cand: Option<(usize, usize, Vec<String>)> = None;
        for j in i + 1..=n {
            let piece = &word[bounds[i]..bounds[j]];
            if !is_fragment_word(piece) {
                continue;
            }
            let Some(rank) = vocab.content_index(piece) else {
                continue;
            };
            let Some((cnt, rarity, rest)) = &best[j] else {
                continue;
            };
            let mut frags = Vec::with_capacity(rest.len() + 1);
            frags.push(piece.to_string());
            frags.extend(rest.iter().cloned());
            let next = (cnt + 1, rarity + rank, frags);
            if cand.as_ref().is_none_or(|c| next < *c) {
                cand = Some(next);
            }
        }
        best[i] = cand;
    }
    best[0].take().map(|(_, _, frags)| frags)
}

/// Nearest content word by edit distance, ties broken lexicographically.
pub fn nearest_word<'v>(word: &str, vocab: &'v Vocabulary) -> Option<(&'v str, usize)> {
    let wlen = word.chars().count().min(MAX_DISTANCE_WORD_LEN);
    let mut best: Option<(&str, usize)> = None;
    for w in vocab.content_words() {
        let len_gap = wlen.abs_diff(w.chars().count().min(MAX_DISTANCE_WORD_LEN));
        if let Some((bw, bd)) = best {
            if len_gap > bd {
                continue;
            }
            let d = levenshtein(word, w);
            if d < bd || (d == bd && w < bw) {
                best = Some((w, d));
            }
        } else {
            best = Some((w, levenshtein(word, w)));
        }
    }
    best
}

/// Maps one token to in-vocabulary tokens.
///
/// Order of preference: the word itself; an exact split into vocabulary
/// fragments; a near-miss within `max_distance` edits (corrected or retained
/// per policy); otherwise the OOV marker.
pub fn resolve_token(word: &str, vocab: &Vocabulary, cfg: &PreprocessConfig) -> Result<Vec<Token>> {
    if vocab.content_len() == 0 {
        return Err(Error::Empty("vocabulary"));
    }
    if vocab.contains(word) {
        return Ok(vec![Token::new(word, Provenance::Direct)]);
    }
    if let Some(frags) = segment(word, vocab) {
        return Ok(frags
            .into_iter()
            .map(|f| Token::new(f, Provenance::SplitFragment))
            .collect());
    }
    if let Some((nearest, d)) = nearest_word(word, vocab) {
        if d <= cfg.max_distance {
            return Ok(vec![match cfg.misspelling {
                MisspellingPolicy::Correct => Token::new(nearest, Provenance::Corrected),
                MisspellingPolicy::Retain => Token::new(word, Provenance::OutOfVocabulary),
            }]);
        }
    }
    Ok(vec![Token::new(OOV, Provenance::OutOfVocabulary)])
}

/// Full text-to-tokens pipeline against a fixed vocabulary.
///
/// Resolutions are memoized per distinct word, so the type is not `Sync`;
/// clone one per worker.
#[derive(Clone, Debug)]
pub struct Preprocessor<'v> {
    vocab: &'v Vocabulary,
    cfg: PreprocessConfig,
    cache: std::cell::RefCell<HashMap<String, Vec<Token>>>,
}

impl<'v> Preprocessor<'v> {
    pub fn new(vocab: &'v Vocabulary, cfg: PreprocessConfig) -> Result<Self> {
        if vocab.content_len() == 0 {
            return Err(Error::Empty("vocabulary"));
        }
        if cfg.max_tokens == 0 {
            return Err(Error::invalid("max_tokens must be at least 1"));
        }
        Ok(Preprocessor {
            vocab,
            cfg,
            cache: Default::default(),
        })
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.cfg
    }

    pub fn resolve(&self, seq: &TokenSequence) -> TokenSequence {
        let mut out = Vec::with_capacity(seq.len());
        let mut cache = self.cache.borrow_mut();
        for tok in &seq.tokens {
            if out.len() >= self.cfg.max_tokens {
                break;
            }
            let resolved = cache.entry(tok.text.clone()).or_insert_with(|| {
                resolve_token(&tok.text, self.vocab, &self.cfg).expect("vocabulary checked nonempty")
            });
            out.extend(resolved.iter().cloned());
        }
        out.truncate(self.cfg.max_tokens);
        TokenSequence { tokens: out }
    }

    pub fn process(&self, payload: &str) -> TokenSequence {
        self.resolve(&tokenize(&strip_markup(payload)))
    }
}
