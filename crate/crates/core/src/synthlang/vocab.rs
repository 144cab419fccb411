//! Shared word inventory and the two model vocabularies.

use std::collections::HashMap;

use crate::nets::special;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

pub const SPECIALS: [&str; special::COUNT] = [PAD, UNK, BOS, EOS];

pub const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
pub const PLUS: &str = "+";
pub const MINUS: &str = "-";
pub const TIMES: &str = "×";
pub const EQUALS: &str = "=";
pub const MARKER: [&str; 4] = ["####", "The", "answer", "is:"];
pub const LABELS: [&str; 3] = ["yes", "no", "equal"];

/// Tokens every language writes the same way.
pub fn invariant_tokens() -> Vec<&'static str> {
    let mut v: Vec<&'static str> = DIGITS.to_vec();
    v.extend([PLUS, MINUS, TIMES, EQUALS, ".", "?", ",", "|"]);
    v.extend(MARKER);
    v.extend(LABELS);
    v
}

pub const NAMES: [&str; 30] = [
    "anna", "ben", "cara", "dan", "eva", "finn", "gina", "hugo", "iris", "jack", "kira", "leo", "mia", "nico", "olga",
    "paul", "quinn", "rosa", "sam", "tara", "uma", "vik", "wren", "xena", "yuri", "zoe", "alba", "bram", "cleo", "dino",
];

pub const NOUNS: [&str; 50] = [
    "apples", "pears", "books", "coins", "cards", "stones", "shells", "pens", "cups", "hats", "boats", "kites", "bells",
    "drums", "rings", "keys", "seeds", "eggs", "nuts", "plums", "lamps", "maps", "bowls", "socks", "toys", "beads",
    "leaves", "shoes", "forks", "jars", "nails", "ropes", "tiles", "wheels", "flags", "gems", "masks", "pipes", "combs",
    "bricks", "buttons", "carrots", "cookies", "feathers", "marbles", "pencils", "ribbons", "stamps", "tickets",
    "candles",
];

pub const ADJECTIVES: [&str; 30] = [
    "red", "blue", "green", "old", "new", "small", "big", "soft", "hard", "warm", "cold", "bright", "dark", "quiet",
    "loud", "happy", "sad", "quick", "slow", "clean", "dirty", "heavy", "light", "round", "sharp", "sweet", "sour",
    "rich", "poor", "tall",
];

pub const VERBS: [&str; 30] = [
    "sees", "likes", "paints", "carries", "washes", "hides", "finds", "holds", "moves", "opens", "cleans", "draws",
    "builds", "breaks", "fixes", "keeps", "shows", "wants", "needs", "throws", "catches", "counts", "sorts", "brings",
    "takes", "checks", "uses", "grabs", "packs", "marks",
];

pub const ADD_VERBS: [&str; 6] = ["gets", "buys", "wins", "receives", "collects", "gains"];
pub const SUB_VERBS: [&str; 6] = ["loses", "gives", "sells", "drops", "spends", "donates"];
pub const MUL_VERBS: [&str; 6] = ["multiplies", "triples", "scales", "repeats", "copies", "duplicates"];
pub const BIGGER: [&str; 4] = ["bigger", "larger", "greater", "higher"];
pub const SMALLER: [&str; 4] = ["smaller", "lower", "fewer", "lesser"];

pub const FUNCTION_WORDS: [&str; 14] =
    ["the", "a", "has", "how", "many", "and", "is", "than", "each", "does", "have", "now", "then", "with"];

/// The 180 content words, in a fixed order. Their index is the word id that
/// language permutations act on.
pub fn content_words() -> Vec<&'static str> {
    let mut v = Vec::with_capacity(180);
    v.extend(NAMES);
    v.extend(NOUNS);
    v.extend(ADJECTIVES);
    v.extend(VERBS);
    v.extend(ADD_VERBS);
    v.extend(SUB_VERBS);
    v.extend(MUL_VERBS);
    v.extend(BIGGER);
    v.extend(SMALLER);
    v.extend(FUNCTION_WORDS);
    v
}

pub const CONTENT_SIZE: usize = 180;

/// Token-string to id table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Starts with the reserved specials at their fixed ids.
    pub fn new() -> Self {
        let mut v = Self { tokens: Vec::new(), index: HashMap::new() };
        for s in SPECIALS {
            v.push(s);
        }
        v
    }

    pub fn push(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.tokens.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Ids for `tokens`, replacing unknown ones by `UNK`.
    pub fn encode_lossy<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(special::UNK)).collect()
    }

    /// Ids for `tokens`, or the first token missing from the vocabulary.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>, String> {
        tokens.iter().map(|t| self.id(t.as_ref()).ok_or_else(|| t.as_ref().to_string())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}
