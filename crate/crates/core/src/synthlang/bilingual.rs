//! Template grammar for general (non-task) sentences and parallel pairs.

use super::lang::SynthLanguage;
use super::tasks::number_tokens;
use super::vocab::{ADD_VERBS, ADJECTIVES, BIGGER, MUL_VERBS, NAMES, NOUNS, SMALLER, SUB_VERBS, VERBS};
use super::SynthError;
use crate::tensorcore::RngStream;

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

/// One English sentence from the template grammar.
pub fn gen_sentence(rng: &mut RngStream) -> Vec<String> {
    let name = *rng.choose(&NAMES);
    let noun = *rng.choose(&NOUNS);
    let adj = *rng.choose(&ADJECTIVES);
    match rng.below(9) {
        0 => words(&[name, *rng.choose(&VERBS), "the", adj, noun, "."]),
        1 => words(&["the", adj, noun, "is", *rng.choose(&ADJECTIVES), "."]),
        2 => {
            let mut s = words(&[name, "and", *rng.choose(&NAMES), "have"]);
            s.extend(number_tokens(rng.range_inclusive(0, 20)));
            s.extend(words(&[adj, noun, "."]));
            s
        }
        3 => words(&[name, *rng.choose(&VERBS), "a", noun, "with", "the", *rng.choose(&NOUNS), "."]),
        4 => words(&["does", name, "have", adj, noun, "?"]),
        5 => {
            let verbs: &[&str] = match rng.below(3) {
                0 => &ADD_VERBS,
                1 => &SUB_VERBS,
                _ => &MUL_VERBS,
            };
            let mut s = words(&[name, "now", *rng.choose(verbs)]);
            s.extend(number_tokens(rng.range_inclusive(0, 20)));
            s.extend(words(&[adj, noun, "."]));
            s
        }
        6 => {
            let rel = if rng.bernoulli(0.5) { *rng.choose(&BIGGER) } else { *rng.choose(&SMALLER) };
            words(&["the", adj, noun, "is", rel, "than", "the", *rng.choose(&NOUNS), "."])
        }
        7 => words(&["how", "many", adj, noun, "does", name, "have", "?"]),
        _ => {
            let mut s = words(&["each", noun, "has"]);
            s.extend(number_tokens(rng.range_inclusive(0, 20)));
            s.extend(words(&[*rng.choose(&NOUNS), ",", "then", name, *rng.choose(&VERBS), "the", noun, "."]));
            s
        }
    }
}

/// `(sentence in lang, English sentence)`, parallel token for token.
pub fn gen_bilingual_pair(lang: &SynthLanguage, rng: &mut RngStream) -> Result<(Vec<String>, Vec<String>), SynthError> {
    if lang.is_english() {
        return Err(SynthError::Config("bilingual pairs need a non-English language".into()));
    }
    let en = gen_sentence(rng);
    Ok((lang.render(&en)?, en))
}
