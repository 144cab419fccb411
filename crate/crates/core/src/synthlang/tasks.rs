//! Task generators and their independent oracles.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::lang::content_index;
use super::vocab::{
    ADD_VERBS, BIGGER, DIGITS, LABELS, MARKER, MINUS, MUL_VERBS, NAMES, NOUNS, PLUS, SMALLER, SUB_VERBS, TIMES,
};
use super::SynthError;
use crate::tensorcore::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Math,
    Compare,
    Translate,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Math => "math",
            TaskKind::Compare => "compare",
            TaskKind::Translate => "translate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [TaskKind::Math, TaskKind::Compare, TaskKind::Translate].into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskExample {
    pub lang: String,
    pub kind: TaskKind,
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub answer: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    pub const ALL: [Op; 3] = [Op::Add, Op::Sub, Op::Mul];

    fn symbol(self) -> &'static str {
        match self {
            Op::Add => PLUS,
            Op::Sub => MINUS,
            Op::Mul => TIMES,
        }
    }

    fn verbs(self) -> &'static [&'static str] {
        match self {
            Op::Add => &ADD_VERBS,
            Op::Sub => &SUB_VERBS,
            Op::Mul => &MUL_VERBS,
        }
    }

    fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
        }
    }
}

/// Operand count and range for a math difficulty level.
pub fn math_shape(difficulty: u8) -> Result<(usize, i64), SynthError> {
    match difficulty {
        1 => Ok((2, 9)),
        2 => Ok((3, 15)),
        3 => Ok((4, 20)),
        d => Err(SynthError::Config(format!("math difficulty {d} not in 1..=3"))),
    }
}

pub fn number_tokens(n: i64) -> Vec<String> {
    let mut out = Vec::new();
    if n < 0 {
        out.push(MINUS.to_string());
    }
    out.extend(n.unsigned_abs().to_string().chars().map(|c| c.to_string()));
    out
}

fn answer_tail(answer: &str, out: &mut Vec<String>) {
    out.extend(MARKER.iter().map(|s| s.to_string()));
    out.extend(answer.split(' ').map(str::to_string));
}

fn expr_tokens(nums: &[i64], ops: &[Op]) -> Vec<String> {
    let mut out = number_tokens(nums[0]);
    for (op, &n) in ops.iter().zip(&nums[1..]) {
        out.push(op.symbol().to_string());
        out.extend(number_tokens(n));
    }
    out
}

/// Reduces every `×` left to right, returning the additive remainder.
fn reduce_products(nums: &[i64], ops: &[Op]) -> (Vec<i64>, Vec<Op>) {
    let mut n = vec![nums[0]];
    let mut o = Vec::new();
    for (&op, &x) in ops.iter().zip(&nums[1..]) {
        if op == Op::Mul {
            let last = n.last_mut().expect("nonempty");
            *last *= x;
        } else {
            n.push(x);
            o.push(op);
        }
    }
    (n, o)
}

/// `nums[0] ops[0] nums[1] ...` with `×` binding tighter than `+`/`-`.
pub fn eval_with_precedence(nums: &[i64], ops: &[Op]) -> i64 {
    let (rn, ro) = reduce_products(nums, ops);
    ro.iter().zip(&rn[1..]).fold(rn[0], |acc, (op, &x)| op.apply(acc, x))
}

pub const MAX_TARGET: usize = 30;

/// An English math word problem with a short derivation target.
pub fn gen_math_example(rng: &mut RngStream, difficulty: u8) -> Result<TaskExample, SynthError> {
    let (count, max) = math_shape(difficulty)?;
    let nums: Vec<i64> = (0..count).map(|_| rng.range_inclusive(0, max)).collect();
    let ops: Vec<Op> = (1..count).map(|_| *rng.choose(&Op::ALL)).collect();
    let name = *rng.choose(&NAMES);
    let noun = *rng.choose(&NOUNS);
    let mut q: Vec<String> = vec![name.into(), "has".into()];
    q.extend(number_tokens(nums[0]));
    q.extend([noun.into(), ".".into()]);
    for (op, &n) in ops.iter().zip(&nums[1..]) {
        q.extend([name.to_string(), rng.choose(op.verbs()).to_string()]);
        q.extend(number_tokens(n));
        q.extend([noun.into(), ".".into()]);
    }
    q.extend(["how", "many", noun, "?"].map(String::from));

    let (rn, ro) = reduce_products(&nums, &ops);
    let value = eval_with_precedence(&nums, &ops);
    let answer = number_tokens(value).join(" ");
    let build = |with_step: bool| {
        let mut y = expr_tokens(&nums, &ops);
        if with_step && ro.len() != ops.len() && !ro.is_empty() {
            y.push("=".into());
            y.extend(expr_tokens(&rn, &ro));
        }
        y.push("=".into());
        y.extend(number_tokens(value));
        answer_tail(&answer, &mut y);
        y
    };
    let mut target = build(true);
    if target.len() > MAX_TARGET {
        target = build(false);
    }
    Ok(TaskExample { lang: "en".into(), kind: TaskKind::Math, source: q, target, answer })
}

/// Label mix for comparison questions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Probability that both operands are equal.
    pub equal_fraction: f64,
    /// Operands are drawn from `0..=max_operand`.
    pub max_operand: i64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { equal_fraction: 0.1, max_operand: 20 }
    }
}

impl CompareConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.equal_fraction) || self.max_operand < 1 {
            return Err(SynthError::Config("compare: equal_fraction in [0,1], max_operand >= 1".into()));
        }
        Ok(())
    }

    /// Configured probability of each label, in `LABELS` order.
    pub fn label_mix(&self) -> [f64; 3] {
        let rest = (1.0 - self.equal_fraction) / 2.0;
        [rest, rest, self.equal_fraction]
    }
}

/// "is a <relation> than b ?" with a yes/no/equal label.
pub fn gen_compare_example(rng: &mut RngStream, cfg: &CompareConfig) -> Result<TaskExample, SynthError> {
    cfg.validate()?;
    let a = rng.range_inclusive(0, cfg.max_operand);
    let b = if rng.bernoulli(cfg.equal_fraction) {
        a
    } else {
        let mut b = rng.range_inclusive(0, cfg.max_operand - 1);
        if b >= a {
            b += 1;
        }
        b
    };
    let bigger = rng.bernoulli(0.5);
    let rel = if bigger { *rng.choose(&BIGGER) } else { *rng.choose(&SMALLER) };
    let label = if a == b {
        LABELS[2]
    } else if (a > b) == bigger {
        LABELS[0]
    } else {
        LABELS[1]
    };
    let mut q: Vec<String> = vec!["is".into()];
    q.extend(number_tokens(a));
    q.extend([rel.to_string(), "than".into()]);
    q.extend(number_tokens(b));
    q.push("?".into());
    Ok(TaskExample {
        lang: "en".into(),
        kind: TaskKind::Compare,
        source: q,
        target: vec![label.to_string()],
        answer: label.to_string(),
    })
}

/// Independent oracles that re-derive gold answers from English query text.
pub mod oracle {
    use super::*;

    fn read_number(toks: &[String], i: &mut usize) -> Option<i64> {
        let neg = toks.get(*i).map(String::as_str) == Some(MINUS);
        if neg {
            *i += 1;
        }
        let mut s = String::new();
        while let Some(t) = toks.get(*i) {
            if DIGITS.contains(&t.as_str()) {
                s.push_str(t);
                *i += 1;
            } else {
                break;
            }
        }
        let v: i64 = s.parse().ok()?;
        Some(if neg { -v } else { v })
    }

    /// Extracts the operand/verb sequence and evaluates it by recursive
    /// descent (terms of factors).
    pub fn math_answer(source: &[String]) -> Option<String> {
        let mut nums = Vec::new();
        let mut ops = Vec::new();
        let mut i = 0;
        while i < source.len() {
            let t = source[i].as_str();
            if DIGITS.contains(&t) {
                nums.push(read_number(source, &mut i)?);
                continue;
            }
            if ADD_VERBS.contains(&t) {
                ops.push('+');
            } else if SUB_VERBS.contains(&t) {
                ops.push('-');
            } else if MUL_VERBS.contains(&t) {
                ops.push('*');
            }
            i += 1;
        }
        if nums.len() != ops.len() + 1 {
            return None;
        }
        // expression := term (('+'|'-') term)*, term := num ('*' num)*
        let mut pos = 0;
        let term = |pos: &mut usize| -> i64 {
            let mut v = nums[*pos];
            while *pos < ops.len() && ops[*pos] == '*' {
                *pos += 1;
                v *= nums[*pos];
            }
            v
        };
        let mut total = term(&mut pos);
        while pos < ops.len() {
            let op = ops[pos];
            pos += 1;
            let t = term(&mut pos);
            total = if op == '+' { total + t } else { total - t };
        }
        Some(number_tokens(total).join(" "))
    }

    pub fn compare_answer(source: &[String]) -> Option<String> {
        let mut i = 0;
        let mut vals = Vec::new();
        let mut rel = None;
        while i < source.len() {
            let t = source[i].as_str();
            if DIGITS.contains(&t) {
                vals.push(read_number(source, &mut i)?);
                continue;
            }
            if BIGGER.contains(&t) {
                rel = Some(true);
            } else if SMALLER.contains(&t) {
                rel = Some(false);
            }
            i += 1;
        }
        let (&[a, b], Some(bigger)) = (vals.as_slice(), rel) else { return None };
        let label = match a.cmp(&b) {
            std::cmp::Ordering::Equal => "equal",
            std::cmp::Ordering::Greater => if bigger { "yes" } else { "no" },
            std::cmp::Ordering::Less => if bigger { "no" } else { "yes" },
        };
        Some(label.to_string())
    }

    pub fn answer(ex: &TaskExample) -> Option<String> {
        match ex.kind {
            TaskKind::Math => math_answer(&ex.source),
            TaskKind::Compare => compare_answer(&ex.source),
            TaskKind::Translate => None,
        }
    }
}

/// Accuracy of the best guesser that sees the numbers but no content words.
///
/// For math it sees the operands but not the operators (uniform and
/// independent); for compare it sees the operands but not the relation.
pub fn chance_accuracy(kind: TaskKind, difficulty: u8, compare: &CompareConfig) -> Result<f64, SynthError> {
    match kind {
        TaskKind::Math => {
            let (count, max) = math_shape(difficulty)?;
            let n_ops = count - 1;
            let op_seqs: Vec<Vec<Op>> = (0..3usize.pow(n_ops as u32))
                .map(|mut code| {
                    (0..n_ops)
                        .map(|_| {
                            let o = Op::ALL[code % 3];
                            code /= 3;
                            o
                        })
                        .collect()
                })
                .collect();
            let side = (max + 1) as usize;
            let tuples = side.pow(count as u32);
            let mut hits = 0usize;
            let mut counts: HashMap<i64, usize> = HashMap::new();
            for mut code in 0..tuples {
                let nums: Vec<i64> = (0..count)
                    .map(|_| {
                        let v = (code % side) as i64;
                        code /= side;
                        v
                    })
                    .collect();
                counts.clear();
                for ops in &op_seqs {
                    *counts.entry(eval_with_precedence(&nums, ops)).or_default() += 1;
                }
                hits += counts.values().copied().max().unwrap_or(0);
            }
            Ok(hits as f64 / (tuples * op_seqs.len()) as f64)
        }
        TaskKind::Compare => {
            compare.validate()?;
            Ok(compare.equal_fraction + (1.0 - compare.equal_fraction) * 0.5)
        }
        TaskKind::Translate => Err(SynthError::Config("no chance level for translation".into())),
    }
}

/// True when `word` is one of the English content words.
pub fn is_content(word: &str) -> bool {
    content_index(word).is_some()
}
