use std::collections::HashSet;

use proptest::prelude::*;

use super::tasks::{eval_with_precedence, Op, MAX_TARGET};
use super::vocab::{content_words, invariant_tokens, CONTENT_SIZE};
use super::*;
use crate::nets::special;
use crate::tensorcore::RngStream;

fn toks(s: &str) -> Vec<String> {
    s.split(' ').map(String::from).collect()
}

fn small_world() -> WorldConfig {
    let mut cfg = WorldConfig::default();
    cfg.quotas = Quotas {
        lm_english: 300,
        lm_high_fraction: 0.1,
        lm_translation: 40,
        lm_echo: 40,
        lm_arithmetic: 50,
        english_task: 200,
        encoder_pairs: 60,
        mapping_pairs: 50,
        stage2: 100,
        eval: 40,
        pool: 30,
    };
    cfg
}

#[test]
fn shared_inventory_shape() {
    let content = content_words();
    assert_eq!(content.len(), CONTENT_SIZE);
    let unique: HashSet<_> = content.iter().collect();
    assert_eq!(unique.len(), CONTENT_SIZE);
    let inv = invariant_tokens();
    assert!(inv.iter().all(|t| !unique.contains(t)));
    assert!(content.len() + inv.len() <= 256);
}

#[test]
fn english_is_identity_and_seeds_differ() {
    let en = make_language("en", 3, Tier::English);
    assert!(en.permutation().iter().enumerate().all(|(i, &p)| i == p));
    let a = make_language("xa", 1, Tier::High);
    let b = make_language("xa", 2, Tier::High);
    let differing = a.permutation().iter().zip(b.permutation()).filter(|(x, y)| x != y).count();
    assert!(differing as f64 > 0.9 * CONTENT_SIZE as f64, "{differing}");
}

#[test]
fn render_keeps_invariants_and_length() {
    let lang = make_language("l1", 9, Tier::Low);
    assert_eq!(lang.render(&toks("2 + 3")).unwrap(), toks("2 + 3"));
    let s = toks("anna has 3 pears .");
    let r = lang.render(&s).unwrap();
    assert_eq!(r.len(), s.len());
    assert_eq!(r[2], "3");
    assert!(r[0].ends_with("_l1"));
    assert!(matches!(lang.render(&toks("zebra")), Err(SynthError::UnknownToken(_))));
}

proptest! {
    #[test]
    fn render_is_a_bijection(seed in 0u64..10_000, lang_seed in 0u64..1000) {
        let lang = make_language("zz", lang_seed, Tier::High);
        let s = gen_sentence(&mut RngStream::new(seed));
        let r = lang.render(&s).unwrap();
        prop_assert_eq!(r.len(), s.len());
        prop_assert_eq!(lang.inverse_render(&r).unwrap(), s);
    }
}

#[test]
fn precedence_examples() {
    assert_eq!(eval_with_precedence(&[3, 4, 2], &[Op::Add, Op::Mul]), 11);
    for k in 0..30 {
        assert_eq!(eval_with_precedence(&[0, k], &[Op::Mul]), 0);
    }
    let q = toks("anna has 3 pears . anna gets 4 pears . anna triples 2 pears . how many pears ?");
    assert_eq!(oracle::math_answer(&q).unwrap(), "1 1");
}

#[test]
fn generated_math_matches_independent_oracle() {
    let mut rng = RngStream::new(11);
    for i in 0..10_000 {
        let d = 1 + (i % 3) as u8;
        let ex = gen_math_example(&mut rng, d).unwrap();
        assert_eq!(oracle::answer(&ex).as_deref(), Some(ex.answer.as_str()), "{ex:?}");
        assert_eq!(extract_answer(&ex.target.join(" ")).as_deref(), Some(ex.answer.as_str()));
        assert!(ex.target.len() <= MAX_TARGET, "{:?}", ex.target);
    }
}

#[test]
fn compare_labels_match_oracle_and_mix() {
    let cfg = CompareConfig::default();
    let mut rng = RngStream::new(12);
    let mut counts = [0usize; 3];
    for _ in 0..10_000 {
        let ex = gen_compare_example(&mut rng, &cfg).unwrap();
        assert_eq!(oracle::answer(&ex).as_deref(), Some(ex.answer.as_str()));
        counts[vocab::LABELS.iter().position(|l| *l == ex.answer).unwrap()] += 1;
    }
    for (c, p) in counts.iter().zip(cfg.label_mix()) {
        assert!((*c as f64 / 10_000.0 - p).abs() < 0.05, "{counts:?}");
    }
    assert_eq!(oracle::compare_answer(&toks("is 5 bigger than 3 ?")).unwrap(), "yes");
    assert_eq!(oracle::compare_answer(&toks("is 5 smaller than 3 ?")).unwrap(), "no");
    assert_eq!(oracle::compare_answer(&toks("is 4 larger than 4 ?")).unwrap(), "equal");
}

#[test]
fn chance_levels() {
    let c = CompareConfig::default();
    assert!((chance_accuracy(TaskKind::Compare, 1, &c).unwrap() - 0.55).abs() < 1e-12);
    let m = chance_accuracy(TaskKind::Math, 1, &c).unwrap();
    // Brute force over the d=1 space: operands 0..=9, ops uniform.
    let mut hits = 0.0;
    for a in 0..=9i64 {
        for b in 0..=9i64 {
            let vals = [a + b, a - b, a * b];
            let best = vals.iter().map(|v| vals.iter().filter(|w| *w == v).count()).max().unwrap();
            hits += best as f64 / 3.0;
        }
    }
    assert!((m - hits / 100.0).abs() < 1e-12, "{m}");
    assert!(m > 1.0 / 3.0 && m < 0.5);
}

#[test]
fn bilingual_pairs_are_parallel() {
    let lang = make_language("h1", 5, Tier::High);
    let mut keys = HashSet::new();
    let mut dups = 0;
    for i in 0..1000 {
        let (l, en) = gen_bilingual_pair(&lang, &mut RngStream::new(100).fork_index("pair", i)).unwrap();
        assert_eq!(l.len(), en.len());
        assert_eq!(lang.inverse_render(&l).unwrap(), en);
        if !keys.insert(en.join(" ")) {
            dups += 1;
        }
    }
    assert!(dups <= 10, "{dups}");
    let en = make_language("en", 0, Tier::English);
    assert!(gen_bilingual_pair(&en, &mut RngStream::new(1)).is_err());
}

#[test]
fn corpora_respect_tiers_quotas_and_disjointness() {
    let cfg = small_world();
    let world = World::new(&cfg).unwrap();
    let bundle = build_corpora(&world).unwrap();
    let lows: HashSet<String> = world.low_codes().into_iter().collect();
    assert!(bundle.lm_pretrain.iter().all(|d| !lows.contains(&d.lang)));
    for low in &lows {
        let lang = world.language(low).unwrap();
        assert!(bundle.lm_pretrain.iter().all(|d| !d.tokens.iter().any(|t| t.ends_with(&format!("_{}", lang.code)))));
    }
    let high_text = bundle.lm_pretrain.iter().filter(|d| d.lang.starts_with('h') && !d.tokens.contains(&"|".to_string())).count();
    assert_eq!(high_text, 3 * 30);
    for code in world.codes() {
        assert_eq!(bundle.eval[&code].len(), cfg.quotas.eval);
        assert_eq!(bundle.stage2[&code].len(), cfg.quotas.stage2);
        assert_eq!(bundle.encoder_pairs[&code].len(), cfg.quotas.encoder_pairs);
    }
    assert_eq!(bundle.mapping_pairs.len(), 6);
    assert_eq!(bundle.english_task.len(), cfg.quotas.english_task);
    assert_eq!(bundle.pool.len(), cfg.quotas.pool);
    let train = bundle.training_sources(&world).unwrap();
    for ex in bundle.eval.values().flatten() {
        assert!(!train.contains(&english_source(&world, ex).unwrap().join(" ")));
    }
    for s in &bundle.pool {
        assert!(!train.contains(&s.join(" ")));
    }
    assert_eq!(build_corpora(&world).unwrap(), bundle);
}

#[test]
fn stage2_sets_nest_across_sweep_sizes() {
    let mut cfg = small_world();
    let sizes = [0usize, 100, 1000, 5000];
    let mut sets = Vec::new();
    for &n in &sizes {
        cfg.quotas.stage2 = n;
        let world = World::new(&cfg).unwrap();
        let b = build_corpora(&world).unwrap();
        assert!(b.stage2.values().all(|v| v.len() == n));
        sets.push(b.stage2["l2"].clone());
    }
    for w in sets.windows(2) {
        assert_eq!(&w[1][..w[0].len()], &w[0][..]);
    }
}

#[test]
fn lm_vocab_hides_low_tier_words() {
    let world = World::new(&small_world()).unwrap();
    let low = world.language("l1").unwrap();
    let high = world.language("h1").unwrap();
    let s = gen_sentence(&mut RngStream::new(3));
    let ids = world.lm_ids(&low.render(&s).unwrap());
    for (t, id) in s.iter().zip(&ids) {
        if tasks::is_content(t) {
            assert_eq!(*id, special::UNK);
        } else {
            assert_ne!(*id, special::UNK);
        }
    }
    assert!(world.lm_ids(&high.render(&s).unwrap()).iter().all(|&i| i != special::UNK));
    for lang in &world.languages {
        assert!(world.enc_ids(&lang.render(&s).unwrap()).is_ok());
    }
    assert_eq!(world.enc_vocab.len(), 4 + invariant_tokens().len() + 7 * CONTENT_SIZE);
    assert_eq!(world.lm_vocab.len(), 4 + invariant_tokens().len() + 4 * CONTENT_SIZE);
}

#[test]
fn corpus_files_round_trip() {
    let world = World::new(&small_world()).unwrap();
    let bundle = build_corpora(&world).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bundle.write(&world, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("eval.tsv")).unwrap();
    let parsed = parse_examples(&text).unwrap();
    let all: Vec<TaskExample> = bundle.eval.values().flatten().cloned().collect();
    assert_eq!(parsed, all);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["counts"]["eval"]["l3"], 40);
    assert!(parse_examples("en\tmath\tonly three").is_err());
}

#[test]
fn invalid_world_configs_are_rejected() {
    let mut cfg = WorldConfig::default();
    cfg.languages.push(LanguageSpec { code: "en".into(), tier: Tier::Low });
    assert!(World::new(&cfg).is_err());
    let mut cfg = WorldConfig::default();
    cfg.tasks.difficulty = 4;
    assert!(World::new(&cfg).is_err());
}
