use proptest::prelude::*;

use super::gradcase::check_composed_loss;
use super::*;
use crate::tensorcore::{AdamHyper, AdamState, Graph, ParamStore, RngStream, Tensor};

fn enc_dims() -> TransformerDims {
    TransformerDims { d_model: 16, layers: 2, heads: 4, ff_mult: 2, max_positions: 32 }
}

fn lm_dims() -> TransformerDims {
    TransformerDims { d_model: 24, layers: 2, heads: 4, ff_mult: 2, max_positions: 48 }
}

const EV: usize = 30;
const LV: usize = 20;

fn frozen_pair(seed: u64) -> (EncoderParams, LmParams) {
    let rng = RngStream::new(seed);
    let mut enc = EncoderParams::init(enc_dims(), EV, &mut rng.fork("enc")).unwrap();
    let mut lm = LmParams::init(lm_dims(), LV, &mut rng.fork("lm")).unwrap();
    enc.store.set_trainable(false);
    lm.store.set_trainable(false);
    (enc, lm)
}

fn bridge(lm: &LmParams, variant: MappingVariant, seed: u64) -> BridgeParams {
    BridgeParams::init(variant, enc_dims().d_model, lm, &mut RngStream::new(seed).fork("bridge")).unwrap()
}

fn llm_rows(n: usize, d: usize, seed: u64, role: Role) -> HiddenSeq {
    let mut rng = RngStream::new(seed);
    let data = (0..n * d).map(|_| rng.normal() as f32).collect();
    HiddenSeq::new(Tensor::new(vec![n, d], data).unwrap(), Space::Llm, role).unwrap()
}

#[test]
fn encode_shape_and_determinism() {
    let (enc, _) = frozen_pair(1);
    let q = [4, 5, 6, 7, 8, 9, 10];
    let a = enc.encode(&q).unwrap();
    assert_eq!(a.values.shape(), &[7, 16]);
    assert_eq!(a.role, Role::X);
    assert_eq!(a.space, Space::Encoder);
    let b = enc.encode(&q).unwrap();
    assert!(a.values.bit_eq(&b.values));
}

#[test]
fn padding_cannot_influence_real_rows() {
    let (enc, _) = frozen_pair(2);
    let q = vec![4usize, 9, 12, 5];
    let mut padded = q.clone();
    padded.extend([special::PAD; 3]);
    let out = enc.encode_batch(&[&q, &padded]).unwrap();
    let a = out[0].values.data();
    let b = &out[1].values.data()[..a.len()];
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
    assert!(diff < 1e-5, "{diff}");
}

#[test]
fn encode_rejects_bad_queries() {
    let (enc, _) = frozen_pair(3);
    assert!(matches!(enc.encode(&[]), Err(NetError::Empty(_))));
    assert!(matches!(enc.encode(&[4, EV]), Err(NetError::OutOfVocab { id: EV, .. })));
}

#[test]
fn identity_linear_mapping_is_identity() {
    let dims = TransformerDims { d_model: 16, ..lm_dims() };
    let lm = LmParams::init(dims, LV, &mut RngStream::new(4)).unwrap();
    let mut b = BridgeParams::init(MappingVariant::Linear, 16, &lm, &mut RngStream::new(5)).unwrap();
    b.store.get_mut("bridge.map.0.w").unwrap().tensor = Tensor::eye(16);
    let (enc, _) = frozen_pair(6);
    let x = enc.encode(&[4, 5, 6]).unwrap();
    let y = b.map_states(&x).unwrap();
    assert!(y.values.bit_eq(&x.values));
    assert_eq!(y.role, Role::Mapped);
}

#[test]
fn mapping_shapes_and_tags() {
    let (enc, lm) = frozen_pair(7);
    let x = enc.encode(&[4, 5, 6, 7, 8]).unwrap();
    for v in MappingVariant::ALL {
        let b = bridge(&lm, v, 8);
        let y = b.map_states(&x).unwrap();
        assert_eq!(y.values.shape(), &[5, 24]);
        assert!(matches!(b.map_states(&y), Err(NetError::WrongTag { .. })));
    }
    assert_eq!(mapping_hidden(64, 96), 80);
}

#[test]
fn embed_is_table_lookup() {
    let (_, lm) = frozen_pair(9);
    let t = lm.embed(&[special::UNK, special::UNK]).unwrap();
    let table = &lm.store.get("lm.tok_emb").unwrap().tensor;
    assert_eq!(t.values.row(0), table.row(special::UNK));
    assert_eq!(t.values.row(1), table.row(special::UNK));
    let ids = [7usize, 3, 11];
    let t = lm.embed(&ids).unwrap();
    assert_eq!(t.values.shape(), &[3, 24]);
    for (r, &id) in ids.iter().enumerate() {
        for c in 0..24 {
            assert_eq!(t.values.data()[r * 24 + c], table.data()[id * 24 + c]);
        }
    }
    assert!(matches!(lm.embed(&[]), Err(NetError::Empty(_))));
}

#[test]
fn composition_lengths_and_order() {
    let (_, lm) = frozen_pair(10);
    let b = bridge(&lm, MappingVariant::Mlp2, 11);
    let x = llm_rows(7, 24, 1, Role::Mapped);
    let t = llm_rows(7, 24, 2, Role::Native);
    let aug = compose_augmented(&x, &t, &b, &lm).unwrap();
    assert_eq!(aug.len(), 16);
    assert_eq!(aug.layout.get(SegmentKind::Sep).unwrap().start, 8);
    assert_eq!(aug.values.row(8), b.sep_row().unwrap());
    assert_eq!(aug.values.row(0), lm.embedding_row(special::BOS).unwrap());
    let rep = compose_replacement(&x, &b, &lm).unwrap();
    assert_eq!(rep.len(), 9);
    assert_eq!(rep.mode, Mode::Replacement);

    let x1 = llm_rows(1, 24, 3, Role::Mapped);
    let t1 = llm_rows(1, 24, 4, Role::Native);
    let small = compose_augmented(&x1, &t1, &b, &lm).unwrap();
    assert_eq!(small.len(), 4);
    assert_eq!(small.layout.kinds(), vec![SegmentKind::Bos, SegmentKind::Mapped, SegmentKind::Sep, SegmentKind::Native]);
}

#[test]
fn composition_errors() {
    let (_, lm) = frozen_pair(12);
    let b = bridge(&lm, MappingVariant::Linear, 13);
    let x = llm_rows(3, 24, 1, Role::Mapped);
    let t = llm_rows(3, 24, 2, Role::Native);
    assert!(matches!(compose_augmented(&t, &x, &b, &lm), Err(NetError::WrongTag { .. })));
    let long = llm_rows(47, 24, 3, Role::Native);
    assert!(matches!(compose_augmented(&x, &long, &b, &lm), Err(NetError::TooLong { .. })));
    let empty = Tensor::new(vec![0, 24], vec![]).unwrap();
    assert!(HiddenSeq::new(empty, Space::Llm, Role::Mapped).is_err());
    let enc_space = Tensor::zeros(vec![2, 24]);
    assert!(HiddenSeq::new(enc_space, Space::Encoder, Role::Mapped).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn length_law_and_prefix_agreement(l_x in 1usize..20, l_t in 1usize..20, seed in 0u64..1000) {
        let (_, lm) = frozen_pair(14);
        let b = bridge(&lm, MappingVariant::Mlp2, 15);
        let x = llm_rows(l_x, 24, seed, Role::Mapped);
        let t = llm_rows(l_t, 24, seed + 1, Role::Native);
        let aug = compose_augmented(&x, &t, &b, &lm).unwrap();
        let rep = compose_replacement(&x, &b, &lm).unwrap();
        prop_assert_eq!(aug.len(), 1 + l_x + 1 + l_t);
        prop_assert_eq!(aug.layout.len(), aug.len());
        prop_assert_eq!(rep.len(), l_x + 2);
        let n = (l_x + 2) * 24;
        prop_assert!(aug.values.data()[..n].iter().zip(rep.values.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn mapping_is_per_position(len in 1usize..12, seed in 0u64..1000) {
        let (enc, lm) = frozen_pair(16);
        let b = bridge(&lm, MappingVariant::Mlp3, 17);
        let mut rng = RngStream::new(seed);
        let q: Vec<usize> = (0..len).map(|_| special::COUNT + rng.below(EV - special::COUNT)).collect();
        let x = enc.encode(&q).unwrap();
        let perm = rng.permutation(len);
        let mut rows = Vec::new();
        for &p in &perm {
            rows.extend_from_slice(x.values.row(p));
        }
        let xp = HiddenSeq::new(Tensor::new(vec![len, 16], rows).unwrap(), Space::Encoder, Role::X).unwrap();
        let y = b.map_states(&x).unwrap();
        let yp = b.map_states(&xp).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(yp.values.row(i), y.values.row(p));
        }
    }
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    let (_, mut lm) = frozen_pair(18);
    for name in ["lm.head.w", "lm.head.b"] {
        lm.store.get_mut(name).unwrap().tensor.data_mut().fill(0.0);
    }
    let b = bridge(&lm, MappingVariant::Mlp2, 19);
    let x = llm_rows(3, 24, 5, Role::Mapped);
    let prefix = compose_replacement(&x, &b, &lm).unwrap();
    let loss = lm_loss(&prefix, &[4, 5, 6, 7], &lm).unwrap();
    assert!((loss as f64 - (LV as f64).ln()).abs() < 1e-5, "{loss}");
    assert!(matches!(lm_loss(&prefix, &[], &lm), Err(NetError::Empty(_))));
    assert!(matches!(lm_loss(&prefix, &[4; 44], &lm), Err(NetError::TooLong { .. })));
}

/// One bridge-stage batch: encoder states mapped and composed with T.
fn stage_loss(g: &mut Graph, enc: &EncoderParams, lm: &LmParams, b: &BridgeParams, mode: Mode) -> crate::tensorcore::Var {
    let qs: [&[usize]; 2] = [&[4, 5, 6], &[7, 8, 9, 10, 11]];
    let natives: [&[usize]; 2] = [&[4, 5, 6], &[7, 8, 9, 10, 11]];
    let targets: [&[usize]; 2] = [&[12, 13, special::EOS], &[14, special::EOS]];
    let (x, segs) = enc.forward(g, &qs).unwrap();
    let mapped = b.map(g, x).unwrap();
    let sep = b.sep(g).unwrap();
    let items: Vec<TrainItem> = (0..2)
        .map(|i| TrainItem {
            prefix: Prefix { mapped: Some(segs[i]), native: if mode == Mode::Augmented { natives[i] } else { &[] } },
            target: targets[i],
        })
        .collect();
    composed_loss(g, lm, Some(BridgeRows { mapped, sep }), &items).unwrap()
}

#[test]
fn gradients_reach_only_the_bridge() {
    let (enc, lm) = frozen_pair(20);
    for mode in [Mode::Replacement, Mode::Augmented] {
        let b = bridge(&lm, MappingVariant::Mlp2, 21);
        let mut g = Graph::new();
        let loss = stage_loss(&mut g, &enc, &lm, &b, mode);
        let grads = g.backward(loss).unwrap();
        assert!(!grads.is_empty());
        assert!(grads.keys().all(|k| k.starts_with("bridge.")), "{:?}", grads.keys());
        for name in ["bridge.map.0.w", "bridge.map.1.w", "bridge.sep"] {
            let gsum: f32 = grads[name].data().iter().map(|v| v.abs()).sum();
            assert!(gsum > 0.0, "{name} got zero gradient");
        }
    }
}

#[test]
fn bridge_only_training_reduces_loss_and_leaves_backbones_intact() {
    let (enc, lm) = frozen_pair(22);
    let enc0 = enc.store.clone();
    let lm0 = lm.store.clone();
    let mut b = bridge(&lm, MappingVariant::Mlp2, 23);
    let mut adam = AdamState::new();
    let hyper = AdamHyper::default();
    let mut losses = Vec::new();
    for _ in 0..200 {
        let mut g = Graph::new();
        let loss = stage_loss(&mut g, &enc, &lm, &b, Mode::Augmented);
        losses.push(g.scalar(loss));
        let grads = g.backward(loss).unwrap();
        adam.step(&mut [&mut b.store], &grads, &hyper).unwrap();
    }
    assert!(losses[199] < losses[0], "{} -> {}", losses[0], losses[199]);
    for (i, w) in losses.windows(2).enumerate() {
        assert!(w[1] < w[0], "loss rose at step {}: {} -> {}", i + 1, w[0], w[1]);
    }
    assert!(enc.store.bit_eq(&enc0));
    assert!(lm.store.bit_eq(&lm0));
}

#[test]
fn overfit_then_decode_returns_target() {
    let mut lm = LmParams::init(lm_dims(), LV, &mut RngStream::new(24)).unwrap();
    let native = [5usize, 6, 7];
    let y = [9usize, 4, 11, 8, special::EOS];
    let mut adam = AdamState::new();
    let hyper = AdamHyper::with_lr(3e-3);
    for _ in 0..150 {
        let mut g = Graph::new();
        let item = TrainItem { prefix: Prefix { mapped: None, native: &native }, target: &y };
        let loss = composed_loss(&mut g, &lm, None, &[item]).unwrap();
        let grads = g.backward(loss).unwrap();
        adam.step(&mut [&mut lm.store], &grads, &hyper).unwrap();
    }
    let mut ids = vec![special::BOS];
    ids.extend(native);
    let prefix = lm.embed(&ids).unwrap();
    let out = greedy_decode_batch(&lm, &[&prefix.values], 10).unwrap();
    assert_eq!(out[0], y);
    let again = greedy_decode_batch(&lm, &[&prefix.values], 10).unwrap();
    assert_eq!(out, again);
    let one = greedy_decode_batch(&lm, &[&prefix.values], 1).unwrap();
    assert_eq!(one[0].len(), 1);
}

#[test]
fn decode_of_composed_prefix_is_deterministic() {
    let (_, lm) = frozen_pair(25);
    let b = bridge(&lm, MappingVariant::Mlp2, 26);
    let x = llm_rows(4, 24, 9, Role::Mapped);
    let prefix = compose_replacement(&x, &b, &lm).unwrap();
    let a = greedy_decode(&prefix, &lm, 5).unwrap();
    let c = greedy_decode(&prefix, &lm, 5).unwrap();
    assert_eq!(a, c);
    assert!(!a.is_empty() && a.len() <= 5);
    assert_eq!(greedy_decode(&prefix, &lm, 1).unwrap().len(), 1);
}

#[test]
fn argmax_breaks_ties_low() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax(&[0.0; 5]), 0);
}

#[test]
fn composed_loss_gradients_match_finite_differences() {
    for mode in [Mode::Replacement, Mode::Augmented] {
        for seed in 1..=5 {
            let r = check_composed_loss(mode, MappingVariant::Mlp2, seed).unwrap();
            assert!(r.max_rel_error < 1e-3, "{mode:?} seed {seed}: {r:?}");
            assert!(r.coords_checked > 0);
        }
    }
}

#[test]
fn mapping_variants_grad_check() {
    for v in [MappingVariant::Linear, MappingVariant::Mlp3] {
        let r = check_composed_loss(Mode::Augmented, v, 7).unwrap();
        assert!(r.max_rel_error < 1e-3, "{v}: {r:?}");
    }
}

#[test]
fn translator_learns_a_copy_pair() {
    let rng = RngStream::new(27);
    let mut enc = EncoderParams::init(enc_dims(), EV, &mut rng.fork("enc")).unwrap();
    let mut tr = Translator::init(enc_dims(), EV, &mut rng.fork("tr")).unwrap();
    let src = [4usize, 9, 13];
    let tgt = [13usize, 9, 4, special::EOS];
    let mut adam = AdamState::new();
    let hyper = AdamHyper::with_lr(3e-3);
    for _ in 0..120 {
        let mut g = Graph::new();
        let loss = tr.loss(&mut g, &enc, &[(&src, &tgt)]).unwrap();
        let grads = g.backward(loss).unwrap();
        adam.step(&mut [&mut enc.store, &mut tr.store], &grads, &hyper).unwrap();
    }
    let out = tr.translate(&enc, &[&src], 8).unwrap();
    assert_eq!(out[0], tgt);
}

#[test]
fn checkpoint_roundtrip_and_corruption() {
    let (enc, _) = frozen_pair(28);
    let mut store: ParamStore = enc.store.clone();
    store.get_mut("enc.ln_f.g").unwrap().trainable = true;
    let mut ck = Checkpoint::new("encoder", "abc", store.clone());
    ck.provenance.push(Provenance { stage: "encoder-pretrain".into(), fingerprint: "abc".into() });
    ck.meta = serde_json::json!({"vocab": EV});
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert!(back.params.bit_eq(&store));
    assert_eq!(back, ck);
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Checksum)));
    let mut wrong_version = bytes[..bytes.len() - 32].to_vec();
    wrong_version[8] = 9;
    let digest = <sha2::Sha256 as sha2::Digest>::digest(&wrong_version);
    wrong_version.extend_from_slice(&digest);
    assert!(matches!(Checkpoint::from_bytes(&wrong_version), Err(CheckpointError::Version { found: 9, .. })));
    assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(CheckpointError::BadMagic)));
    ck.provenance.push(Provenance { stage: "again".into(), fingerprint: "abc".into() });
    assert!(ck.to_bytes().is_err());
}
