mod common;

use common::{fixture, labeled, model};
use jala_core::backbone::{attention_allowed, decode_chunk_with, majority_vote, mcp_loss, ChunkRole, DecodeConfig, MaskPlan};
use jala_core::backend::{seeded_rng, Graph, Tensor};
use jala_core::flow::{fm_loss, integrate, noise_action, FieldSign};
use jala_core::motion::{format_stream, ChunkLayout, HandSide, MotionPart, TokenChunk, TokenStream, Vocab};
use jala_core::perceiver::align_loss;
use proptest::prelude::*;

const VOCAB: Vocab = Vocab { instruction_ids: 3, codes_per_part: 6 };

fn stream(chunks: usize, wrist: usize, finger: usize) -> TokenStream {
    let tcs: Vec<TokenChunk> = (0..chunks)
        .map(|c| TokenChunk { wrist_ids: vec![c as u32 % 6; wrist], finger_ids: vec![(c as u32 + 1) % 6; finger], hand_side: HandSide::Right })
        .collect();
    format_stream(VOCAB, &[0, 2], &[Vocab::VIS], &ChunkLayout::Single(tcs)).unwrap()
}

/// A labeled plan masking exactly the motion slots of chunk `index`.
fn target_plan(s: &TokenStream, index: usize) -> MaskPlan {
    let span = s.chunk_spans().unwrap().into_iter().find(|c| c.index == index).unwrap();
    let mut plan = MaskPlan::visible(s);
    plan.labeled = true;
    plan.target_chunk = Some(index);
    for p in span.slots() {
        plan.masked[p] = true;
    }
    plan.roles = (1..=s.num_chunks()).map(|c| if c == index { ChunkRole::Target } else { ChunkRole::Context }).collect();
    plan
}

/// Logits whose softmax puts probability `p_true` on the stream's own id at
/// every position and spreads the rest uniformly.
fn logits_with_true_prob(s: &TokenStream, p_true: &[f64]) -> Tensor {
    let v = VOCAB.size() as usize;
    let mut t = Tensor::zeros(s.len(), v);
    for (pos, &id) in s.ids.iter().enumerate() {
        let p = p_true[pos % p_true.len()];
        let rest = ((1.0 - p) / (v - 1) as f64).ln();
        for (k, x) in t.row_mut(pos).iter_mut().enumerate() {
            *x = if k == id as usize { p.ln() } else { rest };
        }
    }
    t
}

fn loss_of(s: &TokenStream, plan: &MaskPlan, logits: Tensor) -> f64 {
    let mut g = Graph::new();
    let l = g.constant(logits);
    let loss = mcp_loss(&mut g, l, s, plan).unwrap();
    g.value(loss).item()
}

proptest! {
    #[test]
    fn attention_is_block_lower_triangular(n in 0usize..6, w in 1usize..3, f in 1usize..3) {
        let s = stream(n, w, f);
        let allowed = attention_allowed(&s).unwrap();
        let chunk = |p: usize| s.tags[p].chunk;
        for q in 0..s.len() {
            for k in 0..s.len() {
                let expected = match (chunk(q), chunk(k)) {
                    (_, None) => true,
                    (None, Some(_)) => false,
                    (Some(a), Some(b)) => b <= a,
                };
                prop_assert_eq!(allowed[q][k], expected);
            }
        }
    }
}

#[test]
fn second_chunk_sees_first_and_itself() {
    let s = stream(2, 2, 2);
    let allowed = attention_allowed(&s).unwrap();
    let spans = s.chunk_spans().unwrap();
    for q in spans[1].open..=spans[1].close {
        assert!((spans[0].open..=spans[1].close).all(|k| allowed[q][k]));
    }
    for q in spans[0].open..=spans[0].close {
        assert!((spans[1].open..=spans[1].close).all(|k| !allowed[q][k]));
    }
}

#[test]
fn mcp_loss_reference_values() {
    let s = stream(1, 1, 1);
    let plan = target_plan(&s, 1);
    let v = VOCAB.size() as f64;
    assert!((loss_of(&s, &plan, Tensor::zeros(s.len(), VOCAB.size() as usize)) - v.ln()).abs() < 1e-12);

    // wrist slot gets 0.5 on its true id, finger slot 0.25
    let span = &s.chunk_spans().unwrap()[0];
    let mut p = vec![0.9; s.len()];
    p[span.open + 1] = 0.5;
    p[span.open + 2] = 0.25;
    let one = logits_with_true_prob(&s, &p);
    let expected = -(0.5f64.ln() + 0.25f64.ln()) / 2.0;
    assert!((loss_of(&s, &plan, one) - expected).abs() < 1e-12);
    assert!((expected - 1.0397).abs() < 1e-4);

    let mut sure = Tensor::zeros(s.len(), VOCAB.size() as usize);
    for (pos, &id) in s.ids.iter().enumerate() {
        sure.row_mut(pos)[id as usize] = 1e3;
    }
    assert_eq!(loss_of(&s, &plan, sure), 0.0);
}

#[test]
fn single_run_vote_is_the_run() {
    let run = vec![3, 1, 4, 1, 5];
    assert_eq!(majority_vote(std::slice::from_ref(&run)), run);
}

#[test]
fn one_hot_logits_decode_to_their_argmax_in_one_pass() {
    let mut s = stream(1, 2, 2);
    s.push_masked_chunk(4, 4, HandSide::Right);
    let target = s.chunk_spans().unwrap().last().unwrap().clone();
    let mut logits = Tensor::zeros(s.len(), VOCAB.size() as usize);
    let mut expected = (Vec::new(), Vec::new());
    for (k, pos) in target.slots().enumerate() {
        let part = s.tags[pos].part.unwrap();
        let (lo, _) = VOCAB.part_range(part);
        let code = (k as u32 * 5 + 2) % 6;
        logits.row_mut(pos)[(lo + code) as usize] = 10.0;
        match part {
            MotionPart::Wrist => expected.0.push(code),
            MotionPart::Finger => expected.1.push(code),
        }
    }
    for step_fraction in [1.0, 0.25, 0.125] {
        let cfg = DecodeConfig { step_fraction, runs: 3, selection_noise: 1.0 };
        let mut calls = 0;
        let got = decode_chunk_with(&s, &cfg, &mut seeded_rng(9), |_, _| {
            calls += 1;
            Ok(logits.clone())
        })
        .unwrap();
        assert_eq!((got.wrist_ids, got.finger_ids), expected);
        assert_eq!(calls, cfg.passes() * cfg.runs);
    }
}

#[test]
fn embedding_shape_is_chunks_by_slots_by_width() {
    let m = model(1);
    let p = labeled(0);
    let z = m.state_latents(p).unwrap();
    let (logits, h) = m.score(p, &p.stream, &MaskPlan::visible(&p.stream), &z).unwrap();
    let f = fixture();
    assert_eq!(logits.shape(), [p.stream.len(), p.stream.vocab.size() as usize]);
    assert_eq!(h.shape(), [p.stream.num_chunks() * f.layout.slots_per_chunk(), f.config.backbone.d_model]);
}

#[test]
fn latents_are_deterministic_and_shaped() {
    let m = model(2);
    let p = labeled(1);
    let f = fixture();
    let a = m.action_latents(p, 1).unwrap();
    assert_eq!(a, m.action_latents(p, 1).unwrap());
    assert_eq!(a.shape(), [f.layout.slots_per_chunk(), f.config.backbone.d_model]);
    let zs = m.state_latents(p).unwrap();
    let same = m.arch.latents(&m.lsp, &p.first_frame, &p.first_frame, p.hand).unwrap();
    assert_eq!(zs, same);
}

#[test]
fn frame_order_matters_for_action_latents() {
    let m = model(3);
    let mut total = 0.0;
    for i in 0..4 {
        let p = labeled(i);
        for (a, b) in &p.boundaries {
            let fwd = m.arch.latents(&m.lap, a, b, p.hand).unwrap();
            let rev = m.arch.latents(&m.lap, b, a, p.hand).unwrap();
            total += fwd.data().iter().zip(rev.data()).map(|(x, y)| (x - y).abs()).sum::<f64>();
        }
    }
    assert!(total > 0.0);
}

#[test]
fn state_latents_reach_the_logits() {
    let m = model(4);
    let p = labeled(2);
    let z = m.state_latents(p).unwrap();
    let plan = MaskPlan::visible(&p.stream);
    let (with, _) = m.score(p, &p.stream, &plan, &z).unwrap();
    let blank = Tensor::zeros(z.rows(), z.cols());
    let (without, _) = m.score(p, &p.stream, &plan, &blank).unwrap();
    assert_ne!(with, without);
}

#[test]
fn align_gradient_is_sign_over_count() {
    let (k, d) = (3, 4);
    let mut rng = seeded_rng(5);
    let h0 = Tensor::from_rows(k, d, rng.normal_vec(k * d, 1.0));
    let z0 = Tensor::from_rows(k, d, rng.normal_vec(k * d, 1.0));
    let mut g = Graph::new();
    let h = g.param(h0.clone());
    let z = g.constant(z0.clone());
    let loss = align_loss(&mut g, h, z).unwrap();
    let grads = g.backward(loss);
    let gh = grads.get(h).unwrap();
    for ((gv, hv), zv) in gh.data().iter().zip(h0.data()).zip(z0.data()) {
        assert_eq!(*gv, (hv - zv).signum() / (k * d) as f64);
    }
    let mut g = Graph::new();
    let (a, b) = (g.constant(h0.clone()), g.constant(h0));
    let same = align_loss(&mut g, a, b).unwrap();
    assert_eq!(g.value(same).item(), 0.0);
}

#[test]
fn flow_reference_values() {
    let a = Tensor::row_vector(vec![4.0]);
    assert_eq!(noise_action(&a, 0.25, &Tensor::row_vector(vec![0.0])).unwrap().item(), 1.0);

    let mut rng = seeded_rng(6);
    let a = Tensor::from_rows(3, 2, rng.normal_vec(6, 1.0));
    let eps = Tensor::from_rows(3, 2, rng.normal_vec(6, 1.0));
    let exact = Tensor::from_rows(3, 2, eps.data().iter().zip(a.data()).map(|(e, x)| e - x).collect());
    let mut g = Graph::new();
    let v = g.constant(exact.clone());
    let loss = fm_loss(&mut g, v, &a, &eps, FieldSign::NoiseMinusData).unwrap();
    assert_eq!(g.value(loss).item(), 0.0);

    let one = integrate(eps.clone(), 1, FieldSign::NoiseMinusData, |_, _| Ok(exact.clone())).unwrap();
    for (x, y) in one.data().iter().zip(a.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}
