mod common;

use common::{fixture, labeled, model};
use jala_core::backbone::{mcp_loss, sample_hybrid_mask, MaskPlan};
use jala_core::backend::{nn, seeded_rng, Graph, ParamStore, Tensor};
use jala_core::eval::{evaluate_model, mde, mpjpe, mwte, pa_mpjpe};
use jala_core::flow::noise_action;
use jala_core::motion::{format_stream, grvq_quantize, ChunkLayout, Codebook, CodebookPart, HandSide, PoseFrame, TokenChunk, Vocab};
use jala_core::perceiver::decoupled_ema_update;
use jala_core::training::{clip_global_norm, global_norm, init_model, lr_schedule, pretrain_step, warmup_steps, AdamW, PretrainState, Prepared};
use jala_core::world::{Split, World, WorldConfig};
use proptest::prelude::*;

/// Replaces every motion id of chunk `index` with another id of the same part.
fn perturb_chunk(p: &Prepared, index: usize, shift: u32) -> jala_core::motion::TokenStream {
    let mut s = p.stream.clone();
    let span = s.chunk_spans().unwrap().into_iter().find(|c| c.index == index).unwrap();
    for pos in span.slots() {
        let part = s.tags[pos].part.unwrap();
        let (lo, hi) = s.vocab.part_range(part);
        s.ids[pos] = lo + (s.ids[pos] - lo + shift) % (hi - lo);
    }
    s
}

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |d| Tensor::from_rows(rows, cols, d))
}

fn pose_seq(frames: usize) -> impl Strategy<Value = Vec<PoseFrame>> {
    prop::collection::vec(
        (prop::array::uniform3(-1.0f64..1.0), prop::array::uniform3(-1.5f64..1.5), prop::collection::vec(-1.0f64..1.0, 4)),
        frames,
    )
    .prop_map(|v| v.into_iter().map(|(t, r, f)| PoseFrame { wrist_translation: t, wrist_rotation: r, finger_joints: f }).collect())
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(t in tensor(3, 7)) {
        let mut g = Graph::new();
        let x = g.constant(t);
        let s = g.softmax_rows(x);
        let out = g.value(s);
        for r in 0..out.rows() {
            prop_assert!(out.row(r).iter().all(|&v| v >= 0.0));
            prop_assert!((out.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(t in tensor(4, 6)) {
        let var0: f64 = (0..4).map(|r| {
            let row = t.row(r);
            let m = row.iter().sum::<f64>() / 6.0;
            row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 6.0
        }).fold(f64::INFINITY, f64::min);
        prop_assume!(var0 > 0.1);
        let mut g = Graph::new();
        let x = g.constant(t);
        let n = g.layer_norm_rows(x);
        let out = g.value(n);
        for r in 0..4 {
            let row = out.row(r);
            let m = row.iter().sum::<f64>() / 6.0;
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 6.0;
            prop_assert!(m.abs() < 1e-5);
            prop_assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn grvq_residual_never_grows_with_levels(
        values in prop::collection::vec(-1.0f64..1.0, 2 * 4 * 8 * 2),
        x in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let mut cb = Codebook::from_values(CodebookPart::Wrist, 2, 4, 8, 4, values).unwrap();
        for g in 0..2 {
            for l in 0..4 {
                cb.codeword_mut(g, l, 0).fill(0.0);
            }
        }
        let mut prev = f64::INFINITY;
        for r in 1..=4 {
            let q = grvq_quantize(&x, &cb.truncated(r).unwrap()).unwrap();
            prop_assert!(q.residual_norm <= prev + 1e-12);
            prev = q.residual_norm;
        }
    }

    #[test]
    fn format_stream_round_trips_chunk_structure(
        instr in prop::collection::vec(0u32..4, 1..4),
        chunks in prop::collection::vec((prop::collection::vec(0u32..8, 2), prop::collection::vec(0u32..8, 3)), 0..5),
        bimanual in any::<bool>(),
    ) {
        let vocab = Vocab { instruction_ids: 4, codes_per_part: 8 };
        let tcs: Vec<TokenChunk> = chunks.iter().map(|(w, f)| TokenChunk { hand_side: HandSide::Right, wrist_ids: w.clone(), finger_ids: f.clone() }).collect();
        let layout = if bimanual {
            let left: Vec<TokenChunk> = tcs.iter().cloned().map(|mut c| { c.hand_side = HandSide::Left; c }).collect();
            ChunkLayout::Bimanual { left, right: tcs.clone() }
        } else {
            ChunkLayout::Single(tcs.clone())
        };
        let s = format_stream(vocab, &instr, &[Vocab::VIS], &layout).unwrap();
        let spans = s.chunk_spans().unwrap();
        let per = if bimanual { 2 } else { 1 };
        prop_assert_eq!(spans.len(), tcs.len() * per);
        for (n, span) in spans.iter().enumerate() {
            prop_assert_eq!(span.index, n + 1);
            prop_assert_eq!(span.close - span.open - 1, 5);
            let expected = &tcs[n / per];
            let got = s.chunk_tokens(span.index).unwrap();
            prop_assert_eq!(&got.wrist_ids, &expected.wrist_ids);
            prop_assert_eq!(&got.finger_ids, &expected.finger_ids);
        }
        prop_assert_eq!(s.prefix_len(), instr.len() + 1);
    }

    #[test]
    fn noise_action_is_identity_when_noise_equals_data(a in tensor(4, 3), tau in 0.0f64..=1.0) {
        let out = noise_action(&a, tau, &a).unwrap();
        for (x, y) in out.data().iter().zip(a.data()) {
            prop_assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
    }

    #[test]
    fn clipped_gradients_respect_the_bound(a in tensor(3, 3), b in tensor(2, 5), scale in 0.0f64..100.0) {
        let mut g1 = std::collections::BTreeMap::from([("a".to_string(), a.map(|v| v * scale))]);
        let mut g2 = std::collections::BTreeMap::from([("b".to_string(), b.map(|v| v * scale))]);
        let before = global_norm(g1.values().chain(g2.values()));
        let reported = clip_global_norm(&mut [&mut g1, &mut g2], 1.0);
        prop_assert_eq!(reported, before);
        prop_assert!(global_norm(g1.values().chain(g2.values())) <= 1.0 + 1e-6);
    }

    #[test]
    fn weight_decay_bypasses_the_moments(p0 in -10.0f64..10.0, lr in 1e-5f64..1e-1, wd in 0.0f64..0.5) {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(p0));
        let grads = std::collections::BTreeMap::from([("w".to_string(), Tensor::scalar(0.0))]);
        let mut opt = AdamW::new(0.9, 0.95, wd);
        opt.begin_step();
        opt.update("s", &mut store, &grads, lr);
        prop_assert!((store.get("w").unwrap().item() - p0 * (1.0 - lr * wd)).abs() < 1e-12);
    }

    #[test]
    fn lr_schedule_is_lipschitz(total in 2u64..3000, base in 1e-6f64..1.0, frac in 0.0f64..0.5) {
        let w = warmup_steps(total, frac).max(1) as f64;
        let bound = base * (1.0 / w + std::f64::consts::PI / total as f64) + 1e-15;
        for step in 0..total {
            let d = (lr_schedule(step + 1, total, base, frac) - lr_schedule(step, total, base, frac)).abs();
            prop_assert!(d <= bound, "step {} jump {} bound {}", step, d, bound);
        }
    }

    #[test]
    fn pa_mpjpe_never_exceeds_mpjpe(pred in pose_seq(5), gt in pose_seq(5)) {
        prop_assert!(pa_mpjpe(&pred, &gt).unwrap() <= mpjpe(&pred, &gt).unwrap() + 1e-9);
    }

    #[test]
    fn metrics_are_nonnegative_and_vanish_on_identity(pred in pose_seq(4), gt in pose_seq(4)) {
        for f in [mpjpe, pa_mpjpe, mwte, mde] {
            prop_assert!(f(&pred, &gt).unwrap() >= 0.0);
            prop_assert!(f(&gt, &gt).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn mde_ignores_constant_offsets(pred in pose_seq(6), gt in pose_seq(6), shift in prop::array::uniform3(-3.0f64..3.0)) {
        let offset = |seq: &[PoseFrame]| -> Vec<PoseFrame> {
            seq.iter().cloned().map(|mut f| {
                for (t, s) in f.wrist_translation.iter_mut().zip(shift) {
                    *t += s;
                }
                f
            }).collect()
        };
        let base = mde(&pred, &gt).unwrap();
        prop_assert!((mde(&offset(&pred), &gt).unwrap() - base).abs() < 1e-9);
        prop_assert!((mde(&pred, &offset(&gt)).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn episodes_are_a_pure_function_of_the_seed(seed in any::<u64>(), labeled in any::<bool>()) {
        let world = World::new(WorldConfig::default()).unwrap();
        for split in [Split::Lab, Split::Wild, Split::Robot] {
            prop_assert_eq!(world.episode(seed, split, labeled), world.episode(seed, split, labeled));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tokenization_is_pure(i in 0usize..4) {
        let f = fixture();
        for c in &labeled(i).chunks {
            prop_assert_eq!(f.tokenizer.tokenize_chunk(c).unwrap(), f.tokenizer.tokenize_chunk(c).unwrap());
        }
    }

    #[test]
    fn later_chunks_never_affect_earlier_positions(seed in 0u64..1000, i in 0usize..4, j in 0usize..8, shift in 1u32..7) {
        let m = model(seed);
        let p = labeled(i);
        let z = m.state_latents(p).unwrap();
        let j = 2 + j % (p.stream.num_chunks() - 1);
        let altered = perturb_chunk(p, j, shift);
        let (l0, h0) = m.score(p, &p.stream, &MaskPlan::visible(&p.stream), &z).unwrap();
        let (l1, h1) = m.score(p, &altered, &MaskPlan::visible(&altered), &z).unwrap();
        let mut hrow = 0;
        for (pos, tag) in p.stream.tags.iter().enumerate() {
            let earlier = tag.chunk.is_none_or(|c| c < j);
            if earlier {
                prop_assert_eq!(l0.row(pos), l1.row(pos));
            }
            if tag.is_motion_slot() {
                if earlier {
                    prop_assert_eq!(h0.row(hrow), h1.row(hrow));
                }
                hrow += 1;
            }
        }
    }

    #[test]
    fn masked_positions_hide_their_true_ids(seed in 0u64..1000, i in 0usize..4, j in 0usize..8, shift in 1u32..7) {
        let m = model(seed);
        let p = labeled(i);
        let z = m.state_latents(p).unwrap();
        let j = 1 + j % p.stream.num_chunks();
        let altered = perturb_chunk(p, j, shift);
        prop_assert_ne!(&altered.ids, &p.stream.ids);
        let plan = MaskPlan::generate_chunk(&p.stream, j);
        let (l0, h0) = m.score(p, &p.stream, &plan, &z).unwrap();
        let (l1, h1) = m.score(p, &altered, &plan, &z).unwrap();
        prop_assert_eq!(l0, l1);
        prop_assert_eq!(h0, h1);
    }

    #[test]
    fn last_layer_embedding_feeds_the_head(seed in 0u64..1000, i in 0usize..4) {
        let f = fixture();
        let mut cfg = f.config.clone();
        cfg.backbone.align_layer = cfg.backbone.layers;
        let m = init_model(&cfg, &f.layout, seed).unwrap();
        let p = labeled(i);
        let z = m.state_latents(p).unwrap();
        let (logits, h) = m.score(p, &p.stream, &MaskPlan::visible(&p.stream), &z).unwrap();
        let mut g = Graph::new();
        let b = m.backbone.params.bind(&mut g, |_| false);
        let hv = g.constant(h);
        let n = nn::layer_norm(&mut g, &b, "ln_f", hv);
        let out = nn::linear(&mut g, &b, "head", n);
        for (row, &pos) in p.stream.motion_positions().iter().enumerate() {
            for (a, e) in g.value(out).row(row).iter().zip(logits.row(pos)) {
                prop_assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mcp_loss_is_nonnegative(seed in 0u64..1000, i in 0usize..4) {
        let m = model(seed);
        let p = labeled(i);
        let plan = sample_hybrid_mask(&p.stream, &mut seeded_rng(seed)).unwrap();
        let z = m.state_latents(p).unwrap();
        let (logits, _) = m.score(p, &p.stream, &plan, &z).unwrap();
        let mut g = Graph::new();
        let lv = g.constant(logits);
        let loss = mcp_loss(&mut g, lv, &p.stream, &plan).unwrap();
        prop_assert!(g.value(loss).item() >= 0.0);
    }

    #[test]
    fn ema_conserves_shape_and_untouched_halves(seed in 0u64..1000, other in 1000u64..2000, alpha in 0.0f64..0.999) {
        let (a, b) = (model(seed), model(other));
        let (mut lap, mut lsp) = (a.lap.clone(), b.lsp.clone());
        decoupled_ema_update(&mut lap, &mut lsp, alpha).unwrap();
        prop_assert!(lap.isomorphic(&lsp));
        for (name, t) in lap.iter() {
            if jala_core::perceiver::is_query(name) {
                prop_assert_eq!(t, a.lap.get(name).unwrap());
            }
        }
        for (name, t) in lsp.iter() {
            if !jala_core::perceiver::is_query(name) {
                prop_assert_eq!(t, b.lsp.get(name).unwrap());
            }
        }
    }

    #[test]
    fn ema_fixed_point_is_identity(seed in 0u64..1000, alpha in 0.0f64..0.999) {
        let m = model(seed);
        let (mut lap, mut lsp) = (m.lap.clone(), m.lap.clone());
        decoupled_ema_update(&mut lap, &mut lsp, alpha).unwrap();
        // a·x + (1 − a)·x is x up to rounding
        for store in [&lap, &lsp] {
            for (name, t) in store.iter() {
                for (x, y) in t.data().iter().zip(m.lap.get(name).unwrap().data()) {
                    prop_assert!((x - y).abs() <= 4.0 * f64::EPSILON * y.abs());
                }
            }
        }
    }

    #[test]
    fn reported_loss_is_the_weighted_sum(seed in 0u64..1000) {
        let f = fixture();
        let cfg = f.config.pretrain.clone();
        let mut state = PretrainState::new(model(seed), &cfg);
        let batch: Vec<&Prepared> = f.episodes.iter().collect();
        let m = pretrain_step(&mut state, &batch, &cfg).unwrap();
        let recomputed = m.samples.iter().map(|s| s.mcp.unwrap_or(0.0) + cfg.lambda * s.align).sum::<f64>() / m.samples.len() as f64;
        prop_assert!((m.total_loss - recomputed).abs() < 1e-10);
        prop_assert_eq!(m.samples.iter().filter(|s| s.labeled).count(), batch.iter().filter(|p| p.labeled).count());
    }
}

#[test]
fn eval_is_deterministic() {
    let f = fixture();
    let m = model(3);
    let eps: Vec<Prepared> = f.episodes.iter().filter(|p| p.labeled).take(2).cloned().collect();
    let run = || evaluate_model(&m, &f.layout, &f.config.decode, &eps, &f.tokenizer, &f.config.eval, "lab_eval").unwrap().to_csv();
    assert_eq!(run(), run());
}
