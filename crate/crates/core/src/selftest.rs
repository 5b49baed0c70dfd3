//! Invariant suite behind the `selftest` command. Each check builds its own
//! tiny fixture and compares against an independent oracle.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::backbone::{chunk_rows, mcp_loss, sample_hybrid_mask, Backbone, BackboneConfig, ChunkRole, MaskPlan, StreamInputs};
use crate::backend::{finite_difference_gradient, max_relative_error, seeded_rng, Graph, ParamStore, Rng, Tensor};
use crate::config::TrainConfig;
use crate::eval::metrics::{procrustes_align, rotation_matrix};
use crate::eval::{mde, mpjpe, mwte, pa_mpjpe, Alignment};
use crate::flow::{fm_loss, integrate, FieldSign, FlowConfig, FlowHead};
use crate::motion::{format_stream, grvq_quantize, ChunkLayout, Codebook, CodebookPart, HandSide, PoseFrame, TokenChunk, TokenStream, Vocab};
use crate::perceiver::{align_loss, decoupled_ema_update, is_query, PerceiverArch, PerceiverConfig};
use crate::training::{pretrain_step, Model, PretrainState, Prepared};
use crate::world::Split;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

const TINY_VOCAB: Vocab = Vocab { instruction_ids: 1, codes_per_part: 2 };

fn tiny_stream(chunks: usize, slots: usize) -> TokenStream {
    let c = TokenChunk { wrist_ids: vec![1; slots], finger_ids: vec![0; slots], hand_side: HandSide::Right };
    format_stream(TINY_VOCAB, &[0], &[Vocab::VIS], &ChunkLayout::Single(vec![c; chunks]))
        .expect("valid ids")
        .with_state_latents(2 * slots)
}

fn tiny_backbone(rng: &mut Rng) -> Backbone {
    let cfg = BackboneConfig { layers: 1, align_layer: 1, d_model: 2, heads: 1, mlp_ratio: 1, max_positions: 8, embed_std: 0.5 };
    Backbone::new(cfg, TINY_VOCAB, 2, rng).expect("valid config")
}

fn tiny_arch() -> PerceiverArch {
    PerceiverArch {
        config: PerceiverConfig { width: 2, heads: 1, mlp_hidden: 2, query_std: 1.0 },
        feature_dim: 2,
        tokens_per_frame: 1,
        latents: 2,
        out_dim: 2,
    }
}

/// Gradient of `f` at `store` (trainable: all) against central differences.
fn compare_gradients<F>(stores: &mut [ParamStore], analytic: &[f64], mut loss: F) -> f64
where
    F: FnMut(&[ParamStore]) -> f64,
{
    let sizes: Vec<usize> = stores.iter().map(|s| s.num_scalars()).collect();
    let flat: Vec<f64> = stores.iter().flat_map(|s| s.flatten()).collect();
    let mut work = stores.to_vec();
    let numeric = finite_difference_gradient(
        |p| {
            let mut off = 0;
            for (s, &n) in work.iter_mut().zip(&sizes) {
                s.unflatten(&p[off..off + n]);
                off += n;
            }
            loss(&work)
        },
        &flat,
        1e-6,
    )
    .expect("finite loss");
    max_relative_error(analytic, &numeric)
}

fn flat_grads(maps: &[std::collections::BTreeMap<String, Tensor>]) -> Vec<f64> {
    maps.iter().flat_map(|m| m.values().flat_map(|t| t.data().to_vec())).collect()
}

/// Reverse-mode gradients of the token, alignment and flow losses against
/// finite differences on models of at most 200 parameters.
pub fn gradient_oracle() -> Vec<Check> {
    let mut rng = seeded_rng(101);
    let bb = tiny_backbone(&mut rng);
    let arch = tiny_arch();
    let lap = arch.init(&mut rng).expect("valid arch");
    let stream = tiny_stream(1, 1);
    let visual = vec![vec![0.3, -0.2]];
    let z_state = Tensor::from_rows(2, 2, vec![0.1, -0.3, 0.25, 0.05]);
    let mut plan = MaskPlan::visible(&stream);
    for p in stream.motion_positions() {
        plan.masked[p] = true;
    }
    let (f0, f1) = (vec![0.4, -0.1], vec![-0.2, 0.5]);
    let mut out = Vec::new();

    let mcp = |bbp: &ParamStore, g: &mut Graph, train: bool| {
        let b = bbp.bind(g, |_| train);
        let z = g.constant(z_state.clone());
        let o = bb.forward_graph(g, &b, &StreamInputs { stream: &stream, plan: &plan, visual: &visual, state_latents: Some(z) }).expect("forward");
        let l = mcp_loss(g, o.logits, &stream, &plan).expect("loss");
        (l, b)
    };
    let mut g = Graph::new();
    let (l, b) = mcp(&bb.params, &mut g, true);
    let grads = g.backward(l);
    let analytic = flat_grads(&[b.collect_grads(&g, &grads)]);
    let n = bb.params.num_scalars();
    let err = compare_gradients(&mut [bb.params.clone()], &analytic, |s| {
        let mut g = Graph::new();
        let (l, _) = mcp(&s[0], &mut g, false);
        g.value(l).item()
    });
    out.push(check("gradient/mcp", n <= 200 && err < 1e-5, format!("{n} parameters, max relative error {err:.3e}")));

    let align = |bbp: &ParamStore, lapp: &ParamStore, g: &mut Graph, train: bool| {
        let b = bbp.bind(g, |_| train);
        let q = lapp.bind(g, |name| train && is_query(name));
        let z = g.constant(z_state.clone());
        let o = bb.forward_graph(g, &b, &StreamInputs { stream: &stream, plan: &plan, visual: &visual, state_latents: Some(z) }).expect("forward");
        let h = g.gather_rows(o.h, &chunk_rows(&stream, 1));
        let za = arch.lap_forward(g, &q, &f0, &f1, HandSide::Right).expect("lap");
        (align_loss(g, h, za).expect("align"), b, q)
    };
    let queries_only = |s: &ParamStore| {
        let mut q = ParamStore::new();
        q.insert(crate::perceiver::QUERIES, s.get(crate::perceiver::QUERIES).expect("queries").clone());
        q
    };
    let mut g = Graph::new();
    let (l, b, q) = align(&bb.params, &lap, &mut g, true);
    let grads = g.backward(l);
    let analytic = flat_grads(&[b.collect_grads(&g, &grads), q.collect_grads(&g, &grads)]);
    let base_lap = lap.clone();
    let mut stores = [bb.params.clone(), queries_only(&lap)];
    let n = stores[0].num_scalars() + stores[1].num_scalars();
    let err = compare_gradients(&mut stores, &analytic, |s| {
        let mut full = base_lap.clone();
        *full.get_mut(crate::perceiver::QUERIES).expect("queries") = s[1].get(crate::perceiver::QUERIES).expect("queries").clone();
        let mut g = Graph::new();
        let (l, _, _) = align(&s[0], &full, &mut g, false);
        g.value(l).item()
    });
    out.push(check("gradient/align", n <= 200 && err < 1e-5, format!("{n} parameters, max relative error {err:.3e}")));

    let fcfg = FlowConfig { steps: 2, blocks: 1, width: 2, heads: 1, mlp_ratio: 1, sign: FieldSign::NoiseMinusData };
    let head = FlowHead::new(fcfg, 2, 1, 1, 2, &mut rng).expect("valid head");
    let cond = Tensor::from_rows(2, 2, vec![0.2, -0.4, 0.7, 0.1]);
    let a = Tensor::from_rows(2, 1, vec![0.5, -0.8]);
    let eps = Tensor::from_rows(2, 1, vec![-0.3, 0.9]);
    let a_tau = crate::flow::noise_action(&a, 0.3, &eps).expect("valid tau");
    let fm = |fp: &ParamStore, g: &mut Graph, train: bool| {
        let b = fp.bind(g, |_| train);
        let c = g.constant(cond.clone());
        let x = g.constant(a_tau.clone());
        let v = head.velocity_graph(g, &b, c, x, &[0.2], 0.3).expect("field");
        (fm_loss(g, v, &a, &eps, head.config.sign).expect("loss"), b)
    };
    let mut g = Graph::new();
    let (l, b) = fm(&head.params, &mut g, true);
    let grads = g.backward(l);
    let analytic = flat_grads(&[b.collect_grads(&g, &grads)]);
    let n = head.params.num_scalars();
    let err = compare_gradients(&mut [head.params.clone()], &analytic, |s| {
        let mut g = Graph::new();
        let (l, _) = fm(&s[0], &mut g, false);
        g.value(l).item()
    });
    out.push(check("gradient/flow", n <= 200 && err < 1e-5, format!("{n} parameters, max relative error {err:.3e}")));
    out
}

/// Cross EMA against the closed-form blend, the 1000-step geometric decay and
/// untouched halves.
pub fn ema_exactness() -> Vec<Check> {
    let arch = tiny_arch();
    let mut out = Vec::new();
    for alpha in [0.0, 0.5] {
        let lap0 = arch.init(&mut seeded_rng(7)).expect("arch");
        let lsp0 = arch.init(&mut seeded_rng(8)).expect("arch");
        let (mut lap, mut lsp) = (lap0.clone(), lsp0.clone());
        decoupled_ema_update(&mut lap, &mut lsp, alpha).expect("ema");
        let mut exact = true;
        for (name, t) in lap.iter() {
            let (a, b) = (lap0.get(name).unwrap(), lsp0.get(name).unwrap());
            let want: Vec<f64> = if is_query(name) { a.data().to_vec() } else { a.data().iter().zip(b.data()).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect() };
            exact &= t.data() == want.as_slice();
        }
        for (name, t) in lsp.iter() {
            let (a, b) = (lsp0.get(name).unwrap(), lap0.get(name).unwrap());
            let want: Vec<f64> = if is_query(name) { a.data().iter().zip(b.data()).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect() } else { a.data().to_vec() };
            exact &= t.data() == want.as_slice();
        }
        out.push(check(if alpha == 0.0 { "ema/alpha_0" } else { "ema/alpha_0.5" }, exact, "bitwise comparison with the blend formula".into()));
    }
    let mut lap = ParamStore::new();
    lap.insert("w", Tensor::scalar(1.0));
    lap.insert(crate::perceiver::QUERIES, Tensor::scalar(3.0));
    let mut lsp = ParamStore::new();
    lsp.insert("w", Tensor::scalar(0.0));
    lsp.insert(crate::perceiver::QUERIES, Tensor::scalar(3.0));
    let before_lsp_w = lsp.get("w").unwrap().clone();
    for _ in 0..1000 {
        decoupled_ema_update(&mut lap, &mut lsp, 0.999).expect("ema");
    }
    let v = lap.get("w").unwrap().item();
    let want = 0.367_695_424_770_7;
    out.push(check("ema/geometric_decay", (v - want).abs() < 1e-6, format!("{v:.10} vs {want:.10}")));
    let untouched = lsp.get("w").unwrap() == &before_lsp_w && lap.get(crate::perceiver::QUERIES).unwrap().item() == 3.0;
    out.push(check("ema/untouched", untouched, "source halves keep their values".into()));
    out
}

fn tiny_prepared(stream: TokenStream, labeled: bool, salt: f64) -> Prepared {
    let first = vec![0.3 + salt, -0.2];
    Prepared {
        seed: 0,
        split: Split::Lab,
        labeled,
        hand: HandSide::Right,
        instruction: vec![0],
        context: stream.clone(),
        stream,
        visual: vec![first.clone()],
        first_frame: first,
        boundaries: vec![(vec![0.4, -0.1 + salt], vec![-0.2, 0.5])],
        chunks: Vec::new(),
        proprio0: Vec::new(),
        actions: None,
    }
}

/// A model small enough for exhaustive checks, with one labeled and one
/// unlabeled sample.
pub fn tiny_model_and_batch(seed: u64) -> (Model, Vec<Prepared>) {
    let mut rng = seeded_rng(seed);
    let backbone = tiny_backbone(&mut rng);
    let arch = tiny_arch();
    let lap = arch.init(&mut rng).expect("arch");
    let model = Model { backbone, lsp: lap.clone(), lap, arch };
    let labeled = tiny_stream(1, 1);
    let mut unlabeled = format_stream(TINY_VOCAB, &[0], &[Vocab::VIS], &ChunkLayout::Single(vec![])).expect("ids");
    unlabeled.push_masked_chunk(1, 1, HandSide::Right);
    let unlabeled = unlabeled.with_state_latents(2);
    (model, vec![tiny_prepared(labeled, true, 0.0), tiny_prepared(unlabeled, false, 0.1)])
}

pub fn tiny_train_config() -> TrainConfig {
    TrainConfig { base_lr: 1e-2, total_steps: 20, batch_size: 2, ema: false, ..TrainConfig::pretrain_default() }
}

/// With EMA disabled a step leaves the action perceiver's backbone half and
/// the state perceiver's queries untouched, and moves the action queries.
pub fn gradient_routing() -> Vec<Check> {
    let (model, batch) = tiny_model_and_batch(5);
    let cfg = tiny_train_config();
    let mut state = PretrainState::new(model, &cfg);
    let mut out = Vec::new();
    let (mut lap_b, mut lsp_q, mut lap_q) = (true, true, true);
    for _ in 0..3 {
        let before = state.model.clone();
        let refs: Vec<&Prepared> = batch.iter().collect();
        let m = pretrain_step(&mut state, &refs, &cfg).expect("step");
        for (name, t) in state.model.lap.iter() {
            let old = before.lap.get(name).unwrap();
            if is_query(name) {
                lap_q &= m.align > 0.0 && t != old;
            } else {
                lap_b &= t == old;
            }
        }
        for (name, t) in state.model.lsp.iter() {
            if is_query(name) {
                lsp_q &= t == before.lsp.get(name).unwrap();
            }
        }
    }
    out.push(check("routing/lap_backbone_frozen", lap_b, "bitwise equal after 3 steps".into()));
    out.push(check("routing/lsp_queries_frozen", lsp_q, "bitwise equal after 3 steps".into()));
    out.push(check("routing/lap_queries_move", lap_q, "changed on every step with positive alignment loss".into()));
    out
}

fn chi_square_p(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expect = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("dof");
    1.0 - dist.cdf(stat)
}

/// Target-chunk and ratio uniformity, suffix rate and unlabeled masking over
/// `samples` sampled plans of a four-chunk stream.
pub fn masking_statistics(samples: usize) -> Vec<Check> {
    let stream = tiny_stream(4, 2);
    let mut rng = seeded_rng(2024).substream("mask-stats");
    let mut target = [0usize; 4];
    let mut ratio = [0usize; crate::backbone::TARGET_RATIO_GRID.len()];
    let (mut suffix_masked, mut suffix_total) = (0usize, 0usize);
    for _ in 0..samples {
        let plan = sample_hybrid_mask(&stream, &mut rng).expect("plan");
        let t = plan.target_chunk.expect("labeled plan");
        target[t - 1] += 1;
        let r = plan.target_ratio.expect("labeled plan");
        let k = crate::backbone::TARGET_RATIO_GRID.iter().position(|&g| g == r).expect("grid value");
        ratio[k] += 1;
        for (p, tag) in stream.tags.iter().enumerate() {
            if tag.is_motion_slot() && plan.roles[tag.chunk.unwrap() - 1] == ChunkRole::Suffix {
                suffix_total += 1;
                suffix_masked += plan.masked[p] as usize;
            }
        }
    }
    let p_target = chi_square_p(&target);
    let p_ratio = chi_square_p(&ratio);
    let rate = suffix_masked as f64 / suffix_total.max(1) as f64;
    let mut unl = format_stream(TINY_VOCAB, &[0], &[Vocab::VIS], &ChunkLayout::Single(vec![])).expect("ids");
    for _ in 0..4 {
        unl.push_masked_chunk(2, 2, HandSide::Left);
    }
    let plan = sample_hybrid_mask(&unl, &mut rng).expect("plan");
    let all = unl.motion_positions().iter().all(|&p| plan.masked[p]) && !plan.labeled;
    vec![
        check("mask/target_uniform", p_target > 0.01, format!("chi-square p = {p_target:.4} over {target:?}")),
        check("mask/ratio_uniform", p_ratio > 0.01, format!("chi-square p = {p_ratio:.4}")),
        check("mask/suffix_rate", (rate - 0.05).abs() <= 0.005, format!("{rate:.5} over {suffix_total} slots")),
        check("mask/unlabeled_full", all, "every motion slot masked".into()),
    ]
}

/// Greedy per-level nearest-codeword search, written independently.
fn brute_force_greedy(v: &[f64], cb: &Codebook) -> Vec<u32> {
    let sd = cb.sub_dim();
    let mut out = Vec::new();
    for g in 0..cb.groups() {
        let mut r: Vec<f64> = v[g * sd..(g + 1) * sd].to_vec();
        for l in 0..cb.levels() {
            let dists: Vec<f64> = (0..cb.entries()).map(|e| cb.codeword(g, l, e).iter().zip(&r).map(|(c, x)| (c - x).powi(2)).sum()).collect();
            let best = (0..cb.entries()).fold(0, |b, e| if dists[e] < dists[b] { e } else { b });
            for (x, c) in r.iter_mut().zip(cb.codeword(g, l, best)) {
                *x -= c;
            }
            out.push(best as u32);
        }
    }
    out
}

/// Quantizer against brute force on random vectors, plus residual
/// monotonicity in the number of levels.
pub fn grvq_oracle(vectors: usize) -> Vec<Check> {
    let mut rng = seeded_rng(77);
    let (groups, levels, entries, dim) = (2, 4, 32, 6);
    let mut cb = Codebook::new(CodebookPart::Finger, groups, levels, entries, dim).expect("codebook");
    for g in 0..groups {
        for l in 0..levels {
            for e in 1..entries {
                let s = 0.6f64.powi(l as i32);
                for x in cb.codeword_mut(g, l, e) {
                    *x = s * rng.normal();
                }
            }
        }
    }
    let (mut equal, mut monotone) = (true, true);
    for _ in 0..vectors {
        let v = rng.normal_vec(dim, 1.0);
        let q = grvq_quantize(&v, &cb).expect("quantize");
        equal &= q.indices == brute_force_greedy(&v, &cb);
        let mut prev = f64::INFINITY;
        for r in 1..=levels {
            let n = grvq_quantize(&v, &cb.truncated(r).expect("levels")).expect("quantize").residual_norm;
            monotone &= n <= prev;
            prev = n;
        }
    }
    vec![
        check("grvq/brute_force", equal, format!("{vectors} vectors, C = {entries}")),
        check("grvq/residual_monotone", monotone, format!("levels 1..={levels}")),
    ]
}

/// Euler integration of the exact conditional field recovers the data point.
pub fn flow_sampler() -> Vec<Check> {
    let mut rng = seeded_rng(31);
    let a = Tensor::from_rows(3, 2, rng.normal_vec(6, 1.0));
    let eps = Tensor::from_rows(3, 2, rng.normal_vec(6, 1.0));
    let mut out = Vec::new();
    for n in [1usize, 2, 4, 16] {
        // on the straight path x = τ·a + (1−τ)·ε the field ε − a equals (x − a)/(1 − τ)
        let rec = integrate(eps.clone(), n, FieldSign::NoiseMinusData, |x, tau| {
            Ok(Tensor::from_rows(3, 2, x.data().iter().zip(a.data()).map(|(xv, av)| (xv - av) / (1.0 - tau)).collect()))
        })
        .expect("integrate");
        let err = rec.data().iter().zip(a.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        out.push(Check { name: "flow/reconstruction", passed: err < 1e-5, detail: format!("N = {n}: max error {err:.3e}") });
    }
    out
}

fn pose(t: [f64; 3], r: [f64; 3], fingers: &[f64]) -> PoseFrame {
    PoseFrame { wrist_translation: t, wrist_rotation: r, finger_joints: fingers.to_vec() }
}

fn shifted(frames: &[PoseFrame], d: [f64; 3]) -> Vec<PoseFrame> {
    frames
        .iter()
        .map(|f| {
            let mut g = f.clone();
            for i in 0..3 {
                g.wrist_translation[i] += d[i];
            }
            g
        })
        .collect()
}

fn random_pose(rng: &mut Rng) -> PoseFrame {
    let t = [rng.normal() * 0.2, rng.normal() * 0.2, rng.normal() * 0.2];
    let r = [rng.normal() * 0.5, rng.normal() * 0.5, rng.normal() * 0.5];
    let f: Vec<f64> = (0..5).map(|_| rng.uniform_range(0.0, 1.4)).collect();
    pose(t, r, &f)
}

/// Fixed micro-cases for each metric and the alignment bound on random pairs.
pub fn metric_oracles(pairs: usize) -> Vec<Check> {
    let fingers = [0.1, 0.5, 0.9, 0.3, 0.7];
    let gt = vec![pose([0.0, 0.0, 0.0], [0.1, -0.2, 0.3], &fingers), pose([0.1, 0.2, -0.1], [0.0, 0.4, 0.0], &fingers)];
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let mut out = Vec::new();

    let m0 = mpjpe(&gt, &gt).unwrap();
    let m1 = mpjpe(&shifted(&gt, [1.0, 0.0, 0.0]), &gt).unwrap();
    // per-frame offsets (3,4,0) and (0,0,1): norms 5 and 1
    let mut p = gt.clone();
    p[0].wrist_translation = [3.0, 4.0, 0.0];
    p[1].wrist_translation[2] += 1.0;
    let m2 = mpjpe(&p, &gt).unwrap();
    out.push(check("metric/mpjpe", close(m0, 0.0) && close(m1, 1.0) && close(m2, 3.0), format!("{m0}, {m1}, {m2}")));

    // rigidly moved prediction: compose a rotation with every frame
    let rot = [0.3, -0.5, 0.2];
    let rm = rotation_matrix(rot);
    let moved: Vec<PoseFrame> = gt
        .iter()
        .map(|f| {
            let w = rm * nalgebra::Vector3::from(f.wrist_translation) + nalgebra::Vector3::new(0.5, -0.2, 0.1);
            let r = nalgebra::Rotation3::from_matrix(&(rm * rotation_matrix(f.wrist_rotation))).scaled_axis();
            pose([w.x, w.y, w.z], [r.x, r.y, r.z], &f.finger_joints)
        })
        .collect();
    let pa_rigid = pa_mpjpe(&moved, &gt).unwrap();
    let joints = crate::eval::joints_from_pose(&gt[0]);
    let doubled: Vec<[f64; 3]> = joints.iter().map(|p| [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]]).collect();
    let (aligned, _) = procrustes_align(&doubled, &joints, Alignment::Similarity);
    let pa_scale = aligned.iter().zip(&joints).map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()).fold(0.0, f64::max);
    let mut perturbed = gt.clone();
    perturbed[0].finger_joints[2] += 0.4;
    perturbed[1].wrist_rotation[0] += 0.3;
    let (pa_g, mp_g) = (pa_mpjpe(&perturbed, &gt).unwrap(), mpjpe(&perturbed, &gt).unwrap());
    out.push(check("metric/pa_mpjpe", pa_rigid < 1e-8 && pa_scale < 1e-8 && pa_g <= mp_g, format!("{pa_rigid:.2e}, {pa_scale:.2e}, {pa_g:.5} <= {mp_g:.5}")));

    let w0 = mwte(&gt, &gt).unwrap();
    let w1 = mwte(&shifted(&gt, [0.0, 0.0, 2.0]), &gt).unwrap();
    let three = vec![gt[0].clone(), gt[1].clone(), gt[0].clone()];
    let mut p3 = three.clone();
    p3[0].wrist_translation[0] += 1.0;
    p3[1].wrist_translation[1] += 2.0;
    p3[2].wrist_translation[2] += 3.0;
    let w2 = mwte(&p3, &three).unwrap();
    out.push(check("metric/mwte", close(w0, 0.0) && close(w1, 2.0) && close(w2, 2.0), format!("{w0}, {w1}, {w2}")));

    let d0 = mde(&gt, &gt).unwrap();
    let d1 = mde(&shifted(&gt, [0.3, -0.7, 1.1]), &gt).unwrap();
    let a = vec![pose([0.0; 3], [0.0; 3], &fingers), pose([1.0, 0.0, 0.0], [0.0; 3], &fingers)];
    let b = vec![pose([0.0; 3], [0.0; 3], &fingers), pose([0.0, 1.0, 0.0], [0.0; 3], &fingers)];
    let d2 = mde(&b, &a).unwrap();
    out.push(check("metric/mde", close(d0, 0.0) && close(d1, 0.0) && close(d2, 2f64.sqrt()), format!("{d0}, {d1:.2e}, {d2}")));

    let mut rng = seeded_rng(404);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let (x, y) = (vec![random_pose(&mut rng)], vec![random_pose(&mut rng)]);
        worst = worst.max(pa_mpjpe(&x, &y).unwrap() - mpjpe(&x, &y).unwrap());
    }
    out.push(check("metric/pa_bound", worst <= 0.0, format!("max(pa - mpjpe) = {worst:.3e} over {pairs} pairs")));
    out
}

/// Schedule continuity and the clipping bound.
pub fn schedule_and_clipping() -> Vec<Check> {
    let (total, base, w) = (1000u64, 3e-3, 0.05);
    let ws = crate::training::warmup_steps(total, w) as f64;
    let bound = base * (1.0 / ws + std::f64::consts::PI / total as f64);
    let cont = (0..total).all(|s| {
        (crate::training::lr_schedule(s + 1, total, base, w) - crate::training::lr_schedule(s, total, base, w)).abs() <= bound + 1e-18
    });
    let mut rng = seeded_rng(9);
    let mut g1 = std::collections::BTreeMap::new();
    g1.insert("a".to_string(), Tensor::from_rows(2, 2, rng.normal_vec(4, 3.0)));
    let mut g2 = std::collections::BTreeMap::new();
    g2.insert("b".to_string(), Tensor::from_rows(1, 3, rng.normal_vec(3, 3.0)));
    crate::training::clip_global_norm(&mut [&mut g1, &mut g2], 1.0);
    let post = crate::training::global_norm(g1.values().chain(g2.values()));
    vec![
        check("schedule/continuity", cont, format!("step bound {bound:.3e}")),
        check("clip/bound", post <= 1.0 + 1e-6, format!("post-clip norm {post:.9}")),
    ]
}

pub fn run_all() -> Vec<Check> {
    let mut out = gradient_oracle();
    out.extend(ema_exactness());
    out.extend(gradient_routing());
    out.extend(masking_statistics(10_000));
    out.extend(grvq_oracle(1000));
    out.extend(flow_sampler());
    out.extend(metric_oracles(1000));
    out.extend(schedule_and_clipping());
    out
}
