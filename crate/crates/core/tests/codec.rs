use std::sync::OnceLock;

use jala_core::eval::mpjpe;
use jala_core::motion::tokenizer::constant_chunk;
use jala_core::motion::{train_tokenizer, HandSide, MotionChunk, PoseFrame, TokenChunk, Tokenizer, TokenizerConfig, TokenizerReport};
use jala_core::training::tokenizer_corpus;
use jala_core::world::{make_splits, WorldConfig};

struct Trained {
    tokenizer: Tokenizer,
    report: TokenizerReport,
    train: Vec<MotionChunk>,
    held_out: Vec<MotionChunk>,
}

fn world() -> WorldConfig {
    WorldConfig { lab_train: 500, lab_eval: 60, wild_train: 200, wild_eval: 4, robot_train: 1, robot_eval: 1, ..Default::default() }
}

/// The default tokenizer trained on a lab and wild corpus with 5% zero-pose chunks mixed in.
fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let w = world();
        let splits = make_splits(&w).unwrap();
        let mut train = tokenizer_corpus(&splits, &w).unwrap();
        let cfg = TokenizerConfig::default();
        let zeros = train.len() / 20;
        train.extend((0..zeros).map(|i| {
            let side = if i % 2 == 0 { HandSide::Right } else { HandSide::Left };
            constant_chunk(&PoseFrame::zero(cfg.finger_dims), cfg.chunk_len, side)
        }));
        let held_out: Vec<MotionChunk> = splits
            .lab_eval
            .iter()
            .flat_map(|e| jala_core::motion::chunk_sequence(e.poses.as_ref().unwrap(), cfg.chunk_len, e.hand_side).unwrap())
            .collect();
        let (tokenizer, report) = train_tokenizer(&train, &cfg).unwrap();
        Trained { tokenizer, report, train, held_out }
    })
}

fn round_trip_error(tok: &Tokenizer, c: &MotionChunk) -> f64 {
    let back = tok.detokenize_chunk(&tok.tokenize_chunk(c).unwrap()).unwrap();
    mpjpe(&back.frames, &c.frames).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn held_out_reconstruction_is_under_threshold() {
    let t = trained();
    let errs: Vec<f64> = t.held_out.iter().map(|c| round_trip_error(&t.tokenizer, c)).collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    eprintln!("held-out round-trip mpjpe {mean:.4} over {} chunks", errs.len());
    assert!(mean < t.tokenizer.config().rho_tok, "mean {mean}");
}

#[test]
fn zero_pose_reconstructs_no_worse_than_the_median() {
    let t = trained();
    let cfg = t.tokenizer.config();
    let zero = constant_chunk(&PoseFrame::zero(cfg.finger_dims), cfg.chunk_len, HandSide::Right);
    let med = median(t.train.iter().step_by(7).map(|c| round_trip_error(&t.tokenizer, c)).collect());
    let err = round_trip_error(&t.tokenizer, &zero);
    assert!(err <= med, "zero pose {err} vs corpus median {med}");
}

#[test]
fn hand_side_only_changes_the_tag() {
    let t = trained();
    let right = MotionChunk { hand_side: HandSide::Right, ..t.held_out[0].clone() };
    let left = MotionChunk { hand_side: HandSide::Left, ..right.clone() };
    let (a, b) = (t.tokenizer.tokenize_chunk(&right).unwrap(), t.tokenizer.tokenize_chunk(&left).unwrap());
    assert_eq!(a.wrist_ids, b.wrist_ids);
    assert_eq!(a.finger_ids, b.finger_ids);
    assert_ne!(a.hand_side, b.hand_side);
}

#[test]
fn decoding_is_total_and_deterministic() {
    let tok = &trained().tokenizer;
    let cfg = tok.config();
    let zeros = TokenChunk { wrist_ids: vec![0; cfg.wrist_tokens()], finger_ids: vec![0; cfg.finger_tokens()], hand_side: HandSide::Right };
    let a = tok.detokenize_chunk(&zeros).unwrap();
    let b = tok.detokenize_chunk(&zeros).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.frames.len(), cfg.chunk_len);
    assert!(a.frames.iter().all(PoseFrame::is_finite));
}

#[test]
fn assignment_counts_account_for_every_slot() {
    let t = trained();
    let by_level: Vec<u64> = t.report.assignments.iter().flatten().map(|e| e.iter().sum()).collect();
    assert_eq!(by_level.iter().sum::<u64>(), t.report.total_assignments);
    for part in &t.report.assignments {
        assert!(part.iter().all(|lvl| lvl.iter().sum::<u64>() == part[0].iter().sum::<u64>()));
    }
    for (part, util) in t.report.assignments.iter().zip(&t.report.utilization) {
        for (lvl, u) in part.iter().zip(util) {
            assert_eq!(*u, lvl.iter().filter(|&&c| c > 0).count() as f64 / lvl.len() as f64);
        }
    }
}

#[test]
fn constant_corpus_is_exactly_representable() {
    let cfg = TokenizerConfig { min_chunks: 10, epochs: 10, ..Default::default() };
    let frame = PoseFrame { wrist_translation: [0.2, -0.1, 0.4], wrist_rotation: [0.3, 0.1, -0.2], finger_joints: vec![0.5; cfg.finger_dims] };
    let chunks: Vec<MotionChunk> = (0..60).map(|_| constant_chunk(&frame, cfg.chunk_len, HandSide::Right)).collect();
    let (tok, _) = train_tokenizer(&chunks, &cfg).unwrap();
    let err = round_trip_error(&tok, &chunks[0]);
    assert!(err < 1e-3, "constant-pose round trip {err}");
}

#[test]
fn residual_levels_beat_one_flat_level_at_equal_budget() {
    let w = WorldConfig { lab_train: 200, lab_eval: 1, wild_train: 60, wild_eval: 1, robot_train: 1, robot_eval: 1, ..Default::default() };
    let corpus = tokenizer_corpus(&make_splits(&w).unwrap(), &w).unwrap();
    let base = TokenizerConfig { min_chunks: 100, epochs: 10, ..Default::default() };
    let val = |levels: usize, entries: usize| {
        let (_, r) = train_tokenizer(&corpus, &TokenizerConfig { levels, entries, ..base.clone() }).unwrap();
        r.epochs.last().unwrap().val_mse
    };
    let (residual, flat) = (val(2, 16), val(1, 32));
    eprintln!("validation mse: two levels of 16 {residual:.5}, one level of 32 {flat:.5}");
    assert!(residual <= flat);
}
