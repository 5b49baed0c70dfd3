mod common;

use common::{fixture, model};
use jala_core::backend::seeded_rng;
use jala_core::eval::{eval_motion_generation, evaluate_model, mpjpe, project_embeddings, EmbeddingSample, Source};
use jala_core::training::Prepared;

fn labeled_episodes() -> Vec<Prepared> {
    fixture().episodes.iter().filter(|p| p.labeled).cloned().collect()
}

#[test]
fn ground_truth_ids_score_the_tokenizer_floor() {
    let f = fixture();
    let eps = labeled_episodes();
    let report = eval_motion_generation(&eps, &f.tokenizer, &f.config.eval, "lab_eval", |_, p, _| {
        p.chunks.iter().map(|c| f.tokenizer.tokenize_chunk(c)).collect()
    })
    .unwrap();
    let mut errs = Vec::new();
    for p in &eps {
        for c in &p.chunks {
            let back = f.tokenizer.detokenize_chunk(&f.tokenizer.tokenize_chunk(c).unwrap()).unwrap();
            errs.push(mpjpe(&back.frames, &c.frames).unwrap());
        }
    }
    let floor = errs.iter().sum::<f64>() / errs.len() as f64;
    assert_eq!(report.mpjpe.count, errs.len());
    assert!((report.mpjpe.mean - floor).abs() < 1e-12);
}

#[test]
fn empty_split_is_an_error() {
    let f = fixture();
    assert!(evaluate_model(&model(1), &f.layout, &f.config.decode, &[], &f.tokenizer, &f.config.eval, "lab_eval").is_err());
}

#[test]
fn unlabeled_episodes_are_skipped() {
    let f = fixture();
    let report = evaluate_model(&model(2), &f.layout, &f.config.decode, &f.episodes, &f.tokenizer, &f.config.eval, "mixed").unwrap();
    let unlabeled = f.episodes.iter().filter(|p| !p.labeled).count();
    assert_eq!(report.skipped, unlabeled);
    assert_eq!(report.episodes, f.episodes.len());
}

fn samples(n: usize, d: usize, seed: u64) -> Vec<EmbeddingSample> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .flat_map(|i| {
            let h = rng.normal_vec(d, 1.0);
            let z = rng.normal_vec(d, 1.0);
            [Source::H, Source::Z].map(|source| EmbeddingSample {
                source,
                split: if i % 2 == 0 { "lab".into() } else { "wild".into() },
                values: if source == Source::H { h.clone() } else { z.clone() },
            })
        })
        .collect()
}

#[test]
fn identical_sources_share_coordinates() {
    let mut s = samples(20, 6, 1);
    for pair in s.chunks_mut(2) {
        pair[1].values = pair[0].values.clone();
    }
    let proj = project_embeddings(&s).unwrap();
    assert_eq!(proj.points.len(), s.len());
    for pair in proj.points.chunks(2) {
        assert_eq!((pair[0].x, pair[0].y), (pair[1].x, pair[1].y));
        assert_ne!(pair[0].source, pair[1].source);
    }
}

#[test]
fn isotropic_data_spreads_variance_evenly() {
    let d = 10;
    let proj = project_embeddings(&samples(2000, d, 2)).unwrap();
    assert!(!proj.rank_deficient);
    let expected = 2.0 / d as f64;
    let got: f64 = proj.explained.iter().sum();
    assert!((got - expected).abs() <= 0.5 * expected, "explained {got} vs {expected}");
}
