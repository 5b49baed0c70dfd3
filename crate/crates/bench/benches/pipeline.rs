use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use jala_bench::setup;
use jala_core::backbone::MaskPlan;
use jala_core::backend::seeded_rng;
use jala_core::eval::pa_mpjpe;
use jala_core::motion::{grvq_quantize, CodebookPart};
use jala_core::training::{posttrain_step, pretrain_step, PosttrainState, PretrainState, Prepared, Posttrainer};

fn pipeline(c: &mut Criterion) {
    let s = setup();
    let chunk = &s.lab[0].chunks[0];
    let cb = s.tokenizer.codebook(CodebookPart::Wrist);
    let vector = vec![0.3; cb.code_dim()];

    c.bench_function("grvq_quantize", |b| b.iter(|| grvq_quantize(black_box(&vector), cb).unwrap()));
    c.bench_function("tokenize_chunk", |b| b.iter(|| s.tokenizer.tokenize_chunk(black_box(chunk)).unwrap()));
    c.bench_function("pa_mpjpe", |b| b.iter(|| pa_mpjpe(black_box(&chunk.frames), &s.lab[1].chunks[0].frames).unwrap()));

    let p = &s.lab[0];
    let z = s.model.state_latents(p).unwrap();
    let plan = MaskPlan::visible(&p.stream);
    c.bench_function("backbone_forward", |b| b.iter(|| s.model.score(p, &p.stream, &plan, &z).unwrap()));

    let batch: Vec<&Prepared> = s.lab.iter().cycle().take(s.config.pretrain.batch_size).collect();
    c.bench_function("pretrain_step", |b| {
        let mut state = PretrainState::new(s.model.clone(), &s.config.pretrain);
        b.iter(|| pretrain_step(&mut state, &batch, &s.config.pretrain).unwrap())
    });

    let post = Posttrainer::new(&s.config, &s.tokenizer, &s.splits, Some(&s.model)).unwrap();
    let robot: Vec<&Prepared> = s.robot.iter().cycle().take(s.config.posttrain.batch_size).collect();
    c.bench_function("posttrain_step", |b| {
        let mut state = PosttrainState::new(s.model.clone(), post.state.flow.clone(), &s.config.posttrain);
        b.iter(|| posttrain_step(&mut state, &robot, &s.config.posttrain).unwrap())
    });

    let mut group = c.benchmark_group("decode");
    group.sample_size(10);
    group.bench_function("generate_episode", |b| {
        let mut rng = seeded_rng(3);
        b.iter(|| s.model.generate(p, &s.layout, &s.config.decode, &mut rng).unwrap())
    });
    group.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
