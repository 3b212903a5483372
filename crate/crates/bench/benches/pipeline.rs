use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use plotvqa_bench::desk_split;
use plotvqa_bench::plotvqa::encoders::{prepare_image, EncoderConfig, Planar};
use plotvqa_bench::plotvqa::evaluation::compute_metrics;
use plotvqa_bench::plotvqa::fusion::{FusionModel, FusionVariant, ModelConfig};
use plotvqa_bench::plotvqa::plot_synth::{
    generate_questions, render_plot, sample_plot_spec, Answer, PlotKind, TemplateSet,
};
use plotvqa_bench::plotvqa::training::{TrainConfig, Trainer};
use std::hint::black_box;

fn synth(c: &mut Criterion) {
    let mut g = c.benchmark_group("synth");
    for kind in PlotKind::ALL {
        let spec = sample_plot_spec(3, kind);
        g.bench_with_input(BenchmarkId::new("render_448x336", kind.as_str()), &spec, |b, s| {
            b.iter(|| render_plot(black_box(s), 448, 336).unwrap())
        });
    }
    let spec = sample_plot_spec(3, PlotKind::Bar);
    let set = TemplateSet::default();
    g.bench_function("questions", |b| {
        b.iter(|| generate_questions(black_box(&spec), &set, 1).unwrap())
    });
    g.finish();
}

fn encode(c: &mut Criterion) {
    let cfg = EncoderConfig::default();
    let r = render_plot(&sample_plot_spec(4, PlotKind::Line), 448, 336).unwrap();
    let planar = Planar::from_rgb(&r.image);
    c.bench_function("prepare_image", |b| {
        b.iter(|| prepare_image(black_box(&planar), &r.boxes, &cfg).unwrap())
    });
}

fn forward(c: &mut Criterion) {
    let (split, vocab) = desk_split(5);
    let idx: Vec<usize> = (0..8).collect();
    let batch = split.examples(&idx);
    let mut g = c.benchmark_group("predict_batch8");
    g.sample_size(10);
    for v in FusionVariant::ALL {
        let model = FusionModel::<f32>::new(ModelConfig::new(v, vocab.len())).unwrap();
        g.bench_function(v.as_str(), |b| b.iter(|| model.predict(black_box(&batch)).unwrap()));
    }
    g.finish();
}

fn train_epoch(c: &mut Criterion) {
    let (split, vocab) = desk_split(6);
    let mut g = c.benchmark_group("train_epoch_64");
    g.sample_size(10);
    for v in FusionVariant::ALL {
        let model = FusionModel::<f32>::new(ModelConfig::new(v, vocab.len())).unwrap();
        let mut trainer = Trainer::new(model, TrainConfig::default()).unwrap();
        g.bench_function(v.as_str(), |b| b.iter(|| trainer.train_epoch(&split).unwrap()));
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let pairs: Vec<(Answer, Answer)> = (0..10_000)
        .map(|i| {
            let p = if i % 3 == 0 { Answer::Yes } else { Answer::No };
            let g = if i % 2 == 0 { Answer::Yes } else { Answer::No };
            (p, g)
        })
        .collect();
    c.bench_function("compute_metrics_10k", |b| {
        b.iter(|| compute_metrics(black_box(&pairs)).unwrap())
    });
}

criterion_group!(benches, synth, encode, forward, train_epoch, metrics);
criterion_main!(benches);
