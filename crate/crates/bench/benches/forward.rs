use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use memlab_core::{BiasParams, HeadParams, Model, ModelConfig, WeightSet};
use std::hint::black_box;

fn model() -> Model {
    let config = ModelConfig::tiny(4, 4, 64, 512, 1024);
    Model::new(config.clone(), WeightSet::random(&config, 0, 0.02).unwrap()).unwrap()
}

fn forward(c: &mut Criterion) {
    let model = model();
    let mut group = c.benchmark_group("forward");
    for len in [64usize, 256, 1024] {
        let tokens: Vec<u32> = (0..len as u32).map(|i| (i * 31 + 7) % 512).collect();
        group.bench_with_input(BenchmarkId::new("plain", len), &tokens, |b, t| {
            b.iter(|| model.forward(black_box(t), None, false).unwrap())
        });
        let params = BiasParams {
            layer: 2,
            heads: vec![
                HeadParams {
                    alpha: 0.4,
                    beta: 0.0
                };
                4
            ],
        };
        let bias = params.to_attention_bias(len);
        group.bench_with_input(BenchmarkId::new("biased", len), &tokens, |b, t| {
            b.iter(|| model.forward(black_box(t), Some(&bias), false).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("traced", len), &tokens, |b, t| {
            b.iter(|| model.forward(black_box(t), None, true).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward);
criterion_main!(benches);
