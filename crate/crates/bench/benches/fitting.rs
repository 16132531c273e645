use criterion::{criterion_group, criterion_main, Criterion};
use memlab_core::optim::{estimate_gradient, objective, BehavioralObjective, GradientMethod};
use memlab_core::{BiasParams, EncodedRecord, Model, ModelConfig, Prompt, Stimulus, WeightSet};
use std::hint::black_box;

fn fixture() -> (Model, EncodedRecord) {
    let config = ModelConfig::tiny(2, 4, 64, 256, 512);
    let model = Model::new(config.clone(), WeightSet::random(&config, 1, 0.1).unwrap()).unwrap();
    let span: Vec<u32> = (0..65u32).map(|i| (i * 17 + 3) % 256).collect();
    let stimulus = Stimulus::build("bench", span, 3, 512).unwrap();
    let prompts = (1..stimulus.len())
        .step_by(7)
        .map(|position| Prompt {
            position,
            p_human: Some(0.2 * stimulus.presentation_of(position) as f64),
            n_subjects: 20,
        })
        .collect();
    (model, EncodedRecord { stimulus, prompts })
}

fn fitting(c: &mut Criterion) {
    let (model, record) = fixture();
    let params = BiasParams::zeros(2, 4);
    c.bench_function("objective/full_forward", |b| {
        b.iter(|| objective(&model, black_box(&params), &record).unwrap())
    });

    let obj =
        BehavioralObjective::new(&model, &record, 2, record.prompts.clone(), Vec::new()).unwrap();
    let theta = params.to_vec();
    c.bench_function("gradient/central_fd", |b| {
        b.iter(|| {
            estimate_gradient(&obj, black_box(&theta), GradientMethod::CentralFd, 1e-3, 0).unwrap()
        })
    });
    c.bench_function("gradient/spsa", |b| {
        b.iter(|| {
            estimate_gradient(&obj, black_box(&theta), GradientMethod::Spsa, 1e-3, 0).unwrap()
        })
    });
}

criterion_group!(benches, fitting);
criterion_main!(benches);
