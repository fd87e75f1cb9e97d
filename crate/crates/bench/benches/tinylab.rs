// SPDX-License-Identifier: MIT OR Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use convoprobe::tinylab::{
    direct_effect, forward, layer_sweep, toy_config, toy_task, total_loss_and_grad, Alignment, Params, Probes,
    RegularizationConfig, TrainState,
};

fn tinylab(c: &mut Criterion) {
    let cfg = toy_config();
    let params = Params::init(&cfg, 0).unwrap();
    let set = toy_task(0, 64, 0.5);
    let seq = set.items[0].0.clone();
    c.bench_function("forward/one sequence", |b| b.iter(|| black_box(forward(&params, &seq).unwrap())));

    let (o, a) = set.pair_index.as_ref().unwrap()[0];
    c.bench_function("direct_effect/layer 2", |b| {
        b.iter(|| {
            black_box(direct_effect(&params, &set.items[o].0, &set.items[a].0, 2, set.items[a].1, Alignment::Strict).unwrap())
        })
    });

    c.bench_function("layer_sweep/64 items", |b| b.iter(|| black_box(layer_sweep(&params, &set, 0.0).unwrap())));

    let reg = RegularizationConfig {
        useful_layers: vec![1, 2],
        harmful_layers: vec![3],
        alpha: 0.5,
        beta: 0.1,
        ..RegularizationConfig::default()
    };
    let state = TrainState {
        probes: Probes::init(cfg.d_model, reg.probe_hidden, &reg.useful_layers, 1),
        params,
    };
    let batch = &set.items[..32];
    c.bench_function("total_loss_and_grad/batch 32", |b| {
        b.iter(|| black_box(total_loss_and_grad(&state, batch, &reg).unwrap()))
    });
}

criterion_group!(benches, tinylab);
criterion_main!(benches);
