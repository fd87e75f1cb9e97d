// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use convoprobe::alter::{apply_all, derive_seed};
use convoprobe::harness::{parse_answer, render_prompt, PromptStyle};
use convoprobe::lexical::default_lexicons;
use convoprobe::metrics::compute_metrics;
use convoprobe::world::{build_world, label_dataset};
use convoprobe::AlterationType;
use convoprobe_bench::{conversations, labeled_dataset, originals, predictions};

fn alteration(c: &mut Criterion) {
    let base = originals(&conversations(20, 1));
    let lex = default_lexicons();
    c.bench_function("apply_all/20 conversations", |b| {
        b.iter(|| {
            for inst in &base {
                let seeds: BTreeMap<AlterationType, u64> = AlterationType::DETERMINISTIC
                    .iter()
                    .map(|&t| (t, derive_seed(7, &inst.original_id, t)))
                    .collect();
                black_box(apply_all(&inst.conversation, &inst.question, inst.gold, &seeds, lex));
            }
        })
    });
}

fn oracle(c: &mut Criterion) {
    let convs = conversations(50, 2);
    c.bench_function("build_world/50 conversations", |b| {
        b.iter(|| {
            for conv in &convs {
                black_box(build_world(conv));
            }
        })
    });
    let dataset = originals(&convs);
    c.bench_function("label_dataset/originals of 50", |b| b.iter(|| black_box(label_dataset(&dataset))));
}

fn metrics(c: &mut Criterion) {
    let dataset = labeled_dataset(40, 3);
    let preds = predictions(&dataset);
    c.bench_function("compute_metrics", |b| b.iter(|| black_box(compute_metrics(&dataset, &preds).unwrap())));
}

fn harness(c: &mut Criterion) {
    let dataset = originals(&conversations(10, 4));
    c.bench_function("render_prompt/p1", |b| {
        b.iter(|| {
            for inst in &dataset {
                black_box(render_prompt(inst, PromptStyle::ExplainFirstLine));
            }
        })
    });
    let completions = ["Yes\nBecause Jack did.", "(no) the limes moved", "maybe", "Label: yes"];
    c.bench_function("parse_answer", |b| {
        b.iter(|| {
            for s in completions {
                let _ = black_box(parse_answer(s, PromptStyle::ExplainFirstLine));
            }
        })
    });
}

criterion_group!(benches, alteration, oracle, metrics, harness);
criterion_main!(benches);
