//! Sequential vs rayon execution of the per-play work: dataset generation,
//! one training epoch, and embedding extraction.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skeletrack::autograd::ParamStore;
use skeletrack::encoder::EncoderConfig;
use skeletrack::model::{Model, ModelConfig, PreparedPlay, Variant};
use skeletrack::objectives::WindowConfig;
use skeletrack::play::generator::{generate_dataset, player_ids_for, DatasetSpec};
use skeletrack::play::SkeletonTopology;
use skeletrack::probe::extract_embeddings;
use skeletrack::train::{pretrain, TrainConfig};
use skeletrack::transformer::TransformerConfig;
use skeletrack::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn spec() -> DatasetSpec {
    DatasetSpec {
        n_plays: 16,
        n_steps: 20,
        margin: 4,
        ..DatasetSpec::default()
    }
}

fn setup() -> (Model, ParamStore<f32>, Vec<PreparedPlay>) {
    let topo = SkeletonTopology::preset("default17").unwrap();
    let plays = generate_dataset(&spec(), &topo, Exec::Parallel).unwrap();
    let cfg = ModelConfig {
        rig: "default17".into(),
        identities: player_ids_for(4),
        encoder: EncoderConfig::default(),
        transformer: TransformerConfig::default(),
        variant: Variant::Full,
    };
    let mut store = ParamStore::new();
    let model = Model::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let prepared = plays
        .iter()
        .map(|p| model.prepare(p, &WindowConfig::default()).unwrap())
        .collect();
    (model, store, prepared)
}

fn bench(c: &mut Criterion) {
    let topo = SkeletonTopology::preset("default17").unwrap();
    let (model, store, prepared) = setup();
    let train_cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };

    let mut g = c.benchmark_group("generate_16_plays");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| black_box(generate_dataset(&spec(), &topo, exec).unwrap())));
    }
    g.finish();

    let mut g = c.benchmark_group("train_one_epoch");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                let mut s = store.clone();
                black_box(pretrain(&model, &mut s, &prepared, &train_cfg, exec).unwrap())
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("extract_embeddings");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| black_box(extract_embeddings(&model, &store, &prepared, Variant::Full, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
