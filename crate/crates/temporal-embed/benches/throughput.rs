//! Throughput benches for the two hot paths: embedding a whole dataset and
//! computing one training batch gradient. Built with the default `parallel`
//! feature this compares the rayon pool against a single-thread pool; built
//! with `--no-default-features` it measures the sequential fallback alone.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use temporal_embed::eval::{export_embeddings_tsv, FrameEmbedder};
use temporal_embed::model::EmbeddingModel;
use temporal_embed::objective::ContextVariant;
use temporal_embed::sampler::{assemble_batch, SamplerConfig};
use temporal_embed::synth::{generate, SynthSpec};
use temporal_embed::trainer::batch_gradient;

fn fixture() -> (temporal_embed::dataset::Dataset, EmbeddingModel) {
    let spec = SynthSpec { num_sequences: 24, seq_len: 40, ..Default::default() };
    let data = generate(&spec, 11).expect("synthetic data");
    let model = EmbeddingModel::init_seeded(spec.dim, 64, 11);
    (data, model)
}

fn embed_all(data: &temporal_embed::dataset::Dataset, model: &EmbeddingModel) -> f64 {
    let mut acc = 0.0;
    for s in 0..data.len() {
        for f in 0..data.sequence(s).num_frames {
            acc += model.embed_frame(data.frame(s, f)).iter().sum::<f64>();
        }
    }
    acc
}

fn bench_embedding(c: &mut Criterion) {
    let (data, model) = fixture();
    let mut group = c.benchmark_group("embed_dataset");
    group.bench_function("current_build", |b| b.iter(|| embed_all(&data, &model)));
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function("one_thread_pool", |b| {
            b.iter(|| single.install(|| embed_all(&data, &model)))
        });
    }
    group.finish();

    // Exercise the export path once so its buffer handling stays covered.
    let dir = tempfile::tempdir().unwrap();
    export_embeddings_tsv(&data, &model, &dir.path().join("e.tsv")).unwrap();
}

fn bench_batch_gradient(c: &mut Criterion) {
    let (data, model) = fixture();
    let scfg = SamplerConfig { seed: 11, ..Default::default() };
    let mut rng = scfg.rng();
    let batch =
        assemble_batch(&data, &scfg, ContextVariant::Full, 256, &mut rng).expect("batch");
    let seeds: Vec<u64> = (0..batch.len() as u64).collect();

    let mut group = c.benchmark_group("batch_gradient");
    group.sample_size(20);
    group.bench_function("current_build", |b| {
        b.iter_batched(
            || batch.clone(),
            |batch| batch_gradient(&model, &data, &batch, &seeds, true).unwrap(),
            BatchSize::SmallInput,
        )
    });
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function("one_thread_pool", |b| {
            b.iter_batched(
                || batch.clone(),
                |batch| {
                    single.install(|| batch_gradient(&model, &data, &batch, &seeds, true).unwrap())
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, bench_embedding, bench_batch_gradient);
criterion_main!(benches);
