use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use shiftlab::nn::{backward, forward, loss_eval, Activation, LossKind, LossTarget, Matrix, MlpModel};
use shiftlab::{
    corpus_syntax_matrix, median_bandwidth, mmd_squared_biased, mmd_squared_unbiased, moment_distance, FeatureMatrix,
    KernelConfig, Modality, QuestionRecord,
};

fn gaussian(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v =
        (0..n * d).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) as f32).collect();
    FeatureMatrix::new(n, d, v, Modality::Generic).unwrap()
}

fn kernels(c: &mut Criterion) {
    let mut g = c.benchmark_group("mmd");
    for n in [250, 1000] {
        let (x, y) = (gaussian(n, 32, 1), gaussian(n, 32, 2));
        let k = KernelConfig::rbf(8.0).unwrap();
        g.bench_with_input(BenchmarkId::new("biased", n), &n, |b, _| {
            b.iter(|| mmd_squared_biased(black_box(&x), black_box(&y), &k))
        });
        g.bench_with_input(BenchmarkId::new("unbiased", n), &n, |b, _| {
            b.iter(|| mmd_squared_unbiased(black_box(&x), black_box(&y), &k))
        });
        g.bench_with_input(BenchmarkId::new("median_bandwidth", n), &n, |b, _| {
            b.iter(|| median_bandwidth(black_box(&x), black_box(&y)))
        });
    }
    g.finish();
    let (x, y) = (gaussian(2000, 32, 1), gaussian(2000, 32, 2));
    c.bench_function("moment_distance/2000x32", |b| b.iter(|| moment_distance(black_box(&x), black_box(&y))));
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = MlpModel::seeded(&[32, 64, 32, 10], Activation::Relu, Activation::SoftmaxOut, &mut rng).unwrap();
    let x = Matrix::from(&gaussian(64, 32, 3));
    let labels: Vec<usize> = (0..64).map(|i| i % 10).collect();
    c.bench_function("mlp/forward_backward_64", |b| {
        b.iter(|| {
            let acts = forward(&model, black_box(&x)).unwrap();
            let (_, g) = loss_eval(LossKind::CrossEntropy, acts.output(), LossTarget::Classes(&labels)).unwrap();
            backward(&model, &acts, &g).unwrap()
        })
    });
}

fn syntax(c: &mut Criterion) {
    let qs: Vec<QuestionRecord> = (0..1000)
        .map(|i| QuestionRecord::new(format!("What color is the {i}th object to the left of the large cube?")))
        .collect();
    c.bench_function("syntax/corpus_1000", |b| b.iter(|| corpus_syntax_matrix(black_box(&qs))));
}

criterion_group!(benches, kernels, network, syntax);
criterion_main!(benches);
