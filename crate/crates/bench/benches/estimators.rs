use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use stein_cv::baseline::{min_var_fit, BaselineShape, FitOptions};
use stein_cv::envs::{collect, EnvModel, PointMass};
use stein_cv::estimator::{grad_qprop_form, grad_stein, grad_value_baseline, ReturnConfig};
use stein_cv::rng;
use stein_cv::{Activation, Baseline, BaselineKind, Batch, DenseNet, GaussianPolicy, SigmaFormula};

struct Setup {
    policy: GaussianPolicy,
    batch: Batch,
    baselines: Vec<(&'static str, Baseline)>,
}

fn setup() -> Setup {
    let env = EnvModel::PointMass(PointMass::default());
    let mut r = rng::stream(1, 0);
    let policy = GaussianPolicy::init(4, 2, &[64], -0.5, &mut r);
    let shape = BaselineShape {
        value_hidden: vec![64],
        psi_hidden: vec![32],
        quadratic_scale: 1.0,
    };
    let baselines: Vec<(&'static str, Baseline)> = [
        ("value", BaselineKind::Value),
        ("linear", BaselineKind::Linear),
        ("quadratic", BaselineKind::Quadratic),
        ("mlp", BaselineKind::Mlp),
    ]
    .into_iter()
    .map(|(name, kind)| (name, Baseline::init(kind, 4, 2, &shape, &mut r)))
    .collect();
    let trajs = collect(&env, &policy, 2000, 1, 2, 0).unwrap();
    let batch = Batch::new(trajs, baselines[0].1.value(), &ReturnConfig::default()).unwrap();
    Setup { policy, batch, baselines }
}

fn estimators(c: &mut Criterion) {
    let s = setup();
    let mut g = c.benchmark_group("estimate_2000_steps");
    g.sample_size(20);
    g.bench_function("value", |b| {
        b.iter(|| grad_value_baseline(black_box(&s.batch), &s.policy, s.baselines[0].1.value()).unwrap())
    });
    for (name, baseline) in &s.baselines[1..] {
        g.bench_function(format!("stein_{name}_score"), |b| {
            b.iter(|| grad_stein(black_box(&s.batch), &s.policy, baseline, SigmaFormula::Score).unwrap())
        });
    }
    g.bench_function("stein_quadratic_hessian", |b| {
        b.iter(|| grad_stein(black_box(&s.batch), &s.policy, &s.baselines[2].1, SigmaFormula::Hessian).unwrap())
    });
    g.bench_function("qprop_linear", |b| {
        b.iter(|| grad_qprop_form(black_box(&s.batch), &s.policy, &s.baselines[1].1).unwrap())
    });
    g.finish();
}

fn fitting(c: &mut Criterion) {
    let s = setup();
    let opts = FitOptions {
        steps: 10,
        lr: 1e-3,
        batch_size: 256,
        seed: 1,
    };
    let mut g = c.benchmark_group("minvar_10_steps");
    g.sample_size(20);
    for (name, baseline) in &s.baselines[1..] {
        g.bench_function(*name, |b| {
            b.iter_batched(
                || baseline.clone(),
                |bl| min_var_fit(&bl, &s.policy, s.batch.fit_data(), &opts).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

fn network(c: &mut Criterion) {
    let mut r = rng::stream(2, 0);
    let net = DenseNet::init(&[6, 64, 64, 1], Activation::Tanh, Activation::Identity, &mut r);
    let x = rng::standard_normal(&mut r, 6);
    let t = rng::standard_normal(&mut r, 6);
    c.bench_function("net_forward", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));
    c.bench_function("net_backward", |b| b.iter(|| net.backward(black_box(&x), &[1.0]).unwrap()));
    c.bench_function("net_input_grad_jvp", |b| {
        b.iter(|| net.input_grad_jvp(black_box(&x), &t, &[1.0]).unwrap())
    });
}

criterion_group!(benches, estimators, fitting, network);
criterion_main!(benches);
