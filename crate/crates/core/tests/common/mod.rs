#![allow(dead_code)]

use rand::Rng as _;
use stein_cv::baseline::BaselineShape;
use stein_cv::rng::{self, Rng};
use stein_cv::{Activation, Baseline, BaselineKind, DenseNet, GaussianPolicy};

pub fn rng(seed: u64) -> Rng {
    rng::stream(seed, 99)
}

pub fn uniform(r: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-scale..scale)).collect()
}

/// Central finite differences written out independently of the library.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

pub fn fd_dir(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], dir: &[f64], h: f64) -> Vec<f64> {
    let p: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + h * d).collect();
    let m: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a - h * d).collect();
    f(&p).iter().zip(f(&m)).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

/// Max coordinate error relative to the larger max-norm of the two vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn random_net(r: &mut Rng, sizes: &[usize], hidden: Activation) -> DenseNet {
    let mut net = DenseNet::init(sizes, hidden, Activation::Identity, r);
    let p = uniform(r, net.param_count(), 0.8);
    net.set_params(&p).unwrap();
    net
}

pub fn random_policy(r: &mut Rng, ds: usize, da: usize) -> GaussianPolicy {
    let mut p = GaussianPolicy::init(ds, da, &[6], 0.0, r);
    let v = uniform(r, p.param_count(), 0.7);
    p.set_params(&v).unwrap();
    p
}

pub fn random_baseline(r: &mut Rng, kind: BaselineKind, ds: usize, da: usize) -> Baseline {
    let shape = BaselineShape {
        value_hidden: vec![5],
        psi_hidden: vec![6],
        quadratic_scale: 0.8,
    };
    let mut b = Baseline::init(kind, ds, da, &shape, r);
    let p = uniform(r, b.psi_param_count(), 0.7);
    b.set_psi_params(&p).unwrap();
    b
}

/// Scalar-LQR linear policy `a = -k s + sigma xi`.
pub fn lqr_policy(k: f64, log_std: f64) -> GaussianPolicy {
    GaussianPolicy::linear(&[k], 1, 1, vec![log_std]).unwrap()
}

pub fn lqr_env() -> stein_cv::envs::EnvModel {
    stein_cv::envs::EnvModel::Lqr(stein_cv::envs::Lqr::scalar())
}

/// Batch of `n` steps from the scalar LQR with default return settings.
pub fn lqr_batch(policy: &GaussianPolicy, value: &stein_cv::ValueFunction, n: usize, seed: u64, round: u32) -> stein_cv::Batch {
    let trajs = stein_cv::envs::collect(&lqr_env(), policy, n, seed, 9, round).unwrap();
    stein_cv::Batch::new(trajs, value, &Default::default()).unwrap()
}

/// Per-coordinate mean and standard error of the mean.
pub fn mean_se(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let k = samples.len() as f64;
    let p = samples[0].len();
    let mean: Vec<f64> = (0..p).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / k).collect();
    let se = (0..p)
        .map(|j| {
            let v = samples.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / (k - 1.0);
            (v / k).sqrt()
        })
        .collect();
    (mean, se)
}
