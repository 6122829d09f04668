mod common;

use common::*;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use stein_cv::envs::{collect, lqr_q_oracle, lqr_value, rollout, rollout_from, EnvModel, Lqr, PointMass};
use stein_cv::rng;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn reset_covariance_matches_scale() {
    for (env, scale) in [
        (EnvModel::PointMass(PointMass { s0_scale: 0.7, ..Default::default() }), 0.7),
        (EnvModel::Lqr(Lqr { s0_scale: 1.3, ..Lqr::planar() }), 1.3),
    ] {
        let d = env.state_dim();
        let mut r = rng(1);
        let n = 100_000;
        let mut cov = vec![0.0; d * d];
        for _ in 0..n {
            let s = env.reset(&mut r);
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += s[i] * s[j] / n as f64;
                }
            }
        }
        let at_rest = matches!(env, EnvModel::PointMass(_));
        for i in 0..d {
            for j in 0..d {
                let c = cov[i * d + j];
                let want = scale * scale;
                if at_rest && (i >= 2 || j >= 2) {
                    // Velocities start at zero.
                    assert_eq!(c, 0.0);
                } else if i == j {
                    assert!((c / want - 1.0).abs() < 0.05, "{}: var {c}", env.name());
                } else {
                    assert!(c.abs() < 0.05 * want, "{}: cov {c}", env.name());
                }
            }
        }
    }
}

#[test]
fn reset_is_deterministic() {
    let env = EnvModel::Lqr(Lqr::planar());
    assert_eq!(env.reset(&mut rng(5)), env.reset(&mut rng(5)));
    assert_ne!(env.reset(&mut rng(5)), env.reset(&mut rng(6)));
}

#[test]
fn near_deterministic_rollouts_agree() {
    let env = lqr_env();
    let policy = lqr_policy(0.4, -20.0);
    let a = rollout_from(&env, &policy, vec![0.9], 100, &mut rng(1)).unwrap();
    let b = rollout_from(&env, &policy, vec![0.9], 100, &mut rng(2)).unwrap();
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert!((x.state[0] - y.state[0]).abs() < 1e-8);
        assert!((x.reward - y.reward).abs() < 1e-8);
    }
}

#[test]
fn stored_noise_replays_actions() {
    let mut r = rng(3);
    let env = EnvModel::PointMass(PointMass::default());
    let policy = random_policy(&mut r, 4, 2);
    let traj = rollout(&env, &policy, 200, &mut r).unwrap();
    assert_eq!(traj.len(), 200);
    assert!(traj.truncated());
    for step in &traj.steps {
        assert_eq!(policy.action_from_noise(&step.state, &step.noise).unwrap(), step.action);
    }
    for w in traj.steps.windows(2) {
        let (next, reward, _) = env.step(&w[0].state, &w[0].action).unwrap();
        assert_eq!(next, w[1].state);
        assert_eq!(reward, w[0].reward);
    }
}

#[test]
fn collection_is_deterministic() {
    let env = EnvModel::PointMass(PointMass::default());
    let mut r = rng(4);
    let policy = random_policy(&mut r, 4, 2);
    let a = collect(&env, &policy, 1234, 7, rng::purpose::ROLLOUT, 3).unwrap();
    let b = collect(&env, &policy, 1234, 7, rng::purpose::ROLLOUT, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|t| t.len()).sum::<usize>(), 1234);
    let c = collect(&env, &policy, 1234, 7, rng::purpose::ROLLOUT, 4).unwrap();
    assert_ne!(a, c);
}

/// Library rollouts against a 10^5-episode reference simulated directly.
#[test]
fn random_policy_return_matches_reference() {
    let (k, sigma): (f64, f64) = (0.35, 0.8);
    let policy = lqr_policy(k, sigma.ln());
    let env = lqr_env();
    let lib: Vec<f64> = collect(&env, &policy, 2000 * 100, 11, rng::purpose::ROLLOUT, 0)
        .unwrap()
        .iter()
        .map(|t| t.total_reward())
        .collect();

    let mut g = rand_chacha::ChaCha8Rng::seed_from_u64(12345);
    let reference: Vec<f64> = (0..100_000)
        .map(|_| {
            let mut s: f64 = StandardNormal.sample(&mut g);
            let mut total = 0.0;
            for _ in 0..100 {
                let xi: f64 = StandardNormal.sample(&mut g);
                let a = -k * s + sigma * xi;
                total -= s * s + a * a;
                s += a;
            }
            total
        })
        .collect();
    let (m1, v1) = mean_var(&lib);
    let (m2, v2) = mean_var(&reference);
    let se = (v1 / lib.len() as f64 + v2 / reference.len() as f64).sqrt();
    assert!((m1 - m2).abs() < 3.0 * se, "{m1} vs {m2} (se {se})");
}

/// Closed-form `Q(s, a)` against truncated Monte Carlo returns.
#[test]
fn q_oracle_matches_monte_carlo() {
    let lqr = Lqr::scalar();
    let (k, sigma) = (0.5, 0.5);
    let q = lqr_q_oracle(&lqr, &[k], &[sigma]).unwrap();
    let (s0, a0) = (0.8, -0.3);
    let mut g = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let returns: Vec<f64> = (0..100_000)
        .map(|_| {
            let (mut s, mut a) = (s0, a0);
            let (mut total, mut disc) = (0.0, 1.0);
            for _ in 0..2000 {
                total -= disc * (s * s + a * a);
                disc *= lqr.gamma;
                s += a;
                let xi: f64 = StandardNormal.sample(&mut g);
                a = -k * s + sigma * xi;
            }
            total
        })
        .collect();
    let (m, v) = mean_var(&returns);
    let se = (v / returns.len() as f64).sqrt();
    let want = q.eval(&[s0], &[a0]);
    assert!((want - m).abs() < 3.0 * se, "oracle {want} vs mc {m} (se {se})");

    let (p, v0) = lqr_value(&lqr, &[k], &[sigma]).unwrap();
    let mean_q = q.eval(&[s0], &[-k * s0]) + q.haa[(0, 0)] * sigma * sigma;
    assert!((mean_q - (p[(0, 0)] * s0 * s0 + v0)).abs() < 1e-9);
}
