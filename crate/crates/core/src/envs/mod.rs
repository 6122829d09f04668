//! Small continuous-control environments with closed-form oracles, and
//! trajectory collection.

mod lqr;

pub use lqr::{lqr_q_oracle, lqr_value, optimal_finite_horizon, optimal_stationary, QuadraticQ, RiccatiSolution};

use crate::error::{check_len, Error, Result};
use crate::policy::GaussianPolicy;
use crate::rng::{self, Rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Linear dynamics `s' = A s + B a` with reward `-s^T Qc s - a^T Rc a`.
/// Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lqr {
    pub state_dim: usize,
    pub action_dim: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub qc: Vec<f64>,
    pub rc: Vec<f64>,
    pub s0_scale: f64,
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for Lqr {
    fn default() -> Self {
        Self::scalar()
    }
}

impl Lqr {
    /// `A = B = Qc = Rc = 1`, `gamma = 0.99`, `T = 100`.
    pub fn scalar() -> Self {
        Self {
            state_dim: 1,
            action_dim: 1,
            a: vec![1.0],
            b: vec![1.0],
            qc: vec![1.0],
            rc: vec![1.0],
            s0_scale: 1.0,
            horizon: 100,
            gamma: 0.99,
        }
    }

    /// Planar double integrator with position/velocity state (`d_s = 4`,
    /// `d_a = 2`), time step 0.1.
    pub fn planar() -> Self {
        let dt = 0.1;
        #[rustfmt::skip]
        let a = vec![
            1.0, 0.0, dt, 0.0,
            0.0, 1.0, 0.0, dt,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ];
        #[rustfmt::skip]
        let b = vec![
            0.0, 0.0,
            0.0, 0.0,
            dt, 0.0,
            0.0, dt,
        ];
        let mut qc = vec![0.0; 16];
        qc[0] = 1.0;
        qc[5] = 1.0;
        qc[10] = 0.1;
        qc[15] = 0.1;
        Self {
            state_dim: 4,
            action_dim: 2,
            a,
            b,
            qc,
            rc: vec![0.1, 0.0, 0.0, 0.1],
            s0_scale: 1.0,
            horizon: 100,
            gamma: 0.99,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (ds, da) = (self.state_dim, self.action_dim);
        if ds == 0 || da == 0 {
            return Err(Error::InvalidArgument("lqr dimensions must be positive".into()));
        }
        check_len("lqr A", ds * ds, self.a.len())?;
        check_len("lqr B", ds * da, self.b.len())?;
        check_len("lqr Qc", ds * ds, self.qc.len())?;
        check_len("lqr Rc", da * da, self.rc.len())?;
        validate_common(self.s0_scale, self.horizon, self.gamma)
    }

    pub fn reward(&self, s: &[f64], a: &[f64]) -> f64 {
        -quad(&self.qc, s) - quad(&self.rc, a)
    }

    pub fn next_state(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let (ds, da) = (self.state_dim, self.action_dim);
        (0..ds)
            .map(|i| {
                let mut v = 0.0;
                for j in 0..ds {
                    v += self.a[i * ds + j] * s[j];
                }
                for j in 0..da {
                    v += self.b[i * da + j] * a[j];
                }
                v
            })
            .collect()
    }
}

/// Planar point mass: state `(x, y, vx, vy)`, action is an acceleration
/// clipped to `±clip`, reward `-|pos|^2 - action_cost * |a|^2` on the
/// unclipped action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointMass {
    pub dt: f64,
    pub clip: f64,
    pub action_cost: f64,
    pub s0_scale: f64,
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for PointMass {
    fn default() -> Self {
        Self {
            dt: 0.1,
            clip: 1.0,
            action_cost: 0.1,
            s0_scale: 1.0,
            horizon: 200,
            gamma: 0.99,
        }
    }
}

impl PointMass {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.clip > 0.0 && self.action_cost >= 0.0) {
            return Err(Error::InvalidArgument("point mass needs dt > 0, clip > 0, action_cost >= 0".into()));
        }
        validate_common(self.s0_scale, self.horizon, self.gamma)
    }

    pub fn reward(&self, s: &[f64], a: &[f64]) -> f64 {
        -(s[0] * s[0] + s[1] * s[1]) - self.action_cost * (a[0] * a[0] + a[1] * a[1])
    }

    pub fn next_state(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let ax = a[0].clamp(-self.clip, self.clip);
        let ay = a[1].clamp(-self.clip, self.clip);
        let vx = s[2] + self.dt * ax;
        let vy = s[3] + self.dt * ay;
        vec![s[0] + self.dt * vx, s[1] + self.dt * vy, vx, vy]
    }
}

fn validate_common(s0_scale: f64, horizon: usize, gamma: f64) -> Result<()> {
    if !(s0_scale >= 0.0 && s0_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad s0_scale {s0_scale}")));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("discount {gamma} outside [0, 1]")));
    }
    Ok(())
}

fn quad(m: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    let mut v = 0.0;
    for i in 0..d {
        for j in 0..d {
            v += x[i] * m[i * d + j] * x[j];
        }
    }
    v
}

/// Serialized with a `kind` tag (`lqr` or `point_mass`) next to the
/// environment's own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvModel {
    Lqr(Lqr),
    PointMass(PointMass),
}

impl EnvModel {
    pub fn name(&self) -> &'static str {
        match self {
            EnvModel::Lqr(_) => "lqr",
            EnvModel::PointMass(_) => "point_mass",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvModel::Lqr(l) => l.validate(),
            EnvModel::PointMass(p) => p.validate(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvModel::Lqr(l) => l.state_dim,
            EnvModel::PointMass(_) => 4,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            EnvModel::Lqr(l) => l.action_dim,
            EnvModel::PointMass(_) => 2,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvModel::Lqr(l) => l.horizon,
            EnvModel::PointMass(p) => p.horizon,
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            EnvModel::Lqr(l) => l.gamma,
            EnvModel::PointMass(p) => p.gamma,
        }
    }

    fn s0_scale(&self) -> f64 {
        match self {
            EnvModel::Lqr(l) => l.s0_scale,
            EnvModel::PointMass(p) => p.s0_scale,
        }
    }

    /// Initial state drawn from `N(0, s0_scale^2 I)`; the point mass starts
    /// at rest, so only its position is random.
    pub fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        let scale = self.s0_scale();
        let mut s: Vec<f64> = rng::standard_normal(rng, self.state_dim())
            .into_iter()
            .map(|x| scale * x)
            .collect();
        if let EnvModel::PointMass(_) = self {
            s[2] = 0.0;
            s[3] = 0.0;
        }
        s
    }

    /// `(next_state, reward, done)`. Neither environment terminates on its
    /// own; episodes end at the horizon.
    pub fn step(&self, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        check_len("state", self.state_dim(), state.len())?;
        check_len("action", self.action_dim(), action.len())?;
        let (next, r) = match self {
            EnvModel::Lqr(l) => (l.next_state(state, action), l.reward(state, action)),
            EnvModel::PointMass(p) => (p.next_state(state, action), p.reward(state, action)),
        };
        Ok((next, r, false))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub noise: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// State after the last step.
    pub final_state: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Ended by the time limit rather than a terminal transition.
    pub fn truncated(&self) -> bool {
        self.steps.last().map_or(true, |s| !s.done)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Runs `policy` for at most `horizon` steps from a fresh initial state.
pub fn rollout(env: &EnvModel, policy: &GaussianPolicy, horizon: usize, rng: &mut Rng) -> Result<Trajectory> {
    let state = env.reset(rng);
    rollout_from(env, policy, state, horizon, rng)
}

pub fn rollout_from(
    env: &EnvModel,
    policy: &GaussianPolicy,
    mut state: Vec<f64>,
    horizon: usize,
    rng: &mut Rng,
) -> Result<Trajectory> {
    check_len("policy state dim", env.state_dim(), policy.state_dim())?;
    check_len("policy action dim", env.action_dim(), policy.action_dim())?;
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (action, noise) = policy.sample_action(&state, rng)?;
        let (next, reward, done) = env.step(&state, &action)?;
        if !reward.is_finite() || next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("rollout step {}: reward {reward}", steps.len()),
            });
        }
        steps.push(Step {
            state,
            action,
            noise: noise.0,
            reward,
            done,
        });
        state = next;
        if done {
            break;
        }
    }
    Ok(Trajectory {
        steps,
        final_state: state,
    })
}

/// Collects episodes totalling exactly `n_steps` steps; the last episode is
/// cut short when needed. Episode `i` draws from stream
/// `(seed, stream_id(purpose, round, i))`, so the result does not depend on
/// the thread count.
pub fn collect(
    env: &EnvModel,
    policy: &GaussianPolicy,
    n_steps: usize,
    seed: u64,
    purpose: u16,
    round: u32,
) -> Result<Vec<Trajectory>> {
    let horizon = env.horizon();
    let episodes = n_steps.div_ceil(horizon);
    (0..episodes)
        .into_par_iter()
        .map(|i| {
            let len = horizon.min(n_steps - i * horizon);
            let mut r = rng::stream(seed, rng::stream_id(purpose, round, i as u32));
            rollout(env, policy, len, &mut r)
        })
        .collect()
}

/// Initial states used by [`evaluate_mean_action`], drawn from stream
/// `(seed, EVAL)`.
pub fn evaluation_states(env: &EnvModel, episodes: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, rng::stream_id(rng::purpose::EVAL, 0, 0));
    (0..episodes).map(|_| env.reset(&mut r)).collect()
}

/// Mean undiscounted return of the noiseless (mean-action) policy from the
/// [`evaluation_states`] of `seed`.
pub fn evaluate_mean_action(env: &EnvModel, policy: &GaussianPolicy, episodes: usize, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for mut s in evaluation_states(env, episodes, seed) {
        for _ in 0..env.horizon() {
            let a = policy.mean(&s)?;
            let (next, reward, done) = env.step(&s, &a)?;
            total += reward;
            s = next;
            if done {
                break;
            }
        }
    }
    let mean = total / episodes.max(1) as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite {
            context: "evaluation return".into(),
        });
    }
    Ok(mean)
}
