//! Request-level control: one deterministic actor-critic per request-level PVR
//! target. The critic is trained on the usual TD loss plus a weighted
//! constraint loss that pulls `Q(s,a)` towards `Q'(s,a) + delta`, and collected
//! experience is shared between all targets by hindsight relabeling.

mod buffer;
mod policy_set;
mod train;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::EtaBounds;
use crate::error::{contract, Error, Result};
use crate::neural::{opt_step, sync_target, Activation, Cache, NetSpec, OptState, Params};
use crate::pscmdp::{state_dim, Action, ConstraintSpec, DeltaForm, State};
use crate::seeds::{derive_seed, STREAM_INIT};

pub use buffer::{cher_relabel, CherBuffer, Experience, Tagged};
pub use policy_set::{load_policy_set, save_policy_set, PolicySet, PolicySetManifest};
pub use train::{
    eval_lower, train_lower, write_curve_csv, CurvePoint, LowerEval, LowerRun, LowerRunOptions,
    LowerTrainer,
};

/// Hyperparameters of the request-level trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowerConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Transitions a policy's buffer must hold before it is updated.
    pub warmup: usize,
    /// Environment steps between update rounds.
    pub update_every: usize,
    pub gamma: f64,
    /// Weight `w` of the constraint loss.
    pub constraint_weight: f64,
    pub delta_form: DeltaForm,
    /// Multiplier applied to revenue before it enters the critic.
    pub reward_scale: f64,
    /// Soft target mixing per update.
    pub tau: f64,
    pub noise_start: f64,
    pub noise_end: f64,
    pub noise_decay_steps: u64,
    pub cher: bool,
    pub train_days: usize,
    /// Environment steps between learning-curve evaluations.
    pub eval_every: usize,
    /// Validation days used for learning-curve points.
    pub curve_eval_days: usize,
    /// Keep, per target, the evaluated snapshot with the lowest
    /// `mean |PVR_i - target| + |day PVR - target|` on the validation days
    /// instead of the final parameters.
    pub select_best: bool,
}

impl Default for LowerConfig {
    fn default() -> Self {
        LowerConfig {
            hidden: vec![20, 20],
            actor_lr: 0.001,
            critic_lr: 0.0001,
            buffer_capacity: 50_000,
            batch_size: 64,
            warmup: 1000,
            update_every: 4,
            gamma: 1.0,
            constraint_weight: 10.0,
            delta_form: DeltaForm::Absolute,
            reward_scale: 0.05,
            tau: 0.005,
            noise_start: 1.0,
            noise_end: 0.001,
            noise_decay_steps: 50_000,
            cher: true,
            train_days: 200,
            eval_every: 2400,
            curve_eval_days: 1,
            select_best: true,
        }
    }
}

impl LowerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("lower hidden layers must be nonempty and positive");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity <= self.batch_size {
            return bad("buffer capacity must exceed a positive batch size");
        }
        if self.warmup < self.batch_size {
            return bad("warmup must be at least the batch size");
        }
        if self.update_every == 0 || self.eval_every == 0 {
            return bad("update_every and eval_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0,1]");
        }
        if !(self.constraint_weight >= 0.0 && self.reward_scale > 0.0) {
            return bad("constraint weight must be >= 0 and reward scale > 0");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0,1]");
        }
        if !(self.noise_start >= self.noise_end && self.noise_end > 0.0) {
            return bad("noise must decay from noise_start down to a positive noise_end");
        }
        if self.train_days == 0 {
            return bad("train_days must be positive");
        }
        Ok(())
    }
}

/// Linearly decaying Gaussian exploration.
#[derive(Debug, Clone)]
pub struct NoiseProcess {
    start: f64,
    end: f64,
    decay_steps: u64,
    step: u64,
    rng: ChaCha8Rng,
}

impl NoiseProcess {
    pub fn new(start: f64, end: f64, decay_steps: u64, rng: ChaCha8Rng) -> Self {
        NoiseProcess {
            start,
            end,
            decay_steps,
            step: 0,
            rng,
        }
    }

    pub fn scale_at(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        (self.start + (self.end - self.start) * frac).max(self.end)
    }

    pub fn scale(&self) -> f64 {
        self.scale_at(self.step)
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }

    fn perturb(&mut self, u: &mut [f64]) {
        let s = self.scale();
        for x in u {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *x += s * z;
        }
    }
}

/// Actor, critic, their target copies and optimizer states for one target.
#[derive(Debug, Clone)]
pub struct PolicyHandle {
    pub constraint_id: usize,
    pub target: f64,
    pub actor: Params,
    pub actor_target: Params,
    pub critic: Params,
    pub critic_target: Params,
    pub actor_opt: OptState,
    pub critic_opt: OptState,
    pub updates: u64,
}

impl PolicyHandle {
    pub fn new(
        constraint_id: usize,
        target: f64,
        n_ads: usize,
        cfg: &LowerConfig,
        seed: u64,
    ) -> Result<Self> {
        let s_dim = state_dim(n_ads);
        let actor = Params::init(
            NetSpec::mlp(s_dim, &cfg.hidden, n_ads, Activation::Tanh),
            derive_seed(seed, STREAM_INIT, 2 * constraint_id as u64),
        )?;
        let critic = Params::init(
            NetSpec::mlp(s_dim + n_ads, &cfg.hidden, 1, Activation::Identity),
            derive_seed(seed, STREAM_INIT, 2 * constraint_id as u64 + 1),
        )?;
        Ok(PolicyHandle {
            constraint_id,
            target,
            actor_opt: OptState::new(&actor, cfg.actor_lr),
            critic_opt: OptState::new(&critic, cfg.critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            updates: 0,
        })
    }

    pub fn n_ads(&self) -> usize {
        self.actor.output_len()
    }
}

fn to_eta(u: &[f64], bounds: EtaBounds) -> Vec<f64> {
    u.iter()
        .map(|x| (bounds.midpoint() + bounds.half_width() * x).clamp(bounds.min, bounds.max))
        .collect()
}

/// Maps coefficients back to the actor's `[-1, 1]` coordinates.
pub fn normalize_action(eta: &[f64], bounds: EtaBounds) -> Vec<f64> {
    let half = bounds.half_width();
    eta.iter()
        .map(|e| if half > 0.0 { (e - bounds.midpoint()) / half } else { 0.0 })
        .collect()
}

/// Deterministic actor output mapped onto the coefficient range, optionally
/// perturbed by exploration noise before clipping.
pub fn act(
    policy: &PolicyHandle,
    s: &State,
    bounds: EtaBounds,
    noise: Option<&mut NoiseProcess>,
) -> Result<Action> {
    act_with(&policy.actor, s, bounds, noise)
}

pub fn act_with(
    actor: &Params,
    s: &State,
    bounds: EtaBounds,
    noise: Option<&mut NoiseProcess>,
) -> Result<Action> {
    let mut u = actor.forward(s.as_slice())?;
    if let Some(n) = noise {
        n.perturb(&mut u);
    }
    for x in &mut u {
        *x = x.clamp(-1.0, 1.0);
    }
    Ok(Action(to_eta(&u, bounds)))
}

/// Loss terms of one critic evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss {
    pub l_rl: f64,
    pub l_c: f64,
    pub total: f64,
    pub mean_q: f64,
    pub grads: Vec<f64>,
}

/// Knobs the critic loss needs besides the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub gamma: f64,
    pub weight: f64,
    pub reward_scale: f64,
    pub form: DeltaForm,
}

impl From<&LowerConfig> for LossParams {
    fn from(c: &LowerConfig) -> Self {
        LossParams {
            gamma: c.gamma,
            weight: c.constraint_weight,
            reward_scale: c.reward_scale,
            form: c.delta_form,
        }
    }
}

fn critic_input(state: &[f64], action: &[f64], buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend_from_slice(state);
    buf.extend_from_slice(action);
}

/// `L' = L_RL + w * L_C` averaged over the batch, with gradients for the
/// online critic. `L_RL` regresses on `r + gamma * Q'(s', mu'(s'))` (no
/// bootstrap on terminal steps); `L_C` regresses on `Q'(s, a) + delta`.
pub fn critic_loss(
    batch: &[&Tagged],
    policy: &PolicyHandle,
    spec: &ConstraintSpec,
    lp: LossParams,
) -> Result<CriticLoss> {
    contract!(!batch.is_empty(), "critic loss needs a nonempty batch");
    let target = spec.target(policy.constraint_id)?;
    contract!(
        batch.iter().all(|t| t.constraint_id == policy.constraint_id),
        "batch contains transitions tagged for another constraint"
    );
    let n = batch.len() as f64;
    let mut grads = policy.critic.zero_grads();
    let mut cache = Cache::default();
    let mut x = Vec::new();
    let (mut l_rl, mut l_c, mut sum_q) = (0.0, 0.0, 0.0);
    for t in batch {
        let e = &t.exp;
        let mut y = e.reward * lp.reward_scale;
        if !e.terminal && lp.gamma > 0.0 {
            let next_u = policy.actor_target.forward(&e.next_state)?;
            critic_input(&e.next_state, &next_u, &mut x);
            y += lp.gamma * policy.critic_target.forward(&x)?[0];
        }
        critic_input(&e.state, &e.action, &mut x);
        let q_target_here = policy.critic_target.forward(&x)?[0];
        let q = policy.critic.forward_cached(&x, &mut cache)?[0];
        let delta = lp.form.eval(e.pvr, target);
        let rl_err = y - q;
        let c_err = q_target_here + delta - q;
        l_rl += rl_err * rl_err;
        l_c += c_err * c_err;
        sum_q += q;
        let dq = (-2.0 * rl_err - 2.0 * lp.weight * c_err) / n;
        policy.critic.backward(&cache, &[dq], &mut grads)?;
    }
    let (l_rl, l_c) = (l_rl / n, l_c / n);
    Ok(CriticLoss {
        l_rl,
        l_c,
        total: l_rl + lp.weight * l_c,
        mean_q: sum_q / n,
        grads,
    })
}

/// Summary of one update step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub l_rl: f64,
    pub l_c: f64,
    pub loss: f64,
    pub mean_q: f64,
    pub actor_objective: f64,
}

/// Critic step on `L'`, actor step along `dQ/da` through the critic, then soft
/// target updates.
pub fn update_step<R: Rng>(
    policy: &mut PolicyHandle,
    buffer: &CherBuffer,
    spec: &ConstraintSpec,
    cfg: &LowerConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    contract!(
        buffer.len() >= cfg.batch_size,
        "buffer holds {} transitions, batch needs {}",
        buffer.len(),
        cfg.batch_size
    );
    let batch = buffer.sample(rng, cfg.batch_size);
    let loss = critic_loss(&batch, policy, spec, LossParams::from(cfg))?;
    if !loss.total.is_finite() {
        return Err(Error::Training(format!(
            "non-finite critic loss for target {}",
            policy.target
        )));
    }
    opt_step(&mut policy.critic, &loss.grads, &mut policy.critic_opt)?;

    let actor_objective = actor_update(policy, &batch)?;

    sync_target(&mut policy.critic_target, &policy.critic, cfg.tau)?;
    sync_target(&mut policy.actor_target, &policy.actor, cfg.tau)?;
    policy.updates += 1;
    Ok(UpdateStats {
        l_rl: loss.l_rl,
        l_c: loss.l_c,
        loss: loss.total,
        mean_q: loss.mean_q,
        actor_objective,
    })
}

/// Deterministic policy gradient: ascend `Q(s, mu(s))` over the batch states.
fn actor_update(policy: &mut PolicyHandle, batch: &[&Tagged]) -> Result<f64> {
    let n = batch.len() as f64;
    let s_dim = policy.actor.input_len();
    let mut grads = policy.actor.zero_grads();
    let mut a_cache = Cache::default();
    let mut c_cache = Cache::default();
    let mut x = Vec::new();
    let mut objective = 0.0;
    for t in batch {
        let u = policy.actor.forward_cached(&t.exp.state, &mut a_cache)?.to_vec();
        critic_input(&t.exp.state, &u, &mut x);
        objective += policy.critic.forward_cached(&x, &mut c_cache)?[0];
        let dx = policy.critic.backward_input(&c_cache, &[-1.0 / n])?;
        policy.actor.backward(&a_cache, &dx[s_dim..], &mut grads)?;
    }
    opt_step(&mut policy.actor, &grads, &mut policy.actor_opt)?;
    Ok(objective / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn tagged(state: Vec<f64>, action: Vec<f64>, reward: f64, pvr: f64, terminal: bool) -> Tagged {
        Tagged {
            exp: Arc::new(Experience {
                next_state: state.clone(),
                state,
                action,
                reward,
                pvr,
                terminal,
                source_constraint: 0,
            }),
            constraint_id: 2,
        }
    }

    fn handle() -> PolicyHandle {
        PolicyHandle::new(2, 0.4, 15, &LowerConfig::default(), 1).unwrap()
    }

    fn random_batch(seed: u64, n: usize) -> Vec<Tagged> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let s: Vec<f64> = (0..46).map(|_| rng.random::<f64>()).collect();
                let a: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
                let pvr = rng.random_range(0..=10) as f64 / 10.0;
                tagged(s, a, rng.random::<f64>() * 5.0, pvr, rng.random_bool(0.1))
            })
            .collect()
    }

    #[test]
    fn greedy_action_is_deterministic_and_bounded() {
        let h = handle();
        let s = State(vec![0.3; 46]);
        let b = EtaBounds::default();
        let a1 = act(&h, &s, b, None).unwrap();
        assert_eq!(a1, act(&h, &s, b, None).unwrap());
        let mut noise = NoiseProcess::new(5.0, 0.001, 10, ChaCha8Rng::seed_from_u64(3));
        for _ in 0..20 {
            let a = act(&h, &s, b, Some(&mut noise)).unwrap();
            assert!(a.0.iter().all(|e| b.contains(*e)));
            noise.advance();
        }
    }

    #[test]
    fn zero_actor_gives_midpoint() {
        let mut h = handle();
        h.actor = Params::zeros(h.actor.spec.clone()).unwrap();
        let a = act(&h, &State(vec![0.5; 46]), EtaBounds::default(), None).unwrap();
        assert_eq!(a.0, vec![1.5; 15]);
    }

    #[test]
    fn noise_schedule() {
        let n = NoiseProcess::new(1.0, 0.001, 50_000, ChaCha8Rng::seed_from_u64(0));
        assert_eq!(n.scale_at(0), 1.0);
        assert!((n.scale_at(25_000) - 0.5005).abs() < 1e-12);
        assert_eq!(n.scale_at(50_000), 0.001);
        assert_eq!(n.scale_at(90_000), 0.001);
        assert!((0..60_000).step_by(1000).all(|s| n.scale_at(s + 1000) <= n.scale_at(s)));
    }

    #[test]
    fn constraint_loss_vanishes_on_target() {
        let mut h = handle();
        h.critic_target = h.critic.clone();
        let batch = random_batch(4, 16);
        let on_target: Vec<Tagged> = batch
            .iter()
            .map(|t| {
                let mut e = (*t.exp).clone();
                e.pvr = 0.4;
                Tagged {
                    exp: Arc::new(e),
                    constraint_id: 2,
                }
            })
            .collect();
        let refs: Vec<&Tagged> = on_target.iter().collect();
        let spec = ConstraintSpec::default();
        let lp = LossParams::from(&LowerConfig::default());
        let l = critic_loss(&refs, &h, &spec, lp).unwrap();
        assert_eq!(l.l_c, 0.0);
    }

    #[test]
    fn terminal_zero_reward_zero_q_has_no_td_error() {
        let mut h = handle();
        h.critic = Params::zeros(h.critic.spec.clone()).unwrap();
        h.critic_target = h.critic.clone();
        let t = tagged(vec![0.2; 46], vec![0.0; 15], 0.0, 0.4, true);
        let spec = ConstraintSpec::default();
        let lp = LossParams::from(&LowerConfig::default());
        let l = critic_loss(&[&t], &h, &spec, lp).unwrap();
        assert_eq!(l.l_rl, 0.0);
    }

    #[test]
    fn loss_is_affine_in_weight() {
        let h = handle();
        let batch = random_batch(5, 32);
        let refs: Vec<&Tagged> = batch.iter().collect();
        let spec = ConstraintSpec::default();
        let mut lp = LossParams::from(&LowerConfig::default());
        let at = |w: f64, lp: &mut LossParams| {
            lp.weight = w;
            critic_loss(&refs, &h, &spec, *lp).unwrap()
        };
        let l0 = at(0.0, &mut lp);
        assert_eq!(l0.total, l0.l_rl);
        let l1 = at(1.0, &mut lp);
        let l10 = at(10.0, &mut lp);
        assert!((l10.total - (l0.total + 10.0 * (l1.total - l0.total))).abs() < 1e-9);
    }

    #[test]
    fn critic_loss_rejects_foreign_tags_and_empty_batch() {
        let h = handle();
        let spec = ConstraintSpec::default();
        let lp = LossParams::from(&LowerConfig::default());
        assert!(critic_loss(&[], &h, &spec, lp).is_err());
        let mut t = tagged(vec![0.2; 46], vec![0.0; 15], 0.0, 0.4, true);
        t.constraint_id = 1;
        assert!(critic_loss(&[&t], &h, &spec, lp).is_err());
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let h = handle();
        let batch = random_batch(6, 8);
        let refs: Vec<&Tagged> = batch.iter().collect();
        let spec = ConstraintSpec::default();
        let lp = LossParams {
            gamma: 0.0,
            ..LossParams::from(&LowerConfig::default())
        };
        let l = critic_loss(&refs, &h, &spec, lp).unwrap();
        let eps = 1e-5;
        for i in (0..h.critic.len()).step_by(37) {
            let mut p = h.clone();
            p.critic.values[i] += eps;
            let up = critic_loss(&refs, &p, &spec, lp).unwrap().total;
            p.critic.values[i] -= 2.0 * eps;
            let down = critic_loss(&refs, &p, &spec, lp).unwrap().total;
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - l.grads[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", l.grads[i]);
        }
    }

    #[test]
    fn update_stats_are_finite_and_reproducible() {
        let spec = ConstraintSpec::default();
        let cfg = LowerConfig::default();
        let mut buf = CherBuffer::new(1000);
        for t in random_batch(7, 200) {
            buf.push(t);
        }
        let run = || {
            let mut h = handle();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let s1 = update_step(&mut h, &buf, &spec, &cfg, &mut rng).unwrap();
            let s2 = update_step(&mut h, &buf, &spec, &cfg, &mut rng).unwrap();
            (s1, s2, h.actor.values)
        };
        let (a, b, p) = run();
        assert!(a.l_rl.is_finite() && a.l_c.is_finite() && a.mean_q.is_finite());
        assert_eq!(run(), (a, b, p));
    }

    #[test]
    fn critic_only_steps_shrink_constraint_loss() {
        let spec = ConstraintSpec::default();
        let cfg = LowerConfig {
            critic_lr: 1e-3,
            ..LowerConfig::default()
        };
        let lp = LossParams::from(&cfg);
        let batch = random_batch(8, 64);
        let refs: Vec<&Tagged> = batch.iter().collect();
        let mut h = handle();
        let initial = critic_loss(&refs, &h, &spec, lp).unwrap().l_c;
        for _ in 0..500 {
            let l = critic_loss(&refs, &h, &spec, lp).unwrap();
            opt_step(&mut h.critic, &l.grads, &mut h.critic_opt).unwrap();
        }
        let after = critic_loss(&refs, &h, &spec, lp).unwrap().l_c;
        assert!(after < initial, "L_C {initial} -> {after}");
    }
}
