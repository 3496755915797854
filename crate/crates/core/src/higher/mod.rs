//! Hour-level constraint choice. A dueling double DQN picks which trained
//! request-level policy governs each decision interval; its reward is the
//! interval's revenue plus, at the end of the day, a weighted penalty on the
//! distance between the realized day PVR and the platform bound.

mod per;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::neural::{opt_step, sync_target, Cache, NetSpec, OptState, Params};
use crate::pscmdp::EpisodeContext;

pub use per::{AbstractTransition, PerBuffer, PerSample};
pub use train::{
    day_transitions, load_ccp, rollout_two_level, rollout_with, save_ccp, train_ccp, write_choice_log, CcpDay, CcpRun,
    SegmentRecord, TwoLevelRollout,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HigherConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Decisions over which exploration decays linearly.
    pub eps_decay_steps: u64,
    /// Updates between hard target copies.
    pub target_sync_every: u64,
    pub per_alpha: f64,
    pub per_beta_start: f64,
    pub per_beta_end: f64,
    pub per_eps: f64,
    /// Weight of the day-end PVR penalty, in units of normalized day revenue.
    pub w2: f64,
    pub train_days: usize,
    /// Hours per decision interval.
    pub decision_hours: u32,
    pub updates_per_decision: usize,
}

impl Default for HigherConfig {
    fn default() -> Self {
        HigherConfig {
            hidden: vec![20],
            lr: 0.0006,
            buffer_capacity: 5000,
            batch_size: 32,
            gamma: 1.0,
            eps_start: 1.0,
            eps_end: 0.001,
            eps_decay_steps: 1000,
            target_sync_every: 200,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            per_eps: 1e-3,
            w2: 20.0,
            train_days: 1000,
            decision_hours: 1,
            updates_per_decision: 4,
        }
    }
}

impl HigherConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("higher hidden layers must be nonempty and positive");
        }
        if !(self.lr > 0.0) {
            return bad("higher learning rate must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity <= self.batch_size {
            return bad("higher buffer capacity must exceed a positive batch size");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("higher gamma must lie in [0,1]");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=self.eps_start).contains(&self.eps_end) {
            return bad("exploration must decay within [0,1]");
        }
        if self.target_sync_every == 0 || self.decision_hours == 0 || self.train_days == 0 {
            return bad("target_sync_every, decision_hours and train_days must be positive");
        }
        if !(self.per_alpha >= 0.0 && self.per_eps > 0.0) {
            return bad("per_alpha must be >= 0 and per_eps > 0");
        }
        if !(0.0..=1.0).contains(&self.per_beta_start) || !(0.0..=1.0).contains(&self.per_beta_end) {
            return bad("importance exponents must lie in [0,1]");
        }
        if !(self.w2 >= 0.0 && self.w2.is_finite()) {
            return bad("w2 must be nonnegative");
        }
        Ok(())
    }

    pub fn epsilon_at(&self, decisions: u64) -> f64 {
        if decisions >= self.eps_decay_steps {
            return self.eps_end;
        }
        let frac = decisions as f64 / self.eps_decay_steps as f64;
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

/// What an abstract state is normalized against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateLayout {
    pub hours: u32,
    pub decision_hours: u32,
    pub n_choices: usize,
    /// Typical day revenue; revenues in the state and reward are divided by it.
    pub revenue_scale: f64,
}

impl StateLayout {
    pub fn dim(&self) -> usize {
        5 + self.n_choices
    }

    pub fn decisions_per_day(&self) -> usize {
        self.hours.div_ceil(self.decision_hours) as usize
    }

    fn interval_scale(&self) -> f64 {
        self.revenue_scale * self.decision_hours as f64 / self.hours as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractState(pub Vec<f64>);

/// First hour of the interval starting at the cursor (the day length once
/// terminal).
fn boundary_hour(ctx: &EpisodeContext<'_>, layout: &StateLayout) -> Result<u32> {
    let Some(req) = ctx.current() else {
        return Ok(layout.hours);
    };
    let dh = layout.decision_hours;
    let fresh = ctx.cursor == 0 || ctx.day.requests[ctx.cursor - 1].hour / dh != req.hour / dh;
    contract!(fresh, "request {} is not at a decision boundary", ctx.cursor);
    Ok(req.hour - req.hour % dh)
}

/// Day-so-far summary at a decision boundary: normalized hour, cumulative PVR,
/// cumulative revenue, previous interval's revenue and PVR, and a one-hot of
/// the previous choice.
pub fn abstract_state(
    ctx: &EpisodeContext<'_>,
    prev_choice: Option<usize>,
    layout: &StateLayout,
) -> Result<AbstractState> {
    let hour = boundary_hour(ctx, layout)?;
    let lo = hour.saturating_sub(layout.decision_hours) as usize;
    let prev = &ctx.hours[lo.min(ctx.hours.len())..(hour as usize).min(ctx.hours.len())];
    let prev_rev: f64 = prev.iter().map(|h| h.revenue).sum();
    let (ads, slots) = prev.iter().fold((0, 0), |(a, s), h| (a + h.ads, s + h.slots));
    let prev_pvr = if slots == 0 { 0.0 } else { ads as f64 / slots as f64 };
    let mut v = Vec::with_capacity(layout.dim());
    v.push(hour as f64 / layout.hours as f64);
    v.push(ctx.running_pvr());
    v.push(ctx.cum_revenue / layout.revenue_scale);
    v.push(prev_rev / layout.interval_scale());
    v.push(prev_pvr);
    v.extend((0..layout.n_choices).map(|c| if prev_choice == Some(c) { 1.0 } else { 0.0 }));
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Encoding(format!("abstract feature {i} is not finite")));
    }
    Ok(AbstractState(v))
}

/// `r^ab + w2 * r^tau` with `r^tau = -|day PVR - alpha|` on the day's last
/// interval and zero before.
pub fn abstract_reward(sub_revenue: f64, day_end: Option<f64>, alpha: f64, w2: f64) -> f64 {
    match day_end {
        Some(pvr) => sub_revenue + w2 * -(pvr - alpha).abs(),
        None => sub_revenue,
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice over the dueling Q-values.
pub fn choose_constraint<R: Rng>(net: &Params, s: &AbstractState, epsilon: f64, rng: &mut R) -> Result<usize> {
    contract!((0.0..=1.0).contains(&epsilon), "epsilon {epsilon} outside [0,1]");
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..net.output_len()));
    }
    Ok(argmax(&net.forward(&s.0)?))
}

/// Online and target dueling networks with their optimizer.
#[derive(Debug, Clone)]
pub struct DqnNets {
    pub online: Params,
    pub target: Params,
    pub opt: OptState,
    pub updates: u64,
}

impl DqnNets {
    pub fn new(input: usize, hidden: &[usize], n_actions: usize, lr: f64, seed: u64) -> Result<Self> {
        let online = Params::init(NetSpec::dueling(input, hidden, n_actions), seed)?;
        Ok(DqnNets {
            target: online.clone(),
            opt: OptState::new(&online, lr),
            online,
            updates: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnStats {
    pub loss: f64,
    pub mean_q: f64,
    pub samples: Vec<PerSample>,
    pub td_errors: Vec<f64>,
}

/// Double-DQN target for one transition: `r` when terminal, otherwise
/// `r + gamma * Q_target(s', argmax_a Q_online(s', a))`.
pub fn double_target(nets: &DqnNets, t: &AbstractTransition, gamma: f64) -> Result<f64> {
    if t.terminal {
        return Ok(t.reward);
    }
    let a = argmax(&nets.online.forward(&t.next_state)?);
    Ok(t.reward + gamma * nets.target.forward(&t.next_state)?[a])
}

/// One importance-weighted TD step on a prioritized batch, priority refresh to
/// `|td| + per_eps`, and a hard target copy every `sync_every` updates.
#[allow(clippy::too_many_arguments)]
pub fn dqn_update<R: Rng>(
    nets: &mut DqnNets,
    buffer: &mut PerBuffer,
    batch: usize,
    gamma: f64,
    beta: f64,
    per_eps: f64,
    sync_every: u64,
    rng: &mut R,
) -> Result<DqnStats> {
    contract!(buffer.len() >= batch, "buffer holds {} items, batch needs {batch}", buffer.len());
    let samples = buffer.sample(rng, batch, beta)?;
    let n = batch as f64;
    let mut grads = nets.online.zero_grads();
    let mut cache = Cache::default();
    let (mut loss, mut sum_q) = (0.0, 0.0);
    let mut td_errors = Vec::with_capacity(batch);
    for s in &samples {
        let t = buffer.get(s.index);
        let y = double_target(nets, t, gamma)?;
        let q = nets.online.forward_cached(&t.state, &mut cache)?[t.action];
        let td = y - q;
        loss += s.weight * td * td / n;
        sum_q += q;
        let mut g = vec![0.0; nets.online.output_len()];
        g[t.action] = -2.0 * s.weight * td / n;
        nets.online.backward(&cache, &g, &mut grads)?;
        td_errors.push(td);
    }
    if !loss.is_finite() {
        return Err(Error::Training("non-finite DQN loss".into()));
    }
    opt_step(&mut nets.online, &grads, &mut nets.opt)?;
    for (s, td) in samples.iter().zip(&td_errors) {
        buffer.update_priority(s.index, td.abs() + per_eps)?;
    }
    nets.updates += 1;
    if nets.updates % sync_every == 0 {
        sync_target(&mut nets.target, &nets.online, 1.0)?;
    }
    Ok(DqnStats {
        loss,
        mean_q: sum_q / n,
        samples,
        td_errors,
    })
}

/// A trained constraint-choice policy together with its state normalization.
#[derive(Debug, Clone)]
pub struct Ccp {
    pub nets: DqnNets,
    pub layout: StateLayout,
    pub targets: Vec<f64>,
}

impl Ccp {
    pub fn greedy(&self, s: &AbstractState) -> Result<usize> {
        Ok(argmax(&self.nets.online.forward(&s.0)?))
    }
}
