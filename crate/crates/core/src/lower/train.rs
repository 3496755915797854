use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    act_with, normalize_action, save_policy_set, update_step, CherBuffer, Experience,
    LowerConfig, NoiseProcess, PolicyHandle, PolicySet, Tagged, UpdateStats,
};
use crate::env::{DaySource, DayStream};
use crate::error::{contract, Error, Result};
use crate::pscmdp::{ConstraintSpec, EpisodeContext, Simulator};
use crate::seeds::{derive_seed, STREAM_BEHAVIOR, STREAM_NOISE, STREAM_SAMPLING};

/// Greedy evaluation of one policy over a set of days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerEval {
    pub target: f64,
    /// Mean of the per-request PVR.
    pub mean_pvr: f64,
    /// Pooled PVR over all evaluated requests.
    pub day_pvr: f64,
    /// Mean of `|PVR_i - target|` over requests.
    pub mean_abs_deviation: f64,
    /// `|day_pvr - target|`.
    pub day_gap: f64,
    /// Total revenue over all days.
    pub revenue: f64,
    pub cap_violations: usize,
    pub requests: usize,
    pub days: usize,
}

/// Deterministic rollout of `policy` without exploration.
pub fn eval_lower(
    sim: &Simulator,
    policy: &PolicyHandle,
    days: &[DayStream],
    spec: &ConstraintSpec,
) -> Result<LowerEval> {
    contract!(!days.is_empty(), "eval_lower needs at least one day");
    let (mut sum_pvr, mut sum_dev, mut revenue) = (0.0, 0.0, 0.0);
    let (mut ads, mut slots, mut requests, mut cap_violations) = (0usize, 0usize, 0usize, 0usize);
    for day in days {
        let ctx = sim.rollout(day, |s, _| act_with(&policy.actor, s, sim.env.bounds, None))?;
        for o in &ctx.outcomes {
            sum_pvr += o.pvr;
            sum_dev += (o.pvr - policy.target).abs();
            revenue += o.revenue;
            if o.pvr > spec.beta {
                cap_violations += 1;
            }
        }
        ads += ctx.cum_ads;
        slots += ctx.cum_slots;
        requests += ctx.outcomes.len();
    }
    let day_pvr = if slots == 0 { 0.0 } else { ads as f64 / slots as f64 };
    Ok(LowerEval {
        target: policy.target,
        mean_pvr: sum_pvr / requests as f64,
        day_pvr,
        mean_abs_deviation: sum_dev / requests as f64,
        day_gap: (day_pvr - policy.target).abs(),
        revenue,
        cap_violations,
        requests,
        days: days.len(),
    })
}

/// One learning-curve sample for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub constraint_id: usize,
    pub target: f64,
    pub mean_abs_deviation: f64,
    pub day_gap: f64,
    pub revenue: f64,
}

/// Writes `step,target,mean_abs_deviation,revenue` rows.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "target", "mean_abs_deviation", "revenue"])?;
    for p in points {
        out.write_record([
            p.step.to_string(),
            p.target.to_string(),
            p.mean_abs_deviation.to_string(),
            p.revenue.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<curve csv>", e))
}

/// Collects experience with a behavior policy, relabels it across the
/// constraint set (or not) and updates every policy on a fixed cadence.
#[derive(Debug, Clone)]
pub struct LowerTrainer {
    pub sim: Simulator,
    pub spec: ConstraintSpec,
    pub cfg: LowerConfig,
    pub policies: Vec<PolicyHandle>,
    pub buffers: Vec<CherBuffer>,
    noise: NoiseProcess,
    sample_rng: ChaCha8Rng,
    behavior_rng: ChaCha8Rng,
    steps: u64,
    collected: u64,
    last_stats: Vec<Option<UpdateStats>>,
}

impl LowerTrainer {
    pub fn new(
        sim: Simulator,
        spec: ConstraintSpec,
        cfg: LowerConfig,
        n_ads: usize,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        let policies = spec
            .targets
            .iter()
            .enumerate()
            .map(|(i, t)| PolicyHandle::new(i, *t, n_ads, &cfg, seed))
            .collect::<Result<Vec<_>>>()?;
        let buffers = spec.targets.iter().map(|_| CherBuffer::new(cfg.buffer_capacity)).collect();
        let noise = NoiseProcess::new(
            cfg.noise_start,
            cfg.noise_end,
            cfg.noise_decay_steps,
            ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_NOISE, 0)),
        );
        Ok(LowerTrainer {
            last_stats: vec![None; spec.targets.len()],
            sim,
            spec,
            cfg,
            policies,
            buffers,
            noise,
            sample_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SAMPLING, 0)),
            behavior_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_BEHAVIOR, 0)),
            steps: 0,
            collected: 0,
        })
    }

    /// Environment steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Transitions collected so far (before relabeling).
    pub fn collected(&self) -> u64 {
        self.collected
    }

    pub fn last_stats(&self) -> &[Option<UpdateStats>] {
        &self.last_stats
    }

    pub fn policy_set(&self) -> PolicySet {
        PolicySet {
            policies: self.policies.clone(),
        }
    }

    /// Stores one collected experience: a tagged copy per constraint with
    /// relabeling on, only the behavior constraint's copy otherwise.
    pub fn store(&mut self, exp: Experience) -> Result<()> {
        contract!(
            exp.source_constraint < self.spec.targets.len(),
            "experience collected under unknown constraint {}",
            exp.source_constraint
        );
        let exp = Arc::new(exp);
        if self.cfg.cher {
            for (c, buf) in self.buffers.iter_mut().enumerate() {
                buf.push(Tagged {
                    exp: Arc::clone(&exp),
                    constraint_id: c,
                });
            }
        } else {
            let c = exp.source_constraint;
            self.buffers[c].push(Tagged { exp, constraint_id: c });
        }
        self.collected += 1;
        Ok(())
    }

    /// One update for every policy whose buffer is past warmup.
    pub fn update_round(&mut self) -> Result<()> {
        for (i, policy) in self.policies.iter_mut().enumerate() {
            if self.buffers[i].len() < self.cfg.warmup {
                continue;
            }
            let stats = update_step(policy, &self.buffers[i], &self.spec, &self.cfg, &mut self.sample_rng)?;
            self.last_stats[i] = Some(stats);
        }
        Ok(())
    }

    /// Behavior constraint for the next episode, uniform over the set.
    pub fn sample_behavior(&mut self) -> usize {
        self.behavior_rng.random_range(0..self.spec.targets.len())
    }

    /// Runs one exploratory episode over `day` under constraint `behavior`,
    /// storing and updating as it goes. `on_step` sees the step count after
    /// every environment step and may run evaluations.
    pub fn run_episode<F>(&mut self, day: &DayStream, behavior: usize, mut on_step: F) -> Result<()>
    where
        F: FnMut(&LowerTrainer) -> Result<bool>,
    {
        contract!(behavior < self.policies.len(), "behavior constraint {behavior} unknown");
        let bounds = self.sim.env.bounds;
        let mut ctx = EpisodeContext::new(day);
        let mut state = self.sim.observe(&ctx)?;
        while !ctx.is_terminal() {
            let action = act_with(&self.policies[behavior].actor, &state, bounds, Some(&mut self.noise))?;
            self.noise.advance();
            let step = self.sim.step(&mut ctx, &action)?;
            let terminal = step.next_state.is_none();
            let next_state = step
                .next_state
                .clone()
                .unwrap_or_else(|| crate::pscmdp::State(vec![0.0; state.len()]));
            self.store(Experience {
                state: std::mem::take(&mut state.0),
                action: normalize_action(&action.0, bounds),
                reward: step.reward,
                next_state: next_state.0.clone(),
                pvr: step.outcome.pvr,
                terminal,
                source_constraint: behavior,
            })?;
            state = next_state;
            self.steps += 1;
            if self.steps % self.cfg.update_every as u64 == 0 {
                self.update_round()?;
            }
            if !on_step(self)? {
                break;
            }
        }
        Ok(())
    }

    /// Greedy curve points for every policy on `days`.
    pub fn evaluate(&self, days: &[DayStream]) -> Result<Vec<CurvePoint>> {
        self.policies
            .iter()
            .map(|p| {
                let e = eval_lower(&self.sim, p, days, &self.spec)?;
                Ok(CurvePoint {
                    step: self.steps,
                    constraint_id: p.constraint_id,
                    target: p.target,
                    mean_abs_deviation: e.mean_abs_deviation,
                    day_gap: e.day_gap,
                    revenue: e.revenue / days.len() as f64,
                })
            })
            .collect()
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct LowerRun {
    pub policy_set: PolicySet,
    pub curves: Vec<CurvePoint>,
    pub steps: u64,
    pub collected: u64,
}

/// Run controls that are not hyperparameters.
#[derive(Debug, Clone, Default)]
pub struct LowerRunOptions {
    pub seed: u64,
    /// Stop after this many environment steps.
    pub max_steps: Option<u64>,
    /// Where the last evaluated policy set is written if training diverges.
    pub rescue_dir: Option<PathBuf>,
}

/// Per-target snapshot with the lowest validation score seen so far.
struct Best {
    scores: Vec<f64>,
    policies: Vec<PolicyHandle>,
}

fn validation_score(p: &CurvePoint) -> f64 {
    p.mean_abs_deviation + p.day_gap
}

impl Best {
    fn new(t: &LowerTrainer, initial: &[CurvePoint]) -> Self {
        Best {
            scores: initial.iter().map(validation_score).collect(),
            policies: t.policies.clone(),
        }
    }

    fn offer(&mut self, t: &LowerTrainer, pts: &[CurvePoint]) {
        for p in pts {
            let c = p.constraint_id;
            let s = validation_score(p);
            if s < self.scores[c] {
                self.scores[c] = s;
                self.policies[c] = t.policies[c].clone();
            }
        }
    }
}

/// Trains one policy per target over `cfg.train_days` days of `train`,
/// evaluating every `cfg.eval_every` steps on `curve_days`. With
/// `cfg.select_best` the returned set holds each target's best-scoring
/// evaluated snapshot.
pub fn train_lower(
    sim: &Simulator,
    spec: &ConstraintSpec,
    cfg: &LowerConfig,
    train: &dyn DaySource,
    curve_days: &[DayStream],
    opts: &LowerRunOptions,
) -> Result<LowerRun> {
    contract!(
        curve_days.first().is_some_and(|d| !d.is_empty()),
        "learning curves need at least one nonempty evaluation day"
    );
    contract!(
        train.num_days() >= cfg.train_days,
        "{} training days requested, source has {}",
        cfg.train_days,
        train.num_days()
    );
    let n_ads = curve_days[0].requests[0].ads.len();
    let mut trainer = LowerTrainer::new(sim.clone(), spec.clone(), cfg.clone(), n_ads, opts.seed)?;
    let mut curves = trainer.evaluate(curve_days)?;
    let mut last_good = trainer.policy_set();
    let mut best = Best::new(&trainer, &curves);
    let limit = opts.max_steps.unwrap_or(u64::MAX);
    let eval_every = cfg.eval_every as u64;

    let outcome = (|| -> Result<()> {
        for d in 0..cfg.train_days {
            if trainer.steps() >= limit {
                break;
            }
            let day = train.day(d)?;
            let behavior = trainer.sample_behavior();
            trainer.run_episode(&day, behavior, |t| {
                if t.steps() % eval_every == 0 {
                    let pts = t.evaluate(curve_days)?;
                    if pts.iter().any(|p| !p.mean_abs_deviation.is_finite() || !p.revenue.is_finite()) {
                        return Err(Error::Training(format!("non-finite evaluation at step {}", t.steps())));
                    }
                    best.offer(t, &pts);
                    curves.extend(pts);
                    last_good = t.policy_set();
                }
                Ok(t.steps() < limit)
            })?;
        }
        Ok(())
    })();

    if let Err(e) = outcome {
        if let (Error::Training(_), Some(dir)) = (&e, &opts.rescue_dir) {
            save_policy_set(&last_good, dir, "diverged")?;
        }
        return Err(e);
    }
    if curves.last().map(|p| p.step) != Some(trainer.steps()) {
        let pts = trainer.evaluate(curve_days)?;
        best.offer(&trainer, &pts);
        curves.extend(pts);
    }
    let policy_set = if cfg.select_best {
        PolicySet { policies: best.policies }
    } else {
        trainer.policy_set()
    };
    Ok(LowerRun {
        policy_set,
        steps: trainer.steps(),
        collected: trainer.collected(),
        curves,
    })
}
