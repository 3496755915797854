use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    abstract_reward, abstract_state, choose_constraint, dqn_update, AbstractState,
    AbstractTransition, Ccp, DqnNets, HigherConfig, PerBuffer, StateLayout,
};
use crate::env::{DayMetrics, DaySource, DayStream, ExposureOutcome};
use crate::error::{contract, Error, Result};
use crate::lower::{act_with, PolicySet};
use crate::neural::{Checkpoint, OptState};
use crate::pscmdp::{ConstraintSpec, EpisodeContext, Simulator};
use crate::seeds::{derive_seed, STREAM_INIT, STREAM_SAMPLING};

/// One decision interval of a two-level rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub start_hour: u32,
    pub constraint_id: usize,
    pub target: f64,
    pub state: AbstractState,
    pub revenue: f64,
    pub ads: usize,
    pub slots: usize,
    pub requests: usize,
}

impl SegmentRecord {
    pub fn pvr(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.ads as f64 / self.slots as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelRollout {
    pub day_id: u64,
    pub metrics: DayMetrics,
    pub segments: Vec<SegmentRecord>,
    /// Abstract state after the last request.
    pub terminal_state: AbstractState,
    pub outcomes: Vec<ExposureOutcome>,
}

/// Rolls out `day`, asking `choose` for a constraint at every interval
/// boundary and running the matching frozen policy greedily until the next.
pub fn rollout_with<F>(
    sim: &Simulator,
    set: &PolicySet,
    day: &DayStream,
    layout: &StateLayout,
    mut choose: F,
) -> Result<TwoLevelRollout>
where
    F: FnMut(&AbstractState) -> Result<usize>,
{
    let mut ctx = EpisodeContext::new(day);
    let mut prev = None;
    let mut segments = Vec::with_capacity(layout.decisions_per_day());
    let dh = layout.decision_hours;
    while let Some(first) = ctx.current() {
        let state = abstract_state(&ctx, prev, layout)?;
        let c = choose(&state)?;
        let policy = set.get(c)?;
        let interval = first.hour / dh;
        let (start, ads0, slots0) = (ctx.cursor, ctx.cum_ads, ctx.cum_slots);
        while ctx.current().is_some_and(|r| r.hour / dh == interval) {
            let s = sim.observe(&ctx)?;
            let a = act_with(&policy.actor, &s, sim.env.bounds, None)?;
            sim.step(&mut ctx, &a)?;
        }
        segments.push(SegmentRecord {
            start_hour: interval * dh,
            constraint_id: c,
            target: policy.target,
            state,
            revenue: ctx.outcomes[start..].iter().map(|o| o.revenue).sum(),
            ads: ctx.cum_ads - ads0,
            slots: ctx.cum_slots - slots0,
            requests: ctx.cursor - start,
        });
        prev = Some(c);
    }
    let terminal_state = abstract_state(&ctx, prev, layout)?;
    Ok(TwoLevelRollout {
        day_id: day.day_id,
        metrics: ctx.metrics()?,
        segments,
        terminal_state,
        outcomes: ctx.outcomes,
    })
}

/// Greedy two-level rollout of a trained choice policy.
pub fn rollout_two_level(
    sim: &Simulator,
    ccp: &Ccp,
    set: &PolicySet,
    day: &DayStream,
) -> Result<TwoLevelRollout> {
    set.covers(&ccp.targets)?;
    rollout_with(sim, set, day, &ccp.layout, |s| ccp.greedy(s))
}

/// Per-day training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcpDay {
    pub day: usize,
    pub epsilon: f64,
    pub day_pvr: f64,
    pub revenue: f64,
    pub shaped_return: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct CcpRun {
    pub ccp: Ccp,
    pub days: Vec<CcpDay>,
}

fn day_hours(day: &DayStream) -> Result<u32> {
    day.requests
        .iter()
        .map(|r| r.hour + 1)
        .max()
        .ok_or_else(|| Error::Contract("empty day".into()))
}

/// Converts a finished day into abstract transitions.
pub fn day_transitions(
    roll: &TwoLevelRollout,
    layout: &StateLayout,
    alpha: f64,
    w2: f64,
) -> Vec<AbstractTransition> {
    let n = roll.segments.len();
    roll.segments
        .iter()
        .enumerate()
        .map(|(k, seg)| {
            let last = k + 1 == n;
            let next = if last {
                &roll.terminal_state
            } else {
                &roll.segments[k + 1].state
            };
            AbstractTransition {
                state: seg.state.0.clone(),
                action: seg.constraint_id,
                reward: abstract_reward(
                    seg.revenue / layout.revenue_scale,
                    last.then_some(roll.metrics.pvr),
                    alpha,
                    w2,
                ),
                next_state: next.0.clone(),
                terminal: last,
            }
        })
        .collect()
}

/// Trains the constraint-choice policy on `cfg.train_days` days of `days`
/// with the lower-level policies frozen. Day revenue is normalized by the
/// revenue of the policy whose target is closest to `alpha` on the first day.
pub fn train_ccp(
    sim: &Simulator,
    set: &PolicySet,
    spec: &ConstraintSpec,
    cfg: &HigherConfig,
    days: &dyn DaySource,
    seed: u64,
) -> Result<CcpRun> {
    cfg.validate()?;
    spec.validate()?;
    set.covers(&spec.targets)?;
    contract!(
        days.num_days() >= cfg.train_days,
        "{} training days requested, source has {}",
        cfg.train_days,
        days.num_days()
    );
    let first = days.day(0)?;
    let hours = day_hours(&first)?;
    let n = spec.targets.len();
    let anchor = (0..n)
        .min_by(|a, b| {
            let da = (spec.targets[*a] - spec.alpha).abs();
            let db = (spec.targets[*b] - spec.alpha).abs();
            da.total_cmp(&db)
        })
        .expect("nonempty targets");
    let probe = StateLayout {
        hours,
        decision_hours: cfg.decision_hours,
        n_choices: n,
        revenue_scale: 1.0,
    };
    let scale = rollout_with(sim, set, &first, &probe, |_| Ok(anchor))?.metrics.revenue;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Calibration(format!("reference day revenue {scale} is not positive")));
    }
    let layout = StateLayout {
        revenue_scale: scale,
        ..probe
    };

    let mut nets = DqnNets::new(
        layout.dim(),
        &cfg.hidden,
        n,
        cfg.lr,
        derive_seed(seed, STREAM_INIT, 1 << 20),
    )?;
    let mut buffer = PerBuffer::new(cfg.buffer_capacity, cfg.per_alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SAMPLING, 1 << 20));
    let total = (cfg.train_days * layout.decisions_per_day()) as f64;
    let mut decisions = 0u64;
    let mut log = Vec::with_capacity(cfg.train_days);

    for d in 0..cfg.train_days {
        let day = days.day(d)?;
        let eps_day = cfg.epsilon_at(decisions);
        let roll = rollout_with(sim, set, &day, &layout, |s| {
            let eps = cfg.epsilon_at(decisions);
            decisions += 1;
            choose_constraint(&nets.online, s, eps, &mut rng)
        })?;
        let transitions = day_transitions(&roll, &layout, spec.alpha, cfg.w2);
        let shaped_return = transitions.iter().map(|t| t.reward).sum();
        let mut loss = 0.0;
        let mut updates = 0;
        for t in transitions {
            buffer.push(t);
            if buffer.len() < cfg.batch_size {
                continue;
            }
            for _ in 0..cfg.updates_per_decision {
                let frac = (decisions as f64 / total).min(1.0);
                let beta = cfg.per_beta_start + (cfg.per_beta_end - cfg.per_beta_start) * frac;
                let st = dqn_update(
                    &mut nets,
                    &mut buffer,
                    cfg.batch_size,
                    cfg.gamma,
                    beta,
                    cfg.per_eps,
                    cfg.target_sync_every,
                    &mut rng,
                )?;
                loss += st.loss;
                updates += 1;
            }
        }
        log.push(CcpDay {
            day: d,
            epsilon: eps_day,
            day_pvr: roll.metrics.pvr,
            revenue: roll.metrics.revenue,
            shaped_return,
            loss: if updates == 0 { 0.0 } else { loss / updates as f64 },
        });
    }
    Ok(CcpRun {
        ccp: Ccp {
            nets,
            layout,
            targets: spec.targets.clone(),
        },
        days: log,
    })
}

pub const CCP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CcpFile {
    version: u32,
    layout: StateLayout,
    targets: Vec<f64>,
    lr: f64,
    net: Checkpoint,
}

pub fn save_ccp(ccp: &Ccp, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = CcpFile {
        version: CCP_VERSION,
        layout: ccp.layout,
        targets: ccp.targets.clone(),
        lr: ccp.nets.opt.lr,
        net: Checkpoint::from(&ccp.nets.online),
    };
    fs::write(path, serde_json::to_string(&f)?).map_err(|e| Error::io(path, e))
}

pub fn load_ccp(path: impl AsRef<Path>) -> Result<Ccp> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: CcpFile = serde_json::from_str(&text)?;
    if f.version != CCP_VERSION {
        return Err(Error::Config(format!("unsupported CCP checkpoint version {}", f.version)));
    }
    let online = f.net.into_params()?;
    contract!(
        online.input_len() == f.layout.dim() && online.output_len() == f.targets.len(),
        "CCP network shape does not match its layout"
    );
    Ok(Ccp {
        nets: DqnNets {
            target: online.clone(),
            opt: OptState::new(&online, f.lr),
            online,
            updates: 0,
        },
        layout: f.layout,
        targets: f.targets,
    })
}

/// Writes `day,hour,target,revenue,pvr`, one row per decision interval.
pub fn write_choice_log<W: Write>(rollouts: &[TwoLevelRollout], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["day", "hour", "target", "revenue", "pvr"])?;
    for r in rollouts {
        for s in &r.segments {
            out.write_record([
                r.day_id.to_string(),
                s.start_hour.to_string(),
                s.target.to_string(),
                s.revenue.to_string(),
                s.pvr().to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("<choice log>", e))
}
