//! Constrained MDP over a day of requests.
//!
//! One step consumes one request: the state describes the request's candidate
//! ads plus the running ad fraction of the day, the action is one score
//! coefficient per ad, and the reward is the request's revenue. Every step
//! carries its own per-request constraint (the request PVR) next to the usual
//! day-level one.

use serde::{Deserialize, Serialize};

use crate::env::{day_metrics, DayMetrics, DayStream, Env, ExposureOutcome, GenConfig, Request};
use crate::error::{contract, Error, Result};

/// Encoded observation: three scaled features per candidate ad followed by the
/// running day PVR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State(pub Vec<f64>);

impl State {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One score coefficient per candidate ad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action(pub Vec<f64>);

impl Action {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn state_dim(n_ads: usize) -> usize {
    3 * n_ads + 1
}

/// Request-level targets plus the per-request cap and day-level bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintSpec {
    pub alpha: f64,
    pub beta: f64,
    pub targets: Vec<f64>,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        ConstraintSpec {
            alpha: 0.35,
            beta: 0.5,
            targets: vec![0.30, 0.35, 0.40, 0.45, 0.50],
        }
    }
}

impl ConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} outside (0,1]", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta {} outside (0,1]", self.beta));
        }
        if self.alpha > self.beta {
            return bad(format!("alpha {} exceeds beta {}", self.alpha, self.beta));
        }
        if self.targets.is_empty() {
            return bad("target set is empty".into());
        }
        if self.targets.iter().any(|t| !(*t > 0.0 && *t <= self.beta)) {
            return bad(format!("targets must lie in (0, beta={}]", self.beta));
        }
        if self.targets.windows(2).any(|w| w[1] <= w[0]) {
            return bad("targets must be strictly increasing".into());
        }
        Ok(())
    }

    pub fn target(&self, constraint_id: usize) -> Result<f64> {
        self.targets.get(constraint_id).copied().ok_or_else(|| {
            Error::Contract(format!(
                "constraint id {constraint_id} outside 0..{}",
                self.targets.len()
            ))
        })
    }
}

/// Shape of the per-request penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaForm {
    /// `-|pvr - target|`
    #[default]
    Absolute,
    /// `-(pvr - target)^2`
    Quadratic,
}

impl DeltaForm {
    pub fn eval(self, pvr: f64, target: f64) -> f64 {
        match self {
            DeltaForm::Absolute => -(pvr - target).abs(),
            DeltaForm::Quadratic => -(pvr - target) * (pvr - target),
        }
    }
}

/// Quadratic per-request penalty `-(pvr_i - target)^2`.
pub fn delta_cs(outcome: &ExposureOutcome, target: f64) -> f64 {
    DeltaForm::Quadratic.eval(outcome.pvr, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    fn scale(&self, v: f64) -> f64 {
        if self.hi > self.lo {
            ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    fn cover(&mut self, v: f64) {
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
    }
}

/// Min-max feature scaling fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub ecpm: Range,
    pub price: Range,
    pub pctr: Range,
}

impl FeatureScaler {
    /// Ranges declared by the generator: zero up to three log-sd above the
    /// largest hourly median, and five sd above the mean pCTR.
    pub fn from_gen(cfg: &GenConfig) -> Self {
        let ecpm_hi = cfg.max_hour_multiplier() * (cfg.ecpm_log_mean + 3.0 * cfg.ecpm_log_sigma).exp();
        let price_hi = (cfg.price_log_mean + 3.0 * cfg.price_log_sigma).exp();
        let pctr_hi = (cfg.pctr_mean() + 5.0 * cfg.pctr_sd()).min(1.0);
        FeatureScaler {
            ecpm: Range { lo: 0.0, hi: ecpm_hi },
            price: Range { lo: 0.0, hi: price_hi },
            pctr: Range { lo: 0.0, hi: pctr_hi },
        }
    }

    /// Observed min/max over loaded days.
    pub fn from_days(days: &[DayStream]) -> Result<Self> {
        let mut it = days.iter().flat_map(|d| d.requests.iter()).flat_map(|r| r.ads.iter());
        let first = it
            .next()
            .ok_or_else(|| Error::Config("no ads to derive feature ranges from".into()))?;
        let point = |v: f64| Range { lo: v, hi: v };
        let mut s = FeatureScaler {
            ecpm: point(first.ecpm),
            price: point(first.price),
            pctr: point(first.pctr),
        };
        for ad in it {
            s.ecpm.cover(ad.ecpm);
            s.price.cover(ad.price);
            s.pctr.cover(ad.pctr);
        }
        Ok(s)
    }
}

/// Mutable per-day rollout state.
#[derive(Debug, Clone)]
pub struct EpisodeContext<'a> {
    pub day: &'a DayStream,
    pub cursor: usize,
    pub cum_ads: usize,
    pub cum_slots: usize,
    pub cum_revenue: f64,
    pub hours: Vec<HourAccumulator>,
    pub outcomes: Vec<ExposureOutcome>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HourAccumulator {
    pub requests: usize,
    pub ads: usize,
    pub slots: usize,
    pub revenue: f64,
}

impl HourAccumulator {
    pub fn pvr(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.ads as f64 / self.slots as f64
        }
    }
}

impl<'a> EpisodeContext<'a> {
    pub fn new(day: &'a DayStream) -> Self {
        let n_hours = day.requests.iter().map(|r| r.hour as usize + 1).max().unwrap_or(0);
        EpisodeContext {
            day,
            cursor: 0,
            cum_ads: 0,
            cum_slots: 0,
            cum_revenue: 0.0,
            hours: vec![HourAccumulator::default(); n_hours],
            outcomes: Vec::with_capacity(day.len()),
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.cursor >= self.day.len()
    }

    pub fn current(&self) -> Option<&'a Request> {
        self.day.requests.get(self.cursor)
    }

    /// Running day PVR over the requests consumed so far.
    pub fn running_pvr(&self) -> f64 {
        if self.cum_slots == 0 {
            0.0
        } else {
            self.cum_ads as f64 / self.cum_slots as f64
        }
    }

    fn record(&mut self, outcome: ExposureOutcome) {
        self.cum_ads += outcome.n_ads;
        self.cum_slots += outcome.expose_count;
        self.cum_revenue += outcome.revenue;
        let h = &mut self.hours[outcome.hour as usize];
        h.requests += 1;
        h.ads += outcome.n_ads;
        h.slots += outcome.expose_count;
        h.revenue += outcome.revenue;
        self.outcomes.push(outcome);
        self.cursor += 1;
    }

    pub fn metrics(&self) -> Result<DayMetrics> {
        day_metrics(&self.outcomes)
    }
}

pub struct StepResult {
    /// `None` once the day's last request has been consumed.
    pub next_state: Option<State>,
    pub reward: f64,
    pub outcome: ExposureOutcome,
}

/// Simulator plus fixed feature scaling: everything needed to roll out a day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulator {
    pub env: Env,
    pub scaler: FeatureScaler,
}

impl Simulator {
    pub fn new(env: Env, scaler: FeatureScaler) -> Self {
        Simulator { env, scaler }
    }

    pub fn for_generator(env: Env, cfg: &GenConfig) -> Self {
        Simulator::new(env, FeatureScaler::from_gen(cfg))
    }

    pub fn encode_state(&self, req: &Request, ctx: &EpisodeContext<'_>) -> Result<State> {
        let mut v = Vec::with_capacity(state_dim(req.ads.len()));
        for ad in &req.ads {
            v.push(self.scaler.ecpm.scale(ad.ecpm));
            v.push(self.scaler.price.scale(ad.price));
            v.push(self.scaler.pctr.scale(ad.pctr));
        }
        v.push(ctx.running_pvr());
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::Encoding(format!(
                "feature {i} of request {} is not finite",
                req.index
            )));
        }
        Ok(State(v))
    }

    /// State for the request under the cursor.
    pub fn observe(&self, ctx: &EpisodeContext<'_>) -> Result<State> {
        let req = ctx
            .current()
            .ok_or_else(|| Error::Contract("observing a terminal context".into()))?;
        self.encode_state(req, ctx)
    }

    pub fn step(&self, ctx: &mut EpisodeContext<'_>, action: &Action) -> Result<StepResult> {
        let req = ctx
            .current()
            .ok_or_else(|| Error::Contract("stepping a terminal context".into()))?;
        let outcome = self.env.apply(req, action.as_slice())?;
        let reward = outcome.revenue;
        ctx.record(outcome.clone());
        let next_state = if ctx.is_terminal() {
            None
        } else {
            Some(self.observe(ctx)?)
        };
        Ok(StepResult {
            next_state,
            reward,
            outcome,
        })
    }

    /// Rolls out one day with `policy` and returns the filled context.
    pub fn rollout<'a, P>(&self, day: &'a DayStream, mut policy: P) -> Result<EpisodeContext<'a>>
    where
        P: FnMut(&State, &EpisodeContext<'a>) -> Result<Action>,
    {
        let mut ctx = EpisodeContext::new(day);
        while !ctx.is_terminal() {
            let s = self.observe(&ctx)?;
            let a = policy(&s, &ctx)?;
            self.step(&mut ctx, &a)?;
        }
        Ok(ctx)
    }
}

/// One stored step: the psCMDP transition tagged with the request-level
/// constraint it was collected (or relabeled) under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    pub reward: f64,
    /// Zero vector when `terminal`.
    pub next_state: State,
    pub outcome: ExposureOutcome,
    pub constraint_id: usize,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub j_ct: f64,
    pub ct_satisfied: bool,
    pub cs_violations: usize,
}

/// Day-level bound on the realized PVR and per-request cap breaches.
pub fn check_constraints(
    metrics: &DayMetrics,
    outcomes: &[ExposureOutcome],
    spec: &ConstraintSpec,
) -> ConstraintCheck {
    let j_ct = metrics.pvr;
    ConstraintCheck {
        j_ct,
        ct_satisfied: j_ct <= spec.alpha,
        cs_violations: outcomes.iter().filter(|o| o.pvr > spec.beta).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnEstimate {
    pub mean_revenue: f64,
    pub day_revenues: Vec<f64>,
    pub day_pvrs: Vec<f64>,
}

/// Monte-Carlo estimate of the expected day revenue of a stationary policy.
pub fn empirical_return<P>(sim: &Simulator, mut policy: P, days: &[DayStream]) -> Result<ReturnEstimate>
where
    P: FnMut(&State) -> Result<Action>,
{
    contract!(!days.is_empty(), "empirical_return needs at least one day");
    let mut day_revenues = Vec::with_capacity(days.len());
    let mut day_pvrs = Vec::with_capacity(days.len());
    for day in days {
        let mut total = 0.0;
        let mut ctx = EpisodeContext::new(day);
        while !ctx.is_terminal() {
            let s = sim.observe(&ctx)?;
            let a = policy(&s)?;
            total += sim.step(&mut ctx, &a)?.reward;
        }
        day_revenues.push(total);
        day_pvrs.push(ctx.running_pvr());
    }
    Ok(ReturnEstimate {
        mean_revenue: day_revenues.iter().sum::<f64>() / days.len() as f64,
        day_revenues,
        day_pvrs,
    })
}
