//! Adaptive exposure simulator.
//!
//! A request carries a fixed number of candidate ads and recommendation items.
//! The advertising side multiplies each ad's ranking score by a coefficient,
//! the two lists are merged by score and the top `expose_count` items are shown.
//! Revenue is earned only from exposed ads and is corrected for position.

mod generate;
mod log;
mod metrics;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

pub use generate::{generate_day, GenConfig};
pub use log::{load_day_log, load_day_log_with, write_day_log, LogSchema};
pub use metrics::{day_metrics, write_metrics_csv, DayMetrics, HourMetrics};

/// Default number of candidate ads per request.
pub const N_ADS: usize = 15;
/// Default number of candidate recommendation items per request.
pub const N_RECS: usize = 15;
/// Default number of exposed slots per request.
pub const EXPOSE_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ItemKind {
    Ad,
    Rec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: u64,
    pub kind: ItemKind,
    pub score: f64,
    pub ecpm: f64,
    pub price: f64,
    pub pctr: f64,
}

impl Item {
    pub fn ad(id: u64, score: f64, ecpm: f64, price: f64, pctr: f64) -> Self {
        Item {
            id,
            kind: ItemKind::Ad,
            score,
            ecpm,
            price,
            pctr,
        }
    }

    pub fn rec(id: u64, score: f64) -> Self {
        Item {
            id,
            kind: ItemKind::Rec,
            score,
            ecpm: 0.0,
            price: 0.0,
            pctr: 0.0,
        }
    }

    pub fn is_ad(&self) -> bool {
        self.kind == ItemKind::Ad
    }

    pub(crate) fn validate(&self) -> std::result::Result<(), String> {
        if !(self.score.is_finite() && self.score >= 0.0) {
            return Err(format!("item {} has invalid score {}", self.id, self.score));
        }
        match self.kind {
            ItemKind::Ad => {
                if !(self.ecpm.is_finite() && self.ecpm >= 0.0) {
                    return Err(format!("ad {} has invalid ecpm {}", self.id, self.ecpm));
                }
                if !(self.price.is_finite() && self.price >= 0.0) {
                    return Err(format!("ad {} has invalid price {}", self.id, self.price));
                }
                if !(0.0..=1.0).contains(&self.pctr) {
                    return Err(format!("ad {} has pctr {} outside [0,1]", self.id, self.pctr));
                }
            }
            ItemKind::Rec => {
                if self.ecpm != 0.0 || self.price != 0.0 || self.pctr != 0.0 {
                    return Err(format!("rec {} carries ad value fields", self.id));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub index: u64,
    pub hour: u32,
    pub ads: Vec<Item>,
    pub recs: Vec<Item>,
    pub expose_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayStream {
    pub day_id: u64,
    pub requests: Vec<Request>,
}

impl DayStream {
    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn total_slots(&self) -> usize {
        self.requests.iter().map(|r| r.expose_count).sum()
    }

    /// Checks the chronological ordering invariants.
    pub fn validate(&self) -> Result<()> {
        for pair in self.requests.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(Error::Contract(format!(
                    "request indices not strictly increasing at {}",
                    pair[1].index
                )));
            }
            if pair[1].hour < pair[0].hour {
                return Err(Error::Contract(format!(
                    "hours decrease at request {}",
                    pair[1].index
                )));
            }
        }
        Ok(())
    }
}

/// Indexed collection of days, produced lazily so long training runs never
/// hold more than one day in memory.
pub trait DaySource {
    fn num_days(&self) -> usize;
    fn day(&self, i: usize) -> Result<DayStream>;
}

impl DaySource for [DayStream] {
    fn num_days(&self) -> usize {
        self.len()
    }

    fn day(&self, i: usize) -> Result<DayStream> {
        self.get(i)
            .cloned()
            .ok_or_else(|| Error::Contract(format!("day {i} outside 0..{}", self.len())))
    }
}

impl DaySource for Vec<DayStream> {
    fn num_days(&self) -> usize {
        self.len()
    }

    fn day(&self, i: usize) -> Result<DayStream> {
        self.as_slice().day(i)
    }
}

/// `count` synthetic days whose seeds derive from `(base_seed, stream, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDays {
    pub cfg: GenConfig,
    pub base_seed: u64,
    pub stream: u64,
    pub count: usize,
}

impl GeneratedDays {
    pub fn new(cfg: GenConfig, base_seed: u64, stream: u64, count: usize) -> Self {
        GeneratedDays {
            cfg,
            base_seed,
            stream,
            count,
        }
    }

    pub fn seed_of(&self, i: usize) -> u64 {
        crate::seeds::derive_seed(self.base_seed, self.stream, i as u64)
    }

    pub fn collect(&self) -> Result<Vec<DayStream>> {
        (0..self.count).map(|i| self.day(i)).collect()
    }
}

impl DaySource for GeneratedDays {
    fn num_days(&self) -> usize {
        self.count
    }

    fn day(&self, i: usize) -> Result<DayStream> {
        contract!(i < self.count, "day {i} outside 0..{}", self.count);
        generate_day(&self.cfg, self.seed_of(i))
    }
}

/// One exposed item together with its slot and the score it was ranked by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exposed {
    pub item: Item,
    pub position: usize,
    pub ranked_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureOutcome {
    pub request_index: u64,
    pub hour: u32,
    pub exposed: Vec<Exposed>,
    pub n_ads: usize,
    pub expose_count: usize,
    pub pvr: f64,
    /// Ranked score of the best item that was not exposed (0 when none).
    pub runner_up_score: f64,
    pub revenue: f64,
}

impl ExposureOutcome {
    pub fn ads(&self) -> impl Iterator<Item = &Exposed> {
        self.exposed.iter().filter(|e| e.item.is_ad())
    }
}

/// Position correction `f_p(k)` for exposed slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PositionModel {
    /// `(1 + k)^(-gamma)` over `slots` positions.
    PowerLaw { gamma: f64, slots: usize },
    /// Explicit factors, one per position.
    Table(Vec<f64>),
}

impl Default for PositionModel {
    fn default() -> Self {
        PositionModel::PowerLaw {
            gamma: 0.3,
            slots: EXPOSE_COUNT,
        }
    }
}

impl PositionModel {
    pub fn power_law(gamma: f64, slots: usize) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) || slots == 0 {
            return Err(Error::Config(format!(
                "invalid power-law position model (gamma {gamma}, slots {slots})"
            )));
        }
        Ok(PositionModel::PowerLaw { gamma, slots })
    }

    /// Builds a table model; the factors must start at 1 and never increase.
    pub fn table(factors: Vec<f64>) -> Result<Self> {
        if factors.is_empty() || factors[0] != 1.0 {
            return Err(Error::Config("position table must start at 1.0".into()));
        }
        if factors.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Config("position factors must lie in (0,1]".into()));
        }
        if factors.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config("position factors must be nonincreasing".into()));
        }
        Ok(PositionModel::Table(factors))
    }

    pub fn slots(&self) -> usize {
        match self {
            PositionModel::PowerLaw { slots, .. } => *slots,
            PositionModel::Table(t) => t.len(),
        }
    }

    /// `f_p(k)`; errors when `k` is not an exposed slot.
    pub fn position_factor(&self, k: usize) -> Result<f64> {
        contract!(
            k < self.slots(),
            "position {k} outside 0..{}",
            self.slots()
        );
        Ok(self.factor(k))
    }

    pub(crate) fn factor(&self, k: usize) -> f64 {
        match self {
            PositionModel::PowerLaw { gamma, .. } => (1.0 + k as f64).powf(-gamma),
            PositionModel::Table(t) => t[k.min(t.len() - 1)],
        }
    }
}

/// How exposed ads are turned into platform revenue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Valuation {
    /// Position-corrected eCPM: `sum f_p(k) * ecpm`.
    #[default]
    PositionEcpm,
    /// Generalized second price: each ad pays its eCPM scaled by the ratio of
    /// the next-ranked score to its own, then position-corrected.
    SecondPrice,
}

/// Admissible range of score coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for EtaBounds {
    fn default() -> Self {
        EtaBounds { min: 0.0, max: 3.0 }
    }
}

impl EtaBounds {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.max - self.min)
    }

    pub fn contains(&self, eta: f64) -> bool {
        eta >= self.min && eta <= self.max
    }
}

/// Multiplies each ad score by its coefficient. Recommendation scores are
/// untouched and therefore not returned.
pub fn adjust_scores(req: &Request, eta: &[f64], bounds: EtaBounds) -> Result<Vec<f64>> {
    contract!(
        eta.len() == req.ads.len(),
        "action has {} coefficients for {} ads",
        eta.len(),
        req.ads.len()
    );
    req.ads
        .iter()
        .zip(eta)
        .map(|(ad, &e)| {
            contract!(
                bounds.contains(e),
                "coefficient {e} outside [{}, {}]",
                bounds.min,
                bounds.max
            );
            Ok(ad.score * e)
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Ranked {
    item: Item,
    score: f64,
}

/// Ranking order: higher score first, then recommendation before ad, then lower id.
fn rank_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| kind_rank(a.item.kind).cmp(&kind_rank(b.item.kind)))
        .then_with(|| a.item.id.cmp(&b.item.id))
}

fn kind_rank(kind: ItemKind) -> u8 {
    match kind {
        ItemKind::Rec => 0,
        ItemKind::Ad => 1,
    }
}

/// Merges ads (at adjusted scores) with recommendations (at original scores)
/// and keeps the top `expose_count` items. Revenue is left at zero; see
/// [`Env::expose`] for the valued variant.
pub fn merge_and_rank(req: &Request, adjusted: &[f64]) -> Result<ExposureOutcome> {
    contract!(
        adjusted.len() == req.ads.len(),
        "{} adjusted scores for {} ads",
        adjusted.len(),
        req.ads.len()
    );
    contract!(
        adjusted.iter().all(|s| s.is_finite() && *s >= 0.0),
        "adjusted scores must be finite and nonnegative"
    );
    contract!(
        req.expose_count < req.ads.len() + req.recs.len(),
        "expose_count {} must be below candidate count",
        req.expose_count
    );
    let mut pool: Vec<Ranked> = req
        .ads
        .iter()
        .zip(adjusted)
        .map(|(ad, &s)| Ranked { item: *ad, score: s })
        .chain(req.recs.iter().map(|r| Ranked {
            item: *r,
            score: r.score,
        }))
        .collect();
    pool.sort_unstable_by(rank_order);

    let n = req.expose_count;
    let exposed: Vec<Exposed> = pool[..n]
        .iter()
        .enumerate()
        .map(|(position, r)| Exposed {
            item: r.item,
            position,
            ranked_score: r.score,
        })
        .collect();
    let n_ads = exposed.iter().filter(|e| e.item.is_ad()).count();
    Ok(ExposureOutcome {
        request_index: req.index,
        hour: req.hour,
        exposed,
        n_ads,
        expose_count: n,
        pvr: n_ads as f64 / n as f64,
        runner_up_score: pool.get(n).map_or(0.0, |r| r.score),
        revenue: 0.0,
    })
}

/// Position-corrected revenue of the exposed ads.
pub fn reward_of(outcome: &ExposureOutcome, pm: &PositionModel) -> f64 {
    outcome
        .ads()
        .map(|e| pm.factor(e.position) * e.item.ecpm)
        .sum()
}

/// Second-price revenue: ad at slot k pays `ecpm * s_{k+1} / s_k`.
pub fn second_price_revenue(outcome: &ExposureOutcome, pm: &PositionModel) -> f64 {
    let next_scores: Vec<f64> = outcome
        .exposed
        .iter()
        .skip(1)
        .map(|e| e.ranked_score)
        .chain(std::iter::once(outcome.runner_up_score))
        .collect();
    outcome
        .exposed
        .iter()
        .zip(next_scores)
        .filter(|(e, _)| e.item.is_ad())
        .map(|(e, next)| {
            let ratio = if e.ranked_score > 0.0 {
                (next / e.ranked_score).min(1.0)
            } else {
                0.0
            };
            pm.factor(e.position) * e.item.ecpm * ratio
        })
        .sum()
}

/// Immutable simulator settings shared by every rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Env {
    pub position: PositionModel,
    pub valuation: Valuation,
    pub bounds: EtaBounds,
}

impl Default for Env {
    fn default() -> Self {
        Env {
            position: PositionModel::default(),
            valuation: Valuation::default(),
            bounds: EtaBounds::default(),
        }
    }
}

impl Env {
    pub fn adjust_scores(&self, req: &Request, eta: &[f64]) -> Result<Vec<f64>> {
        adjust_scores(req, eta, self.bounds)
    }

    pub fn expose(&self, req: &Request, adjusted: &[f64]) -> Result<ExposureOutcome> {
        let mut outcome = merge_and_rank(req, adjusted)?;
        outcome.revenue = self.value(&outcome);
        Ok(outcome)
    }

    pub fn value(&self, outcome: &ExposureOutcome) -> f64 {
        match self.valuation {
            Valuation::PositionEcpm => reward_of(outcome, &self.position),
            Valuation::SecondPrice => second_price_revenue(outcome, &self.position),
        }
    }

    /// Adjusts, ranks and values one request.
    pub fn apply(&self, req: &Request, eta: &[f64]) -> Result<ExposureOutcome> {
        let adjusted = self.adjust_scores(req, eta)?;
        self.expose(req, &adjusted)
    }
}
