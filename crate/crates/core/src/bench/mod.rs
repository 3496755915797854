//! Baselines, the hindsight oracle, report tables and experiment plumbing.

pub mod cli;
mod config;
mod oracle;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::{day_metrics, DayStream, Env, ExposureOutcome, Exposed, Item, Request};
use crate::error::{contract, Error, Result};

pub use config::{ExperimentConfig, RunConfig, SimConfig};
pub use oracle::{oracle_budget, oracle_global, OracleResult};

/// Per-hour row of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourRow {
    pub hour: u32,
    pub revenue: f64,
    pub pvr: f64,
    pub revenue_per_pvr: f64,
}

/// Aggregate result of one policy over a set of evaluation days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub day_ids: Vec<u64>,
    /// Pooled PVR over all evaluated requests.
    pub pvr: f64,
    /// Total revenue over all days.
    pub revenue: f64,
    pub day_pvrs: Vec<f64>,
    pub day_revenues: Vec<f64>,
    /// Revenue relative to the manual baseline on the same days, in percent.
    pub relative_revenue: Option<f64>,
    pub hours: Vec<HourRow>,
}

impl RunReport {
    /// Builds a report from per-day outcome lists.
    pub fn from_days(name: &str, days: &[(u64, Vec<ExposureOutcome>)]) -> Result<Self> {
        contract!(!days.is_empty(), "report needs at least one day");
        let all: Vec<ExposureOutcome> = days.iter().flat_map(|(_, o)| o.iter().cloned()).collect();
        let pooled = day_metrics(&all)?;
        let mut day_pvrs = Vec::with_capacity(days.len());
        let mut day_revenues = Vec::with_capacity(days.len());
        for (_, o) in days {
            let m = day_metrics(o)?;
            day_pvrs.push(m.pvr);
            day_revenues.push(m.revenue);
        }
        let hours = pooled
            .hours
            .iter()
            .map(|h| HourRow {
                hour: h.hour,
                revenue: h.revenue,
                pvr: h.pvr,
                revenue_per_pvr: h.revenue_per_pvr,
            })
            .collect();
        Ok(RunReport {
            name: name.to_string(),
            day_ids: days.iter().map(|(d, _)| *d).collect(),
            pvr: pooled.pvr,
            revenue: day_revenues.iter().sum(),
            day_pvrs,
            day_revenues,
            relative_revenue: None,
            hours,
        })
    }
}

fn top_by_score(items: &[Item], k: usize) -> Vec<Item> {
    let mut v = items.to_vec();
    v.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    v.truncate(k);
    v
}

/// Exposure with exactly `k` ads: the `k` best ads and `N - k` best
/// recommendations by raw score, ordered by score.
pub fn fixed_exposure(env: &Env, req: &Request, k: usize) -> Result<ExposureOutcome> {
    let n = req.expose_count;
    contract!(k <= n, "fixed ad count {k} exceeds {n} slots");
    contract!(k <= req.ads.len() && n - k <= req.recs.len(), "not enough candidates for {k} ads");
    let mut chosen: Vec<Item> = top_by_score(&req.ads, k);
    chosen.extend(top_by_score(&req.recs, n - k));
    chosen.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.is_ad().cmp(&b.is_ad()))
            .then(a.id.cmp(&b.id))
    });
    let runner_up = req
        .ads
        .iter()
        .chain(&req.recs)
        .filter(|it| !chosen.iter().any(|c| c.id == it.id))
        .map(|it| it.score)
        .fold(0.0, f64::max);
    let exposed: Vec<Exposed> = chosen
        .into_iter()
        .enumerate()
        .map(|(position, item)| Exposed {
            ranked_score: item.score,
            item,
            position,
        })
        .collect();
    let mut outcome = ExposureOutcome {
        request_index: req.index,
        hour: req.hour,
        exposed,
        n_ads: k,
        expose_count: n,
        pvr: k as f64 / n as f64,
        runner_up_score: runner_up,
        revenue: 0.0,
    };
    outcome.revenue = env.value(&outcome);
    Ok(outcome)
}

/// Every request shows exactly `k` ads.
pub fn baseline_fixed(env: &Env, days: &[DayStream], k: usize) -> Result<RunReport> {
    let per_day = days
        .iter()
        .map(|d| {
            let o = d
                .requests
                .iter()
                .map(|r| fixed_exposure(env, r, k))
                .collect::<Result<Vec<_>>>()?;
            Ok((d.day_id, o))
        })
        .collect::<Result<Vec<_>>>()?;
    RunReport::from_days(&format!("fixed_{k}"), &per_day)
}

/// Applies one multiplier to every ad score.
pub fn global_multiplier_outcomes(env: &Env, day: &DayStream, eta: f64) -> Result<Vec<ExposureOutcome>> {
    day.requests
        .iter()
        .map(|r| env.apply(r, &vec![eta; r.ads.len()]))
        .collect()
}

fn day_pvr_at(env: &Env, day: &DayStream, eta: f64) -> Result<f64> {
    Ok(day_metrics(&global_multiplier_outcomes(env, day, eta)?)?.pvr)
}

/// Tolerance of the manual calibration on its calibration day.
pub const MANUAL_TOLERANCE: f64 = 0.005;

/// Bisects the global multiplier so the calibration day's PVR lands within
/// [`MANUAL_TOLERANCE`] of `target`.
pub fn calibrate_manual(env: &Env, calibration: &DayStream, target: f64) -> Result<f64> {
    contract!(target > 0.0 && target < 1.0, "manual target {target} outside (0,1)");
    let (mut lo, mut hi) = (env.bounds.min, env.bounds.max);
    let p_lo = day_pvr_at(env, calibration, lo)?;
    let p_hi = day_pvr_at(env, calibration, hi)?;
    if (p_lo - target).abs() <= MANUAL_TOLERANCE {
        return Ok(lo);
    }
    if (p_hi - target).abs() <= MANUAL_TOLERANCE {
        return Ok(hi);
    }
    if p_lo > target || p_hi < target {
        return Err(Error::Calibration(format!(
            "target PVR {target} outside reachable range [{p_lo}, {p_hi}]"
        )));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let p = day_pvr_at(env, calibration, mid)?;
        if (p - target).abs() <= MANUAL_TOLERANCE {
            return Ok(mid);
        }
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(format!(
        "no multiplier brings PVR within {MANUAL_TOLERANCE} of {target}"
    )))
}

/// Manual baseline: calibrate one multiplier on `calibration`, then apply it
/// unchanged to `days`. Returns the multiplier with the report.
pub fn baseline_manual(
    env: &Env,
    calibration: &DayStream,
    days: &[DayStream],
    target: f64,
) -> Result<(f64, RunReport)> {
    let eta = calibrate_manual(env, calibration, target)?;
    let per_day = days
        .iter()
        .map(|d| Ok((d.day_id, global_multiplier_outcomes(env, d, eta)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((eta, RunReport::from_days("manual", &per_day)?))
}

/// Table-2-shaped comparison plus per-hour deltas against a reference row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<RunReport>,
    pub hourly_reference: String,
    pub hourly: Vec<HourDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourDelta {
    pub hour: u32,
    pub name: String,
    pub revenue: f64,
    pub reference_revenue: f64,
    pub delta: f64,
}

/// Expresses every report's revenue relative to the one named `manual`
/// (100%) and tabulates per-hour revenue deltas of each row against
/// `hourly_reference`.
pub fn compare_report(reports: &[RunReport], manual: &str, hourly_reference: &str) -> Result<Comparison> {
    contract!(!reports.is_empty(), "nothing to compare");
    let days = &reports[0].day_ids;
    contract!(
        reports.iter().all(|r| &r.day_ids == days),
        "reports were evaluated on different days"
    );
    let base = reports
        .iter()
        .find(|r| r.name == manual)
        .ok_or_else(|| Error::Contract(format!("no report named {manual}")))?;
    let reference = reports
        .iter()
        .find(|r| r.name == hourly_reference)
        .ok_or_else(|| Error::Contract(format!("no report named {hourly_reference}")))?;
    contract!(base.revenue > 0.0, "manual revenue must be positive");
    let rows: Vec<RunReport> = reports
        .iter()
        .map(|r| RunReport {
            relative_revenue: Some(r.revenue / base.revenue * 100.0),
            ..r.clone()
        })
        .collect();
    let mut hourly = Vec::new();
    for r in reports.iter().filter(|r| r.name != hourly_reference) {
        for (h, ref_h) in r.hours.iter().zip(&reference.hours) {
            hourly.push(HourDelta {
                hour: h.hour,
                name: r.name.clone(),
                revenue: h.revenue,
                reference_revenue: ref_h.revenue,
                delta: h.revenue - ref_h.revenue,
            });
        }
    }
    Ok(Comparison {
        rows,
        hourly_reference: hourly_reference.to_string(),
        hourly,
    })
}

impl Comparison {
    /// `name,pvr,revenue,relative_revenue` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["name", "pvr", "revenue", "relative_revenue"])?;
        for r in &self.rows {
            out.write_record([
                r.name.clone(),
                r.pvr.to_string(),
                r.revenue.to_string(),
                r.relative_revenue.map_or(String::new(), |x| x.to_string()),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<report csv>", e))
    }

    /// `hour,name,revenue,reference_revenue,delta` rows.
    pub fn write_hourly_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["hour", "name", "revenue", "reference_revenue", "delta"])?;
        for h in &self.hourly {
            out.write_record([
                h.hour.to_string(),
                h.name.clone(),
                h.revenue.to_string(),
                h.reference_revenue.to_string(),
                h.delta.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<hourly csv>", e))
    }

    /// Plain-text table for terminals.
    pub fn render(&self) -> String {
        let mut s = format!("{:<12} {:>8} {:>16} {:>10}\n", "policy", "PVR", "revenue", "relative");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<12} {:>8.4} {:>16.2} {:>9.1}%\n",
                r.name,
                r.pvr,
                r.revenue,
                r.relative_revenue.unwrap_or(f64::NAN)
            ));
        }
        s
    }
}
