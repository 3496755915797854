use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ExposureOutcome;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourMetrics {
    pub hour: u32,
    pub requests: usize,
    pub ads: usize,
    pub slots: usize,
    pub revenue: f64,
    /// Ad fraction of this hour's slots.
    pub pvr: f64,
    /// This hour's ads over the whole day's slots; sums to the day PVR.
    pub pvr_share: f64,
    pub revenue_per_pvr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub pvr: f64,
    pub revenue: f64,
    pub ads: usize,
    pub slots: usize,
    pub requests: usize,
    pub hours: Vec<HourMetrics>,
}

impl DayMetrics {
    pub fn hour(&self, hour: u32) -> Option<&HourMetrics> {
        self.hours.iter().find(|h| h.hour == hour)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Aggregates outcomes into day-level PVR and revenue plus a per-hour table.
pub fn day_metrics(outcomes: &[ExposureOutcome]) -> Result<DayMetrics> {
    if outcomes.is_empty() {
        return Err(Error::EmptyMetrics);
    }
    let mut by_hour: BTreeMap<u32, (usize, usize, usize, f64)> = BTreeMap::new();
    for o in outcomes {
        let e = by_hour.entry(o.hour).or_default();
        e.0 += 1;
        e.1 += o.n_ads;
        e.2 += o.expose_count;
        e.3 += o.revenue;
    }
    let ads: usize = outcomes.iter().map(|o| o.n_ads).sum();
    let slots: usize = outcomes.iter().map(|o| o.expose_count).sum();
    let revenue: f64 = outcomes.iter().map(|o| o.revenue).sum();
    let hours = by_hour
        .into_iter()
        .map(|(hour, (requests, h_ads, h_slots, h_rev))| {
            let pvr = ratio(h_ads as f64, h_slots as f64);
            HourMetrics {
                hour,
                requests,
                ads: h_ads,
                slots: h_slots,
                revenue: h_rev,
                pvr,
                pvr_share: ratio(h_ads as f64, slots as f64),
                revenue_per_pvr: ratio(h_rev, pvr),
            }
        })
        .collect();
    Ok(DayMetrics {
        pvr: ratio(ads as f64, slots as f64),
        revenue,
        ads,
        slots,
        requests: outcomes.len(),
        hours,
    })
}

/// Writes `hour,revenue,pvr,revenue_per_pvr` rows followed by an `all` summary row.
pub fn write_metrics_csv<W: Write>(m: &DayMetrics, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["hour", "revenue", "pvr", "revenue_per_pvr"])?;
    for h in &m.hours {
        w.write_record([
            h.hour.to_string(),
            h.revenue.to_string(),
            h.pvr.to_string(),
            h.revenue_per_pvr.to_string(),
        ])?;
    }
    w.write_record([
        "all".to_string(),
        m.revenue.to_string(),
        m.pvr.to_string(),
        ratio(m.revenue, m.pvr).to_string(),
    ])?;
    w.flush().map_err(|e| Error::io("<metrics csv>", e))
}
