use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::env::{DayStream, PositionModel};
use crate::error::{contract, Result};

/// Hindsight allocation of a day's ad budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub alpha: f64,
    pub budget: usize,
    pub revenue: f64,
    /// Ads shown per request, in request order.
    pub ads_per_request: Vec<usize>,
    /// Per hour: `(hour, ads / slots, revenue)`.
    pub hourly: Vec<(u32, f64, f64)>,
    pub pvr: f64,
}

/// `floor(alpha * slots)`, robust to `alpha = ads / slots` round trips.
pub fn oracle_budget(alpha: f64, slots: usize) -> usize {
    (alpha * slots as f64 + 1e-9).floor() as usize
}

/// Pools every ad of the day and keeps the `floor(alpha * sum N_i)` most
/// valuable placements. Within a request the `m` shown ads take the top `m`
/// slots in decreasing eCPM, so the `j`-th added ad is worth
/// `f_p(j) * ecpm_(j)`; these marginal values decrease within each request,
/// which makes picking the globally largest ones an optimal allocation. Ads
/// displace the request's lowest recommendations. The per-request cap is
/// deliberately ignored: this is an upper bound, not a feasible policy.
pub fn oracle_global(day: &DayStream, alpha: f64, position: &PositionModel) -> Result<OracleResult> {
    contract!(alpha > 0.0 && alpha <= 1.0, "oracle alpha {alpha} outside (0,1]");
    let slots: usize = day.requests.iter().map(|r| r.expose_count).sum();
    let budget = oracle_budget(alpha, slots);

    // (value, request, rank)
    let mut marginals: Vec<(f64, usize, usize)> = Vec::new();
    for (i, r) in day.requests.iter().enumerate() {
        let mut ecpms: Vec<f64> = r.ads.iter().map(|a| a.ecpm).collect();
        ecpms.sort_by(|a, b| b.total_cmp(a));
        let cap = r.expose_count.min(ecpms.len()).min(position.slots());
        for (j, e) in ecpms.iter().take(cap).enumerate() {
            marginals.push((position.position_factor(j)? * e, i, j));
        }
    }
    contract!(
        budget <= marginals.len(),
        "budget {budget} exceeds the {} placeable ads",
        marginals.len()
    );
    marginals.sort_by(|a, b| match b.0.total_cmp(&a.0) {
        Ordering::Equal => (a.1, a.2).cmp(&(b.1, b.2)),
        o => o,
    });

    let mut ads_per_request = vec![0usize; day.requests.len()];
    let mut per_request_value = vec![0.0; day.requests.len()];
    for &(v, i, _) in &marginals[..budget] {
        ads_per_request[i] += 1;
        per_request_value[i] += v;
    }

    let n_hours = day.requests.iter().map(|r| r.hour as usize + 1).max().unwrap_or(0);
    let mut h_ads = vec![0usize; n_hours];
    let mut h_slots = vec![0usize; n_hours];
    let mut h_rev = vec![0.0; n_hours];
    for (i, r) in day.requests.iter().enumerate() {
        let h = r.hour as usize;
        h_ads[h] += ads_per_request[i];
        h_slots[h] += r.expose_count;
        h_rev[h] += per_request_value[i];
    }
    let hourly = (0..n_hours)
        .filter(|h| h_slots[*h] > 0)
        .map(|h| (h as u32, h_ads[h] as f64 / h_slots[h] as f64, h_rev[h]))
        .collect();
    Ok(OracleResult {
        alpha,
        budget,
        revenue: per_request_value.iter().sum(),
        ads_per_request,
        hourly,
        pvr: if slots == 0 { 0.0 } else { budget as f64 / slots as f64 },
    })
}
