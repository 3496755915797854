use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DayStream, Item, Request, EXPOSE_COUNT, N_ADS, N_RECS};
use crate::error::{Error, Result};

/// Synthetic request-log generator settings.
///
/// Ad values are log-normal with an hour-of-day multiplier so some hours carry
/// more valuable traffic than others. Ad ranking scores are coupled to pCTR and
/// drawn on the same scale as recommendation scores, so whether an ad makes it
/// into the exposed slots depends on its coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub requests_per_hour: usize,
    pub hours: u32,
    pub n_ads: usize,
    pub n_recs: usize,
    pub expose_count: usize,
    /// Log-space mean/sd of the eCPM draw before the hour multiplier.
    pub ecpm_log_mean: f64,
    pub ecpm_log_sigma: f64,
    pub price_log_mean: f64,
    pub price_log_sigma: f64,
    /// Correlation between the price and eCPM log-space draws.
    pub price_ecpm_corr: f64,
    pub pctr_alpha: f64,
    pub pctr_beta: f64,
    /// Median ad score relative to the median recommendation score.
    pub score_coupling: f64,
    /// Exponent on normalized pCTR in the ad score.
    pub score_pctr_power: f64,
    pub ad_score_sigma: f64,
    pub rec_log_mean: f64,
    pub rec_log_sigma: f64,
    /// Hours whose eCPM is scaled by `peak_multiplier`.
    pub peak_hours: Vec<u32>,
    pub peak_multiplier: f64,
    /// Optional full per-hour multiplier table; overrides the peak settings.
    pub hour_profile: Option<Vec<f64>>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            requests_per_hour: 100,
            hours: 24,
            n_ads: N_ADS,
            n_recs: N_RECS,
            expose_count: EXPOSE_COUNT,
            ecpm_log_mean: 0.0,
            ecpm_log_sigma: 0.6,
            price_log_mean: 3.5,
            price_log_sigma: 0.7,
            price_ecpm_corr: 0.5,
            pctr_alpha: 2.0,
            pctr_beta: 38.0,
            score_coupling: 0.6,
            score_pctr_power: 0.5,
            ad_score_sigma: 0.3,
            rec_log_mean: 0.0,
            rec_log_sigma: 0.5,
            peak_hours: vec![8, 9, 10, 11, 12],
            peak_multiplier: 2.0,
            hour_profile: None,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.requests_per_hour == 0 || self.hours == 0 {
            return bad("requests_per_hour and hours must be positive".into());
        }
        if self.n_ads == 0 || self.n_recs == 0 || self.expose_count == 0 {
            return bad("candidate and slot counts must be positive".into());
        }
        if self.expose_count >= self.n_ads + self.n_recs {
            return bad(format!(
                "expose_count {} must be below candidate count {}",
                self.expose_count,
                self.n_ads + self.n_recs
            ));
        }
        for (name, v) in [
            ("ecpm_log_sigma", self.ecpm_log_sigma),
            ("price_log_sigma", self.price_log_sigma),
            ("ad_score_sigma", self.ad_score_sigma),
            ("rec_log_sigma", self.rec_log_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        for (name, v) in [
            ("ecpm_log_mean", self.ecpm_log_mean),
            ("price_log_mean", self.price_log_mean),
            ("rec_log_mean", self.rec_log_mean),
            ("score_pctr_power", self.score_pctr_power),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if !(-1.0..=1.0).contains(&self.price_ecpm_corr) {
            return bad("price_ecpm_corr must lie in [-1,1]".into());
        }
        if !(self.pctr_alpha > 0.0 && self.pctr_beta > 0.0) {
            return bad("pctr beta parameters must be positive".into());
        }
        if !(self.score_coupling > 0.0 && self.score_coupling.is_finite()) {
            return bad("score_coupling must be positive".into());
        }
        if !(self.peak_multiplier > 0.0 && self.peak_multiplier.is_finite()) {
            return bad("peak_multiplier must be positive".into());
        }
        if let Some(h) = self.peak_hours.iter().find(|h| **h >= self.hours) {
            return bad(format!("peak hour {h} outside 0..{}", self.hours));
        }
        if let Some(p) = &self.hour_profile {
            if p.len() != self.hours as usize {
                return bad(format!(
                    "hour_profile has {} entries for {} hours",
                    p.len(),
                    self.hours
                ));
            }
            if p.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
                return bad("hour_profile multipliers must be positive".into());
            }
        }
        Ok(())
    }

    /// eCPM multiplier for an hour of the day.
    pub fn hour_multiplier(&self, hour: u32) -> f64 {
        match &self.hour_profile {
            Some(p) => p[hour as usize],
            None if self.peak_hours.contains(&hour) => self.peak_multiplier,
            None => 1.0,
        }
    }

    pub fn max_hour_multiplier(&self) -> f64 {
        (0..self.hours)
            .map(|h| self.hour_multiplier(h))
            .fold(0.0, f64::max)
    }

    pub fn pctr_mean(&self) -> f64 {
        self.pctr_alpha / (self.pctr_alpha + self.pctr_beta)
    }

    pub fn pctr_sd(&self) -> f64 {
        let (a, b) = (self.pctr_alpha, self.pctr_beta);
        (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt()
    }

    pub fn requests_per_day(&self) -> usize {
        self.requests_per_hour * self.hours as usize
    }
}

/// Generates one synthetic day; a pure function of `(cfg, seed)`.
pub fn generate_day(cfg: &GenConfig, seed: u64) -> Result<DayStream> {
    cfg.validate()?;
    let pctr_dist = Beta::new(cfg.pctr_alpha, cfg.pctr_beta)
        .map_err(|e| Error::Config(format!("pctr distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = move |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let pctr_mean = cfg.pctr_mean();
    let corr = cfg.price_ecpm_corr;
    let orth = (1.0 - corr * corr).sqrt();
    let stride = (cfg.n_ads + cfg.n_recs) as u64;

    let mut requests = Vec::with_capacity(cfg.requests_per_day());
    let mut index = 0u64;
    for hour in 0..cfg.hours {
        let mult = cfg.hour_multiplier(hour);
        for _ in 0..cfg.requests_per_hour {
            let base_id = index * stride;
            let ads = (0..cfg.n_ads)
                .map(|j| {
                    let z_e = normal(&mut rng);
                    let z_p = normal(&mut rng);
                    let z_s = normal(&mut rng);
                    let pctr: f64 = pctr_dist.sample(&mut rng);
                    let ecpm = mult * (cfg.ecpm_log_mean + cfg.ecpm_log_sigma * z_e).exp();
                    let price = (cfg.price_log_mean
                        + cfg.price_log_sigma * (corr * z_e + orth * z_p))
                        .exp();
                    let score = cfg.score_coupling
                        * (pctr / pctr_mean).powf(cfg.score_pctr_power)
                        * (cfg.ad_score_sigma * z_s).exp();
                    Item::ad(base_id + j as u64, score, ecpm, price, pctr.clamp(0.0, 1.0))
                })
                .collect();
            let recs = (0..cfg.n_recs)
                .map(|j| {
                    let z = normal(&mut rng);
                    let score = (cfg.rec_log_mean + cfg.rec_log_sigma * z).exp();
                    Item::rec(base_id + (cfg.n_ads + j) as u64, score)
                })
                .collect();
            requests.push(Request {
                index,
                hour,
                ads,
                recs,
                expose_count: cfg.expose_count,
            });
            index += 1;
        }
    }
    Ok(DayStream {
        day_id: seed,
        requests,
    })
}
