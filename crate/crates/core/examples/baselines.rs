//! Fixed, manual and hindsight-oracle allocations on the same evaluation
//! days, with revenue relative to the manual multiplier.
//!
//! cargo run --release --example baselines -- [alpha]

use adexposure::bench::{baseline_fixed, baseline_manual, compare_report, oracle_global};
use adexposure::env::{DaySource, Env, GenConfig, GeneratedDays};
use adexposure::seeds::{STREAM_CALIBRATION, STREAM_EVAL_DAYS};

fn main() -> adexposure::Result<()> {
    let alpha: f64 = std::env::args().nth(1).map(|s| s.parse().expect("alpha")).unwrap_or(0.35);
    let gen = GenConfig::default();
    let env = Env::default();
    let eval = GeneratedDays::new(gen.clone(), 1, STREAM_EVAL_DAYS, 5).collect()?;
    let calibration = GeneratedDays::new(gen.clone(), 1, STREAM_CALIBRATION, 1).day(0)?;

    let (eta, manual) = baseline_manual(&env, &calibration, &eval, alpha)?;
    let below = baseline_fixed(&env, &eval, (alpha * 10.0).floor() as usize)?;
    let above = baseline_fixed(&env, &eval, (alpha * 10.0).ceil() as usize)?;
    let cmp = compare_report(&[manual, below, above], "manual", "manual")?;
    println!("manual multiplier {eta:.3}");
    for r in &cmp.rows {
        println!("{:>10}: pvr {:.3}  revenue {:9.0}  {:6.1}%", r.name, r.pvr, r.revenue, r.relative_revenue.unwrap());
    }

    let manual_revenue = cmp.rows[0].revenue;
    let mut oracle_revenue = 0.0;
    let mut peak = vec![0.0; gen.hours as usize];
    for day in &eval {
        let o = oracle_global(day, alpha, &env.position)?;
        oracle_revenue += o.revenue;
        for (h, frac, _) in o.hourly {
            peak[h as usize] += frac / eval.len() as f64;
        }
    }
    println!("    oracle: revenue {oracle_revenue:9.0}  {:6.1}%", oracle_revenue / manual_revenue * 100.0);
    for (h, f) in peak.iter().enumerate() {
        let tag = if gen.peak_hours.contains(&(h as u32)) { " peak" } else { "" };
        println!("  hour {h:2}  oracle ad fraction {f:.3}{tag}");
    }
    Ok(())
}
