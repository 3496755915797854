//! Trains the hour-level constraint chooser on top of a saved policy set and
//! compares it with each fixed-target policy at alpha = 0.35.
//!
//! cargo run --release --example train_lower -- 50 policy_set
//! cargo run --release --example two_level -- policy_set [ccp_days]

use adexposure::env::{Env, GenConfig, GeneratedDays};
use adexposure::higher::{rollout_two_level, train_ccp, HigherConfig};
use adexposure::lower::{eval_lower, load_policy_set};
use adexposure::pscmdp::{ConstraintSpec, Simulator};
use adexposure::seeds::{STREAM_CCP_DAYS, STREAM_EVAL_DAYS};

fn main() -> adexposure::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "policy_set".into());
    let ccp_days: usize = args.next().map(|s| s.parse().expect("ccp_days")).unwrap_or(1000);
    let seed = 1;

    let (set, _) = load_policy_set(&dir)?;
    let gen = GenConfig::default();
    let sim = Simulator::for_generator(Env::default(), &gen);
    let spec = ConstraintSpec::default();
    let cfg = HigherConfig {
        train_days: ccp_days,
        ..HigherConfig::default()
    };
    let days = GeneratedDays::new(gen.clone(), seed, STREAM_CCP_DAYS, ccp_days);
    let run = train_ccp(&sim, &set, &spec, &cfg, &days, seed)?;
    for d in run.days.iter().step_by((ccp_days / 10).max(1)) {
        println!("day {:4}  eps {:.3}  pvr {:.3}  revenue {:.0}", d.day, d.epsilon, d.day_pvr, d.revenue);
    }

    let eval = GeneratedDays::new(gen, seed, STREAM_EVAL_DAYS, 10).collect()?;
    let (mut ads, mut slots, mut revenue) = (0, 0, 0.0);
    let mut picks = vec![vec![0usize; set.len()]; 24];
    for day in &eval {
        let r = rollout_two_level(&sim, &run.ccp, &set, day)?;
        ads += r.metrics.ads;
        slots += r.metrics.slots;
        revenue += r.metrics.revenue;
        for s in &r.segments {
            picks[s.start_hour as usize][s.constraint_id] += 1;
        }
    }
    println!("two-level: pvr {:.3}, revenue/day {:.0}", ads as f64 / slots as f64, revenue / eval.len() as f64);
    for p in &set.policies {
        let e = eval_lower(&sim, p, &eval, &spec)?;
        println!("fixed {:.2}: pvr {:.3}, revenue/day {:.0}", p.target, e.day_pvr, e.revenue / e.days as f64);
    }
    let hourly: Vec<String> = picks
        .iter()
        .map(|c| format!("{:.2}", set.policies[(0..c.len()).max_by_key(|i| c[*i]).unwrap()].target))
        .collect();
    println!("most chosen target per hour: {}", hourly.join(" "));
    Ok(())
}
