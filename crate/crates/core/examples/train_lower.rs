//! Trains the five request-level policies jointly with hindsight relabeling
//! and reports how closely each one tracks its PVR target on fresh days.
//!
//! cargo run --release --example train_lower -- [train_days] [out_dir]

use adexposure::env::{Env, GenConfig, GeneratedDays};
use adexposure::lower::{eval_lower, save_policy_set, train_lower, LowerConfig, LowerRunOptions};
use adexposure::pscmdp::{ConstraintSpec, Simulator};
use adexposure::seeds::{STREAM_EVAL_DAYS, STREAM_TRAIN_DAYS, STREAM_VALIDATION_DAYS};

fn main() -> adexposure::Result<()> {
    let mut args = std::env::args().skip(1);
    let days: usize = args.next().map(|s| s.parse().expect("train_days")).unwrap_or(20);
    let out = args.next().unwrap_or_else(|| "policy_set".into());
    let seed = 1;

    let gen = GenConfig::default();
    let sim = Simulator::for_generator(Env::default(), &gen);
    let spec = ConstraintSpec::default();
    let cfg = LowerConfig {
        train_days: days,
        ..LowerConfig::default()
    };
    let train = GeneratedDays::new(gen.clone(), seed, STREAM_TRAIN_DAYS, days);
    let validation = GeneratedDays::new(gen.clone(), seed, STREAM_VALIDATION_DAYS, 1).collect()?;
    let opts = LowerRunOptions {
        seed,
        ..Default::default()
    };
    let run = train_lower(&sim, &spec, &cfg, &train, &validation, &opts)?;
    println!("{} steps", run.steps);
    for p in run.curves.iter().filter(|p| p.step % 24_000 == 0) {
        println!("  step {:6}  target {:.2}  mean |pvr - t| {:.3}", p.step, p.target, p.mean_abs_deviation);
    }

    let eval = GeneratedDays::new(gen, seed, STREAM_EVAL_DAYS, 5).collect()?;
    for p in &run.policy_set.policies {
        let e = eval_lower(&sim, p, &eval, &spec)?;
        println!(
            "target {:.2}: day pvr {:.3}, mean |pvr - t| {:.3}, revenue/day {:.0}",
            p.target,
            e.day_pvr,
            e.mean_abs_deviation,
            e.revenue / e.days as f64
        );
    }
    save_policy_set(&run.policy_set, &out, "example")?;
    println!("saved to {out}");
    Ok(())
}
