//! Generates one synthetic day, writes it as a JSONL log and prints the
//! hourly revenue of a plain global multiplier.
//!
//! cargo run --release --example generate_day -- [seed] [out.jsonl]

use adexposure::bench::global_multiplier_outcomes;
use adexposure::env::{day_metrics, generate_day, load_day_log, write_day_log, Env, GenConfig};

fn main() -> adexposure::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(7);
    let out = args.next().unwrap_or_else(|| "day.jsonl".into());

    let day = generate_day(&GenConfig::default(), seed)?;
    write_day_log(&day, &out)?;
    assert_eq!(load_day_log(&out)?.requests, day.requests);
    println!("{} requests, {} slots -> {out}", day.len(), day.total_slots());

    let m = day_metrics(&global_multiplier_outcomes(&Env::default(), &day, 1.0)?)?;
    println!("eta = 1: pvr {:.3}, revenue {:.1}", m.pvr, m.revenue);
    for h in &m.hours {
        println!("  hour {:2}  pvr {:.3}  revenue {:8.1}", h.hour, h.pvr, h.revenue);
    }
    Ok(())
}
