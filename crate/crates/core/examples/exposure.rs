//! Ranks one request under a few per-ad multipliers and shows which items
//! win the slots.
//!
//! cargo run --example exposure

use adexposure::env::{generate_day, Env, GenConfig};

fn main() -> adexposure::Result<()> {
    let day = generate_day(&GenConfig::default(), 3)?;
    let req = &day.requests[0];
    let env = Env::default();
    for eta in [0.5, 1.0, 2.0] {
        let out = env.apply(req, &vec![eta; req.ads.len()])?;
        let layout: String = out.exposed.iter().map(|e| if e.item.is_ad() { 'A' } else { 'r' }).collect();
        println!("eta {eta:.1}: {layout}  ads {}  pvr {:.1}  revenue {:.3}", out.n_ads, out.pvr, out.revenue);
    }

    // Boost only the most valuable ad.
    let best = (0..req.ads.len())
        .max_by(|a, b| req.ads[*a].ecpm.total_cmp(&req.ads[*b].ecpm))
        .unwrap();
    let mut eta = vec![1.0; req.ads.len()];
    eta[best] = 3.0;
    let out = env.apply(req, &eta)?;
    let pos = out.exposed.iter().position(|e| e.item.id == req.ads[best].id);
    println!("boosted ad {} lands at slot {pos:?}, revenue {:.3}", req.ads[best].id, out.revenue);
    Ok(())
}
