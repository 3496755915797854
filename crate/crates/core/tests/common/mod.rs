//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use adexposure::env::{Env, GenConfig, GeneratedDays, Item, Request, DaySource};
use adexposure::lower::{LowerConfig, LowerTrainer};
use adexposure::neural::{Activation, Cache, LayerSpec, NetSpec, Params};
use adexposure::pscmdp::{ConstraintSpec, Simulator};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn request(ads: &[(f64, f64)], recs: &[f64], n: usize) -> Request {
    Request {
        index: 0,
        hour: 0,
        ads: ads
            .iter()
            .enumerate()
            .map(|(j, &(s, e))| Item::ad(j as u64, s, e, 10.0, 0.05))
            .collect(),
        recs: recs
            .iter()
            .enumerate()
            .map(|(j, &s)| Item::rec(100 + j as u64, s))
            .collect(),
        expose_count: n,
    }
}

/// Top `expose_count` candidates by repeated linear scans: higher score
/// first, recommendations before ads on ties, then lower id.
pub fn brute_force(req: &Request, adjusted: &[f64]) -> Vec<(u64, bool)> {
    let mut pool: Vec<(f64, bool, u64)> = req
        .ads
        .iter()
        .zip(adjusted)
        .map(|(a, &s)| (s, true, a.id))
        .chain(req.recs.iter().map(|r| (r.score, false, r.id)))
        .collect();
    let beats = |a: &(f64, bool, u64), b: &(f64, bool, u64)| {
        if a.0 != b.0 {
            return a.0 > b.0;
        }
        if a.1 != b.1 {
            return !a.1;
        }
        a.2 < b.2
    };
    let mut out = Vec::new();
    for _ in 0..req.expose_count {
        let mut best = 0;
        for i in 1..pool.len() {
            if beats(&pool[i], &pool[best]) {
                best = i;
            }
        }
        let c = pool.swap_remove(best);
        out.push((c.2, c.1));
    }
    out
}

/// Random instance with coarse score grids so ties are frequent.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Request, Vec<f64>) {
    let score = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.5) {
            rng.random_range(0..8) as f64 * 0.25
        } else {
            rng.random_range(0.0..2.0)
        }
    };
    let ads: Vec<(f64, f64)> = (0..15).map(|_| (score(rng), rng.random_range(0.0..10.0))).collect();
    let recs: Vec<f64> = (0..15).map(|_| score(rng)).collect();
    let eta: Vec<f64> = (0..15).map(|_| rng.random_range(0..13) as f64 * 0.25).collect();
    (request(&ads, &recs, 10), eta)
}

pub const ACTS: [Activation; 3] = [Activation::Relu, Activation::Tanh, Activation::Identity];

/// Net `k` of a sweep: hidden and head activations cycle through every
/// pairing and every fourth net carries a dueling head.
pub fn random_net(k: usize, rng: &mut ChaCha8Rng) -> Params {
    let input = rng.random_range(1..8);
    let depth = rng.random_range(1..4);
    let mut layers: Vec<LayerSpec> = (0..depth)
        .map(|_| LayerSpec {
            width: rng.random_range(1..9),
            activation: ACTS[k % 3],
        })
        .collect();
    let dueling = k % 4 == 3;
    let out: usize = rng.random_range(1..5);
    layers.push(if dueling {
        LayerSpec {
            width: 1 + out.max(2),
            activation: Activation::Identity,
        }
    } else {
        LayerSpec {
            width: out,
            activation: ACTS[(k / 3) % 3],
        }
    });
    Params::init(
        NetSpec {
            input,
            layers,
            dueling,
        },
        k as u64,
    )
    .unwrap()
}

/// Max relative gap between backprop and central differences of
/// `sum_k w_k * y_k` over all parameters.
pub fn fd_max_rel_error(p: &Params, x: &[f64], w: &[f64], h: f64) -> f64 {
    let loss = |q: &Params| -> f64 { q.forward(x).unwrap().iter().zip(w).map(|(a, b)| a * b).sum() };
    let mut cache = Cache::default();
    p.forward_cached(x, &mut cache).unwrap();
    let mut g = p.zero_grads();
    p.backward(&cache, w, &mut g).unwrap();
    let mut q = p.clone();
    let mut worst: f64 = 0.0;
    for i in 0..g.len() {
        let v = q.values[i];
        q.values[i] = v + h;
        let up = loss(&q);
        q.values[i] = v - h;
        let down = loss(&q);
        q.values[i] = v;
        let n = (up - down) / (2.0 * h);
        worst = worst.max((g[i] - n).abs() / g[i].abs().max(n.abs()).max(1e-8));
    }
    worst
}

pub struct Audit {
    pub collected: u64,
    pub insertions: u64,
    pub problems: Vec<String>,
}

/// Collects `n` transitions under one behavior constraint and checks every
/// buffer entry against a replay of the environment.
pub fn cher_audit(n: usize, cher: bool) -> Audit {
    let gen = GenConfig {
        requests_per_hour: n,
        hours: 1,
        peak_hours: vec![],
        ..GenConfig::default()
    };
    let env = Env::default();
    let sim = Simulator::for_generator(env.clone(), &gen);
    let spec = ConstraintSpec::default();
    let cfg = LowerConfig {
        warmup: 10 * n,
        cher,
        ..LowerConfig::default()
    };
    let day = GeneratedDays::new(gen, 11, 0, 1).day(0).unwrap();
    let mut tr = LowerTrainer::new(sim, spec.clone(), cfg, 15, 3).unwrap();
    let behavior = 2;
    tr.run_episode(&day, behavior, |_| Ok(true)).unwrap();

    let mut problems = Vec::new();
    let k = spec.targets.len();
    let expected: Vec<usize> = (0..k).map(|c| if cher || c == behavior { n } else { 0 }).collect();
    for (c, buf) in tr.buffers.iter().enumerate() {
        if buf.len() != expected[c] {
            problems.push(format!("buffer {c} holds {} entries, expected {}", buf.len(), expected[c]));
        }
    }
    let bounds = env.bounds;
    for (i, req) in day.requests.iter().enumerate() {
        let copies: Vec<_> = tr.buffers.iter().filter_map(|b| b.iter().nth(i).filter(|_| b.len() == n)).collect();
        if copies.len() != if cher { k } else { 1 } {
            problems.push(format!("transition {i} has {} copies", copies.len()));
            continue;
        }
        let first = &copies[0].exp;
        let eta: Vec<f64> = first
            .action
            .iter()
            .map(|u| bounds.min + (u + 1.0) * 0.5 * (bounds.max - bounds.min))
            .collect();
        let out = env.apply(req, &eta).unwrap();
        if (out.revenue - first.reward).abs() > 1e-9 * (1.0 + out.revenue) || out.pvr != first.pvr {
            problems.push(format!("transition {i} does not replay: {} vs {}", out.revenue, first.reward));
        }
        if first.source_constraint != behavior || first.terminal != (i + 1 == n) {
            problems.push(format!("transition {i} has wrong bookkeeping"));
        }
        for t in &copies {
            let c = t.constraint_id;
            if !Arc::ptr_eq(&t.exp, first) && *t.exp != **first {
                problems.push(format!("copy {c} of transition {i} differs"));
            }
            if t.exp.reward != first.reward {
                problems.push(format!("copy {c} of transition {i} changed the reward"));
            }
            let delta = -(out.pvr - spec.targets[c]).abs();
            let got = t.delta(LowerConfig::default().delta_form, &spec);
            if (got - delta).abs() > 1e-15 {
                problems.push(format!("copy {c} of transition {i}: delta {got} vs {delta}"));
            }
        }
        if cher {
            let tags: Vec<usize> = tr.buffers.iter().map(|b| b.iter().nth(i).unwrap().constraint_id).collect();
            if tags != (0..k).collect::<Vec<_>>() {
                problems.push(format!("transition {i} tags {tags:?}"));
            }
        }
    }
    Audit {
        collected: tr.collected(),
        insertions: tr.buffers.iter().map(|b| b.inserted()).sum(),
        problems,
    }
}

/// Small but complete experiment used by the CLI tests.
pub const TINY_CONFIG: &str = r#"
[env]
requests_per_hour = 5

[lower]
train_days = 2
warmup = 64
batch_size = 16
buffer_capacity = 2000
eval_every = 120

[higher]
train_days = 4
batch_size = 8
buffer_capacity = 200

[run]
eval_days = 2
"#;

pub fn cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_adexposure"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Runs every subcommand into `root` and returns `(relative path, sha256)`
/// for every file written.
pub fn cli_pipeline(root: &std::path::Path, seed: u64) -> Vec<(String, String)> {
    use sha2::{Digest, Sha256};
    std::fs::create_dir_all(root).unwrap();
    let config = root.join("tiny.toml");
    std::fs::write(&config, TINY_CONFIG).unwrap();
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    let cfg = config.to_str().unwrap().to_string();
    let seed = seed.to_string();
    let common = ["--config", cfg.as_str(), "--seed", seed.as_str()];
    let run = |cmd: &str, rest: &[&str]| {
        let mut args = vec![cmd];
        args.extend_from_slice(&common);
        args.extend_from_slice(rest);
        ok(&args);
    };
    run("gen", &["--out", &p("day.jsonl")]);
    run("train-lower", &["--out", &p("lower")]);
    run("train-lower", &["--no-cher", "--out", &p("lower_plain")]);
    run("train-ccp", &["--policy-set", &p("lower/policy_set"), "--out", &p("ccp")]);
    run(
        "eval",
        &["--policy-set", &p("lower/policy_set"), "--ccp", &p("ccp/ccp.json"), "--out", &p("eval")],
    );
    run(
        "eval",
        &["--policy-set", &p("lower/policy_set"), "--day-log", &p("day.jsonl"), "--out", &p("eval_log")],
    );
    run("oracle", &["--days", "2", "--out", &p("oracle")]);
    ok(&["report", "--run", &p("eval")]);

    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let digest = hex::encode(Sha256::digest(std::fs::read(&path).unwrap()));
                files.push((rel, digest));
            }
        }
    }
    files.sort();
    files
}
