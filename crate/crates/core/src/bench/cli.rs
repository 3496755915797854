//! Command-line front end. Every subcommand reads an optional config file,
//! writes its outputs plus `run_manifest.json` into an output directory and
//! prints one JSON summary line on stdout.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use super::{baseline_manual, compare_report, oracle_global, ExperimentConfig, RunReport};
use crate::env::{generate_day, load_day_log, write_day_log, DaySource, DayStream, GeneratedDays};
use crate::error::{Error, Result};
use crate::higher::{load_ccp, rollout_two_level, save_ccp, train_ccp, write_choice_log};
use crate::lower::{
    act_with, load_policy_set, save_policy_set, train_lower, write_curve_csv, LowerRunOptions,
    PolicySet,
};
use crate::seeds::{
    STREAM_CALIBRATION, STREAM_CCP_DAYS, STREAM_EVAL_DAYS, STREAM_TRAIN_DAYS, STREAM_VALIDATION_DAYS,
};

#[derive(Debug, Parser)]
#[command(name = "adexposure", version, about = "Adaptive ad exposure experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one synthetic day as a JSONL request log.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the request-level policy set.
    TrainLower {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Train without hindsight relabeling.
        #[arg(long)]
        no_cher: bool,
    },
    /// Train the hour-level constraint choice policy on a frozen policy set.
    TrainCcp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy_set: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the manual baseline, each policy and optionally a CCP.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy_set: PathBuf,
        #[arg(long)]
        ccp: Option<PathBuf>,
        /// Number of generated held-out days (defaults to `run.eval_days`).
        #[arg(long, conflicts_with = "day_log")]
        days: Option<usize>,
        /// Evaluate on request logs instead of generated days.
        #[arg(long)]
        day_log: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hindsight global allocation and its hourly ad-fraction profile.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        days: Option<usize>,
        /// Day-level ad fraction (defaults to `constraints.alpha`).
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the comparison table of a finished evaluation directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    outputs: Vec<String>,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, outputs: &[&str]) -> Result<()> {
    write_json(
        &dir.join("run_manifest.json"),
        &Manifest {
            command,
            config_hash: cfg.hash()?,
            seed: cfg.run.seed,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        },
    )
}

fn eval_days(cfg: &ExperimentConfig, days: Option<usize>, logs: &[PathBuf]) -> Result<Vec<DayStream>> {
    if logs.is_empty() {
        let n = days.unwrap_or(cfg.run.eval_days);
        GeneratedDays::new(cfg.env.clone(), cfg.run.seed, STREAM_EVAL_DAYS, n).collect()
    } else {
        logs.iter().map(load_day_log).collect()
    }
}

fn policy_report(
    cfg: &ExperimentConfig,
    set: &PolicySet,
    c: usize,
    days: &[DayStream],
) -> Result<RunReport> {
    let sim = cfg.simulator()?;
    let policy = set.get(c)?;
    let per_day = days
        .iter()
        .map(|d| {
            let ctx = sim.rollout(d, |s, _| act_with(&policy.actor, s, sim.env.bounds, None))?;
            Ok((d.day_id, ctx.outcomes))
        })
        .collect::<Result<Vec<_>>>()?;
    RunReport::from_days(&format!("pi_{c}"), &per_day)
}

fn nearest_to_alpha(cfg: &ExperimentConfig) -> usize {
    let a = cfg.constraints.alpha;
    let t = &cfg.constraints.targets;
    (0..t.len())
        .min_by(|x, y| (t[*x] - a).abs().total_cmp(&(t[*y] - a).abs()))
        .unwrap_or(0)
}

fn execute(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Gen { common, out } => {
            let cfg = load_config(&common)?;
            let day = generate_day(&cfg.env, cfg.run.seed)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            write_day_log(&day, &out)?;
            Ok(json!({
                "command": "gen",
                "seed": cfg.run.seed,
                "requests": day.len(),
                "out": out,
            }))
        }
        Command::TrainLower { common, out, no_cher } => {
            let mut cfg = load_config(&common)?;
            if no_cher {
                cfg.lower.cher = false;
            }
            create_dir(&out)?;
            let sim = cfg.simulator()?;
            let seed = cfg.run.seed;
            let train = GeneratedDays::new(cfg.env.clone(), seed, STREAM_TRAIN_DAYS, cfg.lower.train_days);
            let curve_days = GeneratedDays::new(
                cfg.env.clone(),
                seed,
                STREAM_VALIDATION_DAYS,
                cfg.lower.curve_eval_days,
            )
            .collect()?;
            let opts = LowerRunOptions {
                seed,
                max_steps: None,
                rescue_dir: Some(out.join("policy_set_rescue")),
            };
            let run = train_lower(&sim, &cfg.constraints, &cfg.lower, &train, &curve_days, &opts)?;
            save_policy_set(&run.policy_set, out.join("policy_set"), &cfg.hash()?)?;
            write_curve_csv(&run.curves, create(&out.join("lower_curves.csv"))?)?;
            write_manifest(&out, "train-lower", &cfg, &["policy_set", "lower_curves.csv"])?;
            let last: Vec<_> = run
                .curves
                .iter()
                .filter(|p| p.step == run.steps)
                .map(|p| json!({"target": p.target, "mean_abs_deviation": p.mean_abs_deviation}))
                .collect();
            Ok(json!({
                "command": "train-lower",
                "steps": run.steps,
                "cher": cfg.lower.cher,
                "final": last,
                "out": out,
            }))
        }
        Command::TrainCcp { common, policy_set, out } => {
            let cfg = load_config(&common)?;
            create_dir(&out)?;
            let (set, _) = load_policy_set(&policy_set)?;
            let sim = cfg.simulator()?;
            let days = GeneratedDays::new(cfg.env.clone(), cfg.run.seed, STREAM_CCP_DAYS, cfg.higher.train_days);
            let run = train_ccp(&sim, &set, &cfg.constraints, &cfg.higher, &days, cfg.run.seed)?;
            save_ccp(&run.ccp, out.join("ccp.json"))?;
            let mut w = csv::Writer::from_writer(create(&out.join("ccp_training.csv"))?);
            for d in &run.days {
                w.serialize(d)?;
            }
            w.flush().map_err(|e| Error::io(out.join("ccp_training.csv"), e))?;
            write_manifest(&out, "train-ccp", &cfg, &["ccp.json", "ccp_training.csv"])?;
            let tail = &run.days[run.days.len().saturating_sub(10)..];
            let mean_pvr = tail.iter().map(|d| d.day_pvr).sum::<f64>() / tail.len() as f64;
            Ok(json!({
                "command": "train-ccp",
                "days": run.days.len(),
                "late_mean_day_pvr": mean_pvr,
                "out": out,
            }))
        }
        Command::Eval {
            common,
            policy_set,
            ccp,
            days,
            day_log,
            out,
        } => {
            let cfg = load_config(&common)?;
            create_dir(&out)?;
            let (set, _) = load_policy_set(&policy_set)?;
            set.covers(&cfg.constraints.targets)?;
            let days = eval_days(&cfg, days, &day_log)?;
            let env = cfg.env()?;
            let calibration = GeneratedDays::new(cfg.env.clone(), cfg.run.seed, STREAM_CALIBRATION, 1).day(0)?;
            let (eta, manual) = baseline_manual(&env, &calibration, &days, cfg.constraints.alpha)?;
            let mut reports = vec![manual];
            for c in 0..set.len() {
                reports.push(policy_report(&cfg, &set, c, &days)?);
            }
            let mut outputs = vec!["eval_reports.json", "eval_report.csv", "eval_hourly.csv"];
            if let Some(path) = &ccp {
                let ccp = load_ccp(path)?;
                let sim = cfg.simulator()?;
                let rolls = days
                    .iter()
                    .map(|d| rollout_two_level(&sim, &ccp, &set, d))
                    .collect::<Result<Vec<_>>>()?;
                write_choice_log(&rolls, create(&out.join("choice_log.csv"))?)?;
                let per_day: Vec<_> = rolls.into_iter().map(|r| (r.day_id, r.outcomes)).collect();
                reports.push(RunReport::from_days("ccp", &per_day)?);
                outputs.push("choice_log.csv");
            }
            let reference = format!("pi_{}", nearest_to_alpha(&cfg));
            let cmp = compare_report(&reports, "manual", &reference)?;
            write_json(&out.join("eval_reports.json"), &reports)?;
            cmp.write_csv(create(&out.join("eval_report.csv"))?)?;
            cmp.write_hourly_csv(create(&out.join("eval_hourly.csv"))?)?;
            write_manifest(&out, "eval", &cfg, &outputs)?;
            let rows: Vec<_> = cmp
                .rows
                .iter()
                .map(|r| json!({"name": r.name, "pvr": r.pvr, "relative_revenue": r.relative_revenue}))
                .collect();
            Ok(json!({
                "command": "eval",
                "days": days.len(),
                "manual_multiplier": eta,
                "rows": rows,
                "out": out,
            }))
        }
        Command::Oracle {
            common,
            days,
            alpha,
            out,
        } => {
            let cfg = load_config(&common)?;
            create_dir(&out)?;
            let alpha = alpha.unwrap_or(cfg.constraints.alpha);
            let env = cfg.env()?;
            let days = eval_days(&cfg, days, &[])?;
            let results = days
                .iter()
                .map(|d| oracle_global(d, alpha, &env.position))
                .collect::<Result<Vec<_>>>()?;
            let mut w = csv::Writer::from_writer(create(&out.join("oracle_hourly.csv"))?);
            w.write_record(["day", "hour", "ad_fraction", "revenue"])?;
            for (d, r) in days.iter().zip(&results) {
                for (h, frac, rev) in &r.hourly {
                    w.write_record([d.day_id.to_string(), h.to_string(), frac.to_string(), rev.to_string()])?;
                }
            }
            w.flush().map_err(|e| Error::io(out.join("oracle_hourly.csv"), e))?;
            write_manifest(&out, "oracle", &cfg, &["oracle_hourly.csv"])?;
            let revenue: f64 = results.iter().map(|r| r.revenue).sum();
            Ok(json!({
                "command": "oracle",
                "alpha": alpha,
                "days": days.len(),
                "revenue": revenue,
                "out": out,
            }))
        }
        Command::Report { run } => {
            let path = run.join("eval_reports.json");
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let reports: Vec<RunReport> = serde_json::from_str(&text)?;
            let reference = if reports.iter().any(|r| r.name == "pi_1") { "pi_1" } else { "manual" };
            let cmp = compare_report(&reports, "manual", reference)?;
            cmp.write_csv(create(&run.join("report.csv"))?)?;
            cmp.write_hourly_csv(create(&run.join("report_hourly.csv"))?)?;
            eprint!("{}", cmp.render());
            let rows: Vec<_> = cmp
                .rows
                .iter()
                .map(|r| json!({"name": r.name, "pvr": r.pvr, "revenue": r.revenue, "relative_revenue": r.relative_revenue}))
                .collect();
            Ok(json!({"command": "report", "rows": rows, "out": run}))
        }
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit status: 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
