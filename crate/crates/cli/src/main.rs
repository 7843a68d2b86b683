//! `oslab`: batch experiments for opportunistic scheduling.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 a
//! `compare --assert` threshold breach.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oslab_core::harness::{self, ExperimentConfig, Mode};
use oslab_core::output::{write_all, Artifact};
use oslab_core::{DnRule, Error, PolicySpec, SelectionMode, TailVector};

#[derive(Parser)]
#[command(name = "oslab", version, about = "Opportunistic scheduling simulation and mean-field analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the finite system.
    Simulate(Common),
    /// Integrate the mean-field dynamics.
    Fluid(Common),
    /// LCQ(d) fixed point.
    Fixedpoint(Common),
    /// Birth-death law of LCQ total occupancy.
    BdEq(Common),
    /// Replicated simulation compared with theory.
    Compare(Common),
    /// Limiting delay curves over parameter grids.
    Sweep(Common),
    /// LCQ(d_n) occupancy scaling across system sizes.
    Scaling(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Lcq,
    Lcqd,
    Lcqdn,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Faithful,
    Physical,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long)]
    d: Option<u32>,
    /// Exponent `a` of the rule d_n = ceil(n^a).
    #[arg(long)]
    dn_exp: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sample_interval: Option<f64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; without it the main table goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 3 when a comparison threshold is breached.
    #[arg(long = "assert")]
    assert_thresholds: bool,
    /// Fluid integration step.
    #[arg(long)]
    dt: Option<f64>,
    /// Initial tail for `fluid`, comma separated (u_0 = 1 first).
    #[arg(long, value_delimiter = ',')]
    v0: Option<Vec<f64>>,
    #[arg(long)]
    k_report: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    d_grid: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    q_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Print only the limiting mean delay (`fixedpoint`, `bd-eq`).
    #[arg(long)]
    delay: bool,
}

enum Failure {
    Validation(String),
    Runtime(String),
    Threshold,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParam(_) | Error::InvalidTail(_) | Error::InvalidCounts(_) => {
                Failure::Validation(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn build_config(mode: Mode, a: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("bad config JSON: {e}")))?
        }
        None => ExperimentConfig::default(),
    };
    cfg.mode = mode;
    let p = &mut cfg.params;
    if let Some(n) = a.n {
        p.n = n;
    }
    if let Some(l) = a.lambda {
        p.lambda = l;
    }
    if let Some(q) = a.q {
        p.q = q;
    }
    if a.policy.is_some() || a.d.is_some() || a.dn_exp.is_some() || a.mode.is_some() {
        let selection_mode = match a.mode {
            Some(ModeArg::Faithful) => SelectionMode::Faithful,
            Some(ModeArg::Physical) => SelectionMode::Physical,
            None => p.policy.selection_mode().unwrap_or_default(),
        };
        let kind = a.policy.unwrap_or(match p.policy {
            PolicySpec::Lcq => PolicyArg::Lcq,
            PolicySpec::LcqD { .. } => PolicyArg::Lcqd,
            PolicySpec::LcqDn { .. } => PolicyArg::Lcqdn,
        });
        p.policy = match kind {
            PolicyArg::Lcq => PolicySpec::Lcq,
            PolicyArg::Lcqd => {
                let current = match p.policy {
                    PolicySpec::LcqD { d, .. } => d,
                    _ => 2,
                };
                PolicySpec::LcqD {
                    d: a.d.unwrap_or(current),
                    selection_mode,
                }
            }
            PolicyArg::Lcqdn => {
                let current = match p.policy {
                    PolicySpec::LcqDn {
                        dn_rule: DnRule::CeilPower { exponent },
                        ..
                    } => exponent,
                    _ => 0.5,
                };
                PolicySpec::LcqDn {
                    dn_rule: DnRule::CeilPower {
                        exponent: a.dn_exp.unwrap_or(current),
                    },
                    selection_mode,
                }
            }
        };
    }
    if let Some(t) = a.t_end {
        cfg.t_end = t;
    }
    if a.burn_in.is_some() {
        cfg.burn_in = a.burn_in;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.sample_interval {
        cfg.sample_interval = s;
    }
    if let Some(r) = a.replicas {
        cfg.replicas = r;
    }
    if a.jobs.is_some() {
        cfg.jobs = a.jobs;
    }
    if a.out.is_some() {
        cfg.output_dir = a.out.clone();
    }
    if let Some(dt) = a.dt {
        cfg.dt = dt;
    }
    if let Some(v0) = &a.v0 {
        cfg.v0 = Some(TailVector::new(v0.clone())?);
    }
    if let Some(k) = a.k_report {
        cfg.k_report = k;
    }
    if let Some(g) = &a.lambda_grid {
        cfg.lambda_grid = g.clone();
    }
    if let Some(g) = &a.d_grid {
        cfg.d_grid = g.clone();
    }
    if let Some(g) = &a.q_grid {
        cfg.q_grid = g.clone();
    }
    if let Some(g) = &a.n_grid {
        cfg.n_grid = g.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes artifacts to the output directory, or the first one to stdout.
fn emit(cfg: &ExperimentConfig, artifacts: &[Artifact]) -> Result<(), Failure> {
    match &cfg.output_dir {
        Some(dir) => {
            write_all(dir, artifacts)?;
            for a in artifacts {
                eprintln!("wrote {}", dir.join(&a.name).display());
            }
        }
        None => {
            if let Some(a) = artifacts.first() {
                print!("{}", a.contents);
            }
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(a) => {
            let cfg = build_config(Mode::Simulate, &a)?;
            let (_, arts) = harness::cmd_simulate(&cfg)?;
            // Without --out, the tail CSV of the first replica is the useful view.
            match cfg.output_dir {
                Some(_) => emit(&cfg, &arts),
                None => emit(&cfg, &arts[1..2]),
            }
        }
        Command::Fluid(a) => {
            let cfg = build_config(Mode::Fluid, &a)?;
            emit(&cfg, &harness::cmd_fluid(&cfg)?)
        }
        Command::Fixedpoint(a) => {
            let cfg = build_config(Mode::Fixedpoint, &a)?;
            let (w, arts) = harness::cmd_fixedpoint(&cfg)?;
            if a.delay {
                println!("{w}");
                Ok(())
            } else {
                emit(&cfg, &arts)
            }
        }
        Command::BdEq(a) => {
            let cfg = build_config(Mode::BdEq, &a)?;
            let (w, arts) = harness::cmd_bd_eq(&cfg)?;
            if a.delay {
                println!("{w}");
                Ok(())
            } else {
                emit(&cfg, &arts)
            }
        }
        Command::Compare(a) => {
            let cfg = build_config(Mode::Compare, &a)?;
            let (report, arts) = harness::cmd_compare(&cfg)?;
            if cfg.output_dir.is_some() {
                emit(&cfg, &arts)?;
            } else {
                print!("{}", arts[0].contents);
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            let checks = report.checks(&cfg.thresholds);
            for c in &checks {
                eprintln!(
                    "{} {}: {:.6} (threshold {})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                );
            }
            if a.assert_thresholds && checks.iter().any(|c| !c.passed) {
                return Err(Failure::Threshold);
            }
            Ok(())
        }
        Command::Sweep(a) => {
            let cfg = build_config(Mode::Sweep, &a)?;
            let (_, arts) = harness::cmd_sweep_delay(&cfg)?;
            emit(&cfg, &arts)
        }
        Command::Scaling(a) => {
            let cfg = build_config(Mode::Scaling, &a)?;
            let (_, arts) = harness::cmd_scaling_lcqdn(&cfg)?;
            emit(&cfg, &arts)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Threshold) => ExitCode::from(3),
    }
}
