//! Experiment configuration, replicated runs and simulation-vs-theory
//! reports.
//!
//! Every command returns its results together with the files it would emit
//! ([`Artifact`]s); writing them is left to the caller. Each emitted file
//! carries the full configuration and its hash, and rerunning the same
//! configuration reproduces the files byte for byte.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    bd_equilibrium, delay_lcq_normalized, delay_lcqd, fixed_point_default, write_bd_csv, write_fixed_point_csv,
    BirthDeathEquilibrium, DEFAULT_MASS_TOL,
};
use crate::error::{Error, Result};
use crate::meanfield::{integrate_lcqd, lcq_fluid_trajectory, DEFAULT_DT};
use crate::model::{rho_distance, DnRule, PolicySpec, SelectionMode, SystemParams, TailVector};
use crate::output::{provenance, Artifact};
use crate::sim::{replica_seed, run, InitialState, RunConfig, RunResult, DEFAULT_SAMPLE_INTERVAL};
use crate::stats::{summarize, total_variation, Summary};

pub const DEFAULT_K_REPORT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Fluid,
    Fixedpoint,
    BdEq,
    Compare,
    Sweep,
    Scaling,
}

/// Pass/fail thresholds applied to replica means in COMPARE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub max_abs_tail_gap: f64,
    pub rho_gap: f64,
    pub tv_occupancy: f64,
    pub p_max_le_1: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            max_abs_tail_gap: 0.01,
            rho_gap: 0.01,
            tv_occupancy: 0.05,
            p_max_le_1: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub params: SystemParams,
    pub t_end: f64,
    pub burn_in: Option<f64>,
    pub seed: u64,
    pub sample_interval: f64,
    pub initial_state: InitialState,
    pub replicas: usize,
    /// Worker threads for replicas; `None` uses host parallelism.
    pub jobs: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub lambda_grid: Vec<f64>,
    pub d_grid: Vec<u32>,
    pub q_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub k_report: usize,
    /// Step size for fluid integration.
    pub dt: f64,
    /// Initial tail for fluid runs; defaults to the empty system.
    pub v0: Option<TailVector>,
    pub thresholds: Thresholds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Simulate,
            params: SystemParams::new(
                1000,
                0.5,
                0.5,
                PolicySpec::LcqD {
                    d: 2,
                    selection_mode: SelectionMode::Faithful,
                },
            ),
            t_end: 200.0,
            burn_in: None,
            seed: 1,
            sample_interval: DEFAULT_SAMPLE_INTERVAL,
            initial_state: InitialState::Empty,
            replicas: 1,
            jobs: None,
            output_dir: None,
            lambda_grid: (1..=19).map(|i| i as f64 / 20.0).collect(),
            d_grid: vec![1, 2, 4, 8],
            q_grid: vec![0.3, 0.5, 0.8],
            n_grid: vec![100, 1000, 10_000],
            k_report: DEFAULT_K_REPORT,
            dt: DEFAULT_DT,
            v0: None,
            thresholds: Thresholds::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn run_config(&self, params: SystemParams, seed: u64) -> RunConfig {
        RunConfig {
            params,
            t_end: self.t_end,
            burn_in: self.burn_in,
            seed,
            sample_interval: self.sample_interval,
            initial_state: self.initial_state.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas < 1 {
            return Err(Error::param("replicas must be >= 1"));
        }
        if self.jobs == Some(0) {
            return Err(Error::param("jobs must be >= 1"));
        }
        match self.mode {
            Mode::Simulate | Mode::Compare => self.run_config(self.params, self.seed).validate()?,
            Mode::Fluid | Mode::Fixedpoint | Mode::BdEq => {
                self.params.validate()?;
                if !(self.dt > 0.0) || !(self.t_end > 0.0) {
                    return Err(Error::param("dt and t_end must be positive"));
                }
            }
            Mode::Sweep => {
                if self.lambda_grid.is_empty() || self.d_grid.is_empty() || self.q_grid.is_empty() {
                    return Err(Error::param("sweep grids must be non-empty"));
                }
                if let Some(l) = self.lambda_grid.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
                    return Err(Error::param(format!("lambda grid value {l} outside (0,1)")));
                }
                if self.d_grid.contains(&0) {
                    return Err(Error::param("d >= 1 required"));
                }
                if let Some(q) = self.q_grid.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
                    return Err(Error::param(format!("q grid value {q} outside (0,1]")));
                }
            }
            Mode::Scaling => {
                if self.n_grid.is_empty() {
                    return Err(Error::param("n grid must be non-empty"));
                }
                if !matches!(self.params.policy, PolicySpec::LcqDn { .. }) {
                    return Err(Error::param("scaling requires the lcq_dn policy"));
                }
                for &n in &self.n_grid {
                    self.run_config(SystemParams { n, ..self.params }, self.seed).validate()?;
                }
            }
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.jobs {
            b = b.num_threads(j);
        }
        b.build().map_err(|e| Error::Io(e.to_string()))
    }
}

/// Runs `config.replicas` independent simulations of `params` in parallel.
/// Replica `i` uses seed `seed XOR splitmix64(i)`; results are returned in
/// replica order regardless of scheduling.
pub fn run_replicas(config: &ExperimentConfig, params: SystemParams) -> Result<Vec<RunResult>> {
    let pool = config.pool()?;
    pool.install(|| {
        (0..config.replicas as u64)
            .into_par_iter()
            .map(|i| run(&config.run_config(params, replica_seed(config.seed, i))))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaMetrics {
    pub seed: u64,
    pub max_abs_tail_gap: f64,
    pub rho_gap: f64,
    pub tv_occupancy: Option<f64>,
    pub p_max_le_1: Option<f64>,
    pub mean_total_occupancy: f64,
    pub little_relative_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub policy: String,
    /// Sample size actually used by LCQ(d) / LCQ(d_n).
    pub d_used: Option<usize>,
    pub k_report: usize,
    /// Limiting tail the simulation is compared against.
    pub theory_tail: TailVector,
    pub max_abs_tail_gap: Summary,
    pub rho_gap: Summary,
    pub tv_occupancy: Option<Summary>,
    pub p_max_le_1: Option<Summary>,
    pub replicas: Vec<ReplicaMetrics>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl ComparisonReport {
    /// Thresholds applied to replica means.
    pub fn checks(&self, t: &Thresholds) -> Vec<CriterionCheck> {
        let below = |name: &str, value: f64, threshold: f64| CriterionCheck {
            name: name.into(),
            value,
            threshold,
            passed: value < threshold,
        };
        let mut out = Vec::new();
        if let (Some(tv), Some(pm)) = (&self.tv_occupancy, &self.p_max_le_1) {
            out.push(below("tv_occupancy", tv.mean, t.tv_occupancy));
            out.push(CriterionCheck {
                name: "p_max_le_1".into(),
                value: pm.mean,
                threshold: t.p_max_le_1,
                passed: pm.mean > t.p_max_le_1,
            });
        } else {
            out.push(below("max_abs_tail_gap", self.max_abs_tail_gap.mean, t.max_abs_tail_gap));
            out.push(below("rho_gap", self.rho_gap.mean, t.rho_gap));
        }
        out
    }
}

/// Largest `|u_k - v_k|` over `1 <= k <= k_report`.
pub fn max_abs_tail_gap(u: &TailVector, v: &TailVector, k_report: usize) -> f64 {
    (1..=k_report).map(|k| (u.get(k) - v.get(k)).abs()).fold(0.0, f64::max)
}

/// Replicated simulation compared with the mean-field prediction: the
/// fixed point for LCQ(d) / LCQ(d_n), and for LCQ the drained tail
/// `(1, 0, ...)` plus the birth-death law of total occupancy.
pub fn cmd_compare(config: &ExperimentConfig) -> Result<(ComparisonReport, Vec<Artifact>)> {
    config.validate()?;
    let params = config.params.validate()?;
    let lambda = params.lambda;
    let mut warnings = Vec::new();

    let (theory_tail, bd): (TailVector, Option<BirthDeathEquilibrium>) = match params.policy {
        PolicySpec::Lcq => {
            let top = match &config.initial_state {
                InitialState::Empty => 1,
                InitialState::Lengths(l) => l.iter().copied().max().unwrap_or(0) as usize + 1,
            };
            let drain = top as f64 / (1.0 - lambda);
            let burn_in = config.run_config(params, config.seed).burn_in();
            if burn_in < drain {
                warnings.push(format!(
                    "burn_in {burn_in} is shorter than the fluid drain bound K/(1-lambda) = {drain}"
                ));
            }
            (TailVector::empty(), Some(bd_equilibrium(lambda, params.q, DEFAULT_MASS_TOL)?))
        }
        _ => {
            let d = params.policy.sample_size(params.n).expect("sampled policy") as u32;
            (fixed_point_default(lambda, d)?.v_star, None)
        }
    };

    let results = run_replicas(config, params)?;
    let replicas: Vec<ReplicaMetrics> = results
        .iter()
        .map(|r| ReplicaMetrics {
            seed: r.seed,
            max_abs_tail_gap: max_abs_tail_gap(&r.time_avg_tail, &theory_tail, config.k_report),
            rho_gap: rho_distance(&r.time_avg_tail, &theory_tail),
            tv_occupancy: bd.as_ref().map(|b| total_variation(&r.total_occupancy_hist, &b.pi)),
            p_max_le_1: bd.as_ref().map(|_| r.p_max_le_1()),
            mean_total_occupancy: r.mean_total_occupancy(),
            little_relative_gap: r.little_check.map(|l| l.relative_gap()),
        })
        .collect();
    for m in &replicas {
        if let Some(g) = m.little_relative_gap {
            if g > 0.05 {
                warnings.push(format!("replica seed {}: Little's law gap {:.3} exceeds 5%", m.seed, g));
            }
        }
    }

    let collect = |f: &dyn Fn(&ReplicaMetrics) -> Option<f64>| -> Option<Summary> {
        let xs: Option<Vec<f64>> = replicas.iter().map(f).collect();
        xs.map(|v| summarize(&v))
    };
    let report = ComparisonReport {
        policy: params.policy.name().into(),
        d_used: results.first().and_then(|r| r.d_used),
        k_report: config.k_report,
        theory_tail,
        max_abs_tail_gap: collect(&|m| Some(m.max_abs_tail_gap)).expect("nonempty"),
        rho_gap: collect(&|m| Some(m.rho_gap)).expect("nonempty"),
        tv_occupancy: collect(&|m| m.tv_occupancy),
        p_max_le_1: collect(&|m| m.p_max_le_1),
        replicas,
        warnings,
    };

    let header = provenance("compare", config, Some(config.seed));
    let mut csv = String::from("seed,max_abs_tail_gap,rho_gap,tv_occupancy,p_max_le_1,mean_total_occupancy\n");
    for m in &report.replicas {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(
            csv,
            "{},{:e},{:e},{},{},{:e}",
            m.seed,
            m.max_abs_tail_gap,
            m.rho_gap,
            opt(m.tv_occupancy),
            opt(m.p_max_le_1),
            m.mean_total_occupancy
        )
        .expect("write to string");
    }
    let json = serde_json::json!({
        "provenance": header,
        "config": config,
        "report": report,
        "checks": report.checks(&config.thresholds),
    });
    let artifacts = vec![
        Artifact::json("compare_report.json", &json),
        Artifact::csv("compare_replicas.csv", &header, &csv),
    ];
    Ok((report, artifacts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRow {
    pub lambda: f64,
    pub policy: String,
    pub d: Option<u32>,
    pub q: Option<f64>,
    /// Mean delay for LCQ(d); `n` times the mean delay for LCQ.
    pub delay: f64,
}

/// Limiting delay curves: LCQ(d) over the `(λ, d)` grid and normalized LCQ
/// delay over the `(λ, q)` grid.
pub fn cmd_sweep_delay(config: &ExperimentConfig) -> Result<(Vec<DelayRow>, Vec<Artifact>)> {
    config.validate()?;
    let mut rows = Vec::new();
    for &d in &config.d_grid {
        for &lambda in &config.lambda_grid {
            rows.push(DelayRow {
                lambda,
                policy: "lcqd".into(),
                d: Some(d),
                q: None,
                delay: delay_lcqd(lambda, d)?,
            });
        }
    }
    for &q in &config.q_grid {
        for &lambda in &config.lambda_grid {
            rows.push(DelayRow {
                lambda,
                policy: "lcq".into(),
                d: None,
                q: Some(q),
                delay: delay_lcq_normalized(lambda, q)?,
            });
        }
    }
    let header = provenance("sweep", config, None);
    let mut csv = String::from("lambda,policy,d,q,delay\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{:e}",
            r.lambda,
            r.policy,
            r.d.map(|d| d.to_string()).unwrap_or_default(),
            r.q.map(|q| q.to_string()).unwrap_or_default(),
            r.delay
        )
        .expect("write to string");
    }
    let artifacts = vec![
        Artifact::csv("sweep_delay.csv", &header, &csv),
        Artifact::new("sweep_delay.gp", gnuplot_script(config)),
    ];
    Ok((rows, artifacts))
}

fn gnuplot_script(config: &ExperimentConfig) -> String {
    let mut s = String::from(
        "# Plots sweep_delay.csv: (a) n x delay under LCQ, (b) delay under LCQ(d).\n\
         set datafile separator ','\n\
         set key left top\n\
         set xlabel 'lambda'\n\
         set terminal pngcairo size 1200,500\n\
         set output 'sweep_delay.png'\n\
         set multiplot layout 1,2\n\
         set title 'LCQ (normalized)'\n\
         set ylabel 'n x mean delay'\n",
    );
    let lcq: Vec<String> = config
        .q_grid
        .iter()
        .map(|q| format!("'sweep_delay.csv' using 1:($4=={q} ? $5 : 1/0) with lines title 'q={q}'"))
        .collect();
    s.push_str(&format!("plot {}\n", lcq.join(", \\\n     ")));
    s.push_str("set title 'LCQ(d)'\nset ylabel 'mean delay'\n");
    let lcqd: Vec<String> = config
        .d_grid
        .iter()
        .map(|d| format!("'sweep_delay.csv' using 1:($3=={d} ? $5 : 1/0) with lines title 'd={d}'"))
        .collect();
    s.push_str(&format!("plot {}\n", lcqd.join(", \\\n     ")));
    s.push_str("unset multiplot\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub d_n: usize,
    pub mean_total_occupancy: f64,
    /// `mean_total_occupancy * d_n / n`.
    pub rescaled: f64,
}

/// Time-average total occupancy under LCQ(d_n) across system sizes,
/// rescaled by `d_n / n`.
pub fn cmd_scaling_lcqdn(config: &ExperimentConfig) -> Result<(Vec<ScalingRow>, Vec<Artifact>)> {
    config.validate()?;
    let mut rows = Vec::new();
    for &n in &config.n_grid {
        let params = SystemParams { n, ..config.params }.validate()?;
        let d_n = params.policy.sample_size(n).expect("lcq_dn policy");
        let results = run_replicas(config, params)?;
        let mean = results.iter().map(RunResult::mean_total_occupancy).sum::<f64>() / results.len() as f64;
        rows.push(ScalingRow {
            n,
            d_n,
            mean_total_occupancy: mean,
            rescaled: mean * d_n as f64 / n as f64,
        });
    }
    let header = provenance("scaling", config, Some(config.seed));
    let mut csv = String::from("n,d_n,mean_total_occupancy,rescaled_occupancy\n");
    for r in &rows {
        writeln!(csv, "{},{},{:e},{:e}", r.n, r.d_n, r.mean_total_occupancy, r.rescaled).expect("write to string");
    }
    Ok((rows, vec![Artifact::csv("scaling_lcqdn.csv", &header, &csv)]))
}

/// Replicated simulation; emits the full results and the averaged tail.
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<(Vec<RunResult>, Vec<Artifact>)> {
    config.validate()?;
    let results = run_replicas(config, config.params)?;
    let header = provenance("simulate", config, Some(config.seed));
    let mut artifacts = Vec::new();
    for (i, r) in results.iter().enumerate() {
        let json = serde_json::json!({ "provenance": header, "config": config, "result": r });
        artifacts.push(Artifact::json(format!("run_{i}.json"), &json));
        let mut buf = Vec::new();
        let mut h = header.clone();
        h.push(format!("replica={i} seed={}", r.seed));
        r.write_tail_csv(&h, &mut buf)?;
        artifacts.push(Artifact::new(format!("run_{i}_tail.csv"), String::from_utf8(buf).expect("utf8")));
    }
    Ok((results, artifacts))
}

/// Mean-field trajectory: the ODE for LCQ(d) (with `d = d_n` for LCQ(d_n)),
/// the piecewise fluid for LCQ.
pub fn cmd_fluid(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    config.validate()?;
    let p = config.params;
    let v0 = config.v0.clone().unwrap_or_else(TailVector::empty);
    let header = provenance("fluid", config, None);
    let mut buf = Vec::new();
    match p.policy {
        PolicySpec::Lcq => {
            let tr = lcq_fluid_trajectory(&v0, p.lambda, config.t_end, config.dt)?;
            tr.trajectory.write_csv(&header, &mut buf)?;
        }
        _ => {
            let d = p.policy.sample_size(p.n).expect("sampled policy") as u32;
            integrate_lcqd(&v0, p.lambda, d, config.t_end, config.dt)?.write_csv(&header, &mut buf)?;
        }
    }
    Ok(vec![Artifact::new("fluid.csv", String::from_utf8(buf).expect("utf8"))])
}

/// Fixed point CSV for LCQ(d) / LCQ(d_n), and the limiting delay.
pub fn cmd_fixedpoint(config: &ExperimentConfig) -> Result<(f64, Vec<Artifact>)> {
    config.validate()?;
    let p = config.params;
    let d = p
        .policy
        .sample_size(p.n)
        .ok_or_else(|| Error::param("fixedpoint requires an lcq_d or lcq_dn policy"))? as u32;
    let fp = fixed_point_default(p.lambda, d)?;
    let mut buf = Vec::new();
    for h in provenance("fixedpoint", config, None) {
        buf.extend_from_slice(format!("# {h}\n").as_bytes());
    }
    write_fixed_point_csv(&fp, &mut buf)?;
    Ok((
        delay_lcqd(p.lambda, d)?,
        vec![Artifact::new("fixedpoint.csv", String::from_utf8(buf).expect("utf8"))],
    ))
}

/// Birth-death law of LCQ total occupancy, and the normalized delay.
pub fn cmd_bd_eq(config: &ExperimentConfig) -> Result<(f64, Vec<Artifact>)> {
    config.validate()?;
    let p = config.params;
    let bd = bd_equilibrium(p.lambda, p.q, DEFAULT_MASS_TOL)?;
    let mut buf = Vec::new();
    for h in provenance("bd-eq", config, None) {
        buf.extend_from_slice(format!("# {h}\n").as_bytes());
    }
    write_bd_csv(&bd, &mut buf)?;
    Ok((
        bd.mean_occupancy / p.lambda,
        vec![Artifact::new("bd_eq.csv", String::from_utf8(buf).expect("utf8"))],
    ))
}

/// Convenience: the LCQ(d_n) policy with `d_n = ceil(n^exponent)`.
pub fn lcqdn_policy(exponent: f64, selection_mode: SelectionMode) -> PolicySpec {
    PolicySpec::LcqDn {
        dn_rule: DnRule::CeilPower { exponent },
        selection_mode,
    }
}
