//! Deterministic limit dynamics.
//!
//! LCQ(d) follows the infinite ODE system
//!
//! ```text
//! d/dt v_k = λ (v_{k-1} - v_k) - (1 - v_{k+1})^d + (1 - v_k)^d,   k >= 1,
//! ```
//!
//! integrated here with fixed-step RK4 on a truncated level range. LCQ started
//! from a state with bounded support follows a piecewise linear fluid: only the
//! top occupied level drains (at rate `1 - λ v_{K-2}`) while lower levels
//! relax at rate `λ`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TailVector;

pub const DEFAULT_DT: f64 = 1e-3;
/// Extra truncation levels beyond `len(v0) + ceil(λ t_end)`.
pub const TRUNCATION_MARGIN: usize = 16;
/// Monotonicity repairs larger than this are counted in the trajectory.
pub const MONOTONE_FLAG_TOL: f64 = 1e-9;
const RANGE_TOL: f64 = 1e-6;
const EVENT_TOL: f64 = 1e-10;
const DEFAULT_MAX_RECORDS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluidPolicy {
    LcqD { d: u32 },
    Lcq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<TailVector>,
    pub policy: FluidPolicy,
    /// Number of steps where re-monotonization moved an entry by more than
    /// [`MONOTONE_FLAG_TOL`].
    pub flagged_repairs: usize,
}

impl FluidTrajectory {
    pub fn last(&self) -> &TailVector {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// Writes `t,v_1,...,v_Kmax`, one row per recorded time. `header` lines
    /// are emitted first as `#` comments.
    pub fn write_csv<W: Write>(&self, header: &[String], out: &mut W) -> Result<()> {
        for h in header {
            writeln!(out, "# {h}")?;
        }
        let width = self.states.iter().map(TailVector::len).max().unwrap_or(1);
        let mut line = String::from("t");
        for k in 1..width {
            line.push_str(&format!(",v_{k}"));
        }
        writeln!(out, "{line}")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let mut line = format!("{t}");
            for k in 1..width {
                line.push_str(&format!(",{:e}", s.get(k)));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Right-hand side of the LCQ(d) system; `v_{K+1}` is taken as 0 and
/// component 0 is 0.
pub fn lcqd_rhs(v: &[f64], lambda: f64, d: u32) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    lcqd_rhs_into(v, lambda, d as i32, &mut out);
    out
}

fn lcqd_rhs_into(v: &[f64], lambda: f64, d: i32, out: &mut [f64]) {
    out[0] = 0.0;
    let last = v.len() - 1;
    for k in 1..=last {
        let above = if k < last { v[k + 1] } else { 0.0 };
        out[k] = lambda * (v[k - 1] - v[k]) - (1.0 - above).powi(d) + (1.0 - v[k]).powi(d);
    }
}

/// Classical RK4 for an autonomous system on a fixed-size state.
struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(len: usize) -> Self {
        Self {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }

    fn step<F: FnMut(&[f64], &mut [f64])>(&mut self, f: &mut F, y: &[f64], h: f64, out: &mut [f64]) {
        let n = y.len();
        f(y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        f(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        f(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        f(&self.tmp, &mut self.k4);
        for i in 0..n {
            out[i] = y[i] + h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Fixed-step integrator for the truncated LCQ(d) system.
pub struct LcqdStepper {
    lambda: f64,
    d: i32,
    dt: f64,
    t: f64,
    v: Vec<f64>,
    next: Vec<f64>,
    rk: Rk4,
    flagged: usize,
}

impl LcqdStepper {
    /// `levels` is the truncation level `K_max`; the state holds `v_0..v_Kmax`.
    pub fn new(v0: &TailVector, lambda: f64, d: u32, dt: f64, levels: usize) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::param(format!("dt must be positive, got {dt}")));
        }
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::param(format!("lambda must lie in [0,1), got {lambda}")));
        }
        if d < 1 {
            return Err(Error::param("d >= 1 required"));
        }
        let len = (levels + 1).max(v0.len());
        Ok(Self {
            lambda,
            d: d as i32,
            dt,
            t: 0.0,
            v: v0.padded(len),
            next: vec![0.0; len],
            rk: Rk4::new(len),
            flagged: 0,
        })
    }

    /// Truncation level for a horizon, `len(v0) + ceil(λ t_end) + margin`.
    pub fn levels_for(v0: &TailVector, lambda: f64, t_end: f64) -> usize {
        v0.len() + (lambda * t_end).ceil() as usize + TRUNCATION_MARGIN
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &[f64] {
        &self.v
    }

    pub fn flagged_repairs(&self) -> usize {
        self.flagged
    }

    pub fn tail(&self) -> TailVector {
        TailVector::from_projected(self.v.clone())
    }

    /// Advances by `h` (normally `dt`), then projects back onto valid tails.
    pub fn step_by(&mut self, h: f64) -> Result<()> {
        let (lambda, d) = (self.lambda, self.d);
        let mut f = |y: &[f64], out: &mut [f64]| lcqd_rhs_into(y, lambda, d, out);
        self.rk.step(&mut f, &self.v, h, &mut self.next);
        self.t += h;
        let mut worst = 0.0f64;
        self.next[0] = 1.0;
        for k in 1..self.next.len() {
            let x = self.next[k];
            if !(x >= -RANGE_TOL && x <= 1.0 + RANGE_TOL) {
                return Err(Error::StepSize {
                    t: self.t,
                    k,
                    value: x,
                });
            }
            let capped = x.clamp(0.0, self.next[k - 1]);
            worst = worst.max(x - capped);
            self.next[k] = capped;
        }
        if worst > MONOTONE_FLAG_TOL {
            self.flagged += 1;
        }
        std::mem::swap(&mut self.v, &mut self.next);
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        self.step_by(self.dt)
    }
}

/// Integrates the LCQ(d) system with at most ~2000 recorded points.
pub fn integrate_lcqd(v0: &TailVector, lambda: f64, d: u32, t_end: f64, dt: f64) -> Result<FluidTrajectory> {
    let steps = (t_end / dt).ceil() as usize;
    let stride = steps.div_ceil(DEFAULT_MAX_RECORDS).max(1);
    integrate_lcqd_recorded(v0, lambda, d, t_end, dt, stride)
}

/// Integrates the LCQ(d) system, recording every `stride`-th step plus the
/// initial and final states.
pub fn integrate_lcqd_recorded(
    v0: &TailVector,
    lambda: f64,
    d: u32,
    t_end: f64,
    dt: f64,
    stride: usize,
) -> Result<FluidTrajectory> {
    if !(t_end >= 0.0) {
        return Err(Error::param(format!("t_end must be nonnegative, got {t_end}")));
    }
    let levels = LcqdStepper::levels_for(v0, lambda, t_end);
    let mut stepper = LcqdStepper::new(v0, lambda, d, dt, levels)?;
    let steps = (t_end / dt).ceil() as usize;
    let stride = stride.max(1);

    let mut times = vec![0.0];
    let mut states = vec![TailVector::from_projected(v0.padded(levels + 1))];
    for i in 1..=steps {
        // Final step lands exactly on t_end.
        let h = if i == steps { t_end - (steps - 1) as f64 * dt } else { dt };
        stepper.step_by(h)?;
        if i % stride == 0 || i == steps {
            let t = if i == steps { t_end } else { i as f64 * dt };
            times.push(t);
            states.push(stepper.tail());
        }
    }
    Ok(FluidTrajectory {
        times,
        states,
        policy: FluidPolicy::LcqD { d },
        flagged_repairs: stepper.flagged_repairs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub holds: bool,
    /// `max_{t,k} (v^-_k(t) - v^+_k(t))^+` over the grid.
    pub max_violation: f64,
    pub grid_points: usize,
}

/// Integrates two ordered initial states on a shared grid and checks that
/// the ordering `v^+ >= v^-` survives (within 1e-9) at every grid point.
pub fn monotone_pair_check(
    v_plus0: &TailVector,
    v_minus0: &TailVector,
    lambda: f64,
    d: u32,
    t_end: f64,
    dt: f64,
) -> Result<PairCheck> {
    let len = v_plus0.len().max(v_minus0.len());
    if (0..len).any(|k| v_plus0.get(k) < v_minus0.get(k)) {
        return Err(Error::param("v_plus0 must dominate v_minus0 componentwise"));
    }
    let levels = len + (lambda * t_end).ceil() as usize + TRUNCATION_MARGIN;
    let mut plus = LcqdStepper::new(v_plus0, lambda, d, dt, levels)?;
    let mut minus = LcqdStepper::new(v_minus0, lambda, d, dt, levels)?;
    let steps = (t_end / dt).ceil() as usize;
    let mut max_violation = 0.0f64;
    for _ in 0..steps {
        plus.step()?;
        minus.step()?;
        for (p, m) in plus.state().iter().zip(minus.state()) {
            max_violation = max_violation.max(m - p);
        }
    }
    Ok(PairCheck {
        holds: max_violation <= 1e-9,
        max_violation,
        grid_points: steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcqFluidState {
    pub v: TailVector,
    /// `K(t) = min{k : v_j = 0 for all j >= k}`.
    pub top: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcqFluidTrajectory {
    pub trajectory: FluidTrajectory,
    /// `K(t)` at each recorded time.
    pub top_levels: Vec<usize>,
    /// Times at which `K` decremented.
    pub level_drops: Vec<f64>,
    /// Time at which every `v_k`, `k >= 1`, reached 0, if within the horizon.
    pub drain_time: Option<f64>,
}

impl LcqFluidTrajectory {
    pub fn final_state(&self) -> LcqFluidState {
        LcqFluidState {
            v: self.trajectory.last().clone(),
            top: *self.top_levels.last().expect("nonempty"),
        }
    }
}

/// Piecewise LCQ fluid right-hand side for top level `top`.
fn lcq_rhs_into(v: &[f64], lambda: f64, top: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    if top < 2 {
        return;
    }
    for k in 1..top - 1 {
        out[k] = lambda * (v[k - 1] - v[k]);
    }
    out[top - 1] = lambda * v[top - 2] - 1.0;
}

/// Initial derivative of the LCQ fluid at `v`.
pub fn lcq_fluid_rhs(v: &TailVector, lambda: f64) -> Vec<f64> {
    let top = v.support_level();
    let s = v.padded(top.max(1) + 1);
    let mut out = vec![0.0; s.len()];
    lcq_rhs_into(&s, lambda, top, &mut out);
    out
}

/// Integrates the LCQ fluid from a bounded-support tail. The top level `K`
/// decrements whenever `v_{K-1}` hits zero; crossing times are located by
/// bisection on the RK4 step to within 1e-10. Stops once `K = 1`.
pub fn lcq_fluid_trajectory(v0: &TailVector, lambda: f64, t_end: f64, dt: f64) -> Result<LcqFluidTrajectory> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::param(format!("lambda must lie in [0,1), got {lambda}")));
    }
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::param("dt must be positive and t_end nonnegative"));
    }
    let mut top = v0.support_level().max(1);
    let len = top + 1;
    let mut v = v0.padded(len);
    v.truncate(len);
    let mut next = vec![0.0; len];
    let mut rk = Rk4::new(len);

    let steps_hint = (t_end / dt).ceil() as usize;
    let stride = steps_hint.div_ceil(DEFAULT_MAX_RECORDS).max(1);

    let mut times = vec![0.0];
    let mut states = vec![TailVector::from_projected(v.clone())];
    let mut top_levels = vec![top];
    let mut level_drops = Vec::new();
    let mut t = 0.0;
    let mut step_index = 0usize;

    while top > 1 && t < t_end {
        let h = dt.min(t_end - t);
        let mut f = |y: &[f64], out: &mut [f64]| lcq_rhs_into(y, lambda, top, out);
        rk.step(&mut f, &v, h, &mut next);
        let watch = top - 1;
        if next[watch] <= 0.0 {
            // Bisect for the step fraction where the top level empties.
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > EVENT_TOL {
                let mid = 0.5 * (lo + hi);
                rk.step(&mut f, &v, mid, &mut next);
                if next[watch] > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            rk.step(&mut f, &v, hi, &mut next);
            next[watch] = 0.0;
            t += hi;
            project(&mut next);
            std::mem::swap(&mut v, &mut next);
            top -= 1;
            level_drops.push(t);
            times.push(t);
            states.push(TailVector::from_projected(v.clone()));
            top_levels.push(top);
            continue;
        }
        t += h;
        step_index += 1;
        project(&mut next);
        std::mem::swap(&mut v, &mut next);
        if step_index % stride == 0 || t >= t_end {
            times.push(t);
            states.push(TailVector::from_projected(v.clone()));
            top_levels.push(top);
        }
    }
    if top <= 1 {
        // Exact zeros below the drained top.
        v.iter_mut().skip(1).for_each(|x| *x = 0.0);
        if times.last() != Some(&t) {
            times.push(t);
            states.push(TailVector::from_projected(v.clone()));
            top_levels.push(top);
        }
    }
    let drain_time = (top <= 1).then_some(t);
    Ok(LcqFluidTrajectory {
        trajectory: FluidTrajectory {
            times,
            states,
            policy: FluidPolicy::Lcq,
            flagged_repairs: 0,
        },
        top_levels,
        level_drops,
        drain_time,
    })
}

fn project(v: &mut [f64]) {
    v[0] = 1.0;
    for k in 1..v.len() {
        v[k] = v[k].clamp(0.0, v[k - 1]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::fixed_point_default;
    use proptest::prelude::*;

    fn tail(v: &[f64]) -> TailVector {
        TailVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rhs_vanishes_at_fixed_point() {
        for (lambda, d) in [(0.5, 1), (0.7, 2), (0.9, 4)] {
            let fp = fixed_point_default(lambda, d).unwrap();
            let rhs = lcqd_rhs(fp.v_star.as_slice(), lambda, d);
            assert!(rhs.iter().all(|x| x.abs() < 1e-12), "λ={lambda} d={d}");
        }
    }

    #[test]
    fn rhs_hand_evaluations() {
        for (lambda, d) in [(0.3, 1), (0.5, 2), (0.9, 7)] {
            let rhs = lcqd_rhs(&[1.0, 0.0, 0.0], lambda, d);
            assert_eq!(rhs[0], 0.0);
            assert!((rhs[1] - lambda).abs() < 1e-15);
        }
        let rhs = lcqd_rhs(&[1.0, 0.6, 0.2, 0.0], 0.5, 2);
        assert!((rhs[1] + 0.28).abs() < 1e-15, "{}", rhs[1]);
    }

    #[test]
    fn integrate_from_fixed_point_stays_put() {
        let fp = fixed_point_default(0.7, 2).unwrap();
        let traj = integrate_lcqd(&fp.v_star, 0.7, 2, 20.0, DEFAULT_DT).unwrap();
        for s in &traj.states {
            for k in 0..fp.v_star.len() {
                assert!((s.get(k) - fp.v_star.get(k)).abs() < 1e-9);
            }
        }
        assert_eq!(traj.times[0], 0.0);
        assert_eq!(*traj.times.last().unwrap(), 20.0);
    }

    #[test]
    fn zero_arrivals_stay_empty() {
        let traj = integrate_lcqd(&TailVector::empty(), 0.0, 2, 5.0, DEFAULT_DT).unwrap();
        assert!(traj.states.iter().all(|s| s.as_slice()[1..].iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn d1_converges_to_geometric() {
        let traj = integrate_lcqd(&TailVector::empty(), 0.5, 1, 200.0, DEFAULT_DT).unwrap();
        let end = traj.last();
        for k in 1..=10 {
            assert!((end.get(k) - 0.5f64.powi(k as i32)).abs() < 1e-6, "k={k}");
        }
        // Halving the step barely moves the endpoint.
        let half = integrate_lcqd(&TailVector::empty(), 0.5, 1, 200.0, DEFAULT_DT / 2.0).unwrap();
        for k in 1..=10 {
            assert!((end.get(k) - half.last().get(k)).abs() < 1e-8);
        }
    }

    #[test]
    fn step_halving_on_transient() {
        let v0 = tail(&[1.0, 0.9, 0.8, 0.5, 0.1]);
        let a = integrate_lcqd(&v0, 0.7, 3, 10.0, DEFAULT_DT).unwrap();
        let b = integrate_lcqd(&v0, 0.7, 3, 10.0, DEFAULT_DT / 2.0).unwrap();
        let gap = (0..a.last().len())
            .map(|k| (a.last().get(k) - b.last().get(k)).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-8, "{gap}");
        assert_eq!(a.flagged_repairs, 0);
    }

    #[test]
    fn oversized_step_is_reported() {
        let err = integrate_lcqd(&tail(&[1.0, 1.0, 1.0]), 0.9, 16, 5.0, 2.0).unwrap_err();
        assert!(matches!(err, Error::StepSize { .. }), "{err}");
    }

    #[test]
    fn pair_check_identical() {
        let v = tail(&[1.0, 0.4, 0.1]);
        let r = monotone_pair_check(&v, &v, 0.7, 3, 5.0, DEFAULT_DT).unwrap();
        assert!(r.holds);
        assert_eq!(r.max_violation, 0.0);
    }

    #[test]
    fn pair_check_sandwich() {
        let fp = fixed_point_default(0.7, 3).unwrap();
        let v0 = tail(&[1.0, 0.9, 0.05, 0.04, 0.01]);
        let r = monotone_pair_check(&v0.max_with(&fp.v_star), &v0.min_with(&fp.v_star), 0.7, 3, 20.0, DEFAULT_DT)
            .unwrap();
        assert!(r.holds, "{r:?}");
        assert!(monotone_pair_check(&fp.v_star, &v0, 0.7, 3, 1.0, DEFAULT_DT).is_err());
    }

    #[test]
    fn lcq_fluid_initial_derivatives() {
        let d = lcq_fluid_rhs(&tail(&[1.0, 0.6, 0.2, 0.0]), 0.5);
        assert!((d[2] + 0.7).abs() < 1e-15);
        assert!((d[1] - 0.2).abs() < 1e-15);
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn lcq_fluid_already_drained() {
        let tr = lcq_fluid_trajectory(&TailVector::empty(), 0.8, 10.0, DEFAULT_DT).unwrap();
        assert_eq!(tr.drain_time, Some(0.0));
        assert!(tr.top_levels.iter().all(|&k| k == 1));
        assert!(tr.trajectory.states.iter().all(|s| s.as_slice()[1..].iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn lcq_fluid_drains_within_bound() {
        let v0 = tail(&[1.0, 0.9, 0.7]);
        let tr = lcq_fluid_trajectory(&v0, 0.5, 20.0, DEFAULT_DT).unwrap();
        let drained = tr.drain_time.expect("drains");
        assert!(drained <= 3.0 / 0.5);
        assert_eq!(tr.level_drops.len(), 2);
        assert!(tr.top_levels.windows(2).all(|w| w[1] <= w[0]));
        // Top level of (1, .9, .7) first drains in closed form:
        // v_2' = λ v_1 - 1 with v_1' = λ(1 - v_1).
        let (lambda, a0, b0) = (0.5f64, 0.9f64, 0.7f64);
        let v2 = |t: f64| b0 + (lambda - 1.0) * t - (1.0 - a0) * (1.0 - (-lambda * t).exp());
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if v2(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((tr.level_drops[0] - lo).abs() < 1e-9, "{} vs {lo}", tr.level_drops[0]);
    }

    #[test]
    fn trajectory_csv_header() {
        let traj = integrate_lcqd(&TailVector::empty(), 0.5, 1, 0.002, DEFAULT_DT).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&["config_hash=abc".into()], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("# config_hash=abc"));
        assert!(lines.next().unwrap().starts_with("t,v_1,v_2"));
        assert_eq!(lines.count(), 3);
    }

    fn arb_tail(max_len: usize) -> impl Strategy<Value = TailVector> {
        prop::collection::vec(0.0f64..=1.0, 1..max_len).prop_map(|mut xs| {
            xs.sort_by(|a, b| b.partial_cmp(a).unwrap());
            xs.insert(0, 1.0);
            TailVector::new(xs).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn mass_nonincreasing_above_fixed_point(v in arb_tail(8)) {
            let fp = fixed_point_default(0.7, 2).unwrap();
            let v0 = v.max_with(&fp.v_star);
            let traj = integrate_lcqd(&v0, 0.7, 2, 10.0, DEFAULT_DT).unwrap();
            let mass: Vec<f64> = traj.states.iter().map(crate::model::mean_occupancy).collect();
            prop_assert!(mass.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            for s in &traj.states {
                prop_assert!(s.as_slice().windows(2).all(|w| w[1] <= w[0]));
            }
        }

        #[test]
        fn lcq_fluid_levels_nonincreasing(v in arb_tail(6)) {
            let lambda = 0.6;
            let tr = lcq_fluid_trajectory(&v, lambda, 20.0, DEFAULT_DT).unwrap();
            let k0 = v.support_level() as f64;
            prop_assert!(tr.top_levels.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(tr.drain_time.unwrap() <= k0 / (1.0 - lambda));
        }
    }
}
