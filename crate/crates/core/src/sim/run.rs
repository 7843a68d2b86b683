use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::policy::Selector;
use super::state::QueueSystemState;
use crate::error::{Error, Result};
use crate::model::{SystemParams, TailVector};

pub const DEFAULT_SAMPLE_INTERVAL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    Empty,
    Lengths(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: SystemParams,
    pub t_end: f64,
    /// Statistics are collected over `[burn_in, t_end]`; defaults to `t_end / 2`.
    #[serde(default)]
    pub burn_in: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sample_interval")]
    pub sample_interval: f64,
    #[serde(default)]
    pub initial_state: InitialState,
}

fn default_sample_interval() -> f64 {
    DEFAULT_SAMPLE_INTERVAL
}

impl RunConfig {
    pub fn new(params: SystemParams, t_end: f64, seed: u64) -> Self {
        Self {
            params,
            t_end,
            burn_in: None,
            seed,
            sample_interval: DEFAULT_SAMPLE_INTERVAL,
            initial_state: InitialState::Empty,
        }
    }

    pub fn with_burn_in(mut self, burn_in: f64) -> Self {
        self.burn_in = Some(burn_in);
        self
    }

    pub fn burn_in(&self) -> f64 {
        self.burn_in.unwrap_or(self.t_end / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::param(format!("t_end must be positive, got {}", self.t_end)));
        }
        let b = self.burn_in();
        if !(b >= 0.0 && b < self.t_end) {
            return Err(Error::param(format!("burn_in must lie in [0, t_end), got {b}")));
        }
        if !(self.sample_interval > 0.0) {
            return Err(Error::param("sample_interval must be positive"));
        }
        if let InitialState::Lengths(l) = &self.initial_state {
            if l.len() != self.params.n {
                return Err(Error::param(format!(
                    "initial lengths has {} entries, n = {}",
                    l.len(),
                    self.params.n
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    Arrival(usize),
    SchedulingInstant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    /// Queue served and the departing packet's arrival time.
    Served { queue: usize, arrived: f64 },
    Idle,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub arrivals: u64,
    pub services: u64,
    pub idles: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LittleCheck {
    /// `n λ × mean_sojourn`.
    pub arrival_rate_times_sojourn: f64,
    /// Time-average total number of packets.
    pub time_avg_total: f64,
}

impl LittleCheck {
    pub fn relative_gap(&self) -> f64 {
        (self.arrival_rate_times_sojourn - self.time_avg_total).abs() / self.time_avg_total.max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Time average of `u` over `[burn_in, t_end]`.
    pub time_avg_tail: TailVector,
    /// Time-weighted pmf of the total number of packets.
    pub total_occupancy_hist: Vec<f64>,
    /// Time-weighted pmf of the longest queue.
    pub max_queue_hist: Vec<f64>,
    /// Mean delay of packets that arrived after burn-in and left by `t_end`.
    pub mean_sojourn: Option<f64>,
    pub departed: u64,
    pub little_check: Option<LittleCheck>,
    pub event_counts: EventCounts,
    pub seed: u64,
    /// Sample size used by LCQ(d) / LCQ(d_n).
    pub d_used: Option<usize>,
    /// `(t, total packets)` at every sample instant.
    pub occupancy_trace: Vec<(f64, u64)>,
}

impl RunResult {
    pub fn mean_total_occupancy(&self) -> f64 {
        self.total_occupancy_hist
            .iter()
            .enumerate()
            .map(|(j, p)| j as f64 * p)
            .sum()
    }

    /// Time fraction during which no queue held more than one packet.
    pub fn p_max_le_1(&self) -> f64 {
        self.max_queue_hist.iter().take(2).sum()
    }

    /// Writes `k,time_avg_u_k` rows.
    pub fn write_tail_csv<W: std::io::Write>(&self, header: &[String], out: &mut W) -> Result<()> {
        for h in header {
            writeln!(out, "# {h}")?;
        }
        writeln!(out, "k,time_avg_u_k")?;
        for (k, u) in self.time_avg_tail.as_slice().iter().enumerate() {
            writeln!(out, "{k},{u:e}")?;
        }
        Ok(())
    }
}

/// Exact event-driven simulator of the finite system.
///
/// Time is measured in units where the scheduling rate is `n`. Arrivals to
/// all queues form a Poisson stream of rate `nλ` and scheduling instants a
/// stream of rate `n`; both are generated from one exponential clock of
/// rate `n(λ + 1)`.
pub struct Simulator {
    params: SystemParams,
    state: QueueSystemState,
    selector: Selector,
    rng: Xoshiro256PlusPlus,
    holding: Exp<f64>,
    p_arrival: f64,
}

impl Simulator {
    pub fn new(params: SystemParams, initial: &InitialState, seed: u64) -> Result<Self> {
        let params = params.validate()?;
        let state = match initial {
            InitialState::Empty => QueueSystemState::empty(params.n)?,
            InitialState::Lengths(l) => {
                if l.len() != params.n {
                    return Err(Error::param("initial lengths must have n entries"));
                }
                QueueSystemState::from_lengths(l.clone())?
            }
        };
        let rate = params.n as f64 * (params.lambda + 1.0);
        Ok(Self {
            selector: Selector::new(&params)?,
            state,
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            holding: Exp::new(rate).map_err(|e| Error::param(e.to_string()))?,
            p_arrival: params.lambda / (params.lambda + 1.0),
            params,
        })
    }

    pub fn state(&self) -> &QueueSystemState {
        &self.state
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn sample_size(&self) -> Option<usize> {
        self.selector.sample_size()
    }

    /// Draws the next holding time and event type without advancing the clock.
    pub fn draw_event(&mut self) -> (f64, Event) {
        let dt = self.holding.sample(&mut self.rng);
        let event = if self.rng.random_bool(self.p_arrival) {
            Event::Arrival(self.rng.random_range(0..self.params.n))
        } else {
            Event::SchedulingInstant
        };
        (dt, event)
    }

    /// Advances the clock to the next event and returns it.
    pub fn next_event(&mut self) -> Event {
        let (dt, e) = self.draw_event();
        self.state.set_time(self.state.time() + dt);
        e
    }

    pub fn apply_arrival(&mut self, queue: usize) {
        self.state.apply_arrival(queue);
    }

    /// Scheduling decision at the current instant, applied to the state.
    pub fn schedule(&mut self) -> Outcome {
        match self.selector.select(&self.state, &mut self.rng) {
            Some(queue) => Outcome::Served {
                queue,
                arrived: self.state.apply_departure(queue),
            },
            None => Outcome::Idle,
        }
    }

    /// Scheduling decision at the current state, without applying it.
    pub fn peek_schedule(&mut self) -> Option<usize> {
        self.selector.select(&self.state, &mut self.rng)
    }
}

/// Time-weighted statistics over the window `[start, end]`.
struct Accumulator {
    start: f64,
    end: f64,
    /// Integral of `m_k` over the window, updated lazily per level.
    area: Vec<f64>,
    last: Vec<f64>,
    total_hist: Vec<f64>,
    max_hist: Vec<f64>,
}

impl Accumulator {
    fn new(start: f64, end: f64) -> Self {
        Self {
            start,
            end,
            area: vec![0.0; 2],
            last: vec![0.0; 2],
            total_hist: Vec::new(),
            max_hist: Vec::new(),
        }
    }

    fn overlap(&self, a: f64, b: f64) -> f64 {
        (b.min(self.end) - a.max(self.start)).max(0.0)
    }

    /// Level `k` is about to change at time `t`; credit its current value.
    fn touch(&mut self, k: usize, m_k: u64, t: f64) {
        if k >= self.area.len() {
            self.area.resize(k + 1, 0.0);
            self.last.resize(k + 1, 0.0);
        }
        let w = self.overlap(self.last[k], t);
        self.area[k] += m_k as f64 * w;
        self.last[k] = t;
    }

    /// State is constant on `[a, b]`.
    fn hold(&mut self, total: u64, max_len: usize, a: f64, b: f64) {
        let w = self.overlap(a, b);
        if w <= 0.0 {
            return;
        }
        bump(&mut self.total_hist, total as usize, w);
        bump(&mut self.max_hist, max_len, w);
    }
}

fn bump(h: &mut Vec<f64>, i: usize, w: f64) {
    if i >= h.len() {
        h.resize(i + 1, 0.0);
    }
    h[i] += w;
}

/// Runs one simulation to `t_end`.
pub fn run(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let params = config.params;
    let n = params.n;
    let burn_in = config.burn_in();
    let t_end = config.t_end;
    let mut sim = Simulator::new(params, &config.initial_state, config.seed)?;
    let mut acc = Accumulator::new(burn_in, t_end);
    let mut counts = EventCounts::default();
    let mut sojourn_sum = 0.0;
    let mut departed = 0u64;
    let mut trace = Vec::new();
    let mut next_sample = 0.0;
    let mut sample_index = 0u64;

    loop {
        let t = sim.state().time();
        let (dt, event) = sim.draw_event();
        let t_next = (t + dt).min(t_end);
        acc.hold(sim.state().total_packets(), sim.state().max_length(), t, t_next);
        while next_sample <= t_next {
            trace.push((next_sample, sim.state().total_packets()));
            sim.state().check_consistency().map_err(|e| Error::Io(format!("state corrupted: {e}")))?;
            sample_index += 1;
            next_sample = sample_index as f64 * config.sample_interval;
        }
        if t + dt > t_end {
            break;
        }
        sim.state.set_time(t_next);
        match event {
            Event::Arrival(i) => {
                let level = sim.state().length(i) as usize + 1;
                acc.touch(level, sim.state().m(level), t_next);
                sim.apply_arrival(i);
                counts.arrivals += 1;
            }
            Event::SchedulingInstant => match sim.peek_schedule() {
                Some(i) => {
                    let level = sim.state().length(i) as usize;
                    acc.touch(level, sim.state().m(level), t_next);
                    let arrived = sim.state.apply_departure(i);
                    counts.services += 1;
                    if arrived > burn_in {
                        sojourn_sum += t_next - arrived;
                        departed += 1;
                    }
                }
                None => counts.idles += 1,
            },
        }
    }

    let levels = acc.area.len().max(sim.state().max_length() + 1);
    for k in 1..levels {
        acc.touch(k, sim.state().m(k), t_end);
    }
    let width = t_end - burn_in;
    let norm = n as f64 * width;
    let mut tail = vec![1.0];
    for k in 1..levels {
        let u = (acc.area[k] / norm).clamp(0.0, tail[k - 1]);
        tail.push(u);
    }
    while tail.len() > 2 && tail[tail.len() - 1] == 0.0 && tail[tail.len() - 2] == 0.0 {
        tail.pop();
    }
    if tail.len() < 2 {
        tail.push(0.0);
    }
    let time_avg_tail = TailVector::from_projected(tail);
    let total_occupancy_hist: Vec<f64> = acc.total_hist.iter().map(|w| w / width).collect();
    let max_queue_hist: Vec<f64> = acc.max_hist.iter().map(|w| w / width).collect();
    let mean_sojourn = (departed > 0).then(|| sojourn_sum / departed as f64);
    let time_avg_total: f64 = total_occupancy_hist.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
    let little_check = mean_sojourn.map(|w| LittleCheck {
        arrival_rate_times_sojourn: n as f64 * params.lambda * w,
        time_avg_total,
    });
    Ok(RunResult {
        time_avg_tail,
        total_occupancy_hist,
        max_queue_hist,
        mean_sojourn,
        departed,
        little_check,
        event_counts: counts,
        seed: config.seed,
        d_used: sim.sample_size(),
        occupancy_trace: trace,
    })
}

/// Seed for replica `i`: `seed XOR splitmix64(i)`.
pub fn replica_seed(seed: u64, i: u64) -> u64 {
    let mut z = i.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seed ^ (z ^ (z >> 31))
}
