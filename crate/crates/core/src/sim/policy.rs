use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::state::QueueSystemState;
use crate::error::{Error, Result};
use crate::model::{prob_any_connected, PolicySpec, SelectionMode, SystemParams};

/// Serve a longest connected queue.
///
/// Channels are never materialised: scanning levels from the top, the
/// `c` queues at a level contain a connected one with probability
/// `1 - (1-q)^c`, and given that, the served queue is uniform among them.
/// Lower levels are only examined if every queue above is disconnected,
/// which has the same law as drawing all `n` channel states.
pub fn select_lcq<R: Rng + ?Sized>(state: &QueueSystemState, q: f64, rng: &mut R) -> Option<usize> {
    for k in (1..=state.max_length()).rev() {
        let bucket = state.bucket(k);
        if bucket.is_empty() {
            continue;
        }
        if rng.random_bool(prob_any_connected(q, bucket.len() as u64)) {
            return Some(bucket[rng.random_range(0..bucket.len())] as usize);
        }
    }
    None
}

/// Longest of the sampled candidates, ties broken uniformly over the draws.
///
/// Which of several equally long queues gets served does not affect the law
/// of the process: the sampling is exchangeable in queue labels.
fn longest_of<R, F>(state: &QueueSystemState, d: usize, rng: &mut R, mut draw: F) -> Option<usize>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> usize,
{
    let mut best = 0u32;
    let mut chosen = None;
    let mut ties = 0u32;
    for _ in 0..d {
        let i = draw(rng);
        let l = state.length(i);
        if l > best {
            best = l;
            chosen = Some(i);
            ties = 1;
        } else if l == best && l > 0 {
            ties += 1;
            if rng.random_range(0..ties) == 0 {
                chosen = Some(i);
            }
        }
    }
    chosen
}

/// Candidate sampling for LCQ(d) and LCQ(d_n).
#[derive(Debug, Clone)]
pub struct LcqdSelector {
    d: usize,
    mode: SelectionMode,
    alpha: f64,
    connected: Binomial,
    picked: Vec<usize>,
}

impl LcqdSelector {
    pub fn new(n: usize, q: f64, d: usize, mode: SelectionMode) -> Result<Self> {
        if d < 1 {
            return Err(Error::param("d >= 1 required"));
        }
        let connected = Binomial::new(n as u64, q).map_err(|e| Error::param(e.to_string()))?;
        Ok(Self {
            d,
            mode,
            alpha: prob_any_connected(q, n as u64),
            connected,
            picked: Vec::with_capacity(d),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mode(&self) -> SelectionMode {
        self.mode
    }

    pub fn select<R: Rng + ?Sized>(&mut self, state: &QueueSystemState, rng: &mut R) -> Option<usize> {
        let n = state.n();
        match self.mode {
            SelectionMode::Faithful => {
                if !rng.random_bool(self.alpha) {
                    return None;
                }
                longest_of(state, self.d, rng, |r| r.random_range(0..n))
            }
            SelectionMode::Physical => {
                let c = self.connected.sample(rng) as usize;
                if c == 0 {
                    return None;
                }
                // The connected set is a uniform random c-subset. Draw from it
                // lazily: each draw repeats an already revealed member with
                // probability j/c, otherwise reveals a fresh uniform queue.
                let picked = &mut self.picked;
                picked.clear();
                longest_of(state, self.d, rng, |r| {
                    let j = picked.len();
                    if r.random_range(0..c) < j {
                        picked[r.random_range(0..j)]
                    } else {
                        loop {
                            let cand = r.random_range(0..n);
                            if !picked.contains(&cand) {
                                picked.push(cand);
                                break cand;
                            }
                        }
                    }
                })
            }
        }
    }
}

/// Scheduling rule resolved for a concrete system size.
#[derive(Debug, Clone)]
pub enum Selector {
    Lcq { q: f64 },
    Sampled(LcqdSelector),
}

impl Selector {
    pub fn new(params: &SystemParams) -> Result<Self> {
        match params.policy {
            PolicySpec::Lcq => Ok(Selector::Lcq { q: params.q }),
            PolicySpec::LcqD { d, selection_mode } => Ok(Selector::Sampled(LcqdSelector::new(
                params.n,
                params.q,
                d as usize,
                selection_mode,
            )?)),
            PolicySpec::LcqDn { dn_rule, selection_mode } => Ok(Selector::Sampled(LcqdSelector::new(
                params.n,
                params.q,
                dn_rule.resolve(params.n),
                selection_mode,
            )?)),
        }
    }

    /// Queue to serve at a scheduling instant, `None` for an idle instant.
    pub fn select<R: Rng + ?Sized>(&mut self, state: &QueueSystemState, rng: &mut R) -> Option<usize> {
        match self {
            Selector::Lcq { q } => select_lcq(state, *q, rng),
            Selector::Sampled(s) => s.select(state, rng),
        }
    }

    pub fn sample_size(&self) -> Option<usize> {
        match self {
            Selector::Lcq { .. } => None,
            Selector::Sampled(s) => Some(s.d()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn rng() -> Xoshiro256PlusPlus {
        Xoshiro256PlusPlus::seed_from_u64(7)
    }

    #[test]
    fn lcq_idle_when_empty() {
        let s = QueueSystemState::empty(5).unwrap();
        let mut r = rng();
        assert!((0..100).all(|_| select_lcq(&s, 0.5, &mut r).is_none()));
    }

    #[test]
    fn lcq_deterministic_cases() {
        let mut r = rng();
        let one = QueueSystemState::from_lengths(vec![3]).unwrap();
        assert_eq!(select_lcq(&one, 1.0, &mut r), Some(0));
        let s = QueueSystemState::from_lengths(vec![3, 1, 1]).unwrap();
        assert!((0..1000).all(|_| select_lcq(&s, 1.0, &mut r) == Some(0)));
    }

    #[test]
    fn lcqd_idle_when_empty_both_modes() {
        let s = QueueSystemState::empty(6).unwrap();
        let mut r = rng();
        for mode in [SelectionMode::Faithful, SelectionMode::Physical] {
            let mut sel = LcqdSelector::new(6, 0.7, 3, mode).unwrap();
            assert!((0..200).all(|_| sel.select(&s, &mut r).is_none()));
        }
    }

    #[test]
    fn lcqd_single_queue() {
        let s = QueueSystemState::from_lengths(vec![2]).unwrap();
        let mut r = rng();
        for mode in [SelectionMode::Faithful, SelectionMode::Physical] {
            let mut sel = LcqdSelector::new(1, 1.0, 1, mode).unwrap();
            assert!((0..100).all(|_| sel.select(&s, &mut r) == Some(0)));
        }
    }

    #[test]
    fn lcq_ties_are_uniform() {
        let s = QueueSystemState::from_lengths(vec![2, 0, 2, 2, 1]).unwrap();
        let mut r = rng();
        let mut hits = [0u32; 5];
        let trials = 60_000;
        for _ in 0..trials {
            hits[select_lcq(&s, 1.0, &mut r).unwrap()] += 1;
        }
        assert_eq!(hits[1] + hits[4], 0);
        for i in [0, 2, 3] {
            // Binomial(60000, 1/3): sd ~ 115.
            assert!((f64::from(hits[i]) - trials as f64 / 3.0).abs() < 4.0 * 115.5, "{hits:?}");
        }
    }

    #[test]
    fn physical_mode_only_serves_connected_queues() {
        // q tiny: almost always no connected queue.
        let s = QueueSystemState::from_lengths(vec![1; 10]).unwrap();
        let mut sel = LcqdSelector::new(10, 1e-6, 2, SelectionMode::Physical).unwrap();
        let mut r = rng();
        let served = (0..10_000).filter(|_| sel.select(&s, &mut r).is_some()).count();
        assert!(served < 10);
    }
}
