//! One-step selection law of the simulator on frozen states, compared with
//! the closed-form jump probabilities of each policy.

use oslab_core::sim::{InitialState, Simulator};
use oslab_core::{PolicySpec, SelectionMode, SystemParams};

/// Lengths with `counts[j]` queues holding exactly `j` packets.
fn lengths(counts: &[usize]) -> Vec<u32> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(j, &c)| std::iter::repeat_n(j as u32, c))
        .collect()
}

/// Empirical frequency of serving a queue of length `k` (index 0 = idle).
fn served_levels(params: SystemParams, lengths: Vec<u32>, trials: usize, seed: u64) -> Vec<f64> {
    let max = *lengths.iter().max().unwrap() as usize;
    let mut sim = Simulator::new(params, &InitialState::Lengths(lengths), seed).unwrap();
    let mut hits = vec![0usize; max + 1];
    for _ in 0..trials {
        match sim.peek_schedule() {
            Some(i) => hits[sim.state().length(i) as usize] += 1,
            None => hits[0] += 1,
        }
    }
    hits.iter().map(|&h| h as f64 / trials as f64).collect()
}

fn assert_within_3_sigma(freq: &[f64], expected: &[f64], trials: usize) {
    for (k, (&f, &p)) in freq.iter().zip(expected).enumerate() {
        let sigma = (p * (1.0 - p) / trials as f64).sqrt().max(1e-12);
        assert!((f - p).abs() <= 3.0 * sigma, "level {k}: {f} vs {p} (3σ = {})", 3.0 * sigma);
    }
}

fn tail(counts: &[usize]) -> Vec<f64> {
    let n: usize = counts.iter().sum();
    (0..=counts.len()).map(|k| counts[k.min(counts.len())..].iter().sum::<usize>() as f64 / n as f64).collect()
}

#[test]
fn lcqd_faithful_matches_generator() {
    let counts = [40, 30, 20, 10];
    let (n, q, d) = (100usize, 0.02, 3);
    let params = SystemParams::new(
        n,
        0.5,
        q,
        PolicySpec::LcqD {
            d,
            selection_mode: SelectionMode::Faithful,
        },
    );
    let trials = 400_000;
    let freq = served_levels(params, lengths(&counts), trials, 11);
    let u = tail(&counts);
    let alpha = 1.0 - (1.0 - q).powi(n as i32);
    let mut expected = vec![0.0; counts.len()];
    for k in 1..counts.len() {
        expected[k] = alpha * ((1.0 - u[k + 1]).powi(d as i32) - (1.0 - u[k]).powi(d as i32));
    }
    expected[0] = 1.0 - expected.iter().sum::<f64>();
    assert_within_3_sigma(&freq, &expected, trials);
}

#[test]
fn lcq_serves_highest_connected_level() {
    let counts = [5, 3, 2, 1];
    let q = 0.3;
    let params = SystemParams::new(11, 0.5, q, PolicySpec::Lcq);
    let trials = 400_000;
    let freq = served_levels(params, lengths(&counts), trials, 12);
    let mut expected = vec![0.0; counts.len()];
    let mut above = 0usize;
    for k in (1..counts.len()).rev() {
        expected[k] = (1.0 - q).powi(above as i32) * (1.0 - (1.0 - q).powi(counts[k] as i32));
        above += counts[k];
    }
    expected[0] = 1.0 - expected.iter().sum::<f64>();
    assert_within_3_sigma(&freq, &expected, trials);
}

#[test]
fn physical_mode_approaches_faithful_with_n() {
    let d = 2;
    let q = 0.5;
    let policy = |selection_mode| PolicySpec::LcqD { d, selection_mode };
    let trials = 200_000;
    let mut gaps = Vec::new();
    for scale in [1usize, 100] {
        let counts = [5 * scale, 3 * scale, 2 * scale];
        let n = 10 * scale;
        let faithful = served_levels(
            SystemParams::new(n, 0.5, q, policy(SelectionMode::Faithful)),
            lengths(&counts),
            trials,
            21,
        );
        let physical = served_levels(
            SystemParams::new(n, 0.5, q, policy(SelectionMode::Physical)),
            lengths(&counts),
            trials,
            22,
        );
        gaps.push(faithful.iter().zip(&physical).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    // Sampling among connected queues favours busy levels more at small n.
    assert!(gaps[0] > 0.02, "small-n gap {}", gaps[0]);
    assert!(gaps[1] < 0.01, "large-n gap {}", gaps[1]);
}
