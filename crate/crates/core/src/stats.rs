//! Small summary statistics used by the comparison reports.

use serde::{Deserialize, Serialize};

/// Total-variation distance `1/2 sum |p_i - q_i|`, missing entries as 0.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    0.5 * (0..len).map(|i| (get(p, i) - get(q, i)).abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; `None` with fewer than two values.
    pub std: Option<f64>,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() >= 2).then(|| {
        let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    Summary { mean, std }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_basics() {
        assert_eq!(total_variation(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert_eq!(total_variation(&[1.0], &[0.0, 1.0]), 1.0);
        assert!((total_variation(&[0.2, 0.8], &[0.5, 0.4, 0.1]) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn summary() {
        let s = summarize(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, Some(1.0));
        assert_eq!(summarize(&[4.0]).std, None);
    }
}
