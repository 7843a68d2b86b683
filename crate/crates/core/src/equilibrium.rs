//! Equilibrium objects of the limiting dynamics.
//!
//! * the LCQ(d) fixed point `v*_k = 1 - (1 - λ v*_{k-1})^{1/d}` and its tail
//!   ratios `c_k = v*_k / (λ/d)^k`;
//! * the birth-death law of total LCQ occupancy (birth rate `λ`, death rate
//!   `1 - (1-q)^j` in state `j`);
//! * mean packet delays obtained from both through Little's law.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mean_occupancy, occupancy_pmf, prob_any_connected, TailVector};

pub const DEFAULT_FLOOR_EPS: f64 = 1e-300;
pub const DEFAULT_K_MAX: usize = 100_000;
pub const DEFAULT_MASS_TOL: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub v_star: TailVector,
    pub lambda: f64,
    pub d: u32,
    /// Limiting single-queue occupancy pmf.
    pub p: Vec<f64>,
}

impl FixedPoint {
    /// Largest absolute deviation from the defining recursion, evaluated with
    /// a plain `powf` root.
    pub fn residual(&self) -> f64 {
        let v = self.v_star.as_slice();
        let inv_d = 1.0 / f64::from(self.d);
        (1..v.len())
            .map(|k| (v[k] - (1.0 - (1.0 - self.lambda * v[k - 1]).powf(inv_d))).abs())
            .fold(0.0, f64::max)
    }

    /// Number of stored levels beyond `k = 0`.
    pub fn depth(&self) -> usize {
        self.v_star.len() - 1
    }
}

/// One step of the fixed-point recursion: `1 - (1 - x)^{1/d}`.
fn root_step(x: f64, d: u32) -> f64 {
    if d == 1 {
        x
    } else {
        -((-x).ln_1p() / f64::from(d)).exp_m1()
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::param(format!("lambda must lie in (0,1), got {lambda}")));
    }
    Ok(())
}

/// Iterates the fixed-point recursion from `v*_0 = 1` until an entry drops
/// below `floor_eps` or `k_max` levels have been computed.
pub fn fixed_point(lambda: f64, d: u32, floor_eps: f64, k_max: usize) -> Result<FixedPoint> {
    check_lambda(lambda)?;
    if d < 1 {
        return Err(Error::param("d >= 1 required"));
    }
    let mut v = vec![1.0];
    while v.len() <= k_max {
        let next = root_step(lambda * v[v.len() - 1], d);
        if next < floor_eps {
            break;
        }
        v.push(next);
    }
    let v_star = TailVector::from_projected(v);
    let p = occupancy_pmf(&v_star);
    Ok(FixedPoint {
        v_star,
        lambda,
        d,
        p,
    })
}

/// Fixed point with the default underflow floor and depth.
pub fn fixed_point_default(lambda: f64, d: u32) -> Result<FixedPoint> {
    fixed_point(lambda, d, DEFAULT_FLOOR_EPS, DEFAULT_K_MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailDiagnostics {
    /// `c[k] = v*_k / (λ/d)^k` for `k = 0..=k_max` (`c[0] = 1`).
    pub c: Vec<f64>,
    pub k_min: usize,
    pub k_max: usize,
    /// Supremum of `c_k` over `k_min..=k_max`.
    pub sup: f64,
    /// Infimum of `c_k` over `k_min..=k_max`.
    pub inf: f64,
}

impl TailDiagnostics {
    /// Largest `|c_k / c_{k-1} - 1|` over `from..=k_max`.
    pub fn max_ratio_drift(&self, from: usize) -> f64 {
        (from.max(1)..=self.k_max)
            .map(|k| (self.c[k] / self.c[k - 1] - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Tail ratios in log space over `k_min..=k_max`.
pub fn tail_ratios(fp: &FixedPoint, k_min: usize, k_max: usize) -> Result<TailDiagnostics> {
    if fp.depth() < k_max {
        return Err(Error::Underflow {
            reached: fp.depth(),
            requested: k_max,
        });
    }
    let log_rate = fp.lambda.ln() - f64::from(fp.d).ln();
    let v = fp.v_star.as_slice();
    let c: Vec<f64> = (0..=k_max)
        .map(|k| (v[k].ln() - k as f64 * log_rate).exp())
        .collect();
    let k_min = k_min.max(1).min(k_max);
    let window = &c[k_min..=k_max];
    let sup = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inf = window.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(TailDiagnostics {
        c,
        k_min,
        k_max,
        sup,
        inf,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathEquilibrium {
    /// Stationary pmf over `j = 0..=J_max`.
    pub pi: Vec<f64>,
    pub lambda: f64,
    pub q: f64,
    pub mean_occupancy: f64,
    /// Certified bound on the unnormalized weight dropped beyond `J_max`.
    pub truncation_mass: f64,
}

/// Stationary law of the birth-death chain with birth rate `λ` and death
/// rate `1 - (1-q)^j` in state `j`.
///
/// Death rates increase to 1, so once `r_j = λ / (1-(1-q)^j) < 1` every later
/// ratio is at most `r_j` and the dropped tail is bounded by a geometric
/// series. Truncation stops when that bound is below `mass_tol`.
pub fn bd_equilibrium(lambda: f64, q: f64, mass_tol: f64) -> Result<BirthDeathEquilibrium> {
    check_lambda(lambda)?;
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::param(format!("q must lie in (0,1], got {q}")));
    }
    let mut w = vec![1.0f64];
    let mut sum = 1.0;
    let mut j: u64 = 0;
    let truncation_mass = loop {
        let r_next = lambda / prob_any_connected(q, j + 1);
        let last = w[w.len() - 1];
        if r_next < 1.0 {
            let bound = last * r_next / (1.0 - r_next);
            if bound < mass_tol {
                break bound;
            }
        }
        j += 1;
        let wj = last * r_next;
        w.push(wj);
        sum += wj;
    };
    let pi: Vec<f64> = w.iter().map(|x| x / sum).collect();
    let mean = pi.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
    Ok(BirthDeathEquilibrium {
        pi,
        lambda,
        q,
        mean_occupancy: mean,
        truncation_mass,
    })
}

/// Limiting mean packet delay under LCQ(d), `sum_{k>=1} v*_k / λ`.
pub fn delay_lcqd(lambda: f64, d: u32) -> Result<f64> {
    let fp = fixed_point_default(lambda, d)?;
    Ok(mean_occupancy(&fp.v_star) / lambda)
}

/// `n` times the limiting mean packet delay under LCQ, `E_π[J] / λ`.
pub fn delay_lcq_normalized(lambda: f64, q: f64) -> Result<f64> {
    let bd = bd_equilibrium(lambda, q, DEFAULT_MASS_TOL)?;
    Ok(bd.mean_occupancy / lambda)
}

/// Writes `k,v_star_k,p_k` rows.
pub fn write_fixed_point_csv<W: Write>(fp: &FixedPoint, out: &mut W) -> Result<()> {
    writeln!(out, "k,v_star_k,p_k")?;
    for (k, (v, p)) in fp.v_star.as_slice().iter().zip(&fp.p).enumerate() {
        writeln!(out, "{k},{v:e},{p:e}")?;
    }
    Ok(())
}

/// Writes `j,pi_j` rows.
pub fn write_bd_csv<W: Write>(bd: &BirthDeathEquilibrium, out: &mut W) -> Result<()> {
    writeln!(out, "j,pi_j")?;
    for (j, p) in bd.pi.iter().enumerate() {
        writeln!(out, "{j},{p:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // High-precision (50 digit) evaluations of the recursions, frozen.
    const V1_L05_D2: f64 = 0.292_893_218_813_452_475_6;
    const V2_L05_D2: f64 = 0.076_120_467_488_713_243_872;
    const V3_L05_D2: f64 = 0.019_214_719_596_769_550_874;
    const C1_L05_D2: f64 = 1.171_572_875_253_809_902_4;
    const DELAY_L07: [f64; 8] = [
        3.333_333_333_333_333_333_3,
        1.031_950_814_255_060_245_3,
        0.629_523_033_525_888_178_88,
        0.456_300_818_708_817_089_81,
        0.358_827_007_333_991_430_79,
        0.296_037_298_279_184_413_06,
        0.252_112_358_156_660_639_44,
        0.219_618_485_409_167_746_4,
    ];

    #[test]
    fn d1_is_geometric() {
        let fp = fixed_point_default(0.5, 1).unwrap();
        for (k, v) in fp.v_star.as_slice().iter().enumerate() {
            assert_eq!(*v, 0.5f64.powi(k as i32));
        }
        let fp = fixed_point_default(0.5, 1).unwrap();
        assert!((mean_occupancy(&fp.v_star) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_load_limit() {
        let fp = fixed_point_default(1e-12, 3).unwrap();
        assert!(fp.v_star.get(1) < 1e-12);
        assert!(fp.v_star.as_slice()[1..].iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn d2_against_extended_precision() {
        let fp = fixed_point_default(0.5, 2).unwrap();
        let v = fp.v_star.as_slice();
        assert!((v[1] - V1_L05_D2).abs() < 1e-15);
        assert!((v[2] - V2_L05_D2).abs() < 1e-15);
        assert!((v[3] - V3_L05_D2).abs() < 1e-15);
        assert!(fp.residual() < 1e-12);
        let sum: f64 = fp.p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn floor_and_depth_limits() {
        let fp = fixed_point(0.5, 2, 1e-6, 1000).unwrap();
        assert!(fp.v_star.as_slice().iter().all(|&v| v >= 1e-6));
        let fp = fixed_point(0.5, 2, 0.0, 7).unwrap();
        assert_eq!(fp.depth(), 7);
        assert!(fixed_point(1.0, 2, 0.0, 7).is_err());
        assert!(fixed_point(0.5, 0, 0.0, 7).is_err());
    }

    #[test]
    fn tail_ratio_examples() {
        let fp = fixed_point_default(0.5, 1).unwrap();
        let diag = tail_ratios(&fp, 1, 50).unwrap();
        assert!(diag.c.iter().all(|c| (c - 1.0).abs() < 1e-12));

        let fp = fixed_point_default(0.5, 2).unwrap();
        let diag = tail_ratios(&fp, 1, 100).unwrap();
        assert!((diag.c[1] - C1_L05_D2).abs() < 1e-12);
        assert!(diag.inf >= 1.0 - 1e-9);

        let shallow = fixed_point(0.5, 2, 1e-3, 1000).unwrap();
        assert!(matches!(
            tail_ratios(&shallow, 1, 30),
            Err(Error::Underflow { .. })
        ));
    }

    #[test]
    fn fixed_point_grid_properties() {
        for l in 1..=9 {
            let lambda = l as f64 / 10.0;
            for d in [1u32, 2, 4, 8, 16] {
                let fp = fixed_point_default(lambda, d).unwrap();
                assert!(fp.residual() < 1e-12, "λ={lambda} d={d}");
                for (k, v) in fp.v_star.as_slice().iter().enumerate() {
                    assert!(*v <= lambda.powi(k as i32) * (1.0 + 1e-12));
                }
                let diag = tail_ratios(&fp, 1, fp.depth().min(200)).unwrap();
                assert!(diag.inf >= 1.0 - 1e-9, "λ={lambda} d={d}");
            }
        }
    }

    #[test]
    fn bd_q1_is_mm1() {
        let bd = bd_equilibrium(0.5, 1.0, 1e-15).unwrap();
        for (j, p) in bd.pi.iter().enumerate() {
            assert!((p - 0.5 * 0.5f64.powi(j as i32)).abs() < 1e-15);
        }
        assert!((bd.mean_occupancy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bd_zero_load() {
        let bd = bd_equilibrium(1e-9, 0.5, 1e-15).unwrap();
        assert!(bd.pi[0] > 1.0 - 1e-8);
    }

    #[test]
    fn bd_exact_rational_weights() {
        // w = 1, 1, 2/3, 8/21, 64/315, ... from the ratio recursion in exact
        // rationals; normalization constant from a 50-digit evaluation.
        let bd = bd_equilibrium(0.5, 0.5, 1e-15).unwrap();
        let pi0 = 0.288_788_095_086_602_421_28;
        let expected = [pi0, pi0, pi0 * 2.0 / 3.0, pi0 * 8.0 / 21.0, pi0 * 64.0 / 315.0];
        for (p, e) in bd.pi.iter().zip(expected) {
            assert!((p - e).abs() < 1e-14, "{p} vs {e}");
        }
        assert!((bd.mean_occupancy / 0.5 - 3.213_390_304_830_583_527_6).abs() < 1e-12);
        assert!(bd.truncation_mass < 1e-12);
        let total: f64 = bd.pi.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for j in 0..bd.pi.len() - 1 {
            let lhs = 0.5 * bd.pi[j];
            let rhs = prob_any_connected(0.5, j as u64 + 1) * bd.pi[j + 1];
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn delay_lcqd_examples() {
        assert!((delay_lcqd(0.5, 1).unwrap() - 2.0).abs() < 1e-12);
        assert!((delay_lcqd(1e-6, 2).unwrap() - 0.5).abs() < 1e-6);
        let w: Vec<f64> = (1..=8).map(|d| delay_lcqd(0.7, d).unwrap()).collect();
        for (got, want) in w.iter().zip(DELAY_L07) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!(w.windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn delay_lcq_examples() {
        assert!((delay_lcq_normalized(0.5, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((delay_lcq_normalized(1e-7, 0.5).unwrap() - 2.0).abs() < 1e-5);
        let grid: Vec<f64> = (1..20)
            .map(|i| delay_lcq_normalized(i as f64 / 20.0, 0.5).unwrap())
            .collect();
        assert!(grid.windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn csv_output() {
        let fp = fixed_point(0.5, 1, 0.0, 2).unwrap();
        let mut buf = Vec::new();
        write_fixed_point_csv(&fp, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "k,v_star_k,p_k\n0,1e0,5e-1\n1,5e-1,2.5e-1\n2,2.5e-1,2.5e-1\n"
        );
    }
}
