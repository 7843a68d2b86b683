//! Domain types shared by the simulator, the mean-field solvers and the
//! experiment harness.
//!
//! An occupancy state is described by its tail: `u_k` is the fraction of
//! queues holding at least `k` packets. Tails are stored truncated at a
//! finite level with implicit zeros beyond the last stored entry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for monotonicity of tails produced by numerical routines.
pub const TAIL_TOL: f64 = 1e-12;

/// How LCQ(d) picks its `d` candidates at a scheduling instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// One Bernoulli(α_n) draw decides whether any channel is connected, then
    /// `d` indices are drawn uniformly over all queues. Reproduces the
    /// mean-field generator's jump rates exactly.
    #[default]
    #[serde(alias = "generator_faithful")]
    Faithful,
    /// Channel states are drawn for every queue and the `d` indices are drawn
    /// uniformly from the connected subset.
    Physical,
}

/// Growth rule producing `d_n` from the system size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DnRule {
    /// `d_n = ceil(n^exponent)`, clamped to `[1, n]`.
    CeilPower { exponent: f64 },
}

impl DnRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DnRule::CeilPower { exponent } => {
                if !(exponent > 0.0 && exponent < 1.0) {
                    return Err(Error::param(format!(
                        "d_n exponent must lie in (0,1) so that d_n -> inf and d_n/n -> 0, got {exponent}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Resolve the number of sampled queues for a system of `n` queues.
    pub fn resolve(&self, n: usize) -> usize {
        match *self {
            DnRule::CeilPower { exponent } => {
                let x = (n as f64).powf(exponent);
                // n^a is frequently an exact integer (perfect squares); do not
                // let a one-ulp overshoot push the ceiling up by one.
                let r = x.round();
                let d = if (x - r).abs() <= 1e-9 * r.max(1.0) {
                    r
                } else {
                    x.ceil()
                };
                (d as usize).clamp(1, n.max(1))
            }
        }
    }
}

/// Scheduling policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// Serve a longest queue among all connected queues.
    Lcq,
    /// Serve a longest queue among `d` sampled connected queues.
    LcqD {
        d: u32,
        #[serde(default)]
        selection_mode: SelectionMode,
    },
    /// LCQ(d) with `d` growing with `n`.
    LcqDn {
        dn_rule: DnRule,
        #[serde(default)]
        selection_mode: SelectionMode,
    },
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Lcq => "lcq",
            PolicySpec::LcqD { .. } => "lcqd",
            PolicySpec::LcqDn { .. } => "lcqdn",
        }
    }

    /// Number of sampled queues for a system of size `n`; `None` for LCQ.
    pub fn sample_size(&self, n: usize) -> Option<usize> {
        match self {
            PolicySpec::Lcq => None,
            PolicySpec::LcqD { d, .. } => Some(*d as usize),
            PolicySpec::LcqDn { dn_rule, .. } => Some(dn_rule.resolve(n)),
        }
    }

    pub fn selection_mode(&self) -> Option<SelectionMode> {
        match self {
            PolicySpec::Lcq => None,
            PolicySpec::LcqD { selection_mode, .. } | PolicySpec::LcqDn { selection_mode, .. } => {
                Some(*selection_mode)
            }
        }
    }
}

/// Parameters of the symmetric queueing system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Number of queues.
    pub n: usize,
    /// Per-queue Poisson arrival rate.
    pub lambda: f64,
    /// Per-channel connection probability.
    pub q: f64,
    pub policy: PolicySpec,
}

impl SystemParams {
    pub fn new(n: usize, lambda: f64, q: f64, policy: PolicySpec) -> Self {
        Self {
            n,
            lambda,
            q,
            policy,
        }
    }

    /// Checks every parameter constraint, returning the parameters unchanged.
    pub fn validate(self) -> Result<Self> {
        if self.n < 1 {
            return Err(Error::param("n must be >= 1"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::param(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.lambda < 1.0) {
            return Err(Error::param(format!(
                "lambda must be < 1 for stability, got {}",
                self.lambda
            )));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::param(format!("q must lie in (0,1], got {}", self.q)));
        }
        match self.policy {
            PolicySpec::Lcq => {}
            PolicySpec::LcqD { d, .. } => {
                if d < 1 {
                    return Err(Error::param("d >= 1 required"));
                }
            }
            PolicySpec::LcqDn { dn_rule, .. } => {
                dn_rule.validate()?;
                let d = dn_rule.resolve(self.n);
                if d < 1 || d > self.n {
                    return Err(Error::param(format!("d_n = {d} outside [1, n = {}]", self.n)));
                }
            }
        }
        Ok(self)
    }

    /// Probability that at least one of the `n` channels is connected.
    pub fn alpha(&self) -> f64 {
        prob_any_connected(self.q, self.n as u64)
    }
}

/// `1 - (1-q)^j`, computed without cancellation for small `q`.
pub fn prob_any_connected(q: f64, j: u64) -> f64 {
    if j == 0 {
        return 0.0;
    }
    if q >= 1.0 {
        return 1.0;
    }
    -((j as f64) * (-q).ln_1p()).exp_m1()
}

/// Tail vector `u_0 = 1 >= u_1 >= ... >= u_K >= 0`, zeros implied beyond `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TailVector(Vec<f64>);

impl TailVector {
    /// Validates `u_0 = 1` exactly and monotonicity within [`TAIL_TOL`].
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        match entries.first() {
            Some(&u0) if u0 == 1.0 => {}
            Some(&u0) => return Err(Error::InvalidTail(format!("u_0 must equal 1, got {u0}"))),
            None => return Err(Error::InvalidTail("empty tail".into())),
        }
        for (k, &u) in entries.iter().enumerate() {
            if !u.is_finite() || u < -TAIL_TOL || u > 1.0 + TAIL_TOL {
                return Err(Error::InvalidTail(format!("u_{k} = {u} outside [0,1]")));
            }
            if k > 0 && u > entries[k - 1] + TAIL_TOL {
                return Err(Error::InvalidTail(format!(
                    "not nonincreasing at k = {k}: {} < {u}",
                    entries[k - 1]
                )));
            }
        }
        Ok(Self(entries))
    }

    /// The empty system `(1, 0)`.
    pub fn empty() -> Self {
        Self(vec![1.0, 0.0])
    }

    /// Built from entries that the caller has already projected onto the
    /// valid set.
    pub(crate) fn from_projected(entries: Vec<f64>) -> Self {
        debug_assert!(entries.first() == Some(&1.0));
        Self(entries)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Stored length `K + 1`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `u_k`, zero beyond the stored range.
    pub fn get(&self, k: usize) -> f64 {
        self.0.get(k).copied().unwrap_or(0.0)
    }

    /// Smallest `K` with `u_j = 0` for all `j >= K`.
    pub fn support_level(&self) -> usize {
        self.0.iter().rposition(|&u| u > 0.0).map_or(0, |k| k + 1)
    }

    /// Pads with zeros up to length `len`.
    pub fn padded(&self, len: usize) -> Vec<f64> {
        let mut v = self.0.clone();
        if v.len() < len {
            v.resize(len, 0.0);
        }
        v
    }

    /// Componentwise maximum of two tails (again a tail).
    pub fn max_with(&self, other: &TailVector) -> TailVector {
        let len = self.len().max(other.len());
        Self((0..len).map(|k| self.get(k).max(other.get(k))).collect())
    }

    /// Componentwise minimum of two tails (again a tail).
    pub fn min_with(&self, other: &TailVector) -> TailVector {
        let len = self.len().max(other.len());
        Self((0..len).map(|k| self.get(k).min(other.get(k))).collect())
    }
}

impl TryFrom<Vec<f64>> for TailVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        TailVector::new(v)
    }
}

impl From<TailVector> for Vec<f64> {
    fn from(t: TailVector) -> Self {
        t.0
    }
}

/// Counts `m_k` of queues with at least `k` packets, at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTail {
    pub n: u64,
    pub m: Vec<u64>,
    pub t: f64,
}

impl CountTail {
    /// Derives counts from per-queue lengths.
    pub fn from_lengths(lengths: &[u32], t: f64) -> Self {
        let max = lengths.iter().copied().max().unwrap_or(0) as usize;
        let mut exact = vec![0u64; max + 2];
        for &l in lengths {
            exact[l as usize] += 1;
        }
        let mut m = vec![0u64; max + 2];
        let mut acc = 0;
        for k in (0..=max + 1).rev() {
            acc += exact[k];
            m[k] = acc;
        }
        Self {
            n: lengths.len() as u64,
            m,
            t,
        }
    }

    /// Total number of packets, `sum_{k>=1} m_k`.
    pub fn total(&self) -> u64 {
        self.m.iter().skip(1).sum()
    }
}

pub fn validate_params(p: SystemParams) -> Result<SystemParams> {
    p.validate()
}

/// `u_k = m_k / n`.
pub fn tail_from_counts(c: &CountTail, n: u64) -> Result<TailVector> {
    if c.n != n || c.m.first() != Some(&n) {
        return Err(Error::InvalidCounts(format!(
            "m_0 must equal n = {n}, got {:?}",
            c.m.first()
        )));
    }
    if let Some(k) = c.m.windows(2).position(|w| w[1] > w[0]) {
        return Err(Error::InvalidCounts(format!("m not nonincreasing at k = {}", k + 1)));
    }
    let nf = n as f64;
    let mut u: Vec<f64> = c.m.iter().map(|&m| m as f64 / nf).collect();
    u[0] = 1.0;
    Ok(TailVector(u))
}

/// `p_k = u_k - u_{k+1}` for `k = 0..=K`.
pub fn occupancy_pmf(u: &TailVector) -> Vec<f64> {
    let s = u.as_slice();
    (0..s.len()).map(|k| s[k] - u.get(k + 1)).collect()
}

/// `sup_{k>0} |u_k - u'_k| / k`, exact over the union of supports.
pub fn rho_distance(u: &TailVector, v: &TailVector) -> f64 {
    let len = u.len().max(v.len());
    (1..len)
        .map(|k| (u.get(k) - v.get(k)).abs() / k as f64)
        .fold(0.0, f64::max)
}

/// Average queue occupancy `sum_{k>=1} u_k`.
pub fn mean_occupancy(u: &TailVector) -> f64 {
    u.as_slice().iter().skip(1).sum()
}
