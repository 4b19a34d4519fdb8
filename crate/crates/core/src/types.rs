//! Domain values shared by every mechanism: valuation profiles, outcome
//! weights and (partial) allocations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for probability-mass bookkeeping.
pub const PROB_TOL: f64 = 1e-12;

/// Stable identifier of an agent. Survives exclusion of other agents.
pub type AgentId = usize;

/// Reported and true valuations of `n` agents over `m` outcomes.
///
/// Row `i` of `reported` is what agent `i` declared, row `i` of `truth` is
/// what it actually values. An agent is truthful iff both rows are equal
/// componentwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationProfile {
    m: usize,
    reported: Vec<Vec<f64>>,
    truth: Vec<Vec<f64>>,
    ids: Vec<AgentId>,
}

fn check_rows(m: usize, rows: &[Vec<f64>], what: &str) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != m {
            return Err(Error::InvalidProfile(format!(
                "{what} row {i} has {} entries, expected {m}",
                row.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidProfile(format!(
                "{what} row {i} has entry {v}, valuations must be finite and nonnegative"
            )));
        }
    }
    Ok(())
}

impl ValuationProfile {
    pub fn new(m: usize, reported: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidProfile("need at least one outcome".into()));
        }
        if reported.len() != truth.len() {
            return Err(Error::InvalidProfile(format!(
                "{} reported rows but {} true rows",
                reported.len(),
                truth.len()
            )));
        }
        check_rows(m, &reported, "reported")?;
        check_rows(m, &truth, "truth")?;
        let ids = (0..reported.len()).collect();
        Ok(Self {
            m,
            reported,
            truth,
            ids,
        })
    }

    /// Profile in which every agent reports its true valuation.
    pub fn truthful(m: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(m, rows.clone(), rows)
    }

    pub fn empty(m: usize) -> Result<Self> {
        Self::new(m, Vec::new(), Vec::new())
    }

    pub fn n(&self) -> usize {
        self.reported.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn reported(&self) -> &[Vec<f64>] {
        &self.reported
    }

    pub fn truth(&self) -> &[Vec<f64>] {
        &self.truth
    }

    pub fn reported_row(&self, i: usize) -> &[f64] {
        &self.reported[i]
    }

    pub fn true_row(&self, i: usize) -> &[f64] {
        &self.truth[i]
    }

    /// Stable id of the agent at position `i`.
    pub fn id(&self, i: usize) -> AgentId {
        self.ids[i]
    }

    pub fn ids(&self) -> &[AgentId] {
        &self.ids
    }

    /// Largest agent id plus one (0 for an empty profile).
    pub fn id_bound(&self) -> usize {
        self.ids.iter().max().map_or(0, |&i| i + 1)
    }

    pub fn is_truthful(&self, i: usize) -> bool {
        self.reported[i] == self.truth[i]
    }

    pub fn liar_positions(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.is_truthful(i)).collect()
    }

    /// Column sums `w_j = sum_i x_i(j)` of the reported (or true) matrix.
    pub fn weight_vector(&self, use_truth: bool) -> WeightVector {
        let rows = if use_truth { &self.truth } else { &self.reported };
        let mut w = vec![0.0; self.m];
        for row in rows {
            for (wj, x) in w.iter_mut().zip(row) {
                *wj += x;
            }
        }
        WeightVector(w)
    }

    /// Weight vector of the truthful agents only, `w_T`.
    pub fn truthful_weight_vector(&self) -> WeightVector {
        let mut w = vec![0.0; self.m];
        for i in (0..self.n()).filter(|&i| self.is_truthful(i)) {
            for (wj, x) in w.iter_mut().zip(&self.truth[i]) {
                *wj += x;
            }
        }
        WeightVector(w)
    }

    /// `x_{-L}`: drops the agents at the given positions. Remaining agents keep
    /// their ids.
    pub fn exclude(&self, positions: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut drop = vec![false; n];
        for &p in positions {
            if p >= n {
                return Err(Error::AgentOutOfRange { index: p, n });
            }
            drop[p] = true;
        }
        let pick = |v: &[Vec<f64>]| -> Vec<Vec<f64>> {
            v.iter().zip(&drop).filter(|(_, d)| !**d).map(|(r, _)| r.clone()).collect()
        };
        Ok(Self {
            m: self.m,
            reported: pick(&self.reported),
            truth: pick(&self.truth),
            ids: self.ids.iter().zip(&drop).filter(|(_, d)| !**d).map(|(i, _)| *i).collect(),
        })
    }

    /// The profile restricted to truthful agents.
    pub fn truthful_part(&self) -> Self {
        let liars = self.liar_positions();
        self.exclude(&liars).expect("liar positions are in range")
    }

    /// Replaces the reported row of the agent at `position`.
    pub fn with_report(&self, position: usize, row: Vec<f64>) -> Result<Self> {
        if position >= self.n() {
            return Err(Error::AgentOutOfRange {
                index: position,
                n: self.n(),
            });
        }
        check_rows(self.m, std::slice::from_ref(&row), "reported")?;
        let mut out = self.clone();
        out.reported[position] = row;
        Ok(out)
    }

    /// Position of the agent with the given id.
    pub fn position_of(&self, id: AgentId) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }
}

/// Outcome weights `w = x_1 + ... + x_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(v) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weight {v} is not finite and nonnegative"
            )));
        }
        Ok(Self(w))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `||w||_inf`, the optimal social welfare.
    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

/// A (sub-)distribution over `m` outcomes plus the mass of the null outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub probs: Vec<f64>,
    #[serde(rename = "null")]
    pub null_mass: f64,
}

impl Allocation {
    pub fn new(probs: Vec<f64>, null_mass: f64) -> Result<Self> {
        let in_unit = |p: f64| p.is_finite() && (-PROB_TOL..=1.0 + PROB_TOL).contains(&p);
        if let Some(p) = probs.iter().find(|p| !in_unit(**p)) {
            return Err(Error::InvalidAllocation(format!("probability {p} outside [0,1]")));
        }
        if !in_unit(null_mass) {
            return Err(Error::InvalidAllocation(format!("null mass {null_mass} outside [0,1]")));
        }
        let total: f64 = probs.iter().sum::<f64>() + null_mass;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidAllocation(format!("total mass {total} != 1")));
        }
        Ok(Self { probs, null_mass })
    }

    pub(crate) fn from_parts_unchecked(probs: Vec<f64>, null_mass: f64) -> Self {
        Self { probs, null_mass }
    }

    pub fn uniform(m: usize) -> Self {
        Self::from_parts_unchecked(vec![1.0 / m as f64; m], 0.0)
    }

    pub fn all_null(m: usize) -> Self {
        Self::from_parts_unchecked(vec![0.0; m], 1.0)
    }

    pub fn m(&self) -> usize {
        self.probs.len()
    }

    /// Total mass on real outcomes, `|f|`.
    pub fn mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn is_full(&self) -> bool {
        self.null_mass == 0.0
    }

    /// Total-variation distance, with the null outcome as coordinate `m`.
    pub fn tv_distance(&self, other: &Allocation) -> Result<f64> {
        if self.m() != other.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                actual: other.m(),
            });
        }
        let body: f64 = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(0.5 * (body + (self.null_mass - other.null_mass).abs()))
    }
}

/// Free-function form of [`Allocation::tv_distance`].
pub fn tv_distance(a: &Allocation, b: &Allocation) -> Result<f64> {
    a.tv_distance(b)
}

/// A realised outcome: one of the `m` alternatives or the artificial null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Alt(usize),
    Null,
}

impl Outcome {
    pub fn index(self) -> Option<usize> {
        match self {
            Outcome::Alt(j) => Some(j),
            Outcome::Null => None,
        }
    }

    /// Value of this outcome for a valuation row; null is worth 0.
    pub fn value(self, row: &[f64]) -> f64 {
        self.index().map_or(0.0, |j| row[j])
    }
}
