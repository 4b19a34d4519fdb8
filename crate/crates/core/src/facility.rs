//! k-Facility Location with selective verification.
//!
//! Agents sit at points of a finite metric space and want a facility close to
//! their true location. Greedy (k-center) and Proportional (k-median) place
//! facilities at reported agent locations, verify the agents that received a
//! facility and restart without any caught liar.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::VerificationOracle;
use crate::rng::RngStream;
use crate::types::AgentId;

const METRIC_TOL: f64 = 1e-9;

/// Brute-force limits for k-center / k-median optima.
pub const MAX_BRUTE_POINTS: usize = 16;
pub const MAX_BRUTE_K: usize = 4;

/// Limits for the exact Proportional recursion.
pub const MAX_EXACT_AGENTS: usize = 7;
pub const MAX_EXACT_K: usize = 3;

/// A finite metric space with agents' true and reported locations (point
/// indices) and the number of facilities `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricInstance {
    labels: Vec<i64>,
    dist: Vec<Vec<f64>>,
    agents_true: Vec<usize>,
    agents_reported: Vec<usize>,
    k: usize,
}

impl MetricInstance {
    pub fn new(dist: Vec<Vec<f64>>, agents_true: Vec<usize>, agents_reported: Vec<usize>, k: usize) -> Result<Self> {
        let labels = (0..dist.len() as i64).collect();
        Self::with_labels(labels, dist, agents_true, agents_reported, k)
    }

    pub fn with_labels(
        labels: Vec<i64>,
        dist: Vec<Vec<f64>>,
        agents_true: Vec<usize>,
        agents_reported: Vec<usize>,
        k: usize,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidInstance(msg));
        let p = dist.len();
        if p == 0 {
            return bad("metric space has no points".into());
        }
        if labels.len() != p {
            return bad(format!("{} labels for {p} points", labels.len()));
        }
        if k == 0 {
            return bad("k must be at least 1".into());
        }
        if agents_true.len() != agents_reported.len() {
            return bad("agents_true and agents_reported differ in length".into());
        }
        if let Some(&a) = agents_true.iter().chain(&agents_reported).find(|&&a| a >= p) {
            return bad(format!("agent location {a} is not a point"));
        }
        for (a, row) in dist.iter().enumerate() {
            if row.len() != p {
                return bad(format!("distance row {a} has {} entries", row.len()));
            }
            if row[a] != 0.0 {
                return bad(format!("d({a},{a}) = {} != 0", row[a]));
            }
            for (b, &d) in row.iter().enumerate() {
                if !d.is_finite() || d < 0.0 {
                    return bad(format!("d({a},{b}) = {d} is not a finite nonnegative distance"));
                }
                if (d - dist[b][a]).abs() > METRIC_TOL {
                    return bad(format!("d({a},{b}) != d({b},{a})"));
                }
            }
        }
        for a in 0..p {
            for b in 0..p {
                for c in 0..p {
                    if dist[a][c] > dist[a][b] + dist[b][c] + METRIC_TOL {
                        return bad(format!("triangle inequality fails for ({a},{b},{c})"));
                    }
                }
            }
        }
        Ok(Self {
            labels,
            dist,
            agents_true,
            agents_reported,
            k,
        })
    }

    /// Points on the real line at `coords`, with distance `|x - y|`.
    pub fn on_line(coords: &[f64], agents_true: Vec<usize>, agents_reported: Vec<usize>, k: usize) -> Result<Self> {
        let dist = coords.iter().map(|a| coords.iter().map(|b| (a - b).abs()).collect()).collect();
        Self::new(dist, agents_true, agents_reported, k)
    }

    /// Every agent reports its true location.
    pub fn truthful(dist: Vec<Vec<f64>>, agents: Vec<usize>, k: usize) -> Result<Self> {
        Self::new(dist, agents.clone(), agents, k)
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn set_labels(&mut self, labels: Vec<i64>) -> Result<()> {
        if labels.len() != self.num_points() {
            return Err(Error::InvalidInstance("label count differs from point count".into()));
        }
        self.labels = labels;
        Ok(())
    }

    pub fn dist_matrix(&self) -> &[Vec<f64>] {
        &self.dist
    }

    pub fn d(&self, a: usize, b: usize) -> f64 {
        self.dist[a][b]
    }

    pub fn num_points(&self) -> usize {
        self.dist.len()
    }

    pub fn n(&self) -> usize {
        self.agents_true.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn agents_true(&self) -> &[usize] {
        &self.agents_true
    }

    pub fn agents_reported(&self) -> &[usize] {
        &self.agents_reported
    }

    pub fn is_truthful(&self, agent: usize) -> bool {
        self.agents_true[agent] == self.agents_reported[agent]
    }

    pub fn liars(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.is_truthful(i)).collect()
    }

    pub fn oracle(&self) -> VerificationOracle {
        VerificationOracle::from_bits((0..self.n()).map(|i| self.is_truthful(i)).collect())
    }

    /// Same metric and `k`, with the given agents removed (remaining agents are
    /// renumbered in order).
    pub fn without_agents(&self, agents: &[usize]) -> Self {
        let keep: Vec<usize> = (0..self.n()).filter(|i| !agents.contains(i)).collect();
        Self {
            labels: self.labels.clone(),
            dist: self.dist.clone(),
            agents_true: keep.iter().map(|&i| self.agents_true[i]).collect(),
            agents_reported: keep.iter().map(|&i| self.agents_reported[i]).collect(),
            k: self.k,
        }
    }

    pub fn with_k(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInstance("k must be at least 1".into()));
        }
        Ok(Self { k, ..self.clone() })
    }

    /// `d(p, C)`; infinite when `C` is empty.
    pub fn distance_to_set<'a>(&self, p: usize, set: impl IntoIterator<Item = &'a usize>) -> f64 {
        set.into_iter().map(|&c| self.dist[p][c]).fold(f64::INFINITY, f64::min)
    }

    /// Largest true-location distance of any agent to the facilities.
    pub fn max_cost(&self, facilities: &BTreeSet<usize>) -> f64 {
        self.agents_true
            .iter()
            .map(|&t| self.distance_to_set(t, facilities))
            .fold(0.0, f64::max)
    }

    /// Sum of true-location distances to the facilities.
    pub fn social_cost(&self, facilities: &BTreeSet<usize>) -> f64 {
        self.agents_true.iter().map(|&t| self.distance_to_set(t, facilities)).sum()
    }
}

/// Outcome of a facility-location mechanism run. Agent ids are indices into
/// the instance's agent lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacilityResult {
    pub facilities: BTreeSet<usize>,
    pub verified: BTreeSet<AgentId>,
    pub liars_caught: BTreeSet<AgentId>,
    pub recursion_depth: usize,
}

/// Farthest-first traversal over agent locations. The first agent opens the
/// first facility; each next pick maximises the distance to the facilities
/// opened so far (ties to the lowest index). Returns `min(k, n)` distinct
/// agent indices in pick order.
pub fn greedy_centers(locations: &[usize], k: usize, dist: &[Vec<f64>]) -> Vec<usize> {
    let n = locations.len();
    if n == 0 {
        return Vec::new();
    }
    let target = k.min(n);
    let mut picks = vec![0];
    let mut picked = vec![false; n];
    picked[0] = true;
    let mut gap: Vec<f64> = locations.iter().map(|&p| dist[p][locations[0]]).collect();
    while picks.len() < target {
        let mut best: Option<usize> = None;
        for i in (0..n).filter(|&i| !picked[i]) {
            if best.is_none_or(|b| gap[i] > gap[b]) {
                best = Some(i);
            }
        }
        let next = best.expect("fewer picks than agents");
        picked[next] = true;
        picks.push(next);
        for (g, &p) in gap.iter_mut().zip(locations) {
            *g = g.min(dist[p][locations[next]]);
        }
    }
    picks
}

struct AgentVerifier<'a> {
    oracle: &'a mut VerificationOracle,
    known: BTreeMap<AgentId, bool>,
}

impl AgentVerifier<'_> {
    fn check(&mut self, id: AgentId) -> bool {
        if let Some(&s) = self.known.get(&id) {
            return s;
        }
        let s = self.oracle.ver(id);
        self.known.insert(id, s);
        s
    }

    fn finish(self, facilities: BTreeSet<usize>, depth: usize) -> FacilityResult {
        FacilityResult {
            facilities,
            verified: self.known.keys().copied().collect(),
            liars_caught: self.known.iter().filter(|(_, &s)| !s).map(|(&i, _)| i).collect(),
            recursion_depth: depth,
        }
    }
}

fn run_facility<F>(instance: &MetricInstance, oracle: &mut VerificationOracle, mut round: F) -> FacilityResult
where
    F: FnMut(&[usize], usize) -> (Vec<usize>, BTreeSet<usize>),
{
    let mut verifier = AgentVerifier {
        oracle,
        known: BTreeMap::new(),
    };
    let mut active: Vec<AgentId> = (0..instance.n()).collect();
    let mut depth = 0;
    loop {
        let locs: Vec<usize> = active.iter().map(|&a| instance.agents_reported[a]).collect();
        let (picked, facilities) = round(&locs, depth);
        let liars: BTreeSet<AgentId> = picked
            .iter()
            .map(|&i| active[i])
            .filter(|&id| !verifier.check(id))
            .collect();
        if liars.is_empty() {
            return verifier.finish(facilities, depth);
        }
        active.retain(|id| !liars.contains(id));
        depth += 1;
    }
}

/// Greedy with verification: 2-approximate for the maximum cost. The
/// mechanism is deterministic; `_stream` is accepted for a uniform interface.
pub fn run_greedy(instance: &MetricInstance, oracle: &mut VerificationOracle, _stream: RngStream) -> FacilityResult {
    run_facility(instance, oracle, |locs, _| {
        let picks = greedy_centers(locs, instance.k, &instance.dist);
        let facilities = picks.iter().map(|&i| locs[i]).collect();
        (picks, facilities)
    })
}

/// One selection round of Proportional on reported locations `locs`.
///
/// The first agent is uniform; each next agent is drawn proportionally to its
/// distance from the open facilities. When every distance is zero before `k`
/// facilities are open, the round stops if fewer than `k` agents take part and
/// otherwise fills the remaining facilities uniformly from unused points.
pub fn proportional_round<R: Rng + ?Sized>(
    locs: &[usize],
    k: usize,
    dist: &[Vec<f64>],
    rng: &mut R,
) -> (Vec<usize>, BTreeSet<usize>) {
    let n = locs.len();
    let mut picks = Vec::new();
    let mut open = BTreeSet::new();
    if n == 0 {
        return (picks, open);
    }
    let first = rng.random_range(0..n);
    picks.push(first);
    open.insert(locs[first]);
    let mut gap: Vec<f64> = locs.iter().map(|&p| dist[p][locs[first]]).collect();
    while open.len() < k {
        if gap.iter().any(|&g| g > 0.0) {
            let i = WeightedIndex::new(&gap).expect("positive gaps").sample(rng);
            picks.push(i);
            open.insert(locs[i]);
            for (g, &p) in gap.iter_mut().zip(locs) {
                *g = g.min(dist[p][locs[i]]);
            }
        } else if n < k {
            break;
        } else {
            let free: Vec<usize> = (0..dist.len()).filter(|p| !open.contains(p)).collect();
            if free.is_empty() {
                break;
            }
            open.insert(free[rng.random_range(0..free.len())]);
        }
    }
    (picks, open)
}

/// Proportional with verification: `Theta(ln k)`-approximate for the social cost.
pub fn run_proportional(instance: &MetricInstance, oracle: &mut VerificationOracle, stream: RngStream) -> FacilityResult {
    run_facility(instance, oracle, |locs, depth| {
        let mut rng = stream.derive(depth as u64).rng();
        proportional_round(locs, instance.k, &instance.dist, &mut rng)
    })
}

fn for_each_subset(points: usize, size: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        visit(&idx);
        let mut i = size;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + points - size {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn brute_force<F>(locations: &[usize], k: usize, dist: &[Vec<f64>], objective: F) -> Result<(Vec<usize>, f64)>
where
    F: Fn(&mut dyn Iterator<Item = f64>) -> f64,
{
    let p = dist.len();
    if k >= p {
        return Ok(((0..p).collect(), 0.0));
    }
    if p > MAX_BRUTE_POINTS || k > MAX_BRUTE_K {
        return Err(Error::TooLarge(format!(
            "{p} points, k = {k} (limits: {MAX_BRUTE_POINTS} points, k <= {MAX_BRUTE_K})"
        )));
    }
    let mut best = (Vec::new(), f64::INFINITY);
    for_each_subset(p, k, |set| {
        let mut costs = locations.iter().map(|&t| set.iter().map(|&c| dist[t][c]).fold(f64::INFINITY, f64::min));
        let cost = objective(&mut costs);
        if cost < best.1 {
            best = (set.to_vec(), cost);
        }
    });
    Ok(best)
}

/// Exhaustive k-center optimum over all k-subsets of points. Ties keep the
/// lexicographically first set.
pub fn brute_force_kcenter(locations: &[usize], k: usize, dist: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    brute_force(locations, k, dist, |c| c.fold(0.0, f64::max))
}

/// Exhaustive k-median optimum over all k-subsets of points.
pub fn brute_force_kmedian(locations: &[usize], k: usize, dist: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    brute_force(locations, k, dist, |c| c.sum())
}

fn check_exact_limits(n: usize, k: usize) -> Result<()> {
    if n > MAX_EXACT_AGENTS || k > MAX_EXACT_K {
        return Err(Error::TooLarge(format!(
            "n = {n}, k = {k} (limits: n <= {MAX_EXACT_AGENTS}, k <= {MAX_EXACT_K})"
        )));
    }
    Ok(())
}

/// Expected cost `d(t_i, C)` of agent `agent` under Proportional on true
/// locations, with (`include_agent`) or without the agent taking part.
///
/// Evaluates the round-by-round recursion on the open facility set: with the
/// agent present, the next facility lands at `t_j` with probability
/// `d(t_j, C) / (d(t_i, C) + sum_{j != i} d(t_j, C))`; without it the agent's
/// own term drops out of both sums. Round 0 averages over the `n` (resp.
/// `n - 1`) possible first picks. No facility at all costs `+inf`.
pub fn proportional_expected_cost(instance: &MetricInstance, agent: usize, include_agent: bool) -> Result<f64> {
    let n = instance.n();
    if agent >= n {
        return Err(Error::AgentOutOfRange { index: agent, n });
    }
    check_exact_limits(n, instance.k)?;
    let me = instance.agents_true[agent];
    let players: Vec<usize> = (0..n)
        .filter(|&j| include_agent || j != agent)
        .map(|j| instance.agents_true[j])
        .collect();
    if players.is_empty() {
        return Ok(f64::INFINITY);
    }
    let mut memo = HashMap::new();
    let total: f64 = players
        .iter()
        .map(|&p| cost_from(instance, me, &players, &BTreeSet::from([p]), &mut memo))
        .sum();
    Ok(total / players.len() as f64)
}

fn cost_from(
    instance: &MetricInstance,
    me: usize,
    players: &[usize],
    open: &BTreeSet<usize>,
    memo: &mut HashMap<Vec<usize>, f64>,
) -> f64 {
    let key: Vec<usize> = open.iter().copied().collect();
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let here = instance.distance_to_set(me, open);
    let value = if open.len() >= instance.k {
        here
    } else {
        let gaps: Vec<f64> = players.iter().map(|&p| instance.distance_to_set(p, open)).collect();
        let total: f64 = gaps.iter().sum();
        if total > 0.0 {
            players
                .iter()
                .zip(&gaps)
                .filter(|(_, &g)| g > 0.0)
                .map(|(&p, &g)| {
                    let mut next = open.clone();
                    next.insert(p);
                    g / total * cost_from(instance, me, players, &next, memo)
                })
                .sum()
        } else if players.len() < instance.k {
            here
        } else {
            let free: Vec<usize> = (0..instance.num_points()).filter(|p| !open.contains(p)).collect();
            if free.is_empty() {
                here
            } else {
                free.iter()
                    .map(|&p| {
                        let mut next = open.clone();
                        next.insert(p);
                        cost_from(instance, me, players, &next, memo)
                    })
                    .sum::<f64>()
                    / free.len() as f64
            }
        }
    };
    memo.insert(key, value);
    value
}

/// One branch of an exact Proportional round: the agents that received a
/// facility, the open facility set and its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundBranch {
    pub picked: BTreeSet<usize>,
    pub facilities: BTreeSet<usize>,
    pub prob: f64,
}

/// Exact law of [`proportional_round`] by enumeration of the selection tree,
/// with branches merged on `(picked, facilities)`.
pub fn proportional_round_distribution(locs: &[usize], k: usize, dist: &[Vec<f64>]) -> Result<Vec<RoundBranch>> {
    check_exact_limits(locs.len(), k)?;
    let n = locs.len();
    let mut out: BTreeMap<(BTreeSet<usize>, BTreeSet<usize>), f64> = BTreeMap::new();
    if n == 0 {
        out.insert((BTreeSet::new(), BTreeSet::new()), 1.0);
    }
    fn walk(
        locs: &[usize],
        k: usize,
        dist: &[Vec<f64>],
        picked: BTreeSet<usize>,
        open: BTreeSet<usize>,
        prob: f64,
        out: &mut BTreeMap<(BTreeSet<usize>, BTreeSet<usize>), f64>,
    ) {
        if open.len() >= k {
            *out.entry((picked, open)).or_insert(0.0) += prob;
            return;
        }
        let gaps: Vec<f64> = locs
            .iter()
            .map(|&p| open.iter().map(|&c| dist[p][c]).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = gaps.iter().sum();
        if total > 0.0 {
            for (i, &g) in gaps.iter().enumerate().filter(|(_, &g)| g > 0.0) {
                let (mut p2, mut o2) = (picked.clone(), open.clone());
                p2.insert(i);
                o2.insert(locs[i]);
                walk(locs, k, dist, p2, o2, prob * g / total, out);
            }
        } else if locs.len() < k {
            *out.entry((picked, open)).or_insert(0.0) += prob;
        } else {
            let free: Vec<usize> = (0..dist.len()).filter(|p| !open.contains(p)).collect();
            if free.is_empty() {
                *out.entry((picked, open)).or_insert(0.0) += prob;
                return;
            }
            for &p in &free {
                let mut o2 = open.clone();
                o2.insert(p);
                walk(locs, k, dist, picked.clone(), o2, prob / free.len() as f64, out);
            }
        }
    }
    for i in 0..n {
        walk(
            locs,
            k,
            dist,
            BTreeSet::from([i]),
            BTreeSet::from([locs[i]]),
            1.0 / n as f64,
            &mut out,
        );
    }
    Ok(out
        .into_iter()
        .map(|((picked, facilities), prob)| RoundBranch { picked, facilities, prob })
        .collect())
}

/// Distribution over facility sets.
pub type FacilityLaw = BTreeMap<BTreeSet<usize>, f64>;

/// Exact output law of [`run_proportional`], including restarts after liars
/// are caught.
pub fn proportional_exact_distribution(instance: &MetricInstance) -> Result<FacilityLaw> {
    fn go(instance: &MetricInstance, active: &[usize], memo: &mut HashMap<Vec<usize>, FacilityLaw>) -> Result<FacilityLaw> {
        if let Some(law) = memo.get(active) {
            return Ok(law.clone());
        }
        let locs: Vec<usize> = active.iter().map(|&a| instance.agents_reported[a]).collect();
        let mut law = FacilityLaw::new();
        for b in proportional_round_distribution(&locs, instance.k, &instance.dist)? {
            let caught: Vec<usize> = b
                .picked
                .iter()
                .map(|&i| active[i])
                .filter(|&a| !instance.is_truthful(a))
                .collect();
            if caught.is_empty() {
                *law.entry(b.facilities).or_insert(0.0) += b.prob;
            } else {
                let rest: Vec<usize> = active.iter().copied().filter(|a| !caught.contains(a)).collect();
                for (set, p) in go(instance, &rest, memo)? {
                    *law.entry(set).or_insert(0.0) += b.prob * p;
                }
            }
        }
        memo.insert(active.to_vec(), law.clone());
        Ok(law)
    }
    let all: Vec<usize> = (0..instance.n()).collect();
    go(instance, &all, &mut HashMap::new())
}

/// Law of a single Proportional round on the reported profile conditioned on
/// no liar receiving a facility, with the probability of that event. `None`
/// when the event has probability zero.
pub fn proportional_no_catch_distribution(instance: &MetricInstance) -> Result<Option<(f64, FacilityLaw)>> {
    let liars: BTreeSet<usize> = instance.liars().into_iter().collect();
    let mut law = FacilityLaw::new();
    let mut mass = 0.0;
    for b in proportional_round_distribution(instance.agents_reported(), instance.k, &instance.dist)? {
        if b.picked.is_disjoint(&liars) {
            mass += b.prob;
            *law.entry(b.facilities).or_insert(0.0) += b.prob;
        }
    }
    if mass == 0.0 {
        return Ok(None);
    }
    law.values_mut().for_each(|p| *p /= mass);
    Ok(Some((mass, law)))
}

/// Total-variation distance between two facility-set laws.
pub fn law_tv(a: &FacilityLaw, b: &FacilityLaw) -> f64 {
    let keys: BTreeSet<&BTreeSet<usize>> = a.keys().chain(b.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}
