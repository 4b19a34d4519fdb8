//! Instance generators: the logarithmic-verification lower-bound family,
//! single-minded baselines, random profiles and liars, combinatorial public
//! project (CPPP) profiles and random metric instances.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facility::MetricInstance;
use crate::types::ValuationProfile;

/// Default small value for non-winning agents in the lower-bound family.
pub const DEFAULT_DELTA: f64 = 1e-6;

/// Default group size `ceil(log2 m / 0.1)`.
pub fn default_group_size(m: usize) -> usize {
    ((m as f64).log2() / 0.1).ceil().max(1.0) as usize
}

/// A draw from the lower-bound family with the number of 1-valued agents of
/// each group.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundInstance {
    pub profile: ValuationProfile,
    pub ones: Vec<usize>,
}

/// `K` with `Pr[K = k] = 2^{-(k+1)}` for `k < cap` and the tail mass on `cap`.
pub fn truncated_geometric<R: Rng + ?Sized>(cap: usize, rng: &mut R) -> usize {
    let mut k = 0;
    while k < cap && rng.random_bool(0.5) {
        k += 1;
    }
    k
}

/// `m` groups of `group_size` agents; agents of group `j` value only outcome
/// `j`. In each group the first `K` agents value it at 1 and the rest at
/// `delta`, with `K` truncated-geometric.
pub fn lower_bound_instance<R: Rng + ?Sized>(m: usize, group_size: usize, delta: f64, rng: &mut R) -> Result<LowerBoundInstance> {
    if m < 2 || group_size == 0 {
        return Err(Error::InvalidParameter(format!("need m >= 2 and group size >= 1, got m={m}, size={group_size}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0,1), got {delta}")));
    }
    let mut rows = Vec::with_capacity(m * group_size);
    let mut ones = Vec::with_capacity(m);
    for j in 0..m {
        let k = truncated_geometric(group_size, rng);
        ones.push(k);
        for a in 0..group_size {
            let mut row = vec![0.0; m];
            row[j] = if a < k { 1.0 } else { delta };
            rows.push(row);
        }
    }
    Ok(LowerBoundInstance {
        profile: ValuationProfile::truthful(m, rows)?,
        ones,
    })
}

/// `m` single-minded agents: agent `i` values only outcome `i`, at 1, except
/// agent 0 who values outcome 0 at `big_value`.
pub fn single_minded_instance(m: usize, big_value: f64) -> Result<ValuationProfile> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    let rows = (0..m)
        .map(|i| {
            let mut row = vec![0.0; m];
            row[i] = if i == 0 { big_value } else { 1.0 };
            row
        })
        .collect();
    ValuationProfile::truthful(m, rows)
}

/// Entry distribution for [`random_profile`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileKind {
    /// Every entry uniform in `[0, 1]`.
    Uniform01,
    /// Each entry is nonzero (uniform in `(0, 1]`) with probability `p`.
    Sparse { p: f64 },
    /// Uniform entries with the column of `outcome` multiplied by 10.
    Spiked { outcome: usize },
}

impl FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |x: &str| x.parse::<f64>().map_err(|e| Error::Parse(format!("{x}: {e}")));
        match parts.as_slice() {
            ["uniform"] | ["uniform01"] => Ok(ProfileKind::Uniform01),
            ["sparse", p] => Ok(ProfileKind::Sparse { p: num(p)? }),
            ["spiked", j] => Ok(ProfileKind::Spiked {
                outcome: j.parse().map_err(|e| Error::Parse(format!("{j}: {e}")))?,
            }),
            _ => Err(Error::Parse(format!("unknown profile kind '{s}' (uniform | sparse:P | spiked:J)"))),
        }
    }
}

pub fn random_profile<R: Rng + ?Sized>(n: usize, m: usize, kind: ProfileKind, rng: &mut R) -> Result<ValuationProfile> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    let rows = match kind {
        ProfileKind::Uniform01 => (0..n).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect(),
        ProfileKind::Sparse { p } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("sparsity {p} outside [0,1]")));
            }
            (0..n)
                .map(|_| {
                    (0..m)
                        .map(|_| if rng.random_bool(p) { 1.0 - rng.random::<f64>() } else { 0.0 })
                        .collect()
                })
                .collect()
        }
        ProfileKind::Spiked { outcome } => {
            if outcome >= m {
                return Err(Error::InvalidParameter(format!("spike outcome {outcome} >= m = {m}")));
            }
            (0..n)
                .map(|_| {
                    (0..m)
                        .map(|j| {
                            let v = rng.random::<f64>();
                            if j == outcome { 10.0 * v } else { v }
                        })
                        .collect()
                })
                .collect()
        }
    };
    ValuationProfile::truthful(m, rows)
}

/// How a liar distorts its true row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mutation {
    Scale { factor: f64 },
    Swap { a: usize, b: usize },
    Constant { value: f64 },
}

impl Mutation {
    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        let mut out = row.to_vec();
        match *self {
            Mutation::Scale { factor } => out.iter_mut().for_each(|v| *v *= factor),
            Mutation::Swap { a, b } => {
                if a >= row.len() || b >= row.len() {
                    return Err(Error::InvalidParameter(format!("swap columns {a},{b} out of range")));
                }
                out.swap(a, b);
            }
            Mutation::Constant { value } => out.iter_mut().for_each(|v| *v = value),
        }
        Ok(out)
    }
}

impl FromStr for Mutation {
    type Err = Error;

    /// `scale:C`, `swap:A:B` or `constant:V`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let f = |x: &str| x.parse::<f64>().map_err(|e| Error::Parse(format!("{x}: {e}")));
        let u = |x: &str| x.parse::<usize>().map_err(|e| Error::Parse(format!("{x}: {e}")));
        match parts.as_slice() {
            ["scale", c] => Ok(Mutation::Scale { factor: f(c)? }),
            ["swap", a, b] => Ok(Mutation::Swap { a: u(a)?, b: u(b)? }),
            ["constant", v] => Ok(Mutation::Constant { value: f(v)? }),
            _ => Err(Error::Parse(format!("unknown lie '{s}' (scale:C | swap:A:B | constant:V)"))),
        }
    }
}

/// Which agents lie and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiarSpec {
    pub agents: Vec<usize>,
    pub mutation: Mutation,
}

/// Rewrites the reported rows of `spec.agents` (by position) as mutations of
/// their true rows. Fails when a mutation would leave an agent truthful.
pub fn apply_liars(profile: &ValuationProfile, spec: &LiarSpec) -> Result<ValuationProfile> {
    let mut out = profile.clone();
    for &a in &spec.agents {
        if a >= profile.n() {
            return Err(Error::AgentOutOfRange { index: a, n: profile.n() });
        }
        let truth = profile.true_row(a);
        let lie = spec.mutation.apply(truth)?;
        if lie == truth {
            return Err(Error::NoOpLie(a));
        }
        out = out.with_report(a, lie)?;
    }
    Ok(out)
}

/// A normalized monotone set function over resources `0..r`.
pub trait SetValuation: Send + Sync {
    fn value(&self, set: &[usize]) -> f64;
}

/// `v(S) = weight * |S ∩ target|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub target: BTreeSet<usize>,
    pub weight: f64,
}

impl SetValuation for Coverage {
    fn value(&self, set: &[usize]) -> f64 {
        self.weight * set.iter().filter(|s| self.target.contains(s)).count() as f64
    }
}

/// A combinatorial public project: choose `k` of `resources` resources.
pub struct CpppSpec {
    pub resources: usize,
    pub k: usize,
    pub valuations: Vec<Box<dyn SetValuation>>,
}

/// Upper bound on the number of outcomes [`cppp_profile`] will enumerate.
pub const MAX_CPPP_OUTCOMES: usize = 10_000;

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// All `k`-subsets of `0..r` in lexicographic order.
pub fn k_subsets(r: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, r: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for x in start..r {
            if r - x < k - cur.len() {
                break;
            }
            cur.push(x);
            rec(x + 1, r, k, cur, out);
            cur.pop();
        }
    }
    rec(0, r, k, &mut cur, &mut out);
    out
}

/// Casts a CPPP as utilitarian voting: one outcome per `k`-subset (in
/// lexicographic order), `x_i(S) = v_i(S)`. Returns the profile and the
/// subset behind each outcome.
pub fn cppp_profile(spec: &CpppSpec) -> Result<(ValuationProfile, Vec<Vec<usize>>)> {
    if spec.k == 0 || spec.k > spec.resources {
        return Err(Error::InvalidParameter(format!("need 1 <= k <= r, got k={}, r={}", spec.k, spec.resources)));
    }
    let m = binomial(spec.resources, spec.k);
    if m > MAX_CPPP_OUTCOMES {
        return Err(Error::TooLarge(format!("C({}, {}) = {m} outcomes", spec.resources, spec.k)));
    }
    let labels = k_subsets(spec.resources, spec.k);
    let rows = spec
        .valuations
        .iter()
        .map(|v| labels.iter().map(|s| v.value(s)).collect())
        .collect();
    Ok((ValuationProfile::truthful(m, rows)?, labels))
}

/// Spot-checks `v(∅) = 0` and monotonicity along `chains` random maximal
/// chains `∅ ⊂ {a} ⊂ {a,b} ⊂ ... ⊂ R`.
pub fn spot_check_monotone<R: Rng + ?Sized>(v: &dyn SetValuation, resources: usize, chains: usize, rng: &mut R) -> bool {
    if v.value(&[]) != 0.0 {
        return false;
    }
    for _ in 0..chains {
        let order = sample(rng, resources, resources).into_vec();
        let mut set = Vec::new();
        let mut prev = 0.0;
        for x in order {
            set.push(x);
            set.sort_unstable();
            let cur = v.value(&set);
            if cur < prev {
                return false;
            }
            prev = cur;
        }
    }
    true
}

/// `n` agents with coverage valuations over random targets of size 1..=k.
pub fn random_coverage_cppp<R: Rng + ?Sized>(resources: usize, k: usize, n: usize, rng: &mut R) -> Result<CpppSpec> {
    if k == 0 || k > resources {
        return Err(Error::InvalidParameter(format!("need 1 <= k <= r, got k={k}, r={resources}")));
    }
    let valuations = (0..n)
        .map(|_| {
            let size = rng.random_range(1..=k);
            let target = sample(rng, resources, size).into_iter().collect();
            Box::new(Coverage {
                target,
                weight: 1.0 - rng.random::<f64>(),
            }) as Box<dyn SetValuation>
        })
        .collect();
    Ok(CpppSpec { resources, k, valuations })
}

/// Random line metric: `points` coordinates uniform in `[0, 100)`, `n`
/// truthful agents at uniformly random points.
pub fn random_line_instance<R: Rng + ?Sized>(points: usize, n: usize, k: usize, rng: &mut R) -> Result<MetricInstance> {
    let coords: Vec<f64> = (0..points).map(|_| 100.0 * rng.random::<f64>()).collect();
    let agents: Vec<usize> = (0..n).map(|_| rng.random_range(0..points)).collect();
    MetricInstance::on_line(&coords, agents.clone(), agents, k)
}

/// Random graph metric: complete graph with edge lengths uniform in
/// `[1, 10)`, closed under shortest paths.
#[allow(clippy::needless_range_loop)]
pub fn random_graph_instance<R: Rng + ?Sized>(points: usize, n: usize, k: usize, rng: &mut R) -> Result<MetricInstance> {
    let mut d = vec![vec![0.0; points]; points];
    for a in 0..points {
        for b in a + 1..points {
            let len = 1.0 + 9.0 * rng.random::<f64>();
            d[a][b] = len;
            d[b][a] = len;
        }
    }
    for via in 0..points {
        for a in 0..points {
            for b in 0..points {
                let alt = d[a][via] + d[via][b];
                if alt < d[a][b] {
                    d[a][b] = alt;
                }
            }
        }
    }
    let agents: Vec<usize> = (0..n).map(|_| rng.random_range(0..points)).collect();
    MetricInstance::new(d, agents.clone(), agents, k)
}

/// Random instance whose agents sit at distinct points.
pub fn random_distinct_instance<R: Rng + ?Sized>(points: usize, n: usize, k: usize, on_line: bool, rng: &mut R) -> Result<MetricInstance> {
    if n > points {
        return Err(Error::InvalidParameter(format!("{n} distinct agents need at least {n} points")));
    }
    let mut inst = if on_line {
        random_line_instance(points, n, k, rng)?
    } else {
        random_graph_instance(points, n, k, rng)?
    };
    let agents = sample(rng, points, n).into_vec();
    inst = MetricInstance::with_labels(inst.labels().to_vec(), inst.dist_matrix().to_vec(), agents.clone(), agents, k)?;
    Ok(inst)
}

/// Makes the given agents report a uniformly random other point.
pub fn facility_liars<R: Rng + ?Sized>(instance: &MetricInstance, liars: &[usize], rng: &mut R) -> Result<MetricInstance> {
    let p = instance.num_points();
    if p < 2 {
        return Err(Error::InvalidParameter("need two points for a lie".into()));
    }
    let mut reported = instance.agents_reported().to_vec();
    for &a in liars {
        if a >= instance.n() {
            return Err(Error::AgentOutOfRange { index: a, n: instance.n() });
        }
        let t = instance.agents_true()[a];
        let mut z = rng.random_range(0..p - 1);
        if z >= t {
            z += 1;
        }
        reported[a] = z;
    }
    MetricInstance::with_labels(
        instance.labels().to_vec(),
        instance.dist_matrix().to_vec(),
        instance.agents_true().to_vec(),
        reported,
        instance.k(),
    )
}
