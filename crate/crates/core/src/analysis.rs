//! Monte Carlo and analytic auditors for the mechanisms' claimed properties.
//!
//! Trials run in parallel but every aggregate is built from integer counts,
//! so reports are bit-identical for a given seed whatever the thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::allocations::{approximation_ratio, evaluate_rule, expected_welfare, participation_margin, RuleSpec};
use crate::error::{Error, Result};
use crate::facility::{law_tv, run_greedy, run_proportional, FacilityLaw, FacilityResult, MetricInstance};
use crate::instances::{apply_liars, LiarSpec, Mutation};
use crate::mechanisms::{run_rule_mechanism, MechanismResult};
use crate::oracle::VerificationOracle;
use crate::rng::{label, RngStream};
use crate::types::{Allocation, Outcome, ValuationProfile, WeightVector};

/// Default TV threshold for robustness audits.
pub const DEFAULT_TV_THRESHOLD: f64 = 0.02;
/// Default number of Monte Carlo trials for robustness audits.
pub const DEFAULT_TRIALS: u64 = 200_000;

/// Anything that can be run trial by trial against a fresh oracle.
pub trait Mechanism: Sync {
    fn name(&self) -> String;
    /// The allocation rule the mechanism claims to implement.
    fn rule(&self) -> RuleSpec;
    fn run(&self, profile: &ValuationProfile, oracle: &mut VerificationOracle, stream: RngStream) -> Result<MechanismResult>;
}

impl Mechanism for RuleSpec {
    fn name(&self) -> String {
        RuleSpec::name(self)
    }

    fn rule(&self) -> RuleSpec {
        *self
    }

    fn run(&self, profile: &ValuationProfile, oracle: &mut VerificationOracle, stream: RngStream) -> Result<MechanismResult> {
        run_rule_mechanism(self, profile, oracle, stream)
    }
}

/// Control mechanism that samples its rule on the reported profile without
/// verifying anybody, so liars shift its output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakyMechanism(pub RuleSpec);

impl Mechanism for LeakyMechanism {
    fn name(&self) -> String {
        format!("leaky_{}", self.0.name())
    }

    fn rule(&self) -> RuleSpec {
        self.0
    }

    fn run(&self, profile: &ValuationProfile, _oracle: &mut VerificationOracle, stream: RngStream) -> Result<MechanismResult> {
        let alloc = evaluate_rule(&self.0, &profile.weight_vector(false));
        let mut weights = alloc.probs.clone();
        weights.push(alloc.null_mass);
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Degenerate(e.to_string()))?;
        let idx = dist.sample(&mut stream.derive(0).rng());
        let outcome = if idx == alloc.m() { Outcome::Null } else { Outcome::Alt(idx) };
        Ok(MechanismResult {
            outcome,
            bot_resolved: false,
            verified: BTreeSet::new(),
            liars_caught: BTreeSet::new(),
            recursion_depth: 0,
            oracle_calls: 0,
            verified_before_bot: 0,
        })
    }
}

/// Runs trial `t` on its own stream with its own oracle.
pub fn run_trial(mech: &dyn Mechanism, profile: &ValuationProfile, seed: u64, t: u64) -> Result<MechanismResult> {
    let mut oracle = VerificationOracle::from_profile(profile);
    mech.run(profile, &mut oracle, RngStream::trial(seed, t))
}

/// Every trial's result, in trial order.
pub fn run_trials(mech: &dyn Mechanism, profile: &ValuationProfile, trials: u64, seed: u64) -> Result<Vec<MechanismResult>> {
    (0..trials).into_par_iter().map(|t| run_trial(mech, profile, seed, t)).collect()
}

/// Distinct-verification counts, overall and split by whether the run ended
/// through a bot action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationStats {
    pub mean: f64,
    pub std_dev: f64,
    pub max: usize,
    pub truthful_path_runs: u64,
    pub truthful_path_mean: f64,
    pub truthful_path_max: usize,
    pub bot_path_runs: u64,
    pub bot_path_mean: f64,
    pub bot_path_max: usize,
}

/// Summary of many independent trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Empirical {
    pub trials: u64,
    /// Outcome counts; the last entry counts null outcomes.
    pub counts: Vec<u64>,
    pub allocation: Allocation,
    pub verification: VerificationStats,
    /// Number of runs by how many liars they caught.
    pub liars_caught_histogram: BTreeMap<usize, u64>,
    pub max_depth: usize,
}

#[derive(Debug, Clone)]
struct Tally {
    counts: Vec<u64>,
    verified_sum: u64,
    verified_sq: u64,
    verified_max: usize,
    plain_runs: u64,
    plain_sum: u64,
    plain_max: usize,
    bot_runs: u64,
    bot_sum: u64,
    bot_max: usize,
    caught: BTreeMap<usize, u64>,
    max_depth: usize,
}

impl Tally {
    fn new(m: usize) -> Self {
        Self {
            counts: vec![0; m + 1],
            verified_sum: 0,
            verified_sq: 0,
            verified_max: 0,
            plain_runs: 0,
            plain_sum: 0,
            plain_max: 0,
            bot_runs: 0,
            bot_sum: 0,
            bot_max: 0,
            caught: BTreeMap::new(),
            max_depth: 0,
        }
    }

    fn add(mut self, r: &MechanismResult) -> Self {
        let m = self.counts.len() - 1;
        self.counts[r.outcome.index().unwrap_or(m)] += 1;
        let v = r.verified.len();
        self.verified_sum += v as u64;
        self.verified_sq += (v * v) as u64;
        self.verified_max = self.verified_max.max(v);
        if r.bot_resolved {
            self.bot_runs += 1;
            self.bot_sum += v as u64;
            self.bot_max = self.bot_max.max(v);
        } else {
            self.plain_runs += 1;
            self.plain_sum += v as u64;
            self.plain_max = self.plain_max.max(v);
        }
        *self.caught.entry(r.liars_caught.len()).or_default() += 1;
        self.max_depth = self.max_depth.max(r.recursion_depth);
        self
    }

    fn merge(mut self, other: Tally) -> Self {
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.verified_sum += other.verified_sum;
        self.verified_sq += other.verified_sq;
        self.verified_max = self.verified_max.max(other.verified_max);
        self.plain_runs += other.plain_runs;
        self.plain_sum += other.plain_sum;
        self.plain_max = self.plain_max.max(other.plain_max);
        self.bot_runs += other.bot_runs;
        self.bot_sum += other.bot_sum;
        self.bot_max = self.bot_max.max(other.bot_max);
        for (k, c) in other.caught {
            *self.caught.entry(k).or_default() += c;
        }
        self.max_depth = self.max_depth.max(other.max_depth);
        self
    }

    fn finish(self) -> Result<Empirical> {
        let trials: u64 = self.counts.iter().sum();
        let n = trials as f64;
        let m = self.counts.len() - 1;
        let probs = self.counts[..m].iter().map(|&c| c as f64 / n).collect();
        let allocation = Allocation::from_parts_unchecked(probs, self.counts[m] as f64 / n);
        let mean = self.verified_sum as f64 / n;
        let var = (self.verified_sq as f64 / n - mean * mean).max(0.0);
        let ratio = |s: u64, k: u64| if k == 0 { 0.0 } else { s as f64 / k as f64 };
        Ok(Empirical {
            trials,
            counts: self.counts,
            allocation,
            verification: VerificationStats {
                mean,
                std_dev: var.sqrt(),
                max: self.verified_max,
                truthful_path_runs: self.plain_runs,
                truthful_path_mean: ratio(self.plain_sum, self.plain_runs),
                truthful_path_max: self.plain_max,
                bot_path_runs: self.bot_runs,
                bot_path_mean: ratio(self.bot_sum, self.bot_runs),
                bot_path_max: self.bot_max,
            },
            liars_caught_histogram: self.caught,
            max_depth: self.max_depth,
        })
    }
}

/// Outcome frequencies and verification statistics over `trials` runs.
pub fn empirical_distribution(mech: &dyn Mechanism, profile: &ValuationProfile, trials: u64, seed: u64) -> Result<Empirical> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let m = profile.m();
    (0..trials)
        .into_par_iter()
        .try_fold(|| Tally::new(m), |acc, t| Ok::<_, Error>(acc.add(&run_trial(mech, profile, seed, t)?)))
        .try_reduce(|| Tally::new(m), |a, b| Ok(a.merge(b)))?
        .finish()
}

/// Builds the summary of already-run trials over `m` outcomes.
pub fn summarize(m: usize, results: &[MechanismResult]) -> Result<Empirical> {
    if results.is_empty() {
        return Err(Error::InvalidParameter("no trials to summarize".into()));
    }
    results.iter().fold(Tally::new(m), Tally::add).finish()
}

/// Property checked by an audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    Robustness,
    Truthfulness,
    Participation,
    Approximation,
    Verification,
}

/// Which side of the threshold passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub kind: AuditKind,
    pub statistic: f64,
    pub threshold: f64,
    pub direction: Direction,
    pub trials: u64,
    pub pass: bool,
    pub witness: Option<serde_json::Value>,
}

impl AuditReport {
    pub fn new(
        kind: AuditKind,
        statistic: f64,
        threshold: f64,
        direction: Direction,
        trials: u64,
        witness: Option<serde_json::Value>,
    ) -> Self {
        let pass = match direction {
            Direction::AtMost => statistic <= threshold,
            Direction::AtLeast => statistic >= threshold,
        };
        Self { kind, statistic, threshold, direction, trials, pass, witness }
    }
}

/// TV distance between the empirical law and the rule evaluated on the
/// truthful agents' true rows.
pub fn robustness_audit(
    mech: &dyn Mechanism,
    profile: &ValuationProfile,
    trials: u64,
    seed: u64,
    threshold: f64,
) -> Result<AuditReport> {
    let emp = empirical_distribution(mech, profile, trials, seed)?;
    let target = evaluate_rule(&mech.rule(), &profile.truthful_weight_vector());
    let tv = emp.allocation.tv_distance(&target)?;
    let witness = json!({
        "mechanism": mech.name(),
        "liars": profile.liar_positions(),
        "empirical": emp.allocation,
        "expected": target,
    });
    Ok(AuditReport::new(AuditKind::Robustness, tv, threshold, Direction::AtMost, trials, Some(witness)))
}

/// Mean and variance of `row[outcome]` under the empirical counts.
fn utility_moments(row: &[f64], emp: &Empirical) -> (f64, f64) {
    let n = emp.trials as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for (x, &c) in row.iter().zip(&emp.counts) {
        s1 += x * c as f64;
        s2 += x * x * c as f64;
    }
    let mean = s1 / n;
    (mean, (s2 / n - mean * mean).max(0.0))
}

/// Compares the agent's true-row utility when reporting truthfully against
/// its utility under `lie`. Passes when the ratio is at least the rule's
/// truthfulness factor minus three standard errors.
pub fn truthfulness_audit(
    mech: &dyn Mechanism,
    profile: &ValuationProfile,
    agent: usize,
    lie: &Mutation,
    trials: u64,
    seed: u64,
) -> Result<AuditReport> {
    if agent >= profile.n() {
        return Err(Error::AgentOutOfRange { index: agent, n: profile.n() });
    }
    let row = profile.true_row(agent).to_vec();
    let honest = profile.with_report(agent, row.clone())?;
    let lying = apply_liars(&honest, &LiarSpec { agents: vec![agent], mutation: *lie })?;
    let eps = mech.rule().participation_bound(profile.m());

    let truthful = empirical_distribution(mech, &honest, trials, seed)?;
    let lied = empirical_distribution(mech, &lying, trials, seed ^ label("truthfulness/lie"))?;
    let (mu_t, var_t) = utility_moments(&row, &truthful);
    let (mu_l, var_l) = utility_moments(&row, &lied);
    let n = trials as f64;
    let witness = json!({
        "agent": agent,
        "lie": lie,
        "truthful_utility": mu_t,
        "lying_utility": mu_l,
        "lying_report": lying.reported_row(agent),
    });
    let (ratio, sigma) = if mu_t == 0.0 && mu_l == 0.0 {
        (1.0, 0.0)
    } else if mu_l == 0.0 {
        (f64::INFINITY, 0.0)
    } else if mu_t == 0.0 {
        (0.0, (var_l / n).sqrt() / mu_l)
    } else {
        let r = mu_t / mu_l;
        (r, r * (var_t / (n * mu_t * mu_t) + var_l / (n * mu_l * mu_l)).sqrt())
    };
    Ok(AuditReport::new(
        AuditKind::Truthfulness,
        ratio,
        eps - 3.0 * sigma,
        Direction::AtLeast,
        trials,
        Some(witness),
    ))
}

/// Smallest analytic participation margin over the given (profile, agent)
/// cases against the rule's guarantee (less 1e-9).
pub fn participation_audit(spec: &RuleSpec, cases: &[(ValuationProfile, usize)]) -> Result<AuditReport> {
    if cases.is_empty() {
        return Err(Error::InvalidParameter("no participation cases".into()));
    }
    let mut worst = (f64::INFINITY, 0usize);
    let mut violations = 0u64;
    let bound = spec.participation_bound(cases[0].0.m()) - 1e-9;
    for (idx, (profile, agent)) in cases.iter().enumerate() {
        let margin = participation_margin(spec, profile, *agent)?;
        if margin < spec.participation_bound(profile.m()) - 1e-9 {
            violations += 1;
        }
        if margin < worst.0 {
            worst = (margin, idx);
        }
    }
    let witness = json!({ "case": worst.1, "violations": violations });
    Ok(AuditReport::new(
        AuditKind::Participation,
        worst.0,
        bound,
        Direction::AtLeast,
        cases.len() as u64,
        Some(witness),
    ))
}

/// Worst analytic welfare guarantee over `weights`: the smallest ratio for
/// multiplicative rules, the largest additive deficit `||w||_inf - w.f(w)`
/// (against `alpha ln m`) for Exponential.
pub fn approximation_audit(spec: &RuleSpec, weights: &[WeightVector]) -> Result<AuditReport> {
    if weights.is_empty() {
        return Err(Error::InvalidParameter("no weight vectors".into()));
    }
    let m = weights[0].len();
    if let RuleSpec::Exponential { alpha } = *spec {
        let mut worst = (f64::NEG_INFINITY, 0usize);
        for (idx, w) in weights.iter().enumerate() {
            let deficit = w.max() - expected_welfare(w, &evaluate_rule(spec, w))?;
            if deficit > worst.0 {
                worst = (deficit, idx);
            }
        }
        let threshold = alpha * (m as f64).ln() + 1e-12;
        return Ok(AuditReport::new(
            AuditKind::Approximation,
            worst.0,
            threshold,
            Direction::AtMost,
            weights.len() as u64,
            Some(json!({ "case": worst.1 })),
        ));
    }
    let bound = spec.ratio_bound(m).unwrap_or(0.0);
    let mut worst = (f64::INFINITY, 0usize);
    for (idx, w) in weights.iter().enumerate() {
        let ratio = approximation_ratio(w, &evaluate_rule(spec, w))?;
        if ratio < worst.0 {
            worst = (ratio, idx);
        }
    }
    Ok(AuditReport::new(
        AuditKind::Approximation,
        worst.0,
        bound - 1e-12,
        Direction::AtLeast,
        weights.len() as u64,
        Some(json!({ "case": worst.1 })),
    ))
}

/// Distinct agents verified on a truthful profile against the rule's
/// guarantee: worst case for Uniform, Power and Partial Power, mean (plus
/// three standard errors) for Exponential.
pub fn verification_audit(mech: &dyn Mechanism, profile: &ValuationProfile, trials: u64, seed: u64) -> Result<AuditReport> {
    if !profile.liar_positions().is_empty() {
        return Err(Error::InvalidProfile("verification is audited on truthful profiles only".into()));
    }
    let emp = empirical_distribution(mech, profile, trials, seed)?;
    let v = &emp.verification;
    let witness = serde_json::to_value(v)?;
    let (statistic, threshold) = match mech.rule() {
        RuleSpec::Uniform => (v.max as f64, 0.0),
        RuleSpec::Power { l } => (v.max as f64, l as f64),
        RuleSpec::PartialPower { l, r } => (v.max as f64, (r * (l + 1) + l) as f64),
        RuleSpec::Exponential { alpha } => (
            v.mean,
            profile.weight_vector(true).max() / alpha + 3.0 * v.std_dev / (trials as f64).sqrt(),
        ),
    };
    Ok(AuditReport::new(AuditKind::Verification, statistic, threshold, Direction::AtMost, trials, Some(witness)))
}

/// Rule family swept by [`tradeoff_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SweepFamily {
    /// Parameter is `l`.
    Power,
    /// Parameter is `l`, with `r` fixed.
    PartialPower { r: u32 },
    /// Parameter is `alpha`.
    Exponential,
}

impl SweepFamily {
    pub fn rule(&self, parameter: f64) -> Result<RuleSpec> {
        let as_int = || {
            if parameter >= 0.0 && parameter.fract() == 0.0 && parameter <= u32::MAX as f64 {
                Ok(parameter as u32)
            } else {
                Err(Error::InvalidParameter(format!("{parameter} is not a nonnegative integer")))
            }
        };
        let spec = match *self {
            SweepFamily::Power => RuleSpec::Power { l: as_int()? },
            SweepFamily::PartialPower { r } => RuleSpec::PartialPower { l: as_int()?, r },
            SweepFamily::Exponential => RuleSpec::Exponential { alpha: parameter },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn name(&self) -> String {
        match self {
            SweepFamily::Power => "power".into(),
            SweepFamily::PartialPower { r } => format!("partial_power(r={r})"),
            SweepFamily::Exponential => "exponential".into(),
        }
    }
}

impl FromStr for SweepFamily {
    type Err = Error;

    /// `power`, `partial_power:R` or `exponential`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split(':').collect::<Vec<_>>().as_slice() {
            ["power"] => Ok(SweepFamily::Power),
            ["exponential"] => Ok(SweepFamily::Exponential),
            ["partial_power", r] => Ok(SweepFamily::PartialPower {
                r: r.parse().map_err(|e| Error::Parse(format!("{r}: {e}")))?,
            }),
            _ => Err(Error::Parse(format!("unknown family '{s}' (power | partial_power:R | exponential)"))),
        }
    }
}

/// One grid point of a tradeoff sweep. Ratios and deficits are analytic;
/// `measured_ratio` and the verification columns come from simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub family: String,
    pub parameter: f64,
    pub ratio_bound: Option<f64>,
    pub additive_bound: Option<f64>,
    pub min_ratio: f64,
    pub mean_ratio: f64,
    pub measured_ratio: f64,
    pub max_deficit: f64,
    pub mean_null_mass: f64,
    pub mean_verified: f64,
    pub max_verified: usize,
}

/// Evaluates every grid point of `family` on every profile, simulating
/// `trials` runs per profile. Profiles must share `m` and have a nonzero
/// optimum.
pub fn tradeoff_sweep(
    family: SweepFamily,
    profiles: &[ValuationProfile],
    grid: &[f64],
    trials: u64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty parameter grid".into()));
    }
    if profiles.is_empty() {
        return Err(Error::InvalidParameter("no profiles".into()));
    }
    let m = profiles[0].m();
    if let Some(p) = profiles.iter().find(|p| p.m() != m) {
        return Err(Error::DimensionMismatch { expected: m, actual: p.m() });
    }
    let count = profiles.len() as f64;
    let mut rows = Vec::with_capacity(grid.len());
    for (g, &parameter) in grid.iter().enumerate() {
        let spec = family.rule(parameter)?;
        let mut row = SweepRow {
            family: family.name(),
            parameter,
            ratio_bound: spec.ratio_bound(m),
            additive_bound: match spec {
                RuleSpec::Exponential { alpha } => Some(alpha * (m as f64).ln()),
                _ => None,
            },
            min_ratio: f64::INFINITY,
            mean_ratio: 0.0,
            measured_ratio: 0.0,
            max_deficit: 0.0,
            mean_null_mass: 0.0,
            mean_verified: 0.0,
            max_verified: 0,
        };
        for (p, profile) in profiles.iter().enumerate() {
            let w = profile.weight_vector(true);
            let alloc = evaluate_rule(&spec, &w);
            let ratio = approximation_ratio(&w, &alloc)?;
            row.min_ratio = row.min_ratio.min(ratio);
            row.mean_ratio += ratio / count;
            row.max_deficit = row.max_deficit.max(w.max() - expected_welfare(&w, &alloc)?);
            row.mean_null_mass += alloc.null_mass / count;
            if trials > 0 {
                let stream_seed = RngStream::new(seed, g as u64).derive(p as u64).seed;
                let emp = empirical_distribution(&spec, profile, trials, stream_seed)?;
                row.measured_ratio += approximation_ratio(&w, &emp.allocation)? / count;
                row.mean_verified += emp.verification.mean / count;
                row.max_verified = row.max_verified.max(emp.verification.max);
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Facility-location mechanism selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacilityMechanism {
    Greedy,
    Proportional,
}

impl FacilityMechanism {
    pub fn run(&self, instance: &MetricInstance, oracle: &mut VerificationOracle, stream: RngStream) -> FacilityResult {
        match self {
            FacilityMechanism::Greedy => run_greedy(instance, oracle, stream),
            FacilityMechanism::Proportional => run_proportional(instance, oracle, stream),
        }
    }
}

impl FromStr for FacilityMechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(FacilityMechanism::Greedy),
            "proportional" => Ok(FacilityMechanism::Proportional),
            _ => Err(Error::Parse(format!("unknown facility mechanism '{s}' (greedy | proportional)"))),
        }
    }
}

/// Summary of many facility-location runs. Costs use true locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityEmpirical {
    pub trials: u64,
    /// Facility sets with their run counts, as `(points, count)` pairs.
    pub sets: Vec<(Vec<usize>, u64)>,
    pub mean_verified: f64,
    pub max_verified: usize,
    pub runs_catching_liars: u64,
    pub mean_max_cost: f64,
    pub worst_max_cost: f64,
    pub mean_social_cost: f64,
}

impl FacilityEmpirical {
    pub fn law(&self) -> FacilityLaw {
        let n = self.trials as f64;
        self.sets
            .iter()
            .map(|(s, c)| (s.iter().copied().collect(), *c as f64 / n))
            .collect()
    }
}

#[derive(Default)]
struct FacilityTally {
    sets: BTreeMap<BTreeSet<usize>, u64>,
    verified_sum: u64,
    verified_max: usize,
    catching: u64,
}

impl FacilityTally {
    fn merge(mut self, other: Self) -> Self {
        for (s, c) in other.sets {
            *self.sets.entry(s).or_default() += c;
        }
        self.verified_sum += other.verified_sum;
        self.verified_max = self.verified_max.max(other.verified_max);
        self.catching += other.catching;
        self
    }
}

pub fn facility_empirical(mech: FacilityMechanism, instance: &MetricInstance, trials: u64, seed: u64) -> Result<FacilityEmpirical> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let tally = (0..trials)
        .into_par_iter()
        .fold(FacilityTally::default, |mut acc, t| {
            let mut oracle = instance.oracle();
            let r = mech.run(instance, &mut oracle, RngStream::trial(seed, t));
            acc.verified_sum += r.verified.len() as u64;
            acc.verified_max = acc.verified_max.max(r.verified.len());
            acc.catching += u64::from(!r.liars_caught.is_empty());
            *acc.sets.entry(r.facilities).or_default() += 1;
            acc
        })
        .reduce(FacilityTally::default, FacilityTally::merge);
    let n = trials as f64;
    let (mut mean_max, mut worst, mut mean_social) = (0.0, 0.0f64, 0.0);
    for (set, &c) in &tally.sets {
        let cost = instance.max_cost(set);
        mean_max += cost * c as f64 / n;
        worst = worst.max(cost);
        mean_social += instance.social_cost(set) * c as f64 / n;
    }
    Ok(FacilityEmpirical {
        trials,
        sets: tally.sets.into_iter().map(|(s, c)| (s.into_iter().collect(), c)).collect(),
        mean_verified: tally.verified_sum as f64 / n,
        max_verified: tally.verified_max,
        runs_catching_liars: tally.catching,
        mean_max_cost: mean_max,
        worst_max_cost: worst,
        mean_social_cost: mean_social,
    })
}

/// TV distance between the facility-set law on `instance` and the law on the
/// instance with its liars removed, both estimated by simulation.
pub fn facility_robustness_audit(
    mech: FacilityMechanism,
    instance: &MetricInstance,
    trials: u64,
    seed: u64,
    threshold: f64,
) -> Result<AuditReport> {
    let liars = instance.liars();
    let honest = instance.without_agents(&liars);
    let with = facility_empirical(mech, instance, trials, seed)?;
    let without = facility_empirical(mech, &honest, trials, seed ^ label("facility/honest"))?;
    let tv = law_tv(&with.law(), &without.law());
    let witness = json!({ "liars": liars, "with_liars": with.sets, "liars_removed": without.sets });
    Ok(AuditReport::new(AuditKind::Robustness, tv, threshold, Direction::AtMost, trials, Some(witness)))
}
