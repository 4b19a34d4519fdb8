//! Randomized mechanisms with selective verification for utilitarian voting.
//!
//! Each mechanism samples a term of an expansion of its allocation rule,
//! verifies only the agents appearing in that term, and either recurses on
//! the profile without the caught liars (Power, Exponential) or corrects the
//! distribution through a bot action that verifies everybody (Partial Power).

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::allocations::{partial_power_allocation, RuleSpec};
use crate::error::{Error, Result};
use crate::oracle::VerificationOracle;
use crate::rng::RngStream;
use crate::types::{AgentId, Outcome, ValuationProfile, WeightVector};

/// What a single run of a mechanism produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MechanismResult {
    pub outcome: Outcome,
    /// The outcome was drawn by the bot correction of Partial Power.
    pub bot_resolved: bool,
    /// Distinct agents queried.
    pub verified: BTreeSet<AgentId>,
    /// Verified agents whose report was false. Always a subset of `verified`.
    pub liars_caught: BTreeSet<AgentId>,
    pub recursion_depth: usize,
    pub oracle_calls: usize,
    /// Distinct agents queried before a bot action verified everybody.
    pub verified_before_bot: usize,
}

/// Flat, serialisable view of a [`MechanismResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub outcome: Option<usize>,
    pub null: bool,
    pub bot_resolved: bool,
    pub verified: Vec<AgentId>,
    pub liars_caught: Vec<AgentId>,
    pub depth: usize,
}

impl From<&MechanismResult> for ResultRecord {
    fn from(r: &MechanismResult) -> Self {
        Self {
            outcome: r.outcome.index(),
            null: r.outcome == Outcome::Null,
            bot_resolved: r.bot_resolved,
            verified: r.verified.iter().copied().collect(),
            liars_caught: r.liars_caught.iter().copied().collect(),
            depth: r.recursion_depth,
        }
    }
}

/// Oracle front-end that asks about each agent at most once per run.
struct Verifier<'a> {
    oracle: &'a mut VerificationOracle,
    known: BTreeMap<AgentId, bool>,
}

impl<'a> Verifier<'a> {
    fn new(oracle: &'a mut VerificationOracle) -> Self {
        Self {
            oracle,
            known: BTreeMap::new(),
        }
    }

    fn check(&mut self, id: AgentId) -> bool {
        if let Some(&s) = self.known.get(&id) {
            return s;
        }
        let s = self.oracle.ver(id);
        self.known.insert(id, s);
        s
    }

    /// Verifies the distinct agents at `positions` and returns the positions
    /// of liars among them.
    fn liars_among(&mut self, profile: &ValuationProfile, positions: &[usize]) -> Vec<usize> {
        let distinct: BTreeSet<usize> = positions.iter().copied().collect();
        distinct
            .into_iter()
            .filter(|&p| !self.check(profile.id(p)))
            .collect()
    }

    fn count(&self) -> usize {
        self.known.len()
    }

    fn finish(self, outcome: Outcome, depth: usize, bot: Option<usize>) -> MechanismResult {
        let verified: BTreeSet<AgentId> = self.known.keys().copied().collect();
        let liars_caught = self
            .known
            .iter()
            .filter(|(_, &s)| !s)
            .map(|(&id, _)| id)
            .collect();
        MechanismResult {
            outcome,
            bot_resolved: bot.is_some(),
            oracle_calls: verified.len(),
            verified_before_bot: bot.unwrap_or(verified.len()),
            verified,
            liars_caught,
            recursion_depth: depth,
        }
    }
}

/// An outcome together with the tuple of agent positions that "pays" for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub outcome: usize,
    pub tuple: Vec<usize>,
}

fn column(profile: &ValuationProfile, j: usize) -> Vec<f64> {
    profile.reported().iter().map(|row| row[j]).collect()
}

/// Draws `len` agent positions independently, each proportional to `x_i(j)`.
fn draw_tuple<R: Rng + ?Sized>(profile: &ValuationProfile, j: usize, len: usize, rng: &mut R) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let dist = WeightedIndex::new(column(profile, j)).expect("chosen outcome has positive weight");
    (0..len).map(|_| dist.sample(rng)).collect()
}

fn scaled_powers(w: &WeightVector, exponent: u32) -> Option<Vec<f64>> {
    let max = w.max();
    if max == 0.0 {
        return None;
    }
    let p: Vec<f64> = w.as_slice().iter().map(|v| (v / max).powi(exponent as i32)).collect();
    p.iter().any(|&v| v > 0.0).then_some(p)
}

/// Draws `(j, t)` with probability `x_{t_1}(j) ... x_{t_l}(j) / |w^l|` from the
/// reported valuations: `j` proportional to `w_j^l`, then each tuple position
/// proportional to `x_i(j) / w_j`. With `l = 0` the tuple is empty and `j` is
/// uniform.
pub fn sample_power_term<R: Rng + ?Sized>(profile: &ValuationProfile, l: u32, rng: &mut R) -> Result<Term> {
    let m = profile.m();
    if l == 0 {
        return Ok(Term {
            outcome: rng.random_range(0..m),
            tuple: Vec::new(),
        });
    }
    let weights = scaled_powers(&profile.weight_vector(false), l)
        .ok_or_else(|| Error::Degenerate("all reported weights are zero".into()))?;
    let j = WeightedIndex::new(&weights).expect("positive weights").sample(rng);
    Ok(Term {
        outcome: j,
        tuple: draw_tuple(profile, j, l as usize, rng),
    })
}

/// Draws `(j, l, t)` from the expansion of `exp(w_j/alpha)`: `j` proportional to
/// `exp(w_j/alpha)`, then `l ~ Poisson(w_j/alpha)`, then the tuple as in
/// [`sample_power_term`]. The tuple length is `term.tuple.len()`.
pub fn sample_exponential_term<R: Rng + ?Sized>(profile: &ValuationProfile, alpha: f64, rng: &mut R) -> Term {
    assert!(alpha > 0.0, "alpha must be positive");
    let w = profile.weight_vector(false);
    let max = w.max();
    let weights: Vec<f64> = w.as_slice().iter().map(|v| ((v - max) / alpha).exp()).collect();
    let j = WeightedIndex::new(&weights).expect("exponential weights are positive").sample(rng);
    let lambda = w.as_slice()[j] / alpha;
    let len = if lambda > 0.0 {
        let draw: f64 = Poisson::new(lambda).expect("finite positive rate").sample(rng);
        draw as usize
    } else {
        0
    };
    Term {
        outcome: j,
        tuple: draw_tuple(profile, j, len, rng),
    }
}

/// Shared loop of the recursive mechanisms: sample a term, verify its agents,
/// drop caught liars and start over on a fresh sub-stream.
fn run_recursive<F>(profile: &ValuationProfile, oracle: &mut VerificationOracle, stream: RngStream, mut sample: F) -> MechanismResult
where
    F: FnMut(&ValuationProfile, &mut rand_chacha::ChaCha8Rng) -> Option<Term>,
{
    let m = profile.m();
    let mut verifier = Verifier::new(oracle);
    let mut current = profile.clone();
    let mut depth = 0;
    loop {
        let mut rng = stream.derive(depth as u64).rng();
        let Some(term) = sample(&current, &mut rng) else {
            // Nothing left to weigh: constant uniform rule, no verification.
            let j = rng.random_range(0..m);
            return verifier.finish(Outcome::Alt(j), depth, None);
        };
        let liars = verifier.liars_among(&current, &term.tuple);
        if liars.is_empty() {
            return verifier.finish(Outcome::Alt(term.outcome), depth, None);
        }
        current = current.exclude(&liars).expect("positions come from the profile");
        depth += 1;
    }
}

/// The Power mechanism with parameter `l`.
pub fn run_power(profile: &ValuationProfile, oracle: &mut VerificationOracle, l: u32, stream: RngStream) -> MechanismResult {
    run_recursive(profile, oracle, stream, |p, rng| sample_power_term(p, l, rng).ok())
}

/// The Exponential mechanism with parameter `alpha > 0`.
pub fn run_exponential(profile: &ValuationProfile, oracle: &mut VerificationOracle, alpha: f64, stream: RngStream) -> MechanismResult {
    assert!(alpha > 0.0, "alpha must be positive");
    run_recursive(profile, oracle, stream, |p, rng| Some(sample_exponential_term(p, alpha, rng)))
}

/// Correction probabilities used when Partial Power lands in its bot action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotCorrection {
    /// `p_j` for every outcome.
    pub p: Vec<f64>,
    pub p_null: f64,
    /// `Pr[bot]`.
    pub pr_bot: f64,
    /// `Pr[outcome j and no bot]`.
    pub pr_outcome_no_bot: Vec<f64>,
    /// `Pr[null and no bot]`.
    pub pr_null_no_bot: f64,
}

/// Exact bot-action probabilities for Partial Power run on reports with total
/// weight `w_full` when the truthful agents carry `w_truthful`.
///
/// With `rho = |w_T^{l+1}| / |w^{l+1}|` the no-bot probabilities are
/// `rho^r (1-1/r) m^{-1/(l+1)} w_T(j)^l / ||w^l||_{1+1/l}` for outcome `j`
/// and `rho^r (1 - |f(w)|)` for null; `p_j` tops outcome `j` up to
/// `f_j(w_T)`. Differences are formed in closed form to avoid cancellation.
pub fn bot_probabilities(w_full: &WeightVector, w_truthful: &WeightVector, l: u32, r: u32) -> Result<BotCorrection> {
    if l == 0 || r == 0 {
        return Err(Error::InvalidParameter(format!("need l, r >= 1, got l={l}, r={r}")));
    }
    let m = w_full.len();
    if w_truthful.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: w_truthful.len(),
        });
    }
    let (w, wt) = (w_full.as_slice(), w_truthful.as_slice());
    let max = w_full.max();
    if w.iter().zip(wt).any(|(a, b)| *b > *a * (1.0 + 1e-12) + 1e-300) {
        return Err(Error::InvalidParameter("truthful weights exceed full weights".into()));
    }
    if w == wt {
        return Err(Error::BotUnreachable);
    }
    let s: Vec<f64> = w.iter().map(|v| v / max).collect();
    let t: Vec<f64> = wt.iter().map(|v| (v / max).min(1.0)).collect();
    let li = l as i32;
    let lf = l as f64;
    let rf = r as f64;

    let s_full: f64 = s.iter().map(|v| v.powi(li + 1)).sum();
    let s_gap: f64 = s.iter().zip(&t).map(|(a, b)| (a.powi(li + 1) - b.powi(li + 1)).max(0.0)).sum();
    let ln_rho = (-(s_gap / s_full).min(1.0)).ln_1p();
    let rho_r = (rf * ln_rho).exp();
    let norm_full = s_full.powf(lf / (lf + 1.0));
    let c = (1.0 - 1.0 / rf) * (m as f64).powf(-1.0 / (lf + 1.0));

    let pr_outcome_no_bot: Vec<f64> = t.iter().map(|v| rho_r * c * v.powi(li) / norm_full).collect();
    let mass_full = c * s.iter().map(|v| v.powi(li)).sum::<f64>() / norm_full;
    let pr_null_no_bot = rho_r * (1.0 - mass_full).max(0.0);
    let missing: f64 = s.iter().zip(&t).map(|(a, b)| (a.powi(li) - b.powi(li)).max(0.0)).sum();
    let pr_bot = -(rf * ln_rho).exp_m1() + rho_r * c * missing / norm_full;
    if pr_bot <= 0.0 {
        return Err(Error::BotUnreachable);
    }

    let f_t = partial_power_allocation(w_truthful, l, r);
    let shortfall = -((rf + lf / (lf + 1.0)) * ln_rho).exp_m1();
    let p: Vec<f64> = f_t.probs.iter().map(|fj| fj * shortfall / pr_bot).collect();
    let p_null = 1.0 - p.iter().sum::<f64>();
    debug_assert!(p.iter().all(|&v| v >= -1e-9) && p_null >= -1e-9, "infeasible bot correction");
    Ok(BotCorrection {
        p,
        p_null,
        pr_bot,
        pr_outcome_no_bot,
        pr_null_no_bot,
    })
}

/// The Partial Power mechanism with parameters `l, r >= 1`.
///
/// Stage A verifies `r` tuples of length `l+1`; stage B returns null with
/// probability `1 - |f(w)|`, otherwise samples a Power term of length `l`.
/// A caught liar in either stage triggers the bot action: every agent is
/// verified and the outcome is drawn from [`bot_probabilities`].
pub fn run_partial_power(profile: &ValuationProfile, oracle: &mut VerificationOracle, l: u32, r: u32, stream: RngStream) -> MechanismResult {
    assert!(l >= 1 && r >= 1, "partial power needs l, r >= 1");
    let mut verifier = Verifier::new(oracle);
    let w = profile.weight_vector(false);
    let Some(stage_a) = scaled_powers(&w, l + 1) else {
        return verifier.finish(Outcome::Null, 0, None);
    };
    let mut rng = stream.derive(0).rng();

    let outcome_dist = WeightedIndex::new(&stage_a).expect("positive weights");
    let mut positions = Vec::with_capacity(r as usize * (l as usize + 1));
    for _ in 0..r {
        let j = outcome_dist.sample(&mut rng);
        positions.extend(draw_tuple(profile, j, l as usize + 1, &mut rng));
    }
    let mut caught = !verifier.liars_among(profile, &positions).is_empty();

    if !caught {
        let mass = partial_power_allocation(&w, l, r).mass();
        if rng.random::<f64>() >= mass {
            return verifier.finish(Outcome::Null, 0, None);
        }
        let term = sample_power_term(profile, l, &mut rng).expect("weights are nonzero");
        if verifier.liars_among(profile, &term.tuple).is_empty() {
            return verifier.finish(Outcome::Alt(term.outcome), 0, None);
        }
        caught = true;
    }
    debug_assert!(caught);

    let before = verifier.count();
    let everyone: Vec<usize> = (0..profile.n()).collect();
    let liars = verifier.liars_among(profile, &everyone);
    let w_t = profile.exclude(&liars).expect("positions in range").weight_vector(false);
    let mut rng = stream.derive(1).rng();
    let weights: Vec<f64> = match bot_probabilities(&w, &w_t, l, r) {
        Ok(bc) => bc.p.iter().chain(std::iter::once(&bc.p_null)).map(|v| v.max(0.0)).collect(),
        // Pr[bot] underflowed: the target law itself is the only consistent draw.
        Err(_) => {
            let f = partial_power_allocation(&w_t, l, r);
            f.probs.iter().chain(std::iter::once(&f.null_mass)).copied().collect()
        }
    };
    let k = WeightedIndex::new(&weights).expect("correction is a distribution").sample(&mut rng);
    let outcome = if k == profile.m() { Outcome::Null } else { Outcome::Alt(k) };
    verifier.finish(outcome, 0, Some(before))
}

/// Runs the mechanism that implements `spec`. Uniform verifies nobody.
pub fn run_rule_mechanism(
    spec: &RuleSpec,
    profile: &ValuationProfile,
    oracle: &mut VerificationOracle,
    stream: RngStream,
) -> Result<MechanismResult> {
    spec.validate()?;
    Ok(match *spec {
        RuleSpec::Uniform => {
            let j = stream.derive(0).rng().random_range(0..profile.m());
            Verifier::new(oracle).finish(Outcome::Alt(j), 0, None)
        }
        RuleSpec::Power { l } => run_power(profile, oracle, l, stream),
        RuleSpec::PartialPower { l, r } => run_partial_power(profile, oracle, l, r, stream),
        RuleSpec::Exponential { alpha } => run_exponential(profile, oracle, alpha, stream),
    })
}
