//! Subcommands. Each returns `Ok(true)` on pass, `Ok(false)` when a check or
//! audit fails.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use verimech::analysis::{
    approximation_audit, facility_empirical, participation_audit, run_trials, summarize, tradeoff_sweep,
    verification_audit, FacilityMechanism, Mechanism, SweepFamily, DEFAULT_TRIALS, DEFAULT_TV_THRESHOLD,
};
use verimech::facility::{brute_force_kcenter, brute_force_kmedian, proportional_exact_distribution, MAX_EXACT_AGENTS, MAX_EXACT_K};
use verimech::instances::{
    apply_liars, cppp_profile, default_group_size, facility_liars, lower_bound_instance, random_coverage_cppp,
    random_distinct_instance, random_graph_instance, random_line_instance, random_profile, single_minded_instance,
    ProfileKind, DEFAULT_DELTA,
};
use verimech::io::{instance_to_json, parse_instance, parse_profile, profile_to_json, to_csv_string};
use verimech::{
    approximation_ratio, evaluate_rule, expected_welfare, robustness_audit, truthfulness_audit, AuditReport,
    LeakyMechanism, LiarSpec, MechanismResult, Mutation, RngStream, RuleSpec, ValuationProfile,
};

use crate::config;

#[derive(Debug, Parser)]
#[command(name = "verimech", version, about = "Mechanisms with selective verification: simulation and audits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form allocation, welfare and approximation ratio of a rule.
    Alloc(AllocArgs),
    /// Run a mechanism many times; per-trial CSV and a JSON summary.
    Simulate(SimulateArgs),
    /// Run one audit and print its report.
    Audit(AuditArgs),
    /// Run Greedy or Proportional on a metric instance.
    Facility(FacilityArgs),
    /// Sweep a rule family's parameter; CSV of ratio and verification.
    Tradeoff(TradeoffArgs),
    /// Generate a profile or metric instance.
    Gen(GenArgs),
}

/// Flags naming a voting rule.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RuleFlags {
    /// uniform | power | partial_power | exponential
    #[arg(long, default_value = "power")]
    pub mechanism: String,
    #[arg(long, default_value_t = 1)]
    pub l: u32,
    #[arg(long, default_value_t = 2)]
    pub r: u32,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
}

impl RuleFlags {
    fn spec(&self) -> Result<RuleSpec> {
        let spec = match self.mechanism.replace('-', "_").as_str() {
            "uniform" => RuleSpec::Uniform,
            "power" => RuleSpec::Power { l: self.l },
            "partial_power" => RuleSpec::PartialPower { l: self.l, r: self.r },
            "exponential" => RuleSpec::Exponential { alpha: self.alpha },
            other => bail!("unknown mechanism '{other}' (uniform | power | partial_power | exponential)"),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CommonFlags {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for trials. Results do not depend on it.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// JSON object overriding any flag of this command.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AllocArgs {
    /// Profile JSON file, `-` for stdin.
    #[arg(long)]
    pub profile: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub rule: RuleFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonFlags,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    /// Also write the per-trial CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub rule: RuleFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditChoice {
    Robustness,
    Truthfulness,
    Participation,
    Approximation,
    Verification,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AuditArgs {
    #[arg(value_enum)]
    pub kind: AuditChoice,
    #[arg(long)]
    pub profile: PathBuf,
    /// Defaults: 200000 (robustness), 100000 (truthfulness), 10000 (verification).
    #[arg(long)]
    pub trials: Option<u64>,
    /// TV threshold for robustness audits.
    #[arg(long, default_value_t = DEFAULT_TV_THRESHOLD)]
    pub threshold: f64,
    /// Agent position for truthfulness audits.
    #[arg(long, default_value_t = 0)]
    pub agent: usize,
    /// Lie for truthfulness audits: scale:C | swap:A:B | constant:V.
    #[arg(long, default_value = "scale:2")]
    pub lie: String,
    /// Audit the control that samples on reported values without verifying.
    #[arg(long, default_value_t = false)]
    pub leaky: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub rule: RuleFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonFlags,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FacilityArgs {
    /// greedy | proportional
    #[arg(long, default_value = "greedy")]
    pub mechanism: String,
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonFlags,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TradeoffArgs {
    /// power | partial_power:R | exponential
    #[arg(long, default_value = "power")]
    pub family: String,
    /// `a:b` (integer steps), `a:b:step` or a comma list.
    #[arg(long, default_value = "0:20")]
    pub grid: String,
    /// Profiles to sweep over; random uniform profiles when absent.
    #[arg(long)]
    pub profile: Vec<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    /// Simulated runs per profile and grid point.
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    LowerBound,
    SingleMinded,
    Random,
    Cppp,
    Line,
    Graph,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub generator: Generator,
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Facilities (line, graph) or project size (cppp).
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 8)]
    pub points: usize,
    /// Agents per outcome in the lower-bound family (default ceil(log2 m / 0.1)).
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, default_value_t = 1e6)]
    pub big: f64,
    /// uniform | sparse:P | spiked:J
    #[arg(long, default_value = "uniform")]
    pub profile_kind: String,
    #[arg(long, default_value_t = 6)]
    pub resources: usize,
    /// Comma-separated liar positions.
    #[arg(long)]
    pub liars: Option<String>,
    /// Lie applied to profile liars: scale:C | swap:A:B | constant:V.
    #[arg(long, default_value = "scale:2")]
    pub lie: String,
    /// Place agents at distinct points.
    #[arg(long, default_value_t = false)]
    pub distinct: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonFlags,
}

pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Alloc(a) => {
            let cfg = a.common.config.clone();
            alloc(config::apply(a, cfg.as_deref())?)
        }
        Command::Simulate(a) => {
            let cfg = a.common.config.clone();
            simulate(config::apply(a, cfg.as_deref())?)
        }
        Command::Audit(a) => {
            let cfg = a.common.config.clone();
            audit(config::apply(a, cfg.as_deref())?)
        }
        Command::Facility(a) => {
            let cfg = a.common.config.clone();
            facility(config::apply(a, cfg.as_deref())?)
        }
        Command::Tradeoff(a) => {
            let cfg = a.common.config.clone();
            tradeoff(config::apply(a, cfg.as_deref())?)
        }
        Command::Gen(a) => {
            let cfg = a.common.config.clone();
            generate(config::apply(a, cfg.as_deref())?)
        }
    }
}

fn setup(common: &CommonFlags) -> Result<()> {
    if let Some(threads) = common.parallel {
        if threads == 0 {
            bail!("--parallel needs at least one worker");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("starting worker pool")?;
    }
    Ok(())
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_profile(path: &Path) -> Result<ValuationProfile> {
    parse_profile(&read_input(path)?).with_context(|| format!("loading profile {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn alloc(a: AllocArgs) -> Result<bool> {
    setup(&a.common)?;
    let spec = a.rule.spec()?;
    let profile = load_profile(&a.profile)?;
    let w = profile.weight_vector(false);
    let allocation = evaluate_rule(&spec, &w);
    let report = json!({
        "rule": spec,
        "allocation": allocation,
        "welfare": expected_welfare(&w, &allocation)?,
        "ratio": approximation_ratio(&w, &allocation).ok(),
        "ratio_bound": spec.ratio_bound(w.len()),
    });
    emit(&pretty(&report)?, a.common.out.as_deref())?;
    Ok(true)
}

#[derive(Serialize)]
struct TrialRow {
    trial: u64,
    outcome: Option<usize>,
    null: bool,
    bot_resolved: bool,
    verified: String,
    liars_caught: String,
    depth: usize,
}

fn join(ids: impl IntoIterator<Item = usize>) -> String {
    ids.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

/// Bookkeeping checks every run must satisfy.
fn consistency_checks(spec: &RuleSpec, profile: &ValuationProfile, runs: &[MechanismResult]) -> Vec<(String, bool)> {
    let liar_ids: Vec<usize> = profile.liar_positions().iter().map(|&p| profile.id(p)).collect();
    let mut checks = vec![
        (
            "caught liars were verified".to_string(),
            runs.iter().all(|r| r.liars_caught.is_subset(&r.verified)),
        ),
        (
            "only liars are caught".to_string(),
            runs.iter().all(|r| r.liars_caught.iter().all(|id| liar_ids.contains(id))),
        ),
        (
            "one oracle call per verified agent".to_string(),
            runs.iter().all(|r| r.oracle_calls == r.verified.len()),
        ),
    ];
    if liar_ids.is_empty() {
        let bound = match *spec {
            RuleSpec::Uniform => Some(0),
            RuleSpec::Power { l } => Some(l as usize),
            RuleSpec::PartialPower { l, r } => Some((r * (l + 1) + l) as usize),
            RuleSpec::Exponential { .. } => None,
        };
        checks.push(("truthful runs never hit the bot action".into(), runs.iter().all(|r| !r.bot_resolved)));
        if let Some(b) = bound {
            checks.push((format!("truthful runs verify at most {b} agents"), runs.iter().all(|r| r.verified.len() <= b)));
        }
    }
    checks
}

fn simulate(a: SimulateArgs) -> Result<bool> {
    setup(&a.common)?;
    let spec = a.rule.spec()?;
    let profile = load_profile(&a.profile)?;
    if a.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let runs = run_trials(&spec, &profile, a.trials, a.common.seed)?;
    let summary = summarize(profile.m(), &runs)?;
    if let Some(path) = &a.csv {
        let rows: Vec<TrialRow> = runs
            .iter()
            .enumerate()
            .map(|(t, r)| TrialRow {
                trial: t as u64,
                outcome: r.outcome.index(),
                null: r.outcome.index().is_none(),
                bot_resolved: r.bot_resolved,
                verified: join(r.verified.iter().copied()),
                liars_caught: join(r.liars_caught.iter().copied()),
                depth: r.recursion_depth,
            })
            .collect();
        fs::write(path, to_csv_string(&rows)?).with_context(|| format!("writing {}", path.display()))?;
    }
    let checks = consistency_checks(&spec, &profile, &runs);
    let pass = checks.iter().all(|(_, ok)| *ok);
    let report = json!({
        "mechanism": spec,
        "seed": a.common.seed,
        "summary": summary,
        "closed_form": evaluate_rule(&spec, &profile.truthful_weight_vector()),
        "checks": checks.iter().map(|(name, ok)| json!({"check": name, "pass": ok})).collect::<Vec<_>>(),
        "pass": pass,
    });
    emit(&pretty(&report)?, a.common.out.as_deref())?;
    Ok(pass)
}

fn audit(a: AuditArgs) -> Result<bool> {
    setup(&a.common)?;
    let spec = a.rule.spec()?;
    let profile = load_profile(&a.profile)?;
    let leaky = LeakyMechanism(spec);
    let mech: &dyn Mechanism = if a.leaky { &leaky } else { &spec };
    let seed = a.common.seed;
    let report: AuditReport = match a.kind {
        AuditChoice::Robustness => robustness_audit(mech, &profile, a.trials.unwrap_or(DEFAULT_TRIALS), seed, a.threshold)?,
        AuditChoice::Truthfulness => {
            let lie: Mutation = a.lie.parse()?;
            truthfulness_audit(mech, &profile, a.agent, &lie, a.trials.unwrap_or(100_000), seed)?
        }
        AuditChoice::Participation => {
            let cases: Vec<_> = (0..profile.n()).map(|i| (profile.clone(), i)).collect();
            participation_audit(&spec, &cases)?
        }
        AuditChoice::Approximation => approximation_audit(&spec, &[profile.weight_vector(true)])?,
        AuditChoice::Verification => verification_audit(mech, &profile, a.trials.unwrap_or(10_000), seed)?,
    };
    emit(&pretty(&report)?, a.common.out.as_deref())?;
    Ok(report.pass)
}

fn facility(a: FacilityArgs) -> Result<bool> {
    setup(&a.common)?;
    let mech: FacilityMechanism = a.mechanism.parse()?;
    let text = read_input(&a.instance)?;
    let instance = parse_instance(&text).with_context(|| format!("loading instance {}", a.instance.display()))?;
    let emp = facility_empirical(mech, &instance, a.trials, a.common.seed)?;
    let (objective, opt) = match mech {
        FacilityMechanism::Greedy => ("max_cost", brute_force_kcenter(instance.agents_true(), instance.k(), instance.dist_matrix())),
        FacilityMechanism::Proportional => {
            ("social_cost", brute_force_kmedian(instance.agents_true(), instance.k(), instance.dist_matrix()))
        }
    };
    let opt = opt.ok();
    let mean_cost = match mech {
        FacilityMechanism::Greedy => emp.mean_max_cost,
        FacilityMechanism::Proportional => emp.mean_social_cost,
    };
    let ratio = opt.as_ref().filter(|(_, c)| *c > 0.0).map(|(_, c)| mean_cost / c);
    let small = instance.n() <= MAX_EXACT_AGENTS && instance.k() <= MAX_EXACT_K;
    let exact = if mech == FacilityMechanism::Proportional && small {
        Some(
            proportional_exact_distribution(&instance)?
                .into_iter()
                .map(|(set, p)| json!({"facilities": set, "prob": p}))
                .collect::<Vec<Value>>(),
        )
    } else {
        None
    };
    let mut checks = Vec::new();
    if instance.liars().is_empty() {
        let expected = instance.k().min(instance.n());
        if mech == FacilityMechanism::Greedy {
            checks.push(json!({"check": format!("verifies exactly {expected} agents"), "pass": emp.max_verified == expected && emp.mean_verified == expected as f64}));
            if let Some((_, c)) = &opt {
                checks.push(json!({"check": "max cost at most twice the optimum", "pass": emp.worst_max_cost <= 2.0 * c + 1e-9}));
            }
        } else {
            checks.push(json!({"check": format!("verifies at most {expected} agents"), "pass": emp.max_verified <= expected}));
        }
    }
    let pass = checks.iter().all(|c| c["pass"] == Value::Bool(true));
    let report = json!({
        "mechanism": mech,
        "seed": a.common.seed,
        "empirical": emp,
        "objective": objective,
        "opt": opt.as_ref().map(|(set, c)| json!({"facilities": set, "cost": c})),
        "mean_cost_ratio": ratio,
        "exact_law": exact,
        "checks": checks,
        "pass": pass,
    });
    emit(&pretty(&report)?, a.common.out.as_deref())?;
    Ok(pass)
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| s.trim().parse::<f64>().with_context(|| format!("bad grid value '{s}'"));
    let parts: Vec<&str> = text.split(':').collect();
    let grid = match parts.as_slice() {
        [single] => single.split(',').map(num).collect::<Result<Vec<_>>>()?,
        [a, b] | [a, b, _] => {
            let (start, end) = (num(a)?, num(b)?);
            let step = if parts.len() == 3 { num(parts[2])? } else { 1.0 };
            if step.is_nan() || step <= 0.0 || end < start {
                bail!("grid '{text}' is empty or has a nonpositive step");
            }
            let count = ((end - start) / step + 1e-9).floor() as usize + 1;
            (0..count).map(|i| start + step * i as f64).collect()
        }
        _ => bail!("bad grid '{text}'"),
    };
    if grid.is_empty() {
        bail!("empty grid");
    }
    Ok(grid)
}

fn tradeoff(a: TradeoffArgs) -> Result<bool> {
    setup(&a.common)?;
    let family: SweepFamily = a.family.parse()?;
    let grid = parse_grid(&a.grid)?;
    let profiles = if a.profile.is_empty() {
        let mut rng = RngStream::new(a.common.seed, 0).derive_named("tradeoff/profiles").rng();
        (0..a.count)
            .map(|_| random_profile(a.n, a.m, ProfileKind::Uniform01, &mut rng))
            .collect::<verimech::Result<Vec<_>>>()?
    } else {
        a.profile.iter().map(|p| load_profile(p)).collect::<Result<Vec<_>>>()?
    };
    let rows = tradeoff_sweep(family, &profiles, &grid, a.trials, a.common.seed)?;
    emit(&to_csv_string(&rows)?, a.common.out.as_deref())?;
    Ok(true)
}

fn generate(a: GenArgs) -> Result<bool> {
    setup(&a.common)?;
    let mut rng = RngStream::new(a.common.seed, 0).derive_named("gen").rng();
    let liars: Vec<usize> = match &a.liars {
        Some(s) if !s.trim().is_empty() => s
            .split(',')
            .map(|x| x.trim().parse::<usize>().with_context(|| format!("bad liar position '{x}'")))
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    let with_liars = |p: ValuationProfile| -> Result<ValuationProfile> {
        if liars.is_empty() {
            return Ok(p);
        }
        let mutation: Mutation = a.lie.parse()?;
        Ok(apply_liars(&p, &LiarSpec { agents: liars.clone(), mutation })?)
    };
    let text = match a.generator {
        Generator::LowerBound => {
            let size = a.group_size.unwrap_or_else(|| default_group_size(a.m));
            profile_to_json(&with_liars(lower_bound_instance(a.m, size, a.delta, &mut rng)?.profile)?)?
        }
        Generator::SingleMinded => profile_to_json(&with_liars(single_minded_instance(a.m, a.big)?)?)?,
        Generator::Random => {
            let kind: ProfileKind = a.profile_kind.parse()?;
            profile_to_json(&with_liars(random_profile(a.n, a.m, kind, &mut rng)?)?)?
        }
        Generator::Cppp => {
            let spec = random_coverage_cppp(a.resources, a.k, a.n, &mut rng)?;
            profile_to_json(&with_liars(cppp_profile(&spec)?.0)?)?
        }
        Generator::Line | Generator::Graph => {
            let line = a.generator == Generator::Line;
            let inst = if a.distinct {
                random_distinct_instance(a.points, a.n, a.k, line, &mut rng)?
            } else if line {
                random_line_instance(a.points, a.n, a.k, &mut rng)?
            } else {
                random_graph_instance(a.points, a.n, a.k, &mut rng)?
            };
            let inst = if liars.is_empty() { inst } else { facility_liars(&inst, &liars, &mut rng)? };
            instance_to_json(&inst)?
        }
    };
    emit(&text, a.common.out.as_deref())?;
    Ok(true)
}
