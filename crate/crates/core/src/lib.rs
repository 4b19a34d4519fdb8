//! Mechanisms without money that verify only a few agents.
//!
//! The crate implements the Power, Partial Power and Exponential mechanisms for
//! utilitarian voting and the Greedy and Proportional mechanisms for
//! k-Facility Location, each run against a simulated verification oracle. It
//! also provides the closed-form allocation rules these mechanisms induce,
//! generators for hard and random instances, and auditors that check
//! robustness, participation, truthfulness, approximation and verification
//! cost either analytically or by Monte Carlo.

pub mod allocations;
pub mod analysis;
pub mod error;
pub mod facility;
pub mod instances;
pub mod io;
pub mod mechanisms;
pub mod oracle;
pub mod rng;
pub mod types;

pub use allocations::{
    approximation_ratio, evaluate_rule, expected_welfare, exponential_allocation, midr_extremality_check,
    partial_power_allocation, participation_margin, power_allocation, MidrReport, RuleSpec,
};
pub use analysis::{
    empirical_distribution, robustness_audit, truthfulness_audit, AuditKind, AuditReport, Empirical, LeakyMechanism,
    Mechanism,
};
pub use error::{Error, Result};
pub use facility::{run_greedy, run_proportional, FacilityResult, MetricInstance};
pub use instances::{LiarSpec, Mutation};
pub use mechanisms::{
    bot_probabilities, run_exponential, run_partial_power, run_power, run_rule_mechanism, BotCorrection,
    MechanismResult, ResultRecord,
};
pub use oracle::VerificationOracle;
pub use rng::RngStream;
pub use types::{tv_distance, AgentId, Allocation, Outcome, ValuationProfile, WeightVector};
