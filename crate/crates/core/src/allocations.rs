//! Closed-form allocation rules induced by the mechanisms on truthful input,
//! and analytic calculators for their properties.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Allocation, ValuationProfile, WeightVector};

/// An allocation rule and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleSpec {
    Uniform,
    /// Probability proportional to `w_j^l`.
    Power { l: u32 },
    /// Welfare maximiser over the `(l+1)/l`-norm ball of radius
    /// `(1 - 1/r) m^{-1/(l+1)}`; leftover mass goes to null.
    PartialPower { l: u32, r: u32 },
    /// Probability proportional to `exp(w_j / alpha)`.
    Exponential { alpha: f64 },
}

impl RuleSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RuleSpec::PartialPower { l, r } if l == 0 || r == 0 => Err(Error::InvalidParameter(
                format!("partial power needs l >= 1 and r >= 1, got l={l}, r={r}"),
            )),
            RuleSpec::Exponential { alpha } if !(alpha > 0.0 && alpha.is_finite()) => Err(
                Error::InvalidParameter(format!("exponential needs alpha > 0, got {alpha}")),
            ),
            _ => Ok(()),
        }
    }

    /// Guaranteed multiplicative approximation ratio, where one exists.
    pub fn ratio_bound(&self, m: usize) -> Option<f64> {
        let m = m as f64;
        match *self {
            RuleSpec::Uniform => Some(1.0 / m),
            RuleSpec::Power { l } => Some(m.powf(-1.0 / (l as f64 + 1.0))),
            RuleSpec::PartialPower { l, r } => {
                Some((1.0 - 1.0 / r as f64) * m.powf(-1.0 / (l as f64 + 1.0)))
            }
            RuleSpec::Exponential { .. } => None,
        }
    }

    /// Guaranteed participation factor `eps`: `x_i . f(x) >= eps x_i . f(x_{-i})`.
    pub fn participation_bound(&self, m: usize) -> f64 {
        match *self {
            RuleSpec::Power { l } => (m as f64).powf(-1.0 / (l as f64 + 1.0)),
            _ => 1.0,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            RuleSpec::Uniform => "uniform".into(),
            RuleSpec::Power { l } => format!("power(l={l})"),
            RuleSpec::PartialPower { l, r } => format!("partial_power(l={l},r={r})"),
            RuleSpec::Exponential { alpha } => format!("exponential(alpha={alpha})"),
        }
    }
}

fn scaled(w: &WeightVector) -> Option<Vec<f64>> {
    let max = w.max();
    (max > 0.0).then(|| w.as_slice().iter().map(|v| v / max).collect())
}

/// `w_j^l / sum_q w_q^l`. Uniform when `l = 0` or when every weight is zero.
pub fn power_allocation(w: &WeightVector, l: u32) -> Allocation {
    let m = w.len();
    let Some(s) = scaled(w) else {
        return Allocation::uniform(m);
    };
    let pw: Vec<f64> = s.iter().map(|v| v.powi(l as i32)).collect();
    let total: f64 = pw.iter().sum();
    Allocation::from_parts_unchecked(pw.into_iter().map(|v| v / total).collect(), 0.0)
}

/// `f^{(l,r)}(w) = (1 - 1/r) w^l / (m^{1/(l+1)} ||w^l||_{1+1/l})`, with the
/// remaining mass on null. The zero vector maps to all-null.
pub fn partial_power_allocation(w: &WeightVector, l: u32, r: u32) -> Allocation {
    assert!(l >= 1 && r >= 1, "partial power needs l, r >= 1");
    let m = w.len();
    let Some(s) = scaled(w) else {
        return Allocation::all_null(m);
    };
    let lf = l as f64;
    let c = (1.0 - 1.0 / r as f64) * (m as f64).powf(-1.0 / (lf + 1.0));
    let pw: Vec<f64> = s.iter().map(|v| v.powi(l as i32)).collect();
    let norm = s.iter().map(|v| v.powi(l as i32 + 1)).sum::<f64>().powf(lf / (lf + 1.0));
    let probs: Vec<f64> = pw.iter().map(|v| c * v / norm).collect();
    let null = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    Allocation::from_parts_unchecked(probs, null)
}

/// `exp(w_j/alpha) / sum_q exp(w_q/alpha)`, evaluated with a max shift.
pub fn exponential_allocation(w: &WeightVector, alpha: f64) -> Allocation {
    assert!(alpha > 0.0, "alpha must be positive");
    let max = w.max();
    let e: Vec<f64> = w.as_slice().iter().map(|v| ((v - max) / alpha).exp()).collect();
    let total: f64 = e.iter().sum();
    Allocation::from_parts_unchecked(e.into_iter().map(|v| v / total).collect(), 0.0)
}

pub fn evaluate_rule(spec: &RuleSpec, w: &WeightVector) -> Allocation {
    match *spec {
        RuleSpec::Uniform => Allocation::uniform(w.len()),
        RuleSpec::Power { l } => power_allocation(w, l),
        RuleSpec::PartialPower { l, r } => partial_power_allocation(w, l, r),
        RuleSpec::Exponential { alpha } => exponential_allocation(w, alpha),
    }
}

/// `w . f`; the null outcome contributes nothing.
pub fn expected_welfare(w: &WeightVector, a: &Allocation) -> Result<f64> {
    if w.len() != a.m() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            actual: a.m(),
        });
    }
    Ok(w.dot(&a.probs))
}

/// Expected welfare over the optimum `||w||_inf`.
pub fn approximation_ratio(w: &WeightVector, a: &Allocation) -> Result<f64> {
    let opt = w.max();
    if opt <= 0.0 {
        return Err(Error::ZeroOptimum);
    }
    Ok(expected_welfare(w, a)? / opt)
}

/// `(x_i . f(w)) / (x_i . f(w_{-i}))` on true valuations, `+inf` when the
/// agent gets nothing without participating.
pub fn participation_margin(spec: &RuleSpec, profile: &ValuationProfile, agent: usize) -> Result<f64> {
    if agent >= profile.n() {
        return Err(Error::AgentOutOfRange {
            index: agent,
            n: profile.n(),
        });
    }
    let x = profile.true_row(agent);
    let with = evaluate_rule(spec, &profile.weight_vector(true));
    let without = evaluate_rule(spec, &profile.exclude(&[agent])?.weight_vector(true));
    let num: f64 = x.iter().zip(&with.probs).map(|(a, b)| a * b).sum();
    let den: f64 = x.iter().zip(&without.probs).map(|(a, b)| a * b).sum();
    if den == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(num / den)
}

pub fn lp_norm(v: &[f64], p: f64) -> f64 {
    let max = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    max * v.iter().map(|x| (x.abs() / max).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Shannon entropy in nats, `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Outcome of [`midr_extremality_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidrReport {
    pub probes: usize,
    pub violations: usize,
    /// Largest amount by which a probe beat `f(w)` (0 when none did).
    pub max_gap: f64,
    pub witness: Option<Vec<f64>>,
    /// `||f(w)||_{1+1/l}` and the range radius, for Partial Power.
    pub norm: Option<f64>,
    pub radius: Option<f64>,
    pub norm_ok: bool,
}

impl MidrReport {
    pub fn pass(&self) -> bool {
        self.violations == 0 && self.norm_ok
    }
}

/// Probes the range of a MIDR rule and checks that `f(w)` maximises the
/// rule's objective: `w . z` over the Partial Power range, `w . z + alpha H(z)`
/// over the simplex for Exponential.
pub fn midr_extremality_check(
    spec: &RuleSpec,
    w: &WeightVector,
    probes: usize,
    stream: RngStream,
) -> Result<MidrReport> {
    spec.validate()?;
    let m = w.len();
    let mut rng = stream.rng();
    let f = evaluate_rule(spec, w);
    let mut report = MidrReport {
        probes,
        violations: 0,
        max_gap: 0.0,
        witness: None,
        norm: None,
        radius: None,
        norm_ok: true,
    };
    let record = |best: f64, z: Vec<f64>, value: f64, report: &mut MidrReport| {
        let gap = value - best;
        if gap > 1e-9 * best.abs().max(1.0) {
            report.violations += 1;
            if gap > report.max_gap {
                report.max_gap = gap;
                report.witness = Some(z);
            }
        }
    };
    match *spec {
        RuleSpec::PartialPower { l, r } => {
            let p = 1.0 + 1.0 / l as f64;
            let radius = (1.0 - 1.0 / r as f64) * (m as f64).powf(-1.0 / (l as f64 + 1.0));
            let norm = lp_norm(&f.probs, p);
            report.norm = Some(norm);
            report.radius = Some(radius);
            if !w.is_zero() {
                report.norm_ok = (norm - radius).abs() <= 1e-9;
            }
            let best = w.dot(&f.probs);
            for k in 0..probes {
                let dir: Vec<f64> = (0..m)
                    .map(|_| {
                        let g: f64 = rng.sample(StandardNormal);
                        g.abs()
                    })
                    .collect();
                let len = lp_norm(&dir, p);
                if len == 0.0 {
                    continue;
                }
                let scale = if k % 2 == 0 { radius } else { 0.5 * radius };
                let z: Vec<f64> = dir.iter().map(|d| d / len * scale).collect();
                let value = w.dot(&z);
                record(best, z, value, &mut report);
            }
        }
        RuleSpec::Exponential { alpha } => {
            let objective = |z: &[f64]| w.dot(z) + alpha * entropy(z);
            let best = objective(&f.probs);
            for k in 0..probes {
                let mut z: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                // Every other probe lives on a random face of the simplex.
                if k % 2 == 1 && m > 1 {
                    let keep = rng.random_range(0..m);
                    for (j, zj) in z.iter_mut().enumerate() {
                        if j != keep && rng.random_bool(0.5) {
                            *zj = 0.0;
                        }
                    }
                }
                let total: f64 = z.iter().sum();
                z.iter_mut().for_each(|v| *v /= total);
                let value = objective(&z);
                record(best, z, value, &mut report);
            }
        }
        _ => {
            return Err(Error::Unsupported(format!(
                "extremality check is defined for partial power and exponential, not {}",
                spec.name()
            )))
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(v: &[f64]) -> WeightVector {
        WeightVector::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn power_examples() {
        assert!(close(&power_allocation(&w(&[5.0, 1.0, 0.0]), 0).probs, &[1.0 / 3.0; 3], 1e-12));
        assert!(close(&power_allocation(&w(&[2.0, 1.0]), 1).probs, &[2.0 / 3.0, 1.0 / 3.0], 1e-12));
        assert!(close(&power_allocation(&w(&[2.0, 1.0]), 3).probs, &[8.0 / 9.0, 1.0 / 9.0], 1e-12));
    }

    #[test]
    fn power_zero_weights_fall_back_to_uniform() {
        let a = power_allocation(&w(&[0.0, 0.0, 0.0, 0.0]), 3);
        assert_eq!(a, Allocation::uniform(4));
    }

    #[test]
    fn power_survives_large_exponents() {
        let a = power_allocation(&w(&[1e200, 5e199]), 40);
        assert!(a.probs.iter().all(|p| p.is_finite()));
        assert!((a.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partial_power_examples() {
        let a = partial_power_allocation(&w(&[1.0, 0.0]), 1, 2);
        assert!(close(&a.probs, &[0.5 / 2f64.sqrt(), 0.0], 1e-12));
        assert!((a.null_mass - (1.0 - 0.5 / 2f64.sqrt())).abs() < 1e-12);
        assert!((a.probs[0] - 0.353553).abs() < 1e-6);

        let b = partial_power_allocation(&w(&[3.0, 7.0]), 2, 1);
        assert_eq!(b.probs, vec![0.0, 0.0]);
        assert_eq!(b.null_mass, 1.0);

        let c = partial_power_allocation(&w(&[1.0, 1.0]), 1, 2);
        assert!(close(&c.probs, &[0.25, 0.25], 1e-12));
        assert!((c.null_mass - 0.5).abs() < 1e-12);
    }

    #[test]
    fn partial_power_zero_is_all_null() {
        assert_eq!(partial_power_allocation(&w(&[0.0, 0.0]), 2, 3), Allocation::all_null(2));
    }

    #[test]
    fn exponential_examples() {
        let alpha = 0.7;
        assert!(close(&exponential_allocation(&w(&[0.0, 0.0]), alpha).probs, &[0.5, 0.5], 1e-12));
        let a = exponential_allocation(&w(&[alpha * 2f64.ln(), 0.0]), alpha);
        assert!(close(&a.probs, &[2.0 / 3.0, 1.0 / 3.0], 1e-12));
        assert!(close(&exponential_allocation(&w(&[4.0; 3]), alpha).probs, &[1.0 / 3.0; 3], 1e-12));
        let big = exponential_allocation(&w(&[1e6, 0.0]), 1e-3);
        assert_eq!(big.probs, vec![1.0, 0.0]);
    }

    #[test]
    fn evaluate_rule_dispatch() {
        assert!(close(&evaluate_rule(&RuleSpec::Uniform, &w(&[1.0, 2.0, 3.0, 4.0])).probs, &[0.25; 4], 0.0));
        assert!(close(&evaluate_rule(&RuleSpec::Power { l: 1 }, &w(&[3.0, 1.0])).probs, &[0.75, 0.25], 1e-12));
        assert!(close(
            &evaluate_rule(&RuleSpec::Exponential { alpha: 1.0 }, &w(&[1.0, 1.0])).probs,
            &[0.5, 0.5],
            1e-12
        ));
    }

    #[test]
    fn welfare_examples() {
        let a = Allocation::new(vec![1.0, 0.0], 0.0).unwrap();
        assert_eq!(expected_welfare(&w(&[1.0, 0.0]), &a).unwrap(), 1.0);
        let b = power_allocation(&w(&[2.0, 1.0]), 1);
        assert!((expected_welfare(&w(&[2.0, 1.0]), &b).unwrap() - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(expected_welfare(&w(&[2.0, 1.0]), &Allocation::all_null(2)).unwrap(), 0.0);
        assert!(expected_welfare(&w(&[2.0]), &b).is_err());
    }

    #[test]
    fn ratio_examples() {
        let spike = w(&[0.0, 4.0, 0.0]);
        let a = power_allocation(&spike, 3);
        assert!((approximation_ratio(&spike, &a).unwrap() - 1.0).abs() < 1e-12);
        for (l, r) in [(1, 2), (2, 5), (4, 3)] {
            let e1 = w(&[1.0, 0.0, 0.0, 0.0, 0.0]);
            let ratio = approximation_ratio(&e1, &partial_power_allocation(&e1, l, r)).unwrap();
            let bound = RuleSpec::PartialPower { l, r }.ratio_bound(5).unwrap();
            assert!((ratio - bound).abs() < 1e-12);
        }
        assert_eq!(
            approximation_ratio(&w(&[0.0, 0.0]), &Allocation::uniform(2)),
            Err(Error::ZeroOptimum)
        );
    }

    #[test]
    fn power_participation_counterexample() {
        let p = ValuationProfile::truthful(2, vec![vec![1.0, 0.0], vec![0.75, 0.25]]).unwrap();
        let margin = participation_margin(&RuleSpec::Power { l: 1 }, &p, 1).unwrap();
        assert!((margin - 0.6875 / 0.75).abs() < 1e-12);
        assert!(margin < 1.0 && margin >= 2f64.powf(-0.5));
    }

    #[test]
    fn participation_zero_row() {
        let p = ValuationProfile::truthful(2, vec![vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        for spec in [RuleSpec::Power { l: 2 }, RuleSpec::PartialPower { l: 1, r: 3 }, RuleSpec::Uniform] {
            let m = participation_margin(&spec, &p, 1).unwrap();
            assert!(m.is_infinite() || m >= 1.0);
        }
        // Alone under Partial Power: excluded, the agent faces an all-null rule.
        let solo = ValuationProfile::truthful(2, vec![vec![1.0, 0.5]]).unwrap();
        assert!(participation_margin(&RuleSpec::PartialPower { l: 1, r: 2 }, &solo, 0).unwrap().is_infinite());
        assert!(participation_margin(&RuleSpec::Uniform, &solo, 3).is_err());
    }

    #[test]
    fn midr_examples() {
        let spec = RuleSpec::PartialPower { l: 1, r: 2 };
        let rep = midr_extremality_check(&spec, &w(&[1.0, 1.0]), 200, RngStream::new(1, 0)).unwrap();
        assert!((rep.norm.unwrap() - 0.5 * 2f64.powf(-0.5)).abs() < 1e-15);
        assert!(rep.pass());

        let alpha = 0.4;
        let ww = w(&[0.3, 1.0, 0.2]);
        let f = exponential_allocation(&ww, alpha);
        let g = |z: &[f64]| ww.dot(z) + alpha * entropy(z);
        assert_eq!(g(&f.probs), g(&f.probs));
        let rep = midr_extremality_check(&RuleSpec::Exponential { alpha }, &ww, 500, RngStream::new(2, 0)).unwrap();
        assert!(rep.pass(), "{rep:?}");

        assert!(midr_extremality_check(&RuleSpec::Power { l: 1 }, &ww, 1, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn midr_detects_a_wrong_rule() {
        // Uniform is not the Exponential maximiser on skewed weights: a probe
        // at f(w) of the true rule must beat it.
        let ww = w(&[5.0, 0.0]);
        let alpha = 1.0;
        let uniform = Allocation::uniform(2);
        let f = exponential_allocation(&ww, alpha);
        let g = |z: &[f64]| ww.dot(z) + alpha * entropy(z);
        assert!(g(&f.probs) > g(&uniform.probs));
    }

    #[test]
    fn validation() {
        assert!(RuleSpec::PartialPower { l: 0, r: 2 }.validate().is_err());
        assert!(RuleSpec::PartialPower { l: 1, r: 0 }.validate().is_err());
        assert!(RuleSpec::Exponential { alpha: 0.0 }.validate().is_err());
        assert!(RuleSpec::Exponential { alpha: 1.0 }.validate().is_ok());
    }
}
