//! Closed-form rules against hand-evaluated values and independent
//! re-implementations, plus property tests of their invariants.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use verimech::allocations::{entropy, lp_norm};
use verimech::{
    approximation_ratio, bot_probabilities, evaluate_rule, expected_welfare, exponential_allocation,
    midr_extremality_check, partial_power_allocation, participation_margin, power_allocation, Allocation, Error,
    RngStream, RuleSpec, ValuationProfile, WeightVector,
};

fn w(v: &[f64]) -> WeightVector {
    WeightVector::new(v.to_vec()).unwrap()
}

fn close(a: &Allocation, probs: &[f64], null: f64, tol: f64) {
    assert_eq!(a.probs.len(), probs.len());
    for (x, y) in a.probs.iter().zip(probs) {
        assert_abs_diff_eq!(*x, *y, epsilon = tol);
    }
    assert_abs_diff_eq!(a.null_mass, null, epsilon = tol);
}

/// Straight-line evaluation of the Partial Power formula, no rescaling.
fn naive_partial_power(w: &[f64], l: u32, r: u32) -> Vec<f64> {
    let m = w.len() as f64;
    let lf = l as f64;
    let q = 1.0 + 1.0 / lf;
    let norm = w.iter().map(|x| x.powf(lf * q)).sum::<f64>().powf(1.0 / q);
    let c = (1.0 - 1.0 / r as f64) * m.powf(-1.0 / (lf + 1.0));
    w.iter().map(|x| c * x.powf(lf) / norm).collect()
}

fn naive_power(w: &[f64], l: u32) -> Vec<f64> {
    let s: f64 = w.iter().map(|x| x.powi(l as i32)).sum();
    w.iter().map(|x| x.powi(l as i32) / s).collect()
}

fn naive_exponential(w: &[f64], alpha: f64) -> Vec<f64> {
    let s: f64 = w.iter().map(|x| (x / alpha).exp()).sum();
    w.iter().map(|x| (x / alpha).exp() / s).collect()
}

#[test]
fn power_examples() {
    close(&power_allocation(&w(&[2.0, 1.0, 7.0]), 0), &[1.0 / 3.0; 3], 0.0, 1e-15);
    close(&power_allocation(&w(&[2.0, 1.0]), 1), &[2.0 / 3.0, 1.0 / 3.0], 0.0, 1e-15);
    close(&power_allocation(&w(&[2.0, 1.0]), 3), &[8.0 / 9.0, 1.0 / 9.0], 0.0, 1e-15);
    close(&power_allocation(&w(&[0.0, 0.0]), 2), &[0.5, 0.5], 0.0, 0.0);
}

#[test]
fn partial_power_examples() {
    let h = 0.5 / 2f64.sqrt();
    close(&partial_power_allocation(&w(&[1.0, 0.0]), 1, 2), &[h, 0.0], 1.0 - h, 1e-12);
    close(&partial_power_allocation(&w(&[0.3, 0.9]), 2, 1), &[0.0, 0.0], 1.0, 0.0);
    close(&partial_power_allocation(&w(&[1.0, 1.0]), 1, 2), &[0.25, 0.25], 0.5, 1e-12);
    close(&partial_power_allocation(&w(&[0.0, 0.0, 0.0]), 3, 4), &[0.0; 3], 1.0, 0.0);
}

#[test]
fn exponential_examples() {
    close(&exponential_allocation(&w(&[0.0, 0.0]), 0.7), &[0.5, 0.5], 0.0, 1e-15);
    let alpha = 0.4;
    close(&exponential_allocation(&w(&[alpha * 2f64.ln(), 0.0]), alpha), &[2.0 / 3.0, 1.0 / 3.0], 0.0, 1e-12);
    close(&exponential_allocation(&w(&[5.0, 5.0, 5.0]), 0.01), &[1.0 / 3.0; 3], 0.0, 1e-15);
    // Large w / alpha must not overflow.
    let a = exponential_allocation(&w(&[1e4, 0.0]), 1e-3);
    close(&a, &[1.0, 0.0], 0.0, 1e-12);
}

#[test]
fn dispatch_and_welfare_examples() {
    close(&evaluate_rule(&RuleSpec::Uniform, &w(&[1.0, 2.0, 3.0, 4.0])), &[0.25; 4], 0.0, 0.0);
    close(&evaluate_rule(&RuleSpec::Power { l: 1 }, &w(&[3.0, 1.0])), &[0.75, 0.25], 0.0, 1e-15);
    close(&evaluate_rule(&RuleSpec::Exponential { alpha: 1.0 }, &w(&[1.0, 1.0])), &[0.5, 0.5], 0.0, 1e-15);

    let one = Allocation::new(vec![1.0, 0.0], 0.0).unwrap();
    assert_eq!(expected_welfare(&w(&[1.0, 0.0]), &one).unwrap(), 1.0);
    let thirds = Allocation::new(vec![2.0 / 3.0, 1.0 / 3.0], 0.0).unwrap();
    assert_abs_diff_eq!(expected_welfare(&w(&[2.0, 1.0]), &thirds).unwrap(), 5.0 / 3.0, epsilon = 1e-15);
    assert_eq!(expected_welfare(&w(&[4.0, 9.0]), &Allocation::all_null(2)).unwrap(), 0.0);
    assert!(matches!(
        expected_welfare(&w(&[1.0]), &one),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn ratio_examples() {
    let spike = w(&[0.0, 3.0, 0.0]);
    assert_eq!(approximation_ratio(&spike, &power_allocation(&spike, 4)).unwrap(), 1.0);
    for (l, r, m) in [(1u32, 2u32, 2usize), (2, 4, 5), (3, 7, 8)] {
        let mut e1 = vec![0.0; m];
        e1[0] = 1.0;
        let e1 = w(&e1);
        let ratio = approximation_ratio(&e1, &partial_power_allocation(&e1, l, r)).unwrap();
        let expected = (1.0 - 1.0 / r as f64) * (m as f64).powf(-1.0 / (l as f64 + 1.0));
        assert_abs_diff_eq!(ratio, expected, epsilon = 1e-12);
    }
    assert!(matches!(
        approximation_ratio(&w(&[0.0, 0.0]), &Allocation::uniform(2)),
        Err(Error::ZeroOptimum)
    ));
}

#[test]
fn participation_examples() {
    let p = ValuationProfile::truthful(2, vec![vec![1.0, 0.0], vec![0.75, 0.25]]).unwrap();
    let margin = participation_margin(&RuleSpec::Power { l: 1 }, &p, 1).unwrap();
    assert_abs_diff_eq!(margin, 0.6875 / 0.75, epsilon = 1e-12);
    assert!(margin < 1.0 && margin >= 0.5f64.sqrt());

    let zero = ValuationProfile::truthful(2, vec![vec![0.0, 0.0], vec![1.0, 0.5]]).unwrap();
    for spec in [RuleSpec::Power { l: 2 }, RuleSpec::PartialPower { l: 1, r: 3 }, RuleSpec::Exponential { alpha: 1.0 }] {
        let m = participation_margin(&spec, &zero, 0).unwrap();
        assert!(m.is_infinite() || m >= 1.0);
    }
}

#[test]
fn midr_examples() {
    let rep = midr_extremality_check(&RuleSpec::PartialPower { l: 1, r: 2 }, &w(&[1.0, 1.0]), 200, RngStream::new(1, 0))
        .unwrap();
    assert!(rep.pass());
    assert_abs_diff_eq!(rep.norm.unwrap(), 0.5 * 2f64.powf(-0.5), epsilon = 1e-12);
    // Exponential objective at z = f(w) is the maximum itself.
    let alpha = 0.3;
    let wv = w(&[0.2, 0.9, 0.4]);
    let f = exponential_allocation(&wv, alpha);
    let objective = |z: &[f64]| wv.dot(z) + alpha * entropy(z);
    let best = objective(&f.probs);
    for z in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0 / 3.0; 3], [0.1, 0.6, 0.3]] {
        assert!(objective(&z) <= best + 1e-12);
    }
    assert!(matches!(
        midr_extremality_check(&RuleSpec::Power { l: 1 }, &wv, 1, RngStream::new(1, 0)),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn worked_bot_instance() {
    let c = bot_probabilities(&w(&[1.0, 1.0]), &w(&[1.0, 0.0]), 1, 2).unwrap();
    // rho = 1/2; Pr[outcome 0, no bot] = (1/4)(1/2)(2^{-1/2})(1/sqrt 2) = 1/16.
    assert_abs_diff_eq!(c.pr_outcome_no_bot[0], 1.0 / 16.0, epsilon = 1e-15);
    assert_abs_diff_eq!(c.pr_null_no_bot, 1.0 / 8.0, epsilon = 1e-15);
    assert_abs_diff_eq!(c.pr_bot, 13.0 / 16.0, epsilon = 1e-15);
    let target = 0.5 / 2f64.sqrt();
    let p0 = (target - 1.0 / 16.0) / (13.0 / 16.0);
    assert_abs_diff_eq!(c.p[0], p0, epsilon = 1e-12);
    assert_abs_diff_eq!(c.p[0], 0.358219, epsilon = 1e-6);
    assert_eq!(c.p[1], 0.0);
    assert_abs_diff_eq!(c.p_null, 1.0 - p0, epsilon = 1e-12);
    assert!(matches!(
        bot_probabilities(&w(&[1.0, 1.0]), &w(&[1.0, 1.0]), 1, 2),
        Err(Error::BotUnreachable)
    ));
}

fn weights(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..10.0f64, m)
}

fn positive_weights(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..10.0f64, m).prop_filter("nonzero", |v| v.iter().any(|&x| x > 0.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rules_match_naive_formulas(v in positive_weights(5), l in 1u32..5, r in 1u32..7, alpha in 0.2..5.0f64) {
        let wv = w(&v);
        for (a, b) in power_allocation(&wv, l).probs.iter().zip(naive_power(&v, l)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in partial_power_allocation(&wv, l, r).probs.iter().zip(naive_partial_power(&v, l, r)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in exponential_allocation(&wv, alpha).probs.iter().zip(naive_exponential(&v, alpha)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn allocations_are_distributions(v in weights(6), l in 0u32..6, r in 1u32..6, alpha in 0.05..4.0f64) {
        let wv = w(&v);
        let mut specs = vec![RuleSpec::Uniform, RuleSpec::Power { l }, RuleSpec::Exponential { alpha }];
        if l >= 1 {
            specs.push(RuleSpec::PartialPower { l, r });
        }
        for spec in specs {
            let a = evaluate_rule(&spec, &wv);
            prop_assert!(a.probs.iter().all(|&p| p >= 0.0) && a.null_mass >= -1e-15);
            prop_assert!((a.mass() + a.null_mass - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_invariance(v in positive_weights(5), c in 0.01..100.0f64, l in 1u32..6, r in 1u32..6) {
        let wv = w(&v);
        let scaled = w(&v.iter().map(|x| x * c).collect::<Vec<_>>());
        for spec in [RuleSpec::Uniform, RuleSpec::Power { l }, RuleSpec::PartialPower { l, r }] {
            let tv = evaluate_rule(&spec, &wv).tv_distance(&evaluate_rule(&spec, &scaled)).unwrap();
            prop_assert!(tv < 1e-12);
        }
    }

    #[test]
    fn exponential_shift_invariance(v in weights(5), c in 0.0..50.0f64, alpha in 0.1..3.0f64) {
        let shifted = w(&v.iter().map(|x| x + c).collect::<Vec<_>>());
        let tv = exponential_allocation(&w(&v), alpha).tv_distance(&exponential_allocation(&shifted, alpha)).unwrap();
        prop_assert!(tv < 1e-12);
    }

    #[test]
    fn order_preserved(v in weights(6), l in 1u32..5, r in 2u32..5, alpha in 0.1..3.0f64) {
        let wv = w(&v);
        for spec in [RuleSpec::Power { l }, RuleSpec::PartialPower { l, r }, RuleSpec::Exponential { alpha }] {
            let a = evaluate_rule(&spec, &wv);
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] >= v[j] {
                        prop_assert!(a.probs[i] >= a.probs[j] - 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn welfare_guarantees(v in positive_weights(7), l in 0u32..8, r in 1u32..6, alpha in 0.05..2.0f64) {
        let wv = w(&v);
        let m = v.len() as f64;
        let power = approximation_ratio(&wv, &power_allocation(&wv, l)).unwrap();
        prop_assert!(power >= m.powf(-1.0 / (l as f64 + 1.0)) - 1e-12);
        if l >= 1 {
            let pp = partial_power_allocation(&wv, l, r);
            prop_assert!(pp.mass() <= 1.0 - 1.0 / r as f64 + 1e-12);
            let bound = (1.0 - 1.0 / r as f64) * m.powf(-1.0 / (l as f64 + 1.0));
            prop_assert!(approximation_ratio(&wv, &pp).unwrap() >= bound - 1e-12);
        }
        let deficit = wv.max() - expected_welfare(&wv, &exponential_allocation(&wv, alpha)).unwrap();
        prop_assert!(deficit <= alpha * m.ln() + 1e-12);
    }

    #[test]
    fn null_mass_shrinks_boundedly(v in weights(5), extra in weights(5), l in 1u32..5, r in 1u32..6) {
        let wv = w(&v);
        let sum: Vec<f64> = v.iter().zip(&extra).map(|(a, b)| a + b).collect();
        let total = w(&sum);
        prop_assume!(total.max() > 0.0);
        let mass = |x: &WeightVector| partial_power_allocation(x, l, r).mass();
        let p = l as f64 + 1.0;
        let ratio = lp_norm(&v, p).powf(p) / lp_norm(&sum, p).powf(p);
        prop_assert!(mass(&wv) - mass(&total) <= 1.0 - ratio + 1e-12);
    }

    #[test]
    fn power_participation(rows in prop::collection::vec(weights(4), 2..6), l in 0u32..6, pick in 0usize..6) {
        let n = rows.len();
        let profile = ValuationProfile::truthful(4, rows).unwrap();
        let agent = pick % n;
        let margin = participation_margin(&RuleSpec::Power { l }, &profile, agent).unwrap();
        prop_assert!(margin >= 4f64.powf(-1.0 / (l as f64 + 1.0)) - 1e-9);
        for spec in [RuleSpec::PartialPower { l: l.max(1), r: 3 }, RuleSpec::Exponential { alpha: 0.7 }] {
            prop_assert!(participation_margin(&spec, &profile, agent).unwrap() >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn bot_correction_feasible_and_exact(
        truthful_rows in prop::collection::vec(weights(4), 1..4),
        liar_rows in prop::collection::vec(positive_weights(4), 1..3),
        l in 1u32..5,
        r in 1u32..7,
    ) {
        let sum = |rows: &[Vec<f64>]| (0..4).map(|j| rows.iter().map(|x| x[j]).sum::<f64>()).collect::<Vec<_>>();
        let wt = sum(&truthful_rows);
        let all: Vec<Vec<f64>> = truthful_rows.iter().chain(&liar_rows).cloned().collect();
        let wf = sum(&all);
        let c = bot_probabilities(&w(&wf), &w(&wt), l, r).unwrap();
        prop_assert!(c.p.iter().all(|&p| p >= -1e-12));
        prop_assert!(c.p.iter().sum::<f64>() <= 1.0 + 1e-12);
        // Independent oracle: the defining formulas evaluated directly.
        let lf = l as f64;
        let rho = wt.iter().map(|x| x.powf(lf + 1.0)).sum::<f64>() / wf.iter().map(|x| x.powf(lf + 1.0)).sum::<f64>();
        let f_full = naive_partial_power(&wf, l, r);
        let f_t = if wt.iter().all(|&x| x == 0.0) { vec![0.0; 4] } else { naive_partial_power(&wt, l, r) };
        let scale = f_full.iter().zip(&wf).find(|(_, &x)| x > 0.0).map(|(f, x)| f / x.powf(lf)).unwrap();
        let no_bot: Vec<f64> = wt.iter().map(|x| rho.powi(r as i32) * scale * x.powf(lf)).collect();
        let null_no_bot = rho.powi(r as i32) * (1.0 - f_full.iter().sum::<f64>());
        let pr_bot = 1.0 - no_bot.iter().sum::<f64>() - null_no_bot;
        prop_assert!((c.pr_bot - pr_bot).abs() < 1e-9);
        for j in 0..4 {
            prop_assert!((c.pr_outcome_no_bot[j] - no_bot[j]).abs() < 1e-12);
            // Reconstruction: the unconditional law equals f(w_T).
            prop_assert!((c.pr_outcome_no_bot[j] + c.p[j] * c.pr_bot - f_t[j]).abs() < 1e-12);
            if pr_bot > 1e-3 {
                prop_assert!((c.p[j] - (f_t[j] - no_bot[j]) / pr_bot).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn midr_probes_never_beat_rule(v in positive_weights(5), l in 1u32..4, r in 2u32..6, alpha in 0.1..2.0f64, seed in any::<u64>()) {
        let wv = w(&v);
        for spec in [RuleSpec::PartialPower { l, r }, RuleSpec::Exponential { alpha }] {
            let rep = midr_extremality_check(&spec, &wv, 50, RngStream::new(seed, 0)).unwrap();
            prop_assert!(rep.pass(), "{:?} {:?}", spec, rep);
        }
    }
}

#[test]
fn exponential_is_not_scale_invariant() {
    let a = exponential_allocation(&w(&[1.0, 0.0]), 1.0);
    let b = exponential_allocation(&w(&[2.0, 0.0]), 1.0);
    assert!(a.tv_distance(&b).unwrap() > 0.1);
}
