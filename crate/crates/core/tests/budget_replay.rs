use std::collections::HashMap;

use mta_core::attribution::{AttributionRecord, Attributions};
use mta_core::baselines::{baseline_attributions, Baseline, RuleKind};
use mta_core::budget::{budget_sweep, replay, timeline, ReplayImpression, SweepConfig};
use mta_core::data::{generate_synthetic, Journey, SyntheticConfig, Touchpoint};
use proptest::prelude::*;

fn imp(journey: &str, position: usize, channel: usize, cost: f64, timestamp: i64) -> ReplayImpression {
    ReplayImpression {
        journey_id: journey.into(),
        position,
        channel,
        cost,
        timestamp,
    }
}

/// J1 = (A 1, A 1, converts), J2 = (A 1, converts), J3 = (B 1); budgets
/// A = 2.5, B = 0; serving order J1.1, J2.1, J1.2, J3.1.
fn three_journeys(scale: f64) -> (Vec<ReplayImpression>, HashMap<String, bool>, Vec<f64>) {
    let imps = vec![
        imp("J3", 0, 1, 1.0, 4),
        imp("J1", 1, 0, 1.0, 3),
        imp("J2", 0, 0, 1.0, 2),
        imp("J1", 0, 0, 1.0, 1),
    ];
    let converted = [("J1", true), ("J2", true), ("J3", false)]
        .iter()
        .map(|(id, c)| (id.to_string(), *c))
        .collect();
    (imps, converted, vec![2.5 * scale, 0.0])
}

#[test]
fn three_journey_oracle() {
    let (imps, converted, budgets) = three_journeys(1.0);
    let out = replay(&imps, &converted, &budgets, 1.0).unwrap();
    assert_eq!(out.true_conversions, 1);
    assert_eq!(out.blacklisted, 2);
    assert_eq!(out.expenditure, 2.0);
    assert_eq!(out.cpa, Some(2.0));
    assert_eq!(out.cvr, 1.0 / 3.0);
    assert_eq!(out.remaining, vec![0.5, 0.0]);
}

#[test]
fn three_journey_cost_scale_invariance() {
    let (imps, converted, _) = three_journeys(1.0);
    let base = replay(&imps, &converted, &[2.5, 0.0], 1.0).unwrap();
    // Costs scaled through the replay multiplier, budgets scaled alongside.
    let scaled = replay(&imps, &converted, &[2500.0, 0.0], 1000.0).unwrap();
    assert_eq!(scaled.cvr, base.cvr);
    assert_eq!(scaled.true_conversions, base.true_conversions);
    assert_eq!(scaled.blacklisted, base.blacklisted);
    assert_eq!(scaled.cpa, Some(2000.0));
    assert_eq!(scaled.expenditure, 1000.0 * base.expenditure);
}

#[test]
fn unknown_journey_is_rejected() {
    let (mut imps, converted, budgets) = three_journeys(1.0);
    imps.push(imp("J9", 0, 0, 1.0, 9));
    assert!(replay(&imps, &converted, &budgets, 1.0).is_err());
}

#[test]
fn zero_budget_blacklists_everything() {
    let (imps, converted, _) = three_journeys(1.0);
    let out = replay(&imps, &converted, &[0.0, 0.0], 1.0).unwrap();
    assert_eq!(out.blacklisted, 3);
    assert_eq!(out.true_conversions, 0);
    assert_eq!(out.cvr, 0.0);
    assert_eq!(out.cpa, None);
    assert_eq!(out.expenditure, 0.0);
}

#[test]
fn ample_budget_serves_everything() {
    let (imps, converted, _) = three_journeys(1.0);
    let out = replay(&imps, &converted, &[3.0, 1.0], 1.0).unwrap();
    assert_eq!(out.blacklisted, 0);
    assert_eq!(out.true_conversions, 2);
    assert_eq!(out.expenditure, 4.0);
}

#[test]
fn equal_timestamps_break_ties_by_journey_then_position() {
    let converted: HashMap<String, bool> = [("a".to_string(), true), ("b".to_string(), true)].into();
    // Both journeys want the single unit of budget at the same instant; `a`
    // sorts first and wins regardless of input order.
    let imps = vec![imp("b", 0, 0, 1.0, 5), imp("a", 0, 0, 1.0, 5)];
    let out = replay(&imps, &converted, &[1.0], 1.0).unwrap();
    assert_eq!(out.blacklisted, 1);
    let reversed: Vec<ReplayImpression> = imps.into_iter().rev().collect();
    assert_eq!(replay(&reversed, &converted, &[1.0], 1.0).unwrap(), out);
}

fn synthetic() -> Vec<Journey> {
    let cfg = SyntheticConfig {
        num_users: 1500,
        seed: 31,
        ..Default::default()
    };
    generate_synthetic(&cfg).unwrap().0
}

#[test]
fn sweep_is_monotone_in_budget_fraction() {
    let js = synthetic();
    for baseline in [Baseline::Rule(RuleKind::Linear), Baseline::LogisticRegression] {
        let attr = baseline_attributions(baseline, &js, &js, 4).unwrap();
        let reports = budget_sweep(&js, &attr, 4, &SweepConfig::default()).unwrap();
        for w in reports.windows(2) {
            assert!(w[1].outcome.true_conversions >= w[0].outcome.true_conversions, "{baseline}");
            assert!(w[1].outcome.expenditure >= w[0].outcome.expenditure, "{baseline}");
        }
        for r in &reports {
            assert!((r.budgets.iter().sum::<f64>() - r.total_budget).abs() <= 1e-9 * r.total_budget.max(1.0));
            assert!(r.outcome.remaining.iter().all(|&x| x >= 0.0));
        }
    }
}

#[test]
fn uncapped_replay_matches_dataset_conversion_rate() {
    let js = synthetic();
    let attr = baseline_attributions(Baseline::Rule(RuleKind::Last), &js, &js, 4).unwrap();
    let cfg = SweepConfig {
        fractions: vec![1.0],
        uncapped: true,
        ..Default::default()
    };
    let r = &budget_sweep(&js, &attr, 4, &cfg).unwrap()[0];
    let rate = js.iter().filter(|j| j.converted).count() as f64 / js.len() as f64;
    assert_eq!(r.outcome.cvr, rate);
    assert_eq!(r.outcome.blacklisted, 0);
}

fn arb_journeys() -> impl Strategy<Value = Vec<Journey>> {
    proptest::collection::vec(
        (
            proptest::collection::vec((0usize..3, 1u32..20, 0i64..50), 1..5),
            any::<bool>(),
        ),
        1..25,
    )
    .prop_map(|js| {
        js.into_iter()
            .enumerate()
            .map(|(i, (tps, converted))| Journey {
                id: format!("j{i:02}"),
                user_id: format!("u{i}"),
                touchpoints: tps
                    .into_iter()
                    .map(|(channel, cost, timestamp)| Touchpoint {
                        covariates: vec![0],
                        channel,
                        click: false,
                        cost: cost as f64,
                        timestamp,
                    })
                    .collect(),
                converted,
            })
            .collect()
    })
}

fn linear(js: &[Journey]) -> Attributions {
    Attributions::new(
        "linear",
        js.iter()
            .map(|j| AttributionRecord {
                journey_id: j.id.clone(),
                weights: vec![1.0 / j.len() as f64; j.len()],
                conversion_prob: None,
            })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_scales_with_costs_and_budgets(
        js in arb_journeys(),
        budgets in proptest::collection::vec(0u32..40, 3),
    ) {
        let converted: HashMap<String, bool> = js.iter().map(|j| (j.id.clone(), j.converted)).collect();
        let events = timeline(&js);
        let b: Vec<f64> = budgets.iter().map(|&x| x as f64).collect();
        let b1000: Vec<f64> = b.iter().map(|x| x * 1000.0).collect();
        let base = replay(&events, &converted, &b, 1.0).unwrap();
        let scaled = replay(&events, &converted, &b1000, 1000.0).unwrap();
        prop_assert_eq!(base.blacklisted, scaled.blacklisted);
        prop_assert_eq!(base.true_conversions, scaled.true_conversions);
        prop_assert_eq!(base.cvr, scaled.cvr);
        prop_assert_eq!(base.expenditure * 1000.0, scaled.expenditure);
        prop_assert_eq!(base.cpa.map(|c| c * 1000.0), scaled.cpa);
    }

    #[test]
    fn remaining_budget_never_negative_and_replay_deterministic(
        js in arb_journeys(),
        budgets in proptest::collection::vec(0.0f64..30.0, 3),
    ) {
        let converted: HashMap<String, bool> = js.iter().map(|j| (j.id.clone(), j.converted)).collect();
        let events = timeline(&js);
        let a = replay(&events, &converted, &budgets, 1.0).unwrap();
        prop_assert!(a.remaining.iter().all(|&r| r >= 0.0));
        for (r, b) in a.remaining.iter().zip(&budgets) {
            prop_assert!(r <= b);
        }
        let mut shuffled = events.clone();
        shuffled.reverse();
        prop_assert_eq!(a, replay(&shuffled, &converted, &budgets, 1.0).unwrap());
    }

    #[test]
    fn sweep_allocations_sum_to_budget(js in arb_journeys()) {
        let attr = linear(&js);
        if let Ok(reports) = budget_sweep(&js, &attr, 3, &SweepConfig { cost_scale: 1.0, ..Default::default() }) {
            for r in reports {
                prop_assert!((r.budgets.iter().sum::<f64>() - r.total_budget).abs() <= 1e-9 * r.total_budget.max(1.0));
            }
        }
    }
}
