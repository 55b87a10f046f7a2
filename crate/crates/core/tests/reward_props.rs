mod common;

use common::clinical_output;
use oncoalign_core::records::{SurvivalOutcome, SurvivalStatus};
use oncoalign_core::reward::{total_reward, IntegerPolicy, RewardConfig, MAX_REWARD};
use proptest::prelude::*;

const TRUTH: SurvivalOutcome = SurvivalOutcome {
    status: SurvivalStatus::Deceased,
    months: 30.0,
};

#[derive(Debug, Clone, Copy)]
enum Format {
    Strict,
    SoftOnly,
    Neither,
}

/// Text realizing one combination of reward components against `TRUTH`.
fn realize(correct: bool, integer: bool, format: Format) -> String {
    let status = if correct { "1:DECEASED" } else { "0:LIVING" };
    let months = if integer { "30" } else { "30.0" };
    match format {
        Format::Strict => clinical_output(status, months),
        Format::SoftOnly => format!("My assessment follows.\n{}", clinical_output(status, months)),
        Format::Neither => format!("Overall Survival Status: {status}\nEstimated Overall Survival (months): {months}"),
    }
}

#[test]
fn exhaustive_component_combinations() {
    let cfg = RewardConfig::default();
    let mut totals = Vec::new();
    for correct in [false, true] {
        for integer in [false, true] {
            for format in [Format::Strict, Format::SoftOnly, Format::Neither] {
                let b = total_reward(&realize(correct, integer, format), &TRUTH, &cfg);
                let (strict, soft) = match format {
                    Format::Strict => (0.5, 0.5),
                    Format::SoftOnly => (0.0, 0.5),
                    Format::Neither => (0.0, 0.0),
                };
                let want = [if correct { 1.0 } else { 0.0 }, if integer { 0.5 } else { 0.0 }, strict, soft];
                let got = [b.r_correct, b.r_int, b.r_strict, b.r_soft];
                assert_eq!(got, want, "{correct} {integer} {format:?}");
                assert_eq!(b.total, want.iter().sum::<f64>());
                totals.push(b.total);
            }
        }
    }
    assert_eq!(totals.len(), 12);
    totals.sort_by(f64::total_cmp);
    totals.dedup();
    assert_eq!(totals, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5]);
}

#[test]
fn worked_examples() {
    let cfg = RewardConfig::default();
    assert_eq!(total_reward(&clinical_output("1:DECEASED", "30"), &TRUTH, &cfg).total, MAX_REWARD);
    assert_eq!(total_reward(&clinical_output("0:LIVING", "30"), &TRUTH, &cfg).total, 1.5);
    let any = RewardConfig {
        integer_policy: IntegerPolicy::AnyFiniteNumeric,
        ..cfg
    };
    assert_eq!(total_reward(&clinical_output("1:DECEASED", "30.0"), &TRUTH, &any).total, 2.5);
}

fn arb_status() -> impl Strategy<Value = SurvivalStatus> {
    prop_oneof![Just(SurvivalStatus::Living), Just(SurvivalStatus::Deceased)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn appending_text_never_raises_a_component(
        status in arb_status(),
        months in 0u32..200,
        truth_months in 0u32..200,
        truth_status in arb_status(),
        garbage in "\\PC{1,40}",
    ) {
        let truth = SurvivalOutcome { status: truth_status, months: truth_months as f64 };
        let text = clinical_output(status.label(), &months.to_string());
        let cfg = RewardConfig::default();
        let before = total_reward(&text, &truth, &cfg);
        let after = total_reward(&format!("{text}{garbage}"), &truth, &cfg);
        prop_assert!(after.r_correct <= before.r_correct);
        prop_assert!(after.r_int <= before.r_int);
        prop_assert!(after.r_strict <= before.r_strict);
        prop_assert!(after.r_soft <= before.r_soft);
    }

    #[test]
    fn breakdown_is_consistent_and_deterministic(text in "\\PC{0,120}", months in 0.0f64..100.0) {
        let truth = SurvivalOutcome { status: SurvivalStatus::Living, months };
        let cfg = RewardConfig::default();
        let a = total_reward(&text, &truth, &cfg);
        prop_assert_eq!(a, total_reward(&text, &truth, &cfg));
        prop_assert_eq!(a.total, a.r_correct + a.r_int + a.r_strict + a.r_soft);
        prop_assert!(a.r_strict <= a.r_soft);
        prop_assert!((0.0..=MAX_REWARD).contains(&a.total));
    }
}
