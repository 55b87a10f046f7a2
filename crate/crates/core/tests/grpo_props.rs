mod common;

use common::GradCase;
use oncoalign_core::grpo::{
    clipped_term, grpo_objective, kl_penalty, normalize_advantages, GrpoConfig, GrpoGroup, GrpoOutput,
    RatioGranularity,
};
use oncoalign_core::policy::{OptimizerKind, ToyPolicy};
use oncoalign_core::toy::{supervised_warmup, train_toy_policy, FormattedAnswerEnv, ToyTrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn population_moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

fn group_with_rewards(rewards: &[f64], logps: &[(f64, f64, f64)]) -> GrpoGroup {
    let outputs = rewards
        .iter()
        .zip(logps)
        .map(|(&reward, &(c, o, r))| GrpoOutput {
            tokens: vec![0, 1],
            logp_current: vec![c / 2.0, c / 2.0],
            logp_old: vec![o / 2.0, o / 2.0],
            logp_ref: vec![r / 2.0, r / 2.0],
            reward,
        })
        .collect();
    GrpoGroup::new("q", outputs, 1e-8).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_equal_logps(a in -30.0f64..0.0, b in -30.0f64..0.0) {
        let k = kl_penalty(a, b);
        prop_assert!(k >= 0.0);
        if (a - b).abs() > 1e-5 {
            prop_assert!(k > 0.0);
        }
        prop_assert_eq!(kl_penalty(a, a), 0.0);
    }

    #[test]
    fn advantages_are_standardized(rewards in prop::collection::vec(-10.0f64..10.0, 2..16)) {
        let adv = normalize_advantages(&rewards, 1e-8);
        let (_, std_r) = population_moments(&rewards);
        if std_r >= 1e-6 {
            let (mean, std) = population_moments(&adv);
            prop_assert!(mean.abs() <= 1e-10, "mean {mean}");
            prop_assert!((std - 1.0).abs() <= 1e-10, "std {std}");
        }
    }

    #[test]
    fn shifting_rewards_leaves_advantages_and_objective_unchanged(
        rows in prop::collection::vec((0.0f64..2.5, -6.0f64..-1.0, -6.0f64..-1.0, -6.0f64..-1.0), 2..8),
        shift in -100.0f64..100.0,
    ) {
        let rewards: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
        let logps: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r.1, r.2, r.3)).collect();
        let a = normalize_advantages(&rewards, 1e-8);
        let b = normalize_advantages(&shifted, 1e-8);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + shift.abs()));
        }
        let cfg = GrpoConfig::default();
        let j1 = grpo_objective(&group_with_rewards(&rewards, &logps), &cfg);
        let j2 = grpo_objective(&group_with_rewards(&shifted, &logps), &cfg);
        prop_assert!((j1 - j2).abs() <= 1e-8 * (1.0 + shift.abs()) * (1.0 + j1.abs()));
    }

    #[test]
    fn clipped_term_is_a_lower_envelope(ratio in 0.0f64..5.0, adv in -5.0f64..5.0, eps in 0.0f64..0.9) {
        prop_assert!(clipped_term(ratio, adv, eps) <= ratio * adv + 1e-15);
    }
}

#[test]
fn advantage_examples() {
    let a = normalize_advantages(&[1.0, 2.0, 3.0], 1e-8);
    for (x, y) in a.iter().zip([-1.2247, 0.0, 1.2247]) {
        assert!((x - y).abs() < 1e-4);
    }
    assert_eq!(normalize_advantages(&[2.0, 2.0, 2.0], 1e-8), vec![0.0; 3]);
    assert_eq!(normalize_advantages(&[0.0, 1.0], 1e-8), vec![-1.0, 1.0]);
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut granularity = [0usize; 2];
    for case_no in 0..100 {
        let case = GradCase::sample(&mut rng);
        assert!(case.policy.params().len() <= 64);
        granularity[(case.cfg.ratio_granularity == RatioGranularity::Token) as usize] += 1;
        let err = case.gradient_error(1e-5);
        assert!(err <= 1e-4, "case {case_no}: relative error {err}");
    }
    assert!(granularity.iter().all(|&n| n > 0), "both granularities exercised");
}

fn late_mean_kl(beta: f64) -> f64 {
    let env = FormattedAnswerEnv::default();
    let mut policy = ToyPolicy::new(32, 8);
    supervised_warmup(&mut policy, &FormattedAnswerEnv::warmup_exemplars(), 50, 0.05).unwrap();
    let cfg = ToyTrainConfig {
        steps: 500,
        optimizer: OptimizerKind::Sgd,
        learning_rate: 0.01,
        grpo: GrpoConfig {
            kl_coeff: beta,
            ..GrpoConfig::default()
        },
        ..ToyTrainConfig::default()
    };
    let log = train_toy_policy(&env, policy, &cfg).unwrap().log;
    log[log.len() - 100..].iter().map(|r| r.mean_kl).sum::<f64>() / 100.0
}

#[test]
fn kl_to_reference_shrinks_as_beta_grows() {
    let kl: Vec<f64> = [0.0, 1.0, 10.0, 100.0].into_iter().map(late_mean_kl).collect();
    assert!(kl.windows(2).all(|w| w[1] < w[0]), "{kl:?}");
    assert!(kl[3] <= 0.01, "{kl:?}");
}
