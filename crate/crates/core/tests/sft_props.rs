mod common;

use common::{fd_gradient, relative_error};
use oncoalign_core::policy::ToyPolicy;
use oncoalign_core::sft::{sft_cot_loss, sft_cot_loss_grad, CotDivergence, SftBatch, SftExample, LOGP_FLOOR};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V: usize = 5;
const T: usize = 8;

fn random_example<R: Rng>(rng: &mut R, with_trace: bool) -> SftExample {
    let n_in = rng.random_range(1..3);
    let n_tr = if with_trace { rng.random_range(1..4) } else { 0 };
    let n_tg = rng.random_range(1..=T - n_in - n_tr);
    let mut toks = |n: usize| (0..n).map(|_| rng.random_range(0..V)).collect::<Vec<_>>();
    let input = toks(n_in);
    let trace = toks(n_tr);
    let target = toks(n_tg);
    let teacher_distributions = with_trace.then(|| {
        (0..n_tr)
            .map(|_| {
                let w: Vec<f64> = (0..V).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            })
            .collect()
    });
    SftExample {
        input,
        target,
        teacher_trace: with_trace.then_some(trace),
        teacher_distributions,
    }
}

fn random_batch<R: Rng>(rng: &mut R, divergence: CotDivergence) -> SftBatch {
    SftBatch {
        examples: (0..rng.random_range(1..4))
            .map(|_| {
                let with_trace = rng.random_bool(0.8);
                random_example(rng, with_trace)
            })
            .collect(),
        lambda_cot: rng.random_range(0.0..2.0),
        divergence,
    }
}

/// Teacher-forced loss assembled from per-position distributions.
fn loss_oracle(policy: &ToyPolicy, batch: &SftBatch) -> f64 {
    let (mut nll, mut n_target, mut cot, mut n_trace) = (0.0, 0usize, 0.0, 0usize);
    for ex in &batch.examples {
        let trace = ex.teacher_trace.clone().unwrap_or_default();
        let seq: Vec<usize> = ex.input.iter().chain(&trace).chain(&ex.target).copied().collect();
        let dist = |t: usize| policy.distribution(t, if t == 0 { None } else { Some(seq[t - 1]) });
        let start_trace = ex.input.len();
        let start_target = start_trace + trace.len();
        for (t, &tok) in seq.iter().enumerate().skip(start_target) {
            nll -= dist(t)[tok].ln().max(LOGP_FLOOR);
            n_target += 1;
        }
        for (k, t) in (start_trace..start_target).enumerate() {
            let q = dist(t);
            cot += match batch.divergence {
                CotDivergence::CrossEntropy => -q[seq[t]].ln().max(LOGP_FLOOR),
                CotDivergence::Kl => {
                    let p = &ex.teacher_distributions.as_ref().unwrap()[k];
                    p.iter().zip(&q).map(|(pv, qv)| pv * (pv.ln() - qv.ln().max(LOGP_FLOOR))).sum()
                }
            };
            n_trace += 1;
        }
    }
    let l_cot = if n_trace == 0 { 0.0 } else { cot / n_trace as f64 };
    nll / n_target as f64 + batch.lambda_cot * l_cot
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..60 {
        let divergence = if case % 2 == 0 { CotDivergence::CrossEntropy } else { CotDivergence::Kl };
        let policy = ToyPolicy::random(V, T, 0.7, &mut rng);
        let batch = random_batch(&mut rng, divergence);
        let (_, analytic) = sft_cot_loss_grad(&policy, &batch).unwrap();
        let fd = fd_gradient(policy.params(), 1e-5, |p| {
            let mut q = policy.clone();
            q.params_mut().copy_from_slice(p);
            sft_cot_loss(&q, &batch).unwrap().total
        });
        let err = relative_error(&analytic, &fd, 1e-8);
        assert!(err <= 1e-4, "case {case} ({divergence:?}): {err}");
    }
}

#[test]
fn loss_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..200 {
        let divergence = if case % 2 == 0 { CotDivergence::CrossEntropy } else { CotDivergence::Kl };
        let policy = ToyPolicy::random(V, T, 1.5, &mut rng);
        let batch = random_batch(&mut rng, divergence);
        let got = sft_cot_loss(&policy, &batch).unwrap();
        let want = loss_oracle(&policy, &batch);
        assert!((got.total - want).abs() <= 1e-12 * (1.0 + want.abs()), "{} vs {want}", got.total);
        assert!((got.total - (got.l_sft + batch.lambda_cot * got.l_cot)).abs() <= 1e-12 * (1.0 + want.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn loss_is_monotone_in_lambda(seed in any::<u64>(), l1 in 0.0f64..3.0, l2 in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = ToyPolicy::random(V, T, 1.0, &mut rng);
        let mut batch = random_batch(&mut rng, CotDivergence::CrossEntropy);
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        batch.lambda_cot = lo;
        let a = sft_cot_loss(&policy, &batch).unwrap();
        batch.lambda_cot = hi;
        let b = sft_cot_loss(&policy, &batch).unwrap();
        prop_assert!(a.l_cot >= 0.0);
        prop_assert!(a.total <= b.total + 1e-12);
    }
}
