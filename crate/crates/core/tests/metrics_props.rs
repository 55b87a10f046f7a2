mod common;

use common::*;
use oncoalign_core::metrics::outcome::{classification_report, regression_report};
use oncoalign_core::metrics::text::{bleu, lcs_len, rouge, rouge_l, rouge_n, tokenize};
use oncoalign_core::metrics::MetricError;
use oncoalign_core::records::SurvivalStatus;
use proptest::prelude::*;

const WORDS: [&str; 5] = ["a", "b", "c", "d", "e"];

fn sentence(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(0..WORDS.len(), 0..=max).prop_map(|ix| ix.iter().map(|&i| WORDS[i]).collect::<Vec<_>>().join(" "))
}

fn nonempty_sentence(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(0..WORDS.len(), 1..=max).prop_map(|ix| ix.iter().map(|&i| WORDS[i]).collect::<Vec<_>>().join(" "))
}

fn status() -> impl Strategy<Value = SurvivalStatus> {
    prop_oneof![Just(SurvivalStatus::Living), Just(SurvivalStatus::Deceased)]
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn bleu_matches_oracle(pairs in prop::collection::vec((sentence(8), sentence(8)), 1..5)) {
        let (c, r): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
        let got = bleu(&c, &r).unwrap();
        prop_assert!(close(got, bleu_oracle(&c, &r)), "{got} vs {}", bleu_oracle(&c, &r));
        prop_assert!((0.0..=100.0 + 1e-9).contains(&got));
    }

    #[test]
    fn bleu_is_permutation_invariant(pairs in prop::collection::vec((sentence(8), sentence(8)), 1..6), rot in 0usize..6) {
        let (c, r): (Vec<String>, Vec<String>) = pairs.iter().cloned().unzip();
        let k = rot % pairs.len();
        let mut rotated = pairs.clone();
        rotated.rotate_left(k);
        rotated.reverse();
        let (c2, r2): (Vec<String>, Vec<String>) = rotated.into_iter().unzip();
        prop_assert!(close(bleu(&c, &r).unwrap(), bleu(&c2, &r2).unwrap()));
    }

    #[test]
    fn rouge_matches_oracle(c in sentence(8), r in sentence(8)) {
        let s = rouge(&c, &r);
        prop_assert!(close(s.rouge1, rouge_n_oracle(&c, &r, 1)));
        prop_assert!(close(s.rouge2, rouge_n_oracle(&c, &r, 2)));
        prop_assert!(close(s.rouge_l, rouge_l_oracle(&c, &r)));
        let (ct, rt) = (tokenize(&c), tokenize(&r));
        let (co, ro): (Vec<String>, Vec<String>) =
            (ct.iter().map(|s| s.to_string()).collect(), rt.iter().map(|s| s.to_string()).collect());
        prop_assert_eq!(lcs_len(&ct, &rt), lcs_oracle(&co, &ro));
    }

    #[test]
    fn identity_cases_are_exact(c in nonempty_sentence(10)) {
        prop_assert_eq!(bleu(std::slice::from_ref(&c), std::slice::from_ref(&c)).unwrap(), 100.0);
        prop_assert_eq!(rouge_n(&c, &c, 1), 1.0);
        prop_assert_eq!(rouge_n(&c, &c, 2), 1.0);
        prop_assert_eq!(rouge_l(&c, &c), 1.0);
    }

    #[test]
    fn classification_matches_oracle(
        rows in prop::collection::vec((prop::option::weighted(0.8, status()), status()), 1..40)
    ) {
        let (preds, truths): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        match classification_report(&preds, &truths) {
            Ok(rep) => {
                for (class, got) in [(SurvivalStatus::Living, rep.living), (SurvivalStatus::Deceased, rep.deceased)] {
                    let (p, r, f) = prf_oracle(&preds, &truths, class);
                    prop_assert!(close(got.precision, p) && close(got.recall, r) && close(got.f1, f));
                }
                prop_assert!(close(rep.macro_avg.f1, (rep.living.f1 + rep.deceased.f1) / 2.0));
                prop_assert_eq!(rep.n_scoreable + rep.n_missing, preds.len());
            }
            Err(e) => {
                prop_assert_eq!(e, MetricError::AllMissing);
                prop_assert!(preds.iter().all(Option::is_none));
            }
        }
    }

    #[test]
    fn regression_matches_oracle(
        rows in prop::collection::vec((prop::option::weighted(0.8, 0.0f64..120.0), 0.0f64..120.0), 1..40)
    ) {
        let (preds, truths): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        match regression_report(&preds, &truths) {
            Ok(rep) => {
                let (mae, rmse) = mae_rmse_oracle(&preds, &truths);
                prop_assert!(close(rep.mae, mae) && close(rep.rmse, rmse));
                prop_assert!(rep.rmse >= rep.mae - 1e-12);
                prop_assert_eq!(rep.n_scoreable + rep.n_missing, preds.len());
            }
            Err(e) => prop_assert_eq!(e, MetricError::AllMissing),
        }
    }

    #[test]
    fn equal_pairs_have_zero_error(truths in prop::collection::vec(0.0f64..500.0, 1..30)) {
        let preds: Vec<Option<f64>> = truths.iter().copied().map(Some).collect();
        let rep = regression_report(&preds, &truths).unwrap();
        prop_assert_eq!((rep.mae, rep.rmse), (0.0, 0.0));
    }
}

#[test]
fn length_mismatch_is_an_error() {
    assert!(matches!(
        bleu(&["a"], &["a", "b"]),
        Err(MetricError::LengthMismatch { left: 1, right: 2 })
    ));
    assert!(regression_report(&[Some(1.0)], &[]).is_err());
}
