//! Independent reference implementations used as test oracles. Each one is
//! written from the metric's definition with no code shared with the crate.
#![allow(dead_code)]

use oncoalign_core::coldstart::{ClusterResult, EmbeddedCorpus};
use oncoalign_core::records::SurvivalStatus;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

fn count_of(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

/// Clipped overlap by quadratic scanning.
fn overlap(c: &[Vec<String>], r: &[Vec<String>]) -> usize {
    let mut seen: Vec<&Vec<String>> = Vec::new();
    let mut total = 0;
    for g in c {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        total += count_of(c, g).min(count_of(r, g));
    }
    total
}

/// Corpus BLEU with the crate's documented rules: orders with no candidate
/// n-grams are dropped, a zero match count becomes 1e-9, BP = exp(1 - r/c).
pub fn bleu_oracle(cands: &[String], refs: &[String]) -> f64 {
    let mut m = [0.0f64; 4];
    let mut t = [0.0f64; 4];
    let (mut c_len, mut r_len) = (0.0, 0.0);
    for (c, r) in cands.iter().zip(refs) {
        let (c, r) = (words(c), words(r));
        c_len += c.len() as f64;
        r_len += r.len() as f64;
        for n in 1..=4 {
            let (cg, rg) = (ngrams(&c, n), ngrams(&r, n));
            m[n - 1] += overlap(&cg, &rg) as f64;
            t[n - 1] += cg.len() as f64;
        }
    }
    if c_len == 0.0 {
        return 0.0;
    }
    let orders: Vec<usize> = (0..4).filter(|&i| t[i] > 0.0).collect();
    let mut log_p = 0.0;
    for &i in &orders {
        let num = if m[i] == 0.0 { 1e-9 } else { m[i] };
        log_p += (num / t[i]).ln() / orders.len() as f64;
    }
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len / c_len).exp() };
    100.0 * bp * log_p.exp()
}

fn f1(overlap: f64, c: f64, r: f64) -> f64 {
    if overlap == 0.0 {
        0.0
    } else {
        let (p, rc) = (overlap / c, overlap / r);
        2.0 * p * rc / (p + rc)
    }
}

pub fn rouge_n_oracle(cand: &str, reference: &str, n: usize) -> f64 {
    let (c, r) = (words(cand), words(reference));
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let (cg, rg) = (ngrams(&c, n), ngrams(&r, n));
    if cg.is_empty() && rg.is_empty() {
        return if c == r { 1.0 } else { 0.0 };
    }
    if cg.is_empty() || rg.is_empty() {
        return 0.0;
    }
    f1(overlap(&cg, &rg) as f64, cg.len() as f64, rg.len() as f64)
}

/// LCS by exhaustive memoized recursion over suffixes.
pub fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, 0, 0, &mut memo)
}

pub fn rouge_l_oracle(cand: &str, reference: &str) -> f64 {
    let (c, r) = (words(cand), words(reference));
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    f1(lcs_oracle(&c, &r) as f64, c.len() as f64, r.len() as f64)
}

/// Precision, recall and F1 for one class from the definitions, over pairs
/// with a prediction.
pub fn prf_oracle(
    preds: &[Option<SurvivalStatus>],
    truths: &[SurvivalStatus],
    class: SurvivalStatus,
) -> (f64, f64, f64) {
    let pairs: Vec<(SurvivalStatus, SurvivalStatus)> =
        preds.iter().zip(truths).filter_map(|(p, t)| p.map(|p| (p, *t))).collect();
    let predicted = pairs.iter().filter(|(p, _)| *p == class).count() as f64;
    let actual = pairs.iter().filter(|(_, t)| *t == class).count() as f64;
    let hit = pairs.iter().filter(|(p, t)| *p == class && *t == class).count() as f64;
    let p = if predicted == 0.0 { 0.0 } else { hit / predicted };
    let r = if actual == 0.0 { 0.0 } else { hit / actual };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

pub fn mae_rmse_oracle(preds: &[Option<f64>], truths: &[f64]) -> (f64, f64) {
    let errs: Vec<f64> = preds
        .iter()
        .zip(truths)
        .filter_map(|(p, t)| p.map(|p| p - t))
        .collect();
    let n = errs.len() as f64;
    (
        errs.iter().map(|e| e.abs()).sum::<f64>() / n,
        (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
    )
}

/// OLS slope from the normal equations in raw sums.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Exemplars by brute force: for each cluster in order, the unselected
/// member nearest the centroid, else the nearest unselected point; ties to
/// the smaller id.
pub fn exemplars_oracle(corpus: &EmbeddedCorpus, clusters: &ClusterResult) -> Vec<(usize, String)> {
    let ids = corpus.ids();
    let vs = corpus.vectors();
    let mut used: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for (j, c) in clusters.centroids.iter().enumerate() {
        let pick = |members_only: bool, used: &[usize]| {
            (0..vs.len())
                .filter(|i| !used.contains(i) && (!members_only || clusters.assignments[*i] == j))
                .min_by(|&a, &b| {
                    sq_dist(&vs[a], c)
                        .partial_cmp(&sq_dist(&vs[b], c))
                        .unwrap()
                        .then_with(|| ids[a].cmp(&ids[b]))
                })
        };
        if let Some(i) = pick(true, &used).or_else(|| pick(false, &used)) {
            used.push(i);
            out.push((j, ids[i].clone()));
        }
    }
    out
}

/// Central finite difference of `f` at `x`.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}

/// A clinical-schema output with the given prediction lines.
pub fn clinical_output(status: &str, months: &str) -> String {
    format!(
        "<reasoning>\nStep 1: Reviewed the record.\nStep 2: Weighed the treatment history.\n</reasoning>\n\n<comment>\nLimited data.\n</comment>\n\n<prediction>\nOverall Survival Status: {status}\nEstimated Overall Survival (months): {months}\n</prediction>\n"
    )
}

use oncoalign_core::grpo::{grpo_objective, objective_logp_grad, GrpoConfig, GrpoGroup, GrpoOutput, RatioGranularity};
use oncoalign_core::policy::ToyPolicy;
use rand::{Rng, SeedableRng};

pub const GRAD_VOCAB: usize = 4;
pub const GRAD_LEN: usize = 3;
/// Ratios closer than this to a clip boundary are resampled.
pub const KINK_MARGIN: f64 = 1e-3;

/// A random group over a 32-parameter policy: sampling and reference
/// policies are perturbations of the current one.
pub struct GradCase {
    pub policy: ToyPolicy,
    pub tokens: Vec<Vec<usize>>,
    pub logp_old: Vec<Vec<f64>>,
    pub logp_ref: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub cfg: GrpoConfig,
}

impl GradCase {
    pub fn sample<R: Rng>(rng: &mut R) -> GradCase {
        loop {
            let policy = ToyPolicy::random(GRAD_VOCAB, GRAD_LEN, 0.8, rng);
            let perturb = |rng: &mut R, scale: f64| {
                let mut p = policy.clone();
                for x in p.params_mut() {
                    *x += rng.random_range(-scale..scale);
                }
                p
            };
            let old = perturb(rng, 0.15);
            let reference = perturb(rng, 0.5);
            let g = rng.random_range(2..=6);
            let tokens: Vec<Vec<usize>> = (0..g).map(|_| old.sample(GRAD_LEN, rng)).collect();
            let cfg = GrpoConfig {
                group_size: g,
                clip_epsilon: 0.2,
                kl_coeff: rng.random_range(0.0..0.5),
                ratio_granularity: if rng.random_bool(0.5) {
                    RatioGranularity::Sequence
                } else {
                    RatioGranularity::Token
                },
                ..GrpoConfig::default()
            };
            let case = GradCase {
                logp_old: tokens.iter().map(|t| old.token_logps(t)).collect(),
                logp_ref: tokens.iter().map(|t| reference.token_logps(t)).collect(),
                rewards: (0..g).map(|_| rng.random_range(0.0..2.5)).collect(),
                tokens,
                policy,
                cfg,
            };
            if !case.near_kink() {
                return case;
            }
        }
    }

    fn ratios(&self, policy: &ToyPolicy) -> Vec<f64> {
        let mut out = Vec::new();
        for (t, lo) in self.tokens.iter().zip(&self.logp_old) {
            let lc = policy.token_logps(t);
            match self.cfg.ratio_granularity {
                RatioGranularity::Sequence => out.push((lc.iter().sum::<f64>() - lo.iter().sum::<f64>()).exp()),
                RatioGranularity::Token => out.extend(lc.iter().zip(lo).map(|(c, o)| (c - o).exp())),
            }
        }
        out
    }

    fn near_kink(&self) -> bool {
        let eps = self.cfg.clip_epsilon;
        self.ratios(&self.policy)
            .iter()
            .any(|r| (r - (1.0 - eps)).abs() < KINK_MARGIN || (r - (1.0 + eps)).abs() < KINK_MARGIN)
    }

    pub fn group(&self, policy: &ToyPolicy) -> GrpoGroup {
        let outputs = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| GrpoOutput {
                tokens: t.clone(),
                logp_current: policy.token_logps(t),
                logp_old: self.logp_old[i].clone(),
                logp_ref: self.logp_ref[i].clone(),
                reward: self.rewards[i],
            })
            .collect();
        GrpoGroup::new("q", outputs, self.cfg.std_guard).unwrap()
    }

    pub fn objective_at(&self, params: &[f64]) -> f64 {
        let mut p = self.policy.clone();
        p.params_mut().copy_from_slice(params);
        grpo_objective(&self.group(&p), &self.cfg)
    }

    pub fn analytic_gradient(&self) -> Vec<f64> {
        let group = self.group(&self.policy);
        let coeffs = objective_logp_grad(&group, &self.cfg);
        let mut grad = vec![0.0; self.policy.params().len()];
        for (t, c) in self.tokens.iter().zip(&coeffs) {
            self.policy.accumulate_logp_grad(t, c, &mut grad);
        }
        grad
    }

    /// Relative error between the analytic and central-difference gradients.
    pub fn gradient_error(&self, h: f64) -> f64 {
        let fd = fd_gradient(self.policy.params(), h, |p| self.objective_at(p));
        relative_error(&self.analytic_gradient(), &fd, 1e-8)
    }
}

use oncoalign_core::metrics::report::EvalRecord;

/// An evaluation record plus the prediction it was built to carry; `None`
/// marks an injected malformed output.
pub struct SyntheticSample {
    pub record: EvalRecord,
    pub pred: Option<(SurvivalStatus, f64)>,
}

const MALFORMED: [&str; 5] = [
    "",
    "The patient will probably not survive long given the metastatic burden.",
    "<reasoning>\nStep 1: Reviewed the record.\nStep 2: The output was cut off here",
    "<reasoning>\nStep 1: Reviewed.\n</reasoning>\n\n<comment>\nNone.\n</comment>\n\n<prediction>\nOverall Survival Status: 1:DECEASED\nEstimated Overall Survival (months): unknown\n</prediction>\n",
    "<prediction>\nOverall Survival Status: DECEASED\nEstimated Overall Survival (months): 14\n</prediction>",
];

/// `n` records, each malformed with probability `malformed_rate`. Well-formed
/// outputs use strict, soft-only or untagged layouts.
pub fn synthetic_corpus<R: Rng>(rng: &mut R, n: usize, malformed_rate: f64) -> Vec<SyntheticSample> {
    let status = |rng: &mut R| if rng.random_bool(0.5) { SurvivalStatus::Deceased } else { SurvivalStatus::Living };
    (0..n)
        .map(|i| {
            let truth_status = status(rng);
            let truth_months = rng.random_range(0..1200) as f64 / 10.0;
            let (output_text, pred) = if rng.random_bool(malformed_rate) {
                (MALFORMED[rng.random_range(0..MALFORMED.len())].to_string(), None)
            } else {
                let s = status(rng);
                let tenths = rng.random_range(0..1200);
                let months = format!("{}.{}", tenths / 10, tenths % 10);
                let strict = clinical_output(s.label(), &months);
                let text = match rng.random_range(0..3) {
                    0 => strict,
                    1 => format!("Here is my answer.\n{strict}"),
                    _ => format!("Overall Survival Status: {}\nEstimated Overall Survival (months): {months}", s.label()),
                };
                (text, Some((s, tenths as f64 / 10.0)))
            };
            SyntheticSample {
                record: EvalRecord {
                    id: format!("S{i:05}"),
                    cancer_type: ["NSCLC", "Breast", "Colorectal"][i % 3].to_string(),
                    output_text,
                    truth_status,
                    truth_months,
                    reference_trace: None,
                    summary_text: None,
                    prompt_text: None,
                },
                pred,
            }
        })
        .collect()
}

/// Builds the report for `samples` and compares its accounting and outcome
/// metrics with oracle values over the scoreable subset.
pub fn check_missing_accounting(samples: &[SyntheticSample], tol: f64) -> Result<(), String> {
    use oncoalign_core::embed::OfflineProvider;
    use oncoalign_core::metrics::report::{build_report, ReportOptions};

    let records: Vec<EvalRecord> = samples.iter().map(|s| s.record.clone()).collect();
    let (report, rows) = build_report(&records, &OfflineProvider::default(), &ReportOptions::default());
    let n = samples.len();
    let want_missing = samples.iter().filter(|s| s.pred.is_none()).count();
    let m = report.missing;
    if m.n_total != n || m.n_scoreable + m.n_missing != n || m.n_missing != want_missing {
        return Err(format!("accounting {m:?}, expected {want_missing} missing of {n}"));
    }
    for (row, s) in rows.iter().zip(samples) {
        let got = row.pred_status.as_deref().zip(row.pred_months);
        let want = s.pred.map(|(st, mo)| (st.label(), mo));
        if row.id != s.record.id || got != want {
            return Err(format!("{}: parsed {got:?}, built {want:?}", s.record.id));
        }
    }
    let preds: Vec<Option<SurvivalStatus>> = samples.iter().map(|s| s.pred.map(|p| p.0)).collect();
    let truths: Vec<SurvivalStatus> = samples.iter().map(|s| s.record.truth_status).collect();
    let months: Vec<Option<f64>> = samples.iter().map(|s| s.pred.map(|p| p.1)).collect();
    let truth_months: Vec<f64> = samples.iter().map(|s| s.record.truth_months).collect();
    let close = |a: f64, b: f64| (a - b).abs() <= tol;
    if want_missing == n {
        return match (&report.classification, &report.regression) {
            (None, None) => Ok(()),
            _ => Err("metrics reported with nothing scoreable".into()),
        };
    }
    let c = report.classification.as_ref().ok_or("no classification report")?;
    let r = report.regression.as_ref().ok_or("no regression report")?;
    let (pd, rd, fd) = prf_oracle(&preds, &truths, SurvivalStatus::Deceased);
    let (pl, rl, fl) = prf_oracle(&preds, &truths, SurvivalStatus::Living);
    let hits = preds.iter().zip(&truths).filter(|(p, t)| **p == Some(**t)).count() as f64;
    let (mae, rmse) = mae_rmse_oracle(&months, &truth_months);
    let checks = [
        ("deceased precision", c.deceased.precision, pd),
        ("deceased recall", c.deceased.recall, rd),
        ("deceased f1", c.deceased.f1, fd),
        ("living precision", c.living.precision, pl),
        ("living recall", c.living.recall, rl),
        ("living f1", c.living.f1, fl),
        ("macro f1", c.macro_avg.f1, (fd + fl) / 2.0),
        ("accuracy", c.accuracy, hits / (n - want_missing) as f64),
        ("mae", r.mae, mae),
        ("rmse", r.rmse, rmse),
    ];
    for (name, got, want) in checks {
        if !close(got, want) {
            return Err(format!("{name}: {got} vs oracle {want}"));
        }
    }
    if c.n_missing != want_missing || r.n_missing != want_missing {
        return Err("per-task missing counts disagree".into());
    }
    Ok(())
}

use oncoalign_core::coldstart::default_k;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn corpus(vectors: Vec<Vec<f64>>) -> EmbeddedCorpus {
    let ids = (0..vectors.len()).map(|i| format!("id{i:04}")).collect();
    EmbeddedCorpus::new(ids, vectors).unwrap()
}

pub fn uniform_corpus(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> EmbeddedCorpus {
    corpus((0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
}

/// `per_blob` Gaussian points (sd 1) around each of `centers`, with labels.
pub fn blobs(rng: &mut ChaCha8Rng, centers: &[[f64; 2]], per_blob: usize) -> (EmbeddedCorpus, Vec<usize>) {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for (label, c) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            vectors.push(c.iter().map(|x| x + noise.sample(rng)).collect());
            labels.push(label);
        }
    }
    (corpus(vectors), labels)
}

pub fn test_corpora() -> Vec<(EmbeddedCorpus, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = Vec::new();
    for n in [5, 17, 60, 200] {
        for dim in [1, 2, 8] {
            let c = uniform_corpus(&mut rng, n, dim);
            out.push((c, default_k(n)));
        }
    }
    let (b, _) = blobs(&mut rng, &[[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]], 30);
    out.push((b, 5));
    let dup = corpus(vec![vec![1.0, 1.0]; 6].into_iter().chain(vec![vec![5.0, 5.0]; 3]).collect());
    out.push((dup, 4));
    out
}
