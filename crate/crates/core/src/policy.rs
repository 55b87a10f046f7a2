//! Desk-scale autoregressive policy and optimizers.
//!
//! Logits at position `t` after token `prev` are
//! `pos_bias[t][v] + trans[prev][v]`, with `prev = BOS` at `t = 0`.
//! Parameters live in one flat vector: all position biases first, then the
//! transition table with the BOS row last.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    vocab_size: usize,
    max_len: usize,
    params: Vec<f64>,
}

impl ToyPolicy {
    /// All-zero parameters, i.e. uniform at every position.
    pub fn new(vocab_size: usize, max_len: usize) -> Self {
        assert!(vocab_size >= 1 && max_len >= 1, "empty policy shape");
        ToyPolicy {
            vocab_size,
            max_len,
            params: vec![0.0; Self::param_count_for(vocab_size, max_len)],
        }
    }

    pub fn random<R: Rng + ?Sized>(vocab_size: usize, max_len: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::new(vocab_size, max_len);
        for x in &mut p.params {
            *x = rng.random_range(-scale..=scale);
        }
        p
    }

    pub fn param_count_for(vocab_size: usize, max_len: usize) -> usize {
        max_len * vocab_size + (vocab_size + 1) * vocab_size
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn bos(&self) -> usize {
        self.vocab_size
    }

    fn pos_index(&self, t: usize, v: usize) -> usize {
        t * self.vocab_size + v
    }

    fn trans_index(&self, prev: usize, v: usize) -> usize {
        self.max_len * self.vocab_size + prev * self.vocab_size + v
    }

    fn prev_of(&self, tokens: &[usize], t: usize) -> usize {
        if t == 0 {
            self.bos()
        } else {
            tokens[t - 1]
        }
    }

    /// Next-token distribution at position `t` after `prev` (`None` = BOS).
    pub fn distribution(&self, t: usize, prev: Option<usize>) -> Vec<f64> {
        assert!(t < self.max_len, "position {t} beyond max_len {}", self.max_len);
        self.distribution_after(t, prev.unwrap_or(self.bos()))
    }

    fn distribution_after(&self, t: usize, prev: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.vocab_size)
            .map(|v| self.params[self.pos_index(t, v)] + self.params[self.trans_index(prev, v)])
            .collect();
        softmax(&logits)
    }

    /// Teacher-forced distributions for every position of `tokens`.
    pub fn distributions(&self, tokens: &[usize]) -> Vec<Vec<f64>> {
        (0..tokens.len())
            .map(|t| self.distribution(t, (t > 0).then(|| tokens[t - 1])))
            .collect()
    }

    /// Per-token log-probabilities of `tokens`.
    pub fn token_logps(&self, tokens: &[usize]) -> Vec<f64> {
        (0..tokens.len())
            .map(|t| {
                let d = self.distribution(t, (t > 0).then(|| tokens[t - 1]));
                d[tokens[t]].ln()
            })
            .collect()
    }

    pub fn sequence_logp(&self, tokens: &[usize]) -> f64 {
        self.token_logps(tokens).iter().sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        for t in 0..len {
            let d = self.distribution(t, out.last().copied());
            out.push(sample_categorical(&d, rng));
        }
        out
    }

    /// Adds `coeffs[t] * d(log pi(tokens[t]))/d theta` into `grad`.
    pub fn accumulate_logp_grad(&self, tokens: &[usize], coeffs: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(tokens.len(), coeffs.len());
        for t in 0..tokens.len() {
            let c = coeffs[t];
            if c == 0.0 {
                continue;
            }
            let prev = self.prev_of(tokens, t);
            let d = self.distribution_after(t, prev);
            for (v, &p) in d.iter().enumerate() {
                let g = c * ((v == tokens[t]) as u8 as f64 - p);
                grad[self.pos_index(t, v)] += g;
                grad[self.trans_index(prev, v)] += g;
            }
        }
    }

    /// Adds `d/d theta [ sum_v weights[t][v] * log pi_t(v) ]` into `grad`,
    /// scaled by `scale`, for each position of the teacher-forced `tokens`.
    ///
    /// With one-hot weights this is the log-likelihood gradient; with a soft
    /// target distribution it is the cross-entropy gradient against it.
    pub fn accumulate_soft_grad(&self, tokens: &[usize], t: usize, weights: &[f64], scale: f64, grad: &mut [f64]) {
        let prev = self.prev_of(tokens, t);
        let d = self.distribution_after(t, prev);
        let mass: f64 = weights.iter().sum();
        for (v, &p) in d.iter().enumerate() {
            let g = scale * (weights[v] - mass * p);
            grad[self.pos_index(t, v)] += g;
            grad[self.trans_index(prev, v)] += g;
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Gradient-ascent optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Moves `params` along `grad` (ascent).
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let bc1 = 1.0 - self.beta1.powi(self.t);
                let bc2 = 1.0 - self.beta2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] += self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distributions_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ToyPolicy::random(7, 5, 3.0, &mut rng);
        for t in 0..5 {
            for prev in (0..7).map(Some).chain([None]) {
                let s: f64 = p.distribution(t, prev).iter().sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sequence_logp_is_sum_of_token_logps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ToyPolicy::random(5, 6, 2.0, &mut rng);
        let seq = p.sample(6, &mut rng);
        let mut manual = 0.0;
        for t in 0..6 {
            let prev = if t == 0 { None } else { Some(seq[t - 1]) };
            manual += p.distribution(t, prev)[seq[t]].ln();
        }
        assert_eq!(p.sequence_logp(&seq), manual);
    }

    #[test]
    fn logp_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ToyPolicy::random(4, 3, 1.0, &mut rng);
        let seq = p.sample(3, &mut rng);
        let mut grad = vec![0.0; p.params().len()];
        p.accumulate_logp_grad(&seq, &[1.0; 3], &mut grad);
        let h = 1e-6;
        for (i, &g) in grad.iter().enumerate() {
            let orig = p.params()[i];
            p.params_mut()[i] = orig + h;
            let up = p.sequence_logp(&seq);
            p.params_mut()[i] = orig - h;
            let down = p.sequence_logp(&seq);
            p.params_mut()[i] = orig;
            assert!((g - (up - down) / (2.0 * h)).abs() < 1e-7, "param {i}");
        }
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut params = vec![0.5, -1.0, 2.0];
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut opt = Optimizer::new(kind, 0.0, 3);
            let before = params.clone();
            opt.ascend(&mut params, &[3.0, -4.0, 0.1]);
            assert_eq!(params, before);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = ToyPolicy::random(6, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let a = p.sample(4, &mut ChaCha8Rng::seed_from_u64(5));
        let b = p.sample(4, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }
}
