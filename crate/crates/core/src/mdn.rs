//! Feed-forward mixture density network conditioned on a one-hot state.
//!
//! Architecture: `one-hot(K) -> tanh(Q) -> tanh(Q) -> 5M` where the head is
//! split into M mixture logits (softmax), 2M means (identity) and 2M
//! variance pre-activations (softplus, floored at [`VAR_FLOOR`]).
//!
//! Because the input is one-hot, a mini-batch only ever needs K distinct
//! forward passes: per-sample work reduces to accumulating the loss
//! gradient with respect to the head outputs of the sample's state, followed
//! by one backward pass per state.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hmm::{log_sum_exp, HmmGmmModel};
use crate::trace::Feature;

pub const VAR_FLOOR: f64 = 1e-6;
/// Posterior weights below this are dropped from the training set.
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-4;
const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Error)]
pub enum MdnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Number of scalar parameters of a network with `states` inputs, two hidden
/// layers of width `hidden` and `mixtures` output components.
pub fn mdn_param_count(states: usize, hidden: usize, mixtures: usize) -> usize {
    hidden * (states + hidden + 5 * mixtures) + 2 * hidden + 5 * mixtures
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<Feature>,
    pub vars: Vec<Feature>,
}

impl MixtureParams {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Negative log-likelihood `-ln sum_m pi_m N(z; mu_m, diag(var_m))`.
pub fn mdn_nll(params: &MixtureParams, z: &Feature) -> f64 {
    let terms: Vec<f64> = (0..params.len())
        .map(|m| params.weights[m].ln() + crate::hmm::diag_normal_ln_pdf(z, &params.means[m], &params.vars[m]))
        .collect();
    -log_sum_exp(&terms)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameter layout offsets inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    k: usize,
    q: usize,
    m: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    total: usize,
}

impl Layout {
    fn new(k: usize, q: usize, m: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + q * k;
        let w2 = b1 + q;
        let b2 = w2 + q * q;
        let w3 = b2 + q;
        let b3 = w3 + 5 * m * q;
        let total = b3 + 5 * m;
        Self { k, q, m, w1, b1, w2, b2, w3, b3, total }
    }
}

/// Weights are stored flat and row-major: `W1 (Q x K)`, `b1`, `W2 (Q x Q)`,
/// `b2`, `W3 (5M x Q)`, `b3`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnModel {
    layout: Layout,
    params: Vec<f64>,
}

struct Activations {
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

impl MdnModel {
    pub fn zeros(states: usize, hidden: usize, mixtures: usize) -> Self {
        let layout = Layout::new(states, hidden, mixtures);
        Self { layout, params: vec![0.0; layout.total] }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn random<R: Rng>(states: usize, hidden: usize, mixtures: usize, rng: &mut R) -> Self {
        let mut model = Self::zeros(states, hidden, mixtures);
        let l = model.layout;
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut model.params[range] {
                *p = rng.gen_range(-bound..=bound);
            }
        };
        fill(l.w1..l.b1, l.k);
        fill(l.w2..l.b2, l.q);
        fill(l.w3..l.b3, l.q);
        model
    }

    pub fn from_params(states: usize, hidden: usize, mixtures: usize, params: Vec<f64>) -> Result<Self, MdnError> {
        if states == 0 || hidden == 0 || mixtures == 0 {
            return Err(MdnError::InvalidModel(format!("K={states}, Q={hidden}, M={mixtures} must be positive")));
        }
        let layout = Layout::new(states, hidden, mixtures);
        if params.len() != layout.total {
            return Err(MdnError::InvalidModel(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(MdnError::InvalidModel("non-finite parameter".into()));
        }
        Ok(Self { layout, params })
    }

    /// Builds a network whose forward pass reproduces the given per-state
    /// mixtures. Requires `hidden >= mixtures.len()`.
    pub fn from_state_mixtures(mixtures: &[MixtureParams], hidden: usize) -> Result<Self, MdnError> {
        let k = mixtures.len();
        if k == 0 || hidden < k {
            return Err(MdnError::Config(format!("need 1 <= K <= Q, got K={k}, Q={hidden}")));
        }
        let m = mixtures[0].len();
        if m == 0 || mixtures.iter().any(|p| p.len() != m) {
            return Err(MdnError::Config("all states need the same non-zero component count".into()));
        }
        let mut model = Self::zeros(k, hidden, m);
        let l = model.layout;
        for s in 0..k {
            model.params[l.w1 + s * k + s] = 1.0;
        }
        for i in 0..hidden {
            model.params[l.w2 + i * hidden + i] = 1.0;
        }
        let scale = 1.0f64.tanh().tanh();
        for (s, mix) in mixtures.iter().enumerate() {
            let mut target = vec![0.0; 5 * m];
            for c in 0..m {
                if !(mix.weights[c] > 0.0) || mix.vars[c].iter().any(|&v| !(v > VAR_FLOOR)) {
                    return Err(MdnError::Config(format!("state {s} component {c} is not representable")));
                }
                target[c] = mix.weights[c].ln();
                for d in 0..2 {
                    target[m + 2 * c + d] = mix.means[c][d];
                    target[3 * m + 2 * c + d] = mix.vars[c][d].exp_m1().ln();
                }
            }
            for (o, t) in target.iter().enumerate() {
                model.params[l.w3 + o * hidden + s] = t / scale;
            }
        }
        Ok(model)
    }

    pub fn states(&self) -> usize {
        self.layout.k
    }

    pub fn hidden(&self) -> usize {
        self.layout.q
    }

    pub fn mixtures(&self) -> usize {
        self.layout.m
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn activations(&self, state: usize) -> Activations {
        let Layout { k, q, m, w1, b1, w2, b2, w3, b3, .. } = self.layout;
        let p = &self.params;
        let h1: Vec<f64> = (0..q).map(|i| (p[w1 + i * k + state] + p[b1 + i]).tanh()).collect();
        let h2: Vec<f64> = (0..q)
            .map(|i| {
                let row = &p[w2 + i * q..w2 + (i + 1) * q];
                (row.iter().zip(&h1).map(|(w, h)| w * h).sum::<f64>() + p[b2 + i]).tanh()
            })
            .collect();
        let out: Vec<f64> = (0..5 * m)
            .map(|o| {
                let row = &p[w3 + o * q..w3 + (o + 1) * q];
                row.iter().zip(&h2).map(|(w, h)| w * h).sum::<f64>() + p[b3 + o]
            })
            .collect();
        Activations { h1, h2, out }
    }

    fn mixture_from_head(&self, out: &[f64]) -> MixtureParams {
        let m = self.layout.m;
        let logits = &out[..m];
        let norm = log_sum_exp(logits);
        let weights = logits.iter().map(|l| (l - norm).exp()).collect();
        let means = (0..m).map(|c| [out[m + 2 * c], out[m + 2 * c + 1]]).collect();
        let vars = (0..m)
            .map(|c| {
                [
                    softplus(out[3 * m + 2 * c]).max(VAR_FLOOR),
                    softplus(out[3 * m + 2 * c + 1]).max(VAR_FLOOR),
                ]
            })
            .collect();
        MixtureParams { weights, means, vars }
    }

    /// Mixture emitted for one state.
    pub fn forward(&self, state: usize) -> MixtureParams {
        assert!(state < self.layout.k, "state {state} out of range");
        let act = self.activations(state);
        self.mixture_from_head(&act.out)
    }

    /// Posterior-weighted mean NLL of a batch and its gradient.
    pub fn batch_loss_and_grad(&self, batch: &[WeightedSample]) -> (f64, Vec<f64>) {
        let Layout { k, q, m, w1, b1, w2, b2, w3, b3, .. } = self.layout;
        let mut grad = vec![0.0; self.params.len()];
        let total_w: f64 = batch.iter().map(|s| s.weight).sum();
        if !(total_w > 0.0) {
            return (0.0, grad);
        }
        let mut present = vec![false; k];
        for s in batch {
            present[s.state] = true;
        }
        let acts: Vec<Option<(Activations, MixtureParams)>> = (0..k)
            .map(|s| {
                present[s].then(|| {
                    let a = self.activations(s);
                    let mix = self.mixture_from_head(&a.out);
                    (a, mix)
                })
            })
            .collect();

        // d(loss)/d(head output), accumulated per state.
        let mut head_grad = vec![vec![0.0; 5 * m]; k];
        let mut loss = 0.0;
        let mut terms = vec![0.0; m];
        for sample in batch {
            let (_, mix) = acts[sample.state].as_ref().unwrap();
            let z = sample.z;
            for c in 0..m {
                let v = mix.vars[c];
                let d0 = z[0] - mix.means[c][0];
                let d1 = z[1] - mix.means[c][1];
                terms[c] = mix.weights[c].ln() - LN_2PI - 0.5 * (v[0].ln() + v[1].ln() + d0 * d0 / v[0] + d1 * d1 / v[1]);
            }
            let lse = log_sum_exp(&terms);
            let scale = sample.weight / total_w;
            loss += scale * -lse;
            let g = &mut head_grad[sample.state];
            let act_out = &acts[sample.state].as_ref().unwrap().0.out;
            for c in 0..m {
                let r = (terms[c] - lse).exp();
                g[c] += scale * (mix.weights[c] - r);
                for d in 0..2 {
                    let var = mix.vars[c][d];
                    let diff = z[d] - mix.means[c][d];
                    g[m + 2 * c + d] += scale * (-r * diff / var);
                    let pre = act_out[3 * m + 2 * c + d];
                    // the floor has zero gradient
                    if softplus(pre) > VAR_FLOOR {
                        let dvar = 0.5 * r * (1.0 / var - diff * diff / (var * var));
                        g[3 * m + 2 * c + d] += scale * dvar * sigmoid(pre);
                    }
                }
            }
        }

        let p = &self.params;
        for s in 0..k {
            let Some((act, _)) = &acts[s] else { continue };
            let g = &head_grad[s];
            let mut dh2 = vec![0.0; q];
            for o in 0..5 * m {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                grad[b3 + o] += go;
                let row = w3 + o * q;
                for i in 0..q {
                    grad[row + i] += go * act.h2[i];
                    dh2[i] += go * p[row + i];
                }
            }
            let da2: Vec<f64> = dh2.iter().zip(&act.h2).map(|(d, h)| d * (1.0 - h * h)).collect();
            let mut dh1 = vec![0.0; q];
            for i in 0..q {
                let gi = da2[i];
                grad[b2 + i] += gi;
                let row = w2 + i * q;
                for j in 0..q {
                    grad[row + j] += gi * act.h1[j];
                    dh1[j] += gi * p[row + j];
                }
            }
            for i in 0..q {
                let da1 = dh1[i] * (1.0 - act.h1[i] * act.h1[i]);
                grad[b1 + i] += da1;
                grad[w1 + i * k + s] += da1;
            }
        }
        (loss, grad)
    }

    /// Posterior-weighted mean NLL of a batch.
    pub fn batch_loss(&self, batch: &[WeightedSample]) -> f64 {
        let total_w: f64 = batch.iter().map(|s| s.weight).sum();
        if !(total_w > 0.0) {
            return 0.0;
        }
        let mixes: Vec<MixtureParams> = (0..self.layout.k).map(|s| self.forward(s)).collect();
        batch.iter().map(|s| s.weight / total_w * mdn_nll(&mixes[s.state], &s.z)).sum()
    }
}

/// One `(state, packet, posterior weight)` training triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSample {
    pub state: usize,
    pub z: Feature,
    pub weight: f64,
}

/// Expands every packet into one sample per state whose posterior exceeds
/// `weight_floor`, weighted by that posterior.
pub fn build_weighted_set(flows: &[Vec<Feature>], hmm: &HmmGmmModel, weight_floor: f64) -> Vec<WeightedSample> {
    use rayon::prelude::*;
    let per_flow: Vec<Vec<WeightedSample>> = flows
        .par_iter()
        .map(|flow| {
            let gamma = hmm.posteriors(flow);
            let mut out = Vec::new();
            for (z, row) in flow.iter().zip(gamma.rows()) {
                for (state, &g) in row.iter().enumerate() {
                    if g > weight_floor {
                        out.push(WeightedSample { state, z: *z, weight: g });
                    }
                }
            }
            out
        })
        .collect();
    per_flow.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 90, batch_size: 1024, learning_rate: 1e-3, clip_norm: 5.0, seed: 0 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), MdnError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(MdnError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0) {
            return Err(MdnError::Config("learning_rate and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Scales `grad` in place so its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct MdnFit {
    pub model: MdnModel,
    /// Weighted mean NLL per epoch, evaluated batch by batch during training.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    /// Largest gradient norm applied in any step (after clipping).
    pub max_applied_grad_norm: f64,
}

/// Minimizes the posterior-weighted NLL with Adam and global-norm clipping.
pub fn train_mdn(
    samples: &[WeightedSample],
    states: usize,
    hidden: usize,
    mixtures: usize,
    cfg: &TrainConfig,
) -> Result<MdnFit, MdnError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(MdnError::Config("empty training set".into()));
    }
    if states == 0 || hidden == 0 || mixtures == 0 {
        return Err(MdnError::Config(format!("K={states}, Q={hidden}, M={mixtures} must be positive")));
    }
    if let Some(s) = samples.iter().find(|s| s.state >= states || !(s.weight >= 0.0)) {
        return Err(MdnError::Config(format!("invalid sample {s:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MdnModel::random(states, hidden, mixtures, &mut rng);
    let mut adam = Adam::new(model.param_count(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    let mut max_applied = 0.0f64;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            let w: f64 = batch.iter().map(|s| s.weight).sum();
            if !(w > 0.0) {
                continue;
            }
            let (loss, mut grad) = model.batch_loss_and_grad(&batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(MdnError::NonFinite { epoch: epoch + 1, batch: b, loss });
            }
            let norm = clip_grad_norm(&mut grad, cfg.clip_norm);
            max_applied = max_applied.max(norm.min(cfg.clip_norm));
            adam.update(&mut model.params, &grad);
            steps += 1;
            loss_sum += loss * w;
            weight_sum += w;
        }
        epoch_losses.push(loss_sum / weight_sum);
    }
    Ok(MdnFit { model, epoch_losses, steps, max_applied_grad_norm: max_applied })
}
