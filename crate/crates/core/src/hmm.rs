//! K-state hidden Markov model with J-component diagonal Gaussian mixture
//! emissions, fitted by Baum-Welch over many independent flows.
//!
//! All recursions run in log space. Flows are independent sequences sharing
//! one parameter set: the E-step is evaluated per flow (in parallel) and the
//! sufficient statistics are reduced in flow order, so a fit is reproducible
//! for a given seed regardless of thread count.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::trace::Feature;

const LN_2PI: f64 = 1.8378770664093453;
/// Components or states with less accumulated responsibility than this keep
/// their previous parameters in the M-step.
const MIN_MASS: f64 = 1e-10;
const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HmmError {
    #[error("init error: {0}")]
    Init(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// One diagonal-covariance Gaussian of a state's emission mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussComponent {
    pub weight: f64,
    pub mean: Feature,
    pub var: Feature,
}

impl GaussComponent {
    pub fn log_density(&self, z: &Feature) -> f64 {
        diag_normal_ln_pdf(z, &self.mean, &self.var)
    }
}

/// `ln N(z; mean, diag(var))` for a 2-vector.
pub fn diag_normal_ln_pdf(z: &Feature, mean: &Feature, var: &Feature) -> f64 {
    let d0 = z[0] - mean[0];
    let d1 = z[1] - mean[1];
    -LN_2PI - 0.5 * (var[0].ln() + var[1].ln() + d0 * d0 / var[0] + d1 * d1 / var[1])
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Inverse-CDF draw from unnormalized-safe probabilities with a single uniform.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if target < acc {
            return i;
        }
    }
    // u * total can round up to total; land on the last non-zero entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmGmmModel {
    pub states: usize,
    pub components: usize,
    pub alpha: Vec<f64>,
    /// Row-major `states x states` transition matrix.
    pub trans: Vec<f64>,
    /// `emissions[k][j]`.
    pub emissions: Vec<Vec<GaussComponent>>,
    pub min_covar: f64,
}

impl HmmGmmModel {
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.trans[from * self.states + to]
    }

    pub fn transition_row(&self, from: usize) -> &[f64] {
        &self.trans[from * self.states..(from + 1) * self.states]
    }

    /// Checks every structural and stochastic invariant.
    pub fn validate(&self) -> Result<(), HmmError> {
        let (k, j) = (self.states, self.components);
        let bad = |m: String| Err(HmmError::InvalidModel(m));
        if k == 0 || j == 0 {
            return bad(format!("K={k}, J={j} must be positive"));
        }
        if self.alpha.len() != k || self.trans.len() != k * k || self.emissions.len() != k {
            return bad("parameter shapes do not match K".into());
        }
        if !(self.min_covar > 0.0 && self.min_covar.is_finite()) {
            return bad(format!("min_covar {} must be positive", self.min_covar));
        }
        let is_prob = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !self.alpha.iter().all(|&a| is_prob(a)) || (self.alpha.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL {
            return bad("initial distribution is not a probability vector".into());
        }
        for i in 0..k {
            let row = self.transition_row(i);
            if !row.iter().all(|&a| is_prob(a)) || (row.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL {
                return bad(format!("transition row {i} is not stochastic"));
            }
        }
        for (s, comps) in self.emissions.iter().enumerate() {
            if comps.len() != j {
                return bad(format!("state {s} has {} components, expected {j}", comps.len()));
            }
            if (comps.iter().map(|c| c.weight).sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL {
                return bad(format!("state {s} mixture weights do not sum to 1"));
            }
            for c in comps {
                if !is_prob(c.weight) || !c.mean.iter().all(|m| m.is_finite()) {
                    return bad(format!("state {s} has a non-finite component"));
                }
                if !c.var.iter().all(|&v| v.is_finite() && v >= self.min_covar) {
                    return bad(format!("state {s} variance below floor {}", self.min_covar));
                }
            }
        }
        Ok(())
    }

    /// Log emission density of state `k` at `z`.
    pub fn emission_ln_pdf(&self, k: usize, z: &Feature) -> f64 {
        let terms: Vec<f64> = self.emissions[k].iter().map(|c| c.weight.ln() + c.log_density(z)).collect();
        log_sum_exp(&terms)
    }

    /// Relabels states so that new state `i` is old state `perm[i]`.
    pub fn permute_states(&self, perm: &[usize]) -> Self {
        let k = self.states;
        let mut trans = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                trans[i * k + j] = self.transition(perm[i], perm[j]);
            }
        }
        Self {
            alpha: perm.iter().map(|&p| self.alpha[p]).collect(),
            trans,
            emissions: perm.iter().map(|&p| self.emissions[p].clone()).collect(),
            ..self.clone()
        }
    }

    pub fn log_likelihood(&self, flow: &[Feature]) -> f64 {
        if flow.is_empty() {
            return 0.0;
        }
        let lp = LogParams::new(self);
        let emis = lp.emissions(flow);
        let fwd = lp.forward(&emis.state);
        log_sum_exp(&fwd[(flow.len() - 1) * self.states..])
    }

    /// Smoothed state posteriors `p(s_t = k | z_1..T)`.
    pub fn posteriors(&self, flow: &[Feature]) -> PosteriorMatrix {
        let k = self.states;
        if flow.is_empty() {
            return PosteriorMatrix { states: k, gamma: Vec::new() };
        }
        let lp = LogParams::new(self);
        let emis = lp.emissions(flow);
        let fwd = lp.forward(&emis.state);
        let bwd = lp.backward(&emis.state, flow.len());
        let gamma = smoothed(&fwd, &bwd, flow.len(), k);
        PosteriorMatrix { states: k, gamma }
    }

    /// Draws a state path of length `len` from the Markov chain.
    pub fn sample_states<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let mut s = sample_categorical(&self.alpha, rng);
        out.push(s);
        for _ in 1..len {
            s = sample_categorical(self.transition_row(s), rng);
            out.push(s);
        }
        out
    }

    /// Draws states and emissions from the HMM-GMM itself.
    pub fn sample_sequence<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> (Vec<usize>, Vec<Feature>) {
        let states = self.sample_states(len, rng);
        let weights: Vec<Vec<f64>> = self.emissions.iter().map(|c| c.iter().map(|g| g.weight).collect()).collect();
        let obs = states
            .iter()
            .map(|&s| {
                let c = &self.emissions[s][sample_categorical(&weights[s], rng)];
                let e0: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                [c.mean[0] + e0 * c.var[0].sqrt(), c.mean[1] + e1 * c.var[1].sqrt()]
            })
            .collect();
        (states, obs)
    }

    /// Stationary distribution of the transition matrix by power iteration.
    pub fn stationary_distribution(&self) -> Vec<f64> {
        let k = self.states;
        let mut p = vec![1.0 / k as f64; k];
        for _ in 0..10_000 {
            let mut next = vec![0.0; k];
            for i in 0..k {
                for j in 0..k {
                    next[j] += p[i] * self.transition(i, j);
                }
            }
            let delta: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            p = next;
            if delta < 1e-15 {
                break;
            }
        }
        p
    }
}

/// Row-major `T x K` matrix of state posteriors for one flow.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    pub states: usize,
    pub gamma: Vec<f64>,
}

impl PosteriorMatrix {
    pub fn len(&self) -> usize {
        self.gamma.len() / self.states
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.gamma[t * self.states..(t + 1) * self.states]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.gamma.chunks(self.states)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub log_likelihood_per_iteration: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmmFitConfig {
    pub states: usize,
    pub components: usize,
    pub min_covar: f64,
    pub max_iter: usize,
    /// Stop once the total log-likelihood gain drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for HmmFitConfig {
    fn default() -> Self {
        Self { states: 3, components: 3, min_covar: 1e-3, max_iter: 200, tol: 1e-4, seed: 0 }
    }
}

/// Log-domain parameters precomputed once per E-step.
struct LogParams {
    k: usize,
    j: usize,
    ln_alpha: Vec<f64>,
    ln_trans: Vec<f64>,
    /// Per component: ln weight + normalizing constant, means, inverse variances.
    ln_norm: Vec<f64>,
    mean: Vec<Feature>,
    inv_var: Vec<Feature>,
}

struct FlowEmissions {
    /// `T x K` state log densities.
    state: Vec<f64>,
    /// `T x K x J` weighted component log densities.
    comp: Vec<f64>,
}

impl LogParams {
    fn new(m: &HmmGmmModel) -> Self {
        let comps = m.emissions.iter().flatten();
        Self {
            k: m.states,
            j: m.components,
            ln_alpha: m.alpha.iter().map(|a| a.ln()).collect(),
            ln_trans: m.trans.iter().map(|a| a.ln()).collect(),
            ln_norm: comps
                .clone()
                .map(|c| c.weight.ln() - LN_2PI - 0.5 * (c.var[0].ln() + c.var[1].ln()))
                .collect(),
            mean: comps.clone().map(|c| c.mean).collect(),
            inv_var: comps.map(|c| [1.0 / c.var[0], 1.0 / c.var[1]]).collect(),
        }
    }

    fn emissions(&self, flow: &[Feature]) -> FlowEmissions {
        let (k, j) = (self.k, self.j);
        let mut state = vec![0.0; flow.len() * k];
        let mut comp = vec![0.0; flow.len() * k * j];
        for (t, z) in flow.iter().enumerate() {
            for c in 0..k * j {
                let d0 = z[0] - self.mean[c][0];
                let d1 = z[1] - self.mean[c][1];
                comp[t * k * j + c] = self.ln_norm[c] - 0.5 * (d0 * d0 * self.inv_var[c][0] + d1 * d1 * self.inv_var[c][1]);
            }
            for s in 0..k {
                state[t * k + s] = log_sum_exp(&comp[(t * k + s) * j..(t * k + s + 1) * j]);
            }
        }
        FlowEmissions { state, comp }
    }

    fn forward(&self, emis: &[f64]) -> Vec<f64> {
        let k = self.k;
        let t_len = emis.len() / k;
        let mut fwd = vec![0.0; emis.len()];
        for s in 0..k {
            fwd[s] = self.ln_alpha[s] + emis[s];
        }
        let mut buf = vec![0.0; k];
        for t in 1..t_len {
            for s in 0..k {
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = fwd[(t - 1) * k + i] + self.ln_trans[i * k + s];
                }
                fwd[t * k + s] = emis[t * k + s] + log_sum_exp(&buf);
            }
        }
        fwd
    }

    fn backward(&self, emis: &[f64], t_len: usize) -> Vec<f64> {
        let k = self.k;
        let mut bwd = vec![0.0; t_len * k];
        let mut buf = vec![0.0; k];
        for t in (0..t_len.saturating_sub(1)).rev() {
            for i in 0..k {
                for (s, b) in buf.iter_mut().enumerate() {
                    *b = self.ln_trans[i * k + s] + emis[(t + 1) * k + s] + bwd[(t + 1) * k + s];
                }
                bwd[t * k + i] = log_sum_exp(&buf);
            }
        }
        bwd
    }
}

fn smoothed(fwd: &[f64], bwd: &[f64], t_len: usize, k: usize) -> Vec<f64> {
    let mut gamma = vec![0.0; t_len * k];
    for t in 0..t_len {
        let row: Vec<f64> = (0..k).map(|s| fwd[t * k + s] + bwd[t * k + s]).collect();
        let norm = log_sum_exp(&row);
        for s in 0..k {
            gamma[t * k + s] = (row[s] - norm).exp();
        }
        // Renormalize away the rounding left by the exp.
        let sum: f64 = gamma[t * k..(t + 1) * k].iter().sum();
        gamma[t * k..(t + 1) * k].iter_mut().for_each(|g| *g /= sum);
    }
    gamma
}

/// Sufficient statistics of one E-step.
#[derive(Clone)]
struct Stats {
    log_likelihood: f64,
    initial: Vec<f64>,
    trans: Vec<f64>,
    weight: Vec<f64>,
    sum: Vec<Feature>,
    sum_sq: Vec<Feature>,
}

impl Stats {
    fn zeros(k: usize, j: usize) -> Self {
        Self {
            log_likelihood: 0.0,
            initial: vec![0.0; k],
            trans: vec![0.0; k * k],
            weight: vec![0.0; k * j],
            sum: vec![[0.0; 2]; k * j],
            sum_sq: vec![[0.0; 2]; k * j],
        }
    }

    fn add(&mut self, other: &Stats) {
        self.log_likelihood += other.log_likelihood;
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.initial, &other.initial);
        add(&mut self.trans, &other.trans);
        add(&mut self.weight, &other.weight);
        for (a, b) in self.sum.iter_mut().zip(&other.sum).chain(self.sum_sq.iter_mut().zip(&other.sum_sq)) {
            a[0] += b[0];
            a[1] += b[1];
        }
    }
}

fn flow_stats(lp: &LogParams, flow: &[Feature]) -> Stats {
    let (k, j) = (lp.k, lp.j);
    let t_len = flow.len();
    let mut st = Stats::zeros(k, j);
    let emis = lp.emissions(flow);
    let fwd = lp.forward(&emis.state);
    let bwd = lp.backward(&emis.state, t_len);
    let ll = log_sum_exp(&fwd[(t_len - 1) * k..]);
    st.log_likelihood = ll;
    let gamma = smoothed(&fwd, &bwd, t_len, k);

    st.initial.copy_from_slice(&gamma[..k]);
    for t in 0..t_len.saturating_sub(1) {
        for i in 0..k {
            let a = fwd[t * k + i] - ll;
            for s in 0..k {
                let b = lp.ln_trans[i * k + s] + emis.state[(t + 1) * k + s] + bwd[(t + 1) * k + s];
                st.trans[i * k + s] += (a + b).exp();
            }
        }
    }
    for (t, z) in flow.iter().enumerate() {
        for s in 0..k {
            let g = gamma[t * k + s];
            if g == 0.0 {
                continue;
            }
            let ls = emis.state[t * k + s];
            for c in 0..j {
                let idx = s * j + c;
                let r = g * (emis.comp[t * k * j + idx] - ls).exp();
                st.weight[idx] += r;
                st.sum[idx][0] += r * z[0];
                st.sum[idx][1] += r * z[1];
                st.sum_sq[idx][0] += r * z[0] * z[0];
                st.sum_sq[idx][1] += r * z[1] * z[1];
            }
        }
    }
    st
}

fn e_step(model: &HmmGmmModel, flows: &[Vec<Feature>]) -> Stats {
    let lp = LogParams::new(model);
    let per_flow: Vec<Stats> = flows.par_iter().filter(|f| !f.is_empty()).map(|f| flow_stats(&lp, f)).collect();
    let mut total = Stats::zeros(model.states, model.components);
    for s in &per_flow {
        total.add(s);
    }
    total
}

fn m_step(model: &mut HmmGmmModel, st: &Stats) {
    let (k, j) = (model.states, model.components);
    let n0: f64 = st.initial.iter().sum();
    if n0 > 0.0 {
        model.alpha = st.initial.iter().map(|v| v / n0).collect();
    }
    for i in 0..k {
        let row = &st.trans[i * k..(i + 1) * k];
        let total: f64 = row.iter().sum();
        if total > MIN_MASS {
            for s in 0..k {
                model.trans[i * k + s] = row[s] / total;
            }
        }
    }
    for s in 0..k {
        let state_mass: f64 = st.weight[s * j..(s + 1) * j].iter().sum();
        if state_mass <= MIN_MASS {
            continue;
        }
        for c in 0..j {
            let idx = s * j + c;
            let w = st.weight[idx];
            let comp = &mut model.emissions[s][c];
            comp.weight = w / state_mass;
            if w <= MIN_MASS {
                continue;
            }
            for d in 0..2 {
                let mean = st.sum[idx][d] / w;
                let var = st.sum_sq[idx][d] / w - mean * mean;
                comp.mean[d] = mean;
                comp.var[d] = var.max(model.min_covar);
            }
        }
    }
}

fn kmeans_pp<R: Rng>(points: &[Feature], count: usize, rng: &mut R) -> Vec<Feature> {
    let mut centers = vec![points[rng.gen_range(0..points.len())]];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < count {
        let next = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // every point already coincides with a center
            Err(_) => rng.gen_range(0..points.len()),
        };
        let c = points[next];
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn sq_dist(a: &Feature, b: &Feature) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: &Feature, centers: &[Feature]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

const LLOYD_ITERS: usize = 10;

/// Seeds a model from pooled normalized features.
///
/// State centroids come from k-means++ seeding refined by a few Lloyd
/// iterations; each state's J component means are then k-means++ seeded
/// inside that state's cluster. Each component's variance is the spread of
/// the cluster points nearest its mean (pooled variance when fewer than two),
/// floored at `min_covar`; weights, `alpha` and transition rows start uniform.
pub fn init_hmm(flows: &[Vec<Feature>], cfg: &HmmFitConfig) -> Result<HmmGmmModel, HmmError> {
    let (k, j) = (cfg.states, cfg.components);
    if k == 0 || j == 0 {
        return Err(HmmError::Init(format!("K={k} and J={j} must be at least 1")));
    }
    if !(cfg.min_covar > 0.0) {
        return Err(HmmError::Init(format!("min_covar {} must be positive", cfg.min_covar)));
    }
    let points: Vec<Feature> = flows.iter().flatten().copied().collect();
    if points.len() < k * j {
        return Err(HmmError::Init(format!("{} packets is fewer than K*J = {}", points.len(), k * j)));
    }
    if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(HmmError::Init("non-finite feature vector".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = points.len() as f64;
    let mut mean = [0.0; 2];
    for p in &points {
        mean[0] += p[0] / n;
        mean[1] += p[1] / n;
    }
    let mut var = [0.0; 2];
    for p in &points {
        var[0] += (p[0] - mean[0]).powi(2) / n;
        var[1] += (p[1] - mean[1]).powi(2) / n;
    }
    let var = [var[0].max(cfg.min_covar), var[1].max(cfg.min_covar)];

    let mut centers = kmeans_pp(&points, k, &mut rng);
    let mut assign = vec![0usize; points.len()];
    for _ in 0..LLOYD_ITERS {
        for (a, p) in assign.iter_mut().zip(&points) {
            *a = nearest(p, &centers);
        }
        let mut acc = vec![([0.0; 2], 0usize); k];
        for (a, p) in assign.iter().zip(&points) {
            acc[*a].0[0] += p[0];
            acc[*a].0[1] += p[1];
            acc[*a].1 += 1;
        }
        for (c, (s, cnt)) in centers.iter_mut().zip(&acc) {
            if *cnt > 0 {
                *c = [s[0] / *cnt as f64, s[1] / *cnt as f64];
            }
        }
    }
    for (a, p) in assign.iter_mut().zip(&points) {
        *a = nearest(p, &centers);
    }

    let emissions = (0..k)
        .map(|s| {
            let members: Vec<Feature> = points.iter().zip(&assign).filter(|(_, a)| **a == s).map(|(p, _)| *p).collect();
            let pool = if members.len() >= j { &members } else { &points };
            let means = if j == 1 {
                vec![centroid(pool)]
            } else {
                kmeans_pp(pool, j, &mut rng)
            };
            let mut groups = vec![Vec::new(); j];
            for p in pool {
                groups[nearest(p, &means)].push(*p);
            }
            means
                .into_iter()
                .zip(&groups)
                .map(|(m, g)| {
                    let var = if g.len() >= 2 { spread(g, &m, cfg.min_covar) } else { var };
                    GaussComponent { weight: 1.0 / j as f64, mean: m, var }
                })
                .collect()
        })
        .collect();

    let model = HmmGmmModel {
        states: k,
        components: j,
        alpha: vec![1.0 / k as f64; k],
        trans: vec![1.0 / k as f64; k * k],
        emissions,
        min_covar: cfg.min_covar,
    };
    model.validate()?;
    Ok(model)
}

/// Per-dimension mean squared deviation from `center`, floored.
fn spread(points: &[Feature], center: &Feature, floor: f64) -> Feature {
    let n = points.len() as f64;
    let v = points.iter().fold([0.0; 2], |acc, p| {
        [acc[0] + (p[0] - center[0]).powi(2) / n, acc[1] + (p[1] - center[1]).powi(2) / n]
    });
    [v[0].max(floor), v[1].max(floor)]
}

fn centroid(points: &[Feature]) -> Feature {
    let n = points.len() as f64;
    points.iter().fold([0.0; 2], |acc, p| [acc[0] + p[0] / n, acc[1] + p[1] / n])
}

/// Baum-Welch over all flows, starting from [`init_hmm`].
pub fn fit_hmm_gmm(flows: &[Vec<Feature>], cfg: &HmmFitConfig) -> Result<(HmmGmmModel, FitReport), HmmError> {
    if cfg.max_iter == 0 {
        return Err(HmmError::Fit("max_iter must be at least 1".into()));
    }
    let model = init_hmm(flows, cfg)?;
    fit_from(model, flows, cfg.max_iter, cfg.tol)
}

/// Runs EM from a given starting model.
pub fn fit_from(
    mut model: HmmGmmModel,
    flows: &[Vec<Feature>],
    max_iter: usize,
    tol: f64,
) -> Result<(HmmGmmModel, FitReport), HmmError> {
    let mut lls: Vec<f64> = Vec::with_capacity(max_iter);
    let mut converged = false;
    for _ in 0..max_iter {
        let st = e_step(&model, flows);
        if !st.log_likelihood.is_finite() {
            return Err(HmmError::Fit(format!(
                "non-finite log-likelihood {} after {} iterations",
                st.log_likelihood,
                lls.len()
            )));
        }
        let prev = lls.last().copied();
        lls.push(st.log_likelihood);
        if let Some(prev) = prev {
            if st.log_likelihood - prev < tol {
                converged = true;
                break;
            }
        }
        m_step(&mut model, &st);
    }
    model.validate().map_err(|e| HmmError::Fit(e.to_string()))?;
    let report = FitReport { iterations_run: lls.len(), log_likelihood_per_iteration: lls, converged };
    Ok((model, report))
}
