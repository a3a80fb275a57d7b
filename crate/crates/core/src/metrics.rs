//! Twelve-statistic comparison of a real and a synthetic flow set.
//!
//! For each feature (payload bytes, iat seconds):
//!
//! * KS distance and KL divergence between average per-flow empirical CDFs
//!   on a shared grid,
//! * KL divergence between flow-averaged periodograms,
//! * RMSE between flow-averaged autocorrelation functions,
//! * bias and range coverage of per-flow spectral entropies.
//!
//! All distances are zero when both sets are identical. The sum of the
//! twelve values is the sweep's ranking score.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::trace::Flow;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Payload,
    Iat,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 2] = [FeatureKind::Payload, FeatureKind::Iat];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Payload => "payload",
            FeatureKind::Iat => "iat",
        }
    }

    pub fn series(self, flow: &Flow) -> Vec<f64> {
        match self {
            FeatureKind::Payload => flow.payloads(),
            FeatureKind::Iat => flow.iats(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub grid_size: usize,
    pub segment_len: usize,
    pub max_lag: usize,
    pub eps: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { grid_size: 512, segment_len: 128, max_lag: 50, eps: 1e-12 }
    }
}

/// Mean of per-flow empirical CDFs on a shared ascending grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AvgFlowCdf {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

/// `size` evenly spaced points spanning the pooled range of both flow sets.
pub fn shared_grid(real: &[Flow], synth: &[Flow], feature: FeatureKind, size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(MetricsError::Domain(format!("grid needs at least 2 points, got {size}")));
    }
    let (lo, hi) = real
        .iter()
        .chain(synth)
        .flat_map(|f| feature.series(f))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(MetricsError::Domain("no finite values to span a grid".into()));
    }
    let step = (hi - lo) / (size - 1) as f64;
    let mut grid: Vec<f64> = (0..size).map(|i| lo + step * i as f64).collect();
    grid[size - 1] = hi;
    Ok(grid)
}

pub fn avg_flow_cdf(flows: &[Flow], feature: FeatureKind, grid: &[f64]) -> Result<AvgFlowCdf> {
    if flows.is_empty() {
        return Err(MetricsError::Domain("average CDF of an empty flow set".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(MetricsError::Domain("grid must be ascending".into()));
    }
    let per_flow: Vec<Vec<f64>> = flows
        .par_iter()
        .map(|f| {
            let mut xs = feature.series(f);
            xs.sort_by(f64::total_cmp);
            let n = xs.len() as f64;
            let mut i = 0;
            grid.iter()
                .map(|&u| {
                    while i < xs.len() && xs[i] <= u {
                        i += 1;
                    }
                    if n > 0.0 {
                        i as f64 / n
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut values = vec![0.0; grid.len()];
    for cdf in &per_flow {
        values.iter_mut().zip(cdf).for_each(|(v, c)| *v += c);
    }
    let n = flows.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(AvgFlowCdf { grid: grid.to_vec(), values })
}

fn check_same_grid(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits()) {
        return Err(MetricsError::Domain("evaluation grids differ".into()));
    }
    Ok(())
}

pub fn ks_distance(real: &AvgFlowCdf, synth: &AvgFlowCdf) -> Result<f64> {
    check_same_grid(&real.grid, &synth.grid)?;
    Ok(real.values.iter().zip(&synth.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// `sum p ln(p/q)` after flooring both vectors at `eps` and renormalizing.
pub fn kl_divergence(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let floor = |v: &[f64]| {
        let f: Vec<f64> = v.iter().map(|x| x.max(eps)).collect();
        let s: f64 = f.iter().sum();
        f.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let (p, q) = (floor(p), floor(q));
    p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0)
}

/// Per-bin probability masses of an average CDF (the first bin holds `F(u_0)`).
pub fn cdf_masses(cdf: &AvgFlowCdf) -> Vec<f64> {
    let mut prev = 0.0;
    cdf.values
        .iter()
        .map(|&v| {
            let d = (v - prev).max(0.0);
            prev = v;
            d
        })
        .collect()
}

pub fn cdf_kl(real: &AvgFlowCdf, synth: &AvgFlowCdf, eps: f64) -> Result<f64> {
    check_same_grid(&real.grid, &synth.grid)?;
    Ok(kl_divergence(&cdf_masses(real), &cdf_masses(synth), eps))
}

/// Flow-averaged power spectrum normalized to a probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate {
    /// Cycles per packet.
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

/// One-sided periodogram of fixed-length, mean-removed segments.
#[derive(Clone)]
pub struct Periodogram {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Periodogram {
    pub fn new(segment_len: usize) -> Self {
        assert!(segment_len >= 2, "segment length must be at least 2");
        let fft = FftPlanner::new().plan_fft_forward(segment_len);
        Self { len: segment_len, fft }
    }

    pub fn bins(&self) -> usize {
        self.len / 2 + 1
    }

    pub fn freqs(&self) -> Vec<f64> {
        (0..self.bins()).map(|k| k as f64 / self.len as f64).collect()
    }

    /// `|X_k|^2 / N` for `k = 0..=N/2`, after removing the mean of the used
    /// samples and zero-padding or truncating to the segment length.
    pub fn compute(&self, series: &[f64]) -> Vec<f64> {
        let used = &series[..series.len().min(self.len)];
        let mean = if used.is_empty() { 0.0 } else { used.iter().sum::<f64>() / used.len() as f64 };
        let mut buf: Vec<Complex<f64>> = (0..self.len)
            .map(|i| Complex::new(used.get(i).map_or(0.0, |v| v - mean), 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf[..self.bins()].iter().map(|c| c.norm_sqr() / self.len as f64).collect()
    }
}

fn usable(flows: &[Flow]) -> impl Iterator<Item = &Flow> {
    flows.iter().filter(|f| f.len() >= 2)
}

pub fn psd_estimate(flows: &[Flow], feature: FeatureKind, segment_len: usize) -> Result<SpectrumEstimate> {
    if flows.is_empty() {
        return Err(MetricsError::Domain("PSD of an empty flow set".into()));
    }
    if segment_len < 2 {
        return Err(MetricsError::Domain(format!("segment length {segment_len} < 2")));
    }
    let pg = Periodogram::new(segment_len);
    let per_flow: Vec<Vec<f64>> = usable(flows).collect::<Vec<_>>().par_iter().map(|f| pg.compute(&feature.series(f))).collect();
    let mut power = vec![0.0; pg.bins()];
    for p in &per_flow {
        power.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let total: f64 = power.iter().sum();
    if total > 0.0 {
        power.iter_mut().for_each(|p| *p /= total);
    } else {
        power.iter_mut().for_each(|p| *p = 1.0 / pg.bins() as f64);
    }
    Ok(SpectrumEstimate { freqs: pg.freqs(), power })
}

pub fn psd_kl(real: &SpectrumEstimate, synth: &SpectrumEstimate, eps: f64) -> Result<f64> {
    check_same_grid(&real.freqs, &synth.freqs)?;
    Ok(kl_divergence(&real.power, &synth.power, eps))
}

/// Biased sample autocorrelation `r[1..=max_lag]`; zeros for a constant series.
pub fn acf(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    let mut out = vec![0.0; max_lag];
    if n < 2 {
        return out;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let denom: f64 = centered.iter().map(|c| c * c).sum();
    if !(denom > 0.0) {
        return out;
    }
    for (lag, r) in (1..=max_lag).zip(out.iter_mut()) {
        if lag >= n {
            break;
        }
        *r = centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / denom;
    }
    out
}

/// Mean of per-flow ACFs over flows with at least two packets.
pub fn mean_acf(flows: &[Flow], feature: FeatureKind, max_lag: usize) -> Result<Vec<f64>> {
    let per_flow: Vec<Vec<f64>> = usable(flows).collect::<Vec<_>>().par_iter().map(|f| acf(&feature.series(f), max_lag)).collect();
    if per_flow.is_empty() {
        return Err(MetricsError::Domain("no flow with at least 2 packets".into()));
    }
    let mut mean = vec![0.0; max_lag];
    for r in &per_flow {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    let n = per_flow.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

pub fn acf_rmse(real: &[Flow], synth: &[Flow], feature: FeatureKind, max_lag: usize) -> Result<f64> {
    if max_lag == 0 {
        return Err(MetricsError::Domain("ACF lag must be at least 1".into()));
    }
    Ok(rmse(&mean_acf(real, feature, max_lag)?, &mean_acf(synth, feature, max_lag)?))
}

/// Largest lag usable by every flow with at least two packets, capped at `cap`.
pub fn effective_max_lag(real: &[Flow], synth: &[Flow], cap: usize) -> Result<usize> {
    let shortest = usable(real)
        .chain(usable(synth))
        .map(Flow::len)
        .min()
        .ok_or_else(|| MetricsError::Domain("no flow with at least 2 packets".into()))?;
    Ok(cap.min(shortest - 1).max(1))
}

/// Normalized Shannon entropy of one periodogram, in `[0, 1]`.
pub fn periodogram_entropy(power: &[f64]) -> f64 {
    let total: f64 = power.iter().sum();
    if !(total > 0.0) || power.len() < 2 {
        return 0.0;
    }
    let h: f64 = power
        .iter()
        .map(|p| p / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    (h / (power.len() as f64).ln()).clamp(0.0, 1.0)
}

pub fn spectral_entropy(series: &[f64], segment_len: usize) -> f64 {
    if series.len() < 2 {
        return 0.0;
    }
    periodogram_entropy(&Periodogram::new(segment_len).compute(series))
}

fn flow_entropies(flows: &[Flow], feature: FeatureKind, segment_len: usize) -> Result<Vec<f64>> {
    let pg = Periodogram::new(segment_len);
    let h: Vec<f64> = usable(flows)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|f| periodogram_entropy(&pg.compute(&feature.series(f))))
        .collect();
    if h.is_empty() {
        return Err(MetricsError::Domain("no flow with at least 2 packets".into()));
    }
    Ok(h)
}

/// `|mean(H_real) - mean(H_synth)|` over per-flow entropies.
pub fn entropy_bias_of(real: &[f64], synth: &[f64]) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (mean(real) - mean(synth)).abs()
}

/// How far the synthetic entropy range overshoots the real one, relative
/// to the real range.
pub fn entropy_coverage_of(real: &[f64], synth: &[f64]) -> Result<f64> {
    let range = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let (rmin, rmax) = range(real);
    let (smin, smax) = range(synth);
    let span = rmax - rmin;
    if !(span > 0.0) {
        return Err(MetricsError::Domain("real spectral entropies have zero range".into()));
    }
    Ok(((smax - rmax).max(0.0) + (rmin - smin).max(0.0)) / span)
}

pub fn entropy_bias(real: &[Flow], synth: &[Flow], feature: FeatureKind, segment_len: usize) -> Result<f64> {
    Ok(entropy_bias_of(
        &flow_entropies(real, feature, segment_len)?,
        &flow_entropies(synth, feature, segment_len)?,
    ))
}

pub fn entropy_coverage(real: &[Flow], synth: &[Flow], feature: FeatureKind, segment_len: usize) -> Result<f64> {
    entropy_coverage_of(
        &flow_entropies(real, feature, segment_len)?,
        &flow_entropies(synth, feature, segment_len)?,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricReport {
    pub ks_payload: f64,
    pub ks_iat: f64,
    pub kl_psd_payload: f64,
    pub kl_psd_iat: f64,
    pub kl_cdf_payload: f64,
    pub kl_cdf_iat: f64,
    pub cov_payload: f64,
    pub cov_iat: f64,
    pub bias_payload: f64,
    pub bias_iat: f64,
    pub acf_rmse_payload: f64,
    pub acf_rmse_iat: f64,
    pub aggregate: f64,
}

impl MetricReport {
    pub const NAMES: [&'static str; 12] = [
        "ks_payload",
        "ks_iat",
        "kl_psd_payload",
        "kl_psd_iat",
        "kl_cdf_payload",
        "kl_cdf_iat",
        "cov_payload",
        "cov_iat",
        "bias_payload",
        "bias_iat",
        "acf_rmse_payload",
        "acf_rmse_iat",
    ];

    pub fn values(&self) -> [f64; 12] {
        [
            self.ks_payload,
            self.ks_iat,
            self.kl_psd_payload,
            self.kl_psd_iat,
            self.kl_cdf_payload,
            self.kl_cdf_iat,
            self.cov_payload,
            self.cov_iat,
            self.bias_payload,
            self.bias_iat,
            self.acf_rmse_payload,
            self.acf_rmse_iat,
        ]
    }

    fn with_aggregate(mut self) -> Self {
        self.aggregate = self.values().iter().sum();
        self
    }

    /// `name = value` lines, the twelve metrics then `aggregate`.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        for (n, v) in Self::NAMES.iter().zip(self.values()) {
            s.push_str(&format!("{n} = {v:e}\n"));
        }
        s.push_str(&format!("aggregate = {:e}\n", self.aggregate));
        s
    }

    pub fn csv_header() -> String {
        let mut h = Self::NAMES.join(",");
        h.push_str(",aggregate");
        h
    }

    pub fn csv_row(&self) -> String {
        self.values().iter().chain([self.aggregate].iter()).map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
    }
}

/// Report plus the CDF curves behind the distributional metrics.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub cdf_payload: (AvgFlowCdf, AvgFlowCdf),
    pub cdf_iat: (AvgFlowCdf, AvgFlowCdf),
}

struct FeatureMetrics {
    ks: f64,
    kl_cdf: f64,
    kl_psd: f64,
    acf_rmse: f64,
    bias: f64,
    cov: f64,
    cdfs: (AvgFlowCdf, AvgFlowCdf),
}

fn feature_metrics(real: &[Flow], synth: &[Flow], feature: FeatureKind, cfg: &MetricConfig, lag: usize) -> Result<FeatureMetrics> {
    let grid = shared_grid(real, synth, feature, cfg.grid_size)?;
    let cr = avg_flow_cdf(real, feature, &grid)?;
    let cs = avg_flow_cdf(synth, feature, &grid)?;
    let pr = psd_estimate(real, feature, cfg.segment_len)?;
    let ps = psd_estimate(synth, feature, cfg.segment_len)?;
    let hr = flow_entropies(real, feature, cfg.segment_len)?;
    let hs = flow_entropies(synth, feature, cfg.segment_len)?;
    Ok(FeatureMetrics {
        ks: ks_distance(&cr, &cs)?,
        kl_cdf: cdf_kl(&cr, &cs, cfg.eps)?,
        kl_psd: psd_kl(&pr, &ps, cfg.eps)?,
        acf_rmse: acf_rmse(real, synth, feature, lag)?,
        bias: entropy_bias_of(&hr, &hs),
        cov: entropy_coverage_of(&hr, &hs)?,
        cdfs: (cr, cs),
    })
}

pub fn evaluate_detailed(real: &[Flow], synth: &[Flow], cfg: &MetricConfig) -> Result<Evaluation> {
    if real.is_empty() || synth.is_empty() {
        return Err(MetricsError::Domain("both flow sets must be non-empty".into()));
    }
    let lag = effective_max_lag(real, synth, cfg.max_lag)?;
    let p = feature_metrics(real, synth, FeatureKind::Payload, cfg, lag)?;
    let i = feature_metrics(real, synth, FeatureKind::Iat, cfg, lag)?;
    let report = MetricReport {
        ks_payload: p.ks,
        ks_iat: i.ks,
        kl_psd_payload: p.kl_psd,
        kl_psd_iat: i.kl_psd,
        kl_cdf_payload: p.kl_cdf,
        kl_cdf_iat: i.kl_cdf,
        cov_payload: p.cov,
        cov_iat: i.cov,
        bias_payload: p.bias,
        bias_iat: i.bias,
        acf_rmse_payload: p.acf_rmse,
        acf_rmse_iat: i.acf_rmse,
        aggregate: 0.0,
    }
    .with_aggregate();
    Ok(Evaluation { report, cdf_payload: p.cdfs, cdf_iat: i.cdfs })
}

pub fn evaluate(real: &[Flow], synth: &[Flow], cfg: &MetricConfig) -> Result<MetricReport> {
    Ok(evaluate_detailed(real, synth, cfg)?.report)
}

/// Writes `u,real,synth` rows for one feature.
pub fn write_cdf_csv<W: Write>(sink: W, real: &AvgFlowCdf, synth: &AvgFlowCdf) -> Result<()> {
    check_same_grid(&real.grid, &synth.grid)?;
    let mut w = std::io::BufWriter::new(sink);
    writeln!(w, "u,real,synth")?;
    for ((u, a), b) in real.grid.iter().zip(&real.values).zip(&synth.values) {
        writeln!(w, "{u},{a},{b}")?;
    }
    w.flush()?;
    Ok(())
}
