//! Trace-to-bundle training, length-matched generation and candidate scoring.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::generator::{self, length_histogram, BundleError, BundleMeta, ModelBundle, BUNDLE_VERSION};
use crate::hmm::{fit_hmm_gmm, FitReport, HmmError, HmmFitConfig, HmmGmmModel};
use crate::mdn::{build_weighted_set, train_mdn, MdnError, TrainConfig, WeightedSample};
use crate::metrics::{evaluate, MetricConfig, MetricReport, MetricsError};
use crate::trace::{
    clean, fit_normalizer, group_flows, normalize_flow, percentile_cap, split_flows, Feature, Flow, NormalizationStats,
    PacketRecord, TraceError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("trace: {0}")]
    Trace(#[from] TraceError),
    #[error("hmm: {0}")]
    Hmm(#[from] HmmError),
    #[error("mdn: {0}")]
    Mdn(#[from] MdnError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("bundle: {0}")]
    Bundle(#[from] BundleError),
    #[error("config: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Every knob of one train/generate/evaluate run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub protocol: String,
    pub states: usize,
    pub components: usize,
    pub min_covar: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub hidden: usize,
    pub mixtures: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub train_frac: f64,
    pub seed: u64,
    /// Quantile of the raw iat distribution above which packets are dropped.
    pub iat_quantile: f64,
    pub weight_floor: f64,
    pub mtu: u32,
    pub iat_floor: f64,
    pub metrics: MetricConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::http()
    }
}

impl PipelineConfig {
    pub fn http() -> Self {
        Self {
            protocol: "http".into(),
            states: 3,
            components: 3,
            min_covar: 1e-3,
            max_iter: 200,
            tol: 1e-4,
            hidden: 128,
            mixtures: 12,
            epochs: 90,
            batch_size: 1024,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            train_frac: 0.9,
            seed: 0,
            iat_quantile: 0.98,
            weight_floor: crate::mdn::DEFAULT_WEIGHT_FLOOR,
            mtu: generator::DEFAULT_MTU,
            iat_floor: generator::DEFAULT_IAT_FLOOR,
            metrics: MetricConfig::default(),
        }
    }

    pub fn udp() -> Self {
        Self {
            protocol: "udp".into(),
            states: 6,
            components: 7,
            min_covar: 1e-2,
            mixtures: 32,
            epochs: 30,
            ..Self::http()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "http" => Some(Self::http()),
            "udp" => Some(Self::udp()),
            _ => None,
        }
    }

    pub fn hmm_config(&self) -> HmmFitConfig {
        HmmFitConfig {
            states: self.states,
            components: self.components,
            min_covar: self.min_covar,
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
            seed: self.seed.wrapping_add(1),
        }
    }

    /// Seed of the generation session used when scoring a trained bundle.
    pub fn generation_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.states == 0 || self.components == 0 || self.hidden == 0 || self.mixtures == 0 {
            return bad("K, J, H and M must be positive".into());
        }
        if self.max_iter == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("max_iter, num_epochs and batch_size must be positive".into());
        }
        if !(self.min_covar > 0.0 && self.min_covar.is_finite()) {
            return bad(format!("min_covar must be positive, got {}", self.min_covar));
        }
        if !(self.tol >= 0.0) {
            return bad(format!("tol must be non-negative, got {}", self.tol));
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0) {
            return bad("learning_rate and clip_norm must be positive".into());
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad(format!("train_frac must lie in (0, 1), got {}", self.train_frac));
        }
        if !(self.iat_quantile > 0.0 && self.iat_quantile < 1.0) {
            return bad(format!("iat_quantile must lie in (0, 1), got {}", self.iat_quantile));
        }
        if !(self.weight_floor >= 0.0) {
            return bad(format!("weight_floor must be non-negative, got {}", self.weight_floor));
        }
        if self.mtu == 0 || !(self.iat_floor > 0.0) {
            return bad("mtu and iat_floor must be positive".into());
        }
        let m = &self.metrics;
        if m.grid_size < 2 || m.segment_len < 2 || m.max_lag == 0 || !(m.eps > 0.0) {
            return bad("grid_size and segment_len must be >= 2, max_lag >= 1, kl_eps > 0".into());
        }
        Ok(())
    }
}

/// Cleaned trace split into train and test flows.
#[derive(Debug, Clone)]
pub struct PreparedTrace {
    pub iat_cap: f64,
    pub raw_packets: usize,
    pub kept_packets: usize,
    pub train: Vec<Flow>,
    pub test: Vec<Flow>,
}

pub fn prepare(records: &[PacketRecord], cfg: &PipelineConfig) -> Result<PreparedTrace> {
    let iat_cap = percentile_cap(records, cfg.iat_quantile)?;
    let cleaned = clean(records, iat_cap);
    let flows = group_flows(&cleaned);
    let split = split_flows(&flows, cfg.train_frac, cfg.seed)?;
    Ok(PreparedTrace {
        iat_cap,
        raw_packets: records.len(),
        kept_packets: cleaned.len(),
        train: split.train,
        test: split.test,
    })
}

/// Normalizer, fitted HMM and the posterior-weighted MDN training set.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub norm: NormalizationStats,
    pub hmm: HmmGmmModel,
    pub report: FitReport,
    pub samples: Vec<WeightedSample>,
    pub flow_lengths: Vec<(u64, u64)>,
    pub elapsed: Duration,
}

pub fn fit_backbone(train: &[Flow], cfg: &PipelineConfig) -> Result<Backbone> {
    cfg.validate()?;
    let start = Instant::now();
    let norm = fit_normalizer(train)?;
    let seqs: Vec<Vec<Feature>> = train.iter().map(|f| normalize_flow(f, &norm)).collect();
    let (hmm, report) = fit_hmm_gmm(&seqs, &cfg.hmm_config())?;
    let samples = build_weighted_set(&seqs, &hmm, cfg.weight_floor);
    Ok(Backbone {
        norm,
        hmm,
        report,
        samples,
        flow_lengths: length_histogram(train.iter().map(Flow::len)),
        elapsed: start.elapsed(),
    })
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub bundle: ModelBundle,
    pub hmm_report: FitReport,
    pub mdn_losses: Vec<f64>,
    pub hmm_time: Duration,
    pub mdn_time: Duration,
}

impl Trained {
    /// `key = value` fit summary followed by the EM and MDN loss curves.
    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let b = &self.bundle;
        let _ = writeln!(s, "protocol = {}", b.meta.protocol);
        let _ = writeln!(s, "states = {}", b.hmm.states);
        let _ = writeln!(s, "components = {}", b.hmm.components);
        let _ = writeln!(s, "hidden = {}", b.mdn.hidden());
        let _ = writeln!(s, "mixtures = {}", b.mdn.mixtures());
        let _ = writeln!(s, "mdn_params = {}", b.mdn.param_count());
        let _ = writeln!(s, "em_iterations = {}", self.hmm_report.iterations_run);
        let _ = writeln!(s, "em_converged = {}", self.hmm_report.converged);
        let _ = writeln!(s, "hmm_seconds = {:.3}", self.hmm_time.as_secs_f64());
        let _ = writeln!(s, "mdn_seconds = {:.3}", self.mdn_time.as_secs_f64());
        for (i, ll) in self.hmm_report.log_likelihood_per_iteration.iter().enumerate() {
            let _ = writeln!(s, "em_loglik.{} = {ll:e}", i + 1);
        }
        for (i, l) in self.mdn_losses.iter().enumerate() {
            let _ = writeln!(s, "mdn_loss.{} = {l:e}", i + 1);
        }
        s
    }
}

/// Trains the mixture network on a fitted backbone and assembles the bundle.
pub fn fit_head(backbone: &Backbone, cfg: &PipelineConfig, created: u64) -> Result<Trained> {
    cfg.validate()?;
    let start = Instant::now();
    let fit = train_mdn(&backbone.samples, backbone.hmm.states, cfg.hidden, cfg.mixtures, &cfg.train_config())?;
    let mdn_time = start.elapsed();
    let bundle = ModelBundle {
        hmm: backbone.hmm.clone(),
        mdn: fit.model,
        norm: backbone.norm,
        mtu: cfg.mtu,
        iat_floor: cfg.iat_floor,
        meta: BundleMeta {
            protocol: cfg.protocol.clone(),
            created,
            format_version: BUNDLE_VERSION,
            flow_lengths: backbone.flow_lengths.clone(),
        },
    };
    bundle.validate()?;
    Ok(Trained {
        bundle,
        hmm_report: backbone.report.clone(),
        mdn_losses: fit.epoch_losses,
        hmm_time: backbone.elapsed,
        mdn_time,
    })
}

pub fn train_bundle(train: &[Flow], cfg: &PipelineConfig, created: u64) -> Result<Trained> {
    fit_head(&fit_backbone(train, cfg)?, cfg, created)
}

/// Synthetic flows with the same count and lengths as `reference`.
pub fn generate_matched(bundle: &ModelBundle, reference: &[Flow], seed: u64) -> Vec<Flow> {
    let lengths: Vec<usize> = reference.iter().map(Flow::len).collect();
    let flows = generator::generate_flows(bundle, &lengths, seed);
    group_flows(&generator::to_records(&flows))
}

/// Metrics of length-matched synthetic traffic against `test`.
pub fn score(bundle: &ModelBundle, test: &[Flow], cfg: &PipelineConfig) -> Result<MetricReport> {
    let synth = generate_matched(bundle, test, cfg.generation_seed());
    Ok(evaluate(test, &synth, &cfg.metrics)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::tests::small_bundle;
    use crate::generator::to_records;

    fn synthetic_trace(flows: usize, len: usize) -> Vec<PacketRecord> {
        let b = small_bundle();
        let lengths = vec![len; flows];
        to_records(&generator::generate_flows(&b, &lengths, 11))
    }

    fn quick() -> PipelineConfig {
        PipelineConfig {
            states: 2,
            components: 2,
            max_iter: 30,
            hidden: 8,
            mixtures: 2,
            epochs: 3,
            batch_size: 256,
            ..PipelineConfig::http()
        }
    }

    #[test]
    fn presets_and_validation() {
        let u = PipelineConfig::udp();
        assert_eq!((u.states, u.components, u.min_covar, u.mixtures, u.epochs), (6, 7, 1e-2, 32, 30));
        assert_eq!(PipelineConfig::http().train_frac, 0.9);
        assert_eq!(PipelineConfig::preset("http"), Some(PipelineConfig::http()));
        assert!(PipelineConfig::preset("ftp").is_none());
        assert!(PipelineConfig::http().validate().is_ok());
        let bad = PipelineConfig { train_frac: 1.0, ..PipelineConfig::http() };
        assert!(matches!(bad.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn prepare_trains_and_scores() {
        let records = synthetic_trace(40, 30);
        let cfg = quick();
        let prep = prepare(&records, &cfg).unwrap();
        assert_eq!(prep.train.len() + prep.test.len(), 40);
        assert!(prep.kept_packets < prep.raw_packets);
        let t = train_bundle(&prep.train, &cfg, 5).unwrap();
        assert_eq!(t.bundle.meta.created, 5);
        assert_eq!(t.mdn_losses.len(), 3);
        assert_eq!(t.bundle.meta.flow_lengths.iter().map(|p| p.1).sum::<u64>(), prep.train.len() as u64);
        let report = score(&t.bundle, &prep.test, &cfg).unwrap();
        assert!(report.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(t.report_text().contains("em_loglik.1 = "));

        let again = train_bundle(&prep.train, &cfg, 5).unwrap();
        assert_eq!(
            generator::bundle_to_bytes(&t.bundle).unwrap(),
            generator::bundle_to_bytes(&again.bundle).unwrap()
        );
        assert_eq!(score(&again.bundle, &prep.test, &cfg).unwrap(), report);
    }

    #[test]
    fn matched_generation_preserves_lengths() {
        let b = small_bundle();
        let reference = group_flows(&synthetic_trace(5, 7));
        let synth = generate_matched(&b, &reference, 1);
        assert_eq!(synth.iter().map(Flow::len).collect::<Vec<_>>(), vec![7; 5]);
    }
}
