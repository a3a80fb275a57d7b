//! Ranked hyper-parameter sweep.
//!
//! Every candidate is trained on the train split, generates as many flows
//! as the test split holds (with the same lengths), and is scored against
//! the test split. Rows are ranked by the aggregate metric score, lowest
//! first.

use std::io::Write;

use flowsynth::metrics::MetricReport;
use flowsynth::pipeline::{fit_backbone, fit_head, score, Backbone, PipelineConfig, PreparedTrace};
use flowsynth::trace::Flow;
use log::{info, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// HMM settings first with the base network, then network settings on
    /// the winning HMM.
    TwoStage,
    Grid,
    /// Seeded random subset of the full grid.
    Random(usize),
}

/// Candidate values per swept parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub states: Vec<usize>,
    pub components: Vec<usize>,
    pub min_covar: Vec<f64>,
    pub max_iter: Vec<usize>,
    pub mixtures: Vec<usize>,
    pub epochs: Vec<usize>,
    /// Fraction of the train split each candidate sees.
    pub data_frac: Vec<f64>,
    pub mode: SweepMode,
}

impl SweepSpec {
    /// Singleton lists holding the base configuration's values.
    pub fn from_base(base: &PipelineConfig) -> Self {
        Self {
            states: vec![base.states],
            components: vec![base.components],
            min_covar: vec![base.min_covar],
            max_iter: vec![base.max_iter],
            mixtures: vec![base.mixtures],
            epochs: vec![base.epochs],
            data_frac: vec![1.0],
            mode: SweepMode::TwoStage,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let lens = [
            self.states.len(),
            self.components.len(),
            self.min_covar.len(),
            self.max_iter.len(),
            self.mixtures.len(),
            self.epochs.len(),
            self.data_frac.len(),
        ];
        if lens.contains(&0) {
            return Err(CliError::Config("every candidate list must be non-empty".into()));
        }
        if self.data_frac.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(CliError::Config("data fractions must lie in (0, 1]".into()));
        }
        if self.mode == SweepMode::Random(0) {
            return Err(CliError::Config("random sweep needs at least one sample".into()));
        }
        Ok(())
    }

    fn hmm_grid(&self) -> Vec<HmmSettings> {
        let mut out = Vec::new();
        for &states in &self.states {
            for &components in &self.components {
                for &min_covar in &self.min_covar {
                    for &max_iter in &self.max_iter {
                        for &data_frac in &self.data_frac {
                            out.push(HmmSettings { states, components, min_covar, max_iter, data_frac });
                        }
                    }
                }
            }
        }
        out
    }

    fn head_grid(&self) -> Vec<(usize, usize)> {
        self.mixtures.iter().flat_map(|&m| self.epochs.iter().map(move |&e| (m, e))).collect()
    }

    /// Full cartesian product, HMM settings varying slowest.
    pub fn grid(&self) -> Vec<Candidate> {
        let heads = self.head_grid();
        self.hmm_grid()
            .into_iter()
            .flat_map(|h| heads.iter().map(move |&(mixtures, epochs)| Candidate { hmm: h, mixtures, epochs }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmmSettings {
    pub states: usize,
    pub components: usize,
    pub min_covar: f64,
    pub max_iter: usize,
    pub data_frac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub hmm: HmmSettings,
    pub mixtures: usize,
    pub epochs: usize,
}

impl Candidate {
    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        PipelineConfig {
            states: self.hmm.states,
            components: self.hmm.components,
            min_covar: self.hmm.min_covar,
            max_iter: self.hmm.max_iter,
            mixtures: self.mixtures,
            epochs: self.epochs,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub stage: u8,
    pub candidate: Candidate,
    pub report: MetricReport,
}

/// First `round(frac * n)` train flows, at least one.
pub fn train_subset(train: &[Flow], frac: f64) -> &[Flow] {
    let n = ((train.len() as f64 * frac).round() as usize).clamp(1, train.len());
    &train[..n]
}

struct Runner<'a> {
    prepared: &'a PreparedTrace,
    base: &'a PipelineConfig,
    created: u64,
    rows: Vec<SweepRow>,
}

impl Runner<'_> {
    fn backbone(&self, h: &HmmSettings, cfg: &PipelineConfig) -> Option<Backbone> {
        match fit_backbone(train_subset(&self.prepared.train, h.data_frac), cfg) {
            Ok(b) => Some(b),
            Err(e) => {
                warn!("candidate {h:?} failed: {e}");
                None
            }
        }
    }

    fn head(&mut self, stage: u8, backbone: &Backbone, c: Candidate) -> Option<f64> {
        let cfg = c.apply(self.base);
        let result = fit_head(backbone, &cfg, self.created).and_then(|t| score(&t.bundle, &self.prepared.test, &cfg));
        match result {
            Ok(report) => {
                info!(
                    "stage {stage} K={} J={} min_covar={} max_iter={} M={} epochs={} data_frac={} -> {:.6}",
                    c.hmm.states,
                    c.hmm.components,
                    c.hmm.min_covar,
                    c.hmm.max_iter,
                    c.mixtures,
                    c.epochs,
                    c.hmm.data_frac,
                    report.aggregate
                );
                let agg = report.aggregate;
                self.rows.push(SweepRow { stage, candidate: c, report });
                Some(agg)
            }
            Err(e) => {
                warn!("candidate {c:?} failed: {e}");
                None
            }
        }
    }

    fn run_group(&mut self, stage: u8, h: HmmSettings, heads: &[(usize, usize)]) {
        let Some(first) = heads.first() else { return };
        let cfg = Candidate { hmm: h, mixtures: first.0, epochs: first.1 }.apply(self.base);
        if let Some(b) = self.backbone(&h, &cfg) {
            for &(mixtures, epochs) in heads {
                self.head(stage, &b, Candidate { hmm: h, mixtures, epochs });
            }
        }
    }
}

/// Runs the sweep and returns rows sorted ascending by aggregate score.
/// Failed candidates are logged and left out.
pub fn run_sweep(
    prepared: &PreparedTrace,
    base: &PipelineConfig,
    spec: &SweepSpec,
    created: u64,
) -> Result<Vec<SweepRow>, CliError> {
    spec.validate()?;
    base.validate()?;
    let mut r = Runner { prepared, base, created, rows: Vec::new() };
    match spec.mode {
        SweepMode::TwoStage => {
            let base_head = (base.mixtures, base.epochs);
            for h in spec.hmm_grid() {
                r.run_group(1, h, &[base_head]);
            }
            let best = r
                .rows
                .iter()
                .min_by(|a, b| a.report.aggregate.total_cmp(&b.report.aggregate))
                .map(|row| row.candidate.hmm);
            if let Some(h) = best {
                let heads: Vec<_> = spec.head_grid().into_iter().filter(|&hd| hd != base_head).collect();
                r.run_group(2, h, &heads);
            }
        }
        SweepMode::Grid => {
            let heads = spec.head_grid();
            for h in spec.hmm_grid() {
                r.run_group(1, h, &heads);
            }
        }
        SweepMode::Random(n) => {
            let grid = spec.grid();
            let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
            let mut picks = sample(&mut rng, grid.len(), n.min(grid.len())).into_vec();
            picks.sort_unstable();
            for i in picks {
                let c = grid[i];
                r.run_group(1, c.hmm, &[(c.mixtures, c.epochs)]);
            }
        }
    }
    if r.rows.is_empty() {
        return Err(CliError::Numeric("every sweep candidate failed".into()));
    }
    let mut rows = r.rows;
    rows.sort_by(|a, b| a.report.aggregate.total_cmp(&b.report.aggregate));
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "rank,stage,K,J,min_covar,max_iter,M,num_epochs,data_frac";

pub fn write_sweep_csv<W: Write>(mut sink: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(sink, "{SWEEP_HEADER},{}", MetricReport::csv_header())?;
    for (rank, row) in rows.iter().enumerate() {
        let c = &row.candidate;
        writeln!(
            sink,
            "{},{},{},{},{},{},{},{},{},{}",
            rank + 1,
            row.stage,
            c.hmm.states,
            c.hmm.components,
            c.hmm.min_covar,
            c.hmm.max_iter,
            c.mixtures,
            c.epochs,
            c.hmm.data_frac,
            row.report.csv_row()
        )?;
    }
    sink.flush()
}
