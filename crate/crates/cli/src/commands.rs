use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowsynth::generator::{load_bundle, sample_length, save_bundle, to_records, Generator, ModelBundle};
use flowsynth::metrics::{evaluate_detailed, write_cdf_csv};
use flowsynth::pipeline::{prepare, train_bundle};
use flowsynth::trace::{flatten_flows, group_flows, parse_trace, write_trace, HeaderMode, PacketRecord, TraceFormat};
use log::info;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::sweep::{run_sweep, write_sweep_csv, SweepMode, SweepSpec};

#[derive(Debug, Parser)]
#[command(name = "flowsynth", version, about = "Train, sample and evaluate packet-traffic generators")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving all output files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Base parameter set applied before the config file.
    #[arg(long, global = true, default_value = "http")]
    pub preset: String,
    /// `key=value` override applied after the config file (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args, Clone)]
pub struct TraceArgs {
    #[arg(long, default_value = "flow_id")]
    pub flow_column: String,
    #[arg(long, default_value = "payload_len")]
    pub payload_column: String,
    #[arg(long, default_value = "iat")]
    pub iat_column: String,
    #[arg(long, value_enum, default_value = "auto")]
    pub header: HeaderArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HeaderArg {
    Auto,
    Present,
    Absent,
}

impl TraceArgs {
    pub fn format(&self) -> TraceFormat {
        TraceFormat {
            header: match self.header {
                HeaderArg::Auto => HeaderMode::Auto,
                HeaderArg::Present => HeaderMode::Present,
                HeaderArg::Absent => HeaderMode::Absent,
            },
            flow_column: self.flow_column.clone(),
            payload_column: self.payload_column.clone(),
            iat_column: self.iat_column.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean a trace and write its train/test split.
    Ingest {
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        format: TraceArgs,
    },
    /// Train a model bundle on the train split of a trace.
    Train {
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        format: TraceArgs,
        /// Bundle file name inside the output directory.
        #[arg(long, default_value = "model.fsb")]
        output: PathBuf,
    },
    /// Sample synthetic flows from a bundle.
    Generate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 1)]
        num_flows: usize,
        /// Fixed flow length; otherwise lengths follow the bundle's histogram.
        #[arg(long, conflicts_with = "lengths_from")]
        length: Option<usize>,
        /// Reuse the flow count and lengths of this trace.
        #[arg(long)]
        lengths_from: Option<PathBuf>,
        #[command(flatten)]
        format: TraceArgs,
        #[arg(long, default_value = "synthetic.csv")]
        output: PathBuf,
    },
    /// Compare a synthetic trace against a real one.
    Eval {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        #[command(flatten)]
        format: TraceArgs,
    },
    /// Rank candidate settings by aggregate score.
    Sweep {
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        format: TraceArgs,
        #[arg(long = "states", value_delimiter = ',')]
        states: Vec<usize>,
        #[arg(long = "components", value_delimiter = ',')]
        components: Vec<usize>,
        #[arg(long = "min-covar", value_delimiter = ',')]
        min_covar: Vec<f64>,
        #[arg(long = "max-iter", value_delimiter = ',')]
        max_iter: Vec<usize>,
        #[arg(long = "mixtures", value_delimiter = ',')]
        mixtures: Vec<usize>,
        #[arg(long = "epochs", value_delimiter = ',')]
        epochs: Vec<usize>,
        #[arg(long = "data-frac", value_delimiter = ',')]
        data_frac: Vec<f64>,
        #[arg(long, value_enum, default_value = "two-stage")]
        mode: ModeArg,
        /// Candidates drawn in random mode.
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value = "sweep.csv")]
        output: PathBuf,
    },
    /// Print a bundle summary.
    Report {
        #[arg(long)]
        bundle: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    TwoStage,
    Grid,
    Random,
}

pub fn load_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::preset(&common.preset)?;
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.pipeline.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Bundle creation time: `SOURCE_DATE_EPOCH` when set, else 0.
pub fn created_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok()).unwrap_or(0)
}

fn read_trace(path: &Path, format: &TraceFormat) -> Result<Vec<PacketRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let records = parse_trace(BufReader::new(file), format)?;
    if records.is_empty() {
        return Err(CliError::Numeric(format!("{}: trace has no packets", path.display())));
    }
    info!("{}: {} packets", path.display(), records.len());
    Ok(records)
}

fn create(out_dir: &Path, name: &Path) -> Result<(PathBuf, BufWriter<File>), CliError> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let path = out_dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

fn trace_path(arg: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    arg.clone()
        .or_else(|| cfg.trace.clone())
        .ok_or_else(|| CliError::Config("no trace given (use --trace or `trace = ...`)".into()))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli.common)?;
    let out = &cli.common.out_dir;
    match &cli.command {
        Command::Ingest { trace, format } => ingest(&cfg, out, &trace_path(trace, &cfg)?, &format.format()),
        Command::Train { trace, format, output } => train(&cfg, out, &trace_path(trace, &cfg)?, &format.format(), output),
        Command::Generate { bundle, num_flows, length, lengths_from, format, output } => {
            let lengths = match lengths_from {
                Some(p) => LengthSpec::Matched(group_flows(&read_trace(p, &format.format())?).iter().map(|f| f.len()).collect()),
                None => match length {
                    Some(l) => LengthSpec::Fixed(*l),
                    None => LengthSpec::Empirical,
                },
            };
            generate(&cfg, out, bundle, *num_flows, lengths, output)
        }
        Command::Eval { real, synth, format } => eval(&cfg, out, real, synth, &format.format()),
        Command::Sweep {
            trace,
            format,
            states,
            components,
            min_covar,
            max_iter,
            mixtures,
            epochs,
            data_frac,
            mode,
            samples,
            output,
        } => {
            let mut spec = SweepSpec::from_base(&cfg.pipeline);
            let pick = |v: &Vec<usize>, d: &mut Vec<usize>| {
                if !v.is_empty() {
                    *d = v.clone();
                }
            };
            pick(states, &mut spec.states);
            pick(components, &mut spec.components);
            pick(max_iter, &mut spec.max_iter);
            pick(mixtures, &mut spec.mixtures);
            pick(epochs, &mut spec.epochs);
            if !min_covar.is_empty() {
                spec.min_covar = min_covar.clone();
            }
            if !data_frac.is_empty() {
                spec.data_frac = data_frac.clone();
            }
            spec.mode = match mode {
                ModeArg::TwoStage => SweepMode::TwoStage,
                ModeArg::Grid => SweepMode::Grid,
                ModeArg::Random => SweepMode::Random(*samples),
            };
            sweep(&cfg, out, &trace_path(trace, &cfg)?, &format.format(), &spec, output)
        }
        Command::Report { bundle } => {
            let b = read_bundle(bundle)?;
            print!("{}", bundle_summary(&b));
            Ok(())
        }
    }
}

fn ingest(cfg: &RunConfig, out: &Path, trace: &Path, format: &TraceFormat) -> Result<(), CliError> {
    let records = read_trace(trace, format)?;
    let prep = prepare(&records, &cfg.pipeline)?;
    info!(
        "iat cap {:.6} s kept {}/{} packets; {} train / {} test flows",
        prep.iat_cap,
        prep.kept_packets,
        prep.raw_packets,
        prep.train.len(),
        prep.test.len()
    );
    for (name, flows) in [("train.csv", &prep.train), ("test.csv", &prep.test)] {
        let (path, w) = create(out, Path::new(name))?;
        write_trace(w, &flatten_flows(flows))?;
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn train(cfg: &RunConfig, out: &Path, trace: &Path, format: &TraceFormat, output: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let records = read_trace(trace, format)?;
    let prep = prepare(&records, &cfg.pipeline)?;
    info!("training on {} flows ({} held out)", prep.train.len(), prep.test.len());
    let trained = train_bundle(&prep.train, &cfg.pipeline, created_timestamp())?;
    let (path, mut w) = create(out, output)?;
    save_bundle(&trained.bundle, &mut w)?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    info!("wrote {}", path.display());

    let mut report = trained.report_text();
    report.insert_str(0, &format!("iat_cap = {:e}\ntrain_flows = {}\ntest_flows = {}\n", prep.iat_cap, prep.train.len(), prep.test.len()));
    report.push_str(&format!("wall_seconds = {:.3}\n", start.elapsed().as_secs_f64()));
    let (rpath, mut rw) = create(out, &output.with_extension("report.txt"))?;
    rw.write_all(report.as_bytes()).map_err(|e| CliError::io(&rpath, e))?;
    info!("train finished in {:.2} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn read_bundle(path: &Path) -> Result<ModelBundle, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(load_bundle(BufReader::new(file))?)
}

pub enum LengthSpec {
    Fixed(usize),
    Empirical,
    Matched(Vec<usize>),
}

fn generate(cfg: &RunConfig, out: &Path, bundle: &Path, num_flows: usize, lengths: LengthSpec, output: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let b = read_bundle(bundle)?;
    if matches!(lengths, LengthSpec::Empirical) && b.meta.flow_lengths.is_empty() {
        return Err(CliError::Config("bundle holds no flow-length histogram; pass --length".into()));
    }
    if matches!(lengths, LengthSpec::Fixed(0)) {
        return Err(CliError::Config("--length must be positive".into()));
    }
    let mut g = Generator::new(&b, cfg.pipeline.seed);
    let flows: Vec<_> = match &lengths {
        LengthSpec::Fixed(l) => (0..num_flows).map(|_| g.generate_flow(*l)).collect(),
        LengthSpec::Matched(ls) => ls.iter().map(|&l| g.generate_flow(l)).collect(),
        LengthSpec::Empirical => (0..num_flows)
            .map(|_| {
                let l = sample_length(&b.meta.flow_lengths, g.rng());
                g.generate_flow(l)
            })
            .collect(),
    };
    let records = to_records(&flows);
    let (path, w) = create(out, output)?;
    write_trace(w, &records)?;
    let secs = start.elapsed().as_secs_f64();
    info!("wrote {} flows / {} packets to {} in {secs:.2} s", flows.len(), records.len(), path.display());
    Ok(())
}

fn eval(cfg: &RunConfig, out: &Path, real: &Path, synth: &Path, format: &TraceFormat) -> Result<(), CliError> {
    let rf = group_flows(&read_trace(real, format)?);
    let sf = group_flows(&read_trace(synth, format)?);
    let ev = evaluate_detailed(&rf, &sf, &cfg.pipeline.metrics)?;
    let (path, mut w) = create(out, Path::new("metrics.txt"))?;
    w.write_all(ev.report.to_kv_text().as_bytes()).map_err(|e| CliError::io(&path, e))?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    for (name, (r, s)) in [("cdf_payload.csv", &ev.cdf_payload), ("cdf_iat.csv", &ev.cdf_iat)] {
        let (_, w) = create(out, Path::new(name))?;
        write_cdf_csv(w, r, s)?;
    }
    info!("aggregate score {:.6}", ev.report.aggregate);
    Ok(())
}

fn sweep(cfg: &RunConfig, out: &Path, trace: &Path, format: &TraceFormat, spec: &SweepSpec, output: &Path) -> Result<(), CliError> {
    let records = read_trace(trace, format)?;
    let prep = prepare(&records, &cfg.pipeline)?;
    let rows = run_sweep(&prep, &cfg.pipeline, spec, created_timestamp())?;
    let (path, w) = create(out, output)?;
    write_sweep_csv(w, &rows).map_err(|e| CliError::io(&path, e))?;
    info!("wrote {} ranked rows to {}", rows.len(), path.display());
    Ok(())
}

pub fn bundle_summary(b: &ModelBundle) -> String {
    let flows: u64 = b.meta.flow_lengths.iter().map(|p| p.1).sum();
    let packets: u64 = b.meta.flow_lengths.iter().map(|p| p.0 * p.1).sum();
    let mut s = String::new();
    s.push_str(&format!("protocol = {}\n", b.meta.protocol));
    s.push_str(&format!("created = {}\n", b.meta.created));
    s.push_str(&format!("format_version = {}\n", b.meta.format_version));
    s.push_str(&format!("K = {}\nJ = {}\n", b.hmm.states, b.hmm.components));
    s.push_str(&format!("H = {}\nM = {}\n", b.mdn.hidden(), b.mdn.mixtures()));
    s.push_str(&format!("mdn_params = {}\n", b.mdn.param_count()));
    s.push_str(&format!("min_covar = {}\n", b.hmm.min_covar));
    s.push_str(&format!("mtu = {}\niat_floor = {}\n", b.mtu, b.iat_floor));
    s.push_str(&format!("norm_mean = {} {}\nnorm_std = {} {}\n", b.norm.mean[0], b.norm.mean[1], b.norm.std[0], b.norm.std[1]));
    s.push_str(&format!("training_flows = {flows}\ntraining_packets = {packets}\n"));
    let stationary = b.hmm.stationary_distribution();
    s.push_str(&format!(
        "stationary = {}\n",
        stationary.iter().map(|p| format!("{p:.4}")).collect::<Vec<_>>().join(" ")
    ));
    s
}
