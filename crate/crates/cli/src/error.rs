use flowsynth::generator::BundleError;
use flowsynth::hmm::HmmError;
use flowsynth::mdn::MdnError;
use flowsynth::metrics::MetricsError;
use flowsynth::pipeline::PipelineError;
use flowsynth::trace::TraceError;
use thiserror::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_PARSE: i32 = 4;
pub const EXIT_CONFIG: i32 = 5;
pub const EXIT_NUMERIC: i32 = 6;

/// Error classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Config(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => EXIT_IO,
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        let msg = format!("trace: {e}");
        match e {
            TraceError::Io(_) => CliError::Io(msg),
            TraceError::Parse { .. } | TraceError::Schema(_) => CliError::Parse(msg),
            TraceError::Domain(_) | TraceError::Degenerate(_) | TraceError::Split(_) => CliError::Numeric(msg),
        }
    }
}

impl From<HmmError> for CliError {
    fn from(e: HmmError) -> Self {
        CliError::Numeric(format!("hmm: {e}"))
    }
}

impl From<MdnError> for CliError {
    fn from(e: MdnError) -> Self {
        let msg = format!("mdn: {e}");
        match e {
            MdnError::Config(_) => CliError::Config(msg),
            _ => CliError::Numeric(msg),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let msg = format!("metrics: {e}");
        match e {
            MetricsError::Io(_) => CliError::Io(msg),
            MetricsError::Domain(_) => CliError::Numeric(msg),
        }
    }
}

impl From<BundleError> for CliError {
    fn from(e: BundleError) -> Self {
        let msg = format!("bundle: {e}");
        match e {
            BundleError::Io(_) => CliError::Io(msg),
            _ => CliError::Parse(msg),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Trace(e) => e.into(),
            PipelineError::Hmm(e) => e.into(),
            PipelineError::Mdn(e) => e.into(),
            PipelineError::Metrics(e) => e.into(),
            PipelineError::Bundle(e) => e.into(),
            PipelineError::Config(m) => CliError::Config(m),
        }
    }
}
