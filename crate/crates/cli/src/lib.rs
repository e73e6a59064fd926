//! The `harp` command.
//!
//! Exit codes: 0 success, 1 local failure (file writes, server start),
//! 2 usage, 3 validation, 4 transport, 5 remote or media.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use harp_core::labels::serialize_labels;
use harp_core::media::{detect_media_kind, encode_wav, parse_midi, render_midi_preview, MediaKind, SampleFormat};
use harp_core::protocol::{
    coerce_control_text, ControlSpec, ControlValues, EndpointAddress, HarpClient, JobStatus, ModelCard,
    CARD_TIMEOUT, PROCESS_BUDGET,
};
use harp_core::{ErrorCode, HarpError};
use harp_gateway::{serve_gateway, GatewayConfig};
use harp_mock::{run_mock_endpoint, BehaviorKind, MockBehavior};

pub const EXIT_OK: i32 = 0;
pub const EXIT_LOCAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_TRANSPORT: i32 = 4;
pub const EXIT_REMOTE: i32 = 5;

pub const PREVIEW_SAMPLE_RATE: u32 = 44100;

/// Exit status for a protocol error.
pub fn exit_code_for(code: ErrorCode) -> i32 {
    match code {
        ErrorCode::E100_ConnectionFailed | ErrorCode::E101_Timeout => EXIT_TRANSPORT,
        ErrorCode::E120_MediaTypeMismatch | ErrorCode::E130_ControlValidation => EXIT_VALIDATION,
        ErrorCode::E110_InvalidCard
        | ErrorCode::E111_UnsupportedSchemaVersion
        | ErrorCode::E140_RemoteJobError
        | ErrorCode::E141_JobNotFound
        | ErrorCode::E142_Cancelled
        | ErrorCode::E150_MediaDecode
        | ErrorCode::E151_MediaEncode => EXIT_REMOTE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "harp", version, about = "Process audio and MIDI with remote HARP endpoints")]
pub struct Cli {
    /// Print developer detail with errors.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print an endpoint's card.
    Info(CardArgs),
    /// List an endpoint's controls with defaults and ranges.
    Controls(CardArgs),
    /// Send a file through an endpoint and write the result.
    Process(ProcessArgs),
    /// Run a labelling endpoint and write its labels as JSON.
    Labels(LabelsArgs),
    /// Run the local gateway for the web UI.
    Serve(ServeArgs),
    /// Run a mock endpoint.
    Mock(MockArgs),
    /// Render a MIDI file to a WAV preview.
    Preview(PreviewArgs),
}

#[derive(Debug, Args)]
pub struct CardArgs {
    pub url: String,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct JobArgs {
    pub url: String,
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Control assignment `label=value`; repeatable. Labels cannot contain `=`.
    #[arg(short = 'c', long = "control", value_name = "LABEL=VALUE")]
    pub controls: Vec<String>,
    /// Give up after this many seconds.
    #[arg(long, value_name = "SECS", default_value_t = PROCESS_BUDGET.as_secs_f64())]
    pub timeout: f64,
}

#[derive(Debug, Args)]
pub struct ProcessArgs {
    #[command(flatten)]
    pub job: JobArgs,
    /// Also write any labels here as JSON.
    #[arg(long, value_name = "PATH")]
    pub labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelsArgs {
    #[command(flatten)]
    pub job: JobArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Defaults to HARP_GATEWAY_PORT, then 8787.
    #[arg(long)]
    pub port: Option<u16>,
    /// Endpoint menu file. Defaults to HARP_REGISTRY.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Directory of web UI assets.
    #[arg(long)]
    pub ui: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MockArgs {
    /// gain, transpose or onsets.
    #[arg(long)]
    pub behavior: BehaviorKind,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 0)]
    pub port: u16,
    /// Time each job spends running.
    #[arg(long, default_value_t = 0)]
    pub delay_ms: u64,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = PREVIEW_SAMPLE_RATE)]
    pub sample_rate: u32,
}

enum Failure {
    Harp(HarpError),
    Usage(String),
    Local(anyhow::Error),
}

impl From<HarpError> for Failure {
    fn from(e: HarpError) -> Self {
        Failure::Harp(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Local(e)
    }
}

type Outcome = Result<(), Failure>;

/// Parses `argv` (including the program name), runs the command and
/// returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let verbose = cli.verbose;
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Harp(err)) => {
            eprintln!("error: {err}");
            if verbose {
                eprintln!("detail: {}", err.developer_message);
            }
            exit_code_for(err.code)
        }
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            EXIT_USAGE
        }
        Err(Failure::Local(err)) => {
            eprintln!("error: {err:#}");
            EXIT_LOCAL
        }
    }
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Info(args) => info(&args),
        Command::Controls(args) => controls(&args),
        Command::Process(args) => process(&args),
        Command::Labels(args) => labels(&args),
        Command::Serve(args) => serve(args),
        Command::Mock(args) => mock(&args),
        Command::Preview(args) => preview(&args),
    }
}

fn fetch_card(url: &str) -> Result<(EndpointAddress, ModelCard), HarpError> {
    let address = EndpointAddress::parse(url)?;
    let card = HarpClient::new().fetch_card(&address, CARD_TIMEOUT)?;
    Ok((address, card))
}

fn print_stdout(text: &str) -> Outcome {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .context("writing to stdout")?;
    Ok(())
}

fn info(args: &CardArgs) -> Outcome {
    let (address, card) = fetch_card(&args.url)?;
    if args.json {
        return print_stdout(&format!("{}\n", card.to_json()));
    }
    let mut text = String::new();
    let _ = writeln!(text, "{}", card.name);
    if !card.description.is_empty() {
        let _ = writeln!(text, "  {}", card.description);
    }
    let _ = writeln!(text, "endpoint: {address}");
    if !card.author.is_empty() {
        let _ = writeln!(text, "author:   {}", card.author);
    }
    if !card.tags.is_empty() {
        let _ = writeln!(text, "tags:     {}", card.tags.join(", "));
    }
    let _ = writeln!(text, "input:    {}", card.media_in);
    let _ = writeln!(text, "output:   {}", card.media_out.as_str());
    let _ = writeln!(text, "controls: {}", card.controls.len());
    print_stdout(&text)
}

fn describe_control(spec: &ControlSpec) -> (String, String) {
    match spec {
        ControlSpec::Slider { min, max, step, default, .. } => {
            (default.to_string(), format!("[{min}, {max}] step {step}"))
        }
        ControlSpec::NumberBox { default, .. } => (default.to_string(), "any number".to_string()),
        ControlSpec::TextBox { default, .. } => (format!("{default:?}"), "any text".to_string()),
        ControlSpec::Dropdown { options, default, .. } => (format!("{default:?}"), options.join(" | ")),
        ControlSpec::Toggle { default, .. } => (default.to_string(), "true | false".to_string()),
    }
}

fn controls(args: &CardArgs) -> Outcome {
    let (_, card) = fetch_card(&args.url)?;
    if args.json {
        let value = card.to_document()["controls"].clone();
        return print_stdout(&format!("{value}\n"));
    }
    let rows: Vec<[String; 4]> = card
        .controls
        .iter()
        .map(|spec| {
            let (default, range) = describe_control(spec);
            [spec.label().to_string(), spec.type_name().to_string(), default, range]
        })
        .collect();
    let header = ["LABEL", "TYPE", "DEFAULT", "RANGE"].map(String::from);
    let mut widths = header.clone().map(|h| h.len());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut text = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let line = format!(
            "{:<w0$}  {:<w1$}  {:<w2$}  {}",
            row[0],
            row[1],
            row[2],
            row[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2]
        );
        let _ = writeln!(text, "{}", line.trim_end());
    }
    print_stdout(&text)
}

/// Splits `label=value` at the first `=` and coerces the value to the
/// control's type.
fn parse_assignments(card: &ModelCard, assignments: &[String]) -> Result<ControlValues, Failure> {
    let mut values = ControlValues::new();
    for assignment in assignments {
        let (label, text) = assignment
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("-c expects label=value, got {assignment:?}")))?;
        let spec = card
            .control(label)
            .ok_or_else(|| HarpError::control(label, "is not a control of this endpoint"))?;
        values.insert(label.to_string(), coerce_control_text(spec, text)?);
    }
    Ok(values)
}

fn read_input(path: &Path) -> Result<(Vec<u8>, MediaKind), Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let kind = detect_media_kind(&bytes, &name)
        .ok_or_else(|| HarpError::decode(format!("{}: neither RIFF nor MThd magic, unknown extension", path.display())))?;
    Ok((bytes, kind))
}

fn write_output(path: &Path, bytes: &[u8]) -> Outcome {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn report_progress(status: &JobStatus) {
    eprintln!(
        "{} {:.0}% {}",
        status.state.as_str(),
        status.progress * 100.0,
        status.message
    );
}

fn run_job(job: &JobArgs) -> Result<(ModelCard, harp_core::protocol::ProcessResult), Failure> {
    if !(job.timeout.is_finite() && job.timeout > 0.0) {
        return Err(Failure::Usage(format!("--timeout must be positive, got {}", job.timeout)));
    }
    let (bytes, kind) = read_input(&job.input)?;
    let (address, card) = fetch_card(&job.url)?;
    let values = parse_assignments(&card, &job.controls)?;
    let result = HarpClient::new().process(
        &address,
        &bytes,
        kind,
        &values,
        Duration::from_secs_f64(job.timeout),
        report_progress,
    )?;
    Ok((card, result))
}

fn labels_json(labels: &harp_core::labels::LabelSet) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(&serialize_labels(labels)).expect("labels serialize");
    text.push('\n');
    text.into_bytes()
}

fn process(args: &ProcessArgs) -> Outcome {
    let (_, result) = run_job(&args.job)?;
    match &result.media {
        Some(media) => write_output(&args.job.output, &media.bytes)?,
        None => write_output(&args.job.output, &labels_json(&result.labels))?,
    }
    if let Some(path) = &args.labels_out {
        write_output(path, &labels_json(&result.labels))?;
    }
    Ok(())
}

fn labels(args: &LabelsArgs) -> Outcome {
    let (_, card) = fetch_card(&args.job.url)?;
    if !card.media_out.has_labels() {
        return Err(HarpError::new(
            ErrorCode::E120_MediaTypeMismatch,
            format!("{} does not produce labels", card.name),
            format!("card media_out is {}", card.media_out.as_str()),
        )
        .into());
    }
    let (_, result) = run_job(&args.job)?;
    write_output(&args.job.output, &labels_json(&result.labels))
}

fn serve(args: ServeArgs) -> Outcome {
    let mut config = GatewayConfig::from_env().map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(port) = args.port {
        config.port = port;
    }
    if args.registry.is_some() {
        config.registry_path = args.registry;
    }
    config.ui_dir = args.ui;
    let server = serve_gateway(config).context("starting gateway")?;
    print_stdout(&format!("gateway listening on {}\n", server.url()))?;
    server.wait();
    Ok(())
}

fn mock(args: &MockArgs) -> Outcome {
    let behavior = MockBehavior::new(args.behavior).with_delay(Duration::from_millis(args.delay_ms));
    let server = run_mock_endpoint(behavior, args.port).context("starting mock endpoint")?;
    print_stdout(&format!("mock {} endpoint listening on {}\n", args.behavior, server.url()))?;
    server.wait();
    Ok(())
}

fn preview(args: &PreviewArgs) -> Outcome {
    if args.sample_rate == 0 {
        return Err(Failure::Usage("--sample-rate must be positive".to_string()));
    }
    let (bytes, kind) = read_input(&args.input)?;
    if kind != MediaKind::Midi {
        return Err(HarpError::new(
            ErrorCode::E120_MediaTypeMismatch,
            "preview needs a MIDI file",
            format!("{} is {kind}", args.input.display()),
        )
        .into());
    }
    let seq = parse_midi(&bytes)?;
    let rendered = render_midi_preview(&seq, args.sample_rate);
    let wav = encode_wav(&rendered, SampleFormat::Int16)?;
    write_output(&args.output, &wav)
}
