use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dq_core::ingest::group_by_sensor;
use dq_core::metrics::deduplicate;
use dq_core::synthgen::DEFAULT_SCHEMA;
use dq_core::{
    assess, generate, iat_histogram, parse_dataset, parse_schema, serialize_report, AssessError,
    AssessmentConfig, DatasetFormat, DuplicateKey, FormatChecks, GenSpec, ModeScope, QualityReport,
    Score,
};
use dq_workflow::api::ProxyCredentials;
use dq_workflow::attestation::file_code_hash;
use dq_workflow::{
    Assessee, Assessor, CodeHashAttestor, Enclave, KeyPair, ProxyClient, ProxyConfig, Role,
};

/// Exit status for datasets refused at ingestion.
const EXIT_REJECTED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "dq",
    version,
    about = "Data quality assessment for IoT sensor datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assess a dataset against a schema and write the report.
    Assess(AssessArgs),
    /// Generate a synthetic dataset with known defects.
    Generate(GenerateArgs),
    /// Emit per-sensor inter-arrival time histograms as CSV.
    Histogram(HistogramArgs),
    /// Create an X25519 key pair (`<out>.key`, `<out>.pub`).
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the SHA-256 of a binary (this one by default).
    CodeHash {
        #[arg(long)]
        binary: Option<PathBuf>,
    },
    /// Run the proxy resource server.
    Proxy(ProxyArgs),
    /// Run the simulated enclave against a proxy.
    Enclave(EnclaveArgs),
    /// Seal and upload a dataset and schema (data owner).
    Submit(SubmitArgs),
    /// Upload a configuration and queue an assessment (assessor).
    Request(RequestArgs),
    /// Download and decrypt a finished report (data owner).
    Fetch(FetchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Ndjson,
    Csv,
    Json,
}

impl From<FormatArg> for DatasetFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Ndjson => DatasetFormat::Ndjson,
            FormatArg::Csv => DatasetFormat::Csv,
            FormatArg::Json => DatasetFormat::JsonArray,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    PerSensor,
    Dataset,
}

#[derive(Clone, Copy, ValueEnum)]
enum DupKeyArg {
    IdTimestamp,
    FullPacket,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChecksArg {
    TypesOnly,
    Full,
}

#[derive(Args)]
struct ConfigOverrides {
    /// Assessment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    quantization: Option<f64>,
    #[arg(long)]
    rae_crossover: Option<f64>,
    #[arg(long)]
    z_cutoff: Option<f64>,
    #[arg(long, value_enum)]
    mode_scope: Option<ScopeArg>,
    #[arg(long, value_enum)]
    duplicate_key: Option<DupKeyArg>,
    #[arg(long, value_enum)]
    format_checks: Option<ChecksArg>,
    #[arg(long)]
    timestamp_field: Option<String>,
    #[arg(long)]
    sensor_id_field: Option<String>,
    #[arg(long)]
    created_at: Option<String>,
}

impl ConfigOverrides {
    fn resolve(&self) -> Result<AssessmentConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                AssessmentConfig::from_json(&bytes)?
            }
            None => AssessmentConfig::default(),
        };
        if let Some(q) = self.quantization {
            c.quantization_seconds = q;
        }
        if let Some(v) = self.rae_crossover {
            c.rae_crossover = v;
        }
        if let Some(v) = self.z_cutoff {
            c.z_cutoff = v;
        }
        if let Some(v) = self.mode_scope {
            c.mode_scope = match v {
                ScopeArg::PerSensor => ModeScope::PerSensor,
                ScopeArg::Dataset => ModeScope::Dataset,
            };
        }
        if let Some(v) = self.duplicate_key {
            c.duplicate_key = match v {
                DupKeyArg::IdTimestamp => DuplicateKey::IdTimestamp,
                DupKeyArg::FullPacket => DuplicateKey::FullPacket,
            };
        }
        if let Some(v) = self.format_checks {
            c.format_checks = match v {
                ChecksArg::TypesOnly => FormatChecks::TypesOnly,
                ChecksArg::Full => FormatChecks::Full,
            };
        }
        if let Some(v) = &self.timestamp_field {
            c.timestamp_field = v.clone();
        }
        if let Some(v) = &self.sensor_id_field {
            c.sensor_id_field = v.clone();
        }
        if let Some(v) = &self.created_at {
            c.created_at = Some(v.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct AssessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Dataset format; inferred from the file extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Report destination, `-` for standard output.
    #[arg(long, default_value = "report.json")]
    out: String,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Dataset destination (NDJSON); ground truth goes to `<out>.truth.json`.
    #[arg(long)]
    out: PathBuf,
    /// Schema the packets conform to; a built-in air-quality schema otherwise.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Also write the schema used.
    #[arg(long)]
    schema_out: Option<PathBuf>,
}

#[derive(Args)]
struct HistogramArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    bin_width: f64,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct ProxyArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:0")]
    bind: SocketAddr,
    #[arg(long, default_value_t = dq_workflow::proxy::DEFAULT_MAX_UPLOAD)]
    max_upload_bytes: u64,
    #[arg(long, default_value_t = 86_400)]
    token_ttl_secs: u64,
}

#[derive(Args)]
struct Endpoint {
    /// Proxy base URL; read from the credentials file when omitted.
    #[arg(long)]
    proxy: Option<String>,
    /// Bearer token; read from the credentials file when omitted.
    #[arg(long, env = "DQ_TOKEN")]
    token: Option<String>,
    /// `credentials.json` written by `dq proxy`.
    #[arg(long)]
    credentials: Option<PathBuf>,
}

impl Endpoint {
    fn client(&self, role: Role) -> Result<ProxyClient> {
        let creds = match &self.credentials {
            Some(p) => Some(
                serde_json::from_slice::<ProxyCredentials>(
                    &std::fs::read(p).with_context(|| format!("reading {}", p.display()))?,
                )
                .context("parsing credentials")?,
            ),
            None => None,
        };
        let url = self
            .proxy
            .clone()
            .or_else(|| creds.as_ref().map(|c| c.url.clone()))
            .ok_or_else(|| anyhow!("--proxy or --credentials is required"))?;
        let token = self
            .token
            .clone()
            .or_else(|| creds.as_ref().map(|c| c.token(role).to_string()))
            .ok_or_else(|| anyhow!("--token or --credentials is required"))?;
        Ok(ProxyClient::new(&url, &token))
    }
}

#[derive(Args)]
struct EnclaveArgs {
    #[command(flatten)]
    endpoint: Endpoint,
    /// Enclave secret key file; a fresh key is generated when omitted.
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    poll_ms: u64,
    /// Process queued work until the queue is empty, then exit.
    #[arg(long)]
    drain: bool,
}

#[derive(Args)]
struct SubmitArgs {
    #[command(flatten)]
    endpoint: Endpoint,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    expected_hash: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    domain: String,
}

#[derive(Args)]
struct RequestArgs {
    #[command(flatten)]
    endpoint: Endpoint,
    #[arg(long)]
    expected_hash: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dataset_id: String,
    #[arg(long)]
    schema_id: String,
}

#[derive(Args)]
struct FetchArgs {
    #[command(flatten)]
    endpoint: Endpoint,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    assessment_id: String,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Keep polling for up to this many seconds while the report is pending.
    #[arg(long, default_value_t = 0)]
    wait_secs: u64,
}

fn infer_format(path: &Path, explicit: Option<FormatArg>) -> DatasetFormat {
    if let Some(f) = explicit {
        return f.into();
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
        Some(e) if e.eq_ignore_ascii_case("json") => DatasetFormat::JsonArray,
        _ => DatasetFormat::Ndjson,
    }
}

fn summary_table(report: &QualityReport, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "{:<8}{:<14}{:>12}", "metric", "dimension", "score")?;
    for r in &report.per_metric {
        let score = match r.score {
            Score::Value(v) => format!("{v:.4}"),
            Score::Inapplicable => "n/a".into(),
        };
        writeln!(
            out,
            "{:<8}{:<14}{:>12}",
            r.metric_id.as_str(),
            r.metric_id.dimension().to_string(),
            score
        )?;
    }
    writeln!(out, "{:<22}{:>12.4}", "aggregate", report.aggregate_score)
}

enum Failure {
    Rejected(anyhow::Error),
    Other(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Other(e.into())
    }
}

fn cmd_assess(a: &AssessArgs) -> Result<(), Failure> {
    let config = a.overrides.resolve()?;
    let schema_bytes =
        std::fs::read(&a.schema).with_context(|| format!("reading {}", a.schema.display()))?;
    let schema = parse_schema(&schema_bytes)?;
    for w in &schema.warnings {
        log::warn!("schema: {w}");
    }
    let file = File::open(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let format = infer_format(&a.data, a.format);
    let assessment = match assess(
        BufReader::with_capacity(1 << 20, file),
        format,
        &schema,
        &config,
    ) {
        Ok(x) => x,
        Err(e @ AssessError::Ingest(_)) if e.is_rejection() => {
            return Err(Failure::Rejected(anyhow!(e)))
        }
        Err(e) => return Err(e.into()),
    };
    if !assessment.ingest_errors.is_empty() {
        log::warn!(
            "{} of {} records could not be parsed",
            assessment.ingest_errors.len(),
            assessment.ingest_errors.len() + assessment.packet_count
        );
    }
    let bytes = serialize_report(&assessment.report);
    if a.out == "-" {
        io::stdout().write_all(&bytes)?;
        summary_table(&assessment.report, &mut io::stderr())?;
    } else {
        std::fs::write(&a.out, &bytes).with_context(|| format!("writing {}", a.out))?;
        summary_table(&assessment.report, &mut io::stdout())?;
    }
    Ok(())
}

fn read_schema_or_default(path: Option<&Path>) -> Result<(Vec<u8>, dq_core::SchemaDocument)> {
    let bytes = match path {
        Some(p) => std::fs::read(p).with_context(|| format!("reading {}", p.display()))?,
        None => DEFAULT_SCHEMA.as_bytes().to_vec(),
    };
    let doc = parse_schema(&bytes)?;
    Ok((bytes, doc))
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".truth.json");
    PathBuf::from(name)
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let spec_bytes =
        std::fs::read(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let spec: GenSpec = serde_json::from_slice(&spec_bytes).context("parsing generator spec")?;
    let (schema_bytes, schema) = read_schema_or_default(a.schema.as_deref())?;
    let g = generate(&spec, &schema)?;
    std::fs::write(&a.out, &g.data).with_context(|| format!("writing {}", a.out.display()))?;
    let mut truth = serde_json::to_vec_pretty(&g.truth)?;
    truth.push(b'\n');
    std::fs::write(sidecar_path(&a.out), truth)?;
    if let Some(p) = &a.schema_out {
        std::fs::write(p, schema_bytes)?;
    }
    log::info!(
        "wrote {} packets to {}",
        g.truth.total_packets,
        a.out.display()
    );
    Ok(())
}

fn cmd_histogram(a: &HistogramArgs) -> Result<()> {
    if !(a.bin_width.is_finite() && a.bin_width > 0.0) {
        bail!("--bin-width must be positive");
    }
    let config = a.overrides.resolve()?;
    let file = File::open(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let parsed = parse_dataset(
        BufReader::new(file),
        infer_format(&a.data, a.format),
        &config,
    )?;
    let mut out = BufWriter::new(io::stdout().lock());
    writeln!(out, "sensor_id,bin,count")?;
    for stream in group_by_sensor(parsed.packets) {
        let d = deduplicate(stream, config.duplicate_key);
        for (bin, count) in iat_histogram(d.stream.iat_values(), a.bin_width) {
            writeln!(out, "{},{bin},{count}", csv_field(d.stream.sensor_id()))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_proxy(a: &ProxyArgs) -> Result<()> {
    let mut cfg = ProxyConfig::new(&a.store);
    cfg.bind = a.bind;
    cfg.max_upload_bytes = a.max_upload_bytes;
    cfg.token_ttl = Duration::from_secs(a.token_ttl_secs);
    let handle = dq_workflow::spawn_proxy(cfg)?;
    println!("listening on {}", handle.url());
    println!(
        "credentials in {}",
        a.store.join(dq_workflow::proxy::CREDENTIALS_FILE).display()
    );
    io::stdout().flush()?;
    handle.wait()?;
    Ok(())
}

fn load_or_generate_key(path: Option<&Path>) -> Result<KeyPair> {
    match path {
        Some(p) => KeyPair::load(p).with_context(|| format!("reading key {}", p.display())),
        None => Ok(KeyPair::generate()),
    }
}

fn cmd_enclave(a: &EnclaveArgs) -> Result<()> {
    let enclave = Enclave::new(
        a.endpoint.client(Role::Enclave)?,
        load_or_generate_key(a.key.as_deref())?,
    );
    enclave.publish_attestation(&CodeHashAttestor::current_exe()?)?;
    println!("enclave key {}", enclave.keys().public_hex());
    io::stdout().flush()?;
    if a.drain {
        while let Some(outcome) = enclave.process_next()? {
            log::info!("{outcome:?}");
        }
        return Ok(());
    }
    let stop = AtomicBool::new(false);
    enclave.run(Duration::from_millis(a.poll_ms), &stop)?;
    Ok(())
}

fn cmd_submit(a: &SubmitArgs) -> Result<()> {
    let assessee = Assessee {
        client: a.endpoint.client(Role::Assessee)?,
        keys: KeyPair::load(&a.key).with_context(|| format!("reading key {}", a.key.display()))?,
        expected_code_hash: a.expected_hash.clone(),
    };
    let data = std::fs::read(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let schema =
        std::fs::read(&a.schema).with_context(|| format!("reading {}", a.schema.display()))?;
    let sub = assessee.submit(&data, infer_format(&a.data, a.format), &schema, &a.domain)?;
    println!(
        "{}",
        serde_json::json!({"dataset_id": sub.dataset_id, "schema_id": sub.schema_id})
    );
    Ok(())
}

fn cmd_request(a: &RequestArgs) -> Result<()> {
    let assessor = Assessor {
        client: a.endpoint.client(Role::Assessor)?,
        expected_code_hash: a.expected_hash.clone(),
    };
    let config =
        std::fs::read(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    println!(
        "{}",
        assessor.request(&config, &a.dataset_id, &a.schema_id)?
    );
    Ok(())
}

fn cmd_fetch(a: &FetchArgs) -> Result<()> {
    let assessee = Assessee {
        client: a.endpoint.client(Role::Assessee)?,
        keys: KeyPair::load(&a.key).with_context(|| format!("reading key {}", a.key.display()))?,
        expected_code_hash: String::new(),
    };
    let fetched = assessee.wait_for_report(&a.assessment_id, Duration::from_secs(a.wait_secs))?;
    std::fs::write(&a.out, fetched.bytes.as_slice())
        .with_context(|| format!("writing {}", a.out.display()))?;
    summary_table(&fetched.report, &mut io::stdout())?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Assess(a) => cmd_assess(&a),
        Command::Generate(a) => Ok(cmd_generate(&a)?),
        Command::Histogram(a) => Ok(cmd_histogram(&a)?),
        Command::Keygen { out } => {
            let k = KeyPair::generate();
            k.save(&out)?;
            println!("{}", k.public_hex());
            Ok(())
        }
        Command::CodeHash { binary } => {
            let path = match binary {
                Some(p) => p,
                None => std::env::current_exe()?,
            };
            println!("{}", file_code_hash(&path)?);
            Ok(())
        }
        Command::Proxy(a) => Ok(cmd_proxy(&a)?),
        Command::Enclave(a) => Ok(cmd_enclave(&a)?),
        Command::Submit(a) => Ok(cmd_submit(&a)?),
        Command::Request(a) => Ok(cmd_request(&a)?),
        Command::Fetch(a) => Ok(cmd_fetch(&a)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DQ_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Rejected(e)) => {
            eprintln!("dq: dataset rejected: {e:#}");
            ExitCode::from(EXIT_REJECTED)
        }
        Err(Failure::Other(e)) => {
            eprintln!("dq: {e:#}");
            ExitCode::FAILURE
        }
    }
}
