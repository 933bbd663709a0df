mod client;
mod keys;
mod output;

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use discovery_core::chain::{verify_chain, ChainVerdict};
use discovery_core::dead_drop::respond::{redact, Responder};
use discovery_core::dead_drop::{evaluate_auth, sign_request, AccessRequest, AuthDecision, Protocol, ValidUntil};
use discovery_core::event::{parse_event_json, parse_event_ndjson, parse_event_xml_with_warnings, Event};
use discovery_core::ni::{ni_hash, Digest};
use discovery_core::sanitiser::{sanitise, SaltSource, SanitisedEvent, SanitiserConfig};
use discovery_core::simulator::{inject_fault, simulate, FaultKind, NetworkSpec};
use discovery_core::store::DiscoveryStore;
use serde_json::json;

use client::Client;
use keys::PolicyArg;
use output::Format;

const EXIT_ERROR: u8 = 1;
const EXIT_BROKEN: u8 = 2;
const EXIT_UNKNOWN: u8 = 3;

/// Sanitise, publish, query and verify traceability events.
#[derive(Parser, Debug)]
#[command(name = "discovery", version)]
struct Cli {
    /// Discovery service base URL.
    #[arg(long, global = true, env = "DISCOVERY_URL", default_value = "http://127.0.0.1:8080")]
    url: String,

    /// Output format for query, verify and owner poll.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sanitise clear-text events (XML, JSON or NDJSON) into NDJSON on stdout.
    Sanitise(SanitiseArgs),
    /// POST sanitised NDJSON events to the service.
    Upload {
        /// NDJSON file of sanitised events, `-` for stdin.
        file: PathBuf,
    },
    /// Find events by item. A raw EPC is hashed locally and never sent.
    Query(Target),
    /// Verify the chain of custody. Exit 0 complete, 2 broken, 3 unknown.
    Verify {
        #[command(flatten)]
        target: Target,
        /// Read events from a local journal instead of the service.
        #[arg(long)]
        journal: Option<PathBuf>,
        /// Follow assemblies into their components.
        #[arg(long)]
        recurse: bool,
    },
    /// Leave an access request in the dead drop.
    Request(RequestArgs),
    /// Data-owner side of the dead drop.
    #[command(subcommand)]
    Owner(OwnerCommand),
    /// Generate a simulated supply network dataset.
    Simulate(SimulateArgs),
    /// Create an Ed25519 key pair for signing requests.
    Keygen {
        /// Secret key file; the public key goes to `<file>.pub`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Target {
    /// Raw EPC, hashed locally.
    #[arg(long)]
    epc: Option<String>,
    /// 64-hex SHA-256 digest.
    #[arg(long)]
    hash: Option<String>,
}

impl Target {
    fn digest(&self) -> anyhow::Result<Digest> {
        match (&self.epc, &self.hash) {
            (Some(epc), _) => Ok(*ni_hash(epc)?.digest()),
            (None, Some(h)) => Ok(h.parse()?),
            (None, None) => bail!("pass --epc or --hash"),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InputFormat {
    Auto,
    Xml,
    Json,
    Ndjson,
}

#[derive(Args, Debug)]
struct SanitiseArgs {
    /// Events file, `-` for stdin.
    file: PathBuf,
    /// Dead-drop URL published with every event.
    #[arg(long, default_value = "https://discovery.example.org/dead_drop")]
    dead_drop: String,
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    input_format: InputFormat,
    /// Hash party identifiers without a salt.
    #[arg(long)]
    no_salt: bool,
}

#[derive(Args, Debug)]
struct RequestArgs {
    #[command(flatten)]
    target: Target,
    /// Where the owner should send the data.
    #[arg(long)]
    endpoint: String,
    /// POST, EMAIL or another protocol name.
    #[arg(long, default_value = "POST")]
    protocol: String,
    /// Expiry, `YYYY-MM-DD HH:MM:SS` UTC.
    #[arg(long)]
    valid_until: String,
    /// Identity hint for the owner.
    #[arg(long)]
    id: Option<String>,
    /// Sign the request with this key file.
    #[arg(long)]
    sign: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum OwnerCommand {
    /// List live requests for an item and how the policy would answer them.
    Poll {
        #[command(flatten)]
        target: Target,
        /// accept-all, deny-all or allow-list:<file>
        #[arg(long)]
        policy: PolicyArg,
    },
    /// Answer one request directly at its endpoint, if the policy grants it.
    Respond {
        #[command(flatten)]
        target: Target,
        /// Request id as printed by `owner poll`.
        #[arg(long)]
        request_id: Digest,
        /// JSON payload file.
        #[arg(long)]
        payload: PathBuf,
        #[arg(long)]
        policy: PolicyArg,
        /// Send only these top-level fields of a clear-text event payload.
        #[arg(long, value_delimiter = ',')]
        fields: Vec<String>,
        /// Extra delivery attempts.
        #[arg(long, default_value_t = 0)]
        retries: u32,
    },
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Network spec as JSON. Defaults to the six-actor electronics network.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Seed for the default network.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Inject a fault, e.g. `drop-receive:4`.
    #[arg(long)]
    fault: Option<String>,
}

fn read_input(path: &Path) -> anyhow::Result<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf)?;
        Ok(buf)
    } else {
        fs::read(path).with_context(|| format!("reading {}", path.display()))
    }
}

fn parse_events(bytes: &[u8], format: InputFormat) -> anyhow::Result<Vec<Event>> {
    let text = || std::str::from_utf8(bytes).context("input is not UTF-8");
    let format = match format {
        InputFormat::Auto => match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
            Some(b'<') => InputFormat::Xml,
            Some(b'[') => InputFormat::Json,
            Some(b'{') if parse_event_json(bytes).is_ok() => InputFormat::Json,
            _ => InputFormat::Ndjson,
        },
        f => f,
    };
    Ok(match format {
        InputFormat::Xml => {
            let out = parse_event_xml_with_warnings(bytes)?;
            for w in out.warnings {
                eprintln!("warning: {w}");
            }
            out.events
        }
        InputFormat::Json => parse_event_json(bytes)?,
        InputFormat::Ndjson | InputFormat::Auto => parse_event_ndjson(text()?)?,
    })
}

fn cmd_sanitise(args: &SanitiseArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let events = parse_events(&read_input(&args.file)?, args.input_format)?;
    let mut cfg = SanitiserConfig::new(&args.dead_drop)?;
    if args.no_salt {
        cfg = cfg.with_salt_source(SaltSource::None);
    }
    for e in &events {
        let s = sanitise(e, &cfg)?;
        for w in s.warnings {
            eprintln!("warning: {w}");
        }
        writeln!(out, "{}", s.event.to_json())?;
    }
    Ok(())
}

fn cmd_upload(cli: &Cli, file: &Path, out: &mut impl Write) -> anyhow::Result<()> {
    let client = Client::new(&cli.url)?;
    let text = String::from_utf8(read_input(file)?).context("input is not UTF-8")?;
    let mut failures = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let event = SanitisedEvent::from_json(line.as_bytes()).with_context(|| format!("line {}", i + 1))?;
        let posted = client.upload(&event)?;
        match posted.status {
            201 => writeln!(out, "stored {}", event.event_id)?,
            200 => writeln!(out, "duplicate {}", event.event_id)?,
            status => {
                failures += 1;
                eprintln!("line {}: rejected with {status}: {}", i + 1, posted.body);
            }
        }
    }
    if failures > 0 {
        bail!("{failures} event(s) rejected");
    }
    Ok(())
}

fn cmd_query(cli: &Cli, target: &Target, out: &mut impl Write) -> anyhow::Result<()> {
    let digest = target.digest()?;
    let events = Client::new(&cli.url)?.events(&digest)?;
    match cli.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&events)?)?,
        Format::Table => write!(out, "{}", output::events_table(&events))?,
    }
    Ok(())
}

fn cmd_verify(
    cli: &Cli,
    target: &Target,
    journal: Option<&Path>,
    recurse: bool,
    out: &mut impl Write,
) -> anyhow::Result<ChainVerdict> {
    let digest = target.digest()?;
    let verdict = match journal {
        Some(path) => {
            let store = DiscoveryStore::restore(path).with_context(|| format!("loading {}", path.display()))?;
            verify_chain(&digest, &store, recurse).unwrap_or_else(|never| match never {})
        }
        None => verify_chain(&digest, &Client::new(&cli.url)?, recurse)?,
    };
    match cli.format {
        Format::Json => writeln!(out, "{}", verdict.to_json_pretty())?,
        Format::Table => write!(out, "{}", output::verdict_table(&verdict))?,
    }
    Ok(verdict)
}

fn cmd_request(cli: &Cli, args: &RequestArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let valid_until: ValidUntil = args.valid_until.parse().map_err(|e: String| anyhow!(e))?;
    let protocol: Protocol = args.protocol.parse().map_err(|e: String| anyhow!(e))?;
    let mut request = AccessRequest::new(target_digest(&args.target)?, &args.endpoint, protocol, valid_until);
    if let Some(id) = &args.id {
        request.auth = Some([("id".to_string(), json!(id))].into_iter().collect());
    }
    if let Some(key) = &args.sign {
        sign_request(&mut request, &keys::load_signing(key)?);
    }
    let posted = Client::new(&cli.url)?.post_request(&request)?;
    if posted.status != 201 {
        bail!("dead drop answered {}: {}", posted.status, posted.body);
    }
    writeln!(out, "{}", posted.body["requestId"].as_str().unwrap_or_default())?;
    Ok(())
}

fn target_digest(t: &Target) -> anyhow::Result<Digest> {
    t.digest()
}

fn cmd_owner(cli: &Cli, cmd: &OwnerCommand, out: &mut impl Write) -> anyhow::Result<()> {
    let client = Client::new(&cli.url)?;
    match cmd {
        OwnerCommand::Poll { target, policy } => {
            let policy = policy.load()?;
            for r in client.poll(&target.digest()?)? {
                let decision = evaluate_auth(&r, &policy);
                match cli.format {
                    Format::Json => writeln!(
                        out,
                        "{}",
                        json!({
                            "requestId": r.request_id(),
                            "decision": format!("{decision:?}").to_lowercase(),
                            "request": r,
                        })
                    )?,
                    Format::Table => writeln!(
                        out,
                        "{} {:<8} {} {} until {}",
                        r.request_id(),
                        format!("{decision:?}"),
                        r.recipient.protocol,
                        r.recipient.endpoint,
                        r.valid_until
                    )?,
                }
            }
            Ok(())
        }
        OwnerCommand::Respond {
            target,
            request_id,
            payload,
            policy,
            fields,
            retries,
        } => {
            let policy = policy.load()?;
            let request = client
                .poll(&target.digest()?)?
                .into_iter()
                .find(|r| r.request_id() == *request_id)
                .ok_or_else(|| anyhow!("no live request {request_id}"))?;
            let decision = evaluate_auth(&request, &policy);
            if decision == AuthDecision::Denied {
                bail!("request {request_id} is not granted by the policy; leaving it to expire");
            }
            let mut body = read_input(payload)?;
            if !fields.is_empty() {
                let event: Event = serde_json::from_slice(&body).context("--fields needs a single clear-text event")?;
                let names: Vec<&str> = fields.iter().map(String::as_str).collect();
                body = serde_json::to_vec(&redact(&event, &names))?;
            }
            let result = Responder::new()
                .with_retries(*retries)
                .respond(&request, decision, &body)?;
            match result {
                discovery_core::dead_drop::respond::DeliveryResult::Delivered { attempts } => {
                    writeln!(out, "delivered after {attempts} attempt(s)")?;
                    Ok(())
                }
                discovery_core::dead_drop::respond::DeliveryResult::Failed { attempts, reason } => {
                    bail!("delivery failed after {attempts} attempt(s): {reason}")
                }
            }
        }
    }
}

fn parse_fault(s: &str) -> anyhow::Result<(FaultKind, usize)> {
    let (kind, index) = s.split_once(':').ok_or_else(|| anyhow!("fault must be <kind>:<index>"))?;
    let kind = match kind.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "dropship" => FaultKind::DropShip,
        "dropreceive" => FaultKind::DropReceive,
        "tamperepc" => FaultKind::TamperEpc,
        other => bail!("unknown fault kind {other:?}"),
    };
    Ok((kind, index.parse().context("fault index")?))
}

fn cmd_simulate(args: &SimulateArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let spec = match &args.spec {
        Some(path) => serde_json::from_slice(&read_input(path)?).context("network spec")?,
        None => NetworkSpec::electronics(args.seed),
    };
    let mut sim = simulate(&spec)?;
    if let Some(fault) = &args.fault {
        let (kind, index) = parse_fault(fault)?;
        sim.events = inject_fault(&sim.events, kind, index)?;
        sim.manifest.event_count = sim.events.len();
    }
    sim.write_to(&args.out)?;
    writeln!(out, "{} events written to {}", sim.events.len(), args.out.display())?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let code = match &cli.command {
        Command::Sanitise(args) => cmd_sanitise(args, &mut out).map(|_| 0)?,
        Command::Upload { file } => cmd_upload(cli, file, &mut out).map(|_| 0)?,
        Command::Query(target) => cmd_query(cli, target, &mut out).map(|_| 0)?,
        Command::Verify {
            target,
            journal,
            recurse,
        } => match cmd_verify(cli, target, journal.as_deref(), *recurse, &mut out)? {
            ChainVerdict::Complete { .. } => 0,
            ChainVerdict::Broken { .. } => EXIT_BROKEN,
            ChainVerdict::Unknown { .. } => EXIT_UNKNOWN,
        },
        Command::Request(args) => cmd_request(cli, args, &mut out).map(|_| 0)?,
        Command::Owner(cmd) => cmd_owner(cli, cmd, &mut out).map(|_| 0)?,
        Command::Simulate(args) => cmd_simulate(args, &mut out).map(|_| 0)?,
        Command::Keygen { out: path } => {
            let public = keys::generate(path)?;
            writeln!(
                out,
                "{}",
                base64::Engine::encode(&base64::engine::general_purpose::STANDARD, public.as_bytes())
            )?;
            0
        }
    };
    out.flush()?;
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn fault_syntax() {
        assert_eq!(parse_fault("drop-receive:4").unwrap(), (FaultKind::DropReceive, 4));
        assert_eq!(parse_fault("DropShip:0").unwrap(), (FaultKind::DropShip, 0));
        assert_eq!(parse_fault("tamper_epc:2").unwrap(), (FaultKind::TamperEpc, 2));
        assert!(parse_fault("drop:1").is_err());
        assert!(parse_fault("drop-ship").is_err());
    }

    #[test]
    fn target_hashes_locally() {
        let t = Target {
            epc: Some("urn:epc:id:sscc:4023333.0222222222".into()),
            hash: None,
        };
        assert_eq!(
            t.digest().unwrap().to_hex(),
            "e5284a01b67b7756c0f51d10e7c74c6f277fea0e1f08ebe8f27fae25b04e695b"
        );
    }

    #[test]
    fn input_detection() {
        let xml = include_bytes!("../../core/fixtures/shipping_event.xml");
        assert_eq!(parse_events(xml, InputFormat::Auto).unwrap().len(), 1);
        let events = parse_events(xml, InputFormat::Xml).unwrap();
        let ndjson = discovery_core::event::serialize_ndjson(&events);
        assert_eq!(parse_events(ndjson.as_bytes(), InputFormat::Auto).unwrap(), events);
        let json = discovery_core::event::serialize_json(&events);
        assert_eq!(parse_events(json.as_bytes(), InputFormat::Auto).unwrap(), events);
    }
}
