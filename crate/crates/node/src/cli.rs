//! Operator command line: node lifecycle commands plus thin clients of the
//! admin API.

use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value as Json};

use crate::admin::AdminServer;
use crate::bench::{self, BenchConfig, BenchToken};
use crate::chains::ChainExport;
use crate::config::{NodeConfig, TransportMode};
use crate::node::{Node, NodeDeps};
use crate::registry::{RegistryService, RegistryStore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_UNREACHABLE: i32 = 2;
pub const EXIT_FAILED: i32 = 3;

const PASSWORD_ENV: &str = "DATAVAULT_PASSWORD";
const ADMIN_ADDR_FILE: &str = "admin.addr";

#[derive(Debug, Parser)]
#[command(name = "datavault", version, about = "Peer-to-peer personal data vault")]
pub struct Cli {
    /// Node configuration file.
    #[arg(long, global = true, default_value = "datavault.toml")]
    pub config: PathBuf,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the vault and identity and register the DID.
    Init(PasswordArgs),
    /// Run the node in the foreground until stopped.
    Serve(PasswordArgs),
    /// Unlock the running node's vault.
    Unlock(PasswordArgs),
    /// Lock the running node's vault.
    Lock,
    /// Shut the running node down.
    Stop,
    /// Identity and lock state of the running node.
    Status,
    /// Live peers found by discovery.
    Peers,
    /// Local vault tree, or the subtree a peer grants this node.
    Browse {
        peer: Option<String>,
        /// Tokens to present: credentials, attestations, presentation, session or none.
        #[arg(long, default_value = "credentials")]
        tokens: String,
    },
    /// Fetch a file from a peer.
    Get {
        peer: String,
        path: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Store a local file in the vault.
    Put { path: String, file: PathBuf },
    /// Remove a file or empty folder from the vault.
    Rm { path: String },
    #[command(subcommand)]
    Policy(PolicyCommand),
    #[command(subcommand)]
    Sic(SicCommand),
    #[command(subcommand)]
    Trust(TrustCommand),
    #[command(subcommand)]
    Log(LogCommand),
    /// Verification counts, request sizes and transfer times.
    Metrics,
    /// Request-per-token-type experiment; prints CSV.
    Bench(BenchArgs),
    #[command(subcommand)]
    Registry(RegistryCommand),
    /// Print a configuration file with every key at its default.
    ConfigTemplate,
}

#[derive(Debug, Args)]
pub struct PasswordArgs {
    /// Read the password from this file instead of the environment or stdin.
    #[arg(long)]
    pub password_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PolicyCommand {
    Show {
        path: String,
    },
    /// Set a policy from the expression syntax, or a JSON policy node.
    Set {
        path: String,
        policy: String,
        /// combined, read or write.
        #[arg(long, default_value = "combined")]
        slot: String,
    },
    Clear {
        path: String,
        #[arg(long, default_value = "combined")]
        slot: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum SicCommand {
    /// Issue a self-issued credential to a peer: `sic issue <peer> k=v...`.
    Issue {
        peer: String,
        #[arg(required = true)]
        claims: Vec<String>,
        /// Subject DID, when the peer does not announce one.
        #[arg(long)]
        subject: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TrustCommand {
    Add { issuer: String },
    Rm { issuer: String },
    List,
}

#[derive(Debug, Subcommand)]
pub enum LogCommand {
    List,
    /// Verify the node's chain, or an exported chain file offline.
    Verify {
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Ask whether a block's bloom filter records a path.
    Audit { block: String, path: String },
    /// Write the chain as JSON for offline verification.
    Export {
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Seconds between requests.
    #[arg(long, default_value_t = 5.0)]
    pub delta: f64,
    /// File size in kB (1000 bytes).
    #[arg(long, default_value_t = 220)]
    pub size: usize,
    /// Requests per token type.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value = "udp")]
    pub transport: String,
    /// Write the CSV here instead of stdout.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Compare AES-CTR and AES-CBC throughput over this many MiB instead.
    #[arg(long)]
    pub ciphers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum RegistryCommand {
    /// Run a standalone registry service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7080")]
        listen: std::net::SocketAddr,
    },
}

/// Error carrying the exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(m: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: m.to_string(),
        }
    }

    fn unreachable(m: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_UNREACHABLE,
            message: m.to_string(),
        }
    }

    fn failed(m: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_FAILED,
            message: m.to_string(),
        }
    }
}

type CliResult = Result<(), Failure>;

/// Parses `args` and runs the command, writing results to `out`. Returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            if cli.json {
                let _ = writeln!(out, "{}", json!({ "error": f.message, "exit_code": f.code }));
            }
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn load_config(cli: &Cli) -> Result<NodeConfig, Failure> {
    if cli.config.exists() {
        NodeConfig::load(&cli.config).map_err(Failure::usage)
    } else if cli.config == Path::new("datavault.toml") {
        Ok(NodeConfig::default())
    } else {
        Err(Failure::usage(format!("config file {} not found", cli.config.display())))
    }
}

fn read_password(args: &PasswordArgs) -> Result<String, Failure> {
    if let Some(p) = &args.password_file {
        let text = std::fs::read_to_string(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
        return Ok(text.trim_end_matches(['\r', '\n']).to_string());
    }
    if let Ok(p) = std::env::var(PASSWORD_ENV) {
        return Ok(p);
    }
    eprint!("password: ");
    let mut line = String::new();
    std::io::stdin().lock().read_line(&mut line).map_err(Failure::usage)?;
    let pw = line.trim_end_matches(['\r', '\n']).to_string();
    if pw.is_empty() {
        return Err(Failure::usage(format!("no password given (set {PASSWORD_ENV} or pipe it on stdin)")));
    }
    Ok(pw)
}

fn emit(out: &mut dyn Write, cli: &Cli, value: &Json, text: impl FnOnce() -> String) -> CliResult {
    let s = if cli.json {
        serde_json::to_string_pretty(value).expect("serializable")
    } else {
        text()
    };
    writeln!(out, "{s}").map_err(Failure::failed)
}

/// Minimal client of the admin API.
struct Api {
    base: String,
    agent: ureq::Agent,
}

impl Api {
    fn connect(cfg: &NodeConfig) -> Result<Self, Failure> {
        let addr = if cfg.admin_port != 0 {
            format!("127.0.0.1:{}", cfg.admin_port)
        } else {
            std::fs::read_to_string(cfg.vault_dir.join(ADMIN_ADDR_FILE))
                .map(|s| s.trim().to_string())
                .map_err(|_| Failure::unreachable("node is not running (no admin address recorded)"))?
        };
        Ok(Self {
            base: format!("http://{addr}/api"),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(600)).build(),
        })
    }

    fn call(&self, method: &str, path: &str, query: &[(&str, &str)], body: Option<Json>) -> Result<ureq::Response, Failure> {
        let mut req = self.agent.request(method, &format!("{}/{}", self.base, path));
        for (k, v) in query {
            req = req.query(k, v);
        }
        let res = match body {
            Some(b) => req.send_json(b),
            None => req.call(),
        };
        match res {
            Ok(r) => Ok(r),
            Err(ureq::Error::Status(_, r)) => {
                let body: Json = r.into_json().unwrap_or(Json::Null);
                let code = body["error"].as_str().unwrap_or("Error");
                let detail = body["detail"].as_str().unwrap_or("");
                Err(Failure::failed(format!("{code}: {detail}")))
            }
            Err(e) => Err(Failure::unreachable(format!("node unreachable: {e}"))),
        }
    }

    fn json(&self, method: &str, path: &str, query: &[(&str, &str)], body: Option<Json>) -> Result<Json, Failure> {
        self.call(method, path, query, body)?.into_json().map_err(Failure::failed)
    }

    fn bytes(&self, path: &str, query: &[(&str, &str)]) -> Result<Vec<u8>, Failure> {
        let mut buf = Vec::new();
        self.call("GET", path, query, None)?
            .into_reader()
            .take(datavault_core::MAX_FILE_SIZE as u64 + 1)
            .read_to_end(&mut buf)
            .map_err(Failure::failed)?;
        Ok(buf)
    }

    fn put_bytes(&self, path: &str, query: &[(&str, &str)], bytes: &[u8]) -> Result<Json, Failure> {
        let mut req = self.agent.put(&format!("{}/{}", self.base, path));
        for (k, v) in query {
            req = req.query(k, v);
        }
        match req.send_bytes(bytes) {
            Ok(r) => r.into_json().map_err(Failure::failed),
            Err(ureq::Error::Status(_, r)) => {
                let body: Json = r.into_json().unwrap_or(Json::Null);
                Err(Failure::failed(format!(
                    "{}: {}",
                    body["error"].as_str().unwrap_or("Error"),
                    body["detail"].as_str().unwrap_or("")
                )))
            }
            Err(e) => Err(Failure::unreachable(format!("node unreachable: {e}"))),
        }
    }
}

fn render_tree(tree: &Json, indent: usize, out: &mut String) {
    if let Some(map) = tree.as_object() {
        for (name, child) in map {
            match child {
                Json::Object(_) => {
                    out.push_str(&format!("{:indent$}{name}/\n", ""));
                    render_tree(child, indent + 2, out);
                }
                size => out.push_str(&format!("{:indent$}{name}  ({size} bytes)\n", "")),
            }
        }
    }
}

fn tree_text(tree: &Json) -> String {
    let mut s = String::new();
    render_tree(tree, 0, &mut s);
    if s.is_empty() {
        s.push_str("(empty)");
    }
    s.trim_end().to_string()
}

/// Parses `k=v`: integers, decimals, `YYYY-MM-DD` dates and strings.
pub fn parse_claim(arg: &str) -> Result<(String, Json), Failure> {
    let (k, v) = arg
        .split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Failure::usage(format!("claim {arg:?} is not k=v")))?;
    let value = if let Ok(i) = v.parse::<i64>() {
        json!(i)
    } else if let Some(f) = v.parse::<f64>().ok().filter(|f| f.is_finite()) {
        json!(f)
    } else if datavault_core::Date::parse(v).is_some() {
        json!({ "date": v })
    } else {
        json!(v.trim_matches('"'))
    };
    Ok((k.to_string(), value))
}

fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::Init(pw) => init(cli, pw, out),
        Command::Serve(pw) => serve(cli, pw, out),
        Command::Registry(RegistryCommand::Serve { listen }) => registry_serve(*listen, out),
        Command::ConfigTemplate => writeln!(out, "{}", NodeConfig::default().to_toml()).map_err(Failure::failed),
        Command::Bench(args) => bench_cmd(cli, args, out),
        Command::Log(LogCommand::Verify { file: Some(file) }) => verify_file(cli, file, out),
        _ => api_command(cli, out),
    }
}

fn init(cli: &Cli, pw: &PasswordArgs, out: &mut dyn Write) -> CliResult {
    let cfg = load_config(cli)?;
    let password = read_password(pw)?;
    let deps = NodeDeps::from_config(&cfg);
    let report = Node::init(&cfg, &password, &*deps.registry, &*deps.clock).map_err(Failure::failed)?;
    emit(out, cli, &json!(report), || {
        let mut s = format!(
            "vault created at {}\nDID          {}\nfingerprint  {}",
            cfg.vault_dir.display(),
            report.did,
            report.fingerprint
        );
        if !report.did_registered {
            s.push_str("\nwarning: DID not registered (registry unavailable); retried on serve");
        }
        s
    })
}

fn serve(cli: &Cli, pw: &PasswordArgs, out: &mut dyn Write) -> CliResult {
    let cfg = load_config(cli)?;
    let password = read_password(pw)?;
    let mut deps = NodeDeps::from_config(&cfg);
    if cfg.transport == TransportMode::Simulated {
        deps.transport = None;
    }
    let webui = cfg.webui_dir.clone();
    let admin_port = cfg.admin_port;
    let addr_file = cfg.vault_dir.join(ADMIN_ADDR_FILE);
    let node = Node::start(cfg, &password, deps).map_err(Failure::failed)?;
    let admin = match AdminServer::start(node.clone(), admin_port, webui) {
        Ok(a) => a,
        Err(e) => {
            node.shutdown();
            return Err(Failure::failed(e));
        }
    };
    let running = Running {
        node: node.clone(),
        admin,
        addr_file,
    };
    std::fs::write(&running.addr_file, running.admin.addr().to_string()).map_err(Failure::failed)?;
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        if let Err(e) = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)) {
            log::warn!("signal handler not installed: {e}");
        }
    }
    let banner = emit(
        out,
        cli,
        &json!({ "fingerprint": node.fingerprint(), "listen": node.local_addr(), "admin": running.admin.url() }),
        || format!("node {} on {}\nadmin API {}", node.fingerprint(), node.local_addr(), running.admin.url()),
    )
    .and_then(|()| out.flush().map_err(Failure::failed));
    if let Err(e) = banner {
        log::warn!("startup banner not written: {}", e.message);
    }
    while !stop.load(Ordering::SeqCst) && !node.is_shut_down() {
        std::thread::sleep(Duration::from_millis(100));
    }
    drop(running);
    Ok(())
}

/// A served node; stopping it also stops the admin API and removes the
/// recorded admin address.
struct Running {
    node: Arc<Node>,
    admin: AdminServer,
    addr_file: PathBuf,
}

impl Drop for Running {
    fn drop(&mut self) {
        self.admin.stop();
        self.node.shutdown();
        let _ = std::fs::remove_file(&self.addr_file);
    }
}

fn registry_serve(listen: std::net::SocketAddr, out: &mut dyn Write) -> CliResult {
    let svc = RegistryService::start(listen, Arc::new(RegistryStore::new())).map_err(Failure::failed)?;
    writeln!(out, "registry on {}", svc.url()).map_err(Failure::failed)?;
    out.flush().map_err(Failure::failed)?;
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        let _ = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst));
    }
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(100));
    }
    svc.shutdown();
    Ok(())
}

fn verify_file(cli: &Cli, file: &Path, out: &mut dyn Write) -> CliResult {
    let text = std::fs::read(file).map_err(|e| Failure::usage(format!("{}: {e}", file.display())))?;
    let export: ChainExport =
        serde_json::from_slice(&text).map_err(|e| Failure::failed(format!("not a chain export: {e}")))?;
    match export.verify() {
        Ok(report) => emit(out, cli, &json!({ "ok": true, "report": report }), || {
            format!("chain ok: {} blocks, {} pending", report.blocks, report.pending.len())
        }),
        Err(broken) => {
            emit(
                out,
                cli,
                &json!({ "ok": false, "position": broken.position, "reason": broken.reason.to_string() }),
                || format!("chain broken at block {}: {}", broken.position, broken.reason),
            )?;
            Err(Failure::failed(format!("chain broken at block {}", broken.position)))
        }
    }
}

fn bench_cmd(cli: &Cli, args: &BenchArgs, out: &mut dyn Write) -> CliResult {
    if let Some(mib) = args.ciphers {
        let b = bench::cipher_benchmark(mib * 1024 * 1024, 3);
        return emit(out, cli, &json!(b), || {
            format!(
                "AES-256 over {} MiB (best of 3)\nCTR encrypt {:>9.1} MiB/s   decrypt {:>9.1} MiB/s\nCBC encrypt {:>9.1} MiB/s   decrypt {:>9.1} MiB/s",
                mib, b.ctr_encrypt_mib_s, b.ctr_decrypt_mib_s, b.cbc_encrypt_mib_s, b.cbc_decrypt_mib_s
            )
        });
    }
    if !(args.delta >= 0.0 && args.delta.is_finite()) {
        return Err(Failure::usage("--delta must be a non-negative number"));
    }
    let transport = match args.transport.as_str() {
        "udp" => TransportMode::Udp,
        "simulated" => TransportMode::Simulated,
        other => return Err(Failure::usage(format!("unknown transport {other:?}"))),
    };
    let cfg = BenchConfig {
        delta: Duration::from_secs_f64(args.delta),
        size_bytes: args.size * 1000,
        runs: args.n,
        transport,
        tokens: BenchToken::ALL.to_vec(),
        ..BenchConfig::default()
    };
    let rows = bench::run(&cfg, |r| log::info!("{} run {} ok={}", r.token_type.name(), r.run, r.ok)).map_err(Failure::failed)?;
    match &args.output {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(Failure::failed)?;
            bench::write_csv(f, &rows).map_err(Failure::failed)?;
        }
        None => bench::write_csv(&mut *out, &rows).map_err(Failure::failed)?,
    }
    if rows.iter().all(|r| r.ok) {
        Ok(())
    } else {
        Err(Failure::failed("some requests failed"))
    }
}

fn api_command(cli: &Cli, out: &mut dyn Write) -> CliResult {
    let cfg = load_config(cli)?;
    let api = Api::connect(&cfg)?;
    match &cli.command {
        Command::Unlock(pw) => {
            let password = read_password(pw)?;
            let v = api.json("POST", "unlock", &[], Some(json!({ "password": password })))?;
            emit(out, cli, &v, || {
                let r = &v["report"];
                format!("unlocked: {} files, {} folders, {} corrupt", r["files"], r["folders"], r["corrupt"].as_array().map_or(0, Vec::len))
            })
        }
        Command::Lock => {
            let v = api.json("POST", "lock", &[], None)?;
            emit(out, cli, &v, || "locked".into())
        }
        Command::Stop => {
            let v = api.json("POST", "shutdown", &[], None)?;
            emit(out, cli, &v, || "stopping".into())
        }
        Command::Status => {
            let v = api.json("GET", "status", &[], None)?;
            emit(out, cli, &v, || {
                format!(
                    "fingerprint  {}\nDID          {}\nlisten       {}\nunlocked     {}",
                    v["fingerprint"].as_str().unwrap_or("-"),
                    v["did"].as_str().unwrap_or("(locked)"),
                    v["listen"].as_str().unwrap_or("-"),
                    v["unlocked"]
                )
            })
        }
        Command::Peers => {
            let v = api.json("GET", "peers", &[], None)?;
            emit(out, cli, &v, || {
                let rows: Vec<String> = v
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|p| {
                        format!(
                            "{}  {}  {}",
                            &p["fingerprint"].as_str().unwrap_or("")[..16.min(p["fingerprint"].as_str().unwrap_or("").len())],
                            p["addr"].as_str().unwrap_or(""),
                            p["did"].as_str().unwrap_or("-")
                        )
                    })
                    .collect();
                if rows.is_empty() {
                    "no peers".into()
                } else {
                    rows.join("\n")
                }
            })
        }
        Command::Browse { peer: None, .. } => {
            let v = api.json("GET", "tree", &[], None)?;
            emit(out, cli, &v, || tree_text(&v["tree"]))
        }
        Command::Browse { peer: Some(peer), tokens } => {
            let v = api.json("GET", &format!("peers/{}/tree", encode_segment(peer)), &[("tokens", tokens)], None)?;
            emit(out, cli, &v, || tree_text(&v["tree"]))
        }
        Command::Get { peer, path, output } => {
            let bytes = api.bytes(&format!("peers/{}/file", encode_segment(peer)), &[("path", path)])?;
            match output {
                Some(p) => {
                    std::fs::write(p, &bytes).map_err(Failure::failed)?;
                    emit(out, cli, &json!({ "path": path, "bytes": bytes.len(), "output": p }), || {
                        format!("{} bytes written to {}", bytes.len(), p.display())
                    })
                }
                None if cli.json => emit(out, cli, &json!({ "path": path, "bytes": bytes.len() }), String::new),
                None => out.write_all(&bytes).map_err(Failure::failed),
            }
        }
        Command::Put { path, file } => {
            let bytes = std::fs::read(file).map_err(|e| Failure::usage(format!("{}: {e}", file.display())))?;
            let v = api.put_bytes("files", &[("path", path)], &bytes)?;
            emit(out, cli, &v, || format!("stored {} ({} bytes)", path, bytes.len()))
        }
        Command::Rm { path } => {
            let v = api.json("DELETE", "files", &[("path", path)], None)?;
            emit(out, cli, &v, || format!("deleted {}", v["deleted"]))
        }
        Command::Policy(PolicyCommand::Show { path }) => {
            let v = api.json("GET", "policy", &[("path", path)], None)?;
            emit(out, cli, &v, || policy_text(&v))
        }
        Command::Policy(PolicyCommand::Set { path, policy, slot }) => {
            let body = if policy.trim_start().starts_with('{') {
                let node: Json = serde_json::from_str(policy).map_err(|e| Failure::usage(format!("policy JSON: {e}")))?;
                json!({ "slot": slot, "node": node })
            } else {
                json!({ "slot": slot, "expression": policy })
            };
            let v = api.json("PUT", "policy", &[("path", path)], Some(body))?;
            emit(out, cli, &v, || policy_text(&v))
        }
        Command::Policy(PolicyCommand::Clear { path, slot }) => {
            let v = api.json("PUT", "policy", &[("path", path)], Some(json!({ "slot": slot, "clear": true })))?;
            emit(out, cli, &v, || policy_text(&v))
        }
        Command::Sic(SicCommand::Issue { peer, claims, subject }) => {
            let claims = claims.iter().map(|c| parse_claim(c)).collect::<Result<serde_json::Map<_, _>, _>>()?;
            let mut body = json!({ "peer": peer, "claims": claims });
            if let Some(s) = subject {
                body["subject"] = json!(s);
            }
            let v = api.json("POST", "sic", &[], Some(body))?;
            emit(out, cli, &v, || format!("issued {} to {}", v["id"].as_str().unwrap_or("?"), v["credentialSubject"]["id"].as_str().unwrap_or("?")))
        }
        Command::Trust(TrustCommand::Add { issuer }) => {
            let v = api.json("POST", "trust", &[], Some(json!({ "issuer": issuer })))?;
            emit(out, cli, &v, || format!("trusted {issuer}"))
        }
        Command::Trust(TrustCommand::Rm { issuer }) => {
            let v = api.json("DELETE", "trust", &[("issuer", issuer)], None)?;
            emit(out, cli, &v, || format!("removed {issuer}"))
        }
        Command::Trust(TrustCommand::List) => {
            let v = api.json("GET", "trust", &[], None)?;
            emit(out, cli, &v, || {
                v.as_array().into_iter().flatten().filter_map(|i| i.as_str()).collect::<Vec<_>>().join("\n")
            })
        }
        Command::Log(LogCommand::List) => {
            let v = api.json("GET", "log", &[], None)?;
            let summary = json!({ "owner": v["owner"], "blocks": v["blocks"] });
            emit(out, cli, &summary, || {
                let rows: Vec<String> = v["blocks"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|b| {
                        format!(
                            "{:>4}  {}  {:<9}  granted={:<4} {}",
                            b["position"],
                            &b["hash"].as_str().unwrap_or("")[..16],
                            b["role"].as_str().unwrap_or(""),
                            b["granted"],
                            if b["countersigned"] == json!(true) { "dual-signed" } else { "pending" }
                        )
                    })
                    .collect();
                if rows.is_empty() {
                    "empty chain".into()
                } else {
                    rows.join("\n")
                }
            })
        }
        Command::Log(LogCommand::Verify { file: None }) => {
            let v = api.call("GET", "log/verify", &[], None)?.into_json::<Json>().map_err(Failure::failed)?;
            emit(out, cli, &v, || format!("chain ok: {} blocks", v["report"]["blocks"]))
        }
        Command::Log(LogCommand::Export { output }) => {
            let v = api.json("GET", "log", &[], None)?;
            let text = serde_json::to_string_pretty(&v["export"]).expect("serializable");
            match output {
                Some(p) => {
                    std::fs::write(p, text).map_err(Failure::failed)?;
                    let blocks = v["blocks"].as_array().map_or(0, Vec::len);
                    emit(out, cli, &json!({ "blocks": blocks, "output": p }), || {
                        format!("{blocks} blocks written to {}", p.display())
                    })
                }
                None => writeln!(out, "{text}").map_err(Failure::failed),
            }
        }
        Command::Log(LogCommand::Audit { block, path }) => {
            let v = api.json("GET", "log/audit", &[("block", block), ("path", path)], None)?;
            emit(out, cli, &v, || {
                let verdict = &v["verdict"];
                if verdict["present"] == json!(true) {
                    format!("{path}: probably granted (false-positive rate {:.4})", verdict["false_positive_rate"].as_f64().unwrap_or(0.0))
                } else {
                    format!("{path}: not granted in this block")
                }
            })
        }
        Command::Metrics => {
            let v = api.json("GET", "metrics", &[], None)?;
            let summary = json!({ "totals": v["totals"], "last_request": v["last_request"], "transport": v["transport"] });
            emit(out, cli, &v, || serde_json::to_string_pretty(&summary).expect("serializable"))
        }
        Command::Init(_)
        | Command::Serve(_)
        | Command::Bench(_)
        | Command::Registry(_)
        | Command::ConfigTemplate
        | Command::Log(LogCommand::Verify { file: Some(_) }) => unreachable!("handled in execute"),
    }
}

fn encode_segment(s: &str) -> String {
    form_urlencoded::byte_serialize(s.as_bytes()).collect()
}

fn policy_text(v: &Json) -> String {
    let e = &v["expressions"];
    let mut lines = vec![format!("{} (version {})", if v["path"] == "" { "/" } else { v["path"].as_str().unwrap_or("?") }, v["version"])];
    for slot in ["combined", "read", "write"] {
        if let Some(x) = e[slot].as_str() {
            lines.push(format!("  {slot}: {x}"));
        }
    }
    if lines.len() == 1 {
        lines.push("  unrestricted".into());
    }
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("datavault").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8_lossy(&out).into(), String::from_utf8_lossy(&err).into())
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["sic", "issue", "peer"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn api_verbs_without_node_exit_2() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "admin_port = 1\n").unwrap();
        let (code, _, err) = run_args(&["--config", cfg.to_str().unwrap(), "peers"]);
        assert_eq!(code, EXIT_UNREACHABLE, "{err}");
        std::fs::write(&cfg, "admin_port = 0\nvault_dir = \"nowhere\"\n").unwrap();
        assert_eq!(run_args(&["--config", cfg.to_str().unwrap(), "metrics"]).0, EXIT_UNREACHABLE);
    }

    #[test]
    fn claims_are_typed() {
        assert_eq!(parse_claim("age=18").unwrap().1, json!(18));
        assert_eq!(parse_claim("gpa=7.5").unwrap().1, json!(7.5));
        assert_eq!(parse_claim("born=2000-02-29").unwrap().1, json!({"date": "2000-02-29"}));
        assert_eq!(parse_claim("u=TU Delft").unwrap().1, json!("TU Delft"));
        assert!(parse_claim("=x").is_err());
        assert!(parse_claim("novalue").is_err());
    }

    #[test]
    fn missing_explicit_config_is_usage_error() {
        assert_eq!(run_args(&["--config", "/nonexistent/x.toml", "status"]).0, EXIT_USAGE);
    }
}
