mod dump;

use std::fs;
use std::io::{self, Write};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use ocsc_core::agent::{serve, AgentPolicy, AgentTarget, SeededBugs, DEFAULT_AGENT_PORT};
use ocsc_core::codec::{parse_frame, reference, Profile};
use ocsc_core::mutate::SeedCorpus;
use ocsc_core::orchestrator::{
    minimize, replay, run_campaign, CampaignConfig, CrashReport, MinimizeOptions, RemoteTarget,
    Target,
};
use ocsc_core::scenario::{run_all, run_scenario, ScenarioOptions, ScenarioResult, Verdict};

const EXIT_RUNTIME: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "ocsc",
    version,
    about = "OCSC IPC codec, fuzzer and mock agent"
)]
struct Cli {
    /// Directory for every artifact the command writes.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print a frame file as header fields, TLVs and trailer.
    Decode { input: PathBuf },
    /// Build a frame file from `decode` output.
    Encode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run a fuzzing campaign.
    Fuzz(FuzzArgs),
    /// Re-run a crash report against a fresh target.
    Replay {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 3)]
        attempts: u32,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Shrink a crash report to a minimal sequence.
    Minimize {
        #[arg(long)]
        report: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also shrink the bytes of each remaining frame.
        #[arg(long)]
        bytes: bool,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Run the mock agent.
    Serve(ServeArgs),
    /// Reproduce an architectural issue against a private mock agent.
    Scenario(ScenarioArgs),
}

#[derive(Args)]
struct TargetArgs {
    /// host:port of a running agent. Defaults to the target in the report.
    #[arg(long)]
    target: Option<String>,
    /// Run against an in-process mock agent with these bugs (`none`, `all`, `b1,b3`).
    #[arg(long, value_name = "BUGS")]
    spawn_agent: Option<SeededBugs>,
    #[arg(long, value_name = "MS", requires = "spawn_agent")]
    b3_timer_ms: Option<u64>,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of seed frames. The built-in listing frame is used otherwise.
    #[arg(long)]
    seeds: Option<PathBuf>,
    #[arg(long)]
    max_execs: Option<u64>,
    #[arg(long)]
    rng_seed: Option<u64>,
    /// Any campaign setting as key=value; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(flatten)]
    target: TargetArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = DEFAULT_AGENT_PORT)]
    port: u16,
    /// Sandbox root; `<workdir>/sandbox` when omitted.
    #[arg(long)]
    sandbox: Option<PathBuf>,
    #[arg(long, default_value = "none")]
    bugs: SeededBugs,
    #[arg(long, value_name = "MS")]
    b3_timer_ms: Option<u64>,
    /// Local policy XML; only RestrictScriptWebDeploy is read.
    #[arg(long)]
    policy_file: Option<PathBuf>,
    /// Come back up after a crash.
    #[arg(long)]
    restart: bool,
    /// Stop after this long instead of running until killed.
    #[arg(long, value_name = "MS")]
    duration_ms: Option<u64>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(value_parser = ["downgrade", "script-overwrite", "profile-overwrite", "all"])]
    name: String,
    /// Turn RestrictScriptWebDeploy on.
    #[arg(long)]
    restrict: bool,
    /// Turn on the installer's version-order check.
    #[arg(long)]
    enforce_version_order: bool,
    #[arg(long)]
    wrong_digest: bool,
    #[arg(long)]
    tamper_payload: bool,
    #[arg(long)]
    skip_reconnect: bool,
    /// Not supported: scenarios only run against their own mock agent.
    #[arg(long)]
    target: Option<String>,
}

enum Failure {
    Usage(String),
    Parse(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let workdir = cli.workdir;
    let result = match cli.cmd {
        Cmd::Decode { input } => decode(&input),
        Cmd::Encode { input, output } => encode(&input, &output),
        Cmd::Fuzz(args) => fuzz(args, workdir),
        Cmd::Replay {
            report,
            attempts,
            target,
        } => replay_cmd(&report, attempts, &target, workdir),
        Cmd::Minimize {
            report,
            output,
            bytes,
            target,
        } => minimize_cmd(&report, output, bytes, &target, workdir),
        Cmd::Serve(args) => serve_cmd(args, workdir),
        Cmd::Scenario(args) => scenario(args),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Parse(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_PARSE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn decode(input: &Path) -> CmdResult {
    let raw = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let msg = parse_frame(&raw).map_err(|e| Failure::Parse(format!("{}: {e}", input.display())))?;
    print!("{}", dump::render(&msg, &Profile::default()));
    Ok(ExitCode::SUCCESS)
}

fn encode(input: &Path, output: &Path) -> CmdResult {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let raw =
        dump::parse(&text).map_err(|e| Failure::Parse(format!("{}: {e}", input.display())))?;
    fs::write(output, &raw).with_context(|| format!("writing {}", output.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn fuzz(args: FuzzArgs, workdir: Option<PathBuf>) -> CmdResult {
    let mut cfg = match &args.config {
        Some(path) => CampaignConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => CampaignConfig::default(),
    };
    let mut set = |k: &str, v: &str| cfg.set(k, v).map_err(|e| Failure::Usage(e.to_string()));
    if let Some(t) = &args.target.target {
        set("target", t)?;
    }
    if let Some(s) = &args.seeds {
        set("seeds", &s.to_string_lossy())?;
    }
    if let Some(n) = args.max_execs {
        set("max_execs", &n.to_string())?;
    }
    if let Some(n) = args.rng_seed {
        set("rng_seed", &n.to_string())?;
    }
    if let Some(w) = &workdir {
        set("workdir", &w.to_string_lossy())?;
    }
    for pair in &args.sets {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        set(k.trim(), v.trim())?;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let corpus = match &cfg.seeds_dir {
        Some(dir) => {
            SeedCorpus::load_dir(dir).with_context(|| format!("loading {}", dir.display()))?
        }
        None => SeedCorpus::from_frames([("listing", reference::script_deploy_frame())]),
    };
    let mut target = open_target(&args.target, &cfg, &cfg.workdir)?;
    let report = run_campaign(&cfg, &corpus, target.as_mut())?;

    println!(
        "{} executions in {:.1?} ({:.0} exec/s), {} detections, {} unconfirmed",
        report.executions,
        report.elapsed,
        report.throughput(),
        report.detections,
        report.unconfirmed
    );
    for (crash, path) in report.reports.iter().zip(&report.report_paths) {
        println!(
            "crash {} {} {} step(s) -> {}",
            crash.bucket,
            crash.detection,
            crash.sequence.len(),
            path.display()
        );
    }
    if report.target_lost {
        println!("target lost; campaign stopped early");
    }
    Ok(ExitCode::SUCCESS)
}

fn replay_cmd(
    path: &Path,
    attempts: u32,
    args: &TargetArgs,
    workdir: Option<PathBuf>,
) -> CmdResult {
    let report = load_report(path)?;
    let cfg = report_config(&report, args)?;
    let work = workdir.unwrap_or_else(|| cfg.workdir.clone());
    let mut target = open_target(args, &cfg, &work)?;
    let r = replay(&report, target.as_mut(), attempts, &cfg.observation())?;
    if r.reproduced {
        println!(
            "reproduced ({} on attempt {})",
            report.detection, r.attempts
        );
        Ok(ExitCode::SUCCESS)
    } else {
        println!("not reproduced after {} attempt(s)", r.attempts);
        Ok(ExitCode::from(EXIT_RUNTIME))
    }
}

fn minimize_cmd(
    path: &Path,
    output: Option<PathBuf>,
    bytes: bool,
    args: &TargetArgs,
    workdir: Option<PathBuf>,
) -> CmdResult {
    let mut report = load_report(path)?;
    let cfg = report_config(&report, args)?;
    let work = workdir.unwrap_or_else(|| cfg.workdir.clone());
    let mut target = open_target(args, &cfg, &work)?;
    let before = report.sequence.len();
    report.sequence = minimize(
        &report.sequence,
        target.as_mut(),
        &cfg.observation(),
        MinimizeOptions { bytes },
    )?;
    report.bucket = ocsc_core::orchestrator::bucket(&report);
    let out = output.unwrap_or_else(|| {
        let name = path.file_stem().unwrap_or_default().to_string_lossy();
        work.join("minimized").join(format!("{name}.min.txt"))
    });
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&out, report.to_text()).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{before} -> {} step(s): {}",
        report.sequence.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn serve_cmd(args: ServeArgs, workdir: Option<PathBuf>) -> CmdResult {
    let root = args.sandbox.unwrap_or_else(|| {
        workdir
            .unwrap_or_else(|| "ocsc-work".into())
            .join("sandbox")
    });
    let mut policy = AgentPolicy::new(&root).with_port(args.port);
    policy.restart_on_crash = args.restart;
    if let Some(path) = &args.policy_file {
        policy
            .load_local_policy(path)
            .with_context(|| format!("reading {}", path.display()))?;
    }
    let mut bugs = args.bugs;
    if let Some(ms) = args.b3_timer_ms {
        bugs = bugs.with_timer(Duration::from_millis(ms));
    }
    let handle = serve(policy, bugs)?;
    println!(
        "listening on {} bugs={bugs} sandbox={}",
        handle.addr(),
        root.display()
    );
    let _ = io::stdout().flush();

    let deadline = args
        .duration_ms
        .map(|ms| Instant::now() + Duration::from_millis(ms));
    loop {
        thread::sleep(Duration::from_millis(20));
        if !args.restart && !handle.is_alive() {
            let bug = handle
                .last_crash()
                .map_or("unknown".into(), |b| b.to_string());
            println!("agent crashed ({bug})");
            break;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
    }
    let crashes = handle.crashes().len();
    handle.stop();
    if args.restart {
        println!("stopped after {crashes} crash(es)");
    }
    Ok(ExitCode::SUCCESS)
}

fn scenario(args: ScenarioArgs) -> CmdResult {
    if let Some(t) = args.target {
        return Err(Failure::Usage(format!(
            "--target {t}: scenarios only run against their own mock agent"
        )));
    }
    let opts = ScenarioOptions {
        restrict_script_web_deploy: args.restrict,
        enforce_version_order: args.enforce_version_order,
        wrong_digest: args.wrong_digest,
        tamper_payload: args.tamper_payload,
        skip_reconnect: args.skip_reconnect,
    };
    let results = if args.name == "all" {
        run_all(opts)
    } else {
        vec![run_scenario(&args.name, opts).ok_or_else(|| anyhow!("unknown scenario"))?]
    };
    for r in &results {
        print_scenario(r);
    }
    if results.iter().any(|r| r.verdict == Verdict::Error) {
        return Ok(ExitCode::from(EXIT_RUNTIME));
    }
    Ok(ExitCode::SUCCESS)
}

fn print_scenario(r: &ScenarioResult) {
    match &r.blocked_by {
        Some(gate) => println!("{}: {} ({gate})", r.name, r.verdict),
        None => println!("{}: {}", r.name, r.verdict),
    }
    if !r.deployed_modes.is_empty() {
        let modes: Vec<String> = r
            .deployed_modes
            .iter()
            .map(|m| format!("{m:04o}"))
            .collect();
        println!("  modes: {}", modes.join(" "));
    }
    for line in &r.evidence {
        println!("  {line}");
    }
}

fn load_report(path: &Path) -> Result<CrashReport, Failure> {
    CrashReport::load(path).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))
}

/// Campaign settings recorded in the report, with the target overridden.
fn report_config(report: &CrashReport, args: &TargetArgs) -> Result<CampaignConfig, Failure> {
    let mut cfg = CampaignConfig::default();
    for (k, v) in &report.config {
        // Reports from other versions may carry keys this one does not know.
        let _ = cfg.set(k, v);
    }
    if let Some(t) = &args.target {
        cfg.set("target", t)
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(cfg)
}

fn open_target(
    args: &TargetArgs,
    cfg: &CampaignConfig,
    workdir: &Path,
) -> anyhow::Result<Box<dyn Target>> {
    if let Some(bugs) = args.spawn_agent {
        let bugs = match args.b3_timer_ms {
            Some(ms) => bugs.with_timer(Duration::from_millis(ms)),
            None => bugs,
        };
        let policy = AgentPolicy::new(workdir.join("agent-sandbox"));
        return Ok(Box::new(AgentTarget::start(policy, bugs)?));
    }
    Ok(Box::new(RemoteTarget::new(resolve(&cfg.target())?)))
}

fn resolve(target: &str) -> anyhow::Result<SocketAddr> {
    let mut addrs = target
        .to_socket_addrs()
        .with_context(|| format!("resolving {target}"))?;
    match addrs.next() {
        Some(addr) => Ok(addr),
        None => bail!("{target} resolves to no address"),
    }
}
