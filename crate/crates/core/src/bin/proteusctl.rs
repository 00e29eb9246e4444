use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::Ordering;
use std::time::Duration;

use clap::{Parser, Subcommand};

use proteus::control::{
    default_socket_path, proteus_dir, runtime_dir, Client, ClientError, ControlRequest,
    ControlResponse, Daemon, DaemonConfig, HamSpec, Payload, CONTROL_ENV,
};
use proteus::modem::DialPlan;
use proteus::{Policy, StatusSnapshot, TraceEvent};

const EXIT_PLATFORM: u8 = 1;
const EXIT_UNREACHABLE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "proteusctl",
    version,
    about = "Run and control a reconfigurable-hardware platform daemon"
)]
struct Cli {
    /// Control socket path.
    #[arg(long, global = true, env = CONTROL_ENV)]
    socket: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the platform daemon in the foreground.
    Daemon {
        /// Directory for the socket and endpoint links (default $XDG_RUNTIME_DIR).
        #[arg(long)]
        runtime_dir: Option<PathBuf>,
        /// Simulated HAM to register, as ID[=HARDWARE_TYPE]. Repeatable.
        #[arg(long = "ham", value_name = "ID[=TYPE]")]
        hams: Vec<HamSpec>,
        /// Dial plan file used by modem deployments.
        #[arg(long)]
        dial_plan: Option<PathBuf>,
        /// Simulated reconfiguration time.
        #[arg(long, default_value_t = 0)]
        reconfig_delay_ms: u64,
        /// Channel ring capacity in bytes (power of two).
        #[arg(long)]
        capacity: Option<usize>,
    },
    /// Load a module manifest.
    Load { path: PathBuf },
    /// Deploy a loaded module onto a HAM.
    Deploy {
        module: String,
        #[arg(long)]
        ham: String,
        /// Queue behind the current deployment instead of failing.
        #[arg(long)]
        queue: bool,
    },
    /// Undeploy a deployment.
    Undeploy { deployment: String },
    /// Show HAMs, modules and deployments.
    Status {
        #[arg(long)]
        json: bool,
    },
    /// Print the trace log.
    Trace {
        /// Keep streaming new events.
        #[arg(long, short)]
        follow: bool,
        #[arg(long)]
        json: bool,
    },
    /// Stop the daemon, undeploying everything.
    Shutdown,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let socket = cli.socket.clone().unwrap_or_else(default_socket_path);
    match cli.command {
        Command::Daemon {
            runtime_dir: rt,
            hams,
            dial_plan,
            reconfig_delay_ms,
            capacity,
        } => run_daemon(cli.socket, rt, hams, dial_plan, reconfig_delay_ms, capacity),
        cmd => {
            // SAFETY: restoring the default disposition before any output.
            unsafe { libc::signal(libc::SIGPIPE, libc::SIG_DFL) };
            run_client(&socket, cmd)
        }
    }
}

fn run_daemon(
    socket: Option<PathBuf>,
    rt: Option<PathBuf>,
    hams: Vec<HamSpec>,
    dial_plan: Option<PathBuf>,
    reconfig_delay_ms: u64,
    capacity: Option<usize>,
) -> ExitCode {
    let dir = proteus_dir(&rt.unwrap_or_else(runtime_dir));
    let socket = socket.unwrap_or_else(|| dir.join("control.sock"));
    let mut config = DaemonConfig::new(socket, &dir);
    if !hams.is_empty() {
        config.hams = hams;
    }
    if let Some(path) = dial_plan {
        match DialPlan::load(&path) {
            Ok(plan) => config.platform.dial_plan = plan,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    }
    if let Some(cap) = capacity {
        config.platform.channel_capacity = cap;
    }
    config.reconfig_delay = Duration::from_millis(reconfig_delay_ms);
    // SAFETY: geteuid has no preconditions.
    config.exclusive_endpoints = unsafe { libc::geteuid() } == 0;

    let daemon = match Daemon::bind(config) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let flag = daemon.shutdown_flag();
    for sig in [signal_hook::consts::SIGINT, signal_hook::consts::SIGTERM] {
        if let Err(e) = signal_hook::flag::register(sig, flag.clone()) {
            eprintln!("error: cannot install signal handler: {e}");
            flag.store(true, Ordering::Release);
        }
    }
    match daemon.run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn daemon_unreachable(socket: &std::path::Path, e: ClientError) -> ExitCode {
    eprintln!("error: daemon at {}: {e}", socket.display());
    ExitCode::from(EXIT_UNREACHABLE)
}

fn run_client(socket: &std::path::Path, cmd: Command) -> ExitCode {
    let mut client = match Client::connect(socket) {
        Ok(c) => c,
        Err(e) => return daemon_unreachable(socket, e),
    };

    if let Command::Trace { follow: true, json } = cmd {
        let (history, stream) = match client.follow_trace() {
            Ok(x) => x,
            Err(e) => return daemon_unreachable(socket, e),
        };
        history.iter().for_each(|e| print_event(e, json));
        for event in stream {
            match event {
                Ok(e) => print_event(&e, json),
                Err(e) => return daemon_unreachable(socket, e),
            }
        }
        return ExitCode::SUCCESS;
    }

    let (req, json) = match cmd {
        Command::Load { path } => (
            ControlRequest::LoadModule {
                path: std::fs::canonicalize(&path).unwrap_or(path),
            },
            false,
        ),
        Command::Deploy { module, ham, queue } => (
            ControlRequest::Deploy {
                module_id: module,
                ham_id: ham,
                policy: if queue { Policy::Queue } else { Policy::Reject },
            },
            false,
        ),
        Command::Undeploy { deployment } => (
            ControlRequest::Undeploy {
                deployment_id: deployment,
            },
            false,
        ),
        Command::Status { json } => (ControlRequest::Status, json),
        Command::Trace { json, .. } => (ControlRequest::Trace { follow: false }, json),
        Command::Shutdown => (ControlRequest::Shutdown, false),
        Command::Daemon { .. } => unreachable!("handled by main"),
    };

    match client.request(&req) {
        Ok(ControlResponse::Ok(payload)) => {
            print_payload(payload, json);
            ExitCode::SUCCESS
        }
        Ok(ControlResponse::Error(e)) => {
            eprintln!("error: {}: {}", e.code, e.message);
            ExitCode::from(EXIT_PLATFORM)
        }
        Err(e) => daemon_unreachable(socket, e),
    }
}

fn print_payload(payload: Payload, json: bool) {
    match payload {
        Payload::Started { version, pid } => println!("proteus {version} (pid {pid})"),
        Payload::ModuleLoaded { module_id } => println!("loaded: {module_id}"),
        Payload::Deployed {
            deployment_id,
            state,
            endpoint,
        } => {
            println!("deployment: {deployment_id}");
            println!("state: {state}");
            if let Some(ep) = endpoint {
                println!("endpoint: {}", ep.os_path.display());
                if let Some(link) = ep.link_path {
                    println!("link: {}", link.display());
                }
            }
        }
        Payload::Undeployed { deployment_id } => println!("undeployed: {deployment_id}"),
        Payload::Status(snapshot) if json => println!(
            "{}",
            serde_json::to_string_pretty(&snapshot).expect("status serializes")
        ),
        Payload::Status(snapshot) => print_status(&snapshot),
        Payload::Trace { events } => events.iter().for_each(|e| print_event(e, json)),
        Payload::ShuttingDown => println!("shutting down"),
    }
}

fn print_status(s: &StatusSnapshot) {
    println!("HAMS");
    for h in &s.hams {
        println!(
            "  {:<12} {:<16} {}",
            h.ham_id,
            h.hardware_type,
            h.active_deployment.as_deref().unwrap_or("-")
        );
    }
    println!("MODULES");
    for m in &s.modules {
        println!("  {:<12} {}", m.module_id, m.display_name);
    }
    println!("DEPLOYMENTS (queued: {})", s.queue_depth);
    for d in &s.deployments {
        let endpoint = d
            .endpoint
            .as_ref()
            .map(|e| format!("{} open={}", e.os_path.display(), e.open_count))
            .unwrap_or_else(|| "-".into());
        println!(
            "  {:<6} {:<10} {:<12} {:<8} {}",
            d.deployment_id, d.module_id, d.ham_id, d.state, endpoint
        );
    }
}

fn print_event(e: &TraceEvent, json: bool) {
    if json {
        println!("{}", serde_json::to_string(e).expect("event serializes"));
        return;
    }
    let detail: Vec<String> = e.detail.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!(
        "{:>6} {:>13} {:<22} {}",
        e.seq,
        e.timestamp_ms,
        e.kind,
        detail.join(" ")
    );
}
