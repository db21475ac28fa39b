use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use agent_mobility::acl::{Frame, Value};
use agent_mobility::node::control::{self, send_control};
use agent_mobility::node::{Node, NodeConfig};

/// Mobile agent platform node and its operator client.
#[derive(Parser)]
#[command(name = "mobility", version)]
struct Cli {
    /// Seconds to wait for a node's reply.
    #[arg(long, global = true, default_value_t = 60)]
    timeout: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or stop a node.
    #[command(subcommand)]
    Node(NodeCommand),
    /// Manage agents on a node.
    #[command(subcommand)]
    Agent(AgentCommand),
    /// Ask a node which protocols a remote platform supports.
    #[command(subcommand)]
    Protocols(ProtocolsCommand),
    /// Inspect a node's code cache.
    #[command(subcommand)]
    Cache(CacheCommand),
    /// Inspect a node's transport counters.
    #[command(subcommand)]
    Counters(CountersCommand),
}

#[derive(Args)]
struct Target {
    /// Address of the node to talk to.
    #[arg(long)]
    node: String,
}

#[derive(Subcommand)]
enum NodeCommand {
    /// Run a node in the foreground until it is shut down.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    Shutdown(Target),
    /// Print the node's migration event log.
    Events(Target),
}

#[derive(Args)]
struct MigrateArgs {
    #[command(flatten)]
    target: Target,
    #[arg(long)]
    name: String,
    /// Destination node address.
    #[arg(long)]
    to: String,
    #[arg(long = "pre-transfer")]
    pre_transfer: Vec<String>,
    /// Transfer protocols; the first common one is used when omitted.
    #[arg(long)]
    transfer: Vec<String>,
    #[arg(long = "post-transfer")]
    post_transfer: Vec<String>,
}

#[derive(Subcommand)]
enum AgentCommand {
    Create {
        #[command(flatten)]
        target: Target,
        /// Local name; the node appends `@<platform>`.
        #[arg(long)]
        name: String,
        /// Toy program file.
        #[arg(long)]
        program: PathBuf,
        /// Initial data entry, `key=value`; repeatable.
        #[arg(long = "data", required = true)]
        data: Vec<String>,
    },
    List(Target),
    /// Run one instruction; a hop starts a migration.
    Step {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        name: String,
    },
    Move(MigrateArgs),
    Clone(MigrateArgs),
}

#[derive(Subcommand)]
enum ProtocolsCommand {
    Query {
        #[command(flatten)]
        target: Target,
        /// Address of the platform to ask about.
        #[arg(long)]
        address: String,
        #[arg(long)]
        bypass_cache: bool,
    },
}

#[derive(Subcommand)]
enum CacheCommand {
    List(Target),
}

#[derive(Subcommand)]
enum CountersCommand {
    Show(Target),
}

fn list(items: Vec<String>) -> Value {
    Value::List(items)
}

fn migrate(args: MigrateArgs, kind: &str) -> (String, &'static str, Frame) {
    let payload = Frame::new()
        .with_text("name", args.name)
        .with_text("destination", args.to)
        .with_text("kind", kind)
        .with("pre-transfer", list(args.pre_transfer))
        .with("transfer", list(args.transfer))
        .with("post-transfer", list(args.post_transfer));
    (args.target.node, control::MIGRATE, payload)
}

fn run_node(config: PathBuf) -> Result<(), String> {
    let text = std::fs::read_to_string(&config).map_err(|e| format!("{}: {e}", config.display()))?;
    let config: NodeConfig = text.parse().map_err(|e| format!("{}: {e}", config.display()))?;
    let node = Node::start_tcp(config).map_err(|e| e.to_string())?;
    println!("platform={} address={} state=running", node.platform(), node.address());
    node.wait();
    Ok(())
}

fn run(cli: Cli) -> Result<Vec<String>, String> {
    let (node, action, payload) = match cli.command {
        Command::Node(NodeCommand::Run { config }) => return run_node(config).map(|_| Vec::new()),
        Command::Node(NodeCommand::Shutdown(t)) => (t.node, control::SHUTDOWN, Frame::new()),
        Command::Node(NodeCommand::Events(t)) => (t.node, control::EVENTS, Frame::new()),
        Command::Agent(AgentCommand::Create {
            target,
            name,
            program,
            data,
        }) => {
            let code = std::fs::read_to_string(&program).map_err(|e| format!("{}: {e}", program.display()))?;
            let payload = Frame::new()
                .with_text("name", name)
                .with_text("program", code)
                .with("data", list(data));
            (target.node, control::CREATE_AGENT, payload)
        }
        Command::Agent(AgentCommand::List(t)) => (t.node, control::LIST_AGENTS, Frame::new()),
        Command::Agent(AgentCommand::Step { target, name }) => {
            (target.node, control::STEP_AGENT, Frame::new().with_text("name", name))
        }
        Command::Agent(AgentCommand::Move(args)) => migrate(args, "move"),
        Command::Agent(AgentCommand::Clone(args)) => migrate(args, "clone"),
        Command::Protocols(ProtocolsCommand::Query {
            target,
            address,
            bypass_cache,
        }) => {
            let policy = if bypass_cache { "bypass-cache" } else { "use-cache" };
            let payload = Frame::new().with_text("address", address).with_text("policy", policy);
            (target.node, control::QUERY_PROTOCOLS, payload)
        }
        Command::Cache(CacheCommand::List(t)) => (t.node, control::LIST_CACHE, Frame::new()),
        Command::Counters(CountersCommand::Show(t)) => (t.node, control::COUNTERS, Frame::new()),
    };
    send_control(&node, action, payload, Duration::from_secs(cli.timeout)).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
