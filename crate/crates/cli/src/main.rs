use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use archmend_api::ApiConfig;
use archmend_core::conformance::{check, render_table};
use archmend_core::diagnosis::{diagnose, CauseCandidate, DiagnosisConfig};
use archmend_core::erosion::{case_summary, generate, write_bundle, GenConfig, MutationWeights};
use archmend_core::knowledge::{KbSnapshot, KnowledgeBase};
use archmend_core::model::{load_architecture, load_implementation, SystemState};
use archmend_core::planner::{
    plan_beam, plan_exhaustive, plan_greedy, rank_plans, replay_plan, PlanError, PlanScope, RepairPlan,
    SearchConfig,
};
use archmend_core::repair::RepairAction;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

const EXIT_VIOLATIONS: u8 = 1;
const EXIT_INPUT: u8 = 3;
const EXIT_RESOURCE: u8 = 4;

#[derive(Parser)]
#[command(name = "archmend", version, about = "Detect, diagnose and repair architecture erosion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List every violation of the architecture by the implementation.
    Check {
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Group violations into ranked cause hypotheses.
    Diagnose {
        #[command(flatten)]
        models: ModelArgs,
        #[command(flatten)]
        kb: KbArgs,
    },
    /// Search for repair plans.
    Plan {
        #[command(flatten)]
        models: ModelArgs,
        #[command(flatten)]
        kb: KbArgs,
        /// Restrict the search to the cause with this candidate id.
        #[arg(long)]
        cause: Option<u32>,
        #[arg(long, default_value_t = 8)]
        width: usize,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        #[arg(long, default_value_t = 20_000)]
        max_expansions: u64,
        #[arg(long, value_enum, default_value_t = StrategyArg::Beam)]
        strategy: StrategyArg,
    },
    /// Apply a plan and write the repaired models.
    Apply {
        #[command(flatten)]
        models: ModelArgs,
        /// A plan document, a plan list (first plan is used) or an action list.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic erosion case bundle.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        modules: usize,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 40)]
        entities: usize,
        #[arg(long, default_value_t = 1.5)]
        density: f64,
        #[arg(long, default_value_t = 2)]
        mutations: usize,
        #[arg(long, default_value_t = 1.0)]
        weight_misplace: f64,
        #[arg(long, default_value_t = 1.0)]
        weight_illegal_edge: f64,
        #[arg(long, default_value_t = 1.0)]
        weight_drop_allow: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interactive repair sessions.
    Session {
        #[command(subcommand)]
        command: SessionCommand,
    },
    /// Knowledge-base inspection.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, env = "ARCHMEND_KB_DIR")]
        kb: PathBuf,
        /// Origin allowed by CORS; any origin when omitted.
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Subcommand)]
enum KbCommand {
    /// Print the score tables.
    Stats {
        #[arg(long, env = "ARCHMEND_KB_DIR")]
        kb: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Architecture model (JSON).
    #[arg(short = 'a', long)]
    architecture: PathBuf,
    /// Implementation model (JSON).
    #[arg(short = 's', long)]
    implementation: PathBuf,
}

#[derive(Args)]
struct KbArgs {
    #[arg(long, env = "ARCHMEND_KB_DIR")]
    kb: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    system_id: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Beam,
    Greedy,
    Exhaustive,
}

enum Failure {
    Input(anyhow::Error),
    Resource(PlanError),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn plan_failure(e: PlanError) -> Failure {
    match e {
        PlanError::Resource { .. } => Failure::Resource(e),
        other => Failure::Input(other.into()),
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_state(m: &ModelArgs) -> anyhow::Result<SystemState> {
    let a = load_architecture(&read(&m.architecture)?).with_context(|| m.architecture.display().to_string())?;
    let s = load_implementation(&read(&m.implementation)?)
        .with_context(|| m.implementation.display().to_string())?;
    Ok(SystemState::new(a, s)?)
}

/// Read-only view; a missing directory is an empty store.
fn kb_snapshot(dir: Option<&Path>) -> anyhow::Result<KbSnapshot> {
    match dir {
        Some(d) if d.exists() => Ok(KnowledgeBase::open(d)?.snapshot()),
        _ => Ok(KbSnapshot::default()),
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn candidates(st: &SystemState, kb: &KbSnapshot, system_id: &str) -> anyhow::Result<Vec<CauseCandidate>> {
    let vs = check(&st.architecture, &st.implementation)?;
    Ok(diagnose(
        &vs,
        &st.architecture,
        &st.implementation,
        &DiagnosisConfig::default(),
        kb,
        system_id,
    ))
}

fn parse_plan_file(text: &str) -> anyhow::Result<Vec<RepairAction>> {
    let doc: Value = serde_json::from_str(text)?;
    let actions = match &doc {
        Value::Array(items) => match items.first() {
            Some(first) if first.get("actions").is_some() => first["actions"].clone(),
            _ => doc.clone(),
        },
        Value::Object(map) if map.contains_key("actions") => map["actions"].clone(),
        _ => return Err(anyhow!("expected a plan, a plan list or an action list")),
    };
    Ok(serde_json::from_value(actions)?)
}

fn write_model(dir: &Path, name: &str, body: String) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, body + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Check { models, format } => {
            let st = load_state(&models)?;
            let vs = check(&st.architecture, &st.implementation).map_err(anyhow::Error::from)?;
            match format {
                Format::Json => print_json(&vs),
                Format::Table => print!("{}", render_table(&vs)),
            }
            Ok(if vs.is_empty() { 0 } else { EXIT_VIOLATIONS })
        }
        Command::Diagnose { models, kb } => {
            let st = load_state(&models)?;
            let snapshot = kb_snapshot(kb.kb.as_deref())?;
            print_json(&candidates(&st, &snapshot, &kb.system_id)?);
            Ok(0)
        }
        Command::Plan {
            models,
            kb,
            cause,
            width,
            depth,
            max_expansions,
            strategy,
        } => {
            let st = load_state(&models)?;
            let snapshot = kb_snapshot(kb.kb.as_deref())?;
            let selected = match cause {
                Some(id) => Some(
                    candidates(&st, &snapshot, &kb.system_id)?
                        .into_iter()
                        .find(|c| c.id == id)
                        .ok_or_else(|| anyhow!("no cause candidate with id {id}"))?,
                ),
                None => None,
            };
            let cfg = SearchConfig {
                beam_width: width,
                max_depth: depth,
                max_expansions,
                ..SearchConfig::default()
            };
            let scope = selected.as_ref().map_or(PlanScope::All, |c| PlanScope::Cause(&c.pattern));
            let class = selected.as_ref().map(|c| c.class_key.as_str());
            let plans: Vec<RepairPlan> = match strategy {
                StrategyArg::Beam => plan_beam(&st, scope, &cfg, None).map_err(plan_failure)?,
                StrategyArg::Greedy => vec![plan_greedy(&st, scope, &cfg).map_err(plan_failure)?],
                StrategyArg::Exhaustive => vec![plan_exhaustive(&st, scope, &cfg).map_err(plan_failure)?],
            };
            print_json(&rank_plans(plans, class, &snapshot, &kb.system_id));
            Ok(0)
        }
        Command::Apply { models, plan, out } => {
            let st = load_state(&models)?;
            let actions = parse_plan_file(&read(&plan)?).with_context(|| plan.display().to_string())?;
            let cfg = SearchConfig::default();
            let replay = replay_plan(&st, &actions, &cfg).map_err(|e| Failure::Input(e.into()))?;
            fs::create_dir_all(&out)
                .with_context(|| format!("cannot create {}", out.display()))?;
            write_model(&out, "architecture.json", replay.state.architecture.to_canonical_json())?;
            write_model(&out, "implementation.json", replay.state.implementation.to_canonical_json())?;
            print_json(&serde_json::json!({
                "actions": actions.iter().map(RepairAction::id).collect::<Vec<_>>(),
                "accumulated_cost": replay.state.accumulated_cost,
                "final_score": replay.score,
                "final_violations": replay.violations.len(),
                "consolidating": replay.violations.is_empty(),
                "state_hash": replay.state.hash(),
            }));
            Ok(0)
        }
        Command::Gen {
            seed,
            modules,
            layers,
            entities,
            density,
            mutations,
            weight_misplace,
            weight_illegal_edge,
            weight_drop_allow,
            out,
        } => {
            let cfg = GenConfig {
                seed,
                n_modules: modules,
                n_layers: layers,
                n_entities: entities,
                edge_density: density,
                k_mutations: mutations,
                mutation_weights: MutationWeights {
                    misplace_entity: weight_misplace,
                    add_illegal_edge: weight_illegal_edge,
                    drop_allow_rule: weight_drop_allow,
                },
            };
            let case = generate(&cfg).map_err(anyhow::Error::from)?;
            write_bundle(&case, &out).map_err(anyhow::Error::from)?;
            print_json(&case_summary(&case));
            Ok(0)
        }
        Command::Session {
            command:
                SessionCommand::Serve {
                    port,
                    host,
                    kb,
                    cors_origin,
                },
        } => {
            let config = ApiConfig {
                cors_origin,
                ..ApiConfig::default()
            };
            let runtime = tokio::runtime::Runtime::new().context("cannot start the async runtime")?;
            eprintln!("serving on http://{host}:{port}/api/v1 (knowledge base: {})", kb.display());
            runtime
                .block_on(archmend_api::serve(SocketAddr::new(host, port), kb, config))
                .context("server failed")?;
            Ok(0)
        }
        Command::Kb {
            command: KbCommand::Stats { kb },
        } => {
            print_json(&kb_snapshot(Some(&kb))?.stats());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Resource(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RESOURCE)
        }
    }
}
