use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use loadshed::grid::{load_case, solve_power_flow, DEFAULT_MAX_ITER, DEFAULT_TOL};
use loadshed::scenario::{candidate_buses, Role, CYCLE};
use loadshed_cli::{RunConfig, Workspace};

#[derive(Parser)]
#[command(name = "loadshed", version, about = "Emergency load-shedding training and evaluation")]
struct Cli {
    /// Run configuration (TOML); defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Run directory for all outputs.
    #[arg(long, global = true, default_value = "runs/default")]
    run_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Case file checks.
    Case {
        #[command(subcommand)]
        action: CaseAction,
    },
    /// Sample operating points, screen contingencies and write datasets.
    Sample,
    /// Critical clearing times on the base case.
    Cct {
        /// Buses to screen; all candidate buses when omitted.
        #[arg(long = "bus")]
        buses: Vec<u32>,
    },
    /// Three-stage training on the training dataset.
    Train,
    /// Policy and relay-baseline results on a dataset, and their comparison.
    Evaluate {
        /// Defaults to the run's final checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = DatasetArg::Test)]
        dataset: DatasetArg,
    },
    /// Compare two result files against a dataset's labels.
    Compare {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        /// Dataset CSV supplying the shedding labels.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "comparison")]
        name: String,
    },
    /// Export voltage and shedding traces for one scenario.
    Trace {
        #[arg(long)]
        scenario: String,
        /// Adds a policy trace.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CaseAction {
    /// Validate a case file and solve its power flow.
    Validate { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Train,
    Test,
}

fn config(cli: &Cli) -> loadshed::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> loadshed::Result<()> {
    if let Command::Case {
        action: CaseAction::Validate { path },
    } = &cli.command
    {
        let case = load_case(path)?;
        let sol = solve_power_flow(&case, DEFAULT_TOL, DEFAULT_MAX_ITER);
        if !sol.converged {
            return Err(loadshed::Error::PowerFlow {
                max_mismatch: sol.max_mismatch,
            });
        }
        println!(
            "{}: {} buses, {} branches, {} machines, {} zones; power flow converged in {} iterations (max mismatch {:.2e} pu)",
            case.case_id,
            case.buses.len(),
            case.branches.len(),
            case.machines.len(),
            case.zones.len(),
            sol.iterations,
            sol.max_mismatch
        );
        return Ok(());
    }
    let ws = Workspace::open(config(&cli)?, &cli.run_dir, cli.workers)?;
    match cli.command {
        Command::Case { .. } => unreachable!("handled above"),
        Command::Sample => {
            let (train, test) = ws.sample()?;
            for ds in [&train, &test] {
                let req = ds.scenarios.iter().filter(|s| s.requires_shedding).count();
                println!(
                    "{:?}: {} scenarios ({} require shedding), fault buses {:?}, {} cases",
                    ds.role,
                    ds.scenarios.len(),
                    req,
                    ds.fault_buses(),
                    ds.case_ids().len()
                );
            }
        }
        Command::Cct { buses } => {
            let buses = if buses.is_empty() {
                candidate_buses(&ws.base, ws.cfg.datasets.candidate_kv_min)
            } else {
                buses
            };
            let rs = ws.screen(&buses)?;
            let mut text = String::from("bus,cct_s,cct_cycles,flag\n");
            for r in &rs {
                println!("bus {}: {:.4} s ({:.0} cycles) {:?}", r.bus, r.cct, r.cct / CYCLE, r.flag);
                text.push_str(&format!("{},{},{},{:?}\n", r.bus, r.cct, (r.cct / CYCLE).round(), r.flag));
            }
            let p = ws.path("reports/cct.csv");
            std::fs::write(&p, text).map_err(|e| loadshed::Error::Io {
                path: p.display().to_string(),
                source: e,
            })?;
        }
        Command::Train => {
            let out = ws.train()?;
            for z in &out.zones {
                println!("zone {}: {} difficult tasks mined", z.zone_id, z.mined.len());
            }
            let c = &out.coordinated;
            println!(
                "coordinated: assembled {:?}, selected {:?}; checkpoints in {}",
                c.assembled_eval,
                c.best_eval,
                ws.path("checkpoints").display()
            );
        }
        Command::Evaluate { checkpoint, dataset } => {
            let ck = checkpoint.unwrap_or_else(|| ws.path("checkpoints/final.json"));
            let role = match dataset {
                DatasetArg::Train => Role::Train,
                DatasetArg::Test => Role::Test,
            };
            let rep = ws.evaluate(&ck, role)?;
            println!("{}", serde_json::to_string_pretty(&rep.aggregates)?);
        }
        Command::Compare {
            policy,
            baseline,
            labels,
            name,
        } => {
            let rep = ws.compare_files(&policy, &baseline, &labels, &name)?;
            println!("{}", serde_json::to_string_pretty(&rep.aggregates)?);
        }
        Command::Trace { scenario, checkpoint } => {
            let s = ws.find_scenario(&scenario)?;
            let policy = checkpoint.map(|p| ws.load_policy(&p)).transpose()?;
            for p in ws.trace(&s, policy.as_ref())? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
