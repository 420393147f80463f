//! Command-line front end: power flow, oracle, training, evaluation and the
//! two case studies.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 unparsable input (case,
//! costs, config or checkpoint), 3 power flow did not converge, 4 initial
//! snapshot unsolvable, 5 checkpoint does not fit the case, 6 oracle found
//! no feasible dispatch.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use oapd::agent;
use oapd::config::RunConfig;
use oapd::env;
use oapd::error::{AgentError, EnvError, NeuralError, OracleError};
use oapd::neural::{self, Mlp};
use oapd::oracle::oracle_csv;
use oapd::powerflow::{solve, PowerFlowSolution, SolverConfig};
use oapd::study::{self, StudyError};
use oapd::NetworkCase;

#[derive(Parser)]
#[command(name = "oapd", version, about = "Optimal active power dispatch with a double-DQN agent")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Case file (native format, or PSS/E v26 when the name ends in .raw).
    #[arg(long, global = true)]
    case: Option<PathBuf>,
    /// Generator cost sidecar (`<gen index> <a> <b>` rows).
    #[arg(long, global = true)]
    costs: Option<PathBuf>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; files go to `<out>/<run-name>/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    run_name: Option<String>,
    #[arg(long, global = true)]
    episodes: Option<usize>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    load_factor: Option<f64>,
    #[arg(long, global = true, value_enum)]
    eval_policy: Option<PolicyArg>,
    /// Use the single-network max target instead of the double-network one.
    #[arg(long, global = true)]
    single_q: bool,
    /// Loose 2e-3 p.u. solver tolerance.
    #[arg(long, global = true)]
    paper_env: bool,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Benchmark,
    Budget,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the power flow and write bus and branch tables.
    Pf,
    /// Multi-start coordinate descent reference dispatch.
    Oracle,
    /// Train an agent and write its checkpoint and logs.
    Train,
    /// Evaluate a checkpoint from seeded random starts.
    Eval {
        /// Reference cost (k$/hr); the oracle cost when absent.
        #[arg(long)]
        reference: Option<f64>,
    },
    /// Run a full case study.
    Repro {
        #[arg(value_enum)]
        study: Study,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    #[value(name = "I", alias = "i", alias = "1")]
    One,
    #[value(name = "II", alias = "ii", alias = "2")]
    Two,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

fn env_code(e: &EnvError) -> u8 {
    match e {
        EnvError::Case(_) => 2,
        EnvError::Config(_) => 2,
        _ => 4,
    }
}

fn neural_code(e: &NeuralError) -> u8 {
    match e {
        NeuralError::Architecture(..) => 5,
        NeuralError::Checkpoint(_) => 2,
        _ => 1,
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        let code = match &e {
            StudyError::Config(_) | StudyError::Case(_) => 2,
            StudyError::Env(inner) => env_code(inner),
            StudyError::Agent(AgentError::Env(inner)) => env_code(inner),
            StudyError::Agent(AgentError::Neural(inner)) => neural_code(inner),
            StudyError::Agent(AgentError::Config(_)) => 2,
            StudyError::Oracle(OracleError::Infeasible) => 6,
            StudyError::Oracle(OracleError::Case(_)) => 2,
            StudyError::Oracle(_) => 1,
            StudyError::Io { .. } => 2,
        };
        Failure::new(code, e)
    }
}

impl From<oapd::config::ConfigError> for Failure {
    fn from(e: oapd::config::ConfigError) -> Self {
        Failure::new(2, e)
    }
}

impl From<AgentError> for Failure {
    fn from(e: AgentError) -> Self {
        StudyError::Agent(e).into()
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::new(1, format!("{}: {e}", path.display())))
}

fn effective_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))?,
        None => RunConfig::default(),
    };
    if let Some(v) = &common.case {
        config.case = Some(v.clone());
    }
    if let Some(v) = &common.costs {
        config.costs = Some(v.clone());
    }
    if let Some(v) = common.seed {
        config.seed = v;
    }
    if let Some(v) = &common.out {
        config.out_dir = v.clone();
    }
    if let Some(v) = &common.run_name {
        config.run_name = v.clone();
    }
    if let Some(v) = common.episodes {
        config.max_train_episodes = v;
    }
    if let Some(v) = common.runs {
        config.eval_runs = v;
    }
    if let Some(v) = common.load_factor {
        config.load_factor = v;
    }
    if let Some(v) = common.eval_policy {
        config.eval_policy = match v {
            PolicyArg::Benchmark => "benchmark",
            PolicyArg::Budget => "budget",
        }
        .into();
    }
    if common.single_q {
        config.double_q = false;
    }
    if common.paper_env {
        config.tolerance = SolverConfig::paper_env().tolerance;
    }
    if let Some(v) = &common.checkpoint {
        config.checkpoint = Some(v.clone());
    }
    if let Some(v) = common.workers {
        config.workers = v;
    }
    config.validate().map_err(|e| Failure::new(2, e))?;
    Ok(config)
}

fn run_dir(config: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = config.run_dir();
    fs::create_dir_all(&dir).map_err(|e| Failure::new(1, format!("{}: {e}", dir.display())))?;
    write(&dir.join("config.effective"), config.to_toml())?;
    Ok(dir)
}

fn scaled_case(config: &RunConfig) -> Result<NetworkCase, Failure> {
    let case = study::load_case_for(config)?;
    Ok(study::case_at(&case, config.load_factor)?)
}

fn bus_csv(case: &NetworkCase, sol: &PowerFlowSolution) -> String {
    let index = case.bus_index();
    let mut pg = vec![0.0; case.n_bus()];
    let mut qg = vec![0.0; case.n_bus()];
    for (g, gen) in case.generators.iter().enumerate() {
        pg[index[&gen.bus]] += sol.pg[g];
        qg[index[&gen.bus]] += sol.qg[g];
    }
    let mut out = String::from("id,vm,va_deg,pg,qg,pd,qd\n");
    for (i, bus) in case.buses.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            bus.id,
            sol.vm[i],
            sol.va[i].to_degrees(),
            pg[i],
            qg[i],
            bus.pd,
            bus.qd
        );
    }
    out
}

fn branch_csv(case: &NetworkCase, sol: &PowerFlowSolution) -> String {
    let mut out = String::from("from,to,p_from,q_from,p_to,q_to\n");
    for (br, f) in case.branches.iter().zip(&sol.branch_flows) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            br.from_bus, br.to_bus, f.p_from, f.q_from, f.p_to, f.q_to
        );
    }
    out
}

fn cmd_pf(config: &RunConfig) -> Result<(), Failure> {
    let case = scaled_case(config)?;
    let sol = solve(&case, &config.solver_config()).map_err(|e| Failure::new(2, e))?;
    let dir = run_dir(config)?;
    write(&dir.join("bus.csv"), bus_csv(&case, &sol))?;
    write(&dir.join("branch.csv"), branch_csv(&case, &sol))?;
    let (vm_min, vm_max) = sol.vm_range();
    let mut report = String::new();
    let _ = writeln!(report, "converged: {}", sol.converged);
    let _ = writeln!(report, "iterations: {}", sol.iterations);
    let _ = writeln!(report, "max_mismatch: {:e}", sol.max_mismatch);
    let _ = writeln!(report, "pv_to_pq_switches: {}", sol.pv_to_pq_switches.len());
    let _ = writeln!(report, "vm_range: {vm_min:.6} {vm_max:.6}");
    if let Ok(cost) = env::compute_cost(&sol, &case) {
        let _ = writeln!(report, "cost_k$_hr: {cost:.6}");
    }
    write(&dir.join("pf.txt"), &report)?;
    print!("{report}");
    if sol.converged {
        Ok(())
    } else {
        Err(Failure::new(3, "power flow did not converge"))
    }
}

fn cmd_oracle(config: &RunConfig) -> Result<(), Failure> {
    let case = scaled_case(config)?;
    let result = study::oracle_for(&case, config)?;
    let dir = run_dir(config)?;
    let csv = oracle_csv(&result);
    write(&dir.join("oracle.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_train(config: &RunConfig) -> Result<Mlp, Failure> {
    let case = scaled_case(config)?;
    let started = Instant::now();
    let result = agent::train(&case, &config.env_config(), &config.agent_config()?, config.seed)?;
    let dir = run_dir(config)?;
    let bytes = neural::encode_checkpoint(&result.agent.online, None);
    write(&dir.join("checkpoint.bin"), bytes)?;
    write(&dir.join("train.csv"), agent::train_log_csv(&result.log))?;
    let mut profile = env::trace_header(case.generators.len());
    profile.push('\n');
    for row in &result.profile {
        profile.push_str(row);
        profile.push('\n');
    }
    write(&dir.join("profile.csv"), profile)?;
    let best = result.best_cost.map_or("none".to_string(), |c| format!("{c:.6}"));
    let summary = format!(
        "episodes: {}\nsteps: {}\nfinal_epsilon: {:.6}\nbest_cost: {}\n",
        result.episodes.len(),
        result.log.len(),
        result.final_epsilon,
        best
    );
    write(&dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    eprintln!("trained in {:.1?}", started.elapsed());
    Ok(result.agent.online)
}

fn load_checkpoint(config: &RunConfig) -> Result<Mlp, Failure> {
    let path = config
        .checkpoint
        .clone()
        .unwrap_or_else(|| config.run_dir().join("checkpoint.bin"));
    let bytes = fs::read(&path).map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))?;
    let (net, _) = neural::decode_checkpoint(&bytes).map_err(|e| Failure::new(neural_code(&e), e))?;
    Ok(net)
}

fn cmd_eval(config: &RunConfig, reference: Option<f64>) -> Result<(), Failure> {
    let case = scaled_case(config)?;
    let net = load_checkpoint(config)?;
    let reference = match reference {
        Some(r) => r,
        None => study::oracle_for(&case, config)?.cost,
    };
    let reports = study::evaluate_runs(&net, &case, config, reference, config.eval_runs)?;
    let summary = agent::summarize(&reports, reference);
    let dir = run_dir(config)?;
    write(&dir.join("eval.csv"), agent::eval_csv(&reports))?;
    let text = format!(
        "runs: {}\nreference_cost: {:.6}\nwithin_0.1%: {:.4}\nwithin_0.5%: {:.4}\nwithin_2%: {:.4}\nmean_steps: {:.2}\n",
        summary.runs, reference, summary.within_0_1pct, summary.within_0_5pct, summary.within_2pct, summary.mean_steps
    );
    write(&dir.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_repro(config: &RunConfig, which: Study) -> Result<(), Failure> {
    let case = study::load_case_for(config)?;
    match which {
        Study::One => {
            let result = study::study_one(&case, config)?;
            let dir = run_dir(config)?;
            write(&dir.join("checkpoint.bin"), neural::encode_checkpoint(&result.train.agent.online, None))?;
            write(&dir.join("train.csv"), agent::train_log_csv(&result.train.log))?;
            let mut profile = env::trace_header(case.generators.len());
            profile.push('\n');
            for row in &result.train.profile {
                profile.push_str(row);
                profile.push('\n');
            }
            write(&dir.join("profile.csv"), profile)?;
            write(&dir.join("eval.csv"), agent::eval_csv(&result.reports))?;
            write(&dir.join("oracle.csv"), oracle_csv(&result.oracle))?;
            let summary = study::study_one_summary(&result, config);
            write(&dir.join("summary.txt"), &summary)?;
            print!("{summary}");
        }
        Study::Two => {
            let net = match &config.checkpoint {
                Some(_) => load_checkpoint(config)?,
                None => {
                    let trained = agent::train(&case, &config.env_config(), &config.agent_config()?, config.seed)?;
                    trained.agent.online
                }
            };
            let rows = study::study_two(&case, config, &net, &study::STUDY_TWO_FACTORS)?;
            let dir = run_dir(config)?;
            write(&dir.join("checkpoint.bin"), neural::encode_checkpoint(&net, None))?;
            write(&dir.join("eval.csv"), study::study_two_csv(&rows))?;
            let summary = study::study_two_summary(&rows);
            write(&dir.join("summary.txt"), &summary)?;
            print!("{summary}");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = effective_config(&cli.common)?;
    match cli.command {
        Command::Pf => cmd_pf(&config),
        Command::Oracle => cmd_oracle(&config),
        Command::Train => cmd_train(&config).map(|_| ()),
        Command::Eval { reference } => cmd_eval(&config, reference),
        Command::Repro { study } => cmd_repro(&config, study),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
