use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xrpo_core::{ErrorClass, Profile};

mod commands;

#[derive(Parser)]
#[command(
    name = "xrpo",
    version,
    about = "Explainable reactive power optimization for radial feeders"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run-size profile: desk or full.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// Run configuration file (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Network file checks.
    #[command(subcommand)]
    Net(NetCommand),
    /// Power flow.
    #[command(subcommand)]
    Pf(PfCommand),
    /// Reactive power optimization.
    #[command(subcommand)]
    Rpo(RpoCommand),
    /// Scenario generation, labelling and splitting.
    #[command(subcommand)]
    Data(DataCommand),
    /// Surrogate training and evaluation.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Attributions and analysis products.
    #[command(subcommand)]
    Explain(ExplainCommand),
    /// Light/heavy sign-agreement check.
    #[command(subcommand)]
    Trust(TrustCommand),
    /// Full pipeline end to end.
    Demo(commands::DemoArgs),
}

#[derive(Subcommand)]
enum NetCommand {
    Validate(commands::NetArgs),
}

#[derive(Subcommand)]
enum PfCommand {
    Run(commands::PfArgs),
}

#[derive(Subcommand)]
enum RpoCommand {
    Solve(commands::RpoArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    Gen(commands::GenArgs),
    Label(commands::LabelArgs),
    Split(commands::SplitArgs),
}

#[derive(Subcommand)]
enum ModelCommand {
    Train(commands::TrainArgs),
    Eval(commands::EvalArgs),
}

#[derive(Subcommand)]
enum ExplainCommand {
    Compute(commands::ComputeArgs),
    Report(commands::ReportArgs),
}

#[derive(Subcommand)]
enum TrustCommand {
    Run(commands::TrustArgs),
}

/// Exit status per error family; 2 is left to clap for usage errors.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err
        .downcast_ref::<xrpo_core::Error>()
        .map(xrpo_core::Error::class)
    {
        Some(ErrorClass::Io) => 3,
        Some(ErrorClass::Validation) => 4,
        Some(ErrorClass::Convergence) => 5,
        Some(ErrorClass::Numerical) => 6,
        None => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()?;
    }
    let g = &cli.global;
    match cli.command {
        Command::Net(NetCommand::Validate(a)) => commands::net_validate(a),
        Command::Pf(PfCommand::Run(a)) => commands::pf_run(a),
        Command::Rpo(RpoCommand::Solve(a)) => commands::rpo_solve(g, a),
        Command::Data(DataCommand::Gen(a)) => commands::data_gen(g, a),
        Command::Data(DataCommand::Label(a)) => commands::data_label(g, a),
        Command::Data(DataCommand::Split(a)) => commands::data_split(g, a),
        Command::Model(ModelCommand::Train(a)) => commands::model_train(g, a),
        Command::Model(ModelCommand::Eval(a)) => commands::model_eval(a),
        Command::Explain(ExplainCommand::Compute(a)) => commands::explain_compute(g, a),
        Command::Explain(ExplainCommand::Report(a)) => commands::explain_report(a),
        Command::Trust(TrustCommand::Run(a)) => commands::trust_run(a),
        Command::Demo(a) => commands::demo(g, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
