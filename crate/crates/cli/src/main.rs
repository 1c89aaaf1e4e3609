//! `prefsynth`: generate preference data, train reward models, evaluate and
//! analyse them, or run the whole simulated reproduction in one go.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when the
//! run itself fails.

mod commands;
#[cfg(test)]
mod tests;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use prefsynth::data::Strategy;
use prefsynth::llm::{BackendKind, TemplateFamily};
use prefsynth::repro::RunConfig;
use prefsynth::strategies::LabelPolicy;

#[derive(Parser, Debug)]
#[command(name = "prefsynth", version, about = "Synthetic preference data and reward-model experiments")]
struct Cli {
    /// JSON run config; unknown keys are rejected. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed controlling all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a preference dataset (JSONL) plus a drop report.
    Generate(GenerateArgs),
    /// Train a Bradley-Terry reward model; writes checkpoint.json and train_log.csv.
    Train(TrainArgs),
    /// Score a checkpoint on a test split; writes accuracy.csv.
    Eval(EvalArgs),
    /// β, length-ratio and token-cost reports for generated datasets.
    Analyze(AnalyzeArgs),
    /// Run every strategy on a shared sim config over several seeds.
    SimRepro(SimReproArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum StrategyArg {
    Rlaif,
    WestOfN,
    Rlcd,
    Rmboost,
    RmboostSft,
    Real,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Strategy {
        match s {
            StrategyArg::Rlaif => Strategy::Rlaif,
            StrategyArg::WestOfN => Strategy::WestOfN,
            StrategyArg::Rlcd => Strategy::Rlcd,
            StrategyArg::Rmboost => Strategy::Rmboost,
            StrategyArg::RmboostSft => Strategy::RmboostSft,
            StrategyArg::Real => Strategy::Real,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum BackendArg {
    Sim,
    Http,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FamilyArg {
    QaFeedback,
    UltraFeedback,
    Tldr,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum PolicyArg {
    AlwaysWorse,
    AlwaysBetter,
    Alternate,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Output JSONL; the drop report and resolved config go next to it.
    #[arg(long)]
    out: PathBuf,
    /// Prompt JSONL (`{"id","text","slots"}` per line). Without it, sim
    /// prompts are synthesised.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Number of synthesised sim prompts.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Index of the first synthesised sim prompt; use disjoint ranges for
    /// disjoint splits.
    #[arg(long, default_value_t = 0)]
    offset: usize,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Reward-model checkpoint scoring the West-of-N pool. Sim runs without
    /// one score with the true utility.
    #[arg(long)]
    scorer: Option<PathBuf>,
    /// SFT JSONL (`{"id","prompt","reference"}`) for rmboost-sft.
    #[arg(long)]
    sft: Option<PathBuf>,
    #[arg(long)]
    n_pool: Option<usize>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// No-Aspect ablation.
    #[arg(long)]
    no_aspects: bool,
    /// No-Filtering ablation.
    #[arg(long)]
    no_filter: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Value of the strategy column in accuracy.csv.
    #[arg(long, default_value = "model")]
    name: String,
    /// Value of the condition column in accuracy.csv.
    #[arg(long, default_value = "test")]
    condition: String,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Generated datasets, one or more.
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimReproArgs {
    /// Number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error class deciding the exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut config = match &cli.config {
        Some(p) => {
            if !p.is_file() {
                return Err(usage(format!("config file not found: {}", p.display())));
            }
            RunConfig::load(p).map_err(|e| usage(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn apply_generate_flags(config: &mut RunConfig, args: &GenerateArgs) {
    let strategy: Strategy = args.strategy.into();
    config.strategy.strategy = strategy;
    config.strategy.use_sft_response = strategy == Strategy::RmboostSft;
    if let Some(b) = args.backend {
        config.backend.kind = match b {
            BackendArg::Sim => BackendKind::SimWorld,
            BackendArg::Http => BackendKind::HttpApi,
        };
    }
    if let Some(f) = args.family {
        config.family = match f {
            FamilyArg::QaFeedback => TemplateFamily::QaFeedback,
            FamilyArg::UltraFeedback => TemplateFamily::UltraFeedback,
            FamilyArg::Tldr => TemplateFamily::Tldr,
        };
    }
    if let Some(n) = args.n_pool {
        config.strategy.n_pool = n;
    }
    if let Some(p) = args.policy {
        config.strategy.label_choice_policy = match p {
            PolicyArg::AlwaysWorse => LabelPolicy::AlwaysWorse,
            PolicyArg::AlwaysBetter => LabelPolicy::AlwaysBetter,
            PolicyArg::Alternate => LabelPolicy::Alternate,
        };
    }
    if args.no_aspects {
        config.strategy.aspects_enabled = false;
    }
    if args.no_filter {
        config.strategy.filter_enabled = false;
    }
    if args.prompts.is_some() {
        config.paths.prompts = args.prompts.clone();
    }
    config.paths.data = Some(args.out.clone());
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Generate(args) => {
            apply_generate_flags(&mut config, &args);
            commands::generate(&config, &args)
        }
        Command::Train(args) => {
            if let Some(p) = args.data {
                config.paths.data = Some(p);
            }
            if let Some(p) = args.val {
                config.paths.val = Some(p);
            }
            if let Some(lr) = args.lr {
                config.train.learning_rate = lr;
            }
            if let Some(b) = args.batch_size {
                config.train.batch_size = b;
            }
            if let Some(e) = args.epochs {
                config.train.max_epochs = e;
            }
            config.paths.out_dir = Some(args.out.clone());
            commands::train(&config, &args.out)
        }
        Command::Eval(args) => {
            if let Some(p) = args.checkpoint {
                config.paths.checkpoint = Some(p);
            }
            if let Some(p) = args.test {
                config.paths.test = Some(p);
            }
            config.paths.out_dir = Some(args.out.clone());
            commands::eval(&config, &args.out, &args.name, &args.condition)
        }
        Command::Analyze(args) => {
            config.paths.out_dir = Some(args.out.clone());
            commands::analyze(&config, &args.data, &args.out)
        }
        Command::SimRepro(args) => {
            if cli.config.is_none() {
                return Err(usage("sim-repro needs --config"));
            }
            if let Some(s) = args.seeds {
                config.repro.n_seeds = s;
            }
            if let Some(out) = args.out {
                config.paths.out_dir = Some(out);
            }
            let out = config.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("sim-repro-out"));
            commands::sim_repro(&config, &out)
        }
    }
}

/// 0 for help/version output, 1 for any other argument error.
fn parse_error_code(e: &clap::Error) -> u8 {
    u8::from(e.use_stderr())
}

fn exit_code(result: &Result<(), Failure>) -> u8 {
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(_)) => 1,
        Err(Failure::Runtime(_)) => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(parse_error_code(&e));
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = run(cli);
    match &result {
        Ok(()) => {}
        Err(Failure::Usage(msg)) => {
            use clap::CommandFactory;
            eprintln!("error: {msg}\n");
            eprintln!("{}", Cli::command().render_usage());
        }
        Err(Failure::Runtime(e)) => eprintln!("error: {e:#}"),
    }
    ExitCode::from(exit_code(&result))
}
