use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xnudge_core::config::{Config, Recipe};
use xnudge_core::data::TaskKind;
use xnudge_core::pipeline::{render_summary, with_threads, Run, Stage};
use xnudge_core::Error;

#[derive(Parser, Debug)]
#[command(name = "xnudge", version, about = "Simulated explanation-manipulation experiments")]
struct Cli {
    /// TOML configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, value_enum)]
    task: Option<TaskArg>,

    #[arg(long, global = true, value_enum)]
    recipe: Option<RecipeArg>,

    #[command(flatten)]
    manipulation: ManipulationArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ManipulationArgs {
    #[arg(long, global = true)]
    step_size: Option<f64>,
    #[arg(long, global = true)]
    tradeoff: Option<f64>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    max_rounds: Option<usize>,
    #[arg(long, global = true)]
    restarts: Option<usize>,
    #[arg(long, global = true)]
    init_low: Option<f64>,
    #[arg(long, global = true)]
    init_high: Option<f64>,
    #[arg(long, global = true)]
    hinge_margin: Option<f64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate or load the task dataset and split it.
    GenData,
    /// Train the random-forest AI model.
    TrainAi,
    /// Compute Shapley and LIME explanations for the calibration and evaluation pools.
    Explain,
    /// Simulate behavior logs from a log population.
    SimLog,
    /// Fit and cross-validate the behavior model.
    TrainBehavior,
    /// Assign targets and optimize manipulated explanations.
    Manipulate,
    /// Run the simulated between-subjects evaluation.
    Evaluate,
    /// Summarize metrics with confidence intervals and permutation tests.
    Report,
    /// Run every stage in order.
    Run,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum TaskArg {
    Census,
    Recidivism,
    Bias,
    Toxicity,
    Synthetic,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum RecipeArg {
    Adversarial,
    Benign,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::GenData => Stage::GenData,
            Command::TrainAi => Stage::TrainAi,
            Command::Explain => Stage::Explain,
            Command::SimLog => Stage::SimLog,
            Command::TrainBehavior => Stage::TrainBehavior,
            Command::Manipulate => Stage::Manipulate,
            Command::Evaluate => Stage::Evaluate,
            Command::Report => Stage::Report,
            Command::Run => return None,
        })
    }
}

fn resolve_config(cli: &Cli) -> Result<Config, Error> {
    let mut cfg = match &cli.config {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    if let Some(t) = cli.task {
        cfg.task.kind = match t {
            TaskArg::Census => TaskKind::Census,
            TaskArg::Recidivism => TaskKind::Recidivism,
            TaskArg::Bias => TaskKind::Bias,
            TaskArg::Toxicity => TaskKind::Toxicity,
            TaskArg::Synthetic => TaskKind::Synthetic,
        };
    }
    if let Some(r) = cli.recipe {
        cfg.recipe = match r {
            RecipeArg::Adversarial => Recipe::Adversarial,
            RecipeArg::Benign => Recipe::Benign,
        };
    }
    let m = &cli.manipulation;
    let sec = &mut cfg.manipulation;
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = m.$f { sec.$f = v; })* };
    }
    set!(step_size, tradeoff, threshold, max_rounds, restarts, init_low, init_high, hinge_margin);
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli, cfg: Config) -> Result<(), Error> {
    let seed = cfg.seed;
    let run = Run::open(cfg, seed, &cli.out_dir)?;
    log::info!("run directory {}", run.dir.display());
    match cli.command.stage() {
        Some(stage) => {
            run.stage(stage)?;
            if stage == Stage::Report {
                print!("{}", render_summary(&run.summary()?));
            }
        }
        None => {
            let summary = run.run_all()?;
            print!("{}", render_summary(&summary));
        }
    }
    println!("artifacts in {}", run.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match resolve_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match with_threads(cli.threads, || execute(&cli, cfg)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) | Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
