use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use soc_core::cluster::DEFAULT_MAX_ITER;
use soc_core::kselect::max_beta;
use soc_core::replay::{read_log, replay, write_ndjson, Replay};
use soc_core::sim::{
    generate_dataset, write_metrics_csv, write_objectives_csv, Method, SimConfig, SimState, Trainer,
};
use soc_core::verify::run_suite;
use soc_core::{KPolicy, KVariant, SocError};

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(
    name = "soc",
    version,
    about = "Soft label selection with class-transition clustering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a prediction log and emit selected soft labels for its final step.
    Select {
        log: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        replay: ReplayArgs,
        /// Output file (NDJSON); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a prediction log and print the class clustering as JSON.
    Cluster {
        log: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        replay: ReplayArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the training simulator from a JSON config.
    Sim(SimArgs),
    /// Run an invariant suite: lemma1, theorem1, krange, cluster, ctt, losses or all.
    Verify {
        suite: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, env = "SOC_SEED", default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Linear,
    Exp,
    Fixed,
}

#[derive(Args)]
struct PolicyArgs {
    /// Confidence-to-k mapping. Defaults to linear, or fixed when only --k is given.
    #[arg(long, value_enum)]
    policy: Option<PolicyKind>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Defaults to the largest admissible value, ln(2 - 2/K).
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
}

impl PolicyArgs {
    fn given(&self) -> bool {
        self.policy.is_some() || self.alpha.is_some() || self.beta.is_some() || self.k.is_some()
    }

    fn variant(&self, num_classes: usize) -> Result<KVariant, CliError> {
        let kind = match (self.policy, self.k) {
            (Some(kind), _) => kind,
            (None, Some(_)) => PolicyKind::Fixed,
            (None, None) if self.beta.is_some() => PolicyKind::Exp,
            (None, None) => PolicyKind::Linear,
        };
        Ok(match kind {
            PolicyKind::Linear => KVariant::Linear {
                alpha: self.alpha.unwrap_or(5.0),
            },
            PolicyKind::Exp => KVariant::Exponential {
                beta: self.beta.unwrap_or_else(|| max_beta(num_classes)),
            },
            PolicyKind::Fixed => KVariant::Fixed {
                k: self
                    .k
                    .ok_or_else(|| CliError::usage("--policy fixed requires --k"))?,
            },
        })
    }

    fn policy(&self, num_classes: usize) -> Result<KPolicy, CliError> {
        KPolicy::new(self.variant(num_classes)?, num_classes).map_err(CliError::usage)
    }
}

#[derive(Args)]
struct ReplayArgs {
    /// Transition window in batches (log steps).
    #[arg(long, default_value_t = 512)]
    nb: usize,
    #[arg(long, env = "SOC_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Soc,
    Fixmatch,
    PlainSoft,
    Supervised,
}

#[derive(Args)]
struct SimArgs {
    config: PathBuf,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Train a comparison method instead of the configured one.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Confidence threshold for fixmatch (default 0.95) and plain-soft (default 0).
    #[arg(long)]
    tau: Option<f64>,
    /// Overrides the config's training seed.
    #[arg(long, env = "SOC_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    nb: Option<usize>,
    /// Metrics CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-sample objective CSV for the unlabeled set after training.
    #[arg(long)]
    objectives: Option<PathBuf>,
    /// Mean selected entropy over the frozen final ledger for fixed k = 2, 4, 8, ... K.
    #[arg(long)]
    k_sweep: Option<PathBuf>,
    /// Write the final state here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a state written by --checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(e: impl ToString) -> Self {
        Self {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }

    fn data(e: impl ToString) -> Self {
        Self {
            code: EXIT_DATA,
            message: e.to_string(),
        }
    }
}

impl From<SocError> for CliError {
    fn from(e: SocError) -> Self {
        match e {
            SocError::Config { .. }
            | SocError::UnknownSuite(_)
            | SocError::InvalidPolicy(_)
            | SocError::InvalidK { .. }
            | SocError::InvalidThreshold(_) => Self::usage(e),
            _ => Self::data(e),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::data(e)
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_replay(log: &Path, args: &ReplayArgs) -> Result<Replay, CliError> {
    let file = File::open(log).map_err(|e| CliError::data(format!("{}: {e}", log.display())))?;
    let records = read_log(BufReader::new(file))?;
    let r = replay(&records, args.nb)?;
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    Ok(r)
}

fn cmd_select(
    log: &Path,
    policy: &PolicyArgs,
    args: &ReplayArgs,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let r = load_replay(log, args)?;
    let policy = policy.policy(r.num_classes)?;
    let records = r.select(&policy, args.seed, DEFAULT_MAX_ITER)?;
    write_ndjson(&records, open_output(out)?)?;
    Ok(())
}

fn cmd_cluster(
    log: &Path,
    policy: &PolicyArgs,
    args: &ReplayArgs,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let r = load_replay(log, args)?;
    let policy = policy.policy(r.num_classes)?;
    let mut w = open_output(out)?;
    for cs in r.clusterings(&policy, args.seed, DEFAULT_MAX_ITER)? {
        writeln!(w, "{}", cs.to_json()?)?;
    }
    w.flush()?;
    Ok(())
}

fn sim_config(args: &SimArgs) -> Result<SimConfig, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.config.display())))?;
    let mut cfg = SimConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(nb) = args.nb {
        cfg.window = nb;
    }
    if args.policy.given() {
        cfg.k_policy = args.policy.variant(cfg.dataset.num_classes())?;
    }
    match args.baseline {
        Some(Baseline::Soc) => cfg.method = Method::Soc,
        Some(Baseline::Fixmatch) => {
            cfg.method = Method::Fixmatch {
                tau: args.tau.unwrap_or(0.95),
            }
        }
        Some(Baseline::PlainSoft) => {
            cfg.method = Method::PlainSoft {
                tau: args.tau.unwrap_or(0.0),
            }
        }
        Some(Baseline::Supervised) => cfg.method = Method::Supervised,
        None => {
            if let (Some(t), Method::Fixmatch { tau } | Method::PlainSoft { tau }) =
                (args.tau, &mut cfg.method)
            {
                *tau = t;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_sim(args: &SimArgs) -> Result<(), CliError> {
    let cfg = sim_config(args)?;
    let dataset = generate_dataset(&cfg.dataset)?;
    let trainer = match &args.resume {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            Trainer::resume(cfg.clone(), &dataset, SimState::from_json(&text)?)?
        }
        None => Trainer::new(cfg.clone(), &dataset)?,
    };
    let result = trainer.run()?;
    write_metrics_csv(&result.history, open_output(args.out.as_deref())?)?;

    let mut trainer = Trainer::resume(cfg.clone(), &dataset, result.state)?;
    if let Some(path) = &args.objectives {
        write_objectives_csv(&trainer.sample_objectives()?, open_output(Some(path))?)?;
    }
    if let Some(path) = &args.k_sweep {
        let num_classes = cfg.dataset.num_classes();
        let mut w = open_output(Some(path))?;
        writeln!(w, "k,mean_entropy_sel")?;
        let mut k = 2;
        while k <= num_classes {
            let h = trainer.mean_selected_entropy(&KPolicy::fixed(k, num_classes)?)?;
            writeln!(w, "{k},{h:.6}")?;
            if k == num_classes {
                break;
            }
            k = (k * 2).min(num_classes);
        }
        w.flush()?;
    }
    if let Some(path) = &args.checkpoint {
        std::fs::write(path, trainer.state().to_json()?)?;
    }

    let summary = format!(
        "method={} iters={} seed={} final_top1={:.4}",
        cfg.method.name(),
        trainer.state().iteration,
        cfg.seed,
        result.final_top1
    );
    if args.out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn cmd_verify(suite: &str, trials: Option<usize>, seed: u64) -> Result<bool, CliError> {
    let reports = run_suite(suite, trials, seed)?;
    let mut ok = true;
    for r in &reports {
        println!("{r}");
        for f in &r.failures {
            println!("  {f}");
        }
        ok &= r.ok();
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Select {
            log,
            policy,
            replay,
            out,
        } => cmd_select(log, policy, replay, out.as_deref()).map(|_| true),
        Command::Cluster {
            log,
            policy,
            replay,
            out,
        } => cmd_cluster(log, policy, replay, out.as_deref()).map(|_| true),
        Command::Sim(args) => cmd_sim(args).map(|_| true),
        Command::Verify {
            suite,
            trials,
            seed,
        } => cmd_verify(suite, *trials, *seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
