//! `actsub`: calibrate, score and evaluate subspace OOD detectors.

mod commands;
mod csv;
mod grid;

use std::path::PathBuf;
use std::process::ExitCode;

use actsub_core::{BasisKind, SArrowComponent, ScoreMethod};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "actsub",
    version,
    about = "Post-hoc OOD detection with decisive/insignificant activation subspaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Resolve k, the ReAct clamp, lambda and the prune fraction; write a run config.
    Calibrate(CalibrateArgs),
    /// Score every row of an activation file.
    Score(ScoreArgs),
    /// AUROC and FPR at a TPR target from two score files.
    Eval(EvalArgs),
    /// Alignment profiles of the softmax-invariant direction and the norm-balance curve.
    Diag(DiagArgs),
    /// Sweep bases, components, prune fractions and lambda on a validation split.
    Ablate(AblateArgs),
    /// Generate a synthetic world.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct Inputs {
    /// Classifier head (WGT1).
    #[arg(long)]
    weights: PathBuf,
    /// Training activations (ACTB).
    #[arg(long)]
    train: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    val_id: Option<PathBuf>,
    #[arg(long)]
    val_ood: Option<PathBuf>,
    /// Starting config; without it lambda and shaping.p are calibrated when
    /// validation splits are given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `lambda=0,0.5,1` or `p=0.75..0.95[:step]`; repeatable.
    #[arg(long = "grid")]
    grids: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Activations to score (ACTB).
    #[arg(long)]
    input: PathBuf,
    /// Defaults to the config's method.
    #[arg(long, value_parser = parse_from_str::<ScoreMethod>)]
    method: Option<ScoreMethod>,
    /// Input of the cosine score: a, a_dec or a_insig.
    #[arg(long, default_value = "a_insig", value_parser = parse_from_str::<SArrowComponent>)]
    s_arrow_component: SArrowComponent,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    id: PathBuf,
    #[arg(long)]
    ood: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    tpr: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write ID/OOD score histograms (`lo,hi,id_count,ood_count`).
    #[arg(long)]
    hist: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    bins: usize,
}

#[derive(Args, Debug)]
struct DiagArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated subset of svd,pca,si-pca,nullspace.
    #[arg(long, default_value = "svd", value_delimiter = ',', value_parser = parse_from_str::<BasisKind>)]
    basis: Vec<BasisKind>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    val_id: PathBuf,
    #[arg(long)]
    val_ood: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "grid")]
    grids: Vec<String>,
    #[arg(long, default_value = "svd,pca,si-pca,nullspace", value_delimiter = ',', value_parser = parse_from_str::<BasisKind>)]
    bases: Vec<BasisKind>,
    #[arg(long, default_value = "a_insig", value_delimiter = ',', value_parser = parse_from_str::<SArrowComponent>)]
    s_arrow_component: Vec<SArrowComponent>,
    #[arg(long, default_value_t = 0.95)]
    tpr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// key=value world description.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_from_str<T: std::str::FromStr<Err = actsub_core::Error>>(s: &str) -> Result<T, String> {
    s.parse::<T>().map_err(|e| e.to_string())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use actsub_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) => 2,
                E::NumericalFailure(_) => 4,
                E::InvalidInput(_)
                | E::DegenerateBasis(_)
                | E::DegenerateActivation(_)
                | E::Format(_)
                | E::Io(_) => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("ACTSUB_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| {
            actsub_core::Error::Config(format!("ACTSUB_THREADS={v:?} is not a count"))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| actsub_core::Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Score(a) => commands::score(a),
        Command::Eval(a) => commands::eval(a),
        Command::Diag(a) => commands::diag(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
