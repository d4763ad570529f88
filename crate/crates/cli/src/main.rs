//! `xmf`: data generation, SNP preprocessing, tuning, training and ablation
//! experiments for the multimodal attention-fusion classifier.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 training divergence.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "xmf", version, about = "Multimodal attention-fusion experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config (a GenSpec for `datagen`, a ModelConfig elsewhere).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, splitting and model initialisation.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: XMF_WORKERS, else all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Maximum number of grid points evaluated by tuning.
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic planted-interaction dataset.
    Datagen {
        /// Also write a synthetic variant table and BED regions for the samples.
        #[arg(long)]
        variants: bool,
        /// Variant sites in the synthetic table.
        #[arg(long, default_value_t = 2000)]
        variant_sites: usize,
    },
    /// Filter a variant table, encode genotypes and optionally rank sites.
    PreprocessSnps(commands::PreprocessArgs),
    /// Cross-validated grid search on the training portion.
    Tune(commands::DataArgs),
    /// Train over five seeds, keep the best fit, report held-out metrics.
    Train(commands::DataArgs),
    /// Compare the four attention modes over several seeds.
    AblateAttention(commands::AblateArgs),
    /// Compare the seven modality subsets over several seeds.
    AblateModality(commands::AblateArgs),
    /// Render a saved run report.
    Report {
        /// Report JSON written by train or an ablation.
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let c = &cli.common;
    let result = match &cli.command {
        Command::Datagen {
            variants,
            variant_sites,
        } => commands::datagen(c, *variants, *variant_sites),
        Command::PreprocessSnps(a) => commands::preprocess_snps(c, a),
        Command::Tune(a) => commands::tune(c, a),
        Command::Train(a) => commands::train(c, a),
        Command::AblateAttention(a) => commands::ablate_attention(c, a),
        Command::AblateModality(a) => commands::ablate_modality(c, a),
        Command::Report { input } => commands::report(c, input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
