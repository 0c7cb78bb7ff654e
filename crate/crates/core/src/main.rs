use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use mimo_assoc::cli::{
    self, cmd_eval, cmd_generate, cmd_selftest, cmd_train, load_run_config, RunConfig,
    SelftestFault,
};
use mimo_assoc::receiver::CombinerKind;

/// Massive MIMO uplink simulator and user-cell association toolkit.
#[derive(Parser)]
#[command(name = "mimo-assoc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key-value config file; defaults cover the reference deployment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Monte-Carlo fading blocks per sample (overrides the config file).
    #[arg(long)]
    n_fading: Option<usize>,
    /// Combining scheme: mr or mmse (overrides the config file).
    #[arg(long)]
    combiner: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled dataset of optimal associations.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of samples to generate.
        #[arg(long)]
        samples: usize,
        /// Base seed; sample i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset path (newline-delimited JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the association network on a generated dataset.
    Train {
        /// Training dataset path.
        #[arg(long)]
        data: PathBuf,
        /// Validation dataset path (matching header).
        #[arg(long)]
        val: PathBuf,
        /// Training epochs.
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        /// Mini-batch size.
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        /// Optimizer learning rate.
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        /// Seed for init and shuffling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the trained model.
        #[arg(long)]
        model_out: PathBuf,
        /// Where to write the per-epoch MSE table.
        #[arg(long)]
        metrics_out: PathBuf,
    },
    /// Evaluate a trained model against the exact solver on a test dataset.
    Eval {
        /// Trained model path.
        #[arg(long)]
        model: PathBuf,
        /// Test dataset path.
        #[arg(long)]
        test_data: PathBuf,
        /// Directory for the report tables.
        #[arg(long)]
        report_dir: PathBuf,
    },
    /// Run the embedded oracle suites (solver, gradients, SINR, estimator).
    Selftest {
        /// Deliberately corrupt one suite to exercise failure reporting.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn apply_overrides(mut rc: RunConfig, args: &ConfigArgs) -> Result<RunConfig, mimo_assoc::Error> {
    if let Some(n) = args.n_fading {
        rc.n_fading = n;
    }
    if let Some(c) = &args.combiner {
        rc.combiner = CombinerKind::from_str(c)?;
    }
    Ok(rc)
}

fn run() -> Result<ExitCode, mimo_assoc::Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { config, samples, seed, out } => {
            let rc = apply_overrides(load_run_config(config.config.as_deref())?, &config)?;
            cmd_generate(&rc, samples, seed, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            data,
            val,
            epochs,
            batch_size,
            learning_rate,
            seed,
            model_out,
            metrics_out,
        } => {
            cmd_train(
                &data,
                &val,
                epochs,
                batch_size,
                learning_rate,
                seed,
                &model_out,
                &metrics_out,
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { model, test_data, report_dir } => {
            cmd_eval(&model, &test_data, &report_dir)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { inject_fault } => {
            let fault = inject_fault.as_deref().map(SelftestFault::from_str).transpose()?;
            if cmd_selftest(fault) {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code(&err) as u8)
        }
    }
}
