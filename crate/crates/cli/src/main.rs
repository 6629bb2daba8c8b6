use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sctlab_cli::commands::{cmd_cohort, cmd_compare, cmd_eval, cmd_gen, cmd_gradcheck, cmd_train, with_modulation};
use sctlab_cli::{CliError, ExperimentConfig};
use sctlab_core::tuning::{LossKind, ModulationKind};

#[derive(Parser)]
#[command(name = "sctlab", version, about = "Prompt-tuning OOD detection experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Modulation for SCT: none, linear, log, trig or power:<alpha>.
    #[arg(long)]
    modulation: Option<ModulationKind>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default experiment config to PATH.
    InitConfig { path: PathBuf },
    /// Generate the ID train/test and OOD test splits.
    Gen(Common),
    /// Train a prompt on the generated train split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "sct")]
        method: LossKind,
    },
    /// Evaluate a trained prompt with every configured detector.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "sct")]
        method: LossKind,
        /// Prompt file; defaults to `<out>/prompt_<method>.json`.
        #[arg(long)]
        prompt: Option<PathBuf>,
    },
    /// Train and evaluate several methods over several seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', default_value = "coop,locoop,sct")]
        method: Vec<LossKind>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Train LoCoOp on low- and high-uncertainty cohorts.
    Cohort {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Check analytic prompt gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        fixtures: usize,
        /// Scale the analytic gradient by 1.01 (negative control).
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let cfg = with_modulation(&ExperimentConfig::load(&common.config)?, common.modulation);
    cfg.validate()?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn report_paths(out: &Path, names: &[&str]) {
    for n in names {
        eprintln!("wrote {}", out.join(n).display());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::InitConfig { path } => {
            std::fs::write(&path, ExperimentConfig::default().to_json() + "\n")?;
            eprintln!("wrote {}", path.display());
        }
        Command::Gen(common) => {
            let (cfg, out) = load(&common)?;
            for p in cmd_gen(&cfg, &out)? {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Train { common, method } => {
            let (cfg, out) = load(&common)?;
            let prompt = cmd_train(&cfg, &out, method)?;
            if let Some(last) = prompt.loss_trace.last() {
                eprintln!("final epoch loss {last:.6}");
            }
        }
        Command::Eval { common, method, prompt } => {
            let (cfg, out) = load(&common)?;
            let m = cmd_eval(&cfg, &out, method, prompt.as_deref())?;
            println!("detector,fpr95,auroc");
            for d in &m.detectors {
                println!("{},{:.4},{:.4}", d.detector, d.fpr95, d.auroc);
            }
            println!("id_acc {:.4} ece {:.4}", m.id_acc, m.ece);
        }
        Command::Compare { common, method, seeds } => {
            let (cfg, out) = load(&common)?;
            let rows = cmd_compare(&cfg, &out, &method, seeds)?;
            for r in rows.iter().filter(|r| r.seed == "mean" && r.detector == "glmcm") {
                println!("{:12} glmcm fpr95 {:.4} auroc {:.4} id_acc {:.4}", r.method, r.fpr95, r.auroc, r.id_acc);
            }
            report_paths(&out, &["compare.csv", "compare.json", "compare.svg"]);
        }
        Command::Cohort { common, seeds } => {
            let (cfg, out) = load(&common)?;
            let rows = cmd_cohort(&cfg, &out, seeds)?;
            for r in rows.iter().filter(|r| r.seed == "mean") {
                println!("{:5} cohort {} fpr95 {:.4} auroc {:.4}", r.cohort, r.detector, r.fpr95, r.auroc);
            }
            report_paths(&out, &["cohort.csv", "cohort.json"]);
        }
        Command::Gradcheck {
            common,
            fixtures,
            corrupt_gradient,
        } => {
            let (cfg, out) = load(&common)?;
            let report = cmd_gradcheck(&cfg, &out, fixtures, corrupt_gradient)?;
            let worst = report.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
            println!("{} combinations passed, worst relative error {worst:e}", report.entries.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let result = run(cli);
    eprintln!("wall time {:.2}s", start.elapsed().as_secs_f64());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
