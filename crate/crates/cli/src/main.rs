//! `llpp`: command-line front end for the closed forms, oracles and simulator.
//!
//! Exit codes: 0 on success, 1 on errors, 2 on usage errors, 3 when an internal
//! tolerance gate fails (the offending rows are listed on stderr).

mod commands;
mod table;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::CommandOutput;

const DEFAULT_MARGIN_DELTAS: [f64; 7] = [0.02, 0.04, 0.06, 0.08, 0.1, 0.125, 0.15];
const DEFAULT_PHI_DELTAS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Parser)]
#[command(
    name = "llpp",
    version,
    about = "Loss-ranking closed forms, oracles and active-learning simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct GammaArgs {
    #[arg(long, default_value_t = 4)]
    k: u32,
    #[arg(long, default_value_t = 0.066)]
    theta: f64,
    /// Comma-separated margins.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10_000_000)]
    mc_samples: u64,
}

#[derive(Subcommand)]
enum Command {
    /// P(|X - Y| <= δ) by closed form, quadrature and Monte Carlo.
    MarginTable {
        #[command(flatten)]
        gamma: GammaArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Expected-gradient coefficient φ(δ) by quadrature, closed form and Monte Carlo.
    PhiTable {
        #[command(flatten)]
        gamma: GammaArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of the hinge and KL pair gradients.
    Gradcheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1e-6)]
        h: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Integer-shape gamma MLE over a file with one loss per line.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 32)]
        k_max: u32,
        #[command(flatten)]
        common: Common,
    },
    /// Active-learning simulation from a TOML config; writes CSV and a JSON manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

fn render(out: &CommandOutput, format: Format) -> anyhow::Result<String> {
    Ok(match format {
        Format::Csv => out.table.to_csv()?,
        Format::Text => out.table.to_text(),
    })
}

fn emit(text: &str, path: Option<&Path>) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| anyhow::anyhow!("writing {}: {e}", p.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Vec<String>> {
    let output = match cli.command {
        Command::MarginTable { gamma, common } => {
            let deltas = gamma
                .deltas
                .unwrap_or_else(|| DEFAULT_MARGIN_DELTAS.to_vec());
            let out = commands::margin_table(
                gamma.k,
                gamma.theta,
                &deltas,
                gamma.mc_samples,
                common.seed,
            )?;
            emit(&render(&out, common.format)?, common.out.as_deref())?;
            out
        }
        Command::PhiTable { gamma, common } => {
            let deltas = gamma.deltas.unwrap_or_else(|| DEFAULT_PHI_DELTAS.to_vec());
            let out =
                commands::phi_table(gamma.k, gamma.theta, &deltas, gamma.mc_samples, common.seed)?;
            emit(&render(&out, common.format)?, common.out.as_deref())?;
            out
        }
        Command::Gradcheck { trials, h, common } => {
            let out = commands::gradcheck(common.seed, trials, h)?;
            emit(&render(&out, common.format)?, common.out.as_deref())?;
            out
        }
        Command::Fit {
            input,
            k_max,
            common,
        } => {
            let (out, params) = commands::fit(&input, k_max)?;
            let mut text = render(&out, common.format)?;
            if let Format::Text = common.format {
                text.push_str(&format!(
                    "selected k = {}, theta = {}\n",
                    params.k(),
                    table::format_sig6(params.theta())
                ));
            }
            emit(&text, common.out.as_deref())?;
            out
        }
        Command::Simulate {
            config,
            seed,
            out,
            format,
        } => {
            let cfg = commands::load_sim_config(&config, seed)?;
            let (result, manifest) = commands::simulate(&cfg)?;
            emit(&render(&result, format)?, out.as_deref())?;
            if let Some(path) = &out {
                let mut name = path.clone().into_os_string();
                name.push(".manifest.json");
                let mut json = serde_json::to_string_pretty(&manifest)?;
                json.push('\n');
                std::fs::write(&name, json)?;
            }
            result
        }
    };
    Ok(output.gate_failures)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in &failures {
                eprintln!("gate failed: {f}");
            }
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
