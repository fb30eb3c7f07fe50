//! `finray`: geometry, FEM reference solves, PINN training, marker evaluation
//! and field export for planar Fin Ray fingers.

mod commands;

use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::BoolishValueParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use finray_core::Variant;

#[derive(Parser, Debug)]
#[command(name = "finray", version, about = "Energy-method PINNs and CST FEM for Fin Ray fingers")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; each overrides the matching experiment field.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Experiment JSON.
    #[arg(long, global = true, env = "PINNRAY_CONFIG")]
    pub config: Option<PathBuf>,
    /// Seeds network initialization and point sampling.
    #[arg(long, global = true, env = "PINNRAY_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "PINNRAY_THREADS")]
    pub threads: Option<usize>,
    /// Fixed-order reductions; `--deterministic false` allows work stealing.
    #[arg(long, global = true, env = "PINNRAY_DETERMINISTIC", num_args = 0..=1,
          default_missing_value = "true", value_parser = BoolishValueParser::new())]
    pub deterministic: Option<bool>,
    /// Output directory.
    #[arg(long, global = true, env = "PINNRAY_OUT")]
    pub out: Option<PathBuf>,
    /// Training epochs.
    #[arg(long, global = true, env = "PINNRAY_EPOCHS")]
    pub epochs: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantArg {
    Std,
    Asm,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Std => Variant::Std,
            VariantArg::Asm => Variant::Asm,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the Fin Ray domain and write it as JSON.
    Geometry {
        /// Fin Ray parameter JSON; defaults to the experiment's.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Also write this many uniformly sampled collocation points.
        #[arg(long)]
        points: Option<usize>,
        /// Also write a triangulation with this maximum triangle area (mm^2).
        #[arg(long)]
        mesh_area: Option<f64>,
    },
    /// Solve the reference FEM problem.
    Fem,
    /// Train one PINN variant.
    Train {
        #[arg(long, value_enum, default_value = "std", env = "PINNRAY_VARIANT")]
        variant: VariantArg,
    },
    /// Compare FEM and PINN estimates against the measured markers.
    Evaluate {
        /// Extra method as `LABEL=CHECKPOINT`; repeatable.
        #[arg(long = "checkpoint", value_name = "LABEL=PATH")]
        checkpoints: Vec<String>,
        /// Leave the FEM column out.
        #[arg(long)]
        no_fem: bool,
    },
    /// Sample displacement, strain and stress on a grid.
    Export {
        #[arg(long, value_enum, default_value = "std", env = "PINNRAY_VARIANT")]
        variant: VariantArg,
        /// Export the FEM solution instead of a checkpoint.
        #[arg(long)]
        fem: bool,
    },
}

/// Exit code 2 for missing inputs, 1 for every other failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    let missing =
        err.chain().any(|e| e.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::NotFound));
    if missing {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
