use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shapeflow_surrogate::Preset;

use crate::commands;
use crate::config::{Overrides, PipelineConfig};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Debug, Parser)]
#[command(
    name = "shapeflow",
    version,
    about = "Differentiable shape optimization with a learned flow surrogate"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML file merged over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    preset: Option<PresetArg>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample designs, run the flow oracle, filter and write a dataset.
    Datagen {
        /// Replace one velocity value of these samples by NaN.
        #[arg(long, hide = true, value_delimiter = ',')]
        inject_nan: Vec<usize>,
    },
    /// Train the surrogate on a dataset directory.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Maximize the mean streamwise velocity over the design parameters.
    Optimize {
        /// Weights file; defaults to the best checkpoint under the output dir.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        export_final_mesh: bool,
    },
    /// Compare every stage's vjp with finite differences.
    Gradcheck {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Scale the named stage's vjp to check that the check fails.
        #[arg(long, hide = true)]
        corrupt_vjp: Option<String>,
    },
    /// Extract, smooth and write the surface of one design.
    ExportMesh {
        /// r_a,r_b,L,theta_x,theta_y,theta_z
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        design: Option<Vec<f64>>,
        /// One-row design CSV.
        #[arg(long)]
        designs: Option<PathBuf>,
        /// Output path ending in .obj or .stl.
        #[arg(long = "mesh")]
        mesh: Option<PathBuf>,
    },
    /// Train the four attention and mask variants and write a report.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Datagen { .. } => "datagen",
            Command::Train { .. } => "train",
            Command::Optimize { .. } => "optimize",
            Command::Gradcheck { .. } => "gradcheck",
            Command::ExportMesh { .. } => "export-mesh",
            Command::Ablate { .. } => "ablate",
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    if g.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    // A second initialisation (tests calling `run` repeatedly) keeps the
    // first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(g.threads).build_global();
    let overrides = Overrides {
        preset: g.preset.map(|p| match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }),
        seed: g.seed,
        out: g.out,
    };
    let cfg = PipelineConfig::load(g.config.as_deref(), &overrides)?;
    let name = cli.command.name();
    match &cli.command {
        Command::Datagen { inject_nan } => {
            commands::datagen(&cfg, inject_nan)?;
        }
        Command::Train { data } => {
            commands::train(&cfg, data.as_deref())?;
        }
        Command::Optimize {
            model,
            export_final_mesh,
        } => {
            commands::run_optimize(&cfg, model.as_deref(), *export_final_mesh)?;
        }
        Command::Gradcheck { model, corrupt_vjp } => {
            let results = commands::gradcheck(&cfg, model.as_deref(), corrupt_vjp.as_deref())?;
            commands::write_run_manifest(&cfg, name, g.threads)?;
            let failed: Vec<&str> = results
                .iter()
                .filter(|r| !r.passed())
                .map(|r| r.stage.as_str())
                .collect();
            if !failed.is_empty() {
                return Err(CliError::Runtime(format!(
                    "gradient check failed for {}",
                    failed.join(", ")
                )));
            }
            return Ok(());
        }
        Command::ExportMesh { design, designs, mesh } => {
            commands::export_mesh_cmd(&cfg, design.as_deref(), designs.as_deref(), mesh.as_deref())?;
        }
        Command::Ablate { data } => {
            commands::ablate(&cfg, data.as_deref())?;
        }
    }
    commands::write_run_manifest(&cfg, name, g.threads)?;
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
