//! `convlens`: inspect, classify and visualize CVW-packaged CNNs.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "convlens",
    version,
    about = "CNN activation, dead-map and Grad-CAM inspector"
)]
struct Cli {
    /// Weight container (.cvw); may instead be the first positional argument.
    #[arg(long, global = true, value_name = "PATH")]
    model: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the layer table and the conv layers picked for visualization.
    Inspect {
        #[arg(value_name = "MODEL")]
        paths: Vec<PathBuf>,
    },
    /// Print the top-k classes as JSON.
    Classify {
        #[command(flatten)]
        io: ModelAndImage,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Write channel-grid PNGs of conv feature maps.
    Activations {
        #[command(flatten)]
        io: ModelAndImage,
        /// `auto` or comma-separated conv ordinals.
        #[arg(long, default_value = "auto")]
        layers: String,
        /// Also write this channel of each chosen layer as a single tile.
        #[arg(long)]
        channel: Option<usize>,
        #[arg(long, default_value_t = convlens_core::analysis::DEFAULT_DEAD_EPS)]
        dead_eps: f64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Write a Grad-CAM overlay PNG and a JSON sidecar next to it.
    Gradcam {
        #[command(flatten)]
        io: ModelAndImage,
        /// `auto` (argmax) or a class index.
        #[arg(long, default_value = "auto")]
        class: String,
        /// `last` or a conv ordinal.
        #[arg(long, default_value = "last")]
        layer: String,
        #[arg(long, default_value_t = 0.5)]
        blend: f32,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Report dead feature maps of every conv layer.
    Deadmaps {
        #[command(flatten)]
        io: ModelAndImage,
        #[arg(long, default_value_t = convlens_core::analysis::DEFAULT_DEAD_EPS)]
        eps: f64,
        /// Write the JSON report here instead of stdout.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ModelAndImage {
    /// `[MODEL] IMAGE`; MODEL is omitted when `--model` is given.
    #[arg(value_name = "PATHS", required = true)]
    paths: Vec<PathBuf>,
}

fn split_paths(
    model: Option<PathBuf>,
    mut paths: Vec<PathBuf>,
    want: usize,
) -> Result<Vec<PathBuf>, Failure> {
    if let Some(m) = model {
        paths.insert(0, m);
    }
    if paths.len() != want {
        let expected = if want == 1 { "MODEL" } else { "MODEL IMAGE" };
        return Err(Failure::usage(format!(
            "expected {expected} (model via --model or first positional), got {} path(s)",
            paths.len()
        )));
    }
    Ok(paths)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("CONVLENS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::usage(format!(
            "CONVLENS_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Inspect { paths } => {
            let p = split_paths(cli.model, paths, 1)?;
            commands::inspect(&p[0])
        }
        Command::Classify { io, top } => {
            let p = split_paths(cli.model, io.paths, 2)?;
            commands::classify(&p[0], &p[1], top)
        }
        Command::Activations {
            io,
            layers,
            channel,
            dead_eps,
            out,
        } => {
            let p = split_paths(cli.model, io.paths, 2)?;
            commands::activations(&p[0], &p[1], &layers, channel, dead_eps, &out)
        }
        Command::Gradcam {
            io,
            class,
            layer,
            blend,
            out,
        } => {
            let p = split_paths(cli.model, io.paths, 2)?;
            commands::gradcam(&p[0], &p[1], &class, &layer, blend, &out)
        }
        Command::Deadmaps { io, eps, json } => {
            let p = split_paths(cli.model, io.paths, 2)?;
            commands::deadmaps(&p[0], &p[1], eps, json.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("convlens: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
