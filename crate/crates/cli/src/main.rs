use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use resil_fuse::pipeline::{self, stages, PipelineError, RunConfig, Stage};
use resil_fuse::toy::ToyCity;

#[derive(Parser)]
#[command(name = "resil-fuse", version, about = "Social-capital density fusion and LISA cluster maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write the manifest.
    Run(Common),
    /// Parse and check all inputs without computing anything.
    Validate(Common),
    /// Catchments and per-layer density rasters.
    Layers(Common),
    /// Fuse layer rasters into the social-capital surfaces.
    Fuse(Common),
    /// Neighborhood means and Local Moran's I.
    Lisa(Common),
    /// High-high / low-low report from lisa.csv.
    Report(Common),
    /// Write the synthetic toy-city inputs into a directory.
    ToyCity {
        dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override the worker thread count.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the permutation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        Ok(cfg)
    }
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Run(c) => {
            let cfg = c.config()?;
            let manifest = pipeline::run(&cfg)?;
            for s in &manifest.skipped_structures {
                eprintln!("warning: skipped structure {}: {}", s.0, s.1);
            }
            for f in &manifest.flagged_structures {
                eprintln!("warning: structure {} has catchment population {}", f.id, f.population);
            }
            for h in &manifest.excluded_neighborhoods {
                eprintln!("warning: neighborhood {} ({}) excluded: {}", h.id, h.name, h.reason);
            }
            println!(
                "{} structures, {} neighborhoods, {} outputs in {}",
                manifest.structure_count,
                manifest.neighborhood_count,
                manifest.outputs.len() + 1,
                cfg.output.display()
            );
        }
        Command::Validate(c) => {
            let inputs = stages::validate(&c.config()?)?;
            for s in &inputs.structures.skipped {
                eprintln!("warning: skipped structure {}: {}", s.0, s.1);
            }
            println!(
                "ok: {} structures, {} neighborhoods, {}x{} population raster",
                inputs.structures.structures.len(),
                inputs.neighborhoods.len(),
                inputs.population.header().ncols,
                inputs.population.header().nrows
            );
        }
        Command::Layers(c) => {
            for f in stages::layers(&c.config()?)? {
                eprintln!("warning: structure {} has catchment population {}", f.id, f.population);
            }
        }
        Command::Fuse(c) => stages::fuse(&c.config()?)?,
        Command::Lisa(c) => {
            for h in stages::lisa(&c.config()?)? {
                eprintln!("warning: neighborhood {} ({}) excluded: {}", h.id, h.name, h.reason);
            }
        }
        Command::Report(c) => stages::report(&c.config()?)?,
        Command::ToyCity { dir, seed } => {
            let path = ToyCity::generate(seed)
                .write_to(&dir)
                .map_err(|e| PipelineError::new(Stage::Output, format!("{}: {e}", dir.display())))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
