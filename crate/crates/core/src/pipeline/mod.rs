//! Batch pipeline: ingest → catchment → density → fusion → aggregation →
//! LISA → report.
//!
//! Every stage reads and writes plain files in the output directory, so a
//! full [`run`] and the individual stage entry points produce the same
//! bytes. Randomness comes only from the configured seed, and all parallel
//! work reduces in a fixed order, so outputs do not depend on the worker
//! count.

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::RunConfig;

use crate::catchment::{catchments, catchments_csv, CatchmentResult};
use crate::density::{build_kernels, fuse, render_layers, DensityLayer, PlacedKernel, SocialCapitalSurface};
use crate::geo::Projection;
use crate::ingest::{
    load_group_raster, load_neighborhoods, load_ontology, load_raster, load_structures, LoadedStructures,
    Neighborhood, StructureOptions,
};
use crate::ontology::Ontology;
use crate::output::{lisa_csv, lisa_geojson, parse_lisa_csv, report_md, LisaRow};
use crate::raster::{render_pgm, AsciiGrid, Grid, PopulationGroupRaster, PopulationRaster, DEFAULT_NODATA};
use crate::stats::{aggregate, build_weights, lisa};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CATCHMENTS_FILE: &str = "catchments.csv";
pub const LISA_CSV_FILE: &str = "lisa.csv";
pub const LISA_GEOJSON_FILE: &str = "lisa.geojson";
pub const REPORT_FILE: &str = "report.md";
pub const SURFACES: [&str; 3] = ["total", "bridging", "bonding"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Layers,
    Fuse,
    Lisa,
    Report,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Layers => "layers",
            Stage::Fuse => "fuse",
            Stage::Lisa => "lisa",
            Stage::Report => "report",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        PipelineError {
            stage,
            message: message.into(),
        }
    }

    /// 2 for configuration errors, 3 for ingest errors, 4 for everything
    /// computed after ingest.
    pub fn exit_code(&self) -> i32 {
        match self.stage {
            Stage::Config => 2,
            Stage::Ingest => 3,
            _ => 4,
        }
    }
}

fn err(stage: Stage) -> impl Fn(&dyn fmt::Display) -> PipelineError {
    move |e| PipelineError::new(stage, e.to_string())
}

/// Validated, immutable inputs of a run.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub ontology: Ontology,
    pub projection: Projection,
    pub structures: LoadedStructures,
    pub neighborhoods: Vec<Neighborhood>,
    pub population: PopulationRaster,
    pub groups: Vec<PopulationGroupRaster>,
}

/// Parse and validate every input named by the configuration.
pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs, PipelineError> {
    let e = err(Stage::Ingest);
    let ontology = match &cfg.ontology {
        Some(p) => load_ontology(p).map_err(|x| e(&x))?,
        None => Ontology::builtin(),
    };
    let projection = cfg.projection();
    let population = load_raster(&cfg.population).map_err(|x| e(&x))?;
    let groups = cfg
        .group_rasters
        .iter()
        .map(|(g, p)| load_group_raster(p, g, population.header()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|x| e(&x))?;
    let structures = load_structures(
        &cfg.structures,
        &ontology,
        &projection,
        StructureOptions {
            permissive: cfg.permissive,
        },
    )
    .map_err(|x| e(&x))?;
    let neighborhoods = load_neighborhoods(&cfg.neighborhoods, &projection).map_err(|x| e(&x))?;
    if neighborhoods.len() < 3 {
        return Err(PipelineError::new(
            Stage::Ingest,
            format!("need at least 3 neighborhoods, found {}", neighborhoods.len()),
        ));
    }
    Ok(Inputs {
        ontology,
        projection,
        structures,
        neighborhoods,
        population,
        groups,
    })
}

/// In-memory results of the catchment and density stages.
#[derive(Debug, Clone)]
pub struct LayerProducts {
    pub catchments: Vec<CatchmentResult>,
    pub kernels: Vec<PlacedKernel>,
    pub layers: Vec<DensityLayer>,
}

pub fn compute_layers(inputs: &Inputs) -> Result<LayerProducts, PipelineError> {
    let e = err(Stage::Layers);
    let catchments = catchments(
        &inputs.structures.structures,
        &inputs.ontology,
        &inputs.population,
        &inputs.groups,
    )
    .map_err(|x| e(&x))?;
    let kernels = build_kernels(&inputs.structures.structures, &catchments, &inputs.ontology).map_err(|x| e(&x))?;
    let layers = render_layers(&kernels, &inputs.ontology, inputs.population.header());
    Ok(LayerProducts {
        catchments,
        kernels,
        layers,
    })
}

/// Structures whose catchment population fell below the population floor.
pub fn flagged_structures(products: &LayerProducts, ont: &Ontology) -> Vec<FlaggedStructure> {
    products
        .catchments
        .iter()
        .filter(|c| c.population < ont.population_floor)
        .map(|c| FlaggedStructure {
            id: c.structure_id.clone(),
            population: c.population,
            reason: "population_floor",
        })
        .collect()
}

/// Mean surface value per neighborhood followed by LISA on the neighborhoods
/// that cover at least one cell.
pub fn compute_lisa(
    surface: &Grid,
    mask: Option<&[bool]>,
    hoods: &[Neighborhood],
    cfg: &RunConfig,
) -> Result<(Vec<LisaRow>, Vec<ExcludedNeighborhood>), PipelineError> {
    let e = err(Stage::Lisa);
    let zonal = aggregate(surface, mask, hoods);
    let mut kept = Vec::new();
    let mut values = Vec::new();
    let mut excluded = Vec::new();
    for (hood, value) in hoods.iter().zip(&zonal.values) {
        match value {
            Some(v) => {
                kept.push(hood.clone());
                values.push(*v);
            }
            None => excluded.push(ExcludedNeighborhood {
                id: hood.id,
                name: hood.name.clone(),
                reason: "covers no raster cell centers",
            }),
        }
    }
    let weights = build_weights(&kept, cfg.weights).map_err(|x| e(&x))?;
    let obs = lisa(&values, &weights, &cfg.lisa_map_config()).map_err(|x| e(&x))?;
    let rows = kept
        .iter()
        .zip(obs)
        .map(|(h, o)| LisaRow {
            id: h.id,
            name: h.name.clone(),
            value: o.value,
            z: o.z,
            lag: o.lag,
            local_i: o.local_i,
            p_value: o.p_value,
            quadrant: o.quadrant,
        })
        .collect();
    Ok((rows, excluded))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedStructure {
    pub id: String,
    pub population: f64,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedNeighborhood {
    pub id: i64,
    pub name: String,
    pub reason: &'static str,
}

fn write_file(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, &path))
        .map_err(|e| PipelineError::new(Stage::Output, format!("{}: {e}", path.display())))
}

fn read_grid(dir: &Path, name: &str, stage: Stage) -> Result<AsciiGrid, PipelineError> {
    AsciiGrid::read(&dir.join(name)).map_err(|e| PipelineError::new(stage, format!("{name}: {e}")))
}

fn write_raster(dir: &Path, stem: &str, grid: &Grid, mask: &[bool], image: bool) -> Result<(), PipelineError> {
    write_file(dir, &format!("{stem}.asc"), AsciiGrid::from_grid(grid, Some(mask), DEFAULT_NODATA).to_ascii())?;
    if image {
        let (pgm, scale) = render_pgm(grid, Some(mask));
        write_file(dir, &format!("{stem}.pgm"), pgm)?;
        write_file(dir, &format!("{stem}.scale.txt"), scale.sidecar())?;
    }
    Ok(())
}

pub fn layer_stem(layer: &str) -> String {
    format!("layer_{layer}")
}

pub fn surface_stem(kind: &str) -> String {
    format!("social_capital_{kind}")
}

/// Catchments and per-layer density rasters. Writes `catchments.csv` and,
/// per layer, `layer_<name>.{asc,pgm,scale.txt}` plus the
/// `layer_<name>_bridging.asc` / `layer_<name>_bonding.asc` parts.
pub fn layers_stage(inputs: &Inputs, dir: &Path) -> Result<Vec<FlaggedStructure>, PipelineError> {
    let products = compute_layers(inputs)?;
    let mask = inputs.population.nodata_mask();
    write_file(
        dir,
        CATCHMENTS_FILE,
        catchments_csv(&products.catchments, inputs.ontology.population_floor),
    )?;
    for layer in &products.layers {
        let stem = layer_stem(&layer.name);
        write_raster(dir, &stem, &layer.grid, &mask, true)?;
        write_raster(dir, &format!("{stem}_bridging"), &layer.bridging, &mask, false)?;
        write_raster(dir, &format!("{stem}_bonding"), &layer.bonding, &mask, false)?;
    }
    Ok(flagged_structures(&products, &inputs.ontology))
}

/// Read the layer rasters written by [`layers_stage`] and write the fused
/// `social_capital_{total,bridging,bonding}` rasters and heatmaps.
pub fn fuse_stage(ont: &Ontology, dir: &Path) -> Result<SocialCapitalSurface, PipelineError> {
    let mut layers = Vec::new();
    let mut mask: Option<Vec<bool>> = None;
    for name in ont.layers() {
        let stem = layer_stem(name);
        let mut read = |suffix: &str| -> Result<Grid, PipelineError> {
            let (grid, m) = read_grid(dir, &format!("{stem}{suffix}.asc"), Stage::Fuse)?.into_grid();
            match &mut mask {
                Some(acc) => acc.iter_mut().zip(m).for_each(|(a, b)| *a |= b),
                None => mask = Some(m),
            }
            Ok(grid)
        };
        layers.push(DensityLayer {
            name: name.to_string(),
            grid: read("")?,
            bridging: read("_bridging")?,
            bonding: read("_bonding")?,
            structure_count: 0,
        });
    }
    let surface = fuse(&layers, ont).map_err(|e| PipelineError::new(Stage::Fuse, e.to_string()))?;
    let mask = mask.unwrap_or_default();
    for (kind, grid) in SURFACES.iter().zip([&surface.total, &surface.bridging, &surface.bonding]) {
        write_raster(dir, &surface_stem(kind), grid, &mask, true)?;
    }
    Ok(surface)
}

/// Aggregate `social_capital_total.asc` to neighborhoods and write
/// `lisa.csv` and `lisa.geojson`.
pub fn lisa_stage(
    cfg: &RunConfig,
    hoods: &[Neighborhood],
    projection: &Projection,
    dir: &Path,
) -> Result<Vec<ExcludedNeighborhood>, PipelineError> {
    let (total, mask) = read_grid(dir, &format!("{}.asc", surface_stem("total")), Stage::Lisa)?.into_grid();
    let (rows, excluded) = compute_lisa(&total, Some(&mask), hoods, cfg)?;
    write_file(dir, LISA_CSV_FILE, lisa_csv(&rows))?;
    write_file(dir, LISA_GEOJSON_FILE, lisa_geojson(&rows, hoods, projection))?;
    Ok(excluded)
}

/// Turn `lisa.csv` into the high/low report.
pub fn report_stage(cfg: &RunConfig, dir: &Path) -> Result<(), PipelineError> {
    let text = fs::read_to_string(dir.join(LISA_CSV_FILE))
        .map_err(|e| PipelineError::new(Stage::Report, format!("{LISA_CSV_FILE}: {e}")))?;
    let rows = parse_lisa_csv(&text).map_err(|e| PipelineError::new(Stage::Report, format!("{LISA_CSV_FILE}: {e}")))?;
    write_file(dir, REPORT_FILE, report_md(&rows, cfg.report_alpha(rows.len()), cfg.n_perm))
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, InputRecord>,
    pub structure_count: usize,
    pub category_counts: BTreeMap<String, usize>,
    pub skipped_structures: Vec<(String, String)>,
    pub neighborhood_count: usize,
    pub flagged_structures: Vec<FlaggedStructure>,
    pub excluded_neighborhoods: Vec<ExcludedNeighborhood>,
    pub outputs: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, f64>,
}

fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::new(Stage::Output, format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Content hashes of every regular file in `dir`, keyed by file name.
pub fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| PipelineError::new(Stage::Output, format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| PipelineError::new(Stage::Output, e.to_string()))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_file() && name != MANIFEST_FILE && !name.starts_with('.') {
            out.insert(name, sha256_file(&entry.path())?);
        }
    }
    Ok(out)
}

/// Run `f` inside a pool of `cfg.workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::new(Stage::Config, e.to_string()))?;
    Ok(pool.install(f))
}

fn staging_dir(output: &Path) -> PathBuf {
    let name = output.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    output.with_file_name(format!(".{name}.partial-{}", std::process::id()))
}

/// Full pipeline. Outputs are written to a staging directory next to
/// `cfg.output` and moved into place only when every stage succeeded.
pub fn run(cfg: &RunConfig) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    let staging = staging_dir(&cfg.output);
    if staging.exists() {
        let _ = fs::remove_dir_all(&staging);
    }
    fs::create_dir_all(&staging).map_err(|e| PipelineError::new(Stage::Output, format!("{}: {e}", staging.display())))?;

    let result = with_workers(cfg.workers, || run_stages(cfg, &staging)).and_then(|r| r);
    let manifest = match result {
        Ok(m) => m,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    let publish = || -> std::io::Result<()> {
        fs::create_dir_all(&cfg.output)?;
        for entry in fs::read_dir(&staging)? {
            let entry = entry?;
            fs::rename(entry.path(), cfg.output.join(entry.file_name()))?;
        }
        fs::remove_dir(&staging)
    };
    publish().map_err(|e| {
        let _ = fs::remove_dir_all(&staging);
        PipelineError::new(Stage::Output, format!("{}: {e}", cfg.output.display()))
    })?;
    Ok(manifest)
}

fn run_stages(cfg: &RunConfig, dir: &Path) -> Result<RunManifest, PipelineError> {
    let mut timings = BTreeMap::new();
    let mut timed = |name: &str, start: Instant| {
        timings.insert(name.to_string(), start.elapsed().as_secs_f64() * 1e3);
    };

    let t = Instant::now();
    let inputs = load_inputs(cfg)?;
    timed("ingest", t);
    let t = Instant::now();
    let flagged = layers_stage(&inputs, dir)?;
    timed("layers", t);
    let t = Instant::now();
    fuse_stage(&inputs.ontology, dir)?;
    timed("fuse", t);
    let t = Instant::now();
    let excluded = lisa_stage(cfg, &inputs.neighborhoods, &inputs.projection, dir)?;
    timed("lisa", t);
    let t = Instant::now();
    report_stage(cfg, dir)?;
    timed("report", t);

    let mut records = BTreeMap::new();
    let mut record = |key: &str, path: &Path| -> Result<(), PipelineError> {
        records.insert(
            key.to_string(),
            InputRecord {
                path: path.to_path_buf(),
                sha256: sha256_file(path)?,
            },
        );
        Ok(())
    };
    record("structures", &cfg.structures)?;
    record("neighborhoods", &cfg.neighborhoods)?;
    record("population", &cfg.population)?;
    if let Some(p) = &cfg.ontology {
        record("ontology", p)?;
    }
    for (g, p) in &cfg.group_rasters {
        record(&format!("group_raster.{g}"), p)?;
    }

    let manifest = RunManifest {
        tool: "resil-fuse".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        inputs: records,
        structure_count: inputs.structures.structures.len(),
        category_counts: inputs
            .structures
            .category_counts()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        skipped_structures: inputs.structures.skipped.clone(),
        neighborhood_count: inputs.neighborhoods.len(),
        flagged_structures: flagged,
        excluded_neighborhoods: excluded,
        outputs: hash_outputs(dir)?,
        timings_ms: timings,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| PipelineError::new(Stage::Output, e.to_string()))?;
    text.push('\n');
    write_file(dir, MANIFEST_FILE, text)?;
    Ok(manifest)
}

/// Stage entry points that read their inputs from, and write into,
/// `cfg.output`.
pub mod stages {
    use super::*;

    fn prepare(cfg: &RunConfig) -> Result<(), PipelineError> {
        cfg.validate()?;
        fs::create_dir_all(&cfg.output)
            .map_err(|e| PipelineError::new(Stage::Output, format!("{}: {e}", cfg.output.display())))
    }

    pub fn validate(cfg: &RunConfig) -> Result<Inputs, PipelineError> {
        cfg.validate()?;
        load_inputs(cfg)
    }

    pub fn layers(cfg: &RunConfig) -> Result<Vec<FlaggedStructure>, PipelineError> {
        prepare(cfg)?;
        let inputs = load_inputs(cfg)?;
        with_workers(cfg.workers, || layers_stage(&inputs, &cfg.output))?
    }

    pub fn fuse(cfg: &RunConfig) -> Result<(), PipelineError> {
        prepare(cfg)?;
        let ont = match &cfg.ontology {
            Some(p) => load_ontology(p).map_err(|e| PipelineError::new(Stage::Ingest, e.to_string()))?,
            None => Ontology::builtin(),
        };
        fuse_stage(&ont, &cfg.output).map(|_| ())
    }

    pub fn lisa(cfg: &RunConfig) -> Result<Vec<ExcludedNeighborhood>, PipelineError> {
        prepare(cfg)?;
        let projection = cfg.projection();
        let hoods = load_neighborhoods(&cfg.neighborhoods, &projection)
            .map_err(|e| PipelineError::new(Stage::Ingest, e.to_string()))?;
        with_workers(cfg.workers, || lisa_stage(cfg, &hoods, &projection, &cfg.output))?
    }

    pub fn report(cfg: &RunConfig) -> Result<(), PipelineError> {
        prepare(cfg)?;
        report_stage(cfg, &cfg.output)
    }
}
