//! A small synthetic city for tests, examples and the bundled fixtures.
//!
//! 20 km square at 100 m resolution, 25 square wards, two religious groups
//! split east/west, and about 200 structures. Services cluster in the
//! north-east and vacant lots in the south-west, so the fused surface has a
//! clear high-high and low-low pattern.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::geo::{GeoPoint, PlanarPoint, Polygon, Projection};
use crate::ingest::Neighborhood;
use crate::ontology::Ontology;
use crate::raster::{AsciiGrid, GridHeader, DEFAULT_NODATA};

pub const ORIGIN: (f64, f64) = (106.8, -6.2);
pub const SIZE: usize = 200;
pub const CELL: f64 = 100.0;
pub const WARDS: usize = 5;
pub const GROUPS: [&str; 2] = ["muslim", "christian"];

pub const CONFIG_FILE: &str = "toy_city.toml";
pub const STRUCTURES_FILE: &str = "structures.geojson";
pub const NEIGHBORHOODS_FILE: &str = "neighborhoods.geojson";
pub const POPULATION_FILE: &str = "population.asc";
pub const ONTOLOGY_FILE: &str = "ontology.toml";

const HALF: f64 = SIZE as f64 * CELL / 2.0;
const LAKE: (f64, f64, f64) = (-5000.0, 6000.0, 1200.0);

pub fn header() -> GridHeader {
    GridHeader {
        ncols: SIZE,
        nrows: SIZE,
        xllcorner: -HALF,
        yllcorner: -HALF,
        cellsize: CELL,
    }
}

pub fn projection() -> Projection {
    Projection::new(GeoPoint::new(ORIGIN.0, ORIGIN.1).expect("valid origin"))
}

pub fn group_file(group: &str) -> String {
    format!("group_{group}.asc")
}

/// Generated inputs, already serialized.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCity {
    pub population: AsciiGrid,
    pub groups: BTreeMap<String, AsciiGrid>,
    pub structures: String,
    pub neighborhoods: String,
    pub config: String,
}

fn blob(p: PlanarPoint, cx: f64, cy: f64, sigma: f64) -> f64 {
    let d2 = (p.x - cx).powi(2) + (p.y - cy).powi(2);
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn in_lake(p: PlanarPoint) -> bool {
    (p.x - LAKE.0).powi(2) + (p.y - LAKE.1).powi(2) <= LAKE.2 * LAKE.2
}

fn muslim_share(p: PlanarPoint) -> f64 {
    0.5 + 0.4 * (p.x / 4000.0).tanh()
}

fn round_to(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (v * s).round() / s
}

fn lonlat(projection: &Projection, p: PlanarPoint) -> Value {
    let g = projection.unproject(p);
    json!([round_to(g.lon, 7), round_to(g.lat, 7)])
}

fn rasters(rng: &mut ChaCha8Rng) -> (AsciiGrid, BTreeMap<String, AsciiGrid>) {
    let h = header();
    let mut pop = Vec::with_capacity(h.len());
    let mut muslim = Vec::with_capacity(h.len());
    let mut christian = Vec::with_capacity(h.len());
    for r in 0..h.nrows {
        for c in 0..h.ncols {
            let p = h.cell_center(r, c);
            let noise: f64 = rng.random_range(0.0..15.0);
            if in_lake(p) {
                pop.push(DEFAULT_NODATA);
                muslim.push(DEFAULT_NODATA);
                christian.push(DEFAULT_NODATA);
                continue;
            }
            let density = 60.0 + 250.0 * blob(p, -6000.0, -6000.0, 3500.0) + 40.0 * blob(p, 5000.0, 5000.0, 4000.0);
            pop.push((density + noise).round());
            let m = round_to(muslim_share(p), 3);
            muslim.push(m);
            christian.push(round_to((0.95 - m).max(0.0), 3));
        }
    }
    let grid = |values| AsciiGrid {
        header: h,
        nodata: DEFAULT_NODATA,
        values,
    };
    let groups = BTreeMap::from([("muslim".to_string(), grid(muslim)), ("christian".to_string(), grid(christian))]);
    (grid(pop), groups)
}

fn structures(rng: &mut ChaCha8Rng, ont: &Ontology, projection: &Projection) -> String {
    let mut features = Vec::new();
    let mut add = |rng: &mut ChaCha8Rng, category: &str, p: PlanarPoint, group: Option<&str>| {
        let spec = ont.category(category).expect("toy categories exist");
        let base = spec.default_capacity.unwrap_or(100.0);
        let capacity = (base * rng.random_range(0.5..1.5)).round().max(1.0);
        let id = format!("toy-{:03}", features.len() + 1);
        let mut props = json!({
            "name": format!("{} {}", category.replace('_', " "), features.len() + 1),
            "category": category,
            "capacity": capacity,
        });
        if let Some(g) = group {
            props["group"] = json!(g);
            props["access"] = json!("restricted");
        }
        features.push(json!({
            "type": "Feature",
            "id": id,
            "geometry": {"type": "Point", "coordinates": lonlat(projection, p)},
            "properties": props,
        }));
    };
    let uniform = |rng: &mut ChaCha8Rng, x: (f64, f64), y: (f64, f64)| loop {
        let p = PlanarPoint::new(rng.random_range(x.0..x.1), rng.random_range(y.0..y.1));
        if !in_lake(p) {
            return p;
        }
    };
    let city = (-HALF + 300.0, HALF - 300.0);
    let north_east = (-1700.0, HALF - 300.0);
    let south_west = (-HALF + 300.0, -2000.0);

    for _ in 0..10 {
        let p = uniform(rng, north_east, north_east);
        add(rng, "hospital", p, None);
    }
    for _ in 0..15 {
        let p = uniform(rng, north_east, north_east);
        add(rng, "clinic", p, None);
    }
    for _ in 0..70 {
        let p = uniform(rng, city, city);
        let east = rng.random::<f64>() < muslim_share(p);
        let mismatched = rng.random::<f64>() < 0.25;
        let group = if east != mismatched { GROUPS[0] } else { GROUPS[1] };
        add(rng, "place_of_worship", p, Some(group));
    }
    for _ in 0..25 {
        let p = uniform(rng, north_east, north_east);
        add(rng, "community_centre", p, None);
    }
    for _ in 0..25 {
        let p = uniform(rng, city, city);
        add(rng, "school", p, None);
    }
    for _ in 0..15 {
        let p = uniform(rng, north_east, north_east);
        add(rng, "park", p, None);
    }
    for _ in 0..15 {
        let p = uniform(rng, south_west, south_west);
        add(rng, "vacant_lot", p, None);
    }
    // Two bus lines through the north-east, along y = 3000 and x = 3000.
    for i in 0..25 {
        let t = -HALF + 600.0 + (i / 2) as f64 * 1550.0;
        let p = if i % 2 == 0 {
            PlanarPoint::new(t, 3000.0)
        } else {
            PlanarPoint::new(3000.0, t)
        };
        add(rng, "transit_stop", p, None);
    }
    let mut text = serde_json::to_string_pretty(&json!({"type": "FeatureCollection", "features": features}))
        .expect("GeoJSON values serialize");
    text.push('\n');
    text
}

/// Square wards of `size` meters in a `rows × cols` lattice whose south-west
/// corner is `origin`. Ids run row-major from the north-west, starting at 1.
pub fn lattice(rows: usize, cols: usize, size: f64, origin: PlanarPoint) -> Vec<Neighborhood> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let x0 = origin.x + c as f64 * size;
            let y0 = origin.y + (rows - 1 - r) as f64 * size;
            let id = (r * cols + c + 1) as i64;
            out.push(Neighborhood {
                id,
                name: format!("Ward {id:02}"),
                parts: vec![Polygon::rect(PlanarPoint::new(x0, y0), PlanarPoint::new(x0 + size, y0 + size)).expect("positive size")],
            });
        }
    }
    out
}

fn neighborhoods(projection: &Projection) -> String {
    let size = 2.0 * HALF / WARDS as f64;
    let features: Vec<Value> = lattice(WARDS, WARDS, size, PlanarPoint::new(-HALF, -HALF))
        .iter()
        .map(|hood| {
            let ring: Vec<Value> = hood.parts[0].exterior().vertices().iter().map(|p| lonlat(projection, *p)).collect();
            json!({
                "type": "Feature",
                "properties": {"id": hood.id, "name": hood.name},
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            })
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&json!({"type": "FeatureCollection", "features": features}))
        .expect("GeoJSON values serialize");
    text.push('\n');
    text
}

fn config(seed: u64) -> String {
    let mut s = String::new();
    s.push_str(&format!("structures = \"{STRUCTURES_FILE}\"\n"));
    s.push_str(&format!("neighborhoods = \"{NEIGHBORHOODS_FILE}\"\n"));
    s.push_str(&format!("population = \"{POPULATION_FILE}\"\n"));
    s.push_str(&format!("ontology = \"{ONTOLOGY_FILE}\"\n"));
    s.push_str("output = \"out\"\n");
    s.push_str(&format!("origin = [{}, {}]\n", ORIGIN.0, ORIGIN.1));
    s.push_str("weights = \"queen\"\n");
    s.push_str("n_perm = 999\n");
    s.push_str(&format!("seed = {seed}\n"));
    s.push_str("alpha_map = 0.05\n");
    s.push_str("alpha_report = 0.001\n");
    s.push_str("workers = 1\n\n[group_rasters]\n");
    for g in GROUPS {
        s.push_str(&format!("{g} = \"{}\"\n", group_file(g)));
    }
    s
}

impl ToyCity {
    /// Generate the city. The structure layout and raster noise depend only
    /// on `seed`.
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = projection();
        let (population, groups) = rasters(&mut rng);
        let structures = structures(&mut rng, &Ontology::builtin(), &projection);
        ToyCity {
            population,
            groups,
            structures,
            neighborhoods: neighborhoods(&projection),
            config: config(seed),
        }
    }

    /// Every file written by [`ToyCity::write_to`], keyed by file name.
    pub fn files(&self) -> Vec<(String, String)> {
        let mut files = vec![
            (CONFIG_FILE.to_string(), self.config.clone()),
            (STRUCTURES_FILE.to_string(), self.structures.clone()),
            (NEIGHBORHOODS_FILE.to_string(), self.neighborhoods.clone()),
            (POPULATION_FILE.to_string(), self.population.to_ascii()),
            (ONTOLOGY_FILE.to_string(), Ontology::builtin_text().to_string()),
        ];
        for (g, grid) in &self.groups {
            files.push((group_file(g), grid.to_ascii()));
        }
        files
    }

    /// Write the inputs and config into `dir`, returning the config path.
    pub fn write_to(&self, dir: &Path) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        for (name, text) in self.files() {
            fs::write(dir.join(name), text)?;
        }
        Ok(dir.join(CONFIG_FILE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_neighborhoods, parse_structures, StructureOptions};

    #[test]
    fn generation_is_seeded() {
        assert_eq!(ToyCity::generate(7), ToyCity::generate(7));
        assert_ne!(ToyCity::generate(7).structures, ToyCity::generate(8).structures);
    }

    #[test]
    fn inputs_parse() {
        let city = ToyCity::generate(7);
        let ont = Ontology::builtin();
        let loaded = parse_structures(&city.structures, "toy", &ont, &projection(), StructureOptions::default()).unwrap();
        assert_eq!(loaded.structures.len(), 200);
        let counts = loaded.category_counts();
        assert_eq!(counts["place_of_worship"], 70);
        let hoods = parse_neighborhoods(&city.neighborhoods, "toy", &projection()).unwrap();
        assert_eq!(hoods.len(), 25);
        assert!((hoods[0].area() - 16e6).abs() < 1e3);
    }

    #[test]
    fn lattice_ids_run_from_north_west() {
        let hoods = lattice(2, 3, 10.0, PlanarPoint::new(0.0, 0.0));
        assert_eq!(hoods.len(), 6);
        assert!(hoods[0].contains(PlanarPoint::new(5.0, 15.0)));
        assert!(hoods[5].contains(PlanarPoint::new(25.0, 5.0)));
    }
}
