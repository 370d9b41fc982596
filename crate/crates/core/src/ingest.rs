//! Parsing of the external inputs: structures and neighborhoods (GeoJSON)
//! and population rasters (ESRI ASCII grid).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geo::{BBox, GeoPoint, GeometryError, PlanarPoint, Polygon, Projection};
use crate::ontology::{Ontology, OntologyError};
use crate::raster::{AsciiGrid, GridHeader, PopulationGroupRaster, PopulationRaster, RasterError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed GeoJSON: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: feature {feature}: {message}")]
    Feature {
        path: String,
        feature: String,
        message: String,
    },
    #[error("{path}: feature {feature}: {source}")]
    Geometry {
        path: String,
        feature: String,
        #[source]
        source: GeometryError,
    },
    #[error("{path}: duplicate neighborhood id {id}")]
    DuplicateId { path: String, id: i64 },
    #[error("{path}: {source}")]
    Raster {
        path: String,
        #[source]
        source: RasterError,
    },
    #[error("{path}: {source}")]
    Ontology {
        path: String,
        #[source]
        source: OntologyError,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    #[default]
    Open,
    Restricted,
}

/// A point structure that seeds one kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SocialStructure {
    pub id: String,
    pub category: String,
    pub location: GeoPoint,
    /// `location` in the run's planar frame.
    pub position: PlanarPoint,
    /// Persons served (beds, seats, ...).
    pub capacity: f64,
    pub group: Option<String>,
    pub access: Access,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StructureOptions {
    /// Skip features with unknown categories or groups instead of failing.
    pub permissive: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedStructures {
    pub structures: Vec<SocialStructure>,
    /// Ids of features dropped in permissive mode, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl LoadedStructures {
    pub fn category_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.structures {
            *counts.entry(s.category.as_str()).or_default() += 1;
        }
        counts
    }
}

/// A neighborhood. MultiPolygon inputs keep one part per polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub id: i64,
    pub name: String,
    pub parts: Vec<Polygon>,
}

impl Neighborhood {
    pub fn contains(&self, p: PlanarPoint) -> bool {
        self.parts.iter().any(|poly| poly.contains(p))
    }

    pub fn bbox(&self) -> BBox {
        self.parts
            .iter()
            .map(Polygon::bbox)
            .reduce(|a, b| a.union(&b))
            .expect("neighborhood has at least one part")
    }

    pub fn area(&self) -> f64 {
        self.parts.iter().map(Polygon::area).sum()
    }

    /// Area-weighted centroid over all parts.
    pub fn centroid(&self) -> PlanarPoint {
        let (mut x, mut y, mut a) = (0.0, 0.0, 0.0);
        for part in &self.parts {
            let c = part.centroid();
            let w = part.exterior().signed_area().abs();
            x += c.x * w;
            y += c.y * w;
            a += w;
        }
        PlanarPoint::new(x / a, y / a)
    }
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn features<'a>(path: &str, doc: &'a Value) -> Result<&'a [Value], IngestError> {
    let invalid = |message: &str| IngestError::Invalid {
        path: path.to_string(),
        message: message.to_string(),
    };
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(invalid("expected a GeoJSON FeatureCollection"));
    }
    doc.get("features")
        .and_then(Value::as_array)
        .map(Vec::as_slice)
        .ok_or_else(|| invalid("FeatureCollection has no features array"))
}

fn feature_label(feature: &Value, index: usize) -> String {
    let from = |v: Option<&Value>| match v {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => None,
    };
    from(feature.get("id"))
        .or_else(|| from(feature.get("properties").and_then(|p| p.get("id"))))
        .unwrap_or_else(|| format!("#{index}"))
}

fn position(v: &Value) -> Option<GeoPoint> {
    let arr = v.as_array()?;
    if arr.len() < 2 {
        return None;
    }
    GeoPoint::new(arr[0].as_f64()?, arr[1].as_f64()?).ok()
}

/// Load structures from a GeoJSON FeatureCollection of Point features.
pub fn load_structures(
    path: &Path,
    ontology: &Ontology,
    projection: &Projection,
    options: StructureOptions,
) -> Result<LoadedStructures, IngestError> {
    parse_structures(&read_text(path)?, &path.display().to_string(), ontology, projection, options)
}

pub fn parse_structures(
    text: &str,
    path: &str,
    ontology: &Ontology,
    projection: &Projection,
    options: StructureOptions,
) -> Result<LoadedStructures, IngestError> {
    let doc: Value = serde_json::from_str(text).map_err(|source| IngestError::Json {
        path: path.to_string(),
        source,
    })?;
    let mut out = LoadedStructures::default();
    let known_groups: HashSet<&str> = ontology.groups().iter().map(String::as_str).collect();

    for (index, feature) in features(path, &doc)?.iter().enumerate() {
        let id = feature_label(feature, index);
        let fail = |message: String| IngestError::Feature {
            path: path.to_string(),
            feature: id.clone(),
            message,
        };
        let geometry = feature.get("geometry").ok_or_else(|| fail("missing geometry".into()))?;
        let kind = geometry.get("type").and_then(Value::as_str).unwrap_or("null");
        if kind != "Point" {
            return Err(fail(format!("expected Point geometry, found {kind}")));
        }
        let location = geometry
            .get("coordinates")
            .and_then(position)
            .ok_or_else(|| fail("invalid Point coordinates".into()))?;

        let empty = Map::new();
        let props = feature.get("properties").and_then(Value::as_object).unwrap_or(&empty);
        let category = props
            .get("category")
            .and_then(Value::as_str)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| fail("missing category".into()))?
            .to_string();
        let spec = match ontology.category(&category) {
            Ok(spec) => spec,
            Err(_) if options.permissive => {
                out.skipped.push((id.clone(), format!("unknown category {category:?}")));
                continue;
            }
            Err(_) => return Err(fail(format!("unknown category {category:?}"))),
        };

        let capacity = match props.get("capacity") {
            None | Some(Value::Null) => spec
                .default_capacity
                .ok_or_else(|| fail(format!("no capacity and category {category:?} has no default")))?,
            Some(v) => v
                .as_f64()
                .filter(|c| *c > 0.0 && c.is_finite())
                .ok_or_else(|| fail(format!("capacity must be a positive number, found {v}")))?,
        };

        let group = match props.get("group") {
            None | Some(Value::Null) => None,
            Some(Value::String(g)) => Some(g.clone()),
            Some(other) => return Err(fail(format!("group must be a string, found {other}"))),
        };
        let access = match props.get("access").and_then(Value::as_str) {
            None | Some("open") => Access::Open,
            Some("restricted") => Access::Restricted,
            Some(other) => return Err(fail(format!("access must be open or restricted, found {other:?}"))),
        };
        if access == Access::Restricted && group.is_none() {
            return Err(fail("restricted access requires a group".into()));
        }
        if let Some(g) = &group {
            if !known_groups.is_empty() && !known_groups.contains(g.as_str()) {
                if options.permissive {
                    out.skipped.push((id.clone(), format!("unknown group {g:?}")));
                    continue;
                }
                return Err(fail(format!("unknown group {g:?}")));
            }
        }

        out.structures.push(SocialStructure {
            position: projection.project(location),
            id,
            category,
            location,
            capacity,
            group,
            access,
        });
    }
    Ok(out)
}

/// Load neighborhoods from a GeoJSON FeatureCollection of Polygon or
/// MultiPolygon features carrying integer `id` and string `name`.
pub fn load_neighborhoods(path: &Path, projection: &Projection) -> Result<Vec<Neighborhood>, IngestError> {
    parse_neighborhoods(&read_text(path)?, &path.display().to_string(), projection)
}

pub fn parse_neighborhoods(text: &str, path: &str, projection: &Projection) -> Result<Vec<Neighborhood>, IngestError> {
    let doc: Value = serde_json::from_str(text).map_err(|source| IngestError::Json {
        path: path.to_string(),
        source,
    })?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (index, feature) in features(path, &doc)?.iter().enumerate() {
        let label = feature_label(feature, index);
        let fail = |message: String| IngestError::Feature {
            path: path.to_string(),
            feature: label.clone(),
            message,
        };
        let props = feature.get("properties");
        let id = props
            .and_then(|p| p.get("id"))
            .or_else(|| feature.get("id"))
            .and_then(Value::as_i64)
            .ok_or_else(|| fail("missing integer id".into()))?;
        let name = props
            .and_then(|p| p.get("name"))
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        if !seen.insert(id) {
            return Err(IngestError::DuplicateId {
                path: path.to_string(),
                id,
            });
        }

        let geometry = feature.get("geometry").ok_or_else(|| fail("missing geometry".into()))?;
        let coords = geometry
            .get("coordinates")
            .ok_or_else(|| fail("missing coordinates".into()))?;
        let polygons: Vec<&Value> = match geometry.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![coords],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| fail("MultiPolygon coordinates must be an array".into()))?
                .iter()
                .collect(),
            other => return Err(fail(format!("expected Polygon or MultiPolygon, found {}", other.unwrap_or("null")))),
        };

        let mut parts = Vec::with_capacity(polygons.len());
        for poly in polygons {
            let rings = poly
                .as_array()
                .filter(|r| !r.is_empty())
                .ok_or_else(|| fail("polygon needs at least one ring".into()))?;
            let mut projected = Vec::with_capacity(rings.len());
            for ring in rings {
                let pts = ring
                    .as_array()
                    .ok_or_else(|| fail("ring must be an array of positions".into()))?
                    .iter()
                    .map(|p| position(p).map(|g| projection.project(g)))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| fail("invalid ring position".into()))?;
                projected.push(pts);
            }
            let exterior = projected.remove(0);
            let geometry_err = |source| IngestError::Geometry {
                path: path.to_string(),
                feature: label.clone(),
                source,
            };
            let polygon = Polygon::new(exterior, projected).map_err(geometry_err)?;
            polygon.check_simple().map_err(geometry_err)?;
            parts.push(polygon);
        }
        out.push(Neighborhood { id, name, parts });
    }
    Ok(out)
}

pub fn load_raster(path: &Path) -> Result<PopulationRaster, IngestError> {
    let raster_err = |source| IngestError::Raster {
        path: path.display().to_string(),
        source,
    };
    PopulationRaster::new(AsciiGrid::read(path).map_err(raster_err)?).map_err(raster_err)
}

pub fn load_group_raster(path: &Path, group: &str, population: &GridHeader) -> Result<PopulationGroupRaster, IngestError> {
    let raster_err = |source| IngestError::Raster {
        path: path.display().to_string(),
        source,
    };
    PopulationGroupRaster::new(group, AsciiGrid::read(path).map_err(raster_err)?, population).map_err(raster_err)
}

pub fn load_ontology(path: &Path) -> Result<Ontology, IngestError> {
    Ontology::load(path).map_err(|source| IngestError::Ontology {
        path: path.display().to_string(),
        source,
    })
}

/// Mapping from OpenStreetMap tags to ontology categories, used when
/// extracting a structures file from an OSM snapshot.
#[derive(Debug, Clone, Deserialize)]
pub struct OsmTagMap {
    tags: BTreeMap<String, String>,
    #[serde(default)]
    restricted: BTreeMap<String, bool>,
}

impl OsmTagMap {
    pub fn builtin() -> Self {
        toml::from_str(include_str!("../data/osm_tags.toml")).expect("bundled tag map is valid")
    }

    pub fn category_for(&self, key: &str, value: &str) -> Option<&str> {
        self.tags.get(&format!("{key}={value}")).map(String::as_str)
    }

    /// Access policy for a category when the source carries a religion tag.
    pub fn default_access(&self, category: &str) -> Access {
        if self.restricted.get(category).copied().unwrap_or(false) {
            Access::Restricted
        } else {
            Access::Open
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proj() -> Projection {
        Projection::new(GeoPoint::new(106.8, -6.2).unwrap())
    }

    fn point_fc(props: &str) -> String {
        format!(
            r#"{{"type":"FeatureCollection","features":[
                {{"type":"Feature","id":"a","geometry":{{"type":"Point","coordinates":[106.81,-6.2]}},"properties":{props}}}
            ]}}"#
        )
    }

    #[test]
    fn structure_fields_map_directly() {
        let ont = Ontology::builtin();
        let loaded = parse_structures(
            &point_fc(r#"{"category":"place_of_worship","capacity":500}"#),
            "t",
            &ont,
            &proj(),
            StructureOptions::default(),
        )
        .unwrap();
        let s = &loaded.structures[0];
        assert_eq!(s.id, "a");
        assert_eq!(s.capacity, 500.0);
        assert_eq!(s.access, Access::Open);
        assert!((s.position.x - 1105.45).abs() < 0.01);
    }

    #[test]
    fn missing_capacity_uses_category_default() {
        let ont = Ontology::parse(
            "[category.c]\nweight = 0.5\nbandwidth = 1.0\ndefault_capacity = 200.0\nlayer = \"l\"\ncapital_kind = \"bridging\"\n",
        )
        .unwrap();
        let loaded = parse_structures(&point_fc(r#"{"category":"c"}"#), "t", &ont, &proj(), Default::default()).unwrap();
        assert_eq!(loaded.structures[0].capacity, 200.0);
    }

    #[test]
    fn restricted_without_group_rejected() {
        let err = parse_structures(
            &point_fc(r#"{"category":"place_of_worship","access":"restricted"}"#),
            "t",
            &Ontology::builtin(),
            &proj(),
            Default::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("requires a group"), "{err}");
    }

    #[test]
    fn unknown_category_strict_and_permissive() {
        let text = point_fc(r#"{"category":"casino","capacity":10}"#);
        let ont = Ontology::builtin();
        assert!(parse_structures(&text, "t", &ont, &proj(), Default::default()).is_err());
        let loaded = parse_structures(&text, "t", &ont, &proj(), StructureOptions { permissive: true }).unwrap();
        assert!(loaded.structures.is_empty());
        assert_eq!(loaded.skipped.len(), 1);
    }

    #[test]
    fn non_point_feature_named_in_error() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","id":"bad-7","geometry":{"type":"LineString","coordinates":[[0,0],[1,1]]},"properties":{"category":"clinic"}}
        ]}"#;
        let err = parse_structures(text, "t", &Ontology::builtin(), &proj(), Default::default()).unwrap_err();
        assert!(err.to_string().contains("bad-7"), "{err}");
    }

    #[test]
    fn malformed_json_has_line_context() {
        let err = parse_structures("{\n\"type\": \n}", "t", &Ontology::builtin(), &proj(), Default::default()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    fn square(lon: f64, lat: f64, d: f64) -> String {
        format!("[[{lon},{lat}],[{},{lat}],[{},{}],[{lon},{}],[{lon},{lat}]]", lon + d, lon + d, lat + d, lat + d)
    }

    #[test]
    fn neighborhood_polygon_and_multipolygon() {
        let text = format!(
            r#"{{"type":"FeatureCollection","features":[
                {{"type":"Feature","properties":{{"id":1,"name":"One"}},"geometry":{{"type":"Polygon","coordinates":[{}]}}}},
                {{"type":"Feature","properties":{{"id":2,"name":"Two"}},"geometry":{{"type":"MultiPolygon","coordinates":[[{}],[{}]]}}}}
            ]}}"#,
            square(106.8, -6.2, 0.01),
            square(106.82, -6.2, 0.01),
            square(106.84, -6.2, 0.01)
        );
        let hoods = parse_neighborhoods(&text, "t", &proj()).unwrap();
        assert_eq!(hoods.len(), 2);
        assert_eq!(hoods[0].parts.len(), 1);
        assert_eq!((hoods[1].id, hoods[1].parts.len()), (2, 2));
        assert!(hoods[0].contains(PlanarPoint::new(500.0, 500.0)));
        assert!(hoods.iter().all(|h| h.parts.iter().all(|p| p.check_simple().is_ok())));
    }

    #[test]
    fn duplicate_neighborhood_ids_rejected() {
        let text = format!(
            r#"{{"type":"FeatureCollection","features":[
                {{"type":"Feature","properties":{{"id":5,"name":"a"}},"geometry":{{"type":"Polygon","coordinates":[{}]}}}},
                {{"type":"Feature","properties":{{"id":5,"name":"b"}},"geometry":{{"type":"Polygon","coordinates":[{}]}}}}
            ]}}"#,
            square(106.8, -6.2, 0.01),
            square(106.82, -6.2, 0.01)
        );
        assert!(matches!(
            parse_neighborhoods(&text, "t", &proj()),
            Err(IngestError::DuplicateId { id: 5, .. })
        ));
    }

    #[test]
    fn self_intersecting_ring_rejected() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"id":1},"geometry":{"type":"Polygon","coordinates":[[[106.8,-6.2],[106.82,-6.19],[106.82,-6.2],[106.8,-6.17],[106.8,-6.2]]]}}
        ]}"#;
        assert!(matches!(
            parse_neighborhoods(text, "t", &proj()),
            Err(IngestError::Geometry { source: GeometryError::SelfIntersecting { .. }, .. })
        ));
    }

    #[test]
    fn osm_tag_map_lookup() {
        let tags = OsmTagMap::builtin();
        assert_eq!(tags.category_for("amenity", "hospital"), Some("hospital"));
        assert_eq!(tags.category_for("amenity", "bar"), None);
        assert_eq!(tags.default_access("place_of_worship"), Access::Restricted);
        let ont = Ontology::builtin();
        for cat in tags.tags.values() {
            assert!(ont.category(cat).is_ok(), "{cat} missing from the default ontology");
        }
    }
}
