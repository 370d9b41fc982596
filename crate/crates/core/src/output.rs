//! Tabular and vector outputs: `lisa.csv`, `lisa.geojson` and the
//! high/low cluster report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::geo::{Polygon, Projection};
use crate::ingest::Neighborhood;
use crate::stats::Quadrant;

pub const LISA_COLUMNS: [&str; 8] = ["id", "name", "value", "z", "lag", "local_i", "p_value", "quadrant"];

/// Quote a CSV field when it contains a delimiter, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row of `lisa.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LisaRow {
    pub id: i64,
    pub name: String,
    pub value: f64,
    pub z: f64,
    pub lag: f64,
    pub local_i: f64,
    pub p_value: f64,
    #[serde(with = "quadrant_str")]
    pub quadrant: Quadrant,
}

mod quadrant_str {
    use super::Quadrant;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &Quadrant, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(q.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Quadrant, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn lisa_csv(rows: &[LisaRow]) -> String {
    let mut out = LISA_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.id,
            csv_field(&r.name),
            r.value,
            r.z,
            r.lag,
            r.local_i,
            r.p_value,
            r.quadrant
        );
    }
    out
}

pub fn parse_lisa_csv(text: &str) -> Result<Vec<LisaRow>, csv::Error> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader.deserialize().collect()
}

fn ring_coords(points: &[crate::geo::PlanarPoint], projection: &Projection) -> Value {
    Value::Array(
        points
            .iter()
            .map(|p| {
                let g = projection.unproject(*p);
                json!([g.lon, g.lat])
            })
            .collect(),
    )
}

fn polygon_coords(poly: &Polygon, projection: &Projection) -> Value {
    Value::Array(poly.rings().map(|r| ring_coords(r.vertices(), projection)).collect())
}

/// Neighborhood polygons (back in lon/lat) with the LISA columns attached.
/// Rows are matched to neighborhoods by id; neighborhoods without a row are
/// omitted.
pub fn lisa_geojson(rows: &[LisaRow], hoods: &[Neighborhood], projection: &Projection) -> String {
    let features: Vec<Value> = rows
        .iter()
        .filter_map(|row| {
            let hood = hoods.iter().find(|h| h.id == row.id)?;
            let geometry = if hood.parts.len() == 1 {
                json!({"type": "Polygon", "coordinates": polygon_coords(&hood.parts[0], projection)})
            } else {
                let parts: Vec<Value> = hood.parts.iter().map(|p| polygon_coords(p, projection)).collect();
                json!({"type": "MultiPolygon", "coordinates": parts})
            };
            Some(json!({
                "type": "Feature",
                "geometry": geometry,
                "properties": {
                    "id": row.id,
                    "name": row.name,
                    "value": row.value,
                    "z": row.z,
                    "lag": row.lag,
                    "local_i": row.local_i,
                    "p_value": row.p_value,
                    "quadrant": row.quadrant.as_str(),
                }
            }))
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&json!({"type": "FeatureCollection", "features": features}))
        .expect("GeoJSON values serialize");
    text.push('\n');
    text
}

/// Rows that enter the report: HH or LL in `lisa.csv` with `p ≤ alpha`.
pub fn report_rows(rows: &[LisaRow], alpha: f64) -> (Vec<&LisaRow>, Vec<&LisaRow>) {
    let pick = |q: Quadrant| -> Vec<&LisaRow> {
        let mut v: Vec<&LisaRow> = rows.iter().filter(|r| r.quadrant == q && r.p_value <= alpha).collect();
        v.sort_by_key(|r| r.id);
        v
    };
    (pick(Quadrant::HH), pick(Quadrant::LL))
}

fn report_cell(r: Option<&&LisaRow>) -> String {
    match r {
        Some(r) => {
            let name = r.name.replace('|', "\\|");
            format!("{}: {} (p = {})", r.id, name, r.p_value)
        }
        None => String::new(),
    }
}

/// Two-column markdown table of high-high ("stable") and low-low ("feral")
/// neighborhoods significant at `alpha`.
pub fn report_md(rows: &[LisaRow], alpha: f64, n_perm: usize) -> String {
    let (high, low) = report_rows(rows, alpha);
    let mut out = String::new();
    let _ = writeln!(out, "# High and low relative social capital neighborhoods");
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Local Moran's I clusters with p-value ≤ {alpha} ({n_perm} conditional permutations)."
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "| Stable (High-High) Neighborhood | Feral (Low-Low) Neighborhood |");
    let _ = writeln!(out, "|---|---|");
    for i in 0..high.len().max(low.len()) {
        let _ = writeln!(out, "| {} | {} |", report_cell(high.get(i)), report_cell(low.get(i)));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "High-High: {}. Low-Low: {}.", high.len(), low.len());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: i64, name: &str, p: f64, q: Quadrant) -> LisaRow {
        LisaRow {
            id,
            name: name.into(),
            value: 1.5,
            z: 0.25,
            lag: -0.125,
            local_i: 0.1,
            p_value: p,
            quadrant: q,
        }
    }

    #[test]
    fn csv_round_trip_with_awkward_names() {
        let rows = vec![
            row(46, "Cempaka Baru", 0.001, Quadrant::HH),
            row(1, "Manggarai, \"Selatan\"", 0.001, Quadrant::LL),
            row(7, "Isle", 1.0, Quadrant::Isolate),
        ];
        let text = lisa_csv(&rows);
        assert!(text.starts_with("id,name,value,z,lag,local_i,p_value,quadrant\n"));
        assert_eq!(parse_lisa_csv(&text).unwrap(), rows);
    }

    #[test]
    fn report_layout() {
        let rows = vec![
            row(63, "Duri Pulo", 0.001, Quadrant::HH),
            row(46, "Cempaka Baru", 0.001, Quadrant::HH),
            row(1, "Manggarai Selatan", 0.001, Quadrant::LL),
            row(9, "Loose", 0.02, Quadrant::HH),
            row(10, "Outlier", 0.001, Quadrant::HL),
        ];
        let md = report_md(&rows, 0.001, 999);
        assert!(md.contains("| Stable (High-High) Neighborhood | Feral (Low-Low) Neighborhood |"));
        assert!(md.contains("| 46: Cempaka Baru (p = 0.001) | 1: Manggarai Selatan (p = 0.001) |\n"));
        assert!(md.contains("| 63: Duri Pulo (p = 0.001) |  |\n"));
        assert!(!md.contains("Loose"));
        assert!(!md.contains("Outlier"));
    }
}
