//! Planar geometry substrate.
//!
//! Inputs arrive as WGS84 longitude/latitude and are projected onto a local
//! equirectangular plane (meters east/north of an origin). Everything
//! downstream of ingestion works in that plane.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("coordinate out of range: lon {lon}, lat {lat}")]
    InvalidCoordinate { lon: f64, lat: f64 },
    #[error("ring is not closed (first vertex != last vertex)")]
    OpenRing,
    #[error("ring has {0} vertices, at least 4 are required")]
    TooFewVertices(usize),
    #[error("ring has zero area")]
    ZeroArea,
    #[error("ring is self-intersecting near ({x:.3}, {y:.3})")]
    SelfIntersecting { x: f64, y: f64 },
    #[error("non-finite coordinate")]
    NonFinite,
}

/// A WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self, GeometryError> {
        if !(lon.is_finite() && lat.is_finite())
            || !(-180.0..=180.0).contains(&lon)
            || !(-90.0..=90.0).contains(&lat)
        {
            return Err(GeometryError::InvalidCoordinate { lon, lat });
        }
        Ok(GeoPoint { lon, lat })
    }
}

/// Meters east (`x`) and north (`y`) of a projection origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        PlanarPoint { x, y }
    }

    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        distance(*self, *other)
    }
}

impl fmt::Display for PlanarPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Euclidean distance in meters.
pub fn distance(a: PlanarPoint, b: PlanarPoint) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Local equirectangular projection about a fixed origin.
///
/// `x = R·(λ−λ0)·cos φ0`, `y = R·(φ−φ0)`. Over a city-sized extent the
/// distortion stays well under a tenth of a percent, which is plenty for
/// 100 m rasters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    origin: GeoPoint,
    cos_lat0: f64,
}

impl Projection {
    pub fn new(origin: GeoPoint) -> Self {
        Projection {
            origin,
            cos_lat0: origin.lat.to_radians().cos(),
        }
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn project(&self, p: GeoPoint) -> PlanarPoint {
        PlanarPoint {
            x: EARTH_RADIUS_M * (p.lon - self.origin.lon).to_radians() * self.cos_lat0,
            y: EARTH_RADIUS_M * (p.lat - self.origin.lat).to_radians(),
        }
    }

    pub fn unproject(&self, p: PlanarPoint) -> GeoPoint {
        GeoPoint {
            lon: self.origin.lon + (p.x / (EARTH_RADIUS_M * self.cos_lat0)).to_degrees(),
            lat: self.origin.lat + (p.y / EARTH_RADIUS_M).to_degrees(),
        }
    }
}

/// Project `p` onto the plane tangent at `origin`.
pub fn project(p: GeoPoint, origin: GeoPoint) -> PlanarPoint {
    Projection::new(origin).project(p)
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: PlanarPoint,
    pub max: PlanarPoint,
}

impl BBox {
    fn of(points: &[PlanarPoint]) -> BBox {
        let mut min = PlanarPoint::new(f64::INFINITY, f64::INFINITY);
        let mut max = PlanarPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        BBox { min, max }
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            min: PlanarPoint::new(self.min.x.min(other.min.x), self.min.y.min(other.min.y)),
            max: PlanarPoint::new(self.max.x.max(other.max.x), self.max.y.max(other.max.y)),
        }
    }

    pub fn contains(&self, p: PlanarPoint) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// True when the boxes overlap after growing both by `tol`.
    pub fn intersects(&self, other: &BBox, tol: f64) -> bool {
        self.min.x <= other.max.x + tol
            && other.min.x <= self.max.x + tol
            && self.min.y <= other.max.y + tol
            && other.min.y <= self.max.y + tol
    }
}

/// A closed ring of planar vertices. The last vertex repeats the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Ring {
    vertices: Vec<PlanarPoint>,
}

impl Ring {
    pub fn new(vertices: Vec<PlanarPoint>) -> Result<Self, GeometryError> {
        if vertices.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(GeometryError::NonFinite);
        }
        if vertices.len() < 4 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if vertices.first() != vertices.last() {
            return Err(GeometryError::OpenRing);
        }
        let ring = Ring { vertices };
        if ring.signed_area() == 0.0 {
            return Err(GeometryError::ZeroArea);
        }
        Ok(ring)
    }

    pub fn vertices(&self) -> &[PlanarPoint] {
        &self.vertices
    }

    /// Edges as consecutive vertex pairs.
    pub fn segments(&self) -> impl Iterator<Item = (PlanarPoint, PlanarPoint)> + '_ {
        self.vertices.windows(2).map(|w| (w[0], w[1]))
    }

    /// Shoelace area; positive for counter-clockwise rings.
    pub fn signed_area(&self) -> f64 {
        0.5 * self
            .segments()
            .map(|(a, b)| a.x * b.y - b.x * a.y)
            .sum::<f64>()
    }

    /// Reject rings where two non-adjacent edges touch or cross.
    pub fn check_simple(&self) -> Result<(), GeometryError> {
        let segs: Vec<_> = self.segments().collect();
        let n = segs.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (a, b) = segs[i];
                let (c, d) = segs[j];
                if segment_distance(a, b, c, d) == 0.0 {
                    return Err(GeometryError::SelfIntersecting { x: a.x, y: a.y });
                }
            }
        }
        Ok(())
    }
}

/// A polygon with one exterior ring and zero or more holes.
///
/// Construction validates every ring, so a `Polygon` value is never
/// degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    exterior: Ring,
    holes: Vec<Ring>,
    bbox: BBox,
}

impl Polygon {
    pub fn new(exterior: Vec<PlanarPoint>, holes: Vec<Vec<PlanarPoint>>) -> Result<Self, GeometryError> {
        let exterior = Ring::new(exterior)?;
        let holes = holes.into_iter().map(Ring::new).collect::<Result<Vec<_>, _>>()?;
        let bbox = BBox::of(exterior.vertices());
        Ok(Polygon {
            exterior,
            holes,
            bbox,
        })
    }

    /// Axis-aligned rectangle, convenient for grids of test polygons.
    pub fn rect(min: PlanarPoint, max: PlanarPoint) -> Result<Self, GeometryError> {
        Polygon::new(
            vec![
                min,
                PlanarPoint::new(max.x, min.y),
                max,
                PlanarPoint::new(min.x, max.y),
                min,
            ],
            vec![],
        )
    }

    pub fn exterior(&self) -> &Ring {
        &self.exterior
    }

    pub fn holes(&self) -> &[Ring] {
        &self.holes
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    /// Exterior area minus hole areas.
    pub fn area(&self) -> f64 {
        self.exterior.signed_area().abs() - self.holes.iter().map(|h| h.signed_area().abs()).sum::<f64>()
    }

    /// Area-weighted centroid of the exterior ring.
    pub fn centroid(&self) -> PlanarPoint {
        let v = self.exterior.vertices();
        // Shift to the first vertex to keep the products small.
        let o = v[0];
        let (mut cx, mut cy, mut a2) = (0.0, 0.0, 0.0);
        for w in v.windows(2) {
            let (x0, y0) = (w[0].x - o.x, w[0].y - o.y);
            let (x1, y1) = (w[1].x - o.x, w[1].y - o.y);
            let cross = x0 * y1 - x1 * y0;
            a2 += cross;
            cx += (x0 + x1) * cross;
            cy += (y0 + y1) * cross;
        }
        PlanarPoint::new(o.x + cx / (3.0 * a2), o.y + cy / (3.0 * a2))
    }

    /// Run the self-intersection check on every ring.
    pub fn check_simple(&self) -> Result<(), GeometryError> {
        self.rings().try_for_each(Ring::check_simple)
    }

    /// Even-odd point-in-polygon test. Points in holes are outside; points on
    /// any boundary (exterior or hole) count as inside.
    pub fn contains(&self, p: PlanarPoint) -> bool {
        if !self.bbox.contains(p) {
            return false;
        }
        let mut inside = false;
        for ring in self.rings() {
            for (a, b) in ring.segments() {
                if on_segment(p, a, b) {
                    return true;
                }
                if (a.y > p.y) != (b.y > p.y) {
                    let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                    if p.x < x_cross {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }
}

/// Free-function form of [`Polygon::contains`].
pub fn contains(poly: &Polygon, p: PlanarPoint) -> bool {
    poly.contains(p)
}

fn cross(o: PlanarPoint, a: PlanarPoint, b: PlanarPoint) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(p: PlanarPoint, a: PlanarPoint, b: PlanarPoint) -> bool {
    cross(a, b, p) == 0.0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

/// Distance from `p` to the segment `ab`.
pub fn point_segment_distance(p: PlanarPoint, a: PlanarPoint, b: PlanarPoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return distance(p, a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    distance(p, PlanarPoint::new(a.x + t * dx, a.y + t * dy))
}

/// Minimum distance between segments `ab` and `cd`; zero when they cross.
pub fn segment_distance(a: PlanarPoint, b: PlanarPoint, c: PlanarPoint, d: PlanarPoint) -> f64 {
    let d1 = cross(a, b, c);
    let d2 = cross(a, b, d);
    let d3 = cross(c, d, a);
    let d4 = cross(c, d, b);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_square() -> Polygon {
        Polygon::rect(PlanarPoint::new(0.0, 0.0), PlanarPoint::new(1.0, 1.0)).unwrap()
    }

    #[test]
    fn projection_identity_at_origin() {
        let o = GeoPoint::new(106.8, -6.2).unwrap();
        assert_eq!(project(o, o), PlanarPoint::new(0.0, 0.0));
    }

    #[test]
    fn projection_hand_evaluated_offsets() {
        let o = GeoPoint::new(106.8, -6.2).unwrap();
        // x = R * 0.01° in radians * cos(-6.2°)
        let east = project(GeoPoint::new(106.81, -6.2).unwrap(), o);
        let expected_x = 6_371_008.8 * (0.01f64 * std::f64::consts::PI / 180.0) * (6.2f64 * std::f64::consts::PI / 180.0).cos();
        assert!((east.x - expected_x).abs() < 1e-6);
        assert!((east.x - 1105.45).abs() < 0.01, "{}", east.x);
        assert!(east.y.abs() < 1e-9);

        let north = project(GeoPoint::new(106.8, -6.19).unwrap(), o);
        assert!(north.x.abs() < 1e-9);
        assert!((north.y - 1111.9).abs() < 0.1, "{}", north.y);
    }

    #[test]
    fn geopoint_rejects_out_of_range() {
        assert!(GeoPoint::new(181.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -91.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn contains_interior_exterior_and_hole() {
        let sq = unit_square();
        assert!(sq.contains(PlanarPoint::new(0.5, 0.5)));
        assert!(!sq.contains(PlanarPoint::new(2.0, 2.0)));

        let outer = vec![
            PlanarPoint::new(0.0, 0.0),
            PlanarPoint::new(4.0, 0.0),
            PlanarPoint::new(4.0, 4.0),
            PlanarPoint::new(0.0, 4.0),
            PlanarPoint::new(0.0, 0.0),
        ];
        let hole = vec![
            PlanarPoint::new(1.0, 1.0),
            PlanarPoint::new(3.0, 1.0),
            PlanarPoint::new(3.0, 3.0),
            PlanarPoint::new(1.0, 3.0),
            PlanarPoint::new(1.0, 1.0),
        ];
        let donut = Polygon::new(outer, vec![hole]).unwrap();
        assert!(!donut.contains(PlanarPoint::new(2.0, 2.0)));
        assert!(donut.contains(PlanarPoint::new(0.5, 2.0)));
        assert!((donut.area() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_points_are_inside() {
        let sq = unit_square();
        assert!(sq.contains(PlanarPoint::new(1.0, 0.5)));
        assert!(sq.contains(PlanarPoint::new(0.0, 0.0)));
        assert!(sq.contains(PlanarPoint::new(0.5, 1.0)));
    }

    #[test]
    fn degenerate_polygons_rejected() {
        let open = vec![
            PlanarPoint::new(0.0, 0.0),
            PlanarPoint::new(1.0, 0.0),
            PlanarPoint::new(1.0, 1.0),
            PlanarPoint::new(0.0, 1.0),
        ];
        assert_eq!(Polygon::new(open, vec![]).unwrap_err(), GeometryError::OpenRing);
        let flat = vec![
            PlanarPoint::new(0.0, 0.0),
            PlanarPoint::new(1.0, 0.0),
            PlanarPoint::new(2.0, 0.0),
            PlanarPoint::new(0.0, 0.0),
        ];
        assert_eq!(Polygon::new(flat, vec![]).unwrap_err(), GeometryError::ZeroArea);
        let short = vec![PlanarPoint::new(0.0, 0.0), PlanarPoint::new(1.0, 0.0), PlanarPoint::new(0.0, 0.0)];
        assert_eq!(Polygon::new(short, vec![]).unwrap_err(), GeometryError::TooFewVertices(3));
    }

    #[test]
    fn bowtie_is_not_simple() {
        let bowtie = Polygon::new(
            vec![
                PlanarPoint::new(0.0, 0.0),
                PlanarPoint::new(1.0, 1.0),
                PlanarPoint::new(1.0, 0.0),
                PlanarPoint::new(0.0, 1.0),
                PlanarPoint::new(0.0, 0.0),
            ],
            vec![],
        );
        // Signed area of a symmetric bowtie is zero, so it fails early.
        assert!(bowtie.is_err());

        let lopsided = Polygon::new(
            vec![
                PlanarPoint::new(0.0, 0.0),
                PlanarPoint::new(2.0, 1.0),
                PlanarPoint::new(2.0, 0.0),
                PlanarPoint::new(0.0, 3.0),
                PlanarPoint::new(0.0, 0.0),
            ],
            vec![],
        )
        .unwrap();
        assert!(matches!(lopsided.check_simple(), Err(GeometryError::SelfIntersecting { .. })));
        assert!(unit_square().check_simple().is_ok());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(PlanarPoint::new(0.0, 0.0), PlanarPoint::new(0.0, 0.0)), 0.0);
        assert_eq!(distance(PlanarPoint::new(0.0, 0.0), PlanarPoint::new(3.0, 4.0)), 5.0);
        assert_eq!(distance(PlanarPoint::new(1.0, 1.0), PlanarPoint::new(-2.0, 5.0)), 5.0);
    }

    #[test]
    fn segment_distance_cases() {
        let p = PlanarPoint::new;
        assert_eq!(segment_distance(p(0.0, 0.0), p(2.0, 2.0), p(0.0, 2.0), p(2.0, 0.0)), 0.0);
        assert_eq!(segment_distance(p(0.0, 0.0), p(1.0, 0.0), p(1.0, 0.0), p(1.0, 1.0)), 0.0);
        assert!((segment_distance(p(0.0, 0.0), p(1.0, 0.0), p(0.0, 2.0), p(1.0, 2.0)) - 2.0).abs() < 1e-15);
    }

    fn coord() -> impl Strategy<Value = f64> {
        -1.0e4..1.0e4
    }

    proptest! {
        #[test]
        fn project_round_trip(lon in 106.5..107.1f64, lat in -6.5..-5.9f64) {
            let proj = Projection::new(GeoPoint::new(106.8, -6.2).unwrap());
            let back = proj.unproject(proj.project(GeoPoint { lon, lat }));
            prop_assert!((back.lon - lon).abs() < 1e-6);
            prop_assert!((back.lat - lat).abs() < 1e-6);
        }

        #[test]
        fn distance_is_a_metric(ax in coord(), ay in coord(), bx in coord(), by in coord(), cx in coord(), cy in coord()) {
            let (a, b, c) = (PlanarPoint::new(ax, ay), PlanarPoint::new(bx, by), PlanarPoint::new(cx, cy));
            prop_assert_eq!(distance(a, b), distance(b, a));
            prop_assert!(distance(a, c) <= distance(a, b) + distance(b, c) + 1e-9);
        }

        #[test]
        fn convex_polygon_contains_centroid(
            cx in coord(), cy in coord(), r in 1.0..500.0f64, n in 3usize..12, phase in 0.0..1.0f64
        ) {
            let mut ring: Vec<_> = (0..n)
                .map(|k| {
                    let t = (k as f64 + phase) / n as f64 * std::f64::consts::TAU;
                    PlanarPoint::new(cx + r * t.cos(), cy + r * t.sin())
                })
                .collect();
            ring.push(ring[0]);
            let poly = Polygon::new(ring, vec![]).unwrap();
            prop_assert!(poly.contains(poly.centroid()));
        }
    }
}
