//! Polygons and polylines with attribute maps, read from and written to
//! GeoJSON feature collections.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub type Coord = [f64; 2];

/// A closed ring: first vertex repeated at the end, at least three distinct
/// vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct Ring(Vec<Coord>);

impl Ring {
    pub fn new(points: Vec<Coord>) -> Result<Self> {
        if points.len() < 4 || points.first() != points.last() {
            return Err(Error::DegenerateRing(format!(
                "ring of {} points is not closed",
                points.len()
            )));
        }
        let mut distinct: Vec<Coord> = Vec::new();
        for p in &points[..points.len() - 1] {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::DegenerateRing(format!("non-finite vertex {p:?}")));
            }
            if !distinct.contains(p) {
                distinct.push(*p);
                if distinct.len() == 3 {
                    break;
                }
            }
        }
        if distinct.len() < 3 {
            return Err(Error::DegenerateRing(format!(
                "ring has only {} distinct vertices",
                distinct.len()
            )));
        }
        Ok(Ring(points))
    }

    /// Closes an open vertex list before validating it.
    pub fn closed(mut points: Vec<Coord>) -> Result<Self> {
        if let Some(&first) = points.first() {
            if points.last() != Some(&first) {
                points.push(first);
            }
        }
        Ring::new(points)
    }

    /// Axis-aligned rectangle, counter-clockwise.
    pub fn rect(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        Ring::new(vec![
            [min_x, min_y],
            [max_x, min_y],
            [max_x, max_y],
            [min_x, max_y],
            [min_x, min_y],
        ])
    }

    pub fn points(&self) -> &[Coord] {
        &self.0
    }

    /// Edges as consecutive vertex pairs.
    pub fn edges(&self) -> impl Iterator<Item = (Coord, Coord)> + '_ {
        self.0.windows(2).map(|w| (w[0], w[1]))
    }

    /// Shoelace area, positive for counter-clockwise rings.
    pub fn signed_area(&self) -> f64 {
        self.edges().map(|(a, b)| a[0] * b[1] - b[0] * a[1]).sum::<f64>() / 2.0
    }

    /// Area centroid, falling back to the vertex mean for zero-area rings.
    pub fn centroid(&self) -> Coord {
        let a = self.signed_area();
        if a.abs() < f64::EPSILON {
            let n = (self.0.len() - 1) as f64;
            let (sx, sy) = self.0[..self.0.len() - 1]
                .iter()
                .fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
            return [sx / n, sy / n];
        }
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let cross = p[0] * q[1] - q[0] * p[1];
            cx += (p[0] + q[0]) * cross;
            cy += (p[1] + q[1]) * cross;
        }
        [cx / (6.0 * a), cy / (6.0 * a)]
    }

    pub fn bbox(&self) -> [f64; 4] {
        bbox(self.0.iter())
    }
}

pub(crate) fn bbox<'a>(points: impl Iterator<Item = &'a Coord>) -> [f64; 4] {
    points.fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
    )
}

/// Rings filled by the even-odd rule; the first ring is the outline.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    pub rings: Vec<Ring>,
}

impl Polygon {
    pub fn new(rings: Vec<Ring>) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::DegenerateRing("polygon without rings".into()));
        }
        Ok(Polygon { rings })
    }

    pub fn outline(&self) -> &Ring {
        &self.rings[0]
    }

    /// Even-odd area: outline minus holes.
    pub fn area(&self) -> f64 {
        let outer = self.rings[0].signed_area().abs();
        outer - self.rings[1..].iter().map(|r| r.signed_area().abs()).sum::<f64>()
    }

    pub fn bbox(&self) -> [f64; 4] {
        bbox(self.rings.iter().flat_map(|r| r.points()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    Polygon(Polygon),
    MultiPolygon(Vec<Polygon>),
    LineString(Vec<Coord>),
    MultiLineString(Vec<Vec<Coord>>),
}

impl Geometry {
    /// Polygon parts; empty for line geometries.
    pub fn polygons(&self) -> &[Polygon] {
        match self {
            Geometry::Polygon(p) => std::slice::from_ref(p),
            Geometry::MultiPolygon(ps) => ps,
            _ => &[],
        }
    }

    /// Polylines; empty for polygon geometries.
    pub fn lines(&self) -> Vec<&[Coord]> {
        match self {
            Geometry::LineString(l) => vec![l.as_slice()],
            Geometry::MultiLineString(ls) => ls.iter().map(|l| l.as_slice()).collect(),
            _ => Vec::new(),
        }
    }

    pub fn bbox(&self) -> [f64; 4] {
        match self {
            Geometry::Polygon(p) => p.bbox(),
            Geometry::MultiPolygon(ps) => bbox(ps.iter().flat_map(|p| &p.rings).flat_map(|r| r.points())),
            Geometry::LineString(l) => bbox(l.iter()),
            Geometry::MultiLineString(ls) => bbox(ls.iter().flatten()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub geometry: Geometry,
    pub properties: Map<String, Value>,
}

impl Feature {
    pub fn new(geometry: Geometry) -> Self {
        Feature {
            geometry,
            properties: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.properties.insert(key.to_string(), value.into());
        self
    }

    /// Label class code from the `class` property: an integer 1..=3 or one
    /// of the class names.
    pub fn class(&self) -> Option<u8> {
        match self.properties.get("class")? {
            Value::Number(n) => n.as_u64().filter(|c| (1..=3).contains(c)).map(|c| c as u8),
            Value::String(s) => match s.as_str() {
                "irrigated" => Some(1),
                "unirrigated" => Some(2),
                "uncultivated" => Some(3),
                _ => s.parse().ok().filter(|c| (1..=3).contains(c)),
            },
            _ => None,
        }
    }

    /// County identifier from the `county` property (string or number).
    pub fn county(&self) -> Option<String> {
        match self.properties.get("county")? {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VectorLayer {
    pub features: Vec<Feature>,
}

impl VectorLayer {
    pub fn new(features: Vec<Feature>) -> Self {
        VectorLayer { features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn push(&mut self, feature: Feature) {
        self.features.push(feature);
    }

    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .features
            .iter()
            .map(|f| {
                json!({
                    "type": "Feature",
                    "geometry": geometry_json(&f.geometry),
                    "properties": Value::Object(f.properties.clone()),
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }

    /// Accepts a FeatureCollection, a single Feature, a bare geometry or a
    /// GeometryCollection.
    pub fn from_geojson(value: &Value) -> Result<Self> {
        let mut layer = VectorLayer::default();
        collect(value, &Map::new(), &mut layer)?;
        Ok(layer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_geojson())?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            detail: e.to_string(),
        })?;
        VectorLayer::from_geojson(&value).map_err(|e| match e {
            Error::Invalid(detail) => Error::Parse {
                path: path.into(),
                detail,
            },
            other => other,
        })
    }
}

fn coords_json(points: &[Coord]) -> Value {
    Value::Array(points.iter().map(|p| json!([p[0], p[1]])).collect())
}

fn polygon_json(p: &Polygon) -> Value {
    Value::Array(p.rings.iter().map(|r| coords_json(r.points())).collect())
}

fn geometry_json(g: &Geometry) -> Value {
    match g {
        Geometry::Polygon(p) => json!({ "type": "Polygon", "coordinates": polygon_json(p) }),
        Geometry::MultiPolygon(ps) => json!({
            "type": "MultiPolygon",
            "coordinates": ps.iter().map(polygon_json).collect::<Vec<_>>(),
        }),
        Geometry::LineString(l) => json!({ "type": "LineString", "coordinates": coords_json(l) }),
        Geometry::MultiLineString(ls) => json!({
            "type": "MultiLineString",
            "coordinates": ls.iter().map(|l| coords_json(l)).collect::<Vec<_>>(),
        }),
    }
}

fn collect(value: &Value, props: &Map<String, Value>, out: &mut VectorLayer) -> Result<()> {
    let kind = value
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Invalid("GeoJSON object without a type".into()))?;
    match kind {
        "FeatureCollection" => {
            for f in array(value, "features")? {
                collect(f, props, out)?;
            }
        }
        "Feature" => {
            let props = match value.get("properties") {
                Some(Value::Object(m)) => m.clone(),
                _ => Map::new(),
            };
            match value.get("geometry") {
                Some(Value::Null) | None => {}
                Some(g) => collect(g, &props, out)?,
            }
        }
        "GeometryCollection" => {
            for g in array(value, "geometries")? {
                collect(g, props, out)?;
            }
        }
        _ => {
            let coords = value
                .get("coordinates")
                .ok_or_else(|| Error::Invalid(format!("{kind} without coordinates")))?;
            let geometry = match kind {
                "Polygon" => Geometry::Polygon(parse_polygon(coords)?),
                "MultiPolygon" => {
                    Geometry::MultiPolygon(as_array(coords)?.iter().map(parse_polygon).collect::<Result<_>>()?)
                }
                "LineString" => Geometry::LineString(parse_line(coords)?),
                "MultiLineString" => {
                    Geometry::MultiLineString(as_array(coords)?.iter().map(parse_line).collect::<Result<_>>()?)
                }
                other => return Err(Error::Invalid(format!("unsupported geometry type {other}"))),
            };
            out.push(Feature {
                geometry,
                properties: props.clone(),
            });
        }
    }
    Ok(())
}

fn array<'a>(value: &'a Value, key: &str) -> Result<&'a Vec<Value>> {
    value
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Invalid(format!("missing array `{key}`")))
}

fn as_array(value: &Value) -> Result<&Vec<Value>> {
    value
        .as_array()
        .ok_or_else(|| Error::Invalid("coordinates must be arrays".into()))
}

fn parse_point(value: &Value) -> Result<Coord> {
    match as_array(value)?.as_slice() {
        [x, y, ..] => match (x.as_f64(), y.as_f64()) {
            (Some(x), Some(y)) => Ok([x, y]),
            _ => Err(Error::Invalid(format!("non-numeric position {value}"))),
        },
        _ => Err(Error::Invalid(format!("position needs two numbers, got {value}"))),
    }
}

fn parse_line(value: &Value) -> Result<Vec<Coord>> {
    let line: Vec<Coord> = as_array(value)?.iter().map(parse_point).collect::<Result<_>>()?;
    if line.len() < 2 {
        return Err(Error::Invalid("line string needs at least two positions".into()));
    }
    Ok(line)
}

fn parse_polygon(value: &Value) -> Result<Polygon> {
    let rings = as_array(value)?
        .iter()
        .map(|r| Ring::new(as_array(r)?.iter().map(parse_point).collect::<Result<_>>()?))
        .collect::<Result<_>>()?;
    Polygon::new(rings)
}
