//! PLY reading and writing (ascii and binary little-endian).
//!
//! The document layer ([`PlyDocument`]) handles arbitrary elements and scalar/list
//! properties; [`read_ply`] / [`write_cloud_ply`] / [`write_mesh_ply`] map it onto
//! clouds and meshes. Part labels travel as the uchar property `label`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use super::cloud::OrientedPointCloud;
use super::mesh::TriangleMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::I8 => "char",
            Self::U8 => "uchar",
            Self::I16 => "short",
            Self::U16 => "ushort",
            Self::I32 => "int",
            Self::U32 => "uint",
            Self::F32 => "float",
            Self::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn encode(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Self::I8 => out.push(v as i8 as u8),
            Self::U8 => out.push(v as u8),
            Self::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            Self::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            Self::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Self::U32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
            Self::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Self::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }

    fn format_ascii(self, v: f64) -> String {
        match self {
            // shortest repr that round-trips the f32
            Self::F32 => format!("{}", v as f32),
            Self::F64 => format!("{v}"),
            _ => format!("{}", v as i64),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Self::F32 | Self::F64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Scalar(ScalarType, Vec<f64>),
    List {
        count: ScalarType,
        item: ScalarType,
        rows: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyElement {
    pub name: String,
    pub count: usize,
    pub properties: Vec<(String, Column)>,
}

impl PlyElement {
    pub fn new(name: impl Into<String>, count: usize) -> Self {
        Self {
            name: name.into(),
            count,
            properties: Vec::new(),
        }
    }

    pub fn scalar(mut self, name: &str, ty: ScalarType, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.count);
        self.properties.push((name.to_string(), Column::Scalar(ty, values)));
        self
    }

    pub fn list(mut self, name: &str, count: ScalarType, item: ScalarType, rows: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(rows.len(), self.count);
        self.properties
            .push((name.to_string(), Column::List { count, item, rows }));
        self
    }

    pub fn get_scalar(&self, name: &str) -> Option<&[f64]> {
        self.properties.iter().find_map(|(n, c)| match c {
            Column::Scalar(_, v) if n == name => Some(v.as_slice()),
            _ => None,
        })
    }

    pub fn get_list(&self, name: &str) -> Option<&[Vec<f64>]> {
        self.properties.iter().find_map(|(n, c)| match c {
            Column::List { rows, .. } if n == name => Some(rows.as_slice()),
            _ => None,
        })
    }

    pub fn scalar_type(&self, name: &str) -> Option<ScalarType> {
        self.properties.iter().find_map(|(n, c)| match c {
            Column::Scalar(t, _) if n == name => Some(*t),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyDocument {
    pub format: PlyFormat,
    pub comments: Vec<String>,
    pub elements: Vec<PlyElement>,
}

impl PlyDocument {
    pub fn element(&self, name: &str) -> Option<&PlyElement> {
        self.elements.iter().find(|e| e.name == name)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&bytes)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let (header, body_start) = parse_header(bytes)?;
        let mut doc = PlyDocument {
            format: header.format,
            comments: header.comments,
            elements: Vec::new(),
        };
        match header.format {
            PlyFormat::Ascii => parse_ascii_body(bytes, body_start, header.line_count, &header.elements, &mut doc)?,
            PlyFormat::BinaryLittleEndian => parse_binary_body(bytes, body_start, &header.elements, &mut doc)?,
        }
        Ok(doc)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"ply\n");
        let fmt = match self.format {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary_little_endian",
        };
        out.extend_from_slice(format!("format {fmt} 1.0\n").as_bytes());
        for c in &self.comments {
            out.extend_from_slice(format!("comment {c}\n").as_bytes());
        }
        for e in &self.elements {
            out.extend_from_slice(format!("element {} {}\n", e.name, e.count).as_bytes());
            for (name, col) in &e.properties {
                let line = match col {
                    Column::Scalar(t, _) => format!("property {} {name}\n", t.name()),
                    Column::List { count, item, .. } => {
                        format!("property list {} {} {name}\n", count.name(), item.name())
                    }
                };
                out.extend_from_slice(line.as_bytes());
            }
        }
        out.extend_from_slice(b"end_header\n");
        for e in &self.elements {
            for row in 0..e.count {
                match self.format {
                    PlyFormat::BinaryLittleEndian => {
                        for (_, col) in &e.properties {
                            match col {
                                Column::Scalar(t, v) => t.encode(v[row], &mut out),
                                Column::List { count, item, rows } => {
                                    count.encode(rows[row].len() as f64, &mut out);
                                    for &x in &rows[row] {
                                        item.encode(x, &mut out);
                                    }
                                }
                            }
                        }
                    }
                    PlyFormat::Ascii => {
                        let mut fields: Vec<String> = Vec::new();
                        for (_, col) in &e.properties {
                            match col {
                                Column::Scalar(t, v) => fields.push(t.format_ascii(v[row])),
                                Column::List { item, rows, .. } => {
                                    fields.push(rows[row].len().to_string());
                                    fields.extend(rows[row].iter().map(|&x| item.format_ascii(x)));
                                }
                            }
                        }
                        out.extend_from_slice(fields.join(" ").as_bytes());
                        out.push(b'\n');
                    }
                }
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::file(path, e))?;
        Ok(())
    }
}

struct ElementDef {
    name: String,
    count: usize,
    props: Vec<(String, PropDef)>,
}

#[derive(Clone, Copy)]
enum PropDef {
    Scalar(ScalarType),
    List(ScalarType, ScalarType),
}

struct Header {
    format: PlyFormat,
    comments: Vec<String>,
    elements: Vec<ElementDef>,
    line_count: usize,
}

fn parse_header(bytes: &[u8]) -> Result<(Header, usize)> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut comments = Vec::new();
    let mut elements: Vec<ElementDef> = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(format!("byte {pos}"), "unterminated header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| Error::parse(format!("line {}", line_no + 1), "header is not utf-8"))?
            .trim_end_matches('\r');
        line_no += 1;
        pos += end + 1;
        let loc = format!("line {line_no}");
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("ply") if line_no == 1 => {}
            _ if line_no == 1 => return Err(Error::parse(loc, "missing 'ply' magic")),
            Some("format") => {
                format = Some(match tok.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    other => return Err(Error::parse(loc, format!("unsupported format {other:?}"))),
                });
            }
            Some("comment") | Some("obj_info") => {
                comments.push(line.split_once(' ').map(|x| x.1).unwrap_or("").to_string());
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| Error::parse(&loc, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(&loc, "element without valid count"))?;
                elements.push(ElementDef {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(&loc, "property before any element"))?;
                let words: Vec<&str> = tok.collect();
                let def = match words.as_slice() {
                    ["list", c, i, name] => {
                        let c = ScalarType::parse(c).ok_or_else(|| Error::parse(&loc, "bad list count type"))?;
                        let i = ScalarType::parse(i).ok_or_else(|| Error::parse(&loc, "bad list item type"))?;
                        (name.to_string(), PropDef::List(c, i))
                    }
                    [t, name] => {
                        let t = ScalarType::parse(t)
                            .ok_or_else(|| Error::parse(&loc, format!("unknown type {t}")))?;
                        (name.to_string(), PropDef::Scalar(t))
                    }
                    _ => return Err(Error::parse(loc, "malformed property line")),
                };
                el.props.push(def);
            }
            Some("end_header") => break,
            Some(other) => return Err(Error::parse(loc, format!("unexpected header keyword {other}"))),
            None => {}
        }
    }
    let format = format.ok_or_else(|| Error::parse("header", "missing format line"))?;
    Ok((
        Header {
            format,
            comments,
            elements,
            line_count: line_no,
        },
        pos,
    ))
}

fn empty_columns(def: &ElementDef) -> Vec<(String, Column)> {
    def.props
        .iter()
        .map(|(n, p)| {
            let col = match *p {
                PropDef::Scalar(t) => Column::Scalar(t, Vec::with_capacity(def.count)),
                PropDef::List(c, i) => Column::List {
                    count: c,
                    item: i,
                    rows: Vec::with_capacity(def.count),
                },
            };
            (n.clone(), col)
        })
        .collect()
}

fn parse_ascii_body(
    bytes: &[u8],
    start: usize,
    header_lines: usize,
    defs: &[ElementDef],
    doc: &mut PlyDocument,
) -> Result<()> {
    let text = std::str::from_utf8(&bytes[start..]).map_err(|_| Error::parse("body", "ascii body is not utf-8"))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + header_lines + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    for def in defs {
        let mut props = empty_columns(def);
        for row in 0..def.count {
            let (line_no, line) = lines.next().ok_or_else(|| {
                Error::parse(
                    format!("line {}", header_lines + 1 + row),
                    format!("element '{}' declares {} rows, found {row}", def.name, def.count),
                )
            })?;
            let loc = format!("line {line_no}");
            let mut tok = line.split_whitespace();
            let mut next_num = |what: &str| -> Result<f64> {
                tok.next()
                    .ok_or_else(|| Error::parse(&loc, format!("missing value for {what}")))?
                    .parse::<f64>()
                    .map_err(|_| Error::parse(&loc, format!("invalid number for {what}")))
            };
            for (name, col) in props.iter_mut() {
                match col {
                    Column::Scalar(_, v) => v.push(next_num(name)?),
                    Column::List { rows, .. } => {
                        let n = next_num(name)? as usize;
                        let items = (0..n).map(|_| next_num(name)).collect::<Result<Vec<_>>>()?;
                        rows.push(items);
                    }
                }
            }
        }
        doc.elements.push(PlyElement {
            name: def.name.clone(),
            count: def.count,
            properties: props,
        });
    }
    Ok(())
}

fn parse_binary_body(bytes: &[u8], start: usize, defs: &[ElementDef], doc: &mut PlyDocument) -> Result<()> {
    let mut pos = start;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(Error::parse(format!("byte {pos}"), format!("unexpected end of data reading {what}")));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    for def in defs {
        let mut props = empty_columns(def);
        for _ in 0..def.count {
            for (name, col) in props.iter_mut() {
                match col {
                    Column::Scalar(t, v) => v.push(t.decode(take(t.size(), name)?)),
                    Column::List { count, item, rows } => {
                        let n = count.decode(take(count.size(), name)?) as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(item.decode(take(item.size(), name)?));
                        }
                        rows.push(items);
                    }
                }
            }
        }
        doc.elements.push(PlyElement {
            name: def.name.clone(),
            count: def.count,
            properties: props,
        });
    }
    Ok(())
}

/// Contents of a PLY file interpreted as geometry.
#[derive(Debug, Clone, PartialEq)]
pub enum PlyContent {
    Cloud(OrientedPointCloud),
    Mesh(TriangleMesh),
}

/// Reads a PLY as a mesh (when it has faces) or an oriented cloud.
pub fn read_ply(path: impl AsRef<Path>) -> Result<PlyContent> {
    let doc = PlyDocument::read(path)?;
    content_from_document(&doc)
}

pub fn content_from_document(doc: &PlyDocument) -> Result<PlyContent> {
    let vertex = doc
        .element("vertex")
        .ok_or_else(|| Error::parse("header", "no vertex element"))?;
    let positions = vec3_column(vertex, ["x", "y", "z"])?
        .ok_or_else(|| Error::parse("header", "vertex element lacks x/y/z"))?;
    let colors = read_colors(vertex);
    if let Some(face) = doc.element("face").filter(|f| f.count > 0) {
        let lists = face
            .get_list("vertex_indices")
            .or_else(|| face.get_list("vertex_index"))
            .ok_or_else(|| Error::parse("header", "face element lacks vertex_indices"))?;
        let mut faces = Vec::with_capacity(lists.len());
        let mut labels = Vec::with_capacity(lists.len());
        let face_labels = face.get_scalar("label");
        for (fi, poly) in lists.iter().enumerate() {
            if poly.len() < 3 {
                return Err(Error::parse(format!("face {fi}"), "polygon with fewer than 3 vertices"));
            }
            for k in 1..poly.len() - 1 {
                faces.push([poly[0] as u32, poly[k] as u32, poly[k + 1] as u32]);
                if let Some(l) = face_labels {
                    labels.push(l[fi] as u8);
                }
            }
        }
        let mut mesh = TriangleMesh::new(positions, faces)?;
        if let Some(c) = colors {
            mesh = mesh.with_vertex_colors(c)?;
        }
        if face_labels.is_some() {
            mesh = mesh.with_face_labels(labels)?;
        }
        return Ok(PlyContent::Mesh(mesh));
    }
    let normals = vec3_column(vertex, ["nx", "ny", "nz"])?.ok_or(Error::MissingNormals)?;
    let mut cloud = OrientedPointCloud::new(positions, normals)?;
    if let Some(c) = colors {
        cloud = cloud.with_colors(c)?;
    }
    if let Some(l) = vertex.get_scalar("label") {
        cloud = cloud.with_labels(l.iter().map(|&x| x as u8).collect())?;
    }
    Ok(PlyContent::Cloud(cloud))
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<OrientedPointCloud> {
    match read_ply(path)? {
        PlyContent::Cloud(c) => Ok(c),
        PlyContent::Mesh(_) => Err(Error::parse("file", "expected a point cloud, found a mesh")),
    }
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    match read_ply(path)? {
        PlyContent::Mesh(m) => Ok(m),
        PlyContent::Cloud(_) => Err(Error::parse("file", "expected a mesh, found a point cloud")),
    }
}

fn vec3_column(el: &PlyElement, names: [&str; 3]) -> Result<Option<Vec<Vector3<f32>>>> {
    let cols: Vec<Option<&[f64]>> = names.iter().map(|n| el.get_scalar(n)).collect();
    match (cols[0], cols[1], cols[2]) {
        (Some(x), Some(y), Some(z)) => Ok(Some(
            (0..el.count)
                .map(|i| Vector3::new(x[i] as f32, y[i] as f32, z[i] as f32))
                .collect(),
        )),
        (None, None, None) => Ok(None),
        _ => Err(Error::parse("header", format!("incomplete {names:?} properties"))),
    }
}

fn read_colors(el: &PlyElement) -> Option<Vec<[f32; 3]>> {
    let (r, g, b) = (el.get_scalar("red")?, el.get_scalar("green")?, el.get_scalar("blue")?);
    let scale = if el.scalar_type("red")?.is_integer() { 1.0 / 255.0 } else { 1.0 };
    Some(
        (0..el.count)
            .map(|i| [(r[i] * scale) as f32, (g[i] * scale) as f32, (b[i] * scale) as f32])
            .collect(),
    )
}

fn color_props(el: PlyElement, colors: &[[f32; 3]]) -> PlyElement {
    let chan = |k: usize| colors.iter().map(|c| (c[k].clamp(0.0, 1.0) * 255.0).round() as f64).collect();
    el.scalar("red", ScalarType::U8, chan(0))
        .scalar("green", ScalarType::U8, chan(1))
        .scalar("blue", ScalarType::U8, chan(2))
}

fn vec3_props(el: PlyElement, names: [&str; 3], v: &[Vector3<f32>]) -> PlyElement {
    let col = |k: usize| v.iter().map(|p| p[k] as f64).collect();
    el.scalar(names[0], ScalarType::F32, col(0))
        .scalar(names[1], ScalarType::F32, col(1))
        .scalar(names[2], ScalarType::F32, col(2))
}

pub fn cloud_document(cloud: &OrientedPointCloud, format: PlyFormat) -> PlyDocument {
    let mut v = PlyElement::new("vertex", cloud.len());
    v = vec3_props(v, ["x", "y", "z"], cloud.positions());
    v = vec3_props(v, ["nx", "ny", "nz"], cloud.normals());
    if let Some(c) = cloud.colors() {
        v = color_props(v, c);
    }
    if let Some(l) = cloud.labels() {
        v = v.scalar("label", ScalarType::U8, l.iter().map(|&x| x as f64).collect());
    }
    PlyDocument {
        format,
        comments: vec!["oriented point cloud".into()],
        elements: vec![v],
    }
}

pub fn mesh_document(mesh: &TriangleMesh, format: PlyFormat) -> PlyDocument {
    let mut v = vec3_props(PlyElement::new("vertex", mesh.vertices.len()), ["x", "y", "z"], &mesh.vertices);
    if let Some(c) = &mesh.vertex_colors {
        v = color_props(v, c);
    }
    let mut f = PlyElement::new("face", mesh.faces.len()).list(
        "vertex_indices",
        ScalarType::U8,
        ScalarType::U32,
        mesh.faces.iter().map(|f| f.iter().map(|&i| i as f64).collect()).collect(),
    );
    if let Some(l) = &mesh.face_labels {
        f = f.scalar("label", ScalarType::U8, l.iter().map(|&x| x as f64).collect());
    }
    PlyDocument {
        format,
        comments: vec!["triangle mesh".into()],
        elements: vec![v, f],
    }
}

pub fn write_cloud_ply(cloud: &OrientedPointCloud, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    cloud_document(cloud, format).write(path)
}

pub fn write_mesh_ply(mesh: &TriangleMesh, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    mesh_document(mesh, format).write(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_points() -> OrientedPointCloud {
        OrientedPointCloud::new(
            vec![
                Vector3::new(0.1, -2.5, 3.25),
                Vector3::new(1e-7, 4.0, -0.3),
                Vector3::new(7.0, 8.5, 9.125),
            ],
            vec![Vector3::x(), Vector3::new(0.6, 0.8, 0.0), Vector3::new(1.0, 2.0, 2.0)],
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let c = three_points().with_labels(vec![0, 3, 7]).unwrap();
        let back = content_from_document(&PlyDocument::parse(&cloud_document(&c, PlyFormat::BinaryLittleEndian).to_bytes()).unwrap()).unwrap();
        assert_eq!(back, PlyContent::Cloud(c));
    }

    #[test]
    fn ascii_round_trip_is_exact_for_f32() {
        let c = three_points();
        let back = content_from_document(&PlyDocument::parse(&cloud_document(&c, PlyFormat::Ascii).to_bytes()).unwrap()).unwrap();
        assert_eq!(back, PlyContent::Cloud(c));
    }

    #[test]
    fn short_ascii_body_is_a_parse_error() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        match PlyDocument::parse(text.as_bytes()) {
            Err(Error::Parse { location, .. }) => assert!(location.starts_with("line")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_binary_reports_byte_offset() {
        let bytes = cloud_document(&three_points(), PlyFormat::BinaryLittleEndian).to_bytes();
        match PlyDocument::parse(&bytes[..bytes.len() - 5]) {
            Err(Error::Parse { location, .. }) => assert!(location.starts_with("byte")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn cloud_without_normals_is_reported() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        let doc = PlyDocument::parse(text.as_bytes()).unwrap();
        assert!(matches!(content_from_document(&doc), Err(Error::MissingNormals)));
    }

    #[test]
    fn mesh_labels_survive_ply() {
        let mesh = crate::geometry::shapes::icosphere(1.0, 0);
        let labels: Vec<u8> = (0..mesh.faces.len()).map(|i| (i % 8) as u8).collect();
        let mesh = mesh.with_face_labels(labels).unwrap();
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let back = content_from_document(&PlyDocument::parse(&mesh_document(&mesh, fmt).to_bytes()).unwrap()).unwrap();
            assert_eq!(back, PlyContent::Mesh(mesh.clone()));
        }
    }
}
