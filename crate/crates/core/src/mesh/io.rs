//! PLY (ASCII and binary) and OBJ triangle-mesh reading and writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SurfaceMesh;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Ply,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(MeshFormat::Ply),
            "obj" => Some(MeshFormat::Obj),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            MeshFormat::Ply => "ply",
            MeshFormat::Obj => "obj",
        }
    }
}

/// Reads a triangle mesh. Vertex order is preserved as stored; the subject id defaults to
/// the file stem.
pub fn load_mesh<T: Scalar>(path: &Path, format: MeshFormat) -> Result<SurfaceMesh<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (vertices, faces) = match format {
        MeshFormat::Ply => parse_ply(&bytes).map_err(|m| Error::parse(path, m))?,
        MeshFormat::Obj => parse_obj(&bytes).map_err(|m| Error::parse(path, m))?,
    };
    let count = vertices.len();
    let mut tri = Vec::with_capacity(faces.len());
    for (f, face) in faces.into_iter().enumerate() {
        if face.len() != 3 {
            return Err(Error::NonTriangular { face: f, arity: face.len() });
        }
        let mut idx = [0usize; 3];
        for (k, &i) in face.iter().enumerate() {
            if i < 0 || i as usize >= count {
                return Err(Error::IndexOutOfRange { face: f, index: i, count });
            }
            idx[k] = i as usize;
        }
        tri.push(idx);
    }
    let verts = vertices.into_iter().map(|v| [T::lit(v[0]), T::lit(v[1]), T::lit(v[2])]).collect();
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh").to_string();
    SurfaceMesh::new(verts, tri, id)
}

/// Writes a mesh. PLY output is little-endian binary with double-precision coordinates,
/// OBJ output uses shortest round-trip decimal formatting; both reload bit-exactly.
pub fn save_mesh<T: Scalar>(mesh: &SurfaceMesh<T>, path: &Path, format: MeshFormat) -> Result<()> {
    let bytes = match format {
        MeshFormat::Ply => write_ply(mesh),
        MeshFormat::Obj => write_obj(mesh),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_ply<T: Scalar>(mesh: &SurfaceMesh<T>) -> Vec<u8> {
    let mut out = Vec::new();
    let header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment subject {}\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.subject_id.replace('\n', " "),
        mesh.vertices.len(),
        mesh.faces.len()
    );
    out.extend_from_slice(header.as_bytes());
    for v in &mesh.vertices {
        for c in v {
            out.extend_from_slice(&c.as_f64().to_le_bytes());
        }
    }
    for f in &mesh.faces {
        out.push(3u8);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

fn write_obj<T: Scalar>(mesh: &SurfaceMesh<T>) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "# subject {}", mesh.subject_id.replace('\n', " ")).unwrap();
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v[0].as_f64(), v[1].as_f64(), v[2].as_f64()).unwrap();
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    out
}

type RawMesh = (Vec<[f64; 3]>, Vec<Vec<i64>>);

fn parse_obj(bytes: &[u8]) -> std::result::Result<RawMesh, String> {
    let text = std::str::from_utf8(bytes).map_err(|e| format!("not UTF-8: {e}"))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in &mut p {
                    let tok =
                        tokens.next().ok_or_else(|| format!("line {}: vertex needs 3 coordinates", lineno + 1))?;
                    *c = tok.parse().map_err(|_| format!("line {}: bad coordinate {tok:?}", lineno + 1))?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let mut face = Vec::new();
                for tok in tokens {
                    let first = tok.split('/').next().unwrap_or("");
                    let raw: i64 = first.parse().map_err(|_| format!("line {}: bad face index {tok:?}", lineno + 1))?;
                    let idx = if raw < 0 { vertices.len() as i64 + raw } else { raw - 1 };
                    face.push(idx);
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyEncoding {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(name: &str) -> std::result::Result<Self, String> {
        Ok(match name {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            other => return Err(format!("unknown PLY type {other:?}")),
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
enum PlyProperty {
    Scalar { name: String, ty: PlyType },
    List { name: String, count: PlyType, item: PlyType },
}

#[derive(Debug, Clone)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

struct BinaryCursor<'a> {
    data: &'a [u8],
    pos: usize,
    big_endian: bool,
}

impl BinaryCursor<'_> {
    fn read(&mut self, ty: PlyType) -> std::result::Result<f64, String> {
        let n = ty.size();
        if self.pos + n > self.data.len() {
            return Err("unexpected end of binary PLY body".into());
        }
        let mut buf = [0u8; 8];
        buf[..n].copy_from_slice(&self.data[self.pos..self.pos + n]);
        self.pos += n;
        if self.big_endian {
            buf[..n].reverse();
        }
        Ok(match ty {
            PlyType::I8 => buf[0] as i8 as f64,
            PlyType::U8 => buf[0] as f64,
            PlyType::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            PlyType::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            PlyType::I32 => i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            PlyType::U32 => u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            PlyType::F32 => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            PlyType::F64 => f64::from_le_bytes(buf),
        })
    }
}

fn parse_ply(bytes: &[u8]) -> std::result::Result<RawMesh, String> {
    let marker = b"end_header";
    let end = bytes.windows(marker.len()).position(|w| w == marker).ok_or("missing end_header")?;
    let mut body_start = end + marker.len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| "header is not UTF-8")?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing 'ply' magic".into());
    }
    let mut encoding = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, _ver] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLe,
                    "binary_big_endian" => PlyEncoding::BinaryBe,
                    other => return Err(format!("unsupported PLY format {other:?}")),
                })
            }
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count.parse().map_err(|_| format!("bad element count {count:?}"))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                elements.last_mut().ok_or("property before element")?.properties.push(PlyProperty::List {
                    name: name.to_string(),
                    count: PlyType::parse(count)?,
                    item: PlyType::parse(item)?,
                })
            }
            ["property", ty, name] => elements
                .last_mut()
                .ok_or("property before element")?
                .properties
                .push(PlyProperty::Scalar { name: name.to_string(), ty: PlyType::parse(ty)? }),
            _ => {}
        }
    }
    let encoding = encoding.ok_or("missing format line")?;
    let body = &bytes[body_start..];
    let mut vertices = Vec::new();
    let mut faces = Vec::new();

    let mut ascii_tokens = if encoding == PlyEncoding::Ascii {
        Some(std::str::from_utf8(body).map_err(|_| "ASCII body is not UTF-8")?.split_whitespace())
    } else {
        None
    };
    let mut cursor = BinaryCursor { data: body, pos: 0, big_endian: encoding == PlyEncoding::BinaryBe };
    let mut read_value = |ty: PlyType| -> std::result::Result<f64, String> {
        match ascii_tokens.as_mut() {
            Some(tokens) => {
                let tok = tokens.next().ok_or("unexpected end of ASCII PLY body")?;
                tok.parse::<f64>().map_err(|_| format!("bad PLY value {tok:?}"))
            }
            None => cursor.read(ty),
        }
    };

    for element in &elements {
        let is_vertex = element.name == "vertex";
        let is_face = element.name == "face";
        let axis_of = |name: &str| match name {
            "x" => Some(0),
            "y" => Some(1),
            "z" => Some(2),
            _ => None,
        };
        if is_vertex {
            let found: Vec<usize> = element
                .properties
                .iter()
                .filter_map(|p| match p {
                    PlyProperty::Scalar { name, .. } => axis_of(name),
                    _ => None,
                })
                .collect();
            if found.len() != 3 {
                return Err("vertex element needs x, y, z properties".into());
            }
        }
        for _ in 0..element.count {
            let mut p = [0.0; 3];
            for prop in &element.properties {
                match prop {
                    PlyProperty::Scalar { name, ty } => {
                        let v = read_value(*ty)?;
                        if is_vertex {
                            if let Some(a) = axis_of(name) {
                                p[a] = v;
                            }
                        }
                    }
                    PlyProperty::List { name, count, item } => {
                        let n = read_value(*count)?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(format!("bad list length {n}"));
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            items.push(read_value(*item)?);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            faces.push(items.into_iter().map(|v| v as i64).collect());
                        }
                    }
                }
            }
            if is_vertex {
                vertices.push(p);
            }
        }
    }
    Ok((vertices, faces))
}
