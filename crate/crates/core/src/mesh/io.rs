//! OBJ (text) and PLY (binary little-endian, plus ASCII on read) mesh files.
//!
//! PLY is written with `double` positions and normals so a save/load round
//! trip is bit-exact; vertex colors are stored as `uchar` RGB.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::Vec3;

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let label = path.display().to_string();
    match extension(path).as_deref() {
        Some("obj") => parse_obj(&String::from_utf8_lossy(&bytes), &label),
        Some("ply") => parse_ply(&bytes, &label),
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            message: "unsupported mesh extension (expected .obj or .ply)".into(),
        }),
    }
}

pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match extension(path).as_deref() {
        Some("obj") => encode_obj(mesh).into_bytes(),
        Some("ply") => encode_ply(mesh),
        _ => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "unsupported mesh extension (expected .obj or .ply)".into(),
            })
        }
    };
    fs::write(path, bytes)?;
    Ok(())
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

fn parse_err(label: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("{label}:{line}"),
        message: message.into(),
    }
}

/// Reads `v` (optionally with trailing RGB) and `f` records; polygons are fan
/// triangulated and normals recomputed.
pub fn parse_obj(text: &str, label: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let vals: Vec<f64> = toks
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(label, lineno, format!("bad vertex: {e}")))?;
                match vals.len() {
                    3 | 4 => vertices.push(Vec3::new(vals[0], vals[1], vals[2])),
                    6 | 7 => {
                        vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
                        colors.push(Vec3::new(vals[3], vals[4], vals[5]));
                    }
                    n => return Err(parse_err(label, lineno, format!("vertex with {n} values"))),
                }
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in toks {
                    let first = t.split('/').next().unwrap_or("");
                    let k: i64 = first
                        .parse()
                        .map_err(|_| parse_err(label, lineno, format!("bad face index {t:?}")))?;
                    let n = vertices.len() as i64;
                    let resolved = if k > 0 { k - 1 } else { n + k };
                    if k == 0 || resolved < 0 || resolved >= n {
                        return Err(parse_err(label, lineno, format!("face index {k} out of range")));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(parse_err(label, lineno, "face with fewer than 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if !colors.is_empty() && colors.len() != vertices.len() {
        return Err(parse_err(label, 0, "vertex colors given for only some vertices"));
    }
    let mesh = TriMesh::new(vertices, faces)?;
    if colors.is_empty() {
        Ok(mesh)
    } else {
        mesh.with_colors(colors)
    }
}

pub fn encode_obj(mesh: &TriMesh) -> String {
    let mut s = String::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => s.push_str(&format!(
                "v {:?} {:?} {:?} {:?} {:?} {:?}\n",
                v.x, v.y, v.z, c[i].x, c[i].y, c[i].z
            )),
            None => s.push_str(&format!("v {:?} {:?} {:?}\n", v.x, v.y, v.z)),
        }
    }
    for n in &mesh.normals {
        s.push_str(&format!("vn {:?} {:?} {:?}\n", n.x, n.y, n.z));
    }
    for f in &mesh.faces {
        let [a, b, c] = f.map(|v| v + 1);
        s.push_str(&format!("f {a}//{a} {b}//{b} {c}//{c}\n"));
    }
    s
}

fn color_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Snaps vertex colors to the 8-bit values a PLY save stores.
pub fn quantize_colors(mesh: &mut TriMesh) {
    if let Some(colors) = &mut mesh.colors {
        for c in colors {
            *c = c.map(|v| color_byte(v) as f64 / 255.0);
        }
    }
}

pub fn encode_ply(mesh: &TriMesh) -> Vec<u8> {
    let mut out = Vec::new();
    let _ = write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         property double nx\nproperty double ny\nproperty double nz\n",
        mesh.vertices.len()
    );
    if mesh.colors.is_some() {
        out.extend_from_slice(b"property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    let _ = write!(
        out,
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.faces.len()
    );
    for (i, (v, n)) in mesh.vertices.iter().zip(&mesh.normals).enumerate() {
        for c in v.iter().chain(n.iter()) {
            out.extend_from_slice(&c.to_le_bytes());
        }
        if let Some(col) = &mesh.colors {
            out.extend(col[i].iter().map(|&c| color_byte(c)));
        }
    }
    for f in &mesh.faces {
        out.push(3);
        for &v in f {
            out.extend_from_slice(&(v as i32).to_le_bytes());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Cursor over the PLY body in either encoding.
enum Body<'a> {
    Binary { data: &'a [u8], pos: usize },
    Ascii { tokens: std::str::SplitAsciiWhitespace<'a> },
}

impl Body<'_> {
    fn next(&mut self, ty: Scalar, label: &str) -> Result<f64> {
        match self {
            Body::Binary { data, pos } => {
                let n = ty.size();
                let b = data.get(*pos..*pos + n).ok_or_else(|| Error::Parse {
                    location: format!("{label} byte {pos}"),
                    message: "truncated PLY body".into(),
                })?;
                *pos += n;
                Ok(ty.read_le(b))
            }
            Body::Ascii { tokens } => {
                let t = tokens.next().ok_or_else(|| Error::Parse {
                    location: label.to_string(),
                    message: "truncated PLY body".into(),
                })?;
                t.parse().map_err(|_| Error::Parse {
                    location: label.to_string(),
                    message: format!("bad number {t:?}"),
                })
            }
        }
    }
}

pub fn parse_ply(bytes: &[u8], label: &str) -> Result<TriMesh> {
    let end = find_header_end(bytes).ok_or_else(|| parse_err(label, 1, "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end.0]).map_err(|_| parse_err(label, 1, "non-utf8 header"))?;
    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(label, 1, "not a PLY file")),
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", "ascii", _] => binary = Some(false),
            ["format", f, ..] => return Err(parse_err(label, lineno, format!("unsupported format {f}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(label, lineno, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let (Some(ct), Some(it)) = (Scalar::parse(ct), Scalar::parse(it)) else {
                    return Err(parse_err(label, lineno, "bad list property type"));
                };
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(label, lineno, "property before element"))?
                    .props
                    .push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| parse_err(label, lineno, format!("bad type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| parse_err(label, lineno, "property before element"))?
                    .props
                    .push(Property::Scalar(name.to_string(), ty));
            }
            ["comment", ..] | ["obj_info", ..] | [] | ["end_header"] => {}
            _ => return Err(parse_err(label, lineno, format!("unrecognized header line {line:?}"))),
        }
    }
    let binary = binary.ok_or_else(|| parse_err(label, 2, "missing format line"))?;
    let mut body = if binary {
        Body::Binary {
            data: &bytes[end.1..],
            pos: 0,
        }
    } else {
        let text = std::str::from_utf8(&bytes[end.1..]).map_err(|_| parse_err(label, 0, "non-utf8 ascii body"))?;
        Body::Ascii {
            tokens: text.split_ascii_whitespace(),
        }
    };

    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut p = [0.0; 3];
            let mut n = [0.0; 3];
            let mut c = [0.0; 3];
            let (mut has_n, mut has_c) = (false, false);
            for prop in &el.props {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = body.next(*ty, label)?;
                        if el.name != "vertex" {
                            continue;
                        }
                        let color_div = if ty.is_integer() { 255.0 } else { 1.0 };
                        match name.as_str() {
                            "x" => p[0] = v,
                            "y" => p[1] = v,
                            "z" => p[2] = v,
                            "nx" => (n[0], has_n) = (v, true),
                            "ny" => n[1] = v,
                            "nz" => n[2] = v,
                            "red" | "r" => (c[0], has_c) = (v / color_div, true),
                            "green" | "g" => c[1] = v / color_div,
                            "blue" | "b" => c[2] = v / color_div,
                            _ => {}
                        }
                    }
                    Property::List(name, ct, it) => {
                        let k = body.next(*ct, label)? as usize;
                        let mut idx = Vec::with_capacity(k);
                        for _ in 0..k {
                            idx.push(body.next(*it, label)?);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            if k < 3 {
                                return Err(parse_err(label, 0, "face with fewer than 3 vertices"));
                            }
                            for j in 1..k - 1 {
                                faces.push([idx[0] as u32, idx[j] as u32, idx[j + 1] as u32]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(Vec3::from(p));
                if has_n {
                    normals.push(Vec3::from(n));
                }
                if has_c {
                    colors.push(Vec3::from(c));
                }
            }
        }
    }
    let mut mesh = TriMesh::new(vertices, faces)?;
    if normals.len() == mesh.vertices.len() && normals.iter().all(|n| (n.norm() - 1.0).abs() <= 1e-4) {
        mesh.normals = normals;
    }
    if colors.len() == mesh.vertices.len() && !colors.is_empty() {
        mesh = mesh.with_colors(colors)?;
    }
    Ok(mesh)
}

/// Returns (header length up to the `end_header` line end, body offset).
fn find_header_end(bytes: &[u8]) -> Option<(usize, usize)> {
    let pat = b"end_header";
    let pos = bytes.windows(pat.len()).position(|w| w == pat)?;
    let mut body = pos + pat.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    Some((pos + pat.len(), body))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE_OBJ: &str = "\
# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
";

    #[test]
    fn obj_cube_counts() {
        let m = parse_obj(CUBE_OBJ, "cube").unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.faces.len(), 12);
        assert!(m.is_watertight());
        assert!((m.signed_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn obj_errors_carry_line_numbers() {
        let e = parse_obj("v 0 0 0\nv 1 0\n", "bad.obj").unwrap_err();
        assert!(e.to_string().contains("bad.obj:2"), "{e}");
        let e = parse_obj("v 0 0 0\nf 1 2 3\n", "bad.obj").unwrap_err();
        assert!(e.to_string().contains("bad.obj:2"), "{e}");
    }

    #[test]
    fn obj_negative_indices_and_slashes() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3/1/1 -2/2/2 -1/3/3\n", "t").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn obj_round_trip() {
        let m = parse_obj(CUBE_OBJ, "cube").unwrap();
        let m = m.clone().with_colors(m.vertices.iter().map(|v| v * 0.3).collect()).unwrap();
        let back = parse_obj(&encode_obj(&m), "rt").unwrap();
        assert_eq!(back.faces, m.faces);
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            assert!((a - b).norm() < 1e-6);
        }
        assert!(back.colors.is_some());
    }

    #[test]
    fn ply_round_trip_is_bit_exact() {
        let mut m = parse_obj(CUBE_OBJ, "cube").unwrap();
        m.vertices[3].x = 0.1 + 0.2;
        m.recompute_normals();
        let back = parse_ply(&encode_ply(&m), "rt").unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.normals, m.normals);
        assert_eq!(back.faces, m.faces);
    }

    #[test]
    fn ply_colors_quantized() {
        let m = parse_obj(CUBE_OBJ, "cube").unwrap();
        let m = m.clone().with_colors(vec![Vec3::new(0.5, 0.25, 1.0); 8]).unwrap();
        let back = parse_ply(&encode_ply(&m), "rt").unwrap();
        let c = back.colors.unwrap();
        assert!((c[0] - Vec3::new(0.5, 0.25, 1.0)).amax() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn ply_ascii_and_truncation() {
        let ascii = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n\
                     property float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n\
                     0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let m = parse_ply(ascii.as_bytes(), "a").unwrap();
        assert_eq!(m.faces.len(), 1);
        let m = parse_obj(CUBE_OBJ, "cube").unwrap();
        let bytes = encode_ply(&m);
        assert!(parse_ply(&bytes[..bytes.len() - 3], "t").is_err());
    }
}
