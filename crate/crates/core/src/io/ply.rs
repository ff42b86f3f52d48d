//! PLY (ASCII and binary little-endian) and plain XYZ point clouds.
//!
//! Only the `x`, `y`, `z` properties of the `vertex` element are read; they
//! must be `float`/`float32` or `double`/`float64`. Other vertex properties
//! are skipped, other elements are skipped with a warning.

use std::path::Path;

use super::{fmt_sig9, read_bytes, read_text, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointCloudFormat {
    PlyAscii,
    PlyBinaryLe,
    /// One `x y z` triple per line; `#` starts a comment.
    Xyz,
}

impl PointCloudFormat {
    pub fn parse_name(name: &str) -> Option<Self> {
        match name {
            "ply_ascii" | "ply-ascii" => Some(Self::PlyAscii),
            "ply_binary_le" | "ply-binary-le" | "ply" => Some(Self::PlyBinaryLe),
            "xyz" => Some(Self::Xyz),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

    /// Reads one little-endian value as f64. `buf` must hold `size()` bytes.
    fn read_le(self, buf: &[u8]) -> f64 {
        match self {
            Scalar::I8 => buf[0] as i8 as f64,
            Scalar::U8 => buf[0] as f64,
            Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(buf[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count_ty: Scalar, item_ty: Scalar },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: PointCloudFormat,
    elements: Vec<Element>,
    /// Byte offset of the first payload byte.
    body_start: usize,
    /// Number of header lines, used for ASCII line numbers.
    header_lines: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();

    loop {
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(Error::parse(
                path,
                format!("byte {pos}"),
                "header is not terminated by end_header",
            ));
        };
        let raw = &bytes[pos..pos + nl];
        let line_start = pos;
        pos += nl + 1;
        line_no += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| Error::parse(path, format!("byte {line_start}"), "non-ASCII header"))?
            .trim_end_matches('\r')
            .trim();
        let at = || format!("line {line_no}");
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next().unwrap_or("");

        if line_no == 1 {
            if line != "ply" {
                return Err(Error::parse(path, at(), "missing 'ply' magic"));
            }
            continue;
        }

        match keyword {
            "format" => {
                let kind = tokens.next().unwrap_or("");
                format = Some(match kind {
                    "ascii" => PointCloudFormat::PlyAscii,
                    "binary_little_endian" => PointCloudFormat::PlyBinaryLe,
                    other => {
                        return Err(Error::parse(
                            path,
                            at(),
                            format!("unsupported PLY format '{other}'"),
                        ))
                    }
                });
            }
            "comment" | "obj_info" | "" => {}
            "element" => {
                let name = tokens.next().unwrap_or("").to_string();
                let count = tokens
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| Error::parse(path, at(), "element count is not an integer"))?;
                elements.push(Element {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, at(), "property before any element"))?;
                let ty = tokens.next().unwrap_or("");
                let prop = if ty == "list" {
                    let count_ty = tokens.next().and_then(Scalar::parse);
                    let item_ty = tokens.next().and_then(Scalar::parse);
                    match (count_ty, item_ty) {
                        (Some(count_ty), Some(item_ty)) => Property::List { count_ty, item_ty },
                        _ => return Err(Error::parse(path, at(), "malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(|| {
                        Error::parse(path, at(), format!("unknown property type '{ty}'"))
                    })?;
                    let name = tokens
                        .next()
                        .ok_or_else(|| Error::parse(path, at(), "property without a name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.properties.push(prop);
            }
            "end_header" => break,
            other => {
                return Err(Error::parse(
                    path,
                    at(),
                    format!("unexpected header keyword '{other}'"),
                ))
            }
        }
    }

    let format = format.ok_or_else(|| Error::parse(path, "header", "missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_start: pos,
        header_lines: line_no,
    })
}

/// Column positions of x, y, z within the vertex element.
fn xyz_columns(path: &Path, element: &Element) -> Result<[usize; 3]> {
    let mut cols = [usize::MAX; 3];
    for (i, prop) in element.properties.iter().enumerate() {
        if let Property::Scalar { name, ty } = prop {
            let slot = match name.as_str() {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => continue,
            };
            if !matches!(ty, Scalar::F32 | Scalar::F64) {
                return Err(Error::parse(
                    path,
                    "header",
                    format!("vertex property '{name}' must be float or double"),
                ));
            }
            cols[slot] = i;
        }
    }
    if cols.contains(&usize::MAX) {
        return Err(Error::parse(
            path,
            "header",
            "vertex element lacks x, y or z property",
        ));
    }
    Ok(cols)
}

pub fn read_point_cloud(path: impl AsRef<Path>, format: PointCloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    match format {
        PointCloudFormat::Xyz => read_xyz(path),
        ply_format => {
            let bytes = read_bytes(path)?;
            let header = parse_header(path, &bytes)?;
            if header.format != ply_format {
                return Err(Error::parse(
                    path,
                    "header",
                    format!("declared {:?} but file is {:?}", ply_format, header.format),
                ));
            }
            read_ply_body(path, &bytes, &header)
        }
    }
}

/// Picks the format from the file: PLY by magic, otherwise XYZ.
pub fn read_point_cloud_auto(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.starts_with(b"ply") {
        let header = parse_header(path, &bytes)?;
        read_ply_body(path, &bytes, &header)
    } else {
        read_xyz(path)
    }
}

fn read_ply_body(path: &Path, bytes: &[u8], header: &Header) -> Result<PointCloud> {
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(path, "header", "no vertex element"))?;
    let cols = xyz_columns(path, &header.elements[vertex_pos])?;
    for e in &header.elements {
        if e.name != "vertex" && e.count > 0 {
            log::warn!(
                "{}: ignoring element '{}' ({} entries)",
                path.display(),
                e.name,
                e.count
            );
        }
    }
    match header.format {
        PointCloudFormat::PlyAscii => read_ascii_body(path, bytes, header, vertex_pos, cols),
        _ => read_binary_body(path, bytes, header, vertex_pos, cols),
    }
}

fn read_ascii_body(
    path: &Path,
    bytes: &[u8],
    header: &Header,
    vertex_pos: usize,
    cols: [usize; 3],
) -> Result<PointCloud> {
    let text = std::str::from_utf8(&bytes[header.body_start..])
        .map_err(|_| Error::parse(path, format!("byte {}", header.body_start), "non-UTF-8 body"))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + header.header_lines + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut cloud = PointCloud::new();

    for (ei, element) in header.elements.iter().enumerate() {
        for row in 0..element.count {
            let Some((line_no, line)) = lines.next() else {
                return Err(Error::parse(
                    path,
                    "end of file",
                    format!(
                        "truncated: element '{}' declares {} rows, found {}",
                        element.name, element.count, row
                    ),
                ));
            };
            if ei != vertex_pos {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let scalar_count = element.properties.len();
            if fields.len() < scalar_count {
                return Err(Error::parse(
                    path,
                    format!("line {line_no}"),
                    format!("expected {scalar_count} values, found {}", fields.len()),
                ));
            }
            let mut xyz = [0.0; 3];
            for (slot, &col) in cols.iter().enumerate() {
                xyz[slot] = fields[col].parse::<f64>().map_err(|_| {
                    Error::parse(
                        path,
                        format!("line {line_no}"),
                        format!("'{}' is not a number", fields[col]),
                    )
                })?;
            }
            let p = Point3::try_new(xyz[0], xyz[1], xyz[2]).ok_or_else(|| {
                Error::parse(path, format!("line {line_no}"), "non-finite coordinate")
            })?;
            cloud.push(p);
        }
    }
    if let Some((line_no, _)) = lines.next() {
        log::warn!(
            "{}: trailing data after last element at line {line_no}",
            path.display()
        );
    }
    Ok(cloud)
}

fn read_binary_body(
    path: &Path,
    bytes: &[u8],
    header: &Header,
    vertex_pos: usize,
    cols: [usize; 3],
) -> Result<PointCloud> {
    let mut pos = header.body_start;
    let mut cloud = PointCloud::new();
    let truncated = |element: &Element, row: usize, pos: usize| {
        Error::parse(
            path,
            format!("byte {pos}"),
            format!(
                "truncated: element '{}' declares {} rows, payload ends in row {}",
                element.name, element.count, row
            ),
        )
    };

    for (ei, element) in header.elements.iter().enumerate() {
        let fixed: Option<usize> = element
            .properties
            .iter()
            .map(|p| match p {
                Property::Scalar { ty, .. } => Some(ty.size()),
                Property::List { .. } => None,
            })
            .sum();

        if ei == vertex_pos {
            // Vertex rows never contain lists in files we accept.
            let stride = fixed.ok_or_else(|| {
                Error::parse(path, "header", "list properties on vertex are not supported")
            })?;
            let mut offsets = [0usize; 3];
            let mut types = [Scalar::F32; 3];
            for (slot, &col) in cols.iter().enumerate() {
                offsets[slot] = element.properties[..col]
                    .iter()
                    .map(|p| match p {
                        Property::Scalar { ty, .. } => ty.size(),
                        Property::List { .. } => 0,
                    })
                    .sum();
                if let Property::Scalar { ty, .. } = element.properties[col] {
                    types[slot] = ty;
                }
            }
            cloud = PointCloud::with_capacity(element.count);
            for row in 0..element.count {
                if pos + stride > bytes.len() {
                    return Err(truncated(element, row, pos));
                }
                let rec = &bytes[pos..pos + stride];
                let x = types[0].read_le(&rec[offsets[0]..]);
                let y = types[1].read_le(&rec[offsets[1]..]);
                let z = types[2].read_le(&rec[offsets[2]..]);
                let p = Point3::try_new(x, y, z).ok_or_else(|| {
                    Error::parse(path, format!("byte {pos}"), "non-finite coordinate")
                })?;
                cloud.push(p);
                pos += stride;
            }
        } else if let Some(stride) = fixed {
            let need = stride * element.count;
            if pos + need > bytes.len() {
                let row = (bytes.len() - pos) / stride.max(1);
                return Err(truncated(element, row, bytes.len()));
            }
            pos += need;
        } else {
            for row in 0..element.count {
                for prop in &element.properties {
                    match *prop {
                        Property::Scalar { ty, .. } => pos += ty.size(),
                        Property::List { count_ty, item_ty } => {
                            if pos + count_ty.size() > bytes.len() {
                                return Err(truncated(element, row, pos));
                            }
                            let n = count_ty.read_le(&bytes[pos..]);
                            pos += count_ty.size() + n.max(0.0) as usize * item_ty.size();
                        }
                    }
                }
                if pos > bytes.len() {
                    return Err(truncated(element, row, bytes.len()));
                }
            }
        }
    }
    Ok(cloud)
}

fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = read_text(path)?;
    let mut cloud = PointCloud::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = || format!("line {}", i + 1);
        let vals: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if vals.len() < 3 {
            return Err(Error::parse(path, at(), "expected at least 3 values"));
        }
        let mut xyz = [0.0; 3];
        for k in 0..3 {
            xyz[k] = vals[k]
                .parse()
                .map_err(|_| Error::parse(path, at(), format!("'{}' is not a number", vals[k])))?;
        }
        let p = Point3::try_new(xyz[0], xyz[1], xyz[2])
            .ok_or_else(|| Error::parse(path, at(), "non-finite coordinate"))?;
        cloud.push(p);
    }
    Ok(cloud)
}

pub fn write_point_cloud(
    cloud: &PointCloud,
    path: impl AsRef<Path>,
    format: PointCloudFormat,
) -> Result<()> {
    let path = path.as_ref();
    let mut out: Vec<u8> = Vec::new();
    match format {
        PointCloudFormat::Xyz => {
            for p in cloud {
                out.extend_from_slice(
                    format!("{} {} {}\n", fmt_sig9(p.x()), fmt_sig9(p.y()), fmt_sig9(p.z()))
                        .as_bytes(),
                );
            }
        }
        PointCloudFormat::PlyAscii | PointCloudFormat::PlyBinaryLe => {
            let fmt = if format == PointCloudFormat::PlyAscii {
                "ascii"
            } else {
                "binary_little_endian"
            };
            out.extend_from_slice(
                format!(
                    "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
                    cloud.len()
                )
                .as_bytes(),
            );
            if format == PointCloudFormat::PlyAscii {
                for p in cloud {
                    out.extend_from_slice(
                        format!("{} {} {}\n", fmt_sig9(p.x()), fmt_sig9(p.y()), fmt_sig9(p.z()))
                            .as_bytes(),
                    );
                }
            } else {
                out.reserve(cloud.len() * 24);
                for p in cloud {
                    for v in p.to_array() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
    }
    write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn ascii_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ply");
        fs::write(
            &p,
            "ply\nformat ascii 1.0\ncomment fixture\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar intensity\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 10\n1.5 -2 3 20\n4 5 6e1 30\n3 0 1 2\n",
        )
        .unwrap();
        let c = read_point_cloud(&p, PointCloudFormat::PlyAscii).unwrap();
        assert_eq!(
            c.points(),
            &[
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.5, -2.0, 3.0),
                Point3::new(4.0, 5.0, 60.0)
            ]
        );
    }

    #[test]
    fn ascii_truncation_names_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ply");
        let mut s = String::from(
            "ply\nformat ascii 1.0\nelement vertex 10\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        );
        for i in 0..9 {
            s.push_str(&format!("{i} 0 0\n"));
        }
        fs::write(&p, s).unwrap();
        let err = read_point_cloud(&p, PointCloudFormat::PlyAscii).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("declares 10 rows"), "{msg}");
        assert!(msg.contains("found 9"), "{msg}");
    }

    #[test]
    fn binary_truncation_and_nan() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.ply");
        let cloud: PointCloud = (0..4).map(|i| Point3::new(i as f64, 0.0, 1.0)).collect();
        write_point_cloud(&cloud, &p, PointCloudFormat::PlyBinaryLe).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 5);
        fs::write(&p, &bytes).unwrap();
        let err = read_point_cloud(&p, PointCloudFormat::PlyBinaryLe).unwrap_err();
        assert!(err.to_string().contains("declares 4 rows"));

        let mut bytes = fs::read(&p).unwrap();
        // Drop the partial last row and append a row with a NaN.
        bytes.truncate(bytes.len() - 19);
        for v in [f64::NAN, 0.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&p, &bytes).unwrap();
        let err = read_point_cloud(&p, PointCloudFormat::PlyBinaryLe).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }

    #[test]
    fn float32_binary_and_format_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.ply");
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty uchar pad\nproperty float y\nproperty float z\nend_header\n".to_vec();
        for v in [[1.25f32, 2.5, -3.0], [0.5, 0.25, 8.0]] {
            bytes.extend_from_slice(&v[0].to_le_bytes());
            bytes.push(7);
            bytes.extend_from_slice(&v[1].to_le_bytes());
            bytes.extend_from_slice(&v[2].to_le_bytes());
        }
        fs::write(&p, &bytes).unwrap();
        let c = read_point_cloud(&p, PointCloudFormat::PlyBinaryLe).unwrap();
        assert_eq!(c.points()[0], Point3::new(1.25, 2.5, -3.0));
        assert_eq!(c.points()[1], Point3::new(0.5, 0.25, 8.0));
        assert!(read_point_cloud(&p, PointCloudFormat::PlyAscii).is_err());
        assert_eq!(read_point_cloud_auto(&p).unwrap(), c);
    }

    #[test]
    fn rejects_integer_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.ply");
        fs::write(
            &p,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty int y\nproperty int z\nend_header\n1 2 3\n",
        )
        .unwrap();
        assert!(matches!(
            read_point_cloud(&p, PointCloudFormat::PlyAscii),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn xyz_round_trip_within_printed_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.xyz");
        let cloud: PointCloud = (0..50)
            .map(|i| Point3::new(i as f64 / 7.0, -(i as f64) * 1e3 / 3.0, 1e-4 * i as f64))
            .collect();
        write_point_cloud(&cloud, &p, PointCloudFormat::Xyz).unwrap();
        let back = read_point_cloud(&p, PointCloudFormat::Xyz).unwrap();
        for (a, b) in cloud.iter().zip(back.iter()) {
            for (u, v) in a.to_array().iter().zip(b.to_array()) {
                assert!((u - v).abs() <= 1e-8 * u.abs().max(1e-300));
            }
        }
    }
}
