// SPDX-License-Identifier: Apache-2.0

//! Point-cloud file formats.
//!
//! * PLY, ASCII or binary little-endian. Only the `vertex` element is read;
//!   `x/y/z` are required, `red/green/blue` and `nx/ny/nz` are optional.
//!   Integer color channels are divided by 255.
//! * MSCB, a lossless little-endian container:
//!
//! ```text
//! "MSCB" | u32 version | u64 n | u8 flags
//! f64 positions[n*3] | f64 colors[n*3] | f64 normals[n*3] (flags & 1) | u32 origin_index[n]
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{MscError, Result};
use crate::geom::{self, Vec3};

pub const MSCB_MAGIC: &[u8; 4] = b"MSCB";
pub const MSCB_VERSION: u32 = 1;
const MSCB_HAS_NORMALS: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    PlyAscii,
    PlyBinaryLe,
    Mscb,
}

impl Format {
    /// Guess from the file extension; `.ply` maps to binary.
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()? {
            "mscb" => Some(Format::Mscb),
            "ply" => Some(Format::PlyBinaryLe),
            _ => None,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = MscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ply-ascii" => Ok(Format::PlyAscii),
            "ply-binary-le" | "ply" => Ok(Format::PlyBinaryLe),
            "mscb" => Ok(Format::Mscb),
            other => Err(MscError::invalid(format!("unknown format {other:?}"))),
        }
    }
}

pub fn load_cloud(path: &Path, format: Format) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| MscError::io(path, e))?;
    match format {
        Format::Mscb => decode_mscb(&bytes),
        Format::PlyAscii | Format::PlyBinaryLe => decode_ply(&bytes),
    }
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Mscb => encode_mscb(cloud),
        Format::PlyAscii => encode_ply(cloud, false),
        Format::PlyBinaryLe => encode_ply(cloud, true),
    };
    std::fs::write(path, bytes).map_err(|e| MscError::io(path, e))
}

pub fn encode_mscb(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let has_normals = cloud.normals.is_some();
    let mut out = Vec::with_capacity(17 + n * (if has_normals { 76 } else { 52 }));
    out.extend_from_slice(MSCB_MAGIC);
    out.extend_from_slice(&MSCB_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.push(if has_normals { MSCB_HAS_NORMALS } else { 0 });
    let mut put_block = |block: &[Vec3]| {
        for v in block.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    put_block(&cloud.positions);
    put_block(&cloud.colors);
    if let Some(normals) = &cloud.normals {
        put_block(normals);
    }
    for idx in &cloud.origin_index {
        out.extend_from_slice(&idx.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(MscError::parse(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn vec3_block(&mut self, n: usize, what: &str) -> Result<Vec<Vec3>> {
        let start = self.pos;
        let raw = self.take(n * 24, what)?;
        raw.chunks_exact(24)
            .enumerate()
            .map(|(i, c)| {
                let v = [
                    f64::from_le_bytes(c[0..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..16].try_into().unwrap()),
                    f64::from_le_bytes(c[16..24].try_into().unwrap()),
                ];
                if v.iter().all(|x| x.is_finite()) {
                    Ok(v)
                } else {
                    Err(MscError::parse(
                        (start + i * 24) as u64,
                        format!("non-finite value in {what}"),
                    ))
                }
            })
            .collect()
    }
}

pub fn decode_mscb(bytes: &[u8]) -> Result<PointCloud> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MSCB_MAGIC {
        return Err(MscError::parse(0, "bad magic, expected MSCB"));
    }
    let version = cur.u32("version")?;
    if version != MSCB_VERSION {
        return Err(MscError::parse(4, format!("unsupported version {version}")));
    }
    let n = cur.u64("point count")?;
    let flags = cur.take(1, "flags")?[0];
    if flags & !MSCB_HAS_NORMALS != 0 {
        return Err(MscError::parse(16, format!("unknown flags {flags:#04x}")));
    }
    let n = usize::try_from(n).map_err(|_| MscError::parse(8, "point count overflows"))?;
    let positions = cur.vec3_block(n, "positions")?;
    let colors = cur.vec3_block(n, "colors")?;
    let normals = if flags & MSCB_HAS_NORMALS != 0 {
        Some(cur.vec3_block(n, "normals")?)
    } else {
        None
    };
    let origin_index = (0..n)
        .map(|_| cur.u32("origin_index"))
        .collect::<Result<Vec<_>>>()?;
    if cur.pos != bytes.len() {
        return Err(MscError::parse(cur.pos as u64, "trailing bytes"));
    }
    let cloud = PointCloud {
        positions,
        colors,
        normals,
        origin_index,
    };
    cloud.validate().map_err(|e| MscError::parse(17, e.to_string()))?;
    Ok(cloud)
}

pub fn encode_ply(cloud: &PointCloud, binary: bool) -> Vec<u8> {
    let mut header = String::from("ply\n");
    header.push_str(if binary {
        "format binary_little_endian 1.0\n"
    } else {
        "format ascii 1.0\n"
    });
    let _ = writeln!(header, "element vertex {}", cloud.len());
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    if cloud.normals.is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    let to_byte = |c: f64| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let c = cloud.colors[i].map(to_byte);
        let n = cloud.normals.as_ref().map(|ns| ns[i]);
        if binary {
            for v in p {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            out.extend_from_slice(&c);
            if let Some(n) = n {
                for v in n {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        } else {
            let mut line = format!(
                "{} {} {} {} {} {}",
                p[0] as f32, p[1] as f32, p[2] as f32, c[0], c[1], c[2]
            );
            if let Some(n) = n {
                let _ = write!(line, " {} {} {}", n[0] as f32, n[1] as f32, n[2] as f32);
            }
            line.push('\n');
            out.extend_from_slice(line.as_bytes());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
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

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    /// Full-scale value used to map integer colors into `[0, 1]`.
    fn color_scale(self) -> f64 {
        match self {
            Scalar::U8 | Scalar::I8 => 255.0,
            Scalar::U16 | Scalar::I16 => 65535.0,
            Scalar::U32 | Scalar::I32 => u32::MAX as f64,
            Scalar::F32 | Scalar::F64 => 1.0,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    binary: bool,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_ply_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let rest = &bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| MscError::parse(start as u64, "unterminated header"))?;
        *pos = start + end + 1;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| MscError::parse(start as u64, "header is not UTF-8"))?;
        Ok((start, line.trim_end_matches('\r').trim().to_string()))
    };

    let (off, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(MscError::parse(off as u64, "missing 'ply' magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (off, line) = next_line(&mut pos)?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                binary = Some(match tok.next() {
                    Some("ascii") => false,
                    Some("binary_little_endian") => true,
                    other => {
                        return Err(MscError::parse(
                            off as u64,
                            format!("unsupported format {other:?}"),
                        ))
                    }
                });
            }
            Some("element") => {
                let name = tok.next().unwrap_or_default().to_string();
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| MscError::parse(off as u64, "bad element count"))?;
                elements.push(Element {
                    name,
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| MscError::parse(off as u64, "property before element"))?;
                let bad_type = || MscError::parse(off as u64, "unknown property type");
                let ty = tok.next().unwrap_or_default();
                if ty == "list" {
                    let count = tok.next().and_then(Scalar::parse).ok_or_else(bad_type)?;
                    let item = tok.next().and_then(Scalar::parse).ok_or_else(bad_type)?;
                    elem.props.push(Property::List { count, item });
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(bad_type)?;
                    let name = tok
                        .next()
                        .ok_or_else(|| MscError::parse(off as u64, "property without name"))?;
                    elem.props.push(Property::Scalar {
                        name: name.to_string(),
                        ty,
                    });
                }
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("end_header") => break,
            Some(other) => {
                return Err(MscError::parse(
                    off as u64,
                    format!("unexpected header keyword {other:?}"),
                ))
            }
        }
    }
    let binary = binary.ok_or_else(|| MscError::parse(0, "missing format line"))?;
    Ok(Header {
        binary,
        elements,
        body_offset: pos,
    })
}

/// Column slots of the vertex element we care about.
#[derive(Default)]
struct VertexLayout {
    xyz: [Option<usize>; 3],
    rgb: [Option<usize>; 3],
    normal: [Option<usize>; 3],
}

impl VertexLayout {
    fn from_element(elem: &Element, offset: u64) -> Result<Self> {
        let mut layout = VertexLayout::default();
        for (slot, prop) in elem.props.iter().enumerate() {
            let Property::Scalar { name, ty } = prop else {
                return Err(MscError::parse(offset, "list property on vertex element"));
            };
            let target = match name.as_str() {
                "x" => &mut layout.xyz[0],
                "y" => &mut layout.xyz[1],
                "z" => &mut layout.xyz[2],
                "red" | "r" => &mut layout.rgb[0],
                "green" | "g" => &mut layout.rgb[1],
                "blue" | "b" => &mut layout.rgb[2],
                "nx" => &mut layout.normal[0],
                "ny" => &mut layout.normal[1],
                "nz" => &mut layout.normal[2],
                _ => continue,
            };
            *target = Some(slot);
            if matches!(name.as_str(), "x" | "y" | "z" | "nx" | "ny" | "nz") && !ty.is_float() {
                return Err(MscError::parse(
                    offset,
                    format!("property {name} must be float or double"),
                ));
            }
        }
        if layout.xyz.iter().any(Option::is_none) {
            return Err(MscError::parse(offset, "vertex element lacks x/y/z"));
        }
        let partial = |s: &[Option<usize>; 3]| s.iter().any(Option::is_some) && s.iter().any(Option::is_none);
        if partial(&layout.rgb) || partial(&layout.normal) {
            return Err(MscError::parse(offset, "incomplete color or normal triple"));
        }
        Ok(layout)
    }
}

pub fn decode_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_ply_header(bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| MscError::parse(0, "no vertex element"))?;
    let header_end = header.body_offset as u64;
    let vertex = &header.elements[vertex_pos];
    let layout = VertexLayout::from_element(vertex, header_end)?;
    let types: Vec<Scalar> = vertex
        .props
        .iter()
        .map(|p| match p {
            Property::Scalar { ty, .. } => *ty,
            Property::List { .. } => unreachable!(),
        })
        .collect();

    let mut rows: Vec<(u64, Vec<f64>)> = Vec::with_capacity(vertex.count);
    if header.binary {
        let mut pos = header.body_offset;
        for elem in &header.elements[..vertex_pos] {
            pos = skip_binary_element(bytes, pos, elem)?;
        }
        let stride: usize = types.iter().map(|t| t.size()).sum();
        for _ in 0..vertex.count {
            if bytes.len() < pos + stride {
                return Err(MscError::parse(pos as u64, "truncated vertex data"));
            }
            let mut at = pos;
            let vals = types
                .iter()
                .map(|t| {
                    let v = t.read_le(&bytes[at..]);
                    at += t.size();
                    v
                })
                .collect();
            rows.push((pos as u64, vals));
            pos += stride;
        }
    } else {
        let body = &bytes[header.body_offset..];
        let mut lines = body
            .split(|&b| b == b'\n')
            .scan(header.body_offset, |off, line| {
                let start = *off;
                *off += line.len() + 1;
                Some((start as u64, line))
            })
            .filter(|(_, l)| !l.iter().all(u8::is_ascii_whitespace));
        for elem in &header.elements[..vertex_pos] {
            for _ in 0..elem.count {
                lines
                    .next()
                    .ok_or_else(|| MscError::parse(bytes.len() as u64, "truncated element data"))?;
            }
        }
        for _ in 0..vertex.count {
            let (off, line) = lines
                .next()
                .ok_or_else(|| MscError::parse(bytes.len() as u64, "truncated vertex data"))?;
            let text = std::str::from_utf8(line)
                .map_err(|_| MscError::parse(off, "vertex line is not UTF-8"))?;
            let vals: Vec<f64> = text
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| MscError::parse(off, "unparseable number"))?;
            if vals.len() != types.len() {
                return Err(MscError::parse(
                    off,
                    format!("expected {} values, found {}", types.len(), vals.len()),
                ));
            }
            for (v, t) in vals.iter().zip(&types) {
                if !t.is_float() && v.fract() != 0.0 {
                    return Err(MscError::parse(off, "non-integer value for integer property"));
                }
            }
            rows.push((off, vals));
        }
    }

    let n = rows.len();
    let mut positions = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut normals = layout.normal[0].map(|_| Vec::with_capacity(n));
    let pick = |vals: &[f64], slots: &[Option<usize>; 3]| -> Vec3 {
        [vals[slots[0].unwrap()], vals[slots[1].unwrap()], vals[slots[2].unwrap()]]
    };
    for (off, vals) in &rows {
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(MscError::parse(*off, "non-finite value"));
        }
        positions.push(pick(vals, &layout.xyz));
        let color = match layout.rgb[0] {
            Some(_) => {
                let c = pick(vals, &layout.rgb);
                let s = types[layout.rgb[0].unwrap()].color_scale();
                let c = c.map(|v| v / s);
                if !c.iter().all(|v| (0.0..=1.0).contains(v)) {
                    return Err(MscError::parse(*off, "color outside [0, 1]"));
                }
                c
            }
            None => [0.5; 3],
        };
        colors.push(color);
        if let Some(ns) = normals.as_mut() {
            let nrm = pick(vals, &layout.normal);
            let len = geom::norm(nrm);
            if len < 1e-12 {
                return Err(MscError::parse(*off, "zero-length normal"));
            }
            ns.push(geom::scale(nrm, 1.0 / len));
        }
    }
    PointCloud::new(positions, colors, normals).map_err(|e| MscError::parse(header_end, e.to_string()))
}

fn skip_binary_element(bytes: &[u8], mut pos: usize, elem: &Element) -> Result<usize> {
    for _ in 0..elem.count {
        for prop in &elem.props {
            match prop {
                Property::Scalar { ty, .. } => pos += ty.size(),
                Property::List { count, item } => {
                    if bytes.len() < pos + count.size() {
                        return Err(MscError::parse(pos as u64, "truncated list"));
                    }
                    let len = count.read_le(&bytes[pos..]) as usize;
                    pos += count.size() + len * item.size();
                }
            }
        }
        if pos > bytes.len() {
            return Err(MscError::parse(bytes.len() as u64, "truncated element data"));
        }
    }
    Ok(pos)
}
