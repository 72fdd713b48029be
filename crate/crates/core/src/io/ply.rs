//! PLY point clouds with optional per-point labels.
//!
//! Recognized vertex properties: `x y z` (any numeric type), `red green
//! blue` (uchar or float), `instance_id class_id` (integer) and
//! `confidence` (float). Other elements such as faces are skipped.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::model::{PointCloud, PointLabel, SegmentationResult};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyData<T> {
    pub cloud: PointCloud<T>,
    pub labels: Option<SegmentationResult>,
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

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
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

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VertexField {
    X,
    Y,
    Z,
    Red,
    Green,
    Blue,
    Instance,
    Class,
    Confidence,
}

fn vertex_field(p: &Property) -> Result<(VertexField, Scalar)> {
    let Property::Scalar { name, ty } = p else {
        return Err(Error::UnsupportedProperty(p.name().to_string()));
    };
    let field = match name.as_str() {
        "x" => VertexField::X,
        "y" => VertexField::Y,
        "z" => VertexField::Z,
        "red" => VertexField::Red,
        "green" => VertexField::Green,
        "blue" => VertexField::Blue,
        "instance_id" if !ty.is_float() => VertexField::Instance,
        "class_id" if !ty.is_float() => VertexField::Class,
        "confidence" if ty.is_float() => VertexField::Confidence,
        _ => return Err(Error::UnsupportedProperty(name.clone())),
    };
    if matches!(field, VertexField::Red | VertexField::Green | VertexField::Blue)
        && !matches!(ty, Scalar::U8 | Scalar::F32 | Scalar::F64)
    {
        return Err(Error::UnsupportedProperty(name.clone()));
    }
    Ok((field, *ty))
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let bad = |m: &str| Error::MalformedHeader(m.to_string());
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing end_header"))?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))?;
        let line = line.trim_end_matches('\r').trim().to_string();
        offset += end + 1;
        let done = line == "end_header";
        lines.push(line);
        if done {
            break;
        }
    }
    if lines.first().map(String::as_str) != Some("ply") {
        return Err(bad("missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in &lines[1..lines.len() - 1] {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, "1.0"] => {
                format = Some(match *fmt {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(bad(&format!("unsupported format {other}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| bad(&format!("bad element count {count:?}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                el.properties.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count).ok_or_else(|| bad(&format!("unknown type {count}")))?,
                    item: Scalar::parse(item).ok_or_else(|| bad(&format!("unknown type {item}")))?,
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                el.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty).ok_or_else(|| bad(&format!("unknown type {ty}")))?,
                });
            }
            _ => return Err(bad(&format!("unrecognized header line {line:?}"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| bad("missing format line"))?,
        elements,
        body_offset: offset,
    })
}

/// Sequential access to body values regardless of encoding.
enum Body<'a> {
    Binary { bytes: &'a [u8], pos: usize },
    Ascii { tokens: std::str::SplitAsciiWhitespace<'a> },
}

impl Body<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64> {
        match self {
            Body::Binary { bytes, pos } => {
                let n = ty.size();
                let chunk = bytes
                    .get(*pos..*pos + n)
                    .ok_or_else(|| Error::MalformedBody("unexpected end of data".into()))?;
                *pos += n;
                Ok(ty.read_le(chunk))
            }
            Body::Ascii { tokens } => {
                let t = tokens
                    .next()
                    .ok_or_else(|| Error::MalformedBody("unexpected end of data".into()))?;
                t.parse::<f64>()
                    .map_err(|_| Error::MalformedBody(format!("bad number {t:?}")))
            }
        }
    }

    fn next_f32(&mut self) -> Result<f32> {
        match self {
            Body::Binary { .. } => Ok(self.next(Scalar::F32)? as f32),
            Body::Ascii { tokens } => {
                let t = tokens
                    .next()
                    .ok_or_else(|| Error::MalformedBody("unexpected end of data".into()))?;
                t.parse::<f32>()
                    .map_err(|_| Error::MalformedBody(format!("bad number {t:?}")))
            }
        }
    }

    fn next_real<T: Real>(&mut self, ty: Scalar) -> Result<T> {
        // Parse ascii floats straight into the target precision.
        if let Body::Ascii { tokens } = self {
            let t = tokens
                .next()
                .ok_or_else(|| Error::MalformedBody("unexpected end of data".into()))?;
            let v = if std::mem::size_of::<T>() == 4 {
                t.parse::<f32>().ok().and_then(|v| T::from_f32(v))
            } else {
                t.parse::<f64>().ok().and_then(|v| T::from_f64(v))
            };
            return v.ok_or_else(|| Error::MalformedBody(format!("bad number {t:?}")));
        }
        Ok(T::lit(self.next(ty)?))
    }

    fn skip(&mut self, p: &Property) -> Result<()> {
        match p {
            Property::Scalar { ty, .. } => {
                self.next(*ty)?;
            }
            Property::List { count, item, .. } => {
                let n = self.next(*count)?;
                if !(n >= 0.0 && n.fract() == 0.0) {
                    return Err(Error::MalformedBody(format!("bad list length {n}")));
                }
                for _ in 0..n as usize {
                    self.next(*item)?;
                }
            }
        }
        Ok(())
    }
}

fn as_label(v: f64, what: &str) -> Result<u32> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(Error::MalformedBody(format!("{what} {v} is not a nonnegative integer")))
    }
}

pub fn read_ply_from<T: Real, R: Read>(mut reader: R) -> Result<PlyData<T>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let header = parse_header(&bytes)?;
    let vertex = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::MalformedHeader("no vertex element".into()))?;
    let fields: Vec<(VertexField, Scalar)> = vertex.properties.iter().map(vertex_field).collect::<Result<_>>()?;
    let has = |f| fields.iter().any(|(g, _)| *g == f);
    if !(has(VertexField::X) && has(VertexField::Y) && has(VertexField::Z)) {
        return Err(Error::MalformedHeader("vertex element lacks x, y or z".into()));
    }
    let has_color = has(VertexField::Red) && has(VertexField::Green) && has(VertexField::Blue);
    let has_labels = has(VertexField::Instance) || has(VertexField::Class);

    let body = &bytes[header.body_offset..];
    let mut body = match header.format {
        PlyFormat::BinaryLittleEndian => Body::Binary { bytes: body, pos: 0 },
        PlyFormat::Ascii => Body::Ascii {
            tokens: std::str::from_utf8(body)
                .map_err(|_| Error::MalformedBody("ascii body is not UTF-8".into()))?
                .split_ascii_whitespace(),
        },
    };

    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    for element in &header.elements {
        if element.name != "vertex" {
            for _ in 0..element.count {
                for p in &element.properties {
                    body.skip(p)?;
                }
            }
            continue;
        }
        positions.reserve(element.count);
        for _ in 0..element.count {
            let mut p = [T::zero(); 3];
            let mut rgb = [0f32; 3];
            let mut label = PointLabel::UNLABELED;
            let mut conf = None;
            for &(field, ty) in &fields {
                match field {
                    VertexField::X => p[0] = body.next_real(ty)?,
                    VertexField::Y => p[1] = body.next_real(ty)?,
                    VertexField::Z => p[2] = body.next_real(ty)?,
                    VertexField::Red | VertexField::Green | VertexField::Blue => {
                        let k = field as usize - VertexField::Red as usize;
                        let v = body.next(ty)?;
                        rgb[k] = if ty == Scalar::U8 { (v / 255.0) as f32 } else { v as f32 };
                    }
                    VertexField::Instance => label.instance_id = as_label(body.next(ty)?, "instance_id")?,
                    VertexField::Class => label.class_id = as_label(body.next(ty)?, "class_id")?,
                    VertexField::Confidence => {
                        conf = Some(if ty == Scalar::F32 {
                            body.next_f32()? as f64
                        } else {
                            body.next(ty)?
                        })
                    }
                }
            }
            label.confidence = conf.unwrap_or(if label.class_id > 0 { 1.0 } else { 0.0 });
            positions.push(Vec3::from_array(p));
            colors.push(rgb);
            labels.push(label);
        }
    }

    let cloud = if has_color {
        PointCloud::with_colors(positions, colors)?
    } else {
        PointCloud::new(positions)?
    };
    let labels = if has_labels {
        Some(SegmentationResult::new(labels).map_err(|e| Error::MalformedBody(e.to_string()))?)
    } else {
        None
    };
    Ok(PlyData { cloud, labels })
}

pub fn read_ply<T: Real>(path: impl AsRef<Path>) -> Result<PlyData<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::from(e).at_path(path))?;
    read_ply_from(BufReader::new(file)).map_err(|e| e.at_path(path))
}

pub fn write_ply_to<T: Real, W: Write>(
    mut w: W,
    cloud: &PointCloud<T>,
    labels: Option<&SegmentationResult>,
    format: PlyFormat,
) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != cloud.len() {
            return Err(Error::SizeMismatch(cloud.len(), l.len()));
        }
    }
    let single = std::mem::size_of::<T>() == 4;
    let pos_ty = if single { "float" } else { "double" };
    writeln!(w, "ply")?;
    writeln!(
        w,
        "format {} 1.0",
        match format {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary_little_endian",
        }
    )?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property {pos_ty} {axis}")?;
    }
    let colors = cloud.colors();
    if colors.is_some() {
        for c in ["red", "green", "blue"] {
            writeln!(w, "property uchar {c}")?;
        }
    }
    if labels.is_some() {
        writeln!(w, "property int instance_id")?;
        writeln!(w, "property int class_id")?;
        writeln!(w, "property float confidence")?;
    }
    writeln!(w, "end_header")?;

    let to_u8 = |c: f32| (c * 255.0).round().clamp(0.0, 255.0) as u8;
    for (i, p) in cloud.positions().iter().enumerate() {
        let rgb = colors.map(|c| c[i].map(to_u8));
        let label = labels.map(|l| l.get(i));
        match format {
            PlyFormat::BinaryLittleEndian => {
                for v in p.to_array() {
                    if single {
                        w.write_all(&v.to_f32().unwrap().to_le_bytes())?;
                    } else {
                        w.write_all(&v.as_f64().to_le_bytes())?;
                    }
                }
                if let Some(rgb) = rgb {
                    w.write_all(&rgb)?;
                }
                if let Some(l) = label {
                    w.write_all(&(l.instance_id as i32).to_le_bytes())?;
                    w.write_all(&(l.class_id as i32).to_le_bytes())?;
                    w.write_all(&(l.confidence as f32).to_le_bytes())?;
                }
            }
            PlyFormat::Ascii => {
                if single {
                    let a = p.to_array().map(|v| v.to_f32().unwrap());
                    write!(w, "{} {} {}", a[0], a[1], a[2])?;
                } else {
                    let a = p.to_array().map(|v| v.as_f64());
                    write!(w, "{} {} {}", a[0], a[1], a[2])?;
                }
                if let Some([r, g, b]) = rgb {
                    write!(w, " {r} {g} {b}")?;
                }
                if let Some(l) = label {
                    write!(w, " {} {} {}", l.instance_id, l.class_id, l.confidence as f32)?;
                }
                writeln!(w)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ply<T: Real>(
    path: impl AsRef<Path>,
    cloud: &PointCloud<T>,
    labels: Option<&SegmentationResult>,
    format: PlyFormat,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::from(e).at_path(path))?;
    write_ply_to(BufWriter::new(file), cloud, labels, format).map_err(|e| e.at_path(path))
}
