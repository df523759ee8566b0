//! File formats: PLY point clouds, PFM / PGM depth maps, JSON and JSON lines.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{DepthImage, Point3};

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        out.push(b'\n');
    }
    atomic_write(path, &out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?);
    }
    Ok(records)
}

/// Binary little-endian PLY with `double x, y, z` vertices.
pub fn write_ply(path: &Path, points: &[Point3]) -> Result<()> {
    let mut out = Vec::with_capacity(128 + points.len() * 24);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        points.len()
    )
    .expect("write to Vec");
    for p in points {
        for v in p.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &out)
}

#[derive(Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
    BinaryBe,
}

fn ply_type_size(ty: &str) -> Option<usize> {
    Some(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "float" | "int32" | "uint32" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

fn ply_read_scalar(bytes: &[u8], ty: &str, fmt: PlyFormat) -> f64 {
    macro_rules! conv {
        ($t:ty) => {{
            let arr = bytes.try_into().expect("sized slice");
            (if fmt == PlyFormat::BinaryLe {
                <$t>::from_le_bytes(arr)
            } else {
                <$t>::from_be_bytes(arr)
            }) as f64
        }};
    }
    match ty {
        "char" | "int8" => conv!(i8),
        "uchar" | "uint8" => conv!(u8),
        "short" | "int16" => conv!(i16),
        "ushort" | "uint16" => conv!(u16),
        "int" | "int32" => conv!(i32),
        "uint" | "uint32" => conv!(u32),
        "float" | "float32" => conv!(f32),
        _ => conv!(f64),
    }
}

/// Reads vertex `x, y, z` from an ASCII or binary PLY. Other elements and
/// scalar properties are skipped; list properties on vertices are rejected.
pub fn read_ply(path: &Path) -> Result<Vec<Point3>> {
    let bytes = read_bytes(path)?;
    let bad = |reason: &str| Error::format(path, reason.to_string());
    let header_end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| bad("missing end_header"))?
        + 11;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("non-utf8 header"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    let mut format = None;
    // (element name, count, properties)
    let mut elements: Vec<(String, usize, Vec<(String, String)>)> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLe,
                    "binary_big_endian" => PlyFormat::BinaryBe,
                    _ => return Err(bad("unknown format")),
                })
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| bad("bad element count"))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", "list", ..] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                if el.0 == "vertex" {
                    return Err(bad("list properties on vertices are not supported"));
                }
                el.2.push(("list".into(), String::new()));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                ply_type_size(ty).ok_or_else(|| bad("unknown property type"))?;
                el.2.push((ty.to_string(), name.to_string()));
            }
            _ => {}
        }
    }
    let format = format.ok_or_else(|| bad("missing format line"))?;
    let vertex_idx = elements
        .iter()
        .position(|e| e.0 == "vertex")
        .ok_or_else(|| bad("no vertex element"))?;
    if elements[..vertex_idx].iter().any(|e| e.1 > 0) {
        return Err(bad("vertex element must come first"));
    }
    let (_, count, props) = &elements[vertex_idx];
    let find = |n: &str| {
        props
            .iter()
            .position(|p| p.1 == n)
            .ok_or_else(|| bad("vertex lacks x/y/z"))
    };
    let (ix, iy, iz) = (find("x")?, find("y")?, find("z")?);
    let body = &bytes[header_end..];
    let mut points = Vec::with_capacity(*count);
    match format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| bad("non-utf8 body"))?;
            let mut rows = text.lines().filter(|l| !l.trim().is_empty());
            for _ in 0..*count {
                let row = rows.next().ok_or_else(|| bad("truncated vertex list"))?;
                let vals: Vec<f64> = row
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("bad vertex value"))?;
                if vals.len() < props.len() {
                    return Err(bad("short vertex row"));
                }
                points.push(Point3::new(vals[ix], vals[iy], vals[iz]));
            }
        }
        _ => {
            let sizes: Vec<usize> = props.iter().map(|p| ply_type_size(&p.0).unwrap()).collect();
            let offsets: Vec<usize> = sizes
                .iter()
                .scan(0, |acc, s| {
                    let o = *acc;
                    *acc += s;
                    Some(o)
                })
                .collect();
            let stride: usize = sizes.iter().sum();
            if body.len() < stride * count {
                return Err(bad("truncated vertex data"));
            }
            for row in body.chunks_exact(stride).take(*count) {
                let get = |i: usize| ply_read_scalar(&row[offsets[i]..offsets[i] + sizes[i]], &props[i].0, format);
                points.push(Point3::new(get(ix), get(iy), get(iz)));
            }
        }
    }
    if !points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(bad("non-finite vertex"));
    }
    Ok(points)
}

/// Grayscale little-endian PFM, rows stored bottom to top.
pub fn write_pfm(path: &Path, depth: &DepthImage) -> Result<()> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).into_bytes();
    out.reserve(depth.data.len() * 4);
    for v in (0..depth.height).rev() {
        for u in 0..depth.width {
            out.extend_from_slice(&depth.get(u, v).to_le_bytes());
        }
    }
    atomic_write(path, &out)
}

/// Splits a netpbm-style header of `n` whitespace-separated tokens from the body.
fn netpbm_header<'a>(path: &Path, bytes: &'a [u8], n: usize) -> Result<(Vec<String>, &'a [u8])> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < n {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(path, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates header and raster
    Ok((tokens, bytes.get(i + 1..).unwrap_or(&[])))
}

fn parse_dim(path: &Path, tok: &str) -> Result<usize> {
    tok.parse().map_err(|_| Error::format(path, format!("bad dimension {tok:?}")))
}

pub fn read_pfm(path: &Path) -> Result<DepthImage> {
    let bytes = read_bytes(path)?;
    decode_pfm(path, &bytes)
}

fn decode_pfm(path: &Path, bytes: &[u8]) -> Result<DepthImage> {
    let (tok, body) = netpbm_header(path, bytes, 4)?;
    if tok[0] != "Pf" {
        return Err(Error::format(path, "only grayscale PFM (Pf) is supported"));
    }
    let (w, h) = (parse_dim(path, &tok[1])?, parse_dim(path, &tok[2])?);
    let scale: f64 = tok[3].parse().map_err(|_| Error::format(path, "bad PFM scale"))?;
    let little = scale < 0.0;
    if body.len() < w * h * 4 {
        return Err(Error::format(path, "truncated PFM raster"));
    }
    let mut data = vec![0.0f32; w * h];
    for (i, chunk) in body.chunks_exact(4).take(w * h).enumerate() {
        let arr: [u8; 4] = chunk.try_into().unwrap();
        let val = if little { f32::from_le_bytes(arr) } else { f32::from_be_bytes(arr) };
        let (row_from_bottom, u) = (i / w, i % w);
        let v = h - 1 - row_from_bottom;
        // non-finite values mean "no measurement" in most producers
        data[v * w + u] = if val.is_finite() && val > 0.0 { val } else { DepthImage::MISSING };
    }
    DepthImage::from_data(w, h, data).map_err(|e| Error::format(path, e.to_string()))
}

/// 16-bit binary PGM holding depth in integer millimeters (big-endian samples).
pub fn write_pgm16_mm(path: &Path, depth: &DepthImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
    for &d in &depth.data {
        let mm = (d as f64 * 1000.0).round();
        if !(0.0..=65535.0).contains(&mm) {
            return Err(Error::invalid(format!("depth {d} m does not fit a 16-bit millimeter PGM")));
        }
        out.extend_from_slice(&(mm as u16).to_be_bytes());
    }
    atomic_write(path, &out)
}

/// 8-bit binary PGM.
pub fn write_pgm8(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::LengthMismatch {
            left: width * height,
            right: pixels.len(),
        });
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    atomic_write(path, &out)
}

/// Raw PGM samples: `(width, height, maxval, samples)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, u16, Vec<u16>)> {
    let bytes = read_bytes(path)?;
    decode_pgm(path, &bytes)
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<(usize, usize, u16, Vec<u16>)> {
    let (tok, body) = netpbm_header(path, bytes, 4)?;
    if tok[0] != "P5" {
        return Err(Error::format(path, "only binary PGM (P5) is supported"));
    }
    let (w, h) = (parse_dim(path, &tok[1])?, parse_dim(path, &tok[2])?);
    let maxval: u16 = tok[3]
        .parse()
        .ok()
        .filter(|&m| m > 0)
        .ok_or_else(|| Error::format(path, "bad PGM maxval"))?;
    let wide = maxval > 255;
    let need = w * h * if wide { 2 } else { 1 };
    if body.len() < need {
        return Err(Error::format(path, "truncated PGM raster"));
    }
    let samples = if wide {
        body[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        body[..need].iter().map(|&b| b as u16).collect()
    };
    Ok((w, h, maxval, samples))
}

/// PGM samples interpreted as millimeters.
pub fn read_pgm16_mm(path: &Path) -> Result<DepthImage> {
    let (w, h, _, samples) = read_pgm(path)?;
    let data = samples.iter().map(|&s| s as f32 / 1000.0).collect();
    DepthImage::from_data(w, h, data)
}

/// Reads a depth map, dispatching on the file magic (PFM or PGM).
pub fn read_depth(path: &Path) -> Result<DepthImage> {
    let mut head = [0u8; 2];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map_err(|e| Error::io(path, e))?;
    match &head {
        b"Pf" => read_pfm(path),
        b"P5" => read_pgm16_mm(path),
        _ => Err(Error::format(path, "neither PFM nor PGM")),
    }
}
