//! File formats: binary PGM (P5), raw f32 grids with a JSON sidecar, and the
//! small CSV tables exchanged with the CLI.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{max_value, EventStream, Image};

/// Loads a PGM (P5) or a raw float grid (`.raw`/`.f32` with a `.json` sidecar).
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("raw") | Some("f32") => read_raw(path),
        _ => parse_pgm(&fs::read(path)?, 1.0),
    }
}

/// Parses P5 bytes. PGM carries no pitch, so the caller supplies it.
pub fn parse_pgm(bytes: &[u8], pitch: f64) -> Result<Image> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    if magic.1 != "P5" {
        return Err(Error::Parse { offset: magic.0, msg: format!("expected P5, found {:?}", magic.1) });
    }
    let width = parse_num(next_token(bytes, &mut pos)?)?;
    let height = parse_num(next_token(bytes, &mut pos)?)?;
    let maxval_tok = next_token(bytes, &mut pos)?;
    let maxval = parse_num(maxval_tok.clone())?;
    let depth = match maxval {
        1..=255 => 8u8,
        256..=65535 => 16u8,
        _ => {
            return Err(Error::Unsupported(format!("PGM maxval {maxval} (only 8/16-bit)")));
        }
    };
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Parse { offset: pos, msg: "missing whitespace after maxval".into() });
    }
    pos += 1;
    let bpp = if depth == 8 { 1 } else { 2 };
    let expected = width * height * bpp;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload { at: payload.len(), expected });
    }
    let data: Vec<f64> = if bpp == 1 {
        payload[..expected].iter().map(|&b| b as f64).collect()
    } else {
        payload[..expected].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
    };
    Image::new(width, height, pitch, depth, 1, data)
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<(usize, String)> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse { offset: start, msg: "unexpected end of header".into() });
    }
    Ok((start, String::from_utf8_lossy(&bytes[start..*pos]).into_owned()))
}

fn parse_num((offset, tok): (usize, String)) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::Parse { offset, msg: format!("expected an integer, found {tok:?}") })
}

/// Encodes a single-channel image as P5, rounding intensities to integer counts.
pub fn encode_pgm(image: &Image) -> Result<Vec<u8>> {
    if image.channels != 1 {
        return Err(Error::Unsupported("PGM output needs a single channel".into()));
    }
    let max = max_value(image.depth);
    let mut out = format!("P5\n{} {}\n{}\n", image.width, image.height, max as u32).into_bytes();
    for &v in &image.data {
        let q = v.round().clamp(0.0, max) as u16;
        if image.depth == 8 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    fs::write(path, encode_pgm(image)?)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawHeader {
    width: usize,
    height: usize,
    pitch: f64,
    #[serde(default)]
    depth: Option<u8>,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Reads a little-endian f32 grid whose dimensions live in `<name>.json`.
pub fn read_raw(path: &Path) -> Result<Image> {
    let header_text = fs::read_to_string(sidecar(path))?;
    let header: RawHeader = serde_json::from_str(header_text.trim())?;
    let bytes = fs::read(path)?;
    let expected = header.width * header.height * 4;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload { at: bytes.len(), expected });
    }
    let data = bytes[..expected]
        .chunks(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Image::new(header.width, header.height, header.pitch, header.depth.unwrap_or(16), 1, data)
}

/// Writes the f32 payload and its one-line sidecar.
pub fn write_raw(path: &Path, image: &Image) -> Result<()> {
    let header = RawHeader {
        width: image.width,
        height: image.height,
        pitch: image.pitch,
        depth: Some(image.depth),
    };
    fs::write(sidecar(path), serde_json::to_string(&header)? + "\n")?;
    let mut bytes = Vec::with_capacity(image.data.len() * 4);
    for &v in &image.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    pixel: usize,
    t_us: f64,
}

/// Event CSV with header `pixel,t_us`. The reset time is not part of the table.
pub fn read_events(path: impl AsRef<Path>, reset_time: f64) -> Result<EventStream> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut events = Vec::new();
    for row in rdr.deserialize::<EventRow>() {
        let row = row.map_err(csv_err)?;
        events.push((row.pixel, row.t_us));
    }
    Ok(EventStream { reset_time, events })
}

pub fn write_events(path: impl AsRef<Path>, stream: &EventStream) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for &(pixel, t_us) in &stream.events {
        w.serialize(EventRow { pixel, t_us }).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Linear-array profile as `index,intensity`.
pub fn write_profile(path: impl AsRef<Path>, profile: &Image) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "index,intensity")?;
    for (i, v) in profile.data.iter().enumerate() {
        writeln!(f, "{i},{v}")?;
    }
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::Parse { offset: p.byte() as usize, msg: e.to_string() },
        None => Error::Parse { offset: 0, msg: e.to_string() },
    }
}
