//! Raster file formats.
//!
//! Label maps serialize as binary PGM (P5) with class IDs as pixel values:
//! 8-bit when every value fits a byte, 16-bit (big-endian, netpbm
//! convention) otherwise. Depth maps use a 16-byte header — magic `DPT1`,
//! u32 width, u32 height, f32 empty-sentinel — followed by row-major
//! little-endian f32 samples. Writing depth is lossy (f64 → f32); the
//! in-memory representation stays f64.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DepthMap, LabelMap};
use crate::bytesio;

const DEPTH_MAGIC: &[u8; 4] = b"DPT1";

#[derive(Debug, thiserror::Error)]
pub enum RasterIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a binary PGM (P5) file")]
    NotPgm,
    #[error("malformed PGM header: {0}")]
    BadHeader(String),
    #[error("bad magic bytes; not a depth raster")]
    BadMagic,
}

/// Writes a label map as binary PGM.
pub fn write_pgm(path: &Path, label: &LabelMap) -> Result<(), RasterIoError> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    let maxval: u32 = if label.data().iter().all(|&v| v <= 255) {
        255
    } else {
        65535
    };
    write!(out, "P5\n{} {}\n{}\n", label.width(), label.height(), maxval)?;
    if maxval <= 255 {
        let bytes: Vec<u8> = label.data().iter().map(|&v| v as u8).collect();
        out.write_all(&bytes)?;
    } else {
        for &v in label.data() {
            out.write_all(&v.to_be_bytes())?;
        }
    }
    Ok(())
}

/// Reads a binary PGM into a label map.
pub fn read_pgm(path: &Path) -> Result<LabelMap, RasterIoError> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 2];
    reader.read_exact(&mut magic)?;
    if &magic != b"P5" {
        return Err(RasterIoError::NotPgm);
    }
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        *field = read_header_int(&mut reader)?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(RasterIoError::BadHeader(format!(
            "dims {width}x{height} maxval {maxval}"
        )));
    }
    let n = (width * height) as usize;
    let data = if maxval <= 255 {
        let mut buf = vec![0u8; n];
        reader.read_exact(&mut buf)?;
        buf.into_iter().map(u16::from).collect()
    } else {
        let mut buf = vec![0u8; n * 2];
        reader.read_exact(&mut buf)?;
        buf.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(LabelMap::from_data(width as u32, height as u32, data))
}

/// Reads one whitespace-delimited integer from a PGM header, skipping
/// `#` comments. The final single whitespace byte terminates the header.
fn read_header_int(reader: &mut impl Read) -> Result<u64, RasterIoError> {
    let mut value: Option<u64> = None;
    let mut in_comment = false;
    loop {
        let mut byte = [0u8; 1];
        reader.read_exact(&mut byte)?;
        let b = byte[0];
        if in_comment {
            if b == b'\n' {
                in_comment = false;
            }
            continue;
        }
        match b {
            b'#' => in_comment = true,
            b'0'..=b'9' => {
                value = Some(value.unwrap_or(0) * 10 + u64::from(b - b'0'));
                if value.unwrap() > u64::from(u32::MAX) {
                    return Err(RasterIoError::BadHeader("oversized field".into()));
                }
            }
            b' ' | b'\t' | b'\r' | b'\n' => {
                if value.is_some() {
                    return Ok(value.unwrap());
                }
            }
            other => {
                return Err(RasterIoError::BadHeader(format!(
                    "unexpected byte {other:#x}"
                )))
            }
        }
    }
}

/// Writes a depth map (f32 samples; empty pixels become the sentinel).
pub fn write_depth_map(path: &Path, depth: &DepthMap) -> Result<(), RasterIoError> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(DEPTH_MAGIC)?;
    bytesio::write_u32(&mut out, depth.width())?;
    bytesio::write_u32(&mut out, depth.height())?;
    bytesio::write_f32(&mut out, f32::INFINITY)?;
    for &d in depth.data() {
        bytesio::write_f32(&mut out, if d.is_finite() { d as f32 } else { f32::INFINITY })?;
    }
    Ok(())
}

/// Reads a depth map; sentinel-valued pixels load as `+inf`.
pub fn read_depth_map(path: &Path) -> Result<DepthMap, RasterIoError> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    if !bytesio::read_magic(&mut reader, DEPTH_MAGIC)? {
        return Err(RasterIoError::BadMagic);
    }
    let width = bytesio::read_u32(&mut reader)?;
    let height = bytesio::read_u32(&mut reader)?;
    let sentinel = bytesio::read_f32(&mut reader)?;
    let n = width as usize * height as usize;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let v = bytesio::read_f32(&mut reader)?;
        if v == sentinel || !v.is_finite() {
            data.push(f64::INFINITY);
        } else {
            data.push(f64::from(v));
        }
    }
    Ok(DepthMap::from_data(width, height, data))
}
