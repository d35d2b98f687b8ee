//! Point-cloud file formats.
//!
//! ASCII: one `x y z class_id intensity round` record per line, `#` comments.
//! Binary: magic `SPC1`, little-endian u64 point count, then per point
//! 3×f64 position, u16 class, f32 intensity, u16 round.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{MapError, SemanticPoint, SemanticPointCloud};
use crate::bytesio;

const MAGIC: &[u8; 4] = b"SPC1";

pub fn read_cloud_ascii(path: &Path) -> Result<SemanticPointCloud, MapError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut points = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(MapError::Parse {
                line: line_no,
                msg: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64, MapError> {
            s.parse().map_err(|e| MapError::Parse {
                line: line_no,
                msg: format!("bad float {s:?}: {e}"),
            })
        };
        let x = parse_f(fields[0])?;
        let y = parse_f(fields[1])?;
        let z = parse_f(fields[2])?;
        let class_id: u16 = fields[3].parse().map_err(|e| MapError::Parse {
            line: line_no,
            msg: format!("bad class id: {e}"),
        })?;
        let intensity = parse_f(fields[4])? as f32;
        let round: u16 = fields[5].parse().map_err(|e| MapError::Parse {
            line: line_no,
            msg: format!("bad round: {e}"),
        })?;
        points.push(SemanticPoint::new(
            Vector3::new(x, y, z),
            class_id,
            intensity,
            round,
        ));
    }
    Ok(SemanticPointCloud::new(points))
}

pub fn write_cloud_ascii(path: &Path, cloud: &SemanticPointCloud) -> Result<(), MapError> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# x y z class_id intensity round")?;
    for p in cloud.points() {
        writeln!(
            out,
            "{} {} {} {} {} {}",
            p.position.x, p.position.y, p.position.z, p.class_id, p.intensity, p.round
        )?;
    }
    Ok(())
}

pub fn read_cloud_binary(path: &Path) -> Result<SemanticPointCloud, MapError> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    if !bytesio::read_magic(&mut reader, MAGIC)? {
        return Err(MapError::BadMagic);
    }
    let count = bytesio::read_u64(&mut reader)? as usize;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let x = bytesio::read_f64(&mut reader)?;
        let y = bytesio::read_f64(&mut reader)?;
        let z = bytesio::read_f64(&mut reader)?;
        let class_id = bytesio::read_u16(&mut reader)?;
        let intensity = bytesio::read_f32(&mut reader)?;
        let round = bytesio::read_u16(&mut reader)?;
        points.push(SemanticPoint::new(
            Vector3::new(x, y, z),
            class_id,
            intensity,
            round,
        ));
    }
    Ok(SemanticPointCloud::new(points))
}

pub fn write_cloud_binary(path: &Path, cloud: &SemanticPointCloud) -> Result<(), MapError> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    bytesio::write_u64(&mut out, cloud.len() as u64)?;
    for p in cloud.points() {
        bytesio::write_f64(&mut out, p.position.x)?;
        bytesio::write_f64(&mut out, p.position.y)?;
        bytesio::write_f64(&mut out, p.position.z)?;
        bytesio::write_u16(&mut out, p.class_id)?;
        bytesio::write_f32(&mut out, p.intensity)?;
        bytesio::write_u16(&mut out, p.round)?;
    }
    Ok(())
}

/// Loads either format, sniffing the `SPC1` magic.
pub fn load_cloud(path: &Path) -> Result<SemanticPointCloud, MapError> {
    let mut file = std::fs::File::open(path)?;
    let mut head = [0u8; 4];
    let n = file.read(&mut head)?;
    drop(file);
    if n == 4 && &head == MAGIC {
        read_cloud_binary(path)
    } else {
        read_cloud_ascii(path)
    }
}
