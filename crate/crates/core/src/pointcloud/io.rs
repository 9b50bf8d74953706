//! Binary PGM depth/mask images, intrinsics JSON and ASCII XYZ clouds.

use std::fs;
use std::path::Path;

use super::{DepthFrame, Intrinsics, MaskFrame, PointCloud, PointCloudError};
use crate::geometry::Vec3;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PointCloudError + '_ {
    move |source| PointCloudError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> PointCloudError {
    PointCloudError::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

struct Pgm {
    width: usize,
    height: usize,
    maxval: u32,
    data: Vec<u8>,
}

fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Pgm, PointCloudError> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fmt_err(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(fmt_err(
            path,
            format!("expected binary PGM (P5), found {}", fields[0]),
        ));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| fmt_err(path, format!("bad {what} `{s}`")))
    };
    let width = num(&fields[1], "width")?;
    let height = num(&fields[2], "height")?;
    let maxval = num(&fields[3], "maxval")? as u32;
    if maxval == 0 || maxval > 65535 {
        return Err(fmt_err(path, format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bpp = if maxval > 255 { 2 } else { 1 };
    let need = width * height * bpp;
    if bytes.len() < pos + need {
        return Err(fmt_err(
            path,
            format!(
                "raster has {} bytes, expected {need}",
                bytes.len().saturating_sub(pos)
            ),
        ));
    }
    Ok(Pgm {
        width,
        height,
        maxval,
        data: bytes[pos..pos + need].to_vec(),
    })
}

/// Reads a 16-bit (big-endian) binary PGM holding millimeter depth.
pub fn read_depth_pgm(path: &Path, intrinsics: Intrinsics) -> Result<DepthFrame, PointCloudError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let pgm = parse_pgm(&bytes, path)?;
    if pgm.maxval <= 255 {
        return Err(fmt_err(path, "depth PGM must be 16-bit (maxval > 255)"));
    }
    let depth = pgm
        .data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    DepthFrame::new(pgm.width, pgm.height, depth, intrinsics)
}

pub fn write_depth_pgm(path: &Path, frame: &DepthFrame) -> Result<(), PointCloudError> {
    let mut out = format!("P5\n{} {}\n65535\n", frame.width, frame.height).into_bytes();
    for d in &frame.depth {
        out.extend_from_slice(&d.to_be_bytes());
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Reads an 8-bit binary PGM mask.
pub fn read_mask_pgm(path: &Path) -> Result<MaskFrame, PointCloudError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let pgm = parse_pgm(&bytes, path)?;
    if pgm.maxval > 255 {
        return Err(fmt_err(path, "mask PGM must be 8-bit"));
    }
    MaskFrame::new(pgm.width, pgm.height, pgm.data)
}

pub fn write_mask_pgm(path: &Path, mask: &MaskFrame) -> Result<(), PointCloudError> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend_from_slice(&mask.mask);
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics, PointCloudError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let k: Intrinsics = serde_json::from_str(&text).map_err(|e| fmt_err(path, e.to_string()))?;
    if !(k.fx > 0.0 && k.fy > 0.0) {
        return Err(fmt_err(path, "fx and fy must be positive"));
    }
    Ok(k)
}

/// One `x y z` triple per line, meters. Blank lines and `#` comments are skipped.
pub fn read_xyz(path: &Path) -> Result<PointCloud, PointCloudError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| fmt_err(path, format!("line {}: {e}", i + 1)))?;
        if vals.len() != 3 || vals.iter().any(|v| !v.is_finite()) {
            return Err(fmt_err(
                path,
                format!("line {}: expected three finite numbers", i + 1),
            ));
        }
        points.push(Vec3::new(vals[0], vals[1], vals[2]));
    }
    Ok(PointCloud::new(points))
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<(), PointCloudError> {
    let mut out = String::new();
    for p in &cloud.points {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    fs::write(path, out).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let k = Intrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        };
        let frame = DepthFrame::new(3, 2, vec![0, 1, 256, 1000, 65535, 7], k).unwrap();
        let p = dir.path().join("d.pgm");
        write_depth_pgm(&p, &frame).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..15], b"P5\n3 2\n65535\n\x00\x00");
        assert_eq!(read_depth_pgm(&p, k).unwrap(), frame);
        let mask = MaskFrame::new(3, 2, vec![0, 1, 2, 3, 4, 255]).unwrap();
        let m = dir.path().join("m.pgm");
        write_mask_pgm(&m, &mask).unwrap();
        assert_eq!(read_mask_pgm(&m).unwrap(), mask);
        assert!(read_depth_pgm(&m, k).is_err());
        fs::write(&m, b"P2\n1 1\n255\n0").unwrap();
        assert!(matches!(
            read_mask_pgm(&m),
            Err(PointCloudError::Format { .. })
        ));
        fs::write(&m, b"P5\n# comment\n2 2\n255\n\x01\x02").unwrap();
        assert!(read_mask_pgm(&m).is_err());
    }

    #[test]
    fn xyz_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.xyz");
        let cloud = PointCloud::new(vec![Vec3::new(0.1, -2.0, 3.5), Vec3::new(1e-3, 0.0, 7.0)]);
        write_xyz(&p, &cloud).unwrap();
        assert_eq!(read_xyz(&p).unwrap(), cloud);
        fs::write(&p, "1 2\n").unwrap();
        assert!(read_xyz(&p).is_err());
    }
}
