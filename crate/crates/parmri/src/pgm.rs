//! 8-bit binary PGM export for magnitude images and error maps.

use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Gray mapping: `Linear` scales the image maximum to 255; `FixedMax` uses a
/// shared maximum so several exports stay comparable, and records the scale
/// in a `<path>.scale.txt` sidecar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PgmScale {
    Linear,
    FixedMax(f64),
}

pub fn export_pgm(path: &Path, values: &[f64], h: usize, w: usize, scale: PgmScale) -> Result<()> {
    if values.len() != h * w {
        return Err(Error::ShapeMismatch("pgm buffer length".into()));
    }
    let max = match scale {
        PgmScale::Linear => values.iter().cloned().fold(0.0f64, f64::max),
        PgmScale::FixedMax(m) => {
            if !(m > 0.0) {
                return Err(Error::Parameter("fixed max must be positive".into()));
            }
            m
        }
    };
    let mut bytes = Vec::with_capacity(h * w + 32);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for &v in values {
        let g = if max > 0.0 { ((v / max).clamp(0.0, 1.0) * 255.0).round() as u8 } else { 0 };
        bytes.push(g);
    }
    std::fs::File::create(path)?.write_all(&bytes)?;
    if let PgmScale::FixedMax(m) = scale {
        let sidecar = path.with_extension("pgm.scale.txt");
        std::fs::write(sidecar, format!("max={m:.17e}\n"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_image_is_all_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        export_pgm(&path, &[0.0; 16], 4, 4, PgmScale::Linear).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len = b"P5\n4 4\n255\n".len();
        assert!(bytes[header_len..].iter().all(|&b| b == 0));
    }

    #[test]
    fn linear_scale_maps_max_to_255() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.pgm");
        let mut vals = vec![0.25; 16];
        vals[5] = 2.0;
        export_pgm(&path, &vals, 4, 4, PgmScale::Linear).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len = b"P5\n4 4\n255\n".len();
        assert_eq!(bytes[header_len + 5], 255);
    }

    #[test]
    fn fixed_max_writes_sidecar_and_shares_scale() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.pgm");
        let b = dir.path().join("b.pgm");
        export_pgm(&a, &[0.5; 16], 4, 4, PgmScale::FixedMax(1.0)).unwrap();
        export_pgm(&b, &[0.5; 16], 4, 4, PgmScale::FixedMax(1.0)).unwrap();
        let pa = std::fs::read(&a).unwrap();
        let pb = std::fs::read(&b).unwrap();
        assert_eq!(pa, pb);
        let sidecar = std::fs::read_to_string(dir.path().join("a.pgm.scale.txt")).unwrap();
        assert!(sidecar.starts_with("max="));
    }
}
