//! Spectrogram and anomaly-map images (8-bit binary PGM) and CSV matrices.
//!
//! Images put the highest mel bin on the top row and time left to right.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Intensity range mapped to 0..=255.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scale {
    pub lo: f64,
    pub hi: f64,
}

impl Scale {
    /// Range covering every matrix, so they render comparably.
    pub fn shared(mats: &[&Array2<f64>]) -> Self {
        let (lo, hi) = mats
            .iter()
            .flat_map(|m| m.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if lo.is_finite() {
            Self { lo, hi }
        } else {
            Self { lo: 0.0, hi: 1.0 }
        }
    }

    /// `[0, max]` over the matrices: zero stays black.
    pub fn from_zero(mats: &[&Array2<f64>]) -> Self {
        Self {
            lo: 0.0,
            hi: Self::shared(mats).hi.max(0.0),
        }
    }

    fn level(&self, v: f64) -> u8 {
        if self.hi <= self.lo {
            return 0;
        }
        (((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// Encodes a P5 image.
pub fn pgm_bytes(m: &Array2<f64>, scale: Scale) -> Vec<u8> {
    let (rows, cols) = m.dim();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for r in (0..rows).rev() {
        out.extend(m.row(r).iter().map(|&v| scale.level(v)));
    }
    out
}

pub fn write_pgm(path: impl AsRef<Path>, m: &Array2<f64>, scale: Scale) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, pgm_bytes(m, scale)).map_err(|e| Error::io(path, e))
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut w = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Paths written by [`write_panels`].
#[derive(Debug, Clone)]
pub struct Panels {
    pub original: PathBuf,
    pub reconstruction: PathBuf,
    pub mae_map: PathBuf,
    pub af_map: PathBuf,
}

/// Original and reconstruction share one scale; the MAE and AF maps share
/// another starting at zero. Each image also gets a CSV of its matrix.
pub fn write_panels(
    dir: impl AsRef<Path>,
    stem: &str,
    original: &Array2<f64>,
    reconstruction: &Array2<f64>,
    mae_map: &Array2<f64>,
    af_map: &Array2<f64>,
) -> Result<Panels> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec_scale = Scale::shared(&[original, reconstruction]);
    let map_scale = Scale::from_zero(&[mae_map, af_map]);
    let write = |name: &str, m: &Array2<f64>, s: Scale| -> Result<PathBuf> {
        let path = dir.join(format!("{stem}_{name}.pgm"));
        write_pgm(&path, m, s)?;
        write_matrix_csv(dir.join(format!("{stem}_{name}.csv")), m)?;
        Ok(path)
    };
    Ok(Panels {
        original: write("original", original, spec_scale)?,
        reconstruction: write("reconstruction", reconstruction, spec_scale)?,
        mae_map: write("mae", mae_map, map_scale)?,
        af_map: write("af", af_map, map_scale)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn header_and_orientation() {
        let m = array![[0.0, 1.0, 0.5], [1.0, 1.0, 1.0]];
        let b = pgm_bytes(&m, Scale::shared(&[&m]));
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&b[..header.len()], header);
        // top image row is the last matrix row
        assert_eq!(&b[header.len()..], &[255, 255, 255, 0, 255, 128]);
    }

    #[test]
    fn degenerate_scale_is_black() {
        let m = Array2::from_elem((2, 2), 0.3);
        let b = pgm_bytes(&m, Scale::shared(&[&m]));
        assert!(b[b.len() - 4..].iter().all(|&v| v == 0));
    }

    #[test]
    fn shared_scale_spans_both() {
        let a = array![[0.0, 2.0]];
        let b = array![[-1.0, 1.0]];
        assert_eq!(Scale::shared(&[&a, &b]), Scale { lo: -1.0, hi: 2.0 });
        assert_eq!(Scale::from_zero(&[&a, &b]), Scale { lo: 0.0, hi: 2.0 });
    }
}
