//! Slice raster persistence: raw f32 tiles and 16-bit grayscale PNG.

use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, Luma};

use super::volume::Raster;
use crate::error::{Error, Result};

const TILE_MAGIC: &[u8; 4] = b"TILE";

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn encode_tile(r: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * r.data.len());
    out.extend_from_slice(TILE_MAGIC);
    out.extend_from_slice(&(r.rows as u32).to_le_bytes());
    out.extend_from_slice(&(r.cols as u32).to_le_bytes());
    for v in &r.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tile(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != TILE_MAGIC {
        return Err(Error::BadMagic("raster tile".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = 12 + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Raster::new(rows, cols, data)
}

/// Writes a raster; `.png` paths get 16-bit grayscale (values clamped to [0, 1]).
pub fn write_raster(path: &Path, r: &Raster) -> Result<()> {
    if is_png(path) {
        let px: Vec<u16> = r
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16)
            .collect();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(r.cols as u32, r.rows as u32, px)
            .ok_or_else(|| Error::invalid("raster size does not fit a PNG buffer"))?;
        buf.save(path)?;
        return Ok(());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_tile(r)).map_err(|e| Error::io(path, e))
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    if is_png(path) {
        let img = image::open(path)?.into_luma16();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
        return Raster::new(h as usize, w as usize, data);
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tile(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Raster {
        Raster::new(3, 5, (0..15).map(|i| i as f32 / 14.0).collect()).unwrap()
    }

    #[test]
    fn raw_tile_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.tile");
        write_raster(&p, &ramp()).unwrap();
        assert_eq!(read_raster(&p).unwrap(), ramp());
    }

    #[test]
    fn png16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        write_raster(&p, &ramp()).unwrap();
        let back = read_raster(&p).unwrap();
        assert_eq!(back.shape(), (3, 5));
        for (a, b) in back.data.iter().zip(&ramp().data) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }

    #[test]
    fn corrupt_tiles() {
        let mut bytes = encode_tile(&ramp());
        assert!(matches!(decode_tile(&bytes[..20]), Err(Error::Truncated { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode_tile(&bytes), Err(Error::BadMagic(_))));
    }
}
