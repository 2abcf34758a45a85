//! Read-only NIfTI-1 ingestion plus a minimal writer for generated volumes.
//!
//! Only single-file `.nii` images with u8/i16/u16/f32 payloads are
//! supported. Byte order is detected from `dim[0]`, which must lie in 1..=7.

use std::path::Path;

use super::volume::{Mask3, Volume, VolumeMeta};
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
const DEFAULT_VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_UINT16: i16 = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

/// The parts of a NIfTI-1 header this crate consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub magic: [u8; 4],
    little_endian: bool,
}

impl NiftiHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::Truncated {
                expected: HEADER_SIZE,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[344..348].try_into().expect("4 bytes");
        if &magic != b"n+1\0" && &magic != b"ni1\0" {
            return Err(Error::BadMagic("NIfTI-1 header".into()));
        }
        let le_dim0 = i16::from_le_bytes([bytes[40], bytes[41]]);
        let endian = if (1..=7).contains(&le_dim0) {
            Endian::Little
        } else {
            let be_dim0 = i16::from_be_bytes([bytes[40], bytes[41]]);
            if !(1..=7).contains(&be_dim0) {
                return Err(Error::invalid(format!("dim[0] = {le_dim0} is not a valid rank in either byte order")));
            }
            Endian::Big
        };
        let i16_at = |off: usize| {
            let b = [bytes[off], bytes[off + 1]];
            match endian {
                Endian::Little => i16::from_le_bytes(b),
                Endian::Big => i16::from_be_bytes(b),
            }
        };
        let f32_at = |off: usize| {
            let b: [u8; 4] = bytes[off..off + 4].try_into().expect("4 bytes");
            match endian {
                Endian::Little => f32::from_le_bytes(b),
                Endian::Big => f32::from_be_bytes(b),
            }
        };
        let mut dim = [0i16; 8];
        let mut pixdim = [0f32; 8];
        for i in 0..8 {
            dim[i] = i16_at(40 + 2 * i);
            pixdim[i] = f32_at(76 + 4 * i);
        }
        Ok(Self {
            dim,
            datatype: i16_at(70),
            bitpix: i16_at(72),
            pixdim,
            vox_offset: f32_at(108),
            scl_slope: f32_at(112),
            scl_inter: f32_at(116),
            magic,
            little_endian: endian == Endian::Little,
        })
    }

    /// Spatial grid size; trailing dimensions beyond the third must be 1.
    pub fn dims3(&self) -> Result<[usize; 3]> {
        let rank = self.dim[0] as usize;
        let mut out = [1usize; 3];
        for i in 0..rank {
            let d = self.dim[i + 1];
            if d < 1 {
                return Err(Error::invalid(format!("dim[{}] = {d}", i + 1)));
            }
            if i < 3 {
                out[i] = d as usize;
            } else if d != 1 {
                return Err(Error::invalid("only 3D volumes are supported"));
            }
        }
        Ok(out)
    }

    pub fn spacing(&self) -> [f64; 3] {
        let mut s = [1.0; 3];
        for (i, v) in s.iter_mut().enumerate() {
            let p = self.pixdim[i + 1].abs() as f64;
            if p > 0.0 {
                *v = p;
            }
        }
        s
    }

    pub fn is_little_endian(&self) -> bool {
        self.little_endian
    }
}

/// Raw decoded image: header, grid, and scaled intensities.
#[derive(Clone, Debug)]
pub struct NiftiImage {
    pub header: NiftiHeader,
    pub dims: [usize; 3],
    pub data: Vec<f32>,
}

pub fn parse_nifti(bytes: &[u8]) -> Result<NiftiImage> {
    let header = NiftiHeader::parse(bytes)?;
    let dims = header.dims3()?;
    let width = match header.datatype {
        DT_UINT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let offset = (header.vox_offset as usize).max(HEADER_SIZE);
    let n: usize = dims.iter().product();
    let expected = offset + n * width;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let payload = &bytes[offset..expected];
    let le = header.little_endian;
    let mut data: Vec<f32> = match header.datatype {
        DT_UINT8 => payload.iter().map(|&b| b as f32).collect(),
        DT_INT16 => payload
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                (if le { i16::from_le_bytes(b) } else { i16::from_be_bytes(b) }) as f32
            })
            .collect(),
        DT_UINT16 => payload
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                (if le { u16::from_le_bytes(b) } else { u16::from_be_bytes(b) }) as f32
            })
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| {
                let b: [u8; 4] = c.try_into().expect("4 bytes");
                if le {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                }
            })
            .collect(),
    };
    if header.scl_slope != 0.0 && header.scl_slope.is_finite() {
        let (m, b) = (header.scl_slope, header.scl_inter);
        for v in data.iter_mut() {
            *v = *v * m + b;
        }
    }
    Ok(NiftiImage { header, dims, data })
}

pub fn read_nifti(path: &Path) -> Result<NiftiImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_nifti(&bytes)
}

/// Loads an intensity volume. The brain mask is the set of positive
/// voxels (inputs are expected to be skull-stripped).
pub fn load_nifti(path: &Path) -> Result<Volume> {
    let img = read_nifti(path)?;
    let brain = Mask3::new(img.dims, img.data.iter().map(|&v| v > 0.0).collect())?;
    Volume::new(img.dims, img.header.spacing(), img.data, brain, None, VolumeMeta::default())
}

pub fn load_mask(path: &Path) -> Result<Mask3> {
    let img = read_nifti(path)?;
    Mask3::new(img.dims, img.data.iter().map(|&v| v > 0.5).collect())
}

/// Loads an intensity volume with explicit brain and optional lesion masks.
pub fn load_volume_with_masks(image: &Path, brain: &Path, lesion: Option<&Path>, meta: VolumeMeta) -> Result<Volume> {
    let img = read_nifti(image)?;
    let brain = load_mask(brain)?;
    let lesion = lesion.map(load_mask).transpose()?;
    Volume::new(img.dims, img.header.spacing(), img.data, brain, lesion, meta)
}

fn header_bytes(dims: [usize; 3], spacing: [f64; 3], datatype: i16, bitpix: i16) -> Vec<u8> {
    let mut h = vec![0u8; DEFAULT_VOX_OFFSET];
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    h[70..72].copy_from_slice(&datatype.to_le_bytes());
    h[72..74].copy_from_slice(&bitpix.to_le_bytes());
    let pixdim: [f32; 8] = [1.0, spacing[0] as f32, spacing[1] as f32, spacing[2] as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
    }
    h[108..112].copy_from_slice(&(DEFAULT_VOX_OFFSET as f32).to_le_bytes());
    h[112..116].copy_from_slice(&1.0f32.to_le_bytes());
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

fn check_grid(dims: [usize; 3], len: usize) -> Result<()> {
    let n: usize = dims.iter().product();
    if n != len || dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Shape {
            op: "write_nifti",
            dim: "voxel count",
            expected: n,
            actual: len,
        });
    }
    Ok(())
}

pub fn write_nifti_f32(path: &Path, dims: [usize; 3], spacing: [f64; 3], data: &[f32]) -> Result<()> {
    check_grid(dims, data.len())?;
    let mut bytes = header_bytes(dims, spacing, DT_FLOAT32, 32);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_nifti_mask(path: &Path, mask: &Mask3, spacing: [f64; 3]) -> Result<()> {
    check_grid(mask.dims(), mask.data().len())?;
    let mut bytes = header_bytes(mask.dims(), spacing, DT_UINT8, 8);
    bytes.extend(mask.data().iter().map(|&b| b as u8));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
