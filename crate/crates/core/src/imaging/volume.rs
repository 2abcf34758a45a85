use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of every slice raster fed to the networks.
pub const SLICE_SIZE: usize = 256;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub dataset: String,
    pub vendor: String,
    pub subject: String,
}

/// 3D binary grid, x fastest then y then z (NIfTI order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask3 {
    dims: [usize; 3],
    data: Vec<bool>,
}

impl Mask3 {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() || n == 0 {
            return Err(Error::Shape {
                op: "Mask3::new",
                dim: "voxel count",
                expected: n,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![false; dims.iter().product()],
        }
    }

    /// A 2D mask as a single-slice volume.
    pub fn from_2d(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        Self::new([cols, rows, 1], data)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.index(x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn slice(&self, z: usize) -> &[bool] {
        let n = self.dims[0] * self.dims[1];
        &self.data[z * n..(z + 1) * n]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [bool] {
        let n = self.dims[0] * self.dims[1];
        &mut self.data[z * n..(z + 1) * n]
    }
}

/// A scalar MR volume with its brain mask and optional lesion annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    /// `(nx, ny, nz)`: columns, rows and axial slices.
    pub dims: [usize; 3],
    /// Voxel size in millimetres.
    pub spacing: [f64; 3],
    pub voxels: Vec<f32>,
    pub brain_mask: Mask3,
    pub lesion_mask: Option<Mask3>,
    pub meta: VolumeMeta,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        voxels: Vec<f32>,
        brain_mask: Mask3,
        lesion_mask: Option<Mask3>,
        meta: VolumeMeta,
    ) -> Result<Self> {
        let v = Self {
            dims,
            spacing,
            voxels,
            brain_mask,
            lesion_mask,
            meta,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let n: usize = self.dims.iter().product();
        if self.voxels.len() != n {
            return Err(Error::Shape {
                op: "Volume",
                dim: "voxel count",
                expected: n,
                actual: self.voxels.len(),
            });
        }
        if self.brain_mask.dims() != self.dims {
            return Err(Error::invalid("brain mask grid differs from the volume grid"));
        }
        if let Some(l) = &self.lesion_mask {
            if l.dims() != self.dims {
                return Err(Error::invalid("lesion mask grid differs from the volume grid"));
            }
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid(format!("spacing must be positive, got {:?}", self.spacing)));
        }
        Ok(())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn slices(&self) -> usize {
        self.dims[2]
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.dims[0] * self.dims[1];
        &self.voxels[z * n..(z + 1) * n]
    }

    /// A volume with only a whole-grid brain mask.
    pub fn from_voxels(dims: [usize; 3], spacing: [f64; 3], voxels: Vec<f32>) -> Result<Self> {
        let brain = Mask3::new(dims, voxels.iter().map(|&v| v > 0.0).collect())?;
        Self::new(dims, spacing, voxels, brain, None, VolumeMeta::default())
    }
}

/// Row-major 2D raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Raster::new",
                dim: "pixel count",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Tissue classes of a label raster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Tissue {
    Background = 0,
    Brain = 1,
    Lesion = 2,
}

impl Tissue {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Tissue::Background),
            1 => Ok(Tissue::Brain),
            2 => Ok(Tissue::Lesion),
            other => Err(Error::UnknownLabel(other as f64)),
        }
    }
}

/// Row-major tri-level label raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Tissue>,
}

impl LabelMap {
    pub fn new(rows: usize, cols: usize, data: Vec<Tissue>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "LabelMap::new",
                dim: "pixel count",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, t: Tissue) -> Self {
        Self {
            rows,
            cols,
            data: vec![t; rows * cols],
        }
    }

    /// Builds labels from per-pixel brain and lesion flags; lesion wins.
    pub fn from_masks(rows: usize, cols: usize, brain: &[bool], lesion: Option<&[bool]>) -> Self {
        let data = (0..rows * cols)
            .map(|i| {
                if lesion.is_some_and(|l| l[i]) {
                    Tissue::Lesion
                } else if brain[i] {
                    Tissue::Brain
                } else {
                    Tissue::Background
                }
            })
            .collect();
        Self { rows, cols, data }
    }

    pub fn lesion_mask(&self) -> Vec<bool> {
        self.data.iter().map(|&t| t == Tissue::Lesion).collect()
    }

    pub fn brain_mask(&self) -> Vec<bool> {
        self.data.iter().map(|&t| t != Tissue::Background).collect()
    }

    pub fn count(&self, t: Tissue) -> usize {
        self.data.iter().filter(|&&v| v == t).count()
    }
}
