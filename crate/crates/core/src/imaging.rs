//! Volume and mask geometry: intensity normalization, tumor volume,
//! largest-diameter axial slice, and tumor-centred cubic ROIs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rvf::{self, DType, RvfData, RvfHeader};

/// T1-like scalar volume in `(z, y, x)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    pub shape: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub voxels: Vec<f32>,
}

/// Binary tumor mask aligned with a [`Volume3D`]; voxels are 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask3D {
    pub shape: [usize; 3],
    pub voxels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub shape: [usize; 2],
    pub spacing_mm: [f64; 2],
    pub pixels: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TumorSlice {
    pub index: usize,
    pub diameter_mm: f64,
    pub slice: Slice2D,
}

/// Cube cut around the tumor centroid; out-of-volume voxels are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Roi3D {
    pub side_mm: f64,
    pub origin_voxel: [i64; 3],
    pub volume: Volume3D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiShape(pub [usize; 3]);

fn idx(shape: &[usize; 3], z: usize, y: usize, x: usize) -> usize {
    (z * shape[1] + y) * shape[2] + x
}

impl Volume3D {
    pub fn new(shape: [usize; 3], spacing_mm: [f64; 3], voxels: Vec<f32>) -> Result<Self> {
        if spacing_mm.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput(format!("spacing must be positive: {spacing_mm:?}")));
        }
        if voxels.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape {
                expected: shape.to_vec(),
                actual: vec![voxels.len()],
            });
        }
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume voxel".into()));
        }
        Ok(Self {
            shape,
            spacing_mm,
            voxels,
        })
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[idx(&self.shape, z, y, x)]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing_mm.iter().product()
    }

    pub fn axial(&self, z: usize) -> Slice2D {
        let plane = self.shape[1] * self.shape[2];
        Slice2D {
            shape: [self.shape[1], self.shape[2]],
            spacing_mm: [self.spacing_mm[1], self.spacing_mm[2]],
            pixels: self.voxels[z * plane..(z + 1) * plane].to_vec(),
        }
    }

    pub fn write_rvf(&self, path: &Path, provenance: Option<serde_json::Value>) -> Result<Vec<u8>> {
        let mut h = RvfHeader::new(self.shape.to_vec(), self.spacing_mm.to_vec(), DType::F32);
        h.provenance = provenance;
        rvf::write(path, &h, &RvfData::F32(self.voxels.clone()))
    }

    pub fn read_rvf(path: &Path) -> Result<(Self, Vec<u8>)> {
        let (h, data, bytes) = rvf::read(path)?;
        let (shape, spacing) = dims3(&h, path)?;
        match data {
            RvfData::F32(v) => Ok((Self::new(shape, spacing, v)?, bytes)),
            RvfData::U8(_) => Err(Error::InvalidInput(format!("{}: expected f32 volume", path.display()))),
        }
    }
}

fn dims3(h: &RvfHeader, path: &Path) -> Result<([usize; 3], [f64; 3])> {
    let shape: [usize; 3] = h.shape.clone().try_into().map_err(|_| {
        Error::InvalidInput(format!("{}: expected 3D shape, got {:?}", path.display(), h.shape))
    })?;
    let spacing: [f64; 3] = h.spacing_mm.clone().try_into().map_err(|_| {
        Error::InvalidInput(format!("{}: expected 3 spacings", path.display()))
    })?;
    Ok((shape, spacing))
}

impl Mask3D {
    pub fn new(shape: [usize; 3], voxels: Vec<u8>) -> Result<Self> {
        if voxels.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape {
                expected: shape.to_vec(),
                actual: vec![voxels.len()],
            });
        }
        if voxels.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("mask voxels must be 0 or 1".into()));
        }
        Ok(Self { shape, voxels })
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> bool {
        self.voxels[idx(&self.shape, z, y, x)] != 0
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v != 0).count()
    }

    pub fn write_rvf(&self, path: &Path, spacing_mm: [f64; 3]) -> Result<Vec<u8>> {
        let h = RvfHeader::new(self.shape.to_vec(), spacing_mm.to_vec(), DType::U8);
        rvf::write(path, &h, &RvfData::U8(self.voxels.clone()))
    }

    pub fn read_rvf(path: &Path) -> Result<(Self, Vec<u8>)> {
        let (h, data, bytes) = rvf::read(path)?;
        let (shape, _) = dims3(&h, path)?;
        match data {
            RvfData::U8(v) => Ok((Self::new(shape, v)?, bytes)),
            RvfData::F32(_) => Err(Error::InvalidInput(format!("{}: expected u8 mask", path.display()))),
        }
    }
}

fn check_pair(v: &Volume3D, m: &Mask3D) -> Result<()> {
    if v.shape != m.shape {
        return Err(Error::Shape {
            expected: v.shape.to_vec(),
            actual: m.shape.to_vec(),
        });
    }
    Ok(())
}

/// Z-scores the nonzero (brain) region; background stays exactly zero.
pub fn normalize_intensity(v: &Volume3D) -> Result<Volume3D> {
    let fg: Vec<f64> = v.voxels.iter().filter(|&&x| x != 0.0).map(|&x| x as f64).collect();
    if fg.is_empty() {
        return Err(Error::ConstantVolume);
    }
    let n = fg.len() as f64;
    let mean = fg.iter().sum::<f64>() / n;
    let var = fg.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::ConstantVolume);
    }
    let sd = var.sqrt();
    let voxels = v
        .voxels
        .iter()
        .map(|&x| if x == 0.0 { 0.0 } else { ((x as f64 - mean) / sd) as f32 })
        .collect();
    Ok(Volume3D {
        shape: v.shape,
        spacing_mm: v.spacing_mm,
        voxels,
    })
}

pub fn tumor_volume_mm3(m: &Mask3D, spacing_mm: [f64; 3]) -> f64 {
    m.count() as f64 * spacing_mm.iter().product::<f64>()
}

/// Exact in-plane Feret diameter (mm) of the mask on axial slice `z`:
/// the largest distance between centres of two boundary pixels.
pub fn feret_diameter_mm(m: &Mask3D, z: usize, spacing_yx: [f64; 2]) -> Option<f64> {
    let [_, h, w] = m.shape;
    let inside = |y: isize, x: isize| {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && m.at(z, y as usize, x as usize)
    };
    let mut boundary = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if inside(y, x)
                && (!inside(y - 1, x) || !inside(y + 1, x) || !inside(y, x - 1) || !inside(y, x + 1))
            {
                boundary.push((y as f64 * spacing_yx[0], x as f64 * spacing_yx[1]));
            }
        }
    }
    if boundary.is_empty() {
        return None;
    }
    let mut best = 0.0f64;
    for (i, a) in boundary.iter().enumerate() {
        for b in &boundary[i + 1..] {
            let d2 = (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
            if d2 > best {
                best = d2;
            }
        }
    }
    Some(best.sqrt())
}

/// Axial index with the largest tumor Feret diameter; ties go to the
/// smallest `z`. Depends on the mask only.
pub fn largest_tumor_slice_index(m: &Mask3D, spacing_mm: [f64; 3]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for z in 0..m.shape[0] {
        if let Some(d) = feret_diameter_mm(m, z, [spacing_mm[1], spacing_mm[2]]) {
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((z, d));
            }
        }
    }
    best.ok_or_else(|| Error::EmptyMask("no tumor voxels for slice selection".into()))
}

/// Normalizes the volume and returns its largest-tumor-diameter axial slice.
pub fn select_largest_tumor_slice(v: &Volume3D, m: &Mask3D) -> Result<TumorSlice> {
    check_pair(v, m)?;
    let (index, diameter_mm) = largest_tumor_slice_index(m, v.spacing_mm)?;
    let norm = normalize_intensity(v)?;
    Ok(TumorSlice {
        index,
        diameter_mm,
        slice: norm.axial(index),
    })
}

/// Mask centre of mass rounded to the nearest voxel.
pub fn mask_centroid_voxel(m: &Mask3D) -> Result<[i64; 3]> {
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for z in 0..m.shape[0] {
        for y in 0..m.shape[1] {
            for x in 0..m.shape[2] {
                if m.at(z, y, x) {
                    sum[0] += z as f64;
                    sum[1] += y as f64;
                    sum[2] += x as f64;
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask("no tumor voxels for ROI centroid".into()));
    }
    Ok(sum.map(|s| (s / n as f64).round() as i64))
}

/// Voxels per axis of a `side_mm` cube at the given spacing.
pub fn roi_shape(side_mm: f64, spacing_mm: [f64; 3]) -> Result<[usize; 3]> {
    if !(side_mm > 0.0) || !side_mm.is_finite() {
        return Err(Error::InvalidInput(format!("ROI side must be positive, got {side_mm}")));
    }
    let s = spacing_mm.map(|sp| (side_mm / sp).round() as usize);
    if s.contains(&0) {
        return Err(Error::InvalidInput(format!(
            "ROI side {side_mm} mm is below one voxel at spacing {spacing_mm:?}"
        )));
    }
    Ok(s)
}

/// Cube of `side_mm` centred on the mask centroid, zero-padded outside the
/// volume.
pub fn extract_roi(v: &Volume3D, m: &Mask3D, side_mm: f64) -> Result<Roi3D> {
    check_pair(v, m)?;
    let n = roi_shape(side_mm, v.spacing_mm)?;
    let c = mask_centroid_voxel(m)?;
    let origin = [0, 1, 2].map(|a| c[a] - (n[a] / 2) as i64);
    let mut out = vec![0.0f32; n.iter().product()];
    for rz in 0..n[0] {
        let z = origin[0] + rz as i64;
        if z < 0 || z >= v.shape[0] as i64 {
            continue;
        }
        for ry in 0..n[1] {
            let y = origin[1] + ry as i64;
            if y < 0 || y >= v.shape[1] as i64 {
                continue;
            }
            for rx in 0..n[2] {
                let x = origin[2] + rx as i64;
                if x < 0 || x >= v.shape[2] as i64 {
                    continue;
                }
                out[(rz * n[1] + ry) * n[2] + rx] = v.at(z as usize, y as usize, x as usize);
            }
        }
    }
    Ok(Roi3D {
        side_mm,
        origin_voxel: origin,
        volume: Volume3D {
            shape: n,
            spacing_mm: v.spacing_mm,
            voxels: out,
        },
    })
}

impl Roi3D {
    pub fn write_rvf(&self, path: &Path, subject: &str) -> Result<Vec<u8>> {
        self.volume.write_rvf(
            path,
            Some(serde_json::json!({
                "subject": subject,
                "kind": "roi",
                "side_mm": self.side_mm,
                "origin_voxel": self.origin_voxel,
            })),
        )
    }
}

impl Slice2D {
    pub fn write_rvf(&self, path: &Path, subject: &str, index: usize) -> Result<Vec<u8>> {
        let mut h = RvfHeader::new(
            vec![1, self.shape[0], self.shape[1]],
            vec![1.0, self.spacing_mm[0], self.spacing_mm[1]],
            DType::F32,
        );
        h.provenance = Some(serde_json::json!({
            "subject": subject,
            "kind": "largest_tumor_slice",
            "axial_index": index,
        }));
        rvf::write(path, &h, &RvfData::F32(self.pixels.clone()))
    }
}
