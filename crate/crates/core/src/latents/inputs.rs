use rayon::prelude::*;

use crate::cohort::Cohort;
use crate::error::Result;
use crate::imaging::{extract_roi, normalize_intensity, select_largest_tumor_slice};

/// Per-subject extractor inputs: the normalized largest-tumor axial slice and
/// the normalized tumor-centred ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectImages {
    pub slice_index: usize,
    pub slice_hw: [usize; 2],
    pub slice: Vec<f32>,
    pub roi_shape: [usize; 3],
    pub roi: Vec<f32>,
}

pub fn prepare_images(cohort: &Cohort, roi_side_mm: f64) -> Result<Vec<SubjectImages>> {
    cohort
        .subjects
        .par_iter()
        .map(|s| {
            let ts = select_largest_tumor_slice(&s.volume, &s.mask)?;
            let v = normalize_intensity(&s.volume)?;
            let roi = extract_roi(&v, &s.mask, roi_side_mm)?;
            Ok(SubjectImages {
                slice_index: ts.index,
                slice_hw: ts.slice.shape,
                slice: ts.slice.pixels,
                roi_shape: roi.volume.shape,
                roi: roi.volume.voxels,
            })
        })
        .collect()
}
