//! Residual maps to binary anomaly masks.
//!
//! Order of operations in [`segment`]: residual, median filter, multiply by
//! the eroded brain mask, strict threshold, small-component removal.

mod components;
mod filter;

pub use components::{label_components, remove_small_components, Connectivity};
pub use filter::{erode_mask, median_filter_3d};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{ImageVolume, MaskVolume, Volume};
use crate::error::{Error, Result};

/// Postprocessing parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub percentile: f32,
    pub median_size: usize,
    pub erosion_radius: usize,
    pub min_component: usize,
    pub connectivity: Connectivity,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            percentile: 98.0,
            median_size: 5,
            erosion_radius: 1,
            min_component: 6,
            connectivity: Connectivity::Six,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        check_percentile(self.percentile)?;
        if self.median_size.is_multiple_of(2) {
            return Err(Error::param(format!("median size must be odd, got {}", self.median_size)));
        }
        if self.min_component == 0 {
            return Err(Error::param("min_component must be at least 1"));
        }
        Ok(())
    }
}

/// Voxelwise reconstruction error with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualVolume {
    pub values: Volume<f32>,
    pub model_id: String,
    pub patient_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f32,
    pub percentile: f32,
    /// Identifies the residual sample the value was fitted on.
    pub source: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    pub mask: MaskVolume,
    pub threshold: Threshold,
    /// Wall-clock seconds per slice; covers reconstruction when produced by
    /// a caller that times it, otherwise only the postprocessing.
    pub seconds_per_sample: f64,
}

/// `|x - x_hat|` voxelwise.
pub fn residual(x: &ImageVolume, x_hat: &ImageVolume) -> Result<Volume<f32>> {
    x.ensure_same_dims(x_hat, "residual")?;
    let data = x.data().iter().zip(x_hat.data()).map(|(a, b)| (a - b).abs()).collect();
    Volume::new(x.dims(), data)
}

fn check_percentile(p: f32) -> Result<()> {
    if p > 0.0 && p <= 100.0 {
        Ok(())
    } else {
        Err(Error::param(format!("percentile {p} outside (0, 100]")))
    }
}

/// Nearest-rank percentile: the sorted sample at 1-based index
/// `ceil(p/100 * n)`.
pub fn fit_threshold(
    residuals: impl IntoIterator<Item = f32>,
    percentile: f32,
    source: impl Into<String>,
) -> Result<Threshold> {
    check_percentile(percentile)?;
    let mut values: Vec<f32> = residuals.into_iter().collect();
    if values.is_empty() {
        return Err(Error::contract("cannot fit a threshold on an empty residual sample"));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("residual sample contains {bad}")));
    }
    let n = values.len();
    // p * n / 100 keeps integer-valued products exact
    let rank = ((f64::from(percentile) * n as f64 / 100.0).ceil() as usize).clamp(1, n);
    let (_, v, _) = values.select_nth_unstable_by(rank - 1, f32::total_cmp);
    Ok(Threshold {
        value: *v,
        percentile,
        source: source.into(),
    })
}

/// Median-filtered residual restricted to the eroded brain mask; the
/// masked-out voxels are zero.
pub fn filtered_residual(
    x: &ImageVolume,
    x_hat: &ImageVolume,
    brain_mask: &MaskVolume,
    cfg: &PipelineConfig,
) -> Result<(Volume<f32>, MaskVolume)> {
    x.ensure_same_dims(brain_mask, "brain mask")?;
    let r = median_filter_3d(&residual(x, x_hat)?, cfg.median_size)?;
    let eroded = erode_mask(brain_mask, cfg.erosion_radius);
    let data = r
        .data()
        .iter()
        .zip(eroded.data())
        .map(|(&v, &m)| if m != 0 { v } else { 0.0 })
        .collect();
    Ok((Volume::new(x.dims(), data)?, eroded))
}

/// Raw residuals inside the eroded brain mask, the sample a threshold is
/// fitted on.
pub fn threshold_sample(
    x: &ImageVolume,
    x_hat: &ImageVolume,
    brain_mask: &MaskVolume,
    cfg: &PipelineConfig,
) -> Result<Vec<f32>> {
    x.ensure_same_dims(brain_mask, "brain mask")?;
    let r = residual(x, x_hat)?;
    let eroded = erode_mask(brain_mask, cfg.erosion_radius);
    Ok(r.data()
        .iter()
        .zip(eroded.data())
        .filter(|(_, &m)| m != 0)
        .map(|(&v, _)| v)
        .collect())
}

/// Voxels strictly above `value`.
pub fn apply_threshold(r: &Volume<f32>, value: f32) -> MaskVolume {
    r.map(|v| u8::from(v > value))
}

pub fn segment(
    x: &ImageVolume,
    x_hat: &ImageVolume,
    brain_mask: &MaskVolume,
    thr: &Threshold,
    cfg: &PipelineConfig,
) -> Result<SegmentationResult> {
    cfg.validate()?;
    let start = Instant::now();
    let (r, _) = filtered_residual(x, x_hat, brain_mask, cfg)?;
    let raw = apply_threshold(&r, thr.value);
    let mask = remove_small_components(&raw, cfg.min_component, cfg.connectivity)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(SegmentationResult {
        mask,
        threshold: thr.clone(),
        seconds_per_sample: seconds / x.dims()[0] as f64,
    })
}
