//! Synthetic brain-like phantoms with exact lesion ground truth.
//!
//! A phantom is a smooth ellipsoidal "brain" whose intensity carries a
//! band-limited texture (a seeded sum of 3D cosines) and a set of thin dark
//! ribbons that wander through the volume like sulci. Lesion subjects
//! additionally receive hyperintense blobs with a flat core and a short
//! edge ramp; the lesion mask is the region where a blob adds at least half
//! its peak boost.

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Cohort, ImageVolume, MaskVolume, PatientRecord, Volume};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomParams {
    pub seed: u64,
    /// `[D, H, W]`.
    pub dims: [usize; 3],
    /// In-plane texture frequency band in cycles per voxel.
    pub texture_band: (f32, f32),
    pub texture_components: usize,
    /// Standard deviation of the texture term.
    pub texture_amplitude: f32,
    pub ribbon_count: usize,
    /// Gaussian half-width of a ribbon in voxels.
    pub ribbon_width: f32,
    /// Fractional darkening at a ribbon's centre line.
    pub ribbon_depth: f32,
    /// Inclusive range of blobs per lesion subject.
    pub lesion_count: (usize, usize),
    /// Blob radius range in voxels.
    pub lesion_radius: (f32, f32),
    /// Peak intensity added by a blob before clamping to 1.
    pub lesion_boost: f32,
    /// Half-width of a blob's edge ramp as a fraction of its radius.
    pub lesion_edge: f32,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            seed: 0,
            dims: [16, 64, 64],
            texture_band: (0.03, 0.09),
            texture_components: 8,
            texture_amplitude: 0.06,
            ribbon_count: 6,
            ribbon_width: 1.0,
            ribbon_depth: 0.35,
            lesion_count: (1, 3),
            lesion_radius: (2.5, 4.5),
            lesion_boost: 0.6,
            lesion_edge: 0.25,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let [d, h, w] = self.dims;
        if d == 0 || h < 16 || w < 16 {
            return Err(Error::config(format!("phantom dims {:?} too small", self.dims)));
        }
        let (lo, hi) = self.lesion_count;
        if lo == 0 || lo > hi {
            return Err(Error::config(format!("lesion_count {:?} must satisfy 1 <= lo <= hi", self.lesion_count)));
        }
        let (rlo, rhi) = self.lesion_radius;
        // A digital ball of radius 1.5 already holds 19 voxels, above the
        // 6-voxel minimum component size.
        if !(rlo >= 1.5 && rlo <= rhi) {
            return Err(Error::config(format!(
                "lesion_radius {:?} must satisfy 1.5 <= lo <= hi",
                self.lesion_radius
            )));
        }
        if 2.0 * rhi + 1.0 > d as f32 {
            return Err(Error::config(format!(
                "lesion radius {rhi} does not fit into {d} slices"
            )));
        }
        let (flo, fhi) = self.texture_band;
        if !(flo > 0.0 && flo <= fhi && fhi < 0.5) {
            return Err(Error::config(format!("texture band {:?} must lie in (0, 0.5)", self.texture_band)));
        }
        if !(0.0..=1.0).contains(&self.ribbon_depth) || self.ribbon_width <= 0.0 {
            return Err(Error::config("ribbon_depth must be in [0, 1] and ribbon_width > 0"));
        }
        if !(self.lesion_edge > 0.0 && self.lesion_edge < 1.0) {
            return Err(Error::config(format!("lesion_edge {} outside (0, 1)", self.lesion_edge)));
        }
        if !(self.lesion_boost > 0.0 && self.texture_amplitude >= 0.0) {
            return Err(Error::config("lesion_boost must be > 0 and texture_amplitude >= 0"));
        }
        Ok(())
    }
}

struct Wave {
    ky: f32,
    kx: f32,
    kz: f32,
    phase: f32,
}

struct Ribbon {
    cos: f32,
    sin: f32,
    offset: f32,
    amplitude: f32,
    freq: f32,
    phase: f32,
    drift: f32,
}

struct Blob {
    z: f32,
    y: f32,
    x: f32,
    radius: f32,
}

/// Smooth ramp from 0 at `e0` to 1 at `e1`.
fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Deterministic phantom for `p.seed`; the cohort decides whether lesions
/// are added. The subject id is derived from cohort and seed.
pub fn generate_phantom(p: &PhantomParams, cohort: Cohort) -> Result<PatientRecord> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let [d, h, w] = p.dims;
    let (hf, wf) = (h as f32, w as f32);

    let cy = hf / 2.0 - 0.5 + rng.random_range(-0.04..0.04) * hf;
    let cx = wf / 2.0 - 0.5 + rng.random_range(-0.04..0.04) * wf;
    let ay = rng.random_range(0.37..0.42) * hf;
    let ax = rng.random_range(0.30..0.35) * wf;
    let zc = (d as f32 - 1.0) / 2.0;
    let zr = 1.6 * d as f32;
    let base = rng.random_range(0.42..0.50);
    let rim = rng.random_range(0.04..0.10);

    let waves: Vec<Wave> = (0..p.texture_components)
        .map(|_| {
            let f = rng.random_range(p.texture_band.0..=p.texture_band.1);
            let angle = rng.random_range(0.0..TAU);
            Wave {
                ky: TAU * f * angle.sin(),
                kx: TAU * f * angle.cos(),
                kz: TAU * rng.random_range(0.0..0.04),
                phase: rng.random_range(0.0..TAU),
            }
        })
        .collect();
    let wave_gain = if waves.is_empty() {
        0.0
    } else {
        p.texture_amplitude * (2.0 / waves.len() as f32).sqrt()
    };

    let ribbons: Vec<Ribbon> = (0..p.ribbon_count)
        .map(|_| {
            let theta = rng.random_range(0.0..TAU);
            Ribbon {
                cos: theta.cos(),
                sin: theta.sin(),
                offset: rng.random_range(-0.6..0.6) * ay.min(ax),
                amplitude: rng.random_range(2.0..5.0),
                freq: rng.random_range(0.12..0.3),
                phase: rng.random_range(0.0..TAU),
                drift: rng.random_range(-0.15..0.15),
            }
        })
        .collect();

    let ellipse = |z: usize, y: usize, x: usize| -> f32 {
        let s = (1.0 - ((z as f32 - zc) / zr).powi(2)).sqrt();
        let dy = (y as f32 - cy) / (ay * s);
        let dx = (x as f32 - cx) / (ax * s);
        (dy * dy + dx * dx).sqrt()
    };

    let mut image = vec![0.0f32; d * h * w];
    let mut brain = vec![0u8; d * h * w];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let r = ellipse(z, y, x);
                if r > 1.0 {
                    continue;
                }
                let i = (z * h + y) * w + x;
                brain[i] = 1;
                let (yf, xf, zf) = (y as f32 - cy, x as f32 - cx, z as f32);
                let texture: f32 = waves
                    .iter()
                    .map(|wv| (wv.ky * yf + wv.kx * xf + wv.kz * zf + wv.phase).cos())
                    .sum::<f32>()
                    * wave_gain;
                let mut v = base + rim * r * r + texture;
                for rb in &ribbons {
                    let u = rb.cos * xf + rb.sin * yf;
                    let n = -rb.sin * xf + rb.cos * yf;
                    let centre = rb.offset + rb.amplitude * (rb.freq * u + rb.phase + rb.drift * zf).sin();
                    let dist = (n - centre) / p.ribbon_width;
                    v *= 1.0 - p.ribbon_depth * (-dist * dist).exp();
                }
                // soft falloff over the outermost ~2 voxels
                let edge_px = 2.0 / ay.min(ax);
                v *= 0.3 + 0.7 * smoothstep(1.0, 1.0 - edge_px, r);
                image[i] = v.clamp(0.0, 1.0);
            }
        }
    }

    let mut lesion = vec![0u8; d * h * w];
    if cohort == Cohort::Lesion {
        let count = rng.random_range(p.lesion_count.0..=p.lesion_count.1);
        let blobs: Vec<Blob> = (0..count)
            .map(|_| {
                let radius = rng.random_range(p.lesion_radius.0..=p.lesion_radius.1);
                let z = rng.random_range(radius..=(d as f32 - 1.0 - radius));
                // rejection-sample a centre well inside the brain
                loop {
                    let y = rng.random_range(cy - ay..cy + ay);
                    let x = rng.random_range(cx - ax..cx + ax);
                    let dy = (y - cy) / ay;
                    let dx = (x - cx) / ax;
                    if (dy * dy + dx * dx).sqrt() + radius / ay.min(ax) < 0.8 {
                        break Blob { z, y, x, radius };
                    }
                }
            })
            .collect();
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let i = (z * h + y) * w + x;
                    if brain[i] == 0 {
                        continue;
                    }
                    let mut boost = 0.0f32;
                    let mut inside = false;
                    for b in &blobs {
                        let dist2 = (z as f32 - b.z).powi(2) + (y as f32 - b.y).powi(2) + (x as f32 - b.x).powi(2);
                        let rel = dist2.sqrt() / b.radius;
                        // full boost inside, half on the boundary, none beyond
                        let g = smoothstep(1.0 + p.lesion_edge, 1.0 - p.lesion_edge, rel);
                        boost = boost.max(g);
                        inside |= rel <= 1.0;
                    }
                    if boost > 0.0 {
                        image[i] = (image[i] + p.lesion_boost * boost).min(1.0);
                    }
                    lesion[i] = u8::from(inside);
                }
            }
        }
    }

    let prefix = match cohort {
        Cohort::Healthy => "healthy",
        Cohort::Lesion => "lesion",
    };
    let image: ImageVolume = Volume::new(p.dims, image)?;
    let brain_mask: MaskVolume = Volume::new(p.dims, brain)?;
    let lesion_mask: MaskVolume = Volume::new(p.dims, lesion)?;
    Ok(PatientRecord {
        id: format!("{prefix}_{:016x}", p.seed),
        image,
        brain_mask,
        lesion_mask,
        cohort,
    })
}
