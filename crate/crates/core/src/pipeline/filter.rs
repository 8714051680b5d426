use crate::data::{MaskVolume, Volume};
use crate::error::{Error, Result};

/// Median over the `size³` neighbourhood of every voxel, replicating edge
/// voxels beyond the border.
pub fn median_filter_3d(r: &Volume<f32>, size: usize) -> Result<Volume<f32>> {
    if size.is_multiple_of(2) {
        return Err(Error::param(format!("median filter size must be odd, got {size}")));
    }
    let [d, h, w] = r.dims();
    let half = (size / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut window = Vec::with_capacity(size * size * size);
    let mut out = Vec::with_capacity(r.len());
    let src = r.data();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                window.clear();
                for dz in -half..=half {
                    let zz = clamp(z as isize + dz, d);
                    for dy in -half..=half {
                        let row = (zz * h + clamp(y as isize + dy, h)) * w;
                        for dx in -half..=half {
                            window.push(src[row + clamp(x as isize + dx, w)]);
                        }
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable_by(mid, f32::total_cmp);
                out.push(*m);
            }
        }
    }
    Volume::new(r.dims(), out)
}

/// Binary erosion with a `(2r+1)³` box. Neighbours outside the volume are
/// ignored, so a mask touching the border is only eroded from inside.
pub fn erode_mask(mask: &MaskVolume, radius: usize) -> MaskVolume {
    if radius == 0 {
        return mask.map(|v| u8::from(v != 0));
    }
    // Separable: a box erosion is the composition of three 1D min filters.
    let mut cur = mask.map(|v| u8::from(v != 0));
    let dims = mask.dims();
    for axis in 0..3 {
        let stride = match axis {
            0 => dims[1] * dims[2],
            1 => dims[2],
            _ => 1,
        };
        let n = dims[axis];
        let src = cur.data().to_vec();
        let dst = cur.data_mut();
        for (i, out) in dst.iter_mut().enumerate() {
            if src[i] == 0 {
                continue;
            }
            let pos = (i / stride) % n;
            let lo = pos.saturating_sub(radius);
            let hi = (pos + radius).min(n - 1);
            let base = i - pos * stride;
            if (lo..=hi).any(|p| src[base + p * stride] == 0) {
                *out = 0;
            }
        }
    }
    cur
}
