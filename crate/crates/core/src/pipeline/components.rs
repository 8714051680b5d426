use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::{MaskVolume, Volume};
use crate::error::{Error, Result};

/// Voxel adjacency: shared faces (6), faces or edges (18), or any contact
/// (26).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    #[default]
    Six,
    Eighteen,
    TwentySix,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(format!("connectivity must be 6, 18 or 26, got {v}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let n = dz.abs() + dy.abs() + dx.abs();
                    let keep = match self {
                        Connectivity::Six => n == 1,
                        Connectivity::Eighteen => n == 1 || n == 2,
                        Connectivity::TwentySix => n > 0,
                    };
                    if keep {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

/// Labels connected foreground voxels 1..=k in scan order of their first
/// voxel; background is 0. Returns the labels and each component's size.
pub fn label_components(mask: &MaskVolume, conn: Connectivity) -> (Volume<u32>, Vec<usize>) {
    let [d, h, w] = mask.dims();
    let offsets = conn.offsets();
    let mut labels = vec![0u32; mask.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if mask.data()[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (z, y, x) = (i / (h * w), (i / w) % h, i % w);
            for o in &offsets {
                let (zz, yy, xx) = (z as isize + o[0], y as isize + o[1], x as isize + o[2]);
                if zz < 0 || yy < 0 || xx < 0 || zz >= d as isize || yy >= h as isize || xx >= w as isize {
                    continue;
                }
                let j = (zz as usize * h + yy as usize) * w + xx as usize;
                if mask.data()[j] != 0 && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    (Volume::new(mask.dims(), labels).expect("same dims"), sizes)
}

/// Clears every component with fewer than `min_voxels` voxels.
pub fn remove_small_components(mask: &MaskVolume, min_voxels: usize, conn: Connectivity) -> Result<MaskVolume> {
    if min_voxels == 0 {
        return Err(Error::param("min_voxels must be at least 1"));
    }
    let (labels, sizes) = label_components(mask, conn);
    Ok(labels.map(|l| u8::from(l != 0 && sizes[l as usize - 1] >= min_voxels)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> MaskVolume {
        let mut m = Volume::filled([3, 3, 10], 0u8);
        for x in 0..n {
            let i = m.index(1, 1, x);
            m.data_mut()[i] = 1;
        }
        m
    }

    #[test]
    fn size_rule() {
        assert_eq!(remove_small_components(&line(5), 6, Connectivity::Six).unwrap().count(), 0);
        assert_eq!(remove_small_components(&line(6), 6, Connectivity::Six).unwrap(), line(6));
        let empty = Volume::filled([2, 2, 2], 0u8);
        assert_eq!(remove_small_components(&empty, 6, Connectivity::Six).unwrap(), empty);
        assert!(remove_small_components(&empty, 0, Connectivity::Six).is_err());
    }

    #[test]
    fn diagonal_neighbours_depend_on_connectivity() {
        let mut m = Volume::filled([2, 2, 2], 0u8);
        m.data_mut()[0] = 1;
        m.data_mut()[7] = 1;
        assert_eq!(label_components(&m, Connectivity::Six).1, vec![1, 1]);
        assert_eq!(label_components(&m, Connectivity::Eighteen).1, vec![1, 1]);
        assert_eq!(label_components(&m, Connectivity::TwentySix).1, vec![2]);
        let c: Connectivity = serde_json::from_str("18").unwrap();
        assert_eq!(c, Connectivity::Eighteen);
        assert!(serde_json::from_str::<Connectivity>("7").is_err());
    }
}
