//! Volumes, synthetic phantoms with ground truth, manifests and the volume
//! file format.

mod io;
mod manifest;
mod phantom;

pub use io::{decode_volume, encode_volume, read_volume, write_volume, Voxel, VOLUME_HEADER_LEN, VOLUME_MAGIC};
pub use manifest::{build_manifest, Manifest, ManifestEntry, Split, SplitConfig};
pub use phantom::{generate_phantom, PhantomParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `D x H x W` voxel grid stored slice-major, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

/// Intensities in `[0, 1]`.
pub type ImageVolume = Volume<f32>;
/// Binary masks with voxels 0 or 1.
pub type MaskVolume = Volume<u8>;

impl<T: Copy> Volume<T> {
    pub fn new(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::dim(format!("volume dims {dims:?} must be positive")));
        }
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        if len != Some(data.len()) {
            return Err(Error::dim(format!(
                "volume dims {dims:?} do not match {} voxels",
                data.len()
            )));
        }
        Ok(Volume { dims, data })
    }

    pub fn filled(dims: [usize; 3], value: T) -> Self {
        Volume {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.index(z, y, x)]
    }

    /// Same dims, voxels mapped through `f`.
    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn slice(&self, z: usize) -> &[T] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn ensure_same_dims<U>(&self, other: &Volume<U>, what: &str) -> Result<()> {
        if self.dims == other.dims {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "{what}: volume dims {:?} and {:?} differ",
                self.dims, other.dims
            )))
        }
    }
}

impl Volume<u8> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Every nonzero voxel of `self` is nonzero in `other`.
    pub fn is_subset_of(&self, other: &Volume<u8>) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| a == 0 || b != 0)
    }
}

impl Volume<f32> {
    /// Axial slices as a `[D, 1, H, W]` model batch.
    pub fn to_batch(&self) -> Tensor {
        let [d, h, w] = self.dims;
        Tensor::new(vec![d, 1, h, w], self.data.clone()).expect("dims are consistent")
    }

    /// Inverse of [`Volume::to_batch`].
    pub fn from_batch(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [d, 1, h, w] => Volume::new([d, h, w], t.data().to_vec()),
            ref s => Err(Error::dim(format!("expected [D,1,H,W] batch, got {s:?}"))),
        }
    }

    /// One axial slice as a `[1, 1, H, W]` tensor.
    pub fn slice_tensor(&self, z: usize) -> Tensor {
        let [_, h, w] = self.dims;
        Tensor::new(vec![1, 1, h, w], self.slice(z).to_vec()).expect("dims are consistent")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Healthy,
    Lesion,
}

/// One subject with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub image: ImageVolume,
    pub brain_mask: MaskVolume,
    /// All zero for the healthy cohort.
    pub lesion_mask: MaskVolume,
    pub cohort: Cohort,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_construction_and_indexing() {
        let v = Volume::new([2, 3, 4], (0..24).map(|i| i as f32).collect()).unwrap();
        assert_eq!(v.get(1, 2, 3), 23.0);
        assert_eq!(v.slice(1)[0], 12.0);
        assert!(Volume::new([2, 3, 4], vec![0u8; 23]).is_err());
        assert!(Volume::new([0, 3, 4], Vec::<u8>::new()).is_err());
        let b = v.to_batch();
        assert_eq!(b.shape(), &[2, 1, 3, 4]);
        assert_eq!(Volume::from_batch(&b).unwrap(), v);
    }

    #[test]
    fn mask_subset() {
        let a = Volume::new([1, 1, 3], vec![0u8, 1, 0]).unwrap();
        let b = Volume::new([1, 1, 3], vec![1u8, 1, 0]).unwrap();
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
        assert_eq!(b.count(), 2);
    }
}
