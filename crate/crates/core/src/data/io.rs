//! Volume file layout (little-endian):
//!
//! | offset | size | field                               |
//! |--------|------|-------------------------------------|
//! | 0      | 6    | magic `AAVOL1`                      |
//! | 6      | 1    | payload type: 0 = f32, 1 = u8       |
//! | 7      | 1    | padding, zero                       |
//! | 8      | 12   | D, H, W as u32                      |
//! | 20     | 12   | reserved, zero                      |
//! | 32     | ...  | D*H*W voxels                        |

use std::fs;
use std::path::Path;

use super::Volume;
use crate::error::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 6] = b"AAVOL1";
pub const VOLUME_HEADER_LEN: usize = 32;

/// Element types the volume format can store.
pub trait Voxel: Copy + Default {
    const TAG: u8;
    const SIZE: usize;
    fn put(self, out: &mut Vec<u8>);
    fn take(bytes: &[u8]) -> Self;
}

impl Voxel for f32 {
    const TAG: u8 = 0;
    const SIZE: usize = 4;

    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn take(b: &[u8]) -> Self {
        f32::from_le_bytes([b[0], b[1], b[2], b[3]])
    }
}

impl Voxel for u8 {
    const TAG: u8 = 1;
    const SIZE: usize = 1;

    fn put(self, out: &mut Vec<u8>) {
        out.push(self);
    }

    fn take(b: &[u8]) -> Self {
        b[0]
    }
}

pub fn encode_volume<T: Voxel>(v: &Volume<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(VOLUME_HEADER_LEN + v.len() * T::SIZE);
    out.extend_from_slice(VOLUME_MAGIC);
    out.push(T::TAG);
    out.push(0);
    for d in v.dims() {
        let d = u32::try_from(d).map_err(|_| Error::format(8, format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&[0; 12]);
    for &x in v.data() {
        x.put(&mut out);
    }
    Ok(out)
}

pub fn decode_volume<T: Voxel>(bytes: &[u8]) -> Result<Volume<T>> {
    if bytes.len() < VOLUME_HEADER_LEN {
        return Err(Error::format(
            bytes.len() as u64,
            format!("header truncated: {} of {VOLUME_HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[..6] != VOLUME_MAGIC {
        return Err(Error::format(0, "missing AAVOL1 magic"));
    }
    if bytes[6] != T::TAG {
        return Err(Error::format(
            6,
            format!("payload type tag {} where {} was expected", bytes[6], T::TAG),
        ));
    }
    if bytes[7] != 0 {
        return Err(Error::format(7, "nonzero padding byte"));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let at = 8 + 4 * i;
        *d = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        if *d == 0 {
            return Err(Error::format(at as u64, "zero dimension"));
        }
    }
    if let Some(pos) = bytes[20..32].iter().position(|&b| b != 0) {
        return Err(Error::format(20 + pos as u64, "nonzero reserved byte"));
    }
    let payload = dims
        .iter()
        .try_fold(T::SIZE, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::format(8, format!("dims {dims:?} overflow the address space")))?;
    let body = &bytes[VOLUME_HEADER_LEN..];
    if body.len() != payload {
        return Err(Error::format(
            (VOLUME_HEADER_LEN + body.len().min(payload)) as u64,
            format!("payload holds {} bytes, dims {dims:?} need {payload}", body.len()),
        ));
    }
    let data = body.chunks_exact(T::SIZE).map(T::take).collect();
    Volume::new(dims, data)
}

pub fn write_volume<T: Voxel>(v: &Volume<T>, path: &Path) -> Result<()> {
    let bytes = encode_volume(v)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_volume<T: Voxel>(path: &Path) -> Result<Volume<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_volume(&bytes)
}
