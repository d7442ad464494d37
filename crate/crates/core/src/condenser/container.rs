//! Condensed-set container: key indices plus raw (unclamped) float32 key
//! frames. Clamping to [0, 1] is an export-time concern of the
//! evaluation expansion, not of storage.

use super::{KeyFrame, SparseVideo};
use crate::bytes::{self, Reader};
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::tensor::Tensor;
use std::path::Path;

pub const PVSC_MAGIC: [u8; 4] = *b"PVSC";
pub const PVSC_VERSION: u32 = 1;

/// Layout: magic | version u32 | T,H,W,C u32 | video count u32 | per
/// video: class u32, key count u32, key indices u32[], frames f32[].
pub fn save_condensed(
    videos: &[SparseVideo],
    geometry: &Geometry,
    path: impl AsRef<Path>,
) -> Result<()> {
    geometry.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(&PVSC_MAGIC);
    bytes::push_u32(&mut out, PVSC_VERSION);
    for v in [geometry.t, geometry.h, geometry.w, geometry.c] {
        bytes::push_u32(&mut out, v as u32);
    }
    bytes::push_u32(&mut out, videos.len() as u32);
    for video in videos {
        if video.horizon != geometry.t || video.frame_shape() != geometry.frame_shape().as_slice() {
            return Err(Error::GeometryMismatch {
                file: (video.horizon, video.frame_shape()[0], video.frame_shape()[1], video.frame_shape()[2]),
                expected: (geometry.t, geometry.h, geometry.w, geometry.c),
            });
        }
        bytes::push_u32(&mut out, video.label as u32);
        bytes::push_u32(&mut out, video.key_count() as u32);
        for key in video.keys() {
            bytes::push_u32(&mut out, key.index as u32);
        }
        for key in video.keys() {
            bytes::push_f32s(&mut out, key.frame.data());
        }
    }
    bytes::write_file(path.as_ref(), &out)
}

pub fn load_condensed(path: impl AsRef<Path>) -> Result<(Vec<SparseVideo>, Geometry)> {
    let buf = bytes::read_file(path.as_ref())?;
    let mut r = Reader::new(&buf);
    r.magic(PVSC_MAGIC)?;
    let version = r.u32()?;
    if version != PVSC_VERSION {
        return Err(Error::BadVersion(version));
    }
    let t = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u32()? as usize;
    let geometry = Geometry::new(t, h, w, c);
    geometry.validate()?;
    let count = r.u32()? as usize;

    let mut videos = Vec::with_capacity(count);
    for _ in 0..count {
        let label = r.u32()? as usize;
        let key_count = r.u32()? as usize;
        let indices: Vec<usize> = (0..key_count)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<_>>()?;
        let mut keys = Vec::with_capacity(key_count);
        for index in indices {
            let data = r.f32s(geometry.frame_numel())?;
            keys.push(KeyFrame::new(
                index,
                Tensor::new(geometry.frame_shape().to_vec(), data)?,
            ));
        }
        // SparseVideo::new re-checks the key-set invariants, so corrupt
        // index tables are rejected here.
        videos.push(SparseVideo::new(label, geometry.t, keys)?);
    }
    if r.remaining() != 0 {
        return Err(Error::TrailingBytes(r.remaining()));
    }
    Ok((videos, geometry))
}
