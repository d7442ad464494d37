//! Video tensor geometry shared across generation, condensation and
//! evaluation: `T` frames of `H×W` pixels with `C` channels, stored
//! channels-last.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Geometry {
    pub const fn new(t: usize, h: usize, w: usize, c: usize) -> Self {
        Geometry { t, h, w, c }
    }

    /// Default desk-scale geometry: 8 frames of 16×16 RGB.
    pub const fn desk() -> Self {
        Geometry::new(8, 16, 16, 3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.h == 0 || self.w == 0 || self.c == 0 {
            return Err(Error::InvalidConfig(format!(
                "geometry extents must be positive, got {}x{}x{}x{}",
                self.t, self.h, self.w, self.c
            )));
        }
        Ok(())
    }

    pub fn frame_numel(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn video_numel(&self) -> usize {
        self.t * self.frame_numel()
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        [self.h, self.w, self.c]
    }

    pub fn video_shape(&self) -> [usize; 4] {
        [self.t, self.h, self.w, self.c]
    }

    pub fn batch_shape(&self, n: usize) -> [usize; 5] {
        [n, self.t, self.h, self.w, self.c]
    }
}

impl std::fmt::Display for Geometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.t, self.h, self.w, self.c)
    }
}
