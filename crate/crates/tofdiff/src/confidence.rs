//! Gradient-based confidence maps.
//!
//! Confidence is one minus the min-max-normalized Sobel gradient magnitude
//! of the noisy depth map: low near edges and noise spikes, high on smooth
//! regions. The min-max step makes the map invariant to global depth shifts
//! and positive rescaling.

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};

/// Confidence image with all values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    values: Image,
}

impl ConfidenceMap {
    /// Wraps an existing image, checking the `[0, 1]` invariant.
    pub fn from_image(values: Image) -> Result<Self> {
        if !values.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParam(
                "confidence values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Image {
        &self.values
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values.get(x, y)
    }
}

const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// Horizontal and vertical Sobel responses with replicate-padded borders.
///
/// Kernels are the unnormalized integer Sobel pair; `Ky` is the transpose
/// of `Kx`. Kernel scale is immaterial downstream because the confidence
/// map min-max normalizes the magnitude.
pub fn sobel_gradients(depth: &DepthMap) -> Result<(Image, Image)> {
    let (w, h) = (depth.width(), depth.height());
    if w < 3 || h < 3 {
        return Err(Error::InvalidParam(format!(
            "sobel needs at least 3x3, got {w}x{h}"
        )));
    }
    let img = depth.values();
    let mut gx = Image::zeros(w, h);
    let mut gy = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut sx = 0.0;
            let mut sy = 0.0;
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let v = img.get_clamped(
                        x as isize + kx as isize - 1,
                        y as isize + ky as isize - 1,
                    );
                    sx += KX[ky][kx] * v;
                    sy += KX[kx][ky] * v; // Ky = transpose(Kx)
                }
            }
            gx.set(x, y, sx);
            gy.set(x, y, sy);
        }
    }
    Ok((gx, gy))
}

/// Confidence map `1 - normalized_gradient_magnitude`.
///
/// Invalid pixels are excluded from the min/max statistics and forced to
/// confidence 0. When the gradient magnitude is constant over valid pixels
/// (flat scene) the map is all ones: no gradient means no noise evidence.
pub fn confidence_map(depth: &DepthMap) -> Result<ConfidenceMap> {
    let (gx, gy) = sobel_gradients(depth)?;
    let (w, h) = (depth.width(), depth.height());
    let mut mag = Image::zeros(w, h);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for y in 0..h {
        for x in 0..w {
            let m = gx.get(x, y).hypot(gy.get(x, y));
            mag.set(x, y, m);
            if depth.is_valid(x, y) {
                lo = lo.min(m);
                hi = hi.max(m);
            }
        }
    }
    if !lo.is_finite() {
        return Err(Error::EmptyValidSet);
    }
    let span = hi - lo;
    let mut out = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if !depth.is_valid(x, y) {
                continue; // stays 0
            }
            let c = if span > 0.0 {
                1.0 - (mag.get(x, y) - lo) / span
            } else {
                1.0
            };
            out.set(x, y, c);
        }
    }
    Ok(ConfidenceMap { values: out })
}
