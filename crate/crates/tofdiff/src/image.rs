//! Single-channel float images and masked depth maps.

use crate::error::{Error, Result};

/// Row-major single-channel f64 image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "image data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Clamped lookup; out-of-range coordinates replicate the border pixel.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Depth map in meters with a per-pixel validity mask.
///
/// Invalid pixels always carry the value 0 and mask `false`; consumers treat
/// them as absent measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Image,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a map where every pixel is valid.
    pub fn all_valid(values: Image) -> Result<Self> {
        if !values.all_finite() {
            return Err(Error::NonFinite("depth map"));
        }
        let n = values.len();
        Ok(Self {
            values,
            valid: vec![true; n],
        })
    }

    /// Builds a map from values and mask; invalid pixels are zeroed.
    pub fn new(mut values: Image, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != values.len() {
            return Err(Error::DimensionMismatch(
                "mask length does not match image".into(),
            ));
        }
        if !values.all_finite() {
            return Err(Error::NonFinite("depth map"));
        }
        for (v, ok) in values.data_mut().iter_mut().zip(&valid) {
            if !ok {
                *v = 0.0;
            }
        }
        Ok(Self { values, valid })
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn values(&self) -> &Image {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width() + x]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values.get(x, y)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Applies `f` to valid pixels, leaving invalid ones at zero.
    pub fn map_valid(&self, f: impl Fn(f64) -> f64) -> Result<DepthMap> {
        let mut out = self.values.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            if self.valid[i] {
                *v = f(*v);
            }
        }
        DepthMap::new(out, self.valid.clone())
    }
}

/// Non-negative amplitude image in correlation units.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeMap {
    values: Image,
}

impl AmplitudeMap {
    pub fn new(values: Image) -> Result<Self> {
        if !values.all_finite() {
            return Err(Error::NonFinite("amplitude map"));
        }
        if values.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParam("amplitude must be non-negative".into()));
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

/// Float image with a validity mask; used for error maps.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedImage {
    pub values: Image,
    pub valid: Vec<bool>,
}
