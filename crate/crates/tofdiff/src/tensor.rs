//! Minimal CHW tensor used by the denoiser and sampler.
//!
//! Generic over the float width: training runs at f32 for speed, gradient
//! checks instantiate the same code at f64.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use rand::Rng;

/// Float scalar the network can run at.
pub trait Real: num_traits::Float + std::fmt::Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self
    }
}

/// Dense row-major (channels, height, width) tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "tensor data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Standard-normal tensor drawn from `rng`.
    pub fn randn<R: Rng>(channels: usize, height: usize, width: usize, rng: &mut R) -> Self {
        let mut src = rng::NormalSource::new(rng);
        Self::from_fn(channels, height, width, |_, _, _| T::from_f64(src.next()))
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
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

    #[inline]
    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch("tensor add".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch("tensor add_assign".into()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Stacks `n` copies of an image as channels.
    pub fn replicate_image(img: &Image, n: usize) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut t = Self::zeros(n, h, w);
        for c in 0..n {
            for (dst, src) in t.plane_mut(c).iter_mut().zip(img.data()) {
                *dst = T::from_f64(*src);
            }
        }
        t
    }

    /// Mean over channels, back to a single image.
    pub fn average_channels(&self) -> Image {
        let n = self.height * self.width;
        let mut acc = vec![0.0f64; n];
        for c in 0..self.channels {
            for (a, &v) in acc.iter_mut().zip(self.plane(c)) {
                *a += v.into_f64();
            }
        }
        let inv = 1.0 / self.channels as f64;
        Image::from_vec(self.width, self.height, acc.into_iter().map(|v| v * inv).collect())
            .expect("sizes agree")
    }

    /// Copies an image into channel `c`.
    pub fn set_channel_from_image(&mut self, c: usize, img: &Image) {
        for (dst, src) in self.plane_mut(c).iter_mut().zip(img.data()) {
            *dst = T::from_f64(*src);
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        if a.height != b.height || a.width != b.width {
            return Err(Error::DimensionMismatch("concat_channels".into()));
        }
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Self {
            channels: a.channels + b.channels,
            height: a.height,
            width: a.width,
            data,
        })
    }
}
