//! Dynamic-range normalization of correlation pairs.
//!
//! Raw correlations span several orders of magnitude. Per pixel, the L1
//! magnitude `r = |i| + |q|` is compressed with `16*sqrt(r + 36) - 96` and
//! both channels are rescaled by the same positive factor, so the phase
//! (and therefore depth) is untouched. A final division by a fixed scale
//! constant lands values in `[-1, 1]`.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tofmodel::RawFrame;

/// Default divisor applied after compression. 64 is a fixed point of the
/// compression curve, so a pixel with `r = 64` maps to exactly
/// `|i'| + |q'| = 1`.
pub const DEFAULT_SCALE_CONST: f64 = 64.0;

/// Compresses an L1 magnitude: `16*sqrt(r + 36) - 96`.
///
/// Computed in rationalized form `16*r / (sqrt(r + 36) + 6)` which is
/// algebraically identical but avoids cancellation for small `r`.
pub fn compress_range(r: f64) -> Result<f64> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "compress_range needs finite r >= 0, got {r}"
        )));
    }
    Ok(16.0 * r / ((r + 36.0).sqrt() + 6.0))
}

/// Inverse of [`compress_range`]: `((c + 96)/16)^2 - 36`, expanded to the
/// cancellation-free form `c*(c + 192)/256`.
pub fn expand_range(c: f64) -> f64 {
    c * (c + 192.0) / 256.0
}

/// Correlation pair after dynamic-range normalization.
///
/// Per pixel, `|i| + |q| <= 1` and the sign pattern matches the source
/// frame. `clamped` counts pixels whose compressed magnitude exceeded the
/// scale constant and was capped; those pixels keep their phase but lose
/// amplitude information.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFrame {
    i_plane: Image,
    q_plane: Image,
    frequency_hz: f64,
    scale_const: f64,
    clamped: usize,
}

impl NormalizedFrame {
    /// Wraps already-normalized planes, e.g. sampler output. The caller
    /// asserts that no pixel was produced by clamping.
    pub fn from_planes(
        i_plane: Image,
        q_plane: Image,
        frequency_hz: f64,
        scale_const: f64,
    ) -> Result<Self> {
        if !i_plane.same_size(&q_plane) {
            return Err(Error::DimensionMismatch(
                "i and q planes differ in size".into(),
            ));
        }
        if !(scale_const.is_finite() && scale_const > 0.0) {
            return Err(Error::InvalidParam("scale_const must be positive".into()));
        }
        if !i_plane.all_finite() || !q_plane.all_finite() {
            return Err(Error::NonFinite("normalized frame"));
        }
        Ok(Self {
            i_plane,
            q_plane,
            frequency_hz,
            scale_const,
            clamped: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.i_plane.width()
    }

    pub fn height(&self) -> usize {
        self.i_plane.height()
    }

    pub fn i_plane(&self) -> &Image {
        &self.i_plane
    }

    pub fn q_plane(&self) -> &Image {
        &self.q_plane
    }

    pub fn frequency_hz(&self) -> f64 {
        self.frequency_hz
    }

    pub fn scale_const(&self) -> f64 {
        self.scale_const
    }

    /// Number of pixels whose compressed magnitude was capped.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    /// Views the normalized planes as a correlation frame. Phase-preserving
    /// rescaling means depth reconstructed from this view matches depth from
    /// the raw frame wherever both are above the amplitude floor.
    pub fn as_raw(&self) -> RawFrame {
        RawFrame::new(
            self.i_plane.clone(),
            self.q_plane.clone(),
            self.frequency_hz,
        )
        .expect("normalized planes are finite")
    }
}

/// Normalizes a correlation frame into `[-1, 1]`.
///
/// Pixels with zero magnitude map to `(0, 0)` exactly. Compression that
/// overshoots `scale_const` is capped radially (both channels rescaled
/// together), preserving phase and the `|i| + |q| <= 1` invariant.
pub fn normalize_pair(frame: &RawFrame, scale_const: f64) -> Result<NormalizedFrame> {
    if !(scale_const.is_finite() && scale_const > 0.0) {
        return Err(Error::InvalidParam(format!(
            "scale_const must be positive, got {scale_const}"
        )));
    }
    let (w, h) = (frame.width(), frame.height());
    let mut i_out = Image::zeros(w, h);
    let mut q_out = Image::zeros(w, h);
    let mut clamped = 0usize;
    for y in 0..h {
        for x in 0..w {
            let i = frame.i_plane().get(x, y);
            let q = frame.q_plane().get(x, y);
            let r = i.abs() + q.abs();
            if r == 0.0 {
                continue;
            }
            let mut c = compress_range(r)?;
            if c > scale_const {
                c = scale_const;
                clamped += 1;
            }
            let factor = c / (r * scale_const);
            i_out.set(x, y, i * factor);
            q_out.set(x, y, q * factor);
        }
    }
    Ok(NormalizedFrame {
        i_plane: i_out,
        q_plane: q_out,
        frequency_hz: frame.frequency_hz(),
        scale_const,
        clamped,
    })
}

/// Inverts [`normalize_pair`]. Fails if any pixel was clamped, since the
/// cap is not invertible.
pub fn denormalize_pair(frame: &NormalizedFrame) -> Result<RawFrame> {
    if frame.clamped > 0 {
        return Err(Error::Clamped {
            count: frame.clamped,
        });
    }
    let (w, h) = (frame.width(), frame.height());
    let mut i_out = Image::zeros(w, h);
    let mut q_out = Image::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = frame.i_plane.get(x, y);
            let q = frame.q_plane.get(x, y);
            let c = (i.abs() + q.abs()) * frame.scale_const;
            if c == 0.0 {
                continue;
            }
            let r = expand_range(c);
            let factor = r * frame.scale_const / c;
            i_out.set(x, y, i * factor);
            q_out.set(x, y, q * factor);
        }
    }
    RawFrame::new(i_out, q_out, frame.frequency_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn compression_fixed_values() {
        // 16*sqrt(36) - 96 = 0; 16*sqrt(49) - 96 = 16; 16*sqrt(100) - 96 = 64
        assert_eq!(compress_range(0.0).unwrap(), 0.0);
        assert!((compress_range(13.0).unwrap() - 16.0).abs() < 1e-12);
        assert!((compress_range(64.0).unwrap() - 64.0).abs() < 1e-12);
    }

    #[test]
    fn compression_matches_textbook_form() {
        let mut rng = rng::stream(1, &[]);
        for _ in 0..1000 {
            let r: f64 = rng.gen::<f64>() * 1e4;
            let stable = compress_range(r).unwrap();
            let naive = 16.0 * (r + 36.0).sqrt() - 96.0;
            assert!((stable - naive).abs() <= 1e-9 * naive.max(1.0));
        }
    }

    #[test]
    fn compression_rejects_bad_input() {
        assert!(compress_range(-1.0).is_err());
        assert!(compress_range(f64::NAN).is_err());
        assert!(compress_range(f64::INFINITY).is_err());
    }

    fn frame_1x1(i: f64, q: f64) -> RawFrame {
        RawFrame::new(
            Image::constant(1, 1, i),
            Image::constant(1, 1, q),
            2.0e7,
        )
        .unwrap()
    }

    #[test]
    fn zero_pixel_is_fixed_point() {
        let n = normalize_pair(&frame_1x1(0.0, 0.0), 64.0).unwrap();
        assert_eq!(n.i_plane().get(0, 0), 0.0);
        assert_eq!(n.q_plane().get(0, 0), 0.0);
        let back = denormalize_pair(&n).unwrap();
        assert_eq!(back.i_plane().get(0, 0), 0.0);
    }

    #[test]
    fn fixed_point_pixel_passes_through() {
        // r = 48 + 16 = 64 is a fixed point, so output is just x / 64
        let n = normalize_pair(&frame_1x1(48.0, 16.0), 64.0).unwrap();
        assert!((n.i_plane().get(0, 0) - 0.75).abs() < 1e-12);
        assert!((n.q_plane().get(0, 0) - 0.25).abs() < 1e-12);
        assert_eq!(n.clamped_count(), 0);
    }

    #[test]
    fn small_pair_matches_closed_form() {
        // r = 7, c = 16*sqrt(43) - 96
        let c = 16.0 * 43.0_f64.sqrt() - 96.0;
        let n = normalize_pair(&frame_1x1(3.0, 4.0), 64.0).unwrap();
        let expect_i = c * 3.0 / 7.0 / 64.0;
        let expect_q = c * 4.0 / 7.0 / 64.0;
        assert!((n.i_plane().get(0, 0) - expect_i).abs() < 1e-12);
        assert!((n.q_plane().get(0, 0) - expect_q).abs() < 1e-12);
        // frozen from evaluating the closed form at full f64 precision
        assert!((expect_i - 0.059_725_56).abs() < 1e-7);
        assert!((expect_q - 0.079_634_07).abs() < 1e-7);
    }

    #[test]
    fn round_trip_recovers_raw_values() {
        for (i, q) in [(3.0, 4.0), (48.0, 16.0), (-5.0, 0.25), (0.001, -0.002)] {
            let n = normalize_pair(&frame_1x1(i, q), 64.0).unwrap();
            let back = denormalize_pair(&n).unwrap();
            let ei = (back.i_plane().get(0, 0) - i).abs() / i.abs().max(1e-300);
            let eq = (back.q_plane().get(0, 0) - q).abs() / q.abs().max(1e-300);
            assert!(ei < 1e-10 && eq < 1e-10, "({i},{q}) -> ({ei},{eq})");
        }
    }

    #[test]
    fn clamped_pixels_are_not_invertible() {
        // r far above the fixed point overshoots scale_const and gets capped
        let n = normalize_pair(&frame_1x1(4000.0, 4000.0), 64.0).unwrap();
        assert_eq!(n.clamped_count(), 1);
        let sum = n.i_plane().get(0, 0).abs() + n.q_plane().get(0, 0).abs();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(matches!(
            denormalize_pair(&n),
            Err(Error::Clamped { count: 1 })
        ));
    }

    #[test]
    fn normalization_preserves_sign_and_phase() {
        let mut rng = rng::stream(2, &[]);
        for _ in 0..2000 {
            let amp = 10f64.powf(rng.gen::<f64>() * 4.0 - 2.0); // 1e-2 .. 1e2
            let phi = rng.gen::<f64>() * std::f64::consts::TAU;
            let (i, q) = (amp * phi.cos(), amp * phi.sin());
            let n = normalize_pair(&frame_1x1(i, q), 64.0).unwrap();
            let (ni, nq) = (n.i_plane().get(0, 0), n.q_plane().get(0, 0));
            assert_eq!(ni.signum(), i.signum());
            assert_eq!(nq.signum(), q.signum());
            let dphi = (nq.atan2(ni) - q.atan2(i)).abs();
            assert!(dphi < 1e-12, "phase moved by {dphi}");
        }
    }

    #[test]
    fn compression_is_monotone_and_attenuating() {
        let mut prev = compress_range(0.0).unwrap();
        let mut prev_ratio = f64::INFINITY;
        for k in 1..=4000 {
            let r = k as f64 * 0.25; // 0.25 .. 1000
            let c = compress_range(r).unwrap();
            assert!(c > prev, "not monotone at r={r}");
            if r >= 64.0 {
                let ratio = c / r;
                assert!(ratio < prev_ratio, "ratio not decreasing at r={r}");
                prev_ratio = ratio;
            }
            prev = c;
        }
    }
}
