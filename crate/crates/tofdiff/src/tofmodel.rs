//! AMCW time-of-flight model: depth to I/Q correlations and back, sensor
//! noise synthesis, and procedural scene generation.
//!
//! Depth is encoded in the phase of a modulated signal: `phi = 4*pi*f*d / c`.
//! A correlation pair `(i, q) = (A*cos(phi), A*sin(phi))` carries that phase;
//! `atan2(q, i)` recovers it. Everything here is single-frequency; depths
//! must stay inside the unambiguous range `c / (2 f)`.

use crate::error::{Error, Result};
use crate::image::{AmplitudeMap, DepthMap, Image};
use crate::rng::{self, NormalSource};
use rand::Rng;

/// Speed of light in m/s, exact.
pub const C_LIGHT: f64 = 299_792_458.0;

/// Default modulation frequency (20 MHz).
pub const DEFAULT_FREQUENCY_HZ: f64 = 2.0e7;

/// Correlation amplitude below which a pixel is declared invalid:
/// the phase of a near-zero vector is noise-dominated.
pub const AMPLITUDE_FLOOR: f64 = 1e-3;

/// Depth gradient (m per pixel, central differences) above which a pixel
/// counts as a discontinuity for edge-noise injection.
pub const EDGE_GRAD_THRESHOLD: f64 = 0.05;

/// Maximum depth encodable without phase wrapping at `frequency_hz`.
pub fn unambiguous_range(frequency_hz: f64) -> f64 {
    C_LIGHT / (2.0 * frequency_hz)
}

/// Per-frequency pair of in-phase/quadrature correlation images.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    i_plane: Image,
    q_plane: Image,
    frequency_hz: f64,
}

impl RawFrame {
    pub fn new(i_plane: Image, q_plane: Image, frequency_hz: f64) -> Result<Self> {
        if !i_plane.same_size(&q_plane) {
            return Err(Error::DimensionMismatch(
                "i and q planes differ in size".into(),
            ));
        }
        if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
            return Err(Error::InvalidParam(format!(
                "frequency must be positive, got {frequency_hz}"
            )));
        }
        if !i_plane.all_finite() || !q_plane.all_finite() {
            return Err(Error::NonFinite("raw frame"));
        }
        Ok(Self {
            i_plane,
            q_plane,
            frequency_hz,
        })
    }

    pub fn width(&self) -> usize {
        self.i_plane.width()
    }

    pub fn height(&self) -> usize {
        self.i_plane.height()
    }

    pub fn frequency_hz(&self) -> f64 {
        self.frequency_hz
    }

    pub fn i_plane(&self) -> &Image {
        &self.i_plane
    }

    pub fn q_plane(&self) -> &Image {
        &self.q_plane
    }

    #[inline]
    pub fn amplitude_at(&self, x: usize, y: usize) -> f64 {
        self.i_plane.get(x, y).hypot(self.q_plane.get(x, y))
    }
}

/// Parametric sensor-noise model for correlation frames.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseParams {
    /// Signal-independent Gaussian std, correlation units.
    pub read_sigma: f64,
    /// Signal-dependent variance coefficient: var += shot_gain * amplitude.
    pub shot_gain: f64,
    /// Std of additive depth perturbation near discontinuities, meters.
    pub edge_noise_sigma: f64,
    /// Chebyshev radius (pixels) of the band around discontinuities.
    pub edge_noise_band: usize,
    /// Probability that a low-amplitude pixel returns zero signal.
    pub dropout_prob: f64,
}

impl NoiseParams {
    pub fn zero() -> Self {
        Self {
            read_sigma: 0.0,
            shot_gain: 0.0,
            edge_noise_sigma: 0.0,
            edge_noise_band: 0,
            dropout_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("read_sigma", self.read_sigma),
            ("shot_gain", self.shot_gain),
            ("edge_noise_sigma", self.edge_noise_sigma),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.dropout_prob.is_finite() && (0.0..=1.0).contains(&self.dropout_prob)) {
            return Err(Error::InvalidParam(format!(
                "dropout_prob must be in [0,1], got {}",
                self.dropout_prob
            )));
        }
        Ok(())
    }
}

/// Converts a depth/amplitude pair into an ideal correlation frame.
///
/// Invalid depth pixels map to `(0, 0)`. Valid pixels must lie inside
/// `[0, unambiguous_range)`.
pub fn depth_to_correlations(
    depth: &DepthMap,
    amplitude: &AmplitudeMap,
    frequency_hz: f64,
) -> Result<RawFrame> {
    if depth.width() != amplitude.width() || depth.height() != amplitude.height() {
        return Err(Error::DimensionMismatch(
            "depth and amplitude differ in size".into(),
        ));
    }
    if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
        return Err(Error::InvalidParam(format!(
            "frequency must be positive, got {frequency_hz}"
        )));
    }
    let range = unambiguous_range(frequency_hz);
    let (w, h) = (depth.width(), depth.height());
    let mut i_plane = Image::zeros(w, h);
    let mut q_plane = Image::zeros(w, h);
    let phase_per_meter = 4.0 * std::f64::consts::PI * frequency_hz / C_LIGHT;
    for y in 0..h {
        for x in 0..w {
            if !depth.is_valid(x, y) {
                continue;
            }
            let d = depth.get(x, y);
            if !(0.0..range).contains(&d) {
                return Err(Error::DepthOutOfRange { depth: d, range });
            }
            let a = amplitude.get(x, y);
            let phi = phase_per_meter * d;
            i_plane.set(x, y, a * phi.cos());
            q_plane.set(x, y, a * phi.sin());
        }
    }
    RawFrame::new(i_plane, q_plane, frequency_hz)
}

/// Reconstructs depth from a correlation frame.
///
/// Pixels whose amplitude falls below [`AMPLITUDE_FLOOR`] are marked invalid.
pub fn correlations_to_depth(frame: &RawFrame) -> Result<DepthMap> {
    let f = frame.frequency_hz();
    if !(f.is_finite() && f > 0.0) {
        return Err(Error::InvalidParam(format!(
            "frequency must be positive, got {f}"
        )));
    }
    let (w, h) = (frame.width(), frame.height());
    let mut values = Image::zeros(w, h);
    let mut valid = vec![false; w * h];
    let meters_per_phase = C_LIGHT / (4.0 * std::f64::consts::PI * f);
    for y in 0..h {
        for x in 0..w {
            let i = frame.i_plane().get(x, y);
            let q = frame.q_plane().get(x, y);
            if i.hypot(q) < AMPLITUDE_FLOOR {
                continue;
            }
            let mut phi = q.atan2(i);
            if phi < 0.0 {
                phi += std::f64::consts::TAU;
            }
            values.set(x, y, meters_per_phase * phi);
            valid[y * w + x] = true;
        }
    }
    DepthMap::new(values, valid)
}

/// Adds Gaussian sensor noise with per-pixel variance
/// `read_sigma^2 + shot_gain * amplitude`, then applies dropout to
/// low-amplitude pixels. Deterministic given `(frame, params, seed)`.
pub fn add_sensor_noise(frame: &RawFrame, params: &NoiseParams, seed: u64) -> Result<RawFrame> {
    params.validate()?;
    let mut rng = rng::stream(seed, &[0x5e_a5]);
    let (w, h) = (frame.width(), frame.height());
    let mut i_plane = frame.i_plane().clone();
    let mut q_plane = frame.q_plane().clone();
    let dropout_floor = AMPLITUDE_FLOOR * 4.0;
    for y in 0..h {
        for x in 0..w {
            let a = frame.amplitude_at(x, y);
            let sigma = (params.read_sigma * params.read_sigma + params.shot_gain * a).sqrt();
            let (n_i, n_q) = rng::normal_pair(&mut rng);
            if sigma > 0.0 {
                i_plane.set(x, y, i_plane.get(x, y) + sigma * n_i);
                q_plane.set(x, y, q_plane.get(x, y) + sigma * n_q);
            }
            if params.dropout_prob > 0.0 {
                let u: f64 = rng.gen();
                if a < dropout_floor && u < params.dropout_prob {
                    i_plane.set(x, y, 0.0);
                    q_plane.set(x, y, 0.0);
                }
            }
        }
    }
    RawFrame::new(i_plane, q_plane, frame.frequency_hz())
}

/// Marks pixels whose central-difference gradient magnitude exceeds
/// [`EDGE_GRAD_THRESHOLD`]. Invalid neighbors fall back to one-sided
/// differences; isolated pixels read as flat.
pub fn discontinuity_mask(depth: &DepthMap) -> Vec<bool> {
    let (w, h) = (depth.width(), depth.height());
    let mut mask = vec![false; w * h];
    let diff = |depth: &DepthMap, xa: usize, ya: usize, xb: usize, yb: usize, span: f64| -> f64 {
        let va = depth.is_valid(xa, ya);
        let vb = depth.is_valid(xb, yb);
        match (va, vb) {
            (true, true) => (depth.get(xa, ya) - depth.get(xb, yb)) / span,
            _ => 0.0,
        }
    };
    for y in 0..h {
        for x in 0..w {
            if !depth.is_valid(x, y) {
                continue;
            }
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            // fall back to one-sided spans at borders or next to invalid pixels
            let gx = if depth.is_valid(xp, y) && depth.is_valid(xm, y) && xp != xm {
                diff(depth, xp, y, xm, y, (xp - xm) as f64)
            } else if depth.is_valid(xp, y) && xp != x {
                diff(depth, xp, y, x, y, (xp - x) as f64)
            } else if depth.is_valid(xm, y) && xm != x {
                diff(depth, x, y, xm, y, (x - xm) as f64)
            } else {
                0.0
            };
            let gy = if depth.is_valid(x, yp) && depth.is_valid(x, ym) && yp != ym {
                diff(depth, x, yp, x, ym, (yp - ym) as f64)
            } else if depth.is_valid(x, yp) && yp != y {
                diff(depth, x, yp, x, y, (yp - y) as f64)
            } else if depth.is_valid(x, ym) && ym != y {
                diff(depth, x, y, x, ym, (y - ym) as f64)
            } else {
                0.0
            };
            if gx.hypot(gy) > EDGE_GRAD_THRESHOLD {
                mask[y * w + x] = true;
            }
        }
    }
    mask
}

/// Dilates `mask` by a Chebyshev radius.
pub fn dilate_mask(mask: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let r = radius as isize;
    let mut out = vec![false; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !mask[y as usize * w + x as usize] {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize {
                        out[ny as usize * w + nx as usize] = true;
                    }
                }
            }
        }
    }
    out
}

/// Perturbs depth near discontinuities with Gaussian noise of std
/// `edge_noise_sigma`, emulating flying pixels. Pixels farther than
/// `edge_noise_band` from any discontinuity are untouched. Output depths
/// are clamped at zero.
pub fn add_edge_noise(depth: &DepthMap, params: &NoiseParams, seed: u64) -> Result<DepthMap> {
    params.validate()?;
    if params.edge_noise_sigma == 0.0 {
        return Ok(depth.clone());
    }
    let (w, h) = (depth.width(), depth.height());
    let edges = discontinuity_mask(depth);
    let band = dilate_mask(&edges, w, h, params.edge_noise_band);
    let mut values = depth.values().clone();
    let mut src = NormalSource::new(rng::stream(seed, &[0xed_6e]));
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            if band[idx] && depth.is_valid(x, y) {
                let v = values.get(x, y) + params.edge_noise_sigma * src.next();
                values.set(x, y, v.max(0.0));
            }
        }
    }
    DepthMap::new(values, depth.valid().to_vec())
}

/// Scene primitive evaluated per pixel; depth test keeps the nearest hit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Primitive {
    /// Full-frame plane: `d(x, y) = depth + slope_u*(x - w/2) + slope_v*(y - h/2)`.
    Plane {
        depth: f64,
        slope_u: f64,
        slope_v: f64,
        reflectivity: f64,
    },
    /// Spherical cap bulging toward the camera; nearest depth at the center.
    Sphere {
        center_u: f64,
        center_v: f64,
        radius_px: f64,
        depth: f64,
        bulge_m: f64,
        reflectivity: f64,
    },
    /// Axis-aligned card at constant depth.
    Box {
        u0: f64,
        v0: f64,
        u1: f64,
        v1: f64,
        depth: f64,
        reflectivity: f64,
    },
}

impl Primitive {
    fn reflectivity(&self) -> f64 {
        match self {
            Primitive::Plane { reflectivity, .. }
            | Primitive::Sphere { reflectivity, .. }
            | Primitive::Box { reflectivity, .. } => *reflectivity,
        }
    }

    /// Depth of this primitive at pixel (x, y), or None if it does not cover it.
    fn depth_at(&self, x: f64, y: f64, w: f64, h: f64) -> Option<f64> {
        match *self {
            Primitive::Plane {
                depth,
                slope_u,
                slope_v,
                ..
            } => Some(depth + slope_u * (x - w / 2.0) + slope_v * (y - h / 2.0)),
            Primitive::Sphere {
                center_u,
                center_v,
                radius_px,
                depth,
                bulge_m,
                ..
            } => {
                let rho2 = (x - center_u).powi(2) + (y - center_v).powi(2);
                let r2 = radius_px * radius_px;
                if rho2 <= r2 {
                    Some(depth + bulge_m * (1.0 - (1.0 - rho2 / r2).sqrt()))
                } else {
                    None
                }
            }
            Primitive::Box {
                u0,
                v0,
                u1,
                v1,
                depth,
                ..
            } => {
                if x >= u0 && x <= u1 && y >= v0 && y <= v1 {
                    Some(depth)
                } else {
                    None
                }
            }
        }
    }
}

/// Procedural scene description.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub primitives: Vec<Primitive>,
    /// Background depth in meters; the background has reflectivity 1.
    pub background_depth: f64,
    pub amplitude_scale: f64,
    /// Relative amplitude of seeded per-pixel reflectivity texture (0 = flat).
    pub texture_amp: f64,
}

impl SceneSpec {
    pub fn validate(&self, frequency_hz: f64) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParam("scene dimensions must be positive".into()));
        }
        if !(self.amplitude_scale.is_finite() && self.amplitude_scale > 0.0) {
            return Err(Error::InvalidParam("amplitude_scale must be positive".into()));
        }
        if self.primitives.is_empty() && !(self.background_depth > 0.0) {
            return Err(Error::InvalidParam(
                "scene needs at least a background or one primitive".into(),
            ));
        }
        let range = unambiguous_range(frequency_hz);
        if !(self.background_depth >= 0.0 && self.background_depth < range) {
            return Err(Error::DepthOutOfRange {
                depth: self.background_depth,
                range,
            });
        }
        for p in &self.primitives {
            let r = p.reflectivity();
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidParam(format!(
                    "reflectivity must be in (0,1], got {r}"
                )));
            }
        }
        if !(self.texture_amp.is_finite() && (0.0..1.0).contains(&self.texture_amp)) {
            return Err(Error::InvalidParam("texture_amp must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// Renders a scene into depth and amplitude maps.
///
/// Depth is the per-pixel minimum over primitives and background; amplitude
/// follows an inverse-square falloff `amplitude_scale * reflectivity /
/// max(d, 0.1)^2`. The seed drives the optional reflectivity texture.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<(DepthMap, AmplitudeMap)> {
    spec.validate(DEFAULT_FREQUENCY_HZ)?;
    let (w, h) = (spec.width, spec.height);
    let mut depth = Image::zeros(w, h);
    let mut amp = Image::zeros(w, h);
    let mut rng = rng::stream(seed, &[0x5c_e4]);
    for y in 0..h {
        for x in 0..w {
            let mut best_d = spec.background_depth;
            let mut best_r = 1.0;
            for p in &spec.primitives {
                if let Some(d) = p.depth_at(x as f64, y as f64, w as f64, h as f64) {
                    if d >= 0.0 && d < best_d {
                        best_d = d;
                        best_r = p.reflectivity();
                    }
                }
            }
            let mut refl = best_r;
            if spec.texture_amp > 0.0 {
                let u: f64 = rng.gen();
                refl *= 1.0 + spec.texture_amp * (2.0 * u - 1.0);
            }
            let d_eff = best_d.max(0.1);
            depth.set(x, y, best_d);
            amp.set(x, y, spec.amplitude_scale * refl / (d_eff * d_eff));
        }
    }
    Ok((DepthMap::all_valid(depth)?, AmplitudeMap::new(amp)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_scene(w: usize, h: usize, d: f64) -> (DepthMap, AmplitudeMap) {
        let depth = DepthMap::all_valid(Image::constant(w, h, d)).unwrap();
        let amp = AmplitudeMap::new(Image::constant(w, h, 1.0)).unwrap();
        (depth, amp)
    }

    #[test]
    fn zero_depth_gives_pure_inphase() {
        let (d, a) = flat_scene(4, 4, 0.0);
        let f = depth_to_correlations(&d, &a, DEFAULT_FREQUENCY_HZ).unwrap();
        assert_eq!(f.i_plane().get(0, 0), 1.0);
        assert_eq!(f.q_plane().get(0, 0), 0.0);
    }

    #[test]
    fn quarter_period_gives_pure_quadrature() {
        let f_hz = DEFAULT_FREQUENCY_HZ;
        let d_quarter = C_LIGHT / (8.0 * f_hz);
        let depth = DepthMap::all_valid(Image::constant(3, 3, d_quarter)).unwrap();
        let amp = AmplitudeMap::new(Image::constant(3, 3, 2.0)).unwrap();
        let f = depth_to_correlations(&depth, &amp, f_hz).unwrap();
        // phi = pi/2 by symmetry
        assert!(f.i_plane().get(1, 1).abs() < 1e-12);
        assert!((f.q_plane().get(1, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn correlations_match_closed_form_at_one_meter() {
        // phi = 4*pi*2e7*1.0 / 299792458, evaluated independently here
        let phi = 4.0 * std::f64::consts::PI * 2.0e7 * 1.0 / C_LIGHT;
        let (d, a) = flat_scene(2, 2, 1.0);
        let f = depth_to_correlations(&d, &a, 2.0e7).unwrap();
        assert!((f.i_plane().get(0, 0) - phi.cos()).abs() < 1e-15);
        assert!((f.q_plane().get(0, 0) - phi.sin()).abs() < 1e-15);
        // freeze the oracle value to guard against regressions in the formula
        assert!((phi - 0.838_338_008_780_672_8).abs() < 1e-12, "phi={phi:.16}");
    }

    #[test]
    fn depth_from_unit_inphase_is_zero() {
        let frame = RawFrame::new(
            Image::constant(2, 2, 1.0),
            Image::zeros(2, 2),
            DEFAULT_FREQUENCY_HZ,
        )
        .unwrap();
        let d = correlations_to_depth(&frame).unwrap();
        assert_eq!(d.get(0, 0), 0.0);
        assert!(d.is_valid(0, 0));
    }

    #[test]
    fn depth_from_unit_quadrature_is_quarter_range() {
        let frame = RawFrame::new(
            Image::zeros(2, 2),
            Image::constant(2, 2, 1.0),
            2.0e7,
        )
        .unwrap();
        let d = correlations_to_depth(&frame).unwrap();
        let expect = C_LIGHT / (8.0 * 2.0e7); // 1.873702... m
        assert!((d.get(0, 0) - expect).abs() < 1e-9, "{}", d.get(0, 0));
        assert!((expect - 1.873_702_862_5).abs() < 1e-9);
    }

    #[test]
    fn no_signal_pixel_is_invalid() {
        let frame =
            RawFrame::new(Image::zeros(2, 2), Image::zeros(2, 2), DEFAULT_FREQUENCY_HZ).unwrap();
        let d = correlations_to_depth(&frame).unwrap();
        assert!(!d.is_valid(0, 0));
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn round_trip_reproduces_depth() {
        let f_hz = DEFAULT_FREQUENCY_HZ;
        let range = unambiguous_range(f_hz);
        let depth = Image::from_fn(16, 16, |x, y| range * 0.999 * ((x + 16 * y) as f64 / 256.0));
        let depth = DepthMap::all_valid(depth).unwrap();
        let amp = AmplitudeMap::new(Image::constant(16, 16, 2.0)).unwrap();
        let frame = depth_to_correlations(&depth, &amp, f_hz).unwrap();
        let back = correlations_to_depth(&frame).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert!((back.get(x, y) - depth.get(x, y)).abs() < 1e-6);
                // amplitude preserved on ideal frames
                assert!((frame.amplitude_at(x, y) - 2.0).abs() / 2.0 < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_depth_is_rejected() {
        let range = unambiguous_range(DEFAULT_FREQUENCY_HZ);
        let (d, a) = flat_scene(2, 2, range * 1.01);
        assert!(matches!(
            depth_to_correlations(&d, &a, DEFAULT_FREQUENCY_HZ),
            Err(Error::DepthOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_noise_params_are_identity() {
        let (d, a) = flat_scene(8, 8, 1.5);
        let frame = depth_to_correlations(&d, &a, DEFAULT_FREQUENCY_HZ).unwrap();
        let noisy = add_sensor_noise(&frame, &NoiseParams::zero(), 3).unwrap();
        assert_eq!(noisy, frame);
    }

    #[test]
    fn sensor_noise_is_seed_deterministic() {
        let (d, a) = flat_scene(8, 8, 1.5);
        let frame = depth_to_correlations(&d, &a, DEFAULT_FREQUENCY_HZ).unwrap();
        let params = NoiseParams {
            read_sigma: 0.05,
            shot_gain: 0.01,
            dropout_prob: 0.2,
            ..NoiseParams::zero()
        };
        let n1 = add_sensor_noise(&frame, &params, 42).unwrap();
        let n2 = add_sensor_noise(&frame, &params, 42).unwrap();
        assert_eq!(n1, n2);
        let n3 = add_sensor_noise(&frame, &params, 43).unwrap();
        assert_ne!(n1, n3);
    }

    #[test]
    fn sensor_noise_std_matches_params() {
        // Monte-Carlo estimate over >= 1e5 pixels vs the specified std.
        let n = 400usize; // 160k pixels
        let (d, a) = flat_scene(n, n, 1.0);
        let frame = depth_to_correlations(&d, &a, DEFAULT_FREQUENCY_HZ).unwrap();
        let params = NoiseParams {
            read_sigma: 0.1,
            ..NoiseParams::zero()
        };
        let noisy = add_sensor_noise(&frame, &params, 9).unwrap();
        let mut sum2 = 0.0;
        let mut count = 0usize;
        for y in 0..n {
            for x in 0..n {
                let di = noisy.i_plane().get(x, y) - frame.i_plane().get(x, y);
                let dq = noisy.q_plane().get(x, y) - frame.q_plane().get(x, y);
                sum2 += di * di + dq * dq;
                count += 2;
            }
        }
        let std = (sum2 / count as f64).sqrt();
        assert!((std - 0.1).abs() / 0.1 < 0.02, "std {std}");
    }

    #[test]
    fn edge_noise_leaves_flat_maps_unchanged() {
        let d = DepthMap::all_valid(Image::constant(16, 16, 2.0)).unwrap();
        let params = NoiseParams {
            edge_noise_sigma: 0.2,
            edge_noise_band: 2,
            ..NoiseParams::zero()
        };
        let out = add_edge_noise(&d, &params, 5).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn zero_sigma_edge_noise_is_identity() {
        let d = DepthMap::all_valid(Image::from_fn(16, 16, |x, _| if x < 8 { 1.0 } else { 2.0 }))
            .unwrap();
        let params = NoiseParams {
            edge_noise_sigma: 0.0,
            edge_noise_band: 3,
            ..NoiseParams::zero()
        };
        assert_eq!(add_edge_noise(&d, &params, 5).unwrap(), d);
    }

    #[test]
    fn edge_noise_stays_inside_dilated_band() {
        let d = DepthMap::all_valid(Image::from_fn(32, 32, |x, _| if x < 16 { 1.0 } else { 2.0 }))
            .unwrap();
        let params = NoiseParams {
            edge_noise_sigma: 0.3,
            edge_noise_band: 2,
            ..NoiseParams::zero()
        };
        let out = add_edge_noise(&d, &params, 11).unwrap();
        // brute-force oracle: recompute the dilated discontinuity band
        let oracle = dilate_mask(&discontinuity_mask(&d), 32, 32, 2);
        let mut changed = 0usize;
        for y in 0..32 {
            for x in 0..32 {
                let differs = (out.get(x, y) - d.get(x, y)).abs() > 0.0;
                if differs {
                    changed += 1;
                    assert!(oracle[y * 32 + x], "change outside band at ({x},{y})");
                }
            }
        }
        assert!(changed > 0, "edge noise changed nothing");
    }

    #[test]
    fn background_plane_scene_has_closed_form_amplitude() {
        let spec = SceneSpec {
            width: 8,
            height: 8,
            primitives: vec![],
            background_depth: 2.0,
            amplitude_scale: 4.0,
            texture_amp: 0.0,
        };
        let (d, a) = generate_scene(&spec, 1).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(d.get(x, y), 2.0);
                assert_eq!(a.get(x, y), 1.0); // 4 * 1 / 2^2
            }
        }
    }

    #[test]
    fn sphere_occludes_background() {
        let spec = SceneSpec {
            width: 16,
            height: 16,
            primitives: vec![Primitive::Sphere {
                center_u: 8.0,
                center_v: 8.0,
                radius_px: 4.0,
                depth: 1.0,
                bulge_m: 0.2,
                reflectivity: 0.8,
            }],
            background_depth: 3.0,
            amplitude_scale: 4.0,
            texture_amp: 0.0,
        };
        let (d, _) = generate_scene(&spec, 1).unwrap();
        assert!(d.get(8, 8) < d.get(0, 0));
        assert_eq!(d.get(0, 0), 3.0);
        assert_eq!(d.get(8, 8), 1.0);
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let spec = SceneSpec {
            width: 16,
            height: 16,
            primitives: vec![Primitive::Box {
                u0: 2.0,
                v0: 2.0,
                u1: 9.0,
                v1: 12.0,
                depth: 1.2,
                reflectivity: 0.5,
            }],
            background_depth: 2.5,
            amplitude_scale: 10.0,
            texture_amp: 0.2,
        };
        let (d1, a1) = generate_scene(&spec, 77).unwrap();
        let (d2, a2) = generate_scene(&spec, 77).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(a1, a2);
        let (_, a3) = generate_scene(&spec, 78).unwrap();
        assert_ne!(a1, a3);
    }

    #[test]
    fn reconstruction_is_scale_invariant() {
        let (d, a) = flat_scene(8, 8, 2.3);
        let frame = depth_to_correlations(&d, &a, DEFAULT_FREQUENCY_HZ).unwrap();
        for lambda in [0.5, 3.0, 117.0] {
            let scaled = RawFrame::new(
                frame.i_plane().map(|v| v * lambda),
                frame.q_plane().map(|v| v * lambda),
                frame.frequency_hz(),
            )
            .unwrap();
            let d1 = correlations_to_depth(&frame).unwrap();
            let d2 = correlations_to_depth(&scaled).unwrap();
            for i in 0..d1.values().len() {
                assert_eq!(d1.values().data()[i], d2.values().data()[i]);
            }
        }
    }
}
