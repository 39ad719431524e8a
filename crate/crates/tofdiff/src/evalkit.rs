//! Depth-map evaluation: MAE, AbsRel, threshold accuracies, per-pixel
//! error maps, and a classical bilateral-filter baseline.

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, MaskedImage};

/// Aggregate depth metrics over the jointly valid pixel set.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    /// Mean absolute error in meters.
    pub mae_m: f64,
    /// Mean of |pred - gt| / gt.
    pub absrel: f64,
    /// Fraction of pixels with max(pred/gt, gt/pred) < 1.25.
    pub delta1: f64,
    /// Threshold 1.25^2.
    pub delta2: f64,
    /// Threshold 1.25^3.
    pub delta3: f64,
    pub valid_pixel_count: usize,
}

/// Which pixels participate in metric aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskPolicy {
    /// Pixels valid in both maps (and gt > 0). The default: invalid ToF
    /// pixels carry no measurement on either side.
    #[default]
    Intersection,
    /// All pixels with valid gt > 0; invalid predictions count as their
    /// stored zero value.
    GtValidOnly,
}

const DELTA_BASE: f64 = 1.25;

/// Computes the metric report under the given mask policy.
pub fn compute_metrics_with(
    pred: &DepthMap,
    gt: &DepthMap,
    policy: MaskPolicy,
) -> Result<MetricsReport> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch(
            "prediction and ground truth differ in size".into(),
        ));
    }
    let mut count = 0usize;
    let mut abs_sum = 0.0;
    let mut rel_sum = 0.0;
    let mut d1 = 0usize;
    let mut d2 = 0usize;
    let mut d3 = 0usize;
    let t1 = DELTA_BASE;
    let t2 = DELTA_BASE * DELTA_BASE;
    let t3 = t2 * DELTA_BASE;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let g = gt.get(x, y);
            if !gt.is_valid(x, y) || g <= 0.0 {
                continue;
            }
            if policy == MaskPolicy::Intersection && !pred.is_valid(x, y) {
                continue;
            }
            let p = pred.get(x, y);
            count += 1;
            abs_sum += (p - g).abs();
            rel_sum += (p - g).abs() / g;
            let ratio = if p > 0.0 {
                (p / g).max(g / p)
            } else {
                f64::INFINITY
            };
            if ratio < t1 {
                d1 += 1;
            }
            if ratio < t2 {
                d2 += 1;
            }
            if ratio < t3 {
                d3 += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyValidSet);
    }
    let n = count as f64;
    Ok(MetricsReport {
        mae_m: abs_sum / n,
        absrel: rel_sum / n,
        delta1: d1 as f64 / n,
        delta2: d2 as f64 / n,
        delta3: d3 as f64 / n,
        valid_pixel_count: count,
    })
}

/// Metric report over the intersection of valid masks.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<MetricsReport> {
    compute_metrics_with(pred, gt, MaskPolicy::Intersection)
}

/// Per-pixel absolute error; pixels invalid in either map are flagged.
pub fn error_map(pred: &DepthMap, gt: &DepthMap) -> Result<MaskedImage> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch(
            "prediction and ground truth differ in size".into(),
        ));
    }
    let (w, h) = (gt.width(), gt.height());
    let mut values = Image::zeros(w, h);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if pred.is_valid(x, y) && gt.is_valid(x, y) {
                values.set(x, y, (pred.get(x, y) - gt.get(x, y)).abs());
                valid[y * w + x] = true;
            }
        }
    }
    Ok(MaskedImage { values, valid })
}

/// Edge-preserving bilateral smoothing of a depth map.
///
/// Invalid pixels stay invalid and are excluded from every neighborhood.
pub fn bilateral_baseline(
    depth: &DepthMap,
    spatial_sigma: f64,
    range_sigma: f64,
) -> Result<DepthMap> {
    if !(spatial_sigma > 0.0 && range_sigma > 0.0) {
        return Err(Error::InvalidParam("bilateral sigmas must be positive".into()));
    }
    let radius = (spatial_sigma * 2.5).ceil() as isize;
    let (w, h) = (depth.width(), depth.height());
    let side = (2 * radius + 1) as usize;
    let mut spatial = vec![0.0f64; side * side];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let d2 = (dx * dx + dy * dy) as f64;
            spatial[((dy + radius) * (2 * radius + 1) + (dx + radius)) as usize] =
                (-d2 / (2.0 * spatial_sigma * spatial_sigma)).exp();
        }
    }
    let inv_2r2 = 1.0 / (2.0 * range_sigma * range_sigma);
    let mut out = Image::zeros(w, h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !depth.is_valid(x as usize, y as usize) {
                continue;
            }
            let center = depth.get(x as usize, y as usize);
            let mut acc = 0.0;
            let mut weight = 0.0;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    if !depth.is_valid(nx as usize, ny as usize) {
                        continue;
                    }
                    let v = depth.get(nx as usize, ny as usize);
                    let dv = v - center;
                    let wgt = spatial
                        [((dy + radius) * (2 * radius + 1) + (dx + radius)) as usize]
                        * (-dv * dv * inv_2r2).exp();
                    acc += wgt * v;
                    weight += wgt;
                }
            }
            out.set(x as usize, y as usize, acc / weight);
        }
    }
    DepthMap::new(out, depth.valid().to_vec())
}
