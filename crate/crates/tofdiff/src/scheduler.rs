//! DDPM forward process and deterministic DDIM sampling.
//!
//! The schedule is a linear beta ramp; `alpha_bar(t)` is the cumulative
//! product of `1 - beta` with the convention `alpha_bar(0) = 1`, so timestep
//! 0 is the terminal (noise-free) target of a sampling trajectory.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Real, Tensor};

/// Default number of training steps.
pub const DEFAULT_TRAIN_STEPS: usize = 1000;
/// Canonical linear-schedule endpoints.
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
/// Default number of DDIM inference steps.
pub const DEFAULT_SAMPLE_STEPS: usize = 20;

/// Diffusion noise schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    beta_start: f64,
    beta_end: f64,
}

impl Schedule {
    /// Linear beta schedule over `t_steps` steps, endpoints inclusive.
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::InvalidParam("schedule needs at least 1 step".into()));
        }
        if !(beta_start.is_finite() && beta_end.is_finite())
            || beta_start <= 0.0
            || beta_end >= 1.0
            || beta_start > beta_end
        {
            return Err(Error::InvalidParam(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let mut betas = Vec::with_capacity(t_steps);
        for i in 0..t_steps {
            let frac = if t_steps == 1 {
                0.0
            } else {
                i as f64 / (t_steps - 1) as f64
            };
            betas.push(beta_start + (beta_end - beta_start) * frac);
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(t_steps);
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            beta_start,
            beta_end,
        })
    }

    pub fn default_schedule() -> Self {
        Self::linear(DEFAULT_TRAIN_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("defaults are valid")
    }

    /// Number of training steps T.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    /// `alpha_bar(t)` with `t` in `0..=T`; t = 0 returns 1.
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// `(sqrt(alpha_bar), sqrt(1 - alpha_bar))` at timestep `t`.
    pub fn q_coeffs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        (ab.sqrt(), (1.0 - ab).sqrt())
    }

    /// Text sidecar with one `t beta alpha alpha_bar` line per step, for
    /// cross-implementation comparison.
    pub fn dump_text(&self) -> String {
        let mut out = String::with_capacity(self.len() * 64);
        out.push_str("# t beta alpha alpha_bar\n");
        for t in 1..=self.len() {
            out.push_str(&format!(
                "{} {:.17e} {:.17e} {:.17e}\n",
                t,
                self.betas[t - 1],
                self.alphas[t - 1],
                self.alpha_bars[t - 1]
            ));
        }
        out
    }
}

/// DDIM sampler settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    pub num_inference_steps: usize,
    /// 0 gives the deterministic sampler.
    pub eta: f64,
    pub seed: u64,
    /// Clamp the implied clean-sample estimate to `[-c, c]` between steps.
    /// Sound when the data domain is bounded (normalized correlations);
    /// keeps early trajectory states from leaving the data scale.
    pub clip_x0: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            num_inference_steps: DEFAULT_SAMPLE_STEPS,
            eta: 0.0,
            seed: 0,
            clip_x0: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, sched: &Schedule) -> Result<()> {
        if self.num_inference_steps == 0 || self.num_inference_steps > sched.len() {
            return Err(Error::InvalidParam(format!(
                "num_inference_steps must be in 1..={}, got {}",
                sched.len(),
                self.num_inference_steps
            )));
        }
        if !(self.eta.is_finite() && (0.0..=1.0).contains(&self.eta)) {
            return Err(Error::InvalidParam(format!("eta must be in [0,1], got {}", self.eta)));
        }
        Ok(())
    }
}

/// Forward noising: `x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
pub fn q_sample<T: Real>(
    x0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    sched: &Schedule,
) -> Result<Tensor<T>> {
    if t == 0 || t > sched.len() {
        return Err(Error::InvalidParam(format!(
            "timestep {t} outside 1..={}",
            sched.len()
        )));
    }
    if x0.shape() != eps.shape() {
        return Err(Error::DimensionMismatch("q_sample shapes".into()));
    }
    let (ca, cb) = sched.q_coeffs(t);
    let (ca, cb) = (T::from_f64(ca), T::from_f64(cb));
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&a, &e)| ca * a + cb * e)
        .collect();
    let (c, h, w) = x0.shape();
    Tensor::from_vec(c, h, w, data)
}

/// One deterministic-or-stochastic DDIM update from `t` to `t_prev < t`.
///
/// `noise` is only consumed when `eta > 0`; passing `None` with a positive
/// eta is an error.
pub fn ddim_step<T: Real>(
    x_t: &Tensor<T>,
    eps_pred: &Tensor<T>,
    t: usize,
    t_prev: usize,
    sched: &Schedule,
    eta: f64,
    noise: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if t_prev >= t || t > sched.len() {
        return Err(Error::InvalidParam(format!(
            "ddim_step needs t_prev < t <= {}, got {t_prev} >= {t}",
            sched.len()
        )));
    }
    if x_t.shape() != eps_pred.shape() {
        return Err(Error::DimensionMismatch("ddim_step shapes".into()));
    }
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    let sigma = if eta > 0.0 {
        eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt()
    } else {
        0.0
    };
    if sigma > 0.0 && noise.is_none() {
        return Err(Error::InvalidParam(
            "eta > 0 requires a noise tensor".into(),
        ));
    }
    let inv_sqrt_ab_t = T::from_f64(1.0 / ab_t.sqrt());
    let sqrt_one_minus_ab_t = T::from_f64((1.0 - ab_t).sqrt());
    let sqrt_ab_prev = T::from_f64(ab_prev.sqrt());
    let dir_coeff = T::from_f64((1.0 - ab_prev - sigma * sigma).max(0.0).sqrt());
    let sigma_t = T::from_f64(sigma);

    let (c, h, w) = x_t.shape();
    let mut data = Vec::with_capacity(x_t.len());
    for idx in 0..x_t.len() {
        let xv = x_t.data()[idx];
        let ev = eps_pred.data()[idx];
        let x0_hat = (xv - sqrt_one_minus_ab_t * ev) * inv_sqrt_ab_t;
        let mut v = sqrt_ab_prev * x0_hat + dir_coeff * ev;
        if sigma > 0.0 {
            let z = noise.expect("checked above").data()[idx];
            v = v + sigma_t * z;
        }
        data.push(v);
    }
    Tensor::from_vec(c, h, w, data)
}

/// Descending DDIM timestep subsequence.
///
/// Uniform stride `floor(T / steps)` starting at `T - 1`; ties break toward
/// larger t and the terminal hop to 0 is implicit (not part of the list).
pub fn ddim_timesteps(t_total: usize, steps: usize) -> Vec<usize> {
    let stride = (t_total / steps).max(1);
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let offset = k * stride;
        if offset + 1 >= t_total {
            break;
        }
        let t = t_total - 1 - offset;
        if t >= 1 {
            out.push(t);
        }
    }
    if out.is_empty() {
        out.push(t_total.min(1).max(1));
    }
    out
}

/// Epsilon-prediction model the sampler can drive.
pub trait EpsModel<T: Real> {
    fn predict_eps(&self, x_t: &Tensor<T>, t: usize, guidance: Option<&Tensor<T>>) -> Tensor<T>;
}

impl<T: Real, F> EpsModel<T> for F
where
    F: Fn(&Tensor<T>, usize, Option<&Tensor<T>>) -> Tensor<T>,
{
    fn predict_eps(&self, x_t: &Tensor<T>, t: usize, guidance: Option<&Tensor<T>>) -> Tensor<T> {
        self(x_t, t, guidance)
    }
}

/// Runs the DDIM trajectory from Gaussian noise down to the terminal target.
pub fn ddim_sample<T: Real, M: EpsModel<T> + ?Sized>(
    model: &M,
    guidance: Option<&Tensor<T>>,
    cfg: &SamplerConfig,
    sched: &Schedule,
    shape: (usize, usize, usize),
) -> Result<Tensor<T>> {
    cfg.validate(sched)?;
    let mut rng = rng::stream(cfg.seed, &[0xdd_1a]);
    let (c, h, w) = shape;
    let mut x = Tensor::<T>::randn(c, h, w, &mut rng);
    let ts = ddim_timesteps(sched.len(), cfg.num_inference_steps);
    for (k, &t) in ts.iter().enumerate() {
        let t_prev = if k + 1 < ts.len() { ts[k + 1] } else { 0 };
        let mut eps = model.predict_eps(&x, t, guidance);
        if eps.shape() != x.shape() {
            return Err(Error::DimensionMismatch(format!(
                "model output shape {:?} != input {:?}",
                eps.shape(),
                x.shape()
            )));
        }
        if !eps.all_finite() {
            return Err(Error::NonFinite("eps prediction"));
        }
        if let Some(clip) = cfg.clip_x0 {
            // clamp the implied x0 and fold the clamp back into eps, so the
            // update below still follows the plain DDIM formula
            let ab = sched.alpha_bar(t);
            let sqrt_ab = T::from_f64(ab.sqrt());
            let sqrt_1mab = T::from_f64((1.0 - ab).sqrt());
            let bound = T::from_f64(clip);
            for (ev, &xv) in eps.data_mut().iter_mut().zip(x.data()) {
                let x0_hat = (xv - sqrt_1mab * *ev) / sqrt_ab;
                let clamped = x0_hat.max(-bound).min(bound);
                if clamped != x0_hat {
                    *ev = (xv - sqrt_ab * clamped) / sqrt_1mab;
                }
            }
        }
        let noise = if cfg.eta > 0.0 {
            Some(Tensor::<T>::randn(c, h, w, &mut rng))
        } else {
            None
        };
        x = ddim_step(&x, &eps, t, t_prev, sched, cfg.eta, noise.as_ref())?;
    }
    Ok(x)
}
