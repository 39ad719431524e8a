//! Base denoiser: a small U-Net with sinusoidal timestep conditioning.
//!
//! Three resolution levels by default, two conv blocks per level, skip
//! connections from each encoder level into the mirrored decoder level.
//! The network predicts the noise added to its input, so output shape
//! equals input shape. There is no text conditioning; the model runs
//! prompt-free by construction.

use crate::error::{Error, Result};
use crate::nn::layers::{
    silu, silu_grad, silu_tensor, upsample2, upsample2_backward, Conv2d, ConvBlock,
    ConvBlockCache, GroupNorm, Linear, NormStats,
};
use crate::nn::param::{child, ParamBlocks};
use crate::rng;
use crate::tensor::{Real, Tensor};

/// Architecture settings for the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Channels the diffusion operates on (single-plane data replicated).
    pub in_channels: usize,
    /// Width of the first level; level `l` has `base_width << l` channels.
    pub base_width: usize,
    pub depth_levels: usize,
    pub time_embed_dim: usize,
    /// Channels of the guidance stack; `in_channels` of them carry the
    /// replicated noisy measurement, plus one confidence channel when
    /// enabled.
    pub guidance_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_width: 32,
            depth_levels: 3,
            time_embed_dim: 32,
            guidance_channels: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.base_width == 0
            || self.depth_levels == 0
            || self.time_embed_dim == 0
            || self.guidance_channels == 0
        {
            return Err(Error::InvalidParam(
                "model config fields must be positive".into(),
            ));
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(Error::InvalidParam(
                "time_embed_dim must be even (sin/cos halves)".into(),
            ));
        }
        // standard wiring carries the confidence channel; the
        // no-confidence ablation drops it
        if self.guidance_channels != self.in_channels
            && self.guidance_channels != self.in_channels + 1
        {
            return Err(Error::InvalidParam(format!(
                "guidance_channels must be in_channels or in_channels+1, got {}",
                self.guidance_channels
            )));
        }
        if self.depth_levels > 5
            || self.in_channels > 8
            || self.time_embed_dim > 1024
            || self.base_width << (self.depth_levels - 1) > 256
        {
            return Err(Error::InvalidParam("model config unreasonably large".into()));
        }
        Ok(())
    }

    /// Whether the guidance stack carries a confidence channel.
    pub fn uses_confidence(&self) -> bool {
        self.guidance_channels == self.in_channels + 1
    }

    /// The constant prompt. Conditioning on text is compiled out; the model
    /// always sees the empty string.
    pub fn text_prompt(&self) -> &'static str {
        ""
    }

    pub fn width_at(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Input sizes must be divisible by this for the up/down path to close.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.depth_levels - 1)
    }
}

/// Sinusoidal embedding of an integer timestep.
pub fn sinusoidal_embedding<T: Real>(t: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let tf = t as f64;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10000.0f64.ln()) * i as f64 / half as f64).exp();
        out.push(T::from_f64((tf * freq).sin()));
    }
    for i in 0..half {
        let freq = (-(10000.0f64.ln()) * i as f64 / half as f64).exp();
        out.push(T::from_f64((tf * freq).cos()));
    }
    out
}

/// Two conv blocks forming one resolution level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelBlocks<T> {
    pub b0: ConvBlock<T>,
    pub b1: ConvBlock<T>,
}

impl<T: Real> ParamBlocks<T> for LevelBlocks<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        self.b0.visit(&child(prefix, "b0"), out);
        self.b1.visit(&child(prefix, "b1"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        self.b0.visit_mut(&child(prefix, "b0"), out);
        self.b1.visit_mut(&child(prefix, "b1"), out);
    }
}

/// Encoder: stem conv, `depth_levels` block pairs, strided downsamples.
/// The guidance branch instantiates a trainable copy of this structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub stem: Conv2d<T>,
    pub levels: Vec<LevelBlocks<T>>,
    pub down: Vec<Conv2d<T>>,
}

pub struct EncoderCache<T> {
    pub x: Tensor<T>,
    pub level_caches: Vec<(ConvBlockCache<T>, ConvBlockCache<T>)>,
    pub down_inputs: Vec<Tensor<T>>,
}

pub struct EncoderOut<T> {
    pub skips: Vec<Tensor<T>>,
    pub bottom: Tensor<T>,
}

impl<T: Real> Encoder<T> {
    fn new(cfg: &ModelConfig) -> Self {
        let l = cfg.depth_levels;
        let mut levels = Vec::with_capacity(l);
        for lvl in 0..l {
            let w = cfg.width_at(lvl);
            levels.push(LevelBlocks {
                b0: ConvBlock::new(w, w, cfg.time_embed_dim),
                b1: ConvBlock::new(w, w, cfg.time_embed_dim),
            });
        }
        let mut down = Vec::with_capacity(l.saturating_sub(1));
        for lvl in 0..l - 1 {
            down.push(Conv2d::zeroed(
                cfg.width_at(lvl),
                cfg.width_at(lvl + 1),
                3,
                2,
                1,
            ));
        }
        Self {
            stem: Conv2d::zeroed(cfg.in_channels, cfg.base_width, 3, 1, 1),
            levels,
            down,
        }
    }

    fn init<R: rand::Rng>(&mut self, rng: &mut R) {
        self.stem.init_fan_in(rng);
        for lvl in &mut self.levels {
            lvl.b0.init(rng);
            lvl.b1.init(rng);
        }
        for d in &mut self.down {
            d.init_fan_in(rng);
        }
    }

    pub fn forward(&self, x: &Tensor<T>, temb: &[T]) -> (EncoderOut<T>, EncoderCache<T>) {
        let l = self.levels.len();
        let mut skips = Vec::with_capacity(l - 1);
        let mut level_caches = Vec::with_capacity(l);
        let mut down_inputs = Vec::with_capacity(l - 1);
        let mut h = self.stem.forward(x);
        for (lvl, blocks) in self.levels.iter().enumerate() {
            let (h0, c0) = blocks.b0.forward(&h, temb);
            let (h1, c1) = blocks.b1.forward(&h0, temb);
            level_caches.push((c0, c1));
            if lvl < l - 1 {
                skips.push(h1.clone());
                down_inputs.push(h1.clone());
                h = self.down[lvl].forward(&h1);
            } else {
                h = h1;
            }
        }
        (
            EncoderOut {
                skips,
                bottom: h,
            },
            EncoderCache {
                x: x.clone(),
                level_caches,
                down_inputs,
            },
        )
    }

    /// Backward given gradients for the skips and the bottom feature.
    /// Returns the input gradient when `need_dx` is set.
    pub fn backward(
        &self,
        cache: &EncoderCache<T>,
        temb: &[T],
        dskips: &[Tensor<T>],
        dbottom: &Tensor<T>,
        mut grad: Option<&mut Encoder<T>>,
        dtemb: Option<&mut [T]>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let l = self.levels.len();
        let mut dtemb = dtemb;
        // gradient arriving at the output of each level, walked top-down
        let mut d_out = dbottom.clone();
        for lvl in (0..l).rev() {
            if lvl < l - 1 {
                // d_out currently holds the gradient at the *input* of down[lvl]
                // plus we must add the skip gradient
                let mut d_down_in = Tensor::zeros(
                    cache.down_inputs[lvl].channels(),
                    cache.down_inputs[lvl].height(),
                    cache.down_inputs[lvl].width(),
                );
                self.down[lvl].backward(
                    &cache.down_inputs[lvl],
                    &d_out,
                    grad.as_deref_mut().map(|g| &mut g.down[lvl]),
                    Some(&mut d_down_in),
                );
                d_down_in
                    .add_assign(&dskips[lvl])
                    .expect("skip shape matches");
                d_out = d_down_in;
            }
            let (c0, c1) = &cache.level_caches[lvl];
            let blocks = &self.levels[lvl];
            let mut d_mid =
                Tensor::zeros(c1.x.channels(), c1.x.height(), c1.x.width());
            blocks.b1.backward(
                c1,
                temb,
                &d_out,
                grad.as_deref_mut().map(|g| &mut g.levels[lvl].b1),
                dtemb.as_deref_mut(),
                Some(&mut d_mid),
            );
            let mut d_in = Tensor::zeros(c0.x.channels(), c0.x.height(), c0.x.width());
            blocks.b0.backward(
                c0,
                temb,
                &d_mid,
                grad.as_deref_mut().map(|g| &mut g.levels[lvl].b0),
                dtemb.as_deref_mut(),
                Some(&mut d_in),
            );
            d_out = d_in;
        }
        if need_dx || grad.is_some() {
            let mut dx = if need_dx {
                Some(Tensor::zeros(
                    cache.x.channels(),
                    cache.x.height(),
                    cache.x.width(),
                ))
            } else {
                None
            };
            self.stem.backward(
                &cache.x,
                &d_out,
                grad.as_deref_mut().map(|g| &mut g.stem),
                dx.as_mut(),
            );
            dx
        } else {
            None
        }
    }
}

impl<T: Real> ParamBlocks<T> for Encoder<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        self.stem.visit(&child(prefix, "stem"), out);
        for (i, lvl) in self.levels.iter().enumerate() {
            lvl.visit(&child(prefix, &format!("level{i}")), out);
        }
        for (i, d) in self.down.iter().enumerate() {
            d.visit(&child(prefix, &format!("down{i}")), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        self.stem.visit_mut(&child(prefix, "stem"), out);
        for (i, lvl) in self.levels.iter_mut().enumerate() {
            lvl.visit_mut(&child(prefix, &format!("level{i}")), out);
        }
        for (i, d) in self.down.iter_mut().enumerate() {
            d.visit_mut(&child(prefix, &format!("down{i}")), out);
        }
    }
}

/// The base denoiser. Frozen during guidance training.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    pub cfg: ModelConfig,
    pub init_seed: u64,
    pub time_fc1: Linear<T>,
    pub time_fc2: Linear<T>,
    pub encoder: Encoder<T>,
    /// `up[l]` maps level `l+1` features back to level `l` width.
    pub up: Vec<Conv2d<T>>,
    /// Decoder level `l`: first block consumes `[skip, upsampled]` concat.
    pub dec: Vec<LevelBlocks<T>>,
    pub head_norm: GroupNorm<T>,
    pub head: Conv2d<T>,
}

pub struct TimeCache<T> {
    pub emb0: Vec<T>,
    pub fc1_out: Vec<T>,
    pub fc1_act: Vec<T>,
    pub temb: Vec<T>,
}

pub struct DecoderCache<T> {
    /// Per decoder level (in decode order, top-down): input to the up conv
    /// (already upsampled) and the concatenated block input channel split.
    pub up_inputs: Vec<Tensor<T>>,
    pub level_caches: Vec<(ConvBlockCache<T>, ConvBlockCache<T>)>,
    pub head_in: Tensor<T>,
    pub head_stats: NormStats,
    pub head_pre_act: Tensor<T>,
    pub head_act: Tensor<T>,
}

pub struct BaseCache<T> {
    pub time: TimeCache<T>,
    pub enc: EncoderCache<T>,
    pub dec: DecoderCache<T>,
}

/// Deterministic base-model initialization: fan-in-scaled uniform conv and
/// linear weights, zero biases, unit norms.
pub fn init_base<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<UNet<T>> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, &[0x1b_a5_e]);
    let d = cfg.time_embed_dim;
    let mut time_fc1 = Linear::zeroed(d, d);
    let mut time_fc2 = Linear::zeroed(d, d);
    time_fc1.init_fan_in(&mut rng);
    time_fc2.init_fan_in(&mut rng);
    let mut encoder = Encoder::new(cfg);
    encoder.init(&mut rng);
    let l = cfg.depth_levels;
    let mut up = Vec::with_capacity(l - 1);
    let mut dec = Vec::with_capacity(l - 1);
    for lvl in 0..l - 1 {
        let w = cfg.width_at(lvl);
        let mut conv = Conv2d::zeroed(cfg.width_at(lvl + 1), w, 3, 1, 1);
        conv.init_fan_in(&mut rng);
        up.push(conv);
        let mut b0 = ConvBlock::new(2 * w, w, d);
        let mut b1 = ConvBlock::new(w, w, d);
        b0.init(&mut rng);
        b1.init(&mut rng);
        dec.push(LevelBlocks { b0, b1 });
    }
    let mut head = Conv2d::zeroed(cfg.base_width, cfg.in_channels, 3, 1, 1);
    head.init_fan_in(&mut rng);
    Ok(UNet {
        cfg: *cfg,
        init_seed: seed,
        time_fc1,
        time_fc2,
        encoder,
        up,
        dec,
        head_norm: GroupNorm::unit(cfg.base_width),
        head,
    })
}

impl<T: Real> UNet<T> {
    pub fn time_embed(&self, t: usize) -> TimeCache<T> {
        let emb0 = sinusoidal_embedding::<T>(t, self.cfg.time_embed_dim);
        let fc1_out = self.time_fc1.forward(&emb0);
        let fc1_act: Vec<T> = fc1_out.iter().map(|&v| silu(v)).collect();
        let temb = self.time_fc2.forward(&fc1_act);
        TimeCache {
            emb0,
            fc1_out,
            fc1_act,
            temb,
        }
    }

    pub fn time_embed_backward(
        &self,
        cache: &TimeCache<T>,
        dtemb: &[T],
        mut grad: Option<&mut UNet<T>>,
    ) {
        let mut d_fc1_act = vec![T::zero(); cache.fc1_act.len()];
        self.time_fc2.backward(
            &cache.fc1_act,
            dtemb,
            grad.as_deref_mut().map(|g| &mut g.time_fc2),
            Some(&mut d_fc1_act),
        );
        let d_fc1_out: Vec<T> = d_fc1_act
            .iter()
            .zip(&cache.fc1_out)
            .map(|(&d, &p)| d * silu_grad(p))
            .collect();
        self.time_fc1.backward(
            &cache.emb0,
            &d_fc1_out,
            grad.as_deref_mut().map(|g| &mut g.time_fc1),
            None,
        );
    }

    pub(crate) fn check_input(&self, x: &Tensor<T>, t: usize) -> Result<()> {
        if x.channels() != self.cfg.in_channels {
            return Err(Error::DimensionMismatch(format!(
                "expected {} input channels, got {}",
                self.cfg.in_channels,
                x.channels()
            )));
        }
        let m = self.cfg.spatial_multiple();
        if x.height() % m != 0 || x.width() % m != 0 {
            return Err(Error::DimensionMismatch(format!(
                "spatial dims must be multiples of {m}, got {}x{}",
                x.height(),
                x.width()
            )));
        }
        if t == 0 {
            return Err(Error::InvalidParam("timestep must be >= 1".into()));
        }
        Ok(())
    }

    /// Decoder pass from (possibly guidance-augmented) bottom and skips.
    pub fn decode(
        &self,
        bottom: &Tensor<T>,
        skips: &[Tensor<T>],
        temb: &[T],
    ) -> (Tensor<T>, DecoderCache<T>) {
        let l = self.cfg.depth_levels;
        let mut up_inputs = Vec::with_capacity(l - 1);
        let mut level_caches = Vec::with_capacity(l - 1);
        let mut h = bottom.clone();
        for lvl in (0..l - 1).rev() {
            let hu = upsample2(&h);
            let hc = self.up[lvl].forward(&hu);
            up_inputs.push(hu);
            let cat = Tensor::concat_channels(&skips[lvl], &hc).expect("skip dims match");
            let (h0, c0) = self.dec[lvl].b0.forward(&cat, temb);
            let (h1, c1) = self.dec[lvl].b1.forward(&h0, temb);
            level_caches.push((c0, c1));
            h = h1;
        }
        let (hn, head_stats) = self.head_norm.forward(&h);
        let ha = silu_tensor(&hn);
        let eps = self.head.forward(&ha);
        (
            eps,
            DecoderCache {
                up_inputs,
                level_caches,
                head_in: h,
                head_stats,
                head_pre_act: hn,
                head_act: ha,
            },
        )
    }

    /// Backward through the decoder. Returns `(dbottom, dskips)`.
    pub fn decode_backward(
        &self,
        cache: &DecoderCache<T>,
        temb: &[T],
        deps: &Tensor<T>,
        mut grad: Option<&mut UNet<T>>,
        mut dtemb: Option<&mut [T]>,
    ) -> (Tensor<T>, Vec<Tensor<T>>) {
        let l = self.cfg.depth_levels;
        let mut d_head_act = Tensor::zeros(
            cache.head_act.channels(),
            cache.head_act.height(),
            cache.head_act.width(),
        );
        self.head.backward(
            &cache.head_act,
            deps,
            grad.as_deref_mut().map(|g| &mut g.head),
            Some(&mut d_head_act),
        );
        for (d, &p) in d_head_act
            .data_mut()
            .iter_mut()
            .zip(cache.head_pre_act.data())
        {
            *d = *d * silu_grad(p);
        }
        let mut d_h = Tensor::zeros(
            cache.head_in.channels(),
            cache.head_in.height(),
            cache.head_in.width(),
        );
        self.head_norm.backward(
            &cache.head_in,
            &cache.head_stats,
            &d_head_act,
            grad.as_deref_mut().map(|g| &mut g.head_norm),
            Some(&mut d_h),
        );

        let mut dskips: Vec<Option<Tensor<T>>> = (0..l - 1).map(|_| None).collect();
        // decode iterated lvl = l-2 .. 0 (cache slot 0 holds lvl l-2); the
        // backward walk starts at the head, so it visits lvl 0 first
        for lvl in 0..l - 1 {
            let slot = l - 2 - lvl;
            let (c0, c1) = &cache.level_caches[slot];
            let blocks = &self.dec[lvl];
            let mut d_mid = Tensor::zeros(c1.x.channels(), c1.x.height(), c1.x.width());
            blocks.b1.backward(
                c1,
                temb,
                &d_h,
                grad.as_deref_mut().map(|g| &mut g.dec[lvl].b1),
                dtemb.as_deref_mut(),
                Some(&mut d_mid),
            );
            let mut d_cat = Tensor::zeros(c0.x.channels(), c0.x.height(), c0.x.width());
            blocks.b0.backward(
                c0,
                temb,
                &d_mid,
                grad.as_deref_mut().map(|g| &mut g.dec[lvl].b0),
                dtemb.as_deref_mut(),
                Some(&mut d_cat),
            );
            // split the concat gradient: [skip, up-conv output]
            let w_skip = self.cfg.width_at(lvl);
            let (h, w) = (d_cat.height(), d_cat.width());
            let mut d_skip = Tensor::zeros(w_skip, h, w);
            let mut d_hc = Tensor::zeros(w_skip, h, w);
            for c in 0..w_skip {
                d_skip.plane_mut(c).copy_from_slice(d_cat.plane(c));
                d_hc.plane_mut(c).copy_from_slice(d_cat.plane(w_skip + c));
            }
            dskips[lvl] = Some(d_skip);
            let hu = &cache.up_inputs[slot];
            let mut d_hu = Tensor::zeros(hu.channels(), hu.height(), hu.width());
            self.up[lvl].backward(
                hu,
                &d_hc,
                grad.as_deref_mut().map(|g| &mut g.up[lvl]),
                Some(&mut d_hu),
            );
            d_h = upsample2_backward(&d_hu);
        }
        (
            d_h,
            dskips.into_iter().map(|d| d.expect("all levels set")).collect(),
        )
    }

    /// Epsilon prediction of the base model.
    pub fn forward_base(&self, x: &Tensor<T>, t: usize) -> Result<(Tensor<T>, BaseCache<T>)> {
        self.check_input(x, t)?;
        let time = self.time_embed(t);
        let (enc_out, enc_cache) = self.encoder.forward(x, &time.temb);
        let (eps, dec_cache) = self.decode(&enc_out.bottom, &enc_out.skips, &time.temb);
        Ok((
            eps,
            BaseCache {
                time,
                enc: enc_cache,
                dec: dec_cache,
            },
        ))
    }

    /// Convenience forward without cache.
    pub fn predict(&self, x: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        Ok(self.forward_base(x, t)?.0)
    }

    /// Full backward for stage-1 training. Accumulates into `grad`.
    pub fn backward_base(
        &self,
        cache: &BaseCache<T>,
        deps: &Tensor<T>,
        grad: &mut UNet<T>,
    ) {
        let mut dtemb = vec![T::zero(); self.cfg.time_embed_dim];
        let (dbottom, dskips) =
            self.decode_backward(&cache.dec, &cache.time.temb, deps, Some(grad), Some(&mut dtemb));
        self.encoder.backward(
            &cache.enc,
            &cache.time.temb,
            &dskips,
            &dbottom,
            Some(&mut grad.encoder),
            Some(&mut dtemb),
            false,
        );
        self.time_embed_backward(&cache.time, &dtemb, Some(grad));
    }
}

impl<T: Real> ParamBlocks<T> for UNet<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        self.time_fc1.visit(&child(prefix, "time_fc1"), out);
        self.time_fc2.visit(&child(prefix, "time_fc2"), out);
        self.encoder.visit(&child(prefix, "encoder"), out);
        for (i, u) in self.up.iter().enumerate() {
            u.visit(&child(prefix, &format!("up{i}")), out);
        }
        for (i, d) in self.dec.iter().enumerate() {
            d.visit(&child(prefix, &format!("dec{i}")), out);
        }
        self.head_norm.visit(&child(prefix, "head_norm"), out);
        self.head.visit(&child(prefix, "head"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        self.time_fc1.visit_mut(&child(prefix, "time_fc1"), out);
        self.time_fc2.visit_mut(&child(prefix, "time_fc2"), out);
        self.encoder.visit_mut(&child(prefix, "encoder"), out);
        for (i, u) in self.up.iter_mut().enumerate() {
            u.visit_mut(&child(prefix, &format!("up{i}")), out);
        }
        for (i, d) in self.dec.iter_mut().enumerate() {
            d.visit_mut(&child(prefix, &format!("dec{i}")), out);
        }
        self.head_norm.visit_mut(&child(prefix, "head_norm"), out);
        self.head.visit_mut(&child(prefix, "head"), out);
    }
}
