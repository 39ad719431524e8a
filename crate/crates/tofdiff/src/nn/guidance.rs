//! Guidance branch: a trainable copy of the base encoder driven by the
//! noisy measurement and confidence stack, attached through zero
//! convolutions.
//!
//! All zero convolutions start at exactly zero, so a freshly attached
//! branch leaves the base model's output bit-identical; training moves the
//! zero convolutions away from zero and the guidance starts steering the
//! frozen decoder.

use crate::error::{Error, Result};
use crate::nn::layers::{silu, silu_grad, Conv2d, Linear};
use crate::nn::param::{child, ParamBlocks};
use crate::nn::unet::{BaseCache, Encoder, EncoderCache, TimeCache, UNet};
use crate::rng;
use crate::tensor::{Real, Tensor};

/// Trainable guidance parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceNet<T> {
    /// Guidance latent encoder: maps the guidance stack to the model's
    /// input channels. Four convs with silu between the first three.
    pub genc: Vec<Conv2d<T>>,
    /// Zero convolution on the guidance latent before fusion with the input.
    pub zero_in: Conv2d<T>,
    /// Trainable copies of the base time embedding and encoder.
    pub time_fc1: Linear<T>,
    pub time_fc2: Linear<T>,
    pub encoder: Encoder<T>,
    /// Per-skip-level output zero convolutions.
    pub zero_skip: Vec<Conv2d<T>>,
    /// Zero convolution on the bottom feature.
    pub zero_bottom: Conv2d<T>,
}

/// Builds the guidance branch from a frozen base model.
///
/// The encoder and time MLP are deep copies of the base weights; every zero
/// convolution is exactly zero. The guidance latent encoder is randomly
/// initialized from a stream derived from the base init seed, so the whole
/// construction is deterministic.
pub fn init_guidance<T: Real>(base: &UNet<T>) -> GuidanceNet<T> {
    let cfg = &base.cfg;
    let gw = cfg.base_width * 2;
    let mut rng = rng::stream(base.init_seed, &[0x61_1d]);
    let mut genc = vec![
        Conv2d::zeroed(cfg.guidance_channels, gw, 3, 1, 1),
        Conv2d::zeroed(gw, gw, 3, 1, 1),
        Conv2d::zeroed(gw, gw, 3, 1, 1),
        Conv2d::zeroed(gw, cfg.in_channels, 3, 1, 1),
    ];
    for c in genc.iter_mut() {
        c.init_fan_in(&mut rng);
    }
    let l = cfg.depth_levels;
    let zero_skip = (0..l - 1)
        .map(|lvl| Conv2d::zeroed(cfg.width_at(lvl), cfg.width_at(lvl), 1, 1, 0))
        .collect();
    GuidanceNet {
        genc,
        zero_in: Conv2d::zeroed(cfg.in_channels, cfg.in_channels, 1, 1, 0),
        time_fc1: base.time_fc1.clone(),
        time_fc2: base.time_fc2.clone(),
        encoder: base.encoder.clone(),
        zero_skip,
        zero_bottom: Conv2d::zeroed(cfg.width_at(l - 1), cfg.width_at(l - 1), 1, 1, 0),
    }
}

pub struct GuidedCache<T> {
    pub base: BaseCache<T>,
    pub gtime: TimeCache<T>,
    /// Inputs to each guidance-encoder conv.
    pub genc_inputs: Vec<Tensor<T>>,
    /// Pre-activation outputs of the first three guidance-encoder convs.
    pub genc_preacts: Vec<Tensor<T>>,
    /// Guidance latent (output of the last guidance-encoder conv).
    pub hg: Tensor<T>,
    pub guide_enc: EncoderCache<T>,
    pub gskips: Vec<Tensor<T>>,
    pub gbottom: Tensor<T>,
}

impl<T: Real> GuidanceNet<T> {
    fn time_embed(&self, t: usize, dim: usize) -> TimeCache<T> {
        let emb0 = crate::nn::unet::sinusoidal_embedding::<T>(t, dim);
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

    fn guidance_latent(&self, g: &Tensor<T>) -> (Tensor<T>, Vec<Tensor<T>>, Vec<Tensor<T>>) {
        let mut inputs = Vec::with_capacity(4);
        let mut preacts = Vec::with_capacity(3);
        let mut h = g.clone();
        for (i, conv) in self.genc.iter().enumerate() {
            inputs.push(h.clone());
            let out = conv.forward(&h);
            if i + 1 < self.genc.len() {
                preacts.push(out.clone());
                h = out.map(silu);
            } else {
                h = out;
            }
        }
        (h, inputs, preacts)
    }
}

/// Forward pass of base plus guidance.
///
/// Per decoder level, the frozen decoder input receives an additive
/// contribution from the guidance encoder through that level's zero
/// convolution. At initialization every contribution is exactly zero.
pub fn forward_guided<T: Real>(
    base: &UNet<T>,
    guide: &GuidanceNet<T>,
    x: &Tensor<T>,
    t: usize,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, GuidedCache<T>)> {
    let cfg = &base.cfg;
    if g.channels() != cfg.guidance_channels {
        return Err(Error::DimensionMismatch(format!(
            "guidance has {} channels, config wants {}",
            g.channels(),
            cfg.guidance_channels
        )));
    }
    if g.height() != x.height() || g.width() != x.width() {
        return Err(Error::DimensionMismatch(
            "guidance spatial dims differ from input".into(),
        ));
    }
    base.check_input(x, t)?;
    let time = base.time_embed(t);
    let gtime = guide.time_embed(t, cfg.time_embed_dim);

    let (hg, genc_inputs, genc_preacts) = guide.guidance_latent(g);
    let zin = guide.zero_in.forward(&hg);
    let fused = zin.add(x)?;

    let (gout, guide_enc) = guide.encoder.forward(&fused, &gtime.temb);
    let (bout, base_enc) = base.encoder.forward(x, &time.temb);

    let mut bottom = bout.bottom.clone();
    bottom.add_assign(&guide.zero_bottom.forward(&gout.bottom))?;
    let mut skips = Vec::with_capacity(bout.skips.len());
    for (lvl, skip) in bout.skips.iter().enumerate() {
        let mut s = skip.clone();
        s.add_assign(&guide.zero_skip[lvl].forward(&gout.skips[lvl]))?;
        skips.push(s);
    }
    let (eps, dec) = base.decode(&bottom, &skips, &time.temb);
    let (x_err, t_err) = (x.shape(), eps.shape());
    debug_assert_eq!(x_err, t_err);
    Ok((
        eps,
        GuidedCache {
            base: BaseCache {
                time,
                enc: base_enc,
                dec,
            },
            gtime,
            genc_inputs,
            genc_preacts,
            hg,
            guide_enc,
            gskips: gout.skips,
            gbottom: gout.bottom,
        },
    ))
}

/// Backward for stage-2 training: gradients flow through the frozen decoder
/// into the guidance parameters only. Base parameters receive nothing.
pub fn backward_guided<T: Real>(
    base: &UNet<T>,
    guide: &GuidanceNet<T>,
    cache: &GuidedCache<T>,
    deps: &Tensor<T>,
    grad: &mut GuidanceNet<T>,
) {
    // frozen decoder: propagate only, no parameter accumulation
    let (dbottom, dskips) =
        base.decode_backward(&cache.base.dec, &cache.base.time.temb, deps, None, None);

    // output zero convolutions
    let mut dgbottom = Tensor::zeros(
        cache.gbottom.channels(),
        cache.gbottom.height(),
        cache.gbottom.width(),
    );
    guide.zero_bottom.backward(
        &cache.gbottom,
        &dbottom,
        Some(&mut grad.zero_bottom),
        Some(&mut dgbottom),
    );
    let mut dgskips = Vec::with_capacity(dskips.len());
    for (lvl, dskip) in dskips.iter().enumerate() {
        let mut d = Tensor::zeros(
            cache.gskips[lvl].channels(),
            cache.gskips[lvl].height(),
            cache.gskips[lvl].width(),
        );
        guide.zero_skip[lvl].backward(
            &cache.gskips[lvl],
            dskip,
            Some(&mut grad.zero_skip[lvl]),
            Some(&mut d),
        );
        dgskips.push(d);
    }

    // trainable encoder copy
    let mut dgtemb = vec![T::zero(); cache.gtime.temb.len()];
    let dfused = guide
        .encoder
        .backward(
            &cache.guide_enc,
            &cache.gtime.temb,
            &dgskips,
            &dgbottom,
            Some(&mut grad.encoder),
            Some(&mut dgtemb),
            true,
        )
        .expect("dx requested");

    // fused = zero_in(hg) + x; the x path ends at the frozen input
    let mut dhg = Tensor::zeros(cache.hg.channels(), cache.hg.height(), cache.hg.width());
    guide.zero_in.backward(
        &cache.hg,
        &dfused,
        Some(&mut grad.zero_in),
        Some(&mut dhg),
    );

    // guidance latent encoder chain, last conv has no activation
    let mut d = dhg;
    for i in (0..guide.genc.len()).rev() {
        if i + 1 < guide.genc.len() {
            for (dv, &p) in d.data_mut().iter_mut().zip(cache.genc_preacts[i].data()) {
                *dv = *dv * silu_grad(p);
            }
        }
        let need_dx = i > 0;
        let mut dx = if need_dx {
            Some(Tensor::zeros(
                cache.genc_inputs[i].channels(),
                cache.genc_inputs[i].height(),
                cache.genc_inputs[i].width(),
            ))
        } else {
            None
        };
        guide.genc[i].backward(
            &cache.genc_inputs[i],
            &d,
            Some(&mut grad.genc[i]),
            dx.as_mut(),
        );
        if let Some(next) = dx {
            d = next;
        }
    }

    // trainable time MLP copy
    let mut d_fc1_act = vec![T::zero(); cache.gtime.fc1_act.len()];
    guide.time_fc2.backward(
        &cache.gtime.fc1_act,
        &dgtemb,
        Some(&mut grad.time_fc2),
        Some(&mut d_fc1_act),
    );
    let d_fc1_out: Vec<T> = d_fc1_act
        .iter()
        .zip(&cache.gtime.fc1_out)
        .map(|(&dv, &p)| dv * silu_grad(p))
        .collect();
    guide.time_fc1.backward(
        &cache.gtime.emb0,
        &d_fc1_out,
        Some(&mut grad.time_fc1),
        None,
    );
}

impl<T: Real> ParamBlocks<T> for GuidanceNet<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        for (i, c) in self.genc.iter().enumerate() {
            c.visit(&child(prefix, &format!("genc{i}")), out);
        }
        self.zero_in.visit(&child(prefix, "zero_in"), out);
        self.time_fc1.visit(&child(prefix, "time_fc1"), out);
        self.time_fc2.visit(&child(prefix, "time_fc2"), out);
        self.encoder.visit(&child(prefix, "encoder"), out);
        for (i, c) in self.zero_skip.iter().enumerate() {
            c.visit(&child(prefix, &format!("zero_skip{i}")), out);
        }
        self.zero_bottom.visit(&child(prefix, "zero_bottom"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        for (i, c) in self.genc.iter_mut().enumerate() {
            c.visit_mut(&child(prefix, &format!("genc{i}")), out);
        }
        self.zero_in.visit_mut(&child(prefix, "zero_in"), out);
        self.time_fc1.visit_mut(&child(prefix, "time_fc1"), out);
        self.time_fc2.visit_mut(&child(prefix, "time_fc2"), out);
        self.encoder.visit_mut(&child(prefix, "encoder"), out);
        for (i, c) in self.zero_skip.iter_mut().enumerate() {
            c.visit_mut(&child(prefix, &format!("zero_skip{i}")), out);
        }
        self.zero_bottom.visit_mut(&child(prefix, "zero_bottom"), out);
    }
}
