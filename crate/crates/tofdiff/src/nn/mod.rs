//! The denoiser: a frozen-prior U-Net plus a trainable guidance branch
//! fused through zero convolutions, with hand-written backward passes.

pub mod guidance;
pub mod layers;
pub mod param;
pub mod unet;

pub use guidance::{backward_guided, forward_guided, init_guidance, GuidanceNet, GuidedCache};
pub use param::ParamBlocks;
pub use unet::{init_base, sinusoidal_embedding, BaseCache, Encoder, ModelConfig, UNet};
