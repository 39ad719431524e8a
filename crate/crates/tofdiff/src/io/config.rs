//! Flat key-value run configuration.
//!
//! One `key = value` pair per line, `#` starts a comment line. Unknown keys
//! and duplicate keys are rejected; every value is type-checked.

use crate::error::{Error, Result};
use std::collections::BTreeSet;

macro_rules! run_config {
    ($( $key:ident : $ty:ident = $default:expr ),+ $(,)?) => {
        /// All tunables of the pipeline in one flat document.
        #[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
        pub struct RunConfig {
            $(pub $key: $ty,)+
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($key: $default,)+ }
            }
        }

        impl RunConfig {
            /// Parses the key-value document, starting from defaults.
            pub fn parse(text: &str) -> Result<Self> {
                let mut cfg = Self::default();
                let mut seen: BTreeSet<String> = BTreeSet::new();
                for (lineno, raw) in text.lines().enumerate() {
                    let line = raw.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let (key, value) = line.split_once('=').ok_or_else(|| {
                        Error::Config(format!("line {}: expected key = value", lineno + 1))
                    })?;
                    let key = key.trim();
                    let value = value.trim();
                    if !seen.insert(key.to_string()) {
                        return Err(Error::Config(format!("duplicate key {key:?}")));
                    }
                    match key {
                        $(stringify!($key) => {
                            cfg.$key = value.parse::<$ty>().map_err(|_| {
                                Error::Config(format!(
                                    "key {key:?}: cannot parse {value:?} as {}",
                                    stringify!($ty)
                                ))
                            })?;
                        })+
                        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                    }
                }
                cfg.validate()?;
                Ok(cfg)
            }

            /// Serializes every key in declaration order.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{} = {}\n", stringify!($key), self.$key));)+
                out
            }
        }
    };
}

run_config! {
    // scene simulation
    width: usize = 64,
    height: usize = 64,
    frequency_hz: f64 = 2.0e7,
    // bright scenes drive the codec across its working range; pixels past
    // the fixed point saturate radially, which keeps phase intact
    amplitude_scale: f64 = 150.0,
    scene_min_depth: f64 = 1.0,
    scene_max_depth: f64 = 3.0,
    max_primitives: usize = 3,
    texture_amp: f64 = 0.15,
    // sensor noise
    read_sigma: f64 = 1.5,
    shot_gain: f64 = 0.01,
    edge_noise_sigma: f64 = 0.35,
    edge_noise_band: usize = 2,
    dropout_prob: f64 = 0.0,
    // dataset
    num_train_records: usize = 160,
    num_test_records: usize = 24,
    // range codec; normalize=false feeds raw high-dynamic-range values
    scale_const: f64 = 64.0,
    normalize: bool = true,
    // diffusion schedule (desk-scale chain; the library default stays 1000)
    train_steps: usize = 400,
    beta_start: f64 = 1e-3,
    beta_end: f64 = 0.04,
    // model
    in_channels: usize = 3,
    base_width: usize = 8,
    depth_levels: usize = 3,
    time_embed_dim: usize = 32,
    use_confidence: bool = true,
    // training
    prior_iterations: usize = 1000,
    iterations: usize = 1500,
    batch_size: usize = 4,
    learning_rate: f64 = 1e-3,
    grad_accum_steps: usize = 1,
    // sampler
    sample_steps: usize = 20,
    eta: f64 = 0.0,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width > 4096 || self.height > 4096 {
            return Err(Error::Config("width/height out of range".into()));
        }
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(Error::Config("frequency_hz must be positive".into()));
        }
        if self.scene_min_depth <= 0.0 || self.scene_min_depth >= self.scene_max_depth {
            return Err(Error::Config("scene depth range is empty".into()));
        }
        let range = crate::tofmodel::unambiguous_range(self.frequency_hz);
        if self.scene_max_depth >= range {
            return Err(Error::Config(format!(
                "scene_max_depth {} exceeds unambiguous range {range}",
                self.scene_max_depth
            )));
        }
        if !(self.scale_const.is_finite() && self.scale_const > 0.0) {
            return Err(Error::Config("scale_const must be positive".into()));
        }
        if self.sample_steps == 0 || self.sample_steps > self.train_steps {
            return Err(Error::Config(
                "sample_steps must be in 1..=train_steps".into(),
            ));
        }
        self.model_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.noise_params().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn model_config(&self) -> crate::nn::ModelConfig {
        crate::nn::ModelConfig {
            in_channels: self.in_channels,
            base_width: self.base_width,
            depth_levels: self.depth_levels,
            time_embed_dim: self.time_embed_dim,
            guidance_channels: self.in_channels + usize::from(self.use_confidence),
        }
    }

    pub fn noise_params(&self) -> crate::tofmodel::NoiseParams {
        crate::tofmodel::NoiseParams {
            read_sigma: self.read_sigma,
            shot_gain: self.shot_gain,
            edge_noise_sigma: self.edge_noise_sigma,
            edge_noise_band: self.edge_noise_band,
            dropout_prob: self.dropout_prob,
        }
    }

    pub fn schedule(&self) -> Result<crate::scheduler::Schedule> {
        crate::scheduler::Schedule::linear(self.train_steps, self.beta_start, self.beta_end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::parse("# just a comment\n\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::parse("no_such_key = 5\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(RunConfig::parse("width = 32\nwidth = 64\n").is_err());
    }

    #[test]
    fn type_errors_are_rejected() {
        assert!(RunConfig::parse("width = not_a_number\n").is_err());
        assert!(RunConfig::parse("normalize = maybe\n").is_err());
        assert!(RunConfig::parse("width\n").is_err());
    }

    #[test]
    fn semantic_validation_fires() {
        assert!(RunConfig::parse("width = 0\n").is_err());
        assert!(RunConfig::parse("scene_max_depth = 100.0\n").is_err());
        assert!(RunConfig::parse("sample_steps = 5000\n").is_err());
        assert!(RunConfig::parse("time_embed_dim = 7\n").is_err());
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::parse("width = 32\nheight=32\nnormalize = false\n").unwrap();
        assert_eq!(cfg.width, 32);
        assert!(!cfg.normalize);
        assert_eq!(cfg.model_config().guidance_channels, 4);
        let cfg2 = RunConfig::parse("use_confidence = false\n").unwrap();
        assert_eq!(cfg2.model_config().guidance_channels, 3);
    }
}
