//! Flat `key=value` training configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected; keys that are absent keep their default.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Every hyperparameter either stage needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the spatial adversarial term.
    pub lambda_s: f64,
    /// Weight of the temporal adversarial term.
    pub lambda_t: f64,
    /// Half width `p` of the composite condition volume (2p+1 frames).
    pub temporal_half_window_p: usize,
    pub embed_dim: usize,
    pub image_size: usize,
    pub unet_depth: usize,
    pub base_width: usize,
    pub adain_blocks: usize,
    pub disc_width: usize,
    pub disc_layers: usize,
    /// Number of consecutive frames seen by the temporal discriminator.
    pub temporal_disc_window: usize,
    /// Discriminators see (composite, image) pairs when true.
    pub conditional_disc: bool,
    pub mask_margin: f64,
    /// Loss weight applied inside the lower-face mask.
    pub mask_weight: f64,

    pub lr_stage1: f64,
    pub batch_size: usize,
    pub steps_stage1: usize,
    /// Consecutive frames per stage-1 training sample.
    pub seq_len: usize,
    /// Reference landmark frames sampled per stage-1 sample.
    pub ref_samples: usize,
    pub mel_width: usize,
    pub hidden_width: usize,

    pub lr_g: f64,
    pub lr_d: f64,
    pub steps_stage2: usize,
    pub batch_stage2: usize,
    pub finetune_steps: usize,

    /// Consecutive frames stacked per sample in the temporal Fréchet metric.
    pub tfid_window: usize,
    /// Diagonal shrinkage added to every fitted feature covariance.
    pub fid_shrinkage: f64,

    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_s: 1.0,
            lambda_t: 1.0,
            temporal_half_window_p: 1,
            embed_dim: 256,
            image_size: 64,
            unet_depth: 4,
            base_width: 64,
            adain_blocks: 2,
            disc_width: 64,
            disc_layers: 3,
            temporal_disc_window: 3,
            conditional_disc: true,
            mask_margin: 0.1,
            mask_weight: 2.0,
            lr_stage1: 1e-4,
            batch_size: 16,
            steps_stage1: 2000,
            seq_len: 5,
            ref_samples: 8,
            mel_width: 32,
            hidden_width: 256,
            lr_g: 2e-4,
            lr_d: 2e-4,
            steps_stage2: 1000,
            batch_stage2: 2,
            finetune_steps: 200,
            tfid_window: 3,
            fid_shrinkage: 1e-6,
            seed: 0,
        }
    }
}

macro_rules! config_keys {
    ($($key:ident : $kind:ident),* $(,)?) => {
        impl TrainConfig {
            /// All recognised keys, in serialization order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// Applies one `key=value` assignment.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key.trim() {
                    $(stringify!($key) => {
                        self.$key = config_keys!(@parse $kind, stringify!($key), value)?;
                    })*
                    other => return Err(Error::Config(format!("unknown key `{other}`"))),
                }
                Ok(())
            }

            /// Serializes every key, one `key=value` per line.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $( let _ = writeln!(out, "{}={}", stringify!($key), self.$key); )*
                out
            }
        }
    };
    (@parse float, $key:expr, $v:expr) => {
        $v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::Config(format!("`{}`: expected a finite number, got `{}`", $key, $v)))
    };
    (@parse int, $key:expr, $v:expr) => {
        $v.parse::<usize>()
            .map_err(|_| Error::Config(format!("`{}`: expected a non-negative integer, got `{}`", $key, $v)))
    };
    (@parse seed, $key:expr, $v:expr) => {
        $v.parse::<u64>()
            .map_err(|_| Error::Config(format!("`{}`: expected a non-negative integer, got `{}`", $key, $v)))
    };
    (@parse bool, $key:expr, $v:expr) => {
        match $v {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(Error::Config(format!("`{}`: expected true or false, got `{}`", $key, $v))),
        }
    };
}

config_keys! {
    lambda_s: float,
    lambda_t: float,
    temporal_half_window_p: int,
    embed_dim: int,
    image_size: int,
    unet_depth: int,
    base_width: int,
    adain_blocks: int,
    disc_width: int,
    disc_layers: int,
    temporal_disc_window: int,
    conditional_disc: bool,
    mask_margin: float,
    mask_weight: float,
    lr_stage1: float,
    batch_size: int,
    steps_stage1: int,
    seq_len: int,
    ref_samples: int,
    mel_width: int,
    hidden_width: int,
    lr_g: float,
    lr_d: float,
    steps_stage2: int,
    batch_stage2: int,
    finetune_steps: int,
    tfid_window: int,
    fid_shrinkage: float,
    seed: seed,
}

impl TrainConfig {
    /// Parses config text; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key=value, got `{line}`",
                    lineno + 1
                ))
            })?;
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a single `key=value` override (as given on the command line).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(key, value)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.lambda_s < 0.0 || self.lambda_t < 0.0 {
            return fail("lambda_s and lambda_t must be >= 0".into());
        }
        if self.embed_dim == 0 || self.base_width == 0 || self.disc_width == 0 {
            return fail("embed_dim, base_width and disc_width must be > 0".into());
        }
        let stride = 1usize << self.unet_depth;
        if self.image_size == 0 || self.image_size % stride != 0 {
            return fail(format!(
                "image_size {} is not a multiple of 2^unet_depth = {stride}",
                self.image_size
            ));
        }
        if self.temporal_disc_window == 0
            || self.seq_len == 0
            || self.ref_samples == 0
            || self.tfid_window == 0
        {
            return fail(
                "temporal_disc_window, seq_len, ref_samples and tfid_window must be > 0".into(),
            );
        }
        if self.batch_size == 0 || self.batch_stage2 == 0 {
            return fail("batch sizes must be > 0".into());
        }
        if !(self.mask_margin >= 0.0) || !(self.mask_weight >= 0.0) || !(self.fid_shrinkage >= 0.0)
        {
            return fail("mask_margin, mask_weight and fid_shrinkage must be >= 0".into());
        }
        if self.lr_stage1 <= 0.0 || self.lr_g <= 0.0 || self.lr_d <= 0.0 {
            return fail("learning rates must be > 0".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the serialized configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Number of frames in a condition volume.
    pub fn volume_frames(&self) -> usize {
        2 * self.temporal_half_window_p + 1
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TrainConfig::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(TrainConfig::parse("").unwrap(), TrainConfig::default());
        assert_eq!(
            TrainConfig::parse("\n# comment\n\n").unwrap(),
            TrainConfig::default()
        );
    }

    #[test]
    fn single_override() {
        let cfg = TrainConfig::parse("lambda_s=10").unwrap();
        assert_eq!(cfg.lambda_s, 10.0);
        assert_eq!(
            TrainConfig {
                lambda_s: 1.0,
                ..cfg
            },
            TrainConfig::default()
        );
    }

    #[test]
    fn non_numeric_value_names_key() {
        let err = TrainConfig::parse("lambda_s=abc").unwrap_err().to_string();
        assert!(err.contains("lambda_s"), "{err}");
    }

    #[test]
    fn unknown_key_and_malformed_line() {
        assert!(TrainConfig::parse("lambda_x=1")
            .unwrap_err()
            .to_string()
            .contains("lambda_x"));
        assert!(TrainConfig::parse("lambda_s 1")
            .unwrap_err()
            .to_string()
            .contains("line 1"));
    }

    #[test]
    fn image_size_must_divide() {
        assert!(TrainConfig::parse("image_size=72").is_err());
        assert!(
            TrainConfig::parse("image_size=80\nunet_depth=4")
                .unwrap()
                .image_size
                == 80
        );
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.lambda_t = 0.25;
        cfg.conditional_disc = false;
        cfg.seed = 99;
        let back = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(TrainConfig::default().hash(), cfg.hash());
    }
}
