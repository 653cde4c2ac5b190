//! Pluggable feature networks for the perceptual loss and the perceptual
//! and temporal-Fréchet metrics.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layers::conv2d_exact;

/// Maps a `[B, C, H, W]` batch to a list of per-layer feature maps.
/// Implementations must be pure: the same input gives the same features.
pub trait FeatureExtractor: Send + Sync {
    fn num_layers(&self) -> usize;
    /// Required input channel count, or `None` if any count is accepted.
    fn in_channels(&self) -> Option<usize>;
    fn extract(&self, x: &Tensor) -> Result<Vec<Tensor>>;
}

/// Returns the input as its single layer.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn num_layers(&self) -> usize {
        1
    }

    fn in_channels(&self) -> Option<usize> {
        None
    }

    fn extract(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![x.clone()])
    }
}

#[derive(Debug, Clone)]
struct FixedConv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
}

/// A frozen stack of 3×3 ReLU convolutions. Weights are constants, never
/// trained; gradients flow only to the input. Optionally the raw input is
/// reported as an extra first layer.
#[derive(Debug, Clone)]
pub struct ConvStackExtractor {
    layers: Vec<FixedConv>,
    include_input: bool,
}

pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x5eed_f00d;
const DEFAULT_WIDTHS: [(usize, usize); 3] = [(16, 1), (32, 2), (64, 2)];

impl ConvStackExtractor {
    /// Seeded random He-initialized stack (16, 32, 64 channels; strides
    /// 1, 2, 2).
    pub fn random(in_channels: usize, seed: u64, include_input: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut cin = in_channels;
        for (cout, stride) in DEFAULT_WIDTHS {
            let fan_in = cin * 9;
            let bound = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f32> = (0..cout * fan_in)
                .map(|_| rng.gen_range(-bound..=bound) as f32)
                .collect();
            layers.push(FixedConv {
                weight: Tensor::from_vec(w, (cout, cin, 3, 3), &Device::Cpu).expect("shape"),
                bias: Tensor::zeros(cout, DType::F32, &Device::Cpu).expect("shape"),
                stride,
            });
            cin = cout;
        }
        Self {
            layers,
            include_input,
        }
    }

    /// The default extractor for RGB images: random stack plus the raw
    /// pixel layer.
    pub fn default_rgb() -> Self {
        Self::random(3, DEFAULT_EXTRACTOR_SEED, true)
    }

    /// Saves weights as safetensors: `layer{i}.weight`, `layer{i}.bias`,
    /// `layer{i}.stride` (one-element f32) and `include_input`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut map = HashMap::new();
        for (i, l) in self.layers.iter().enumerate() {
            map.insert(format!("layer{i}.weight"), l.weight.clone());
            map.insert(format!("layer{i}.bias"), l.bias.clone());
            map.insert(
                format!("layer{i}.stride"),
                Tensor::new(&[l.stride as f32], &Device::Cpu)?,
            );
        }
        map.insert(
            "include_input".into(),
            Tensor::new(&[self.include_input as u8 as f32], &Device::Cpu)?,
        );
        candle_core::safetensors::save(&map, path.as_ref())?;
        Ok(())
    }

    /// Loads a stack saved by [`ConvStackExtractor::save`] or any weight file
    /// following the same naming.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let map = candle_core::safetensors::load(path, &Device::Cpu)?;
        let scalar = |k: &str| -> Result<f32> {
            let t = map
                .get(k)
                .ok_or_else(|| Error::format(path, format!("missing `{k}`")))?;
            Ok(t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?[0])
        };
        let mut layers = Vec::new();
        for i in 0.. {
            let Some(weight) = map.get(&format!("layer{i}.weight")) else {
                break;
            };
            let bias = map
                .get(&format!("layer{i}.bias"))
                .ok_or_else(|| Error::format(path, format!("missing layer{i}.bias")))?;
            layers.push(FixedConv {
                weight: weight.to_dtype(DType::F32)?,
                bias: bias.to_dtype(DType::F32)?,
                stride: scalar(&format!("layer{i}.stride"))? as usize,
            });
        }
        if layers.is_empty() {
            return Err(Error::format(path, "no layers"));
        }
        Ok(Self {
            layers,
            include_input: scalar("include_input")? != 0.0,
        })
    }
}

impl FeatureExtractor for ConvStackExtractor {
    fn num_layers(&self) -> usize {
        self.layers.len() + self.include_input as usize
    }

    fn in_channels(&self) -> Option<usize> {
        self.layers
            .first()
            .map(|l| l.weight.dim(1).expect("rank 4"))
    }

    fn extract(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let (_, c, _, _) = x.dims4()?;
        if let Some(want) = self.in_channels() {
            if c != want {
                return Err(Error::shape(format!("{want} input channels"), c));
            }
        }
        let mut out = Vec::with_capacity(self.num_layers());
        if self.include_input {
            out.push(x.clone());
        }
        let mut h = x.clone();
        for l in &self.layers {
            let w = l.weight.to_dtype(x.dtype())?;
            let b = l.bias.to_dtype(x.dtype())?.reshape((1, (), 1, 1))?;
            h = conv2d_exact(&h, &w, l.stride, 1)?
                .broadcast_add(&b)?
                .relu()?;
            out.push(h.clone());
        }
        Ok(out)
    }
}
