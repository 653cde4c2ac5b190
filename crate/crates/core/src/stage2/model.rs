//! Landmark-to-face translation networks: appearance embedder, gated U-Net
//! generator with AdaIN at the bottleneck, and patch discriminators.

use candle_core::{DType, Device, Module, Tensor, D};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::media::video::Image;
use crate::nn::layers::{adain, leaky_relu};
use crate::nn::{Conv2d, GatedConv2d, Init, Linear, ParamStore};

/// Channel-stacked composites `x(t-p) .. x(t+p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVolume {
    pub frames: Vec<Image>,
}

impl ConditionVolume {
    /// Volume centred on `t`; indices past either end of the clip repeat
    /// the boundary frame.
    pub fn around(composites: &[Image], t: usize, half_window: usize) -> Result<Self> {
        if composites.is_empty() || t >= composites.len() {
            return Err(Error::Invalid(format!(
                "frame {t} outside a clip of {} composites",
                composites.len()
            )));
        }
        let last = composites.len() as i64 - 1;
        let frames = (-(half_window as i64)..=half_window as i64)
            .map(|d| composites[(t as i64 + d).clamp(0, last) as usize].clone())
            .collect();
        Ok(Self { frames })
    }

    pub fn channels(&self) -> usize {
        self.frames.len() * 3
    }

    /// `[(2p+1)·3, H, W]`.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let parts = self
            .frames
            .iter()
            .map(|f| f.to_tensor(dtype, device))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&parts, 0)?)
    }
}

pub fn level_width(base: usize, level: usize) -> usize {
    (base << level).min(8 * base)
}

/// Reference image → appearance vector `e`.
pub struct Embedder {
    convs: Vec<Conv2d>,
    out: Linear,
    pub embed_dim: usize,
}

impl Embedder {
    pub fn new(store: &ParamStore, base: usize, depth: usize, embed_dim: usize) -> Result<Self> {
        let mut convs = Vec::new();
        let mut cin = 3;
        for k in 0..depth {
            let c = level_width(base, k);
            convs.push(Conv2d::new(&store.pp(format!("conv{k}")), cin, c, 3, 2, 1)?);
            cin = c;
        }
        Ok(Self {
            convs,
            out: Linear::new(&store.pp("out"), cin, embed_dim)?,
            embed_dim,
        })
    }

    /// `[B, 3, H, W]` → `[B, embed_dim]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4()?;
        if c != 3 {
            return Err(Error::shape("3-channel reference", c));
        }
        let mut h = x.clone();
        for conv in &self.convs {
            h = leaky_relu(&conv.forward(&h)?)?;
        }
        let pooled = h.mean(D::Minus1)?.mean(D::Minus1)?;
        Ok(self.out.forward(&pooled)?)
    }
}

struct AdainBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

/// U-Net over condition volumes. Gated convolutions on both paths, AdaIN
/// residual blocks only at the smallest resolution, sigmoid output.
pub struct Generator {
    in_conv: GatedConv2d,
    downs: Vec<GatedConv2d>,
    blocks: Vec<AdainBlock>,
    /// `e` → every block's `(Δγ₁, β₁, Δγ₂, β₂)`; `γ = 1 + Δγ`.
    pub adain_affine: Linear,
    ups: Vec<GatedConv2d>,
    out: Conv2d,
    pub depth: usize,
    pub in_channels: usize,
    bottleneck: usize,
}

impl Generator {
    pub fn new(
        store: &ParamStore,
        in_channels: usize,
        base: usize,
        depth: usize,
        adain_blocks: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        let in_conv = GatedConv2d::new(&store.pp("in"), in_channels, base, 3, 1, 1)?;
        let mut downs = Vec::new();
        for k in 1..=depth {
            downs.push(GatedConv2d::new(
                &store.pp(format!("down{k}")),
                level_width(base, k - 1),
                level_width(base, k),
                3,
                2,
                1,
            )?);
        }
        let bottleneck = level_width(base, depth);
        let mut blocks = Vec::new();
        for b in 0..adain_blocks {
            let s = store.pp(format!("adain{b}"));
            blocks.push(AdainBlock {
                conv1: Conv2d::new(&s.pp("conv1"), bottleneck, bottleneck, 3, 1, 1)?,
                conv2: Conv2d::new(&s.pp("conv2"), bottleneck, bottleneck, 3, 1, 1)?,
            });
        }
        let adain_affine = Linear::with_init(
            &store.pp("adain_affine"),
            embed_dim,
            adain_blocks * 4 * bottleneck,
            Init::Uniform(1.0 / (embed_dim as f64).sqrt()),
            Init::Zeros,
        )?;
        let mut ups = Vec::new();
        for k in (1..=depth).rev() {
            let (cin, cout) = (level_width(base, k), level_width(base, k - 1));
            ups.push(GatedConv2d::new(
                &store.pp(format!("up{k}")),
                cin + cout,
                cout,
                3,
                1,
                1,
            )?);
        }
        Ok(Self {
            in_conv,
            downs,
            blocks,
            adain_affine,
            ups,
            out: Conv2d::new(&store.pp("out"), base, 3, 3, 1, 1)?,
            depth,
            in_channels,
            bottleneck,
        })
    }

    /// `volume: [B, (2p+1)·3, H, W]`, `e: [B, D]` → `[B, 3, H, W]` in `[0, 1]`.
    pub fn forward(&self, volume: &Tensor, e: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = volume.dims4()?;
        if c != self.in_channels {
            return Err(Error::shape(
                format!("{} volume channels", self.in_channels),
                c,
            ));
        }
        let unit = 1usize << self.depth;
        if h % unit != 0 || w % unit != 0 {
            return Err(Error::Invalid(format!(
                "resolution {h}x{w} is not divisible by 2^{} = {unit}",
                self.depth
            )));
        }
        if e.dims() != [b, self.adain_affine.weight.dim(1)?] {
            return Err(Error::shape(
                format!("[{b}, {}]", self.adain_affine.weight.dim(1)?),
                format!("{:?}", e.dims()),
            ));
        }
        let mut skips = Vec::with_capacity(self.depth);
        let mut x = self.in_conv.forward(volume)?;
        for down in &self.downs {
            skips.push(x.clone());
            x = down.forward(&x)?;
        }
        let params = self.adain_affine.forward(e)?;
        let n = self.bottleneck;
        for (i, block) in self.blocks.iter().enumerate() {
            let p = |j: usize| params.narrow(1, (4 * i + j) * n, n);
            let g1 = (p(0)? + 1.0)?;
            let g2 = (p(2)? + 1.0)?;
            let y = leaky_relu(&adain(&block.conv1.forward(&x)?, &g1, &p(1)?)?)?;
            let y = adain(&block.conv2.forward(&y)?, &g2, &p(3)?)?;
            x = (x + y)?;
        }
        for up in &self.ups {
            let skip = skips.pop().expect("one skip per level");
            let (_, _, sh, sw) = skip.dims4()?;
            let x_up = x.upsample_nearest2d(sh, sw)?;
            x = up.forward(&Tensor::cat(&[&x_up, &skip], 1)?)?;
        }
        Ok(candle_nn::ops::sigmoid(&self.out.forward(&x)?)?)
    }
}

/// Patch score map plus the activations used for feature matching.
#[derive(Debug, Clone)]
pub struct DiscOutput {
    pub score: Tensor,
    pub features: Vec<Tensor>,
}

/// Stride-2 4×4 conv stack with a 1-channel stride-1 head.
pub struct PatchDiscriminator {
    convs: Vec<Conv2d>,
    head: Conv2d,
    pub in_channels: usize,
}

impl PatchDiscriminator {
    pub fn new(
        store: &ParamStore,
        in_channels: usize,
        width: usize,
        layers: usize,
    ) -> Result<Self> {
        let mut convs = Vec::new();
        let mut cin = in_channels;
        for k in 0..layers {
            let c = level_width(width, k);
            convs.push(Conv2d::new(&store.pp(format!("conv{k}")), cin, c, 4, 2, 1)?);
            cin = c;
        }
        Ok(Self {
            convs,
            head: Conv2d::new(&store.pp("head"), cin, 1, 4, 1, 1)?,
            in_channels,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscOutput> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::shape(
                format!("{} discriminator channels", self.in_channels),
                c,
            ));
        }
        let mut features = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for conv in &self.convs {
            h = leaky_relu(&conv.forward(&h)?)?;
            features.push(h.clone());
        }
        Ok(DiscOutput {
            score: self.head.forward(&h)?,
            features,
        })
    }
}

/// Embedder, generator and both discriminators sharing one parameter store
/// under the prefixes `embedder`, `generator`, `disc_spatial` and
/// `disc_temporal`.
pub struct TranslationModel {
    store: ParamStore,
    pub embedder: Embedder,
    pub generator: Generator,
    pub disc_spatial: PatchDiscriminator,
    pub disc_temporal: PatchDiscriminator,
    pub half_window: usize,
    pub temporal_window: usize,
    pub conditional: bool,
    pub image_size: usize,
}

impl TranslationModel {
    pub fn new(cfg: &TrainConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let vol = cfg.volume_frames() * 3;
        let cond = if cfg.conditional_disc { 3 } else { 0 };
        let tw = cfg.temporal_disc_window;
        Ok(Self {
            embedder: Embedder::new(
                &store.pp("embedder"),
                cfg.base_width,
                cfg.unet_depth,
                cfg.embed_dim,
            )?,
            generator: Generator::new(
                &store.pp("generator"),
                vol,
                cfg.base_width,
                cfg.unet_depth,
                cfg.adain_blocks,
                cfg.embed_dim,
            )?,
            disc_spatial: PatchDiscriminator::new(
                &store.pp("disc_spatial"),
                3 + cond,
                cfg.disc_width,
                cfg.disc_layers,
            )?,
            disc_temporal: PatchDiscriminator::new(
                &store.pp("disc_temporal"),
                tw * (3 + cond),
                cfg.disc_width,
                cfg.disc_layers,
            )?,
            store: store.clone(),
            half_window: cfg.temporal_half_window_p,
            temporal_window: tw,
            conditional: cfg.conditional_disc,
            image_size: cfg.image_size,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn embedder_store(&self) -> ParamStore {
        self.store.pp("embedder")
    }

    pub fn generator_store(&self) -> ParamStore {
        self.store.pp("generator")
    }

    pub fn discriminator_stores(&self) -> [ParamStore; 2] {
        [
            self.store.pp("disc_spatial"),
            self.store.pp("disc_temporal"),
        ]
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// Appearance vector of one reference image, `[embed_dim]`.
    pub fn embed_appearance(&self, reference: &Image) -> Result<Tensor> {
        if reference.height != self.image_size || reference.width != self.image_size {
            return Err(Error::shape(
                format!("{0}x{0} reference", self.image_size),
                format!("{}x{}", reference.height, reference.width),
            ));
        }
        let x = reference
            .to_tensor(self.dtype(), self.device())?
            .unsqueeze(0)?;
        Ok(self.embedder.forward(&x)?.squeeze(0)?)
    }

    /// One generated frame for a volume and appearance vector.
    pub fn generate_face(&self, volume: &ConditionVolume, e: &Tensor) -> Result<Image> {
        let v = volume
            .to_tensor(self.dtype(), self.device())?
            .unsqueeze(0)?;
        let out = self.generator.forward(&v, &e.unsqueeze(0)?)?;
        Image::from_tensor(&out)
    }

    /// [`Self::generate_face`] with the appearance taken from `reference`.
    pub fn transfer_appearance(
        &self,
        volume: &ConditionVolume,
        reference: &Image,
    ) -> Result<Image> {
        self.generate_face(volume, &self.embed_appearance(reference)?)
    }

    /// Spatial discriminator input: `(composite, image)` pairs when
    /// conditional, else the images alone. Both `[B, 3, H, W]`.
    pub fn spatial_input(&self, composite: &Tensor, image: &Tensor) -> Result<Tensor> {
        Ok(if self.conditional {
            Tensor::cat(&[composite, image], 1)?
        } else {
            image.clone()
        })
    }

    /// Temporal discriminator input from `[B, T, 3, H, W]` windows of
    /// composites and images, `T` = the configured window.
    pub fn temporal_input(&self, composites: &Tensor, images: &Tensor) -> Result<Tensor> {
        let (b, t, c, h, w) = images.dims5()?;
        if t != self.temporal_window {
            return Err(Error::shape(
                format!("window of {} frames", self.temporal_window),
                format!("{t} frames"),
            ));
        }
        let imgs = images.reshape((b, t * c, h, w))?;
        Ok(if self.conditional {
            Tensor::cat(&[&composites.reshape((b, t * c, h, w))?, &imgs], 1)?
        } else {
            imgs
        })
    }
}
