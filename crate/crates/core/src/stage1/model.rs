//! Audio-conditioned lower-face landmark generator.
//!
//! Three encoders (mel window, upper-face pose, reference landmarks) produce
//! `embed_dim` vectors that are blended with a softmax-normalized global
//! weight, then decoded per timestep by two transposed-convolution branches
//! (jaw, lips) and smoothed by a depthwise temporal convolution followed by a
//! convolution along the point axis.

use candle_core::{DType, Device, Module, Tensor, D};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::landmarks::{LandmarkPartition, NUM_POINTS};
use crate::media::mel::{MEL_BANDS, WINDOW_ROWS};
use crate::nn::layers::{conv1d_padded, leaky_relu};
use crate::nn::{Conv2d, ConvTranspose1d, Init, Linear, ParamStore};

/// Architecture sizes for [`LandmarkGenModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkGenSpec {
    pub embed_dim: usize,
    pub mel_width: usize,
    pub hidden_width: usize,
    /// Flattened length of one reference frame (all landmarks).
    pub ref_points: usize,
    pub n_upper: usize,
    /// Landmark indices of the output, ascending (the lower set).
    pub lower: Vec<usize>,
    /// Lip indices; every other lower index is decoded by the jaw branch.
    pub lips: Vec<usize>,
}

impl LandmarkGenSpec {
    pub fn from_config(cfg: &TrainConfig, partition: &LandmarkPartition) -> Self {
        Self {
            embed_dim: cfg.embed_dim,
            mel_width: cfg.mel_width,
            hidden_width: cfg.hidden_width,
            ref_points: NUM_POINTS,
            n_upper: partition.upper.len(),
            lower: partition.lower.clone(),
            lips: partition.lips.clone(),
        }
    }

    pub fn n_lower(&self) -> usize {
        self.lower.len()
    }
}

struct ResDown {
    down: Conv2d,
    res: Conv2d,
}

impl ResDown {
    fn new(s: &ParamStore, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            down: Conv2d::new(&s.pp("down"), cin, cout, 3, 2, 1)?,
            res: Conv2d::new(&s.pp("res"), cout, cout, 3, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let h = leaky_relu(&self.down.forward(x)?)?;
        leaky_relu(&(self.res.forward(&h)? + h)?)
    }
}

struct Mlp {
    l1: Linear,
    l2: Linear,
}

impl Mlp {
    fn new(s: &ParamStore, din: usize, hidden: usize, dout: usize) -> Result<Self> {
        Ok(Self {
            l1: Linear::new(&s.pp("l1"), din, hidden)?,
            l2: Linear::new(&s.pp("l2"), hidden, dout)?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.l2.forward(&leaky_relu(&self.l1.forward(x)?)?)
    }
}

/// One decoder branch: latent → `[C, L0]` → two ×2 transposed convolutions
/// → per-position `(x, y)`.
struct Branch {
    n_points: usize,
    base_len: usize,
    channels: usize,
    project: Linear,
    up1: ConvTranspose1d,
    up2: ConvTranspose1d,
    head: Linear,
}

impl Branch {
    fn new(s: &ParamStore, embed_dim: usize, channels: usize, n_points: usize) -> Result<Self> {
        let base_len = n_points.div_ceil(4).max(1);
        Ok(Self {
            n_points,
            base_len,
            channels,
            project: Linear::new(&s.pp("project"), embed_dim, channels * base_len)?,
            up1: ConvTranspose1d::new(&s.pp("up1"), channels, channels, 4, 2, 1)?,
            up2: ConvTranspose1d::new(&s.pp("up2"), channels, channels, 4, 2, 1)?,
            head: Linear::with_init(
                &s.pp("head"),
                channels,
                2,
                Init::Uniform(0.1 / (channels as f64).sqrt()),
                Init::Const(0.5),
            )?,
        })
    }

    /// `[M, D]` → `[M, n_points, 2]`.
    fn forward(&self, z: &Tensor) -> candle_core::Result<Tensor> {
        let m = z.dim(0)?;
        let h =
            leaky_relu(&self.project.forward(z)?)?.reshape((m, self.channels, self.base_len))?;
        let h = leaky_relu(&self.up1.forward(&h)?)?;
        let h = leaky_relu(&self.up2.forward(&h)?)?;
        let h = h.transpose(1, 2)?.narrow(1, 0, self.n_points)?;
        self.head.forward(&h)
    }
}

pub struct LandmarkGenModel {
    pub spec: LandmarkGenSpec,
    store: ParamStore,
    mel_blocks: Vec<ResDown>,
    mel_out: Linear,
    pose_enc: Mlp,
    ref_enc: Mlp,
    fusion_raw: Tensor,
    jaw: Branch,
    lips: Branch,
    /// Maps jaw-then-lips order to ascending lower-index order.
    order: Tensor,
    temporal_w: Tensor,
    temporal_b: Tensor,
    coord_w: Tensor,
    coord_b: Tensor,
}

impl LandmarkGenModel {
    pub fn new(spec: LandmarkGenSpec, store: &ParamStore) -> Result<Self> {
        let lip_set: Vec<bool> = spec.lower.iter().map(|i| spec.lips.contains(i)).collect();
        let n_jaw = lip_set.iter().filter(|&&b| !b).count();
        let n_lips = spec.n_lower() - n_jaw;
        if n_jaw == 0 || n_lips == 0 {
            return Err(Error::Invalid(
                "both jaw and lip landmarks are required".into(),
            ));
        }
        let (mut j, mut l) = (0u32, n_jaw as u32);
        let order: Vec<u32> = lip_set
            .iter()
            .map(|&is_lip| {
                let k = if is_lip { &mut l } else { &mut j };
                *k += 1;
                *k - 1
            })
            .collect();

        let d = spec.embed_dim;
        let w = spec.mel_width;
        let widths = [w, 2 * w, 4 * w, 4 * w];
        let mut mel_blocks = Vec::new();
        let mut cin = 1;
        for (i, &c) in widths.iter().enumerate() {
            mel_blocks.push(ResDown::new(&store.pp(format!("mel.block{i}")), cin, c)?);
            cin = c;
        }
        let mel_out = Linear::new(&store.pp("mel.out"), cin, d)?;
        let pose_enc = Mlp::new(&store.pp("pose"), spec.n_upper * 2, spec.hidden_width, d)?;
        let ref_enc = Mlp::new(
            &store.pp("reference"),
            spec.ref_points * 2,
            spec.hidden_width,
            d,
        )?;
        let fusion_raw = store.get(&[3], "fusion.raw", Init::Zeros)?;
        let jaw = Branch::new(&store.pp("decoder.jaw"), d, w, n_jaw)?;
        let lips = Branch::new(&store.pp("decoder.lips"), d, w, n_lips)?;

        let p2 = spec.n_lower() * 2;
        let temporal_w = store.get(&[p2, 1, 3], "smooth.temporal.weight", Init::Zeros)?;
        let temporal_b = store.get(&[p2], "smooth.temporal.bias", Init::Zeros)?;
        let coord_w = store.get(&[2, 2, 3], "smooth.coord.weight", Init::Zeros)?;
        let coord_b = store.get(&[2], "smooth.coord.bias", Init::Zeros)?;
        let model = Self {
            order: Tensor::new(order.as_slice(), store.device())?,
            spec,
            store: store.clone(),
            mel_blocks,
            mel_out,
            pose_enc,
            ref_enc,
            fusion_raw,
            jaw,
            lips,
            temporal_w,
            temporal_b,
            coord_w,
            coord_b,
        };
        model.reset_smoothing_to_identity()?;
        Ok(model)
    }

    pub fn from_config(
        cfg: &TrainConfig,
        partition: &LandmarkPartition,
        store: &ParamStore,
    ) -> Result<Self> {
        Self::new(LandmarkGenSpec::from_config(cfg, partition), store)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// Sets both smoothing convolutions to pass-through (centre tap 1).
    pub fn reset_smoothing_to_identity(&self) -> Result<()> {
        let dev = self.device();
        let dt = self.dtype();
        let p2 = self.spec.n_lower() * 2;
        let tw: Vec<f64> = (0..p2).flat_map(|_| [0.0, 1.0, 0.0]).collect();
        let cw: Vec<f64> = (0..2)
            .flat_map(|o| (0..2).flat_map(move |i| [0.0, if i == o { 1.0 } else { 0.0 }, 0.0]))
            .collect();
        let vars = self.store.named_vars();
        for (name, var) in vars {
            let value = if name.ends_with("smooth.temporal.weight") {
                Tensor::from_vec(tw.clone(), (p2, 1, 3), dev)?
            } else if name.ends_with("smooth.coord.weight") {
                Tensor::from_vec(cw.clone(), (2, 2, 3), dev)?
            } else if name.ends_with("smooth.temporal.bias") || name.ends_with("smooth.coord.bias")
            {
                var.zeros_like()?
            } else {
                continue;
            };
            var.set(&value.to_dtype(dt)?)?;
        }
        Ok(())
    }

    /// Current fusion weights `softmax(raw)`; they sum to one.
    pub fn fusion_weights(&self) -> Result<Tensor> {
        Ok(candle_nn::ops::softmax(&self.fusion_raw, 0)?)
    }

    pub fn fusion_weights_vec(&self) -> Result<[f64; 3]> {
        let v = self
            .fusion_weights()?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?;
        Ok([v[0], v[1], v[2]])
    }

    pub fn fusion_params(&self) -> Result<FusionWeights> {
        let v = self.fusion_raw.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        Ok(FusionWeights {
            raw: [v[0], v[1], v[2]],
        })
    }

    /// `[N, 20, 80]` mel windows → `[N, D]`.
    pub fn encode_mel(&self, windows: &Tensor) -> Result<Tensor> {
        let dims = windows.dims();
        if dims.len() != 3 || dims[1] != WINDOW_ROWS || dims[2] != MEL_BANDS {
            return Err(Error::shape(
                format!("[N, {WINDOW_ROWS}, {MEL_BANDS}]"),
                format!("{dims:?}"),
            ));
        }
        let mut h = windows.unsqueeze(1)?;
        for b in &self.mel_blocks {
            h = b.forward(&h)?;
        }
        let pooled = h.mean(D::Minus1)?.mean(D::Minus1)?;
        Ok(self.mel_out.forward(&pooled)?)
    }

    /// `[N, n_upper * 2]` flattened upper landmarks → `[N, D]`.
    pub fn encode_pose(&self, upper: &Tensor) -> Result<Tensor> {
        let want = self.spec.n_upper * 2;
        if upper.dim(D::Minus1)? != want {
            return Err(Error::shape(
                format!("[.., {want}]"),
                format!("{:?}", upper.dims()),
            ));
        }
        Ok(self.pose_enc.forward(upper)?)
    }

    /// `[N, K, ref_points * 2]` reference frames → `[N, D]`, the mean of the
    /// per-frame encodings.
    pub fn encode_reference(&self, frames: &Tensor) -> Result<Tensor> {
        let (n, k, len) = frames.dims3()?;
        if k == 0 {
            return Err(Error::Invalid("reference track is empty".into()));
        }
        if len != self.spec.ref_points * 2 {
            return Err(Error::shape(self.spec.ref_points * 2, len));
        }
        let per_frame = self.ref_enc.forward(&frames.reshape((n * k, len))?)?;
        Ok(per_frame.reshape((n, k, ()))?.mean(1)?)
    }

    /// `W₀·mel + W₁·pose + W₂·ref`. `mel` and `pose` are `[N, T, D]`, `ref`
    /// is `[N, D]` repeated along time.
    pub fn fuse(&self, mel: &Tensor, pose: &Tensor, reference: &Tensor) -> Result<Tensor> {
        fuse_with(&self.fusion_weights()?, mel, pose, reference)
    }

    /// `[N, T, D]` fused latents → `[N, T, n_lower, 2]` in `[0, 1]`.
    pub fn decode_lower_landmarks(&self, fused: &Tensor) -> Result<Tensor> {
        let (n, t, d) = fused.dims3()?;
        if n == 0 || t == 0 {
            return Err(Error::Invalid("empty latent sequence".into()));
        }
        let p = self.spec.n_lower();
        let z = fused.reshape((n * t, d))?;
        let both = Tensor::cat(&[self.jaw.forward(&z)?, self.lips.forward(&z)?], 1)?;
        let ordered = both.index_select(&self.order, 1)?; // [NT, P, 2]

        // depthwise temporal smoothing over [N, P*2, T]
        let seq = ordered
            .reshape((n, t, p * 2))?
            .transpose(1, 2)?
            .contiguous()?;
        let seq = conv1d_padded(&seq, &self.temporal_w, 1, p * 2)?
            .broadcast_add(&self.temporal_b.reshape((1, (), 1))?)?;
        // smoothing along the point axis over [NT, 2, P]
        let pts = seq
            .transpose(1, 2)?
            .reshape((n * t, p, 2))?
            .transpose(1, 2)?
            .contiguous()?;
        let pts = conv1d_padded(&pts, &self.coord_w, 1, 1)?
            .broadcast_add(&self.coord_b.reshape((1, (), 1))?)?;
        let out = pts.transpose(1, 2)?.reshape((n, t, p, 2))?;
        Ok(out.clamp(0.0, 1.0)?)
    }

    /// Full forward pass.
    ///
    /// * `mel_windows`: `[N, T, 20, 80]`
    /// * `upper`: `[N, T, n_upper * 2]`
    /// * `reference`: `[N, K, ref_points * 2]`
    ///
    /// Returns `[N, T, n_lower, 2]`.
    pub fn forward(
        &self,
        mel_windows: &Tensor,
        upper: &Tensor,
        reference: &Tensor,
    ) -> Result<Tensor> {
        let (n, t, rows, bands) = mel_windows.dims4()?;
        let mel = self
            .encode_mel(&mel_windows.reshape((n * t, rows, bands))?)?
            .reshape((n, t, ()))?;
        let pose = self.encode_pose(upper)?;
        let reference = self.encode_reference(reference)?;
        let fused = self.fuse(&mel, &pose, &reference)?;
        self.decode_lower_landmarks(&fused)
    }

    /// One frame: `[20, 80]` window, `[n_upper * 2]` pose and `[K, ref_points * 2]`
    /// reference → `[n_lower, 2]`.
    pub fn generate(
        &self,
        mel_window: &Tensor,
        upper: &Tensor,
        reference: &Tensor,
    ) -> Result<Tensor> {
        let out = self.forward(
            &mel_window.unsqueeze(0)?.unsqueeze(0)?,
            &upper.unsqueeze(0)?.unsqueeze(0)?,
            &reference.unsqueeze(0)?,
        )?;
        Ok(out.squeeze(0)?.squeeze(0)?)
    }
}

/// Global fusion weights: raw parameters and their softmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub raw: [f64; 3],
}

impl FusionWeights {
    /// `exp(raw_i) / Σ exp(raw_j)`.
    pub fn effective(&self) -> [f64; 3] {
        let m = self.raw.iter().cloned().fold(f64::MIN, f64::max);
        let e = self.raw.map(|r| (r - m).exp());
        let s: f64 = e.iter().sum();
        e.map(|v| v / s)
    }

    /// Raw parameters whose softmax is exactly proportional to `w`.
    pub fn from_effective(w: [f64; 3]) -> Self {
        Self {
            raw: w.map(|v| if v > 0.0 { v.ln() } else { -1e30 }),
        }
    }

    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::new(&self.effective(), device)?.to_dtype(dtype)?)
    }
}

/// Blends encoder outputs with the given fusion weights.
pub fn fuse(mel: &Tensor, pose: &Tensor, reference: &Tensor, w: &FusionWeights) -> Result<Tensor> {
    fuse_with(
        &w.to_tensor(mel.dtype(), mel.device())?,
        mel,
        pose,
        reference,
    )
}

/// Weighted blend with explicit weights `w: [3]`.
pub fn fuse_with(w: &Tensor, mel: &Tensor, pose: &Tensor, reference: &Tensor) -> Result<Tensor> {
    if mel.dims() != pose.dims() || mel.dim(D::Minus1)? != reference.dim(D::Minus1)? {
        return Err(Error::shape(
            format!("{:?}", mel.dims()),
            format!("pose {:?}, reference {:?}", pose.dims(), reference.dims()),
        ));
    }
    let reference = if reference.rank() + 1 == mel.rank() {
        reference.unsqueeze(1)?.broadcast_as(mel.shape())?
    } else {
        reference.broadcast_as(mel.shape())?
    };
    let w0 = w.narrow(0, 0, 1)?;
    let w1 = w.narrow(0, 1, 1)?;
    let w2 = w.narrow(0, 2, 1)?;
    let out = mel
        .broadcast_mul(&w0)?
        .add(&pose.broadcast_mul(&w1)?)?
        .add(&reference.broadcast_mul(&w2)?)?;
    Ok(out)
}

/// Mean absolute difference over every element (batch, time, points and
/// coordinates).
pub fn l1_landmark_loss(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(
            format!("{:?}", gt.dims()),
            format!("{:?}", pred.dims()),
        ));
    }
    Ok((pred - gt)?.abs()?.mean_all()?)
}

#[cfg(test)]
#[path = "tests.rs"]
mod tests;
