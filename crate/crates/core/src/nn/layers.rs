//! Small layer set built on [`ParamStore`]: dense, 2-D convolution,
//! 1-D transposed convolution, gated convolution and AdaIN.

use candle_core::{Module, Tensor, D};

use super::store::{Init, ParamStore};
use crate::error::Result;

pub const LEAKY_SLOPE: f64 = 0.2;
/// Lower bound on the per-channel standard deviation in [`adain`].
pub const ADAIN_STD_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(store: &ParamStore, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_init(store, in_dim, out_dim, Init::He(in_dim), Init::Zeros)
    }

    pub fn with_init(
        store: &ParamStore,
        in_dim: usize,
        out_dim: usize,
        weight: Init,
        bias: Init,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.get(&[out_dim, in_dim], "weight", weight)?,
            bias: store.get(&[out_dim], "bias", bias)?,
        })
    }
}

impl Module for Linear {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.broadcast_matmul(&self.weight.t()?)?
            .broadcast_add(&self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        store: &ParamStore,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        Self::with_init(
            store,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            Init::He(fan_in),
            Init::Zeros,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_init(
        store: &ParamStore,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: Init,
        bias: Init,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.get(&[out_ch, in_ch, kernel, kernel], "weight", weight)?,
            bias: store.get(&[out_ch], "bias", bias)?,
            stride,
            padding,
        })
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = conv2d_exact(x, &self.weight, self.stride, self.padding)?;
        y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)
    }
}

/// Square-kernel 2-D convolution whose backward pass is correct for any
/// input size; see [`pad_for_stride`] and [`Conv2dOp`].
pub fn conv2d_exact(
    x: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> candle_core::Result<Tensor> {
    let k = weight.dim(2)?;
    let x = pad_for_stride(x, 2, k, stride, padding)?;
    let x = pad_for_stride(&x, 3, k, stride, padding)?;
    x.contiguous()?
        .apply_op2(&weight.contiguous()?, Conv2dOp { stride })
}

/// Unpadded, ungrouped 2-D convolution with a faster backward pass. Candle
/// computes the input gradient with a naive transposed convolution; here it
/// is a stride-1 convolution of the dilated output gradient with the
/// flipped kernel, which goes through the same im2col path as the forward.
pub struct Conv2dOp {
    pub stride: usize,
}

fn storage_tensor(
    s: &candle_core::CpuStorage,
    l: &candle_core::Layout,
) -> candle_core::Result<Tensor> {
    use candle_core::CpuStorage;
    let (a, b) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("conv2d op needs contiguous inputs".into()))?;
    let dev = candle_core::Device::Cpu;
    match s {
        CpuStorage::F32(v) => Tensor::from_slice(&v[a..b], l.shape(), &dev),
        CpuStorage::F64(v) => Tensor::from_slice(&v[a..b], l.shape(), &dev),
        _ => candle_core::bail!("conv2d op supports f32 and f64 only"),
    }
}

/// Inserts `stride - 1` zeros between elements along dims 2 and 3.
fn dilate(x: &Tensor, stride: usize) -> candle_core::Result<Tensor> {
    if stride == 1 {
        return Ok(x.clone());
    }
    let (b, c, h, w) = x.dims4()?;
    let z = x.zeros_like()?;
    let mut parts = vec![x.clone()];
    parts.extend(std::iter::repeat(z).take(stride - 1));
    let wide = Tensor::stack(&parts, 4)?
        .reshape((b, c, h, w * stride))?
        .narrow(3, 0, (w - 1) * stride + 1)?;
    let w2 = wide.dim(3)?;
    let z = wide.zeros_like()?;
    let mut parts = vec![wide];
    parts.extend(std::iter::repeat(z).take(stride - 1));
    Tensor::stack(&parts, 3)?
        .reshape((b, c, h * stride, w2))?
        .narrow(2, 0, (h - 1) * stride + 1)
}

impl candle_core::CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d-exact"
    }

    fn cpu_fwd(
        &self,
        s1: &candle_core::CpuStorage,
        l1: &candle_core::Layout,
        s2: &candle_core::CpuStorage,
        l2: &candle_core::Layout,
    ) -> candle_core::Result<(candle_core::CpuStorage, candle_core::Shape)> {
        let x = storage_tensor(s1, l1)?;
        let k = storage_tensor(s2, l2)?;
        let y = x.conv2d(&k, 0, self.stride, 1, 1)?;
        let shape = y.shape().clone();
        let flat = y.flatten_all()?;
        let storage = match flat.dtype() {
            candle_core::DType::F32 => candle_core::CpuStorage::F32(flat.to_vec1()?),
            _ => candle_core::CpuStorage::F64(flat.to_vec1()?),
        };
        Ok((storage, shape))
    }

    fn bwd(
        &self,
        x: &Tensor,
        k: &Tensor,
        _res: &Tensor,
        gy: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let (x, k, gy) = (x.detach(), k.detach(), gy.detach());
        let s = self.stride;
        let (_, _, h, w) = x.dims4()?;
        let (_, _, kh, kw) = k.dims4()?;
        let (_, _, ho, wo) = gy.dims4()?;
        let flipped = k.flip(&[2, 3])?.transpose(0, 1)?.contiguous()?;
        let gx = dilate(&gy, s)?
            .pad_with_zeros(2, kh - 1, kh - 1)?
            .pad_with_zeros(3, kw - 1, kw - 1)?
            .conv2d(&flipped, 0, 1, 1, 1)?;
        // rows/columns no window reached get zero gradient
        let gx = gx
            .pad_with_zeros(2, 0, h - ((ho - 1) * s + kh))?
            .pad_with_zeros(3, 0, w - ((wo - 1) * s + kw))?;
        let gk = x
            .transpose(0, 1)?
            .contiguous()?
            .conv2d(&gy.transpose(0, 1)?.contiguous()?, 0, 1, s, 1)?
            .narrow(2, 0, kh)?
            .narrow(3, 0, kw)?
            .transpose(0, 1)?
            .contiguous()?;
        Ok((Some(gx), Some(gk)))
    }
}

/// Zero-pads `dim` explicitly, trimming the trailing pad (or input) that a
/// strided kernel would never reach. Candle's convolution backward assumes
/// the windows tile the padded input exactly and otherwise returns a
/// gradient one element short.
pub(crate) fn pad_for_stride(
    x: &Tensor,
    dim: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> candle_core::Result<Tensor> {
    let len = x.dim(dim)?;
    let padded = len + 2 * padding;
    if padded < kernel {
        candle_core::bail!("input length {len} too short for kernel {kernel}");
    }
    let excess = (padded - kernel) % stride;
    let (after, keep) = if excess <= padding {
        (padding - excess, len)
    } else {
        (0, len - (excess - padding))
    };
    let x = if keep < len {
        x.narrow(dim, 0, keep)?
    } else {
        x.clone()
    };
    if padding == 0 && after == 0 {
        return Ok(x);
    }
    x.pad_with_zeros(dim, padding, after)
}

/// Stride-1 1-D convolution over `[B, C, L]`, run as a height-1 2-D
/// convolution with explicit zero padding. Candle's native conv1d backward
/// is wrong for batched multi-channel input and underflows on very short
/// sequences.
pub fn conv1d_padded(
    x: &Tensor,
    weight: &Tensor,
    padding: usize,
    groups: usize,
) -> candle_core::Result<Tensor> {
    let x = if padding > 0 {
        x.pad_with_zeros(2, padding, padding)?
    } else {
        x.clone()
    };
    x.unsqueeze(2)?
        .conv2d(&weight.unsqueeze(2)?, 0, 1, 1, groups)?
        .squeeze(2)
}

/// Transposed 1-D convolution over `[B, C, L]`, run as a height-1 2-D
/// transposed convolution.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose1d {
    pub fn new(
        store: &ParamStore,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.get(
                &[in_ch, out_ch, 1, kernel],
                "weight",
                Init::He(in_ch * kernel / stride.max(1)),
            )?,
            bias: store.get(&[out_ch], "bias", Init::Zeros)?,
            stride,
            padding,
        })
    }
}

impl Module for ConvTranspose1d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = x
            .unsqueeze(2)?
            .conv_transpose2d(&self.weight, 0, 0, self.stride, 1)?;
        let y = y.squeeze(2)?;
        let len = y.dim(2)?;
        let y = y.narrow(2, self.padding, len - 2 * self.padding)?;
        y.broadcast_add(&self.bias.reshape((1, (), 1))?)
    }
}

pub fn leaky_relu(x: &Tensor) -> candle_core::Result<Tensor> {
    candle_nn::ops::leaky_relu(x, LEAKY_SLOPE)
}

/// `leaky_relu(conv_f(x)) ⊙ sigmoid(conv_g(x))`.
#[derive(Debug, Clone)]
pub struct GatedConv2d {
    pub feature: Conv2d,
    pub gate: Conv2d,
}

impl GatedConv2d {
    pub fn new(
        store: &ParamStore,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Ok(Self {
            feature: Conv2d::new(&store.pp("feature"), in_ch, out_ch, kernel, stride, padding)?,
            gate: Conv2d::new(&store.pp("gate"), in_ch, out_ch, kernel, stride, padding)?,
        })
    }
}

impl Module for GatedConv2d {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        // one convolution for both branches
        let n = self.feature.weight.dim(0)?;
        let w = Tensor::cat(&[&self.feature.weight, &self.gate.weight], 0)?;
        let b = Tensor::cat(&[&self.feature.bias, &self.gate.bias], 0)?;
        let y = conv2d_exact(x, &w, self.feature.stride, self.feature.padding)?
            .broadcast_add(&b.reshape((1, (), 1, 1))?)?;
        let f = leaky_relu(&y.narrow(1, 0, n)?)?;
        let g = candle_nn::ops::sigmoid(&y.narrow(1, n, n)?)?;
        f * g
    }
}

/// Adaptive instance normalization of `x: [B, C, H, W]` with per-instance
/// `gamma, beta: [B, C]`: `gamma · (x − mean) / max(std, 1e-5) + beta`, with
/// population statistics over the spatial positions of each channel.
pub fn adain(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> candle_core::Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let floor = var
        .ones_like()?
        .affine(ADAIN_STD_FLOOR * ADAIN_STD_FLOOR, 0.0)?;
    let std = var.maximum(&floor)?.sqrt()?;
    let normed = centered.broadcast_div(&std)?;
    let out = normed
        .broadcast_mul(&gamma.reshape((b, c, 1))?)?
        .broadcast_add(&beta.reshape((b, c, 1))?)?;
    out.reshape((b, c, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn stats(t: &Tensor) -> Vec<(f64, f64)> {
        let (b, c, h, w) = t.dims4().unwrap();
        let v = t
            .to_dtype(DType::F64)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let n = (h * w) as f64;
        (0..b * c)
            .map(|k| {
                let s = &v[k * h * w..(k + 1) * h * w];
                let m = s.iter().sum::<f64>() / n;
                let var = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
                (m, var.sqrt())
            })
            .collect()
    }

    #[test]
    fn adain_standardizes_and_applies_affine() {
        let dev = Device::Cpu;
        let x = (Tensor::randn(0f32, 3., (2, 4, 6, 5), &dev).unwrap() + 1.5).unwrap();
        let one = Tensor::ones((2, 4), DType::F32, &dev).unwrap();
        let zero = Tensor::zeros((2, 4), DType::F32, &dev).unwrap();
        for (m, s) in stats(&adain(&x, &one, &zero).unwrap()) {
            assert!(m.abs() < 1e-5 && (s - 1.0).abs() < 1e-4, "{m} {s}");
        }
        let g = (one.clone() * 2.0).unwrap();
        let b = (one.clone() * 3.0).unwrap();
        for (m, s) in stats(&adain(&x, &g, &b).unwrap()) {
            assert!((m - 3.0).abs() < 1e-4 && (s - 2.0).abs() < 1e-4, "{m} {s}");
        }
    }

    #[test]
    fn adain_constant_channel_gives_beta() {
        let dev = Device::Cpu;
        let x = Tensor::full(0.75f32, (1, 2, 3, 3), &dev).unwrap();
        let g = Tensor::new(&[[5f32, -2.]], &dev).unwrap();
        let b = Tensor::new(&[[0.25f32, 4.]], &dev).unwrap();
        let y = adain(&x, &g, &b)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        assert!(y[..9].iter().all(|&v| v == 0.25));
        assert!(y[9..].iter().all(|&v| v == 4.0));
    }

    #[test]
    fn gate_closed_and_open() {
        let dev = Device::Cpu;
        let s = ParamStore::new(DType::F32, &dev, 1);
        let mut g = GatedConv2d::new(&s, 2, 3, 3, 1, 1).unwrap();
        let x = Tensor::randn(0f32, 1., (1, 2, 5, 5), &dev).unwrap();
        g.gate.weight = g.gate.weight.zeros_like().unwrap();
        g.gate.bias = Tensor::full(-20f32, 3, &dev).unwrap();
        let closed = g
            .forward(&x)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(closed < 1e-6, "{closed}");
        g.gate.bias = Tensor::full(20f32, 3, &dev).unwrap();
        let open = g.forward(&x).unwrap();
        let reference = leaky_relu(&g.feature.forward(&x).unwrap()).unwrap();
        let diff = (open - reference)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn conv_transpose_doubles_length() {
        let dev = Device::Cpu;
        let s = ParamStore::new(DType::F32, &dev, 1);
        let ct = ConvTranspose1d::new(&s, 4, 3, 4, 2, 1).unwrap();
        let y = ct
            .forward(&Tensor::zeros((2, 4, 10), DType::F32, &dev).unwrap())
            .unwrap();
        assert_eq!(y.dims(), &[2, 3, 20]);
    }

    fn var(seed: u64, shape: &[usize]) -> candle_core::Var {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        candle_core::Var::from_tensor(&Tensor::from_vec(v, shape, &Device::Cpu).unwrap()).unwrap()
    }

    /// Max relative error of `sum(f(vars) * probe)` over every coordinate.
    fn grad_err(
        vars: &[(&str, &candle_core::Var)],
        f: impl Fn() -> candle_core::Result<Tensor>,
    ) -> f64 {
        let probe = var(99, f().unwrap().dims()).as_tensor().detach();
        let named: Vec<(String, candle_core::Var)> = vars
            .iter()
            .map(|(n, v)| (n.to_string(), (*v).clone()))
            .collect();
        let r =
            crate::nn::check_gradients(&named, || Ok((f()? * &probe)?.sum_all()?), 1e-5, 1000, 0)
                .unwrap();
        r.max_rel_err
    }

    #[test]
    fn strided_conv2d_gradients() {
        // even and odd sizes; candle alone gets the even stride-2 case wrong
        for (b, c, h, stride) in [(2, 2, 5, 1), (2, 3, 6, 2), (3, 2, 7, 2)] {
            let s = ParamStore::new(DType::F64, &Device::Cpu, 3);
            let conv = Conv2d::new(&s, c, 3, 3, stride, 1).unwrap();
            let x = var(1, &[b, c, h, h + 1]);
            let mut vars: Vec<(String, candle_core::Var)> = s.named_vars();
            vars.push(("x".into(), x.clone()));
            let refs: Vec<(&str, &candle_core::Var)> =
                vars.iter().map(|(n, v)| (n.as_str(), v)).collect();
            let err = grad_err(&refs, || conv.forward(x.as_tensor()));
            assert!(err < 1e-6, "b{b} c{c} h{h} s{stride}: {err}");
        }
    }

    #[test]
    fn conv1d_padded_gradients() {
        for (b, c, l, groups) in [(2, 2, 4, 1), (3, 2, 1, 1), (2, 4, 3, 4), (2, 4, 1, 4)] {
            let x = var(2, &[b, c, l]);
            let k = var(3, &[c, c / groups, 3]);
            let err = grad_err(&[("x", &x), ("k", &k)], || {
                conv1d_padded(x.as_tensor(), k.as_tensor(), 1, groups)
            });
            assert!(err < 1e-6, "b{b} c{c} l{l} g{groups}: {err}");
        }
    }

    #[test]
    fn conv_transpose_gradients() {
        let s = ParamStore::new(DType::F64, &Device::Cpu, 4);
        let c = ConvTranspose1d::new(&s, 2, 3, 4, 2, 1).unwrap();
        let x = var(5, &[2, 2, 3]);
        let vars = s.named_vars();
        let mut refs: Vec<(&str, &candle_core::Var)> =
            vars.iter().map(|(n, v)| (n.as_str(), v)).collect();
        refs.push(("x", &x));
        assert!(grad_err(&refs, || c.forward(x.as_tensor())) < 1e-6);
    }

    #[test]
    fn adain_gradients() {
        let x = var(6, &[2, 3, 4, 4]);
        let g = var(7, &[2, 3]);
        let b = var(8, &[2, 3]);
        let err = grad_err(&[("x", &x), ("gamma", &g), ("beta", &b)], || {
            adain(x.as_tensor(), g.as_tensor(), b.as_tensor())
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gated_conv_gradients() {
        let s = ParamStore::new(DType::F64, &Device::Cpu, 9);
        let gc = GatedConv2d::new(&s, 1, 2, 3, 1, 1).unwrap();
        let x = var(10, &[1, 1, 4, 4]);
        let vars = s.named_vars();
        let mut refs: Vec<(&str, &candle_core::Var)> =
            vars.iter().map(|(n, v)| (n.as_str(), v)).collect();
        refs.push(("x", &x));
        let err = grad_err(&refs, || gc.forward(x.as_tensor()));
        assert!(err < 1e-4, "{err}");
    }
}
