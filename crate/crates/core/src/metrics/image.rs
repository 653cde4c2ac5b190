//! Per-image quality metrics.

use candle_core::{DType, Device};

use crate::error::{Error, Result};
use crate::media::video::Image;
use crate::nn::FeatureExtractor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Returned by [`psnr`] for identical images, and the ceiling for near-identical ones.
pub const PSNR_CAP: f64 = 100.0;
const NORM_EPS: f64 = 1e-10;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(
            format!("{}x{}", a.height, a.width),
            format!("{}x{}", b.height, b.width),
        ));
    }
    Ok(())
}

/// ITU-R BT.601 luma.
pub fn to_gray(img: &Image) -> Vec<f64> {
    img.data
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

/// Unnormalized 1-D Gaussian taps, centre at index `SSIM_WINDOW / 2`.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
}

/// Gaussian-weighted local mean along one axis. Taps falling outside the
/// image are dropped and the remaining ones renormalized.
fn blur_axis(src: &[f64], h: usize, w: usize, horizontal: bool, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, &g) in taps.iter().enumerate() {
                let d = k as isize - r;
                let (yy, xx) = if horizontal {
                    (y as isize, x as isize + d)
                } else {
                    (y as isize + d, x as isize)
                };
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    continue;
                }
                acc += g * src[yy as usize * w + xx as usize];
                norm += g;
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}

fn blur(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    blur_axis(&blur_axis(src, h, w, true, taps), h, w, false, taps)
}

/// Mean SSIM over one Gaussian window centred on every pixel of the luma
/// images. Windows are truncated at the border.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = (a.height, a.width);
    if h * w == 0 {
        return Err(Error::Invalid("empty image".into()));
    }
    let (x, y) = (to_gray(a), to_gray(b));
    let taps = gaussian_taps();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = blur(&x, h, w, &taps);
    let my = blur(&y, h, w, &taps);
    let mxx = blur(&prod(&x, &x), h, w, &taps);
    let myy = blur(&prod(&y, &y), h, w, &taps);
    let mxy = blur(&prod(&x, &y), h, w, &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..h * w {
        let vx = mxx[i] - mx[i] * mx[i];
        let vy = myy[i] - my[i] * my[i];
        let cxy = mxy[i] - mx[i] * my[i];
        total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2))
            / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    Ok(total / (h * w) as f64)
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let s: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (*p as f64 - *q as f64).powi(2))
        .sum();
    Ok(s / a.data.len().max(1) as f64)
}

/// `10·log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Feature maps of `img` as f64 vectors in `[C, H, W]` layout.
fn features(
    img: &Image,
    extractor: &dyn FeatureExtractor,
) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let x = img.to_tensor(DType::F64, &Device::Cpu)?.unsqueeze(0)?;
    extractor
        .extract(&x)?
        .into_iter()
        .map(|f| {
            let (_, c, h, w) = f.dims4()?;
            Ok((c, h * w, f.flatten_all()?.to_vec1::<f64>()?))
        })
        .collect()
}

/// Scales every spatial position's channel vector to unit length.
pub fn unit_normalize(c: usize, hw: usize, v: &mut [f64]) {
    for p in 0..hw {
        let n = (0..c).map(|k| v[k * hw + p].powi(2)).sum::<f64>().sqrt();
        for k in 0..c {
            v[k * hw + p] /= n + NORM_EPS;
        }
    }
}

/// Σ_l w_l · mean over positions of ‖f̂_l(a) − f̂_l(b)‖², where f̂ are the
/// channel-wise unit-normalized features. `weights` defaults to all ones.
pub fn perceptual_distance_weighted(
    a: &Image,
    b: &Image,
    extractor: &dyn FeatureExtractor,
    weights: Option<&[f64]>,
) -> Result<f64> {
    check_shapes(a, b)?;
    if let Some(want) = extractor.in_channels() {
        if want != 3 {
            return Err(Error::shape(
                "an RGB extractor",
                format!("{want} input channels"),
            ));
        }
    }
    if let Some(w) = weights {
        if w.len() != extractor.num_layers() {
            return Err(Error::shape(
                format!("{} layer weights", extractor.num_layers()),
                w.len(),
            ));
        }
    }
    let fa = features(a, extractor)?;
    let fb = features(b, extractor)?;
    let mut total = 0.0;
    for (l, ((c, hw, mut va), (_, _, mut vb))) in fa.into_iter().zip(fb).enumerate() {
        unit_normalize(c, hw, &mut va);
        unit_normalize(c, hw, &mut vb);
        let d: f64 = va.iter().zip(&vb).map(|(p, q)| (p - q).powi(2)).sum();
        total += weights.map_or(1.0, |w| w[l]) * d / hw as f64;
    }
    Ok(total)
}

pub fn perceptual_distance(a: &Image, b: &Image, extractor: &dyn FeatureExtractor) -> Result<f64> {
    perceptual_distance_weighted(a, b, extractor, None)
}

/// Whole-clip helper: frame-wise metric averaged over the clip.
pub fn mean_over_frames(
    a: &[Image],
    b: &[Image],
    metric: impl Fn(&Image, &Image) -> Result<f64>,
) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("{} frames", b.len()), a.len()));
    }
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += metric(x, y)?;
    }
    Ok(s / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ConvStackExtractor, IdentityExtractor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(seed: u64, n: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(n, n, (0..n * n * 3).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    /// Direct 2-D evaluation with explicit window truncation.
    fn ssim_brute(a: &Image, b: &Image) -> f64 {
        let (h, w) = (a.height as isize, a.width as isize);
        let (x, y) = (to_gray(a), to_gray(b));
        let r = 5isize;
        let mut total = 0.0;
        for cy in 0..h {
            for cx in 0..w {
                let (mut sw, mut sx, mut sy, mut sxx, mut syy, mut sxy) =
                    (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (py, px) = (cy + dy, cx + dx);
                        if py < 0 || px < 0 || py >= h || px >= w {
                            continue;
                        }
                        let g = (-((dy * dy + dx * dx) as f64) / (2.0 * 1.5 * 1.5)).exp();
                        let i = (py * w + px) as usize;
                        sw += g;
                        sx += g * x[i];
                        sy += g * y[i];
                        sxx += g * x[i] * x[i];
                        syy += g * y[i] * y[i];
                        sxy += g * x[i] * y[i];
                    }
                }
                let (mx, my) = (sx / sw, sy / sw);
                let vx = sxx / sw - mx * mx;
                let vy = syy / sw - my * my;
                let cv = sxy / sw - mx * my;
                let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
                total += (2.0 * mx * my + c1) * (2.0 * cv + c2)
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total / (h * w) as f64
    }

    #[test]
    fn ssim_matches_brute_force() {
        for seed in 0..4 {
            let (a, b) = (rand_img(seed, 8), rand_img(seed + 100, 8));
            assert!((ssim(&a, &b).unwrap() - ssim_brute(&a, &b)).abs() < 1e-9);
        }
        let (a, b) = (rand_img(7, 20), rand_img(8, 20));
        assert!((ssim(&a, &b).unwrap() - ssim_brute(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn ssim_examples() {
        let a = rand_img(1, 8);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let (p, q) = (0.2f64, 0.7f64);
        let c1 = 0.01f64.powi(2);
        let want = (2.0 * p * q + c1) / (p * p + q * q + c1);
        let got = ssim(
            &Image::filled(8, 8, p as f32),
            &Image::filled(8, 8, q as f32),
        )
        .unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!(ssim(&a, &rand_img(1, 9)).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = rand_img(2, 8);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let z = Image::filled(4, 4, 0.0);
        let t = Image::filled(4, 4, 0.1);
        assert!((psnr(&z, &t).unwrap() - 20.0).abs() < 1e-5);
        let mut last = f64::INFINITY;
        for k in 1..6 {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let noisy = Image::new(
                8,
                8,
                a.data
                    .iter()
                    .map(|v| v + 0.02 * k as f32 * rng.gen_range(-1.0f32..1.0))
                    .collect(),
            )
            .unwrap();
            let p = psnr(&a, &noisy).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn perceptual_identity_extractor_is_normalized_pixel_mse() {
        let (a, b) = (rand_img(4, 8), rand_img(5, 8));
        let unit = |img: &Image| -> Vec<f64> {
            img.data
                .chunks(3)
                .flat_map(|p| {
                    let n = p.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt() + 1e-10;
                    p.iter().map(move |v| *v as f64 / n).collect::<Vec<_>>()
                })
                .collect()
        };
        let (ua, ub) = (unit(&a), unit(&b));
        let want = ua
            .iter()
            .zip(&ub)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            / 64.0;
        let got = perceptual_distance(&a, &b, &IdentityExtractor).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn perceptual_extractor_contract() {
        let (a, b) = (rand_img(6, 8), rand_img(7, 8));
        let ex = ConvStackExtractor::default_rgb();
        assert_eq!(perceptual_distance(&a, &a, &ex).unwrap(), 0.0);
        assert!(perceptual_distance(&a, &b, &ex).unwrap() > 0.0);
        assert!(perceptual_distance(&a, &b, &ConvStackExtractor::random(9, 0, false)).is_err());
        assert!(perceptual_distance_weighted(&a, &b, &ex, Some(&[1.0])).is_err());
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric(s1 in 0u64..1000, s2 in 0u64..1000) {
            let (a, b) = (rand_img(s1, 8), rand_img(s2 + 1000, 8));
            let ex = ConvStackExtractor::default_rgb();
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            let (p, q) = (perceptual_distance(&a, &b, &ex).unwrap(), perceptual_distance(&b, &a, &ex).unwrap());
            prop_assert!((p - q).abs() < 1e-12);
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
