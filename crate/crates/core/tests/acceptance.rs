//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::HashMap;
use std::process::Command;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Module, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lipdub::landmarks::{nme, nme_frame, LandmarkFrame, LandmarkPartition, NUM_POINTS};
use lipdub::media::{extract_mel, Image, VideoClip};
use lipdub::metrics::{frechet_distance, perceptual_distance, psnr, ssim};
use lipdub::nn::{
    adain, check_gradients, ConvStackExtractor, GatedConv2d, IdentityExtractor, ParamStore,
};
use lipdub::pipeline::{
    self, cmd_dub, cmd_finetune, cmd_train_stage1, cmd_train_stage2, cmd_transfer, exit_code,
    ConfigSource, DatasetManifest, DubPaths,
};
use lipdub::stage1::{
    l1_landmark_loss, train_stage1, LandmarkGenModel, LandmarkGenSpec, Stage1Clip, Stage1Dataset,
};
use lipdub::stage2::{
    masked_reconstruction_error, meta_train, Stage2Clip, Stage2Dataset, TranslationModel,
};
use lipdub::synthetic::{synth_clip, write_clip_dir, SyntheticSpeaker};
use lipdub::TrainConfig;

// Pinned tolerances and budgets.
const METRIC_TOL: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
const SIMPLEX_TOL: f64 = 1e-6;
const SIMPLEX_STEPS: usize = 1000;
const STAGE1_RATIO: f64 = 0.10;
const STAGE1_BUDGET: Duration = Duration::from_secs(10 * 60);
const STAGE2_MASKED_L1: f64 = 0.05;
const STAGE2_BUDGET: Duration = Duration::from_secs(30 * 60);
const FREEZE_STEPS: usize = 100;
const ADAIN_TOL: f64 = 1e-3;
const METRIC_BUDGET: Duration = Duration::from_secs(60);
const GRAD_BUDGET: Duration = Duration::from_secs(120);

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rand_image(rng: &mut ChaCha8Rng, n: usize) -> Image {
    Image::new(n, n, (0..n * n * 3).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(
        (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>(),
        shape,
        &Device::Cpu,
    )
    .unwrap()
}

// ---------- 1. metric oracles ----------

fn gray(img: &Image) -> Vec<f64> {
    img.data
        .chunks(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let n = a.height as isize;
    let (x, y) = (gray(a), gray(b));
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for cy in 0..n {
        for cx in 0..n {
            let mut s = [0.0f64; 6];
            for py in (cy - 5).max(0)..(cy + 6).min(n) {
                for px in (cx - 5).max(0)..(cx + 6).min(n) {
                    let d2 = ((py - cy).pow(2) + (px - cx).pow(2)) as f64;
                    let g = (-d2 / 4.5).exp();
                    let i = (py * n + px) as usize;
                    for (k, v) in [1.0, x[i], y[i], x[i] * x[i], y[i] * y[i], x[i] * y[i]]
                        .iter()
                        .enumerate()
                    {
                        s[k] += g * v;
                    }
                }
            }
            let m = s.map(|v| v / s[0]);
            let (vx, vy, cv) = (m[3] - m[1] * m[1], m[4] - m[2] * m[2], m[5] - m[1] * m[2]);
            total += (2.0 * m[1] * m[2] + c1) * (2.0 * cv + c2)
                / ((m[1] * m[1] + m[2] * m[2] + c1) * (vx + vy + c2));
        }
    }
    total / (n * n) as f64
}

fn psnr_oracle(a: &Image, b: &Image) -> f64 {
    let mut se = 0.0;
    for i in 0..a.data.len() {
        se += (a.data[i] as f64 - b.data[i] as f64).powi(2);
    }
    let mse = se / a.data.len() as f64;
    if mse == 0.0 {
        100.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(100.0)
    }
}

/// Naive 3×3 convolution stack read back from the saved extractor weights.
fn perceptual_oracle(a: &Image, b: &Image, weights: &HashMap<String, Tensor>) -> f64 {
    let feats = |img: &Image| -> Vec<(usize, usize, usize, Vec<f64>)> {
        let (h, w) = (img.height, img.width);
        let mut cur: Vec<f64> = (0..3)
            .flat_map(|c| (0..h * w).map(move |p| (c, p)))
            .map(|(c, p)| img.data[p * 3 + c] as f64)
            .collect();
        let (mut ch, mut hh, mut ww) = (3usize, h, w);
        let mut out = vec![(ch, hh, ww, cur.clone())];
        for l in 0.. {
            let Some(wt) = weights.get(&format!("layer{l}.weight")) else {
                break;
            };
            let wv: Vec<f64> = wt
                .flatten_all()
                .unwrap()
                .to_dtype(DType::F64)
                .unwrap()
                .to_vec1()
                .unwrap();
            let bv: Vec<f64> = weights[&format!("layer{l}.bias")]
                .to_dtype(DType::F64)
                .unwrap()
                .to_vec1()
                .unwrap();
            let stride = weights[&format!("layer{l}.stride")]
                .to_vec1::<f32>()
                .unwrap()[0] as usize;
            let co = wt.dim(0).unwrap();
            let (oh, ow) = ((hh - 1) / stride + 1, (ww - 1) / stride + 1);
            let mut nxt = vec![0.0; co * oh * ow];
            for o in 0..co {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut s = bv[o];
                        for c in 0..ch {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (y * stride + ky) as isize - 1;
                                    let ix = (x * stride + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= hh as isize || ix >= ww as isize {
                                        continue;
                                    }
                                    s += wv[((o * ch + c) * 3 + ky) * 3 + kx]
                                        * cur[(c * hh + iy as usize) * ww + ix as usize];
                                }
                            }
                        }
                        nxt[(o * oh + y) * ow + x] = s.max(0.0);
                    }
                }
            }
            cur = nxt;
            (ch, hh, ww) = (co, oh, ow);
            out.push((ch, hh, ww, cur.clone()));
        }
        out
    };
    let (fa, fb) = (feats(a), feats(b));
    let mut total = 0.0;
    for ((c, h, w, va), (_, _, _, vb)) in fa.iter().zip(&fb) {
        let hw = h * w;
        let mut d = 0.0;
        for p in 0..hw {
            let na = (0..*c).map(|k| va[k * hw + p].powi(2)).sum::<f64>().sqrt() + 1e-10;
            let nb = (0..*c).map(|k| vb[k * hw + p].powi(2)).sum::<f64>().sqrt() + 1e-10;
            for k in 0..*c {
                d += (va[k * hw + p] / na - vb[k * hw + p] / nb).powi(2);
            }
        }
        total += d / hw as f64;
    }
    total
}

fn nme_oracle(pred: &[[f32; 2]], gt: &[[f32; 2]]) -> f64 {
    let xs: Vec<f64> = gt.iter().map(|p| p[0] as f64).collect();
    let ys: Vec<f64> = gt.iter().map(|p| p[1] as f64).collect();
    let span = |v: &[f64]| {
        v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
    };
    let diag = (span(&xs).powi(2) + span(&ys).powi(2)).sqrt();
    let mut s = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        s += ((p[0] - g[0]) as f64).hypot((p[1] - g[1]) as f64);
    }
    s / gt.len() as f64 / diag
}

/// Denman–Beavers square root of C1·C2.
fn frechet_oracle(
    m1: &DVector<f64>,
    c1: &DMatrix<f64>,
    m2: &DVector<f64>,
    c2: &DMatrix<f64>,
) -> f64 {
    let d = m1.len();
    let (mut y, mut z) = (c1 * c2, DMatrix::<f64>::identity(d, d));
    for _ in 0..60 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        (y, z) = ((&y + zi) * 0.5, (&z + yi) * 0.5);
    }
    (m1 - m2).norm_squared() + c1.trace() + c2.trace() - 2.0 * y.trace()
}

fn criterion_metrics() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dir = tempfile::tempdir().map_err(e2s)?;
    let ex = ConvStackExtractor::default_rgb();
    let wpath = dir.path().join("ex.safetensors");
    ex.save(&wpath).map_err(e2s)?;
    let weights: HashMap<String, Tensor> =
        candle_core::safetensors::load(&wpath, &Device::Cpu).map_err(e2s)?;
    let mut worst = 0.0f64;
    let mut track = |name: &str, got: f64, want: f64| -> Result<(), String> {
        let err = (got - want).abs();
        worst = worst.max(err);
        ensure(err < METRIC_TOL, format!("{name}: {got} vs oracle {want}"))
    };
    for _ in 0..5 {
        let a = rand_image(&mut rng, 8);
        let b = rand_image(&mut rng, 8);
        track("ssim", ssim(&a, &b).map_err(e2s)?, ssim_oracle(&a, &b))?;
        track("psnr", psnr(&a, &b).map_err(e2s)?, psnr_oracle(&a, &b))?;
        track(
            "perceptual",
            perceptual_distance(&a, &b, &ex).map_err(e2s)?,
            perceptual_oracle(&a, &b, &weights),
        )?;
        let only_pixels: HashMap<String, Tensor> = HashMap::new();
        track(
            "perceptual/identity",
            perceptual_distance(&a, &b, &IdentityExtractor).map_err(e2s)?,
            perceptual_oracle(&a, &b, &only_pixels),
        )?;
        let gt: Vec<[f32; 2]> = (0..NUM_POINTS).map(|_| [rng.gen(), rng.gen()]).collect();
        let pred: Vec<[f32; 2]> = gt
            .iter()
            .map(|p| [p[0] + rng.gen_range(-0.05..0.05), p[1]])
            .collect();
        track(
            "nme",
            nme_frame(&pred, &gt).map_err(e2s)?,
            nme_oracle(&pred, &gt),
        )?;
        let d = 4;
        let r1 = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let r2 = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let c1 = &r1 * r1.transpose() + DMatrix::identity(d, d) * 0.1;
        let c2 = &r2 * r2.transpose() + DMatrix::identity(d, d) * 0.1;
        let m1 = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let m2 = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        track(
            "frechet",
            frechet_distance(&m1, &c1, &m2, &c2).map_err(e2s)?,
            frechet_oracle(&m1, &c1, &m2, &c2),
        )?;
    }
    let two = |p: [[f32; 2]; 2]| LandmarkFrame { points: p.to_vec() };
    let v = nme(
        &[two([[0.1, 0.0], [1.1, 1.0]])],
        &[two([[0.0, 0.0], [1.0, 1.0]])],
    )
    .map_err(e2s)?;
    track("nme two-point", v, 0.1 / 2f64.sqrt())?;
    let one = DMatrix::from_element(1, 1, 1.0);
    let v = frechet_distance(
        &DVector::from_element(1, 0.0),
        &one,
        &DVector::from_element(1, 1.0),
        &one,
    )
    .map_err(e2s)?;
    track("frechet 1-D", v, 1.0)?;
    let flat = Image::filled(8, 8, 0.3);
    track("ssim identity", ssim(&flat, &flat).map_err(e2s)?, 1.0)?;
    track(
        "psnr mse 0.01",
        psnr(&Image::filled(8, 8, 0.0), &Image::filled(8, 8, 0.1)).map_err(e2s)?,
        20.0,
    )?;
    let el = start.elapsed();
    ensure(el < METRIC_BUDGET, format!("took {el:?}"))?;
    Ok(format!("max |err| {worst:.2e} in {:.1}s", el.as_secs_f64()))
}

// ---------- 2. gradient checks ----------

fn var(rng: &mut ChaCha8Rng, shape: &[usize]) -> Var {
    Var::from_tensor(&rand_tensor(rng, shape, -1.0, 1.0)).unwrap()
}

fn tiny_stage1(dtype: DType, seed: u64) -> LandmarkGenModel {
    let spec = LandmarkGenSpec {
        embed_dim: 8,
        mel_width: 2,
        hidden_width: 8,
        ref_points: 6,
        n_upper: 2,
        lower: vec![0, 1, 2, 3],
        lips: vec![2, 3],
    };
    LandmarkGenModel::new(spec, &ParamStore::new(dtype, &Device::Cpu, seed)).unwrap()
}

fn criterion_gradients() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut parts = Vec::new();
    let mut run = |name: &str,
                   vars: Vec<(String, Var)>,
                   f: &dyn Fn() -> lipdub::Result<Tensor>,
                   h: f64|
     -> Result<(), String> {
        let r = check_gradients(&vars, f, h, 16, 0).map_err(e2s)?;
        parts.push(format!("{name} {:.1e}", r.max_rel_err));
        ensure(r.max_rel_err < GRAD_TOL, format!("{name}: {r:?}"))
    };

    let (x, g, b) = (
        var(&mut rng, &[2, 3, 4, 4]),
        var(&mut rng, &[2, 3]),
        var(&mut rng, &[2, 3]),
    );
    let proj = rand_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    run(
        "adain",
        vec![
            ("x".into(), x.clone()),
            ("gamma".into(), g.clone()),
            ("beta".into(), b.clone()),
        ],
        &|| Ok((adain(x.as_tensor(), g.as_tensor(), b.as_tensor())? * &proj)?.sum_all()?),
        1e-5,
    )?;

    let store = ParamStore::new(DType::F64, &Device::Cpu, 3);
    let gc = GatedConv2d::new(&store, 2, 3, 3, 1, 1).map_err(e2s)?;
    let xi = var(&mut rng, &[1, 2, 5, 5]);
    let proj = rand_tensor(&mut rng, &[1, 3, 5, 5], -1.0, 1.0);
    let mut vars = store.named_vars();
    vars.push(("x".into(), xi.clone()));
    run(
        "gated conv",
        vars,
        &|| Ok((gc.forward(xi.as_tensor())? * &proj)?.sum_all()?),
        1e-5,
    )?;

    let m = tiny_stage1(DType::F64, 4);
    let fusion: Vec<(String, Var)> = m
        .store()
        .named_vars()
        .into_iter()
        .filter(|(n, _)| n.ends_with("fusion.raw"))
        .collect();
    ensure(fusion.len() == 1, "fusion parameter not found")?;
    fusion[0]
        .1
        .set(&Tensor::new(&[0.3f64, -0.2, 0.1], &Device::Cpu).unwrap())
        .map_err(e2s)?;
    let mel = rand_tensor(&mut rng, &[1, 3, 20, 80], -3.0, 1.0);
    let upper = rand_tensor(&mut rng, &[1, 3, 4], 0.0, 1.0);
    let reference = rand_tensor(&mut rng, &[1, 2, 12], 0.0, 1.0);
    let target = rand_tensor(&mut rng, &[1, 3, 4, 2], 0.2, 0.8);
    run(
        "fusion path",
        fusion,
        &|| l1_landmark_loss(&m.forward(&mel, &upper, &reference)?, &target),
        1e-6,
    )?;

    let pred = var(&mut rng, &[2, 3, 4, 2]);
    let gt = rand_tensor(&mut rng, &[2, 3, 4, 2], -1.0, 1.0);
    run(
        "l1 loss",
        vec![("pred".into(), pred.clone())],
        &|| l1_landmark_loss(pred.as_tensor(), &gt),
        1e-6,
    )?;

    let el = start.elapsed();
    ensure(el < GRAD_BUDGET, format!("took {el:?}"))?;
    Ok(format!("{} in {:.1}s", parts.join(", "), el.as_secs_f64()))
}

// ---------- 3. simplex ----------

fn criterion_simplex() -> Check {
    let m = tiny_stage1(DType::F64, 5);
    let mut opt = AdamW::new(
        m.store().vars(),
        ParamsAdamW {
            lr: 0.05,
            weight_decay: 0.0,
            ..Default::default()
        },
    )
    .map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..SIMPLEX_STEPS {
        let mel = rand_tensor(&mut rng, &[2, 2, 20, 80], -4.0, 2.0);
        let upper = rand_tensor(&mut rng, &[2, 2, 4], 0.0, 1.0);
        let reference = rand_tensor(&mut rng, &[2, 3, 12], 0.0, 1.0);
        let target = rand_tensor(&mut rng, &[2, 2, 4, 2], 0.0, 1.0);
        let loss = l1_landmark_loss(&m.forward(&mel, &upper, &reference).map_err(e2s)?, &target)
            .map_err(e2s)?;
        opt.backward_step(&loss).map_err(e2s)?;
        let w = m.fusion_weights_vec().map_err(e2s)?;
        worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    let w = m.fusion_weights_vec().map_err(e2s)?;
    ensure(worst <= SIMPLEX_TOL, format!("|ΣW − 1| reached {worst:e}"))?;
    Ok(format!(
        "max |ΣW − 1| = {worst:.1e} over {SIMPLEX_STEPS} steps, final W = [{:.3}, {:.3}, {:.3}]",
        w[0], w[1], w[2]
    ))
}

// ---------- 4. stage-1 overfit ----------

fn criterion_stage1_overfit() -> Check {
    let start = Instant::now();
    let mut cfg = TrainConfig::default();
    cfg.steps_stage1 = 300;
    cfg.lr_stage1 = 1e-3;
    cfg.hidden_width = 64;
    cfg.mel_width = 16;
    cfg.batch_size = 8;
    let p = LandmarkPartition::default();
    let clip = synth_clip(&SyntheticSpeaker::random("spk", 0), 200, None, 1);
    let mel = extract_mel(&clip.audio).map_err(e2s)?;
    let data = Stage1Dataset::new(
        vec![Stage1Clip {
            id: "toy".into(),
            mel,
            track: clip.track,
        }],
        p.clone(),
    )
    .map_err(e2s)?;
    let m = LandmarkGenModel::from_config(&cfg, &p, &ParamStore::new(DType::F32, &Device::Cpu, 0))
        .map_err(e2s)?;
    let r = train_stage1(&m, &data, &cfg, |_, _| {}).map_err(e2s)?;
    let n = r.losses.len();
    let last = r.losses[n - 20..].iter().sum::<f64>() / 20.0;
    let ratio = last / r.losses[0];
    let el = start.elapsed();
    ensure(ratio < STAGE1_RATIO, format!("final/initial = {ratio:.4}"))?;
    ensure(el < STAGE1_BUDGET, format!("took {el:?}"))?;
    Ok(format!(
        "L1 {:.4} -> {last:.5} (ratio {ratio:.4}) in {n} steps, {:.0}s",
        r.losses[0],
        el.as_secs_f64()
    ))
}

// ---------- 5. stage-2 overfit ----------

fn criterion_stage2_overfit() -> Check {
    let start = Instant::now();
    let mut cfg = TrainConfig::default();
    cfg.base_width = 8;
    cfg.disc_width = 8;
    cfg.embed_dim = 32;
    cfg.batch_stage2 = 2;
    cfg.lr_g = 2e-4;
    cfg.lr_d = 2e-4;
    cfg.steps_stage2 = 600;
    let p = LandmarkPartition::default();
    let clips: Vec<Stage2Clip> = (0..2u64)
        .map(|s| {
            let sp = SyntheticSpeaker::random(format!("spk{s}"), s);
            let c = synth_clip(&sp, 100, Some(64), 10 + s);
            Stage2Clip {
                id: format!("clip{s}"),
                speaker_id: sp.id.clone(),
                frames: c.video.unwrap().frames,
                track: c.track,
            }
        })
        .collect();
    let data = Stage2Dataset::new(clips, &p, &cfg, DType::F32, &Device::Cpu).map_err(e2s)?;
    let model =
        TranslationModel::new(&cfg, &ParamStore::new(DType::F32, &Device::Cpu, 0)).map_err(e2s)?;
    let r = meta_train(
        &model,
        &data,
        &cfg,
        &ConvStackExtractor::default_rgb(),
        |_, _| {},
    )
    .map_err(e2s)?;
    let third = r.losses.len() / 3;
    let thirds: Vec<f64> = (0..3)
        .map(|i| {
            r.losses[i * third..(i + 1) * third]
                .iter()
                .map(|l| l.l_r)
                .sum::<f64>()
                / third as f64
        })
        .collect();
    let masked = masked_reconstruction_error(&model, &data, 0, 40, 0).map_err(e2s)?;
    let el = start.elapsed();
    let summary = format!(
        "L_r thirds [{:.4}, {:.4}, {:.4}], masked L1 {masked:.4}, {:.0}s",
        thirds[0],
        thirds[1],
        thirds[2],
        el.as_secs_f64()
    );
    ensure(
        thirds[0] > thirds[1] && thirds[1] > thirds[2],
        format!("not decreasing: {summary}"),
    )?;
    ensure(
        masked < STAGE2_MASKED_L1,
        format!("masked L1 too high: {summary}"),
    )?;
    ensure(el < STAGE2_BUDGET, format!("too slow: {summary}"))?;
    Ok(summary)
}

// ---------- 6-8, 10: pipeline contracts ----------

fn small_stage2_cfg() -> Vec<String> {
    [
        "image_size=32",
        "unet_depth=3",
        "base_width=4",
        "disc_width=4",
        "disc_layers=2",
        "embed_dim=8",
        "adain_blocks=1",
        "batch_stage2=1",
        "steps_stage2=4",
        "finetune_steps=100",
        "embed_dim=8",
        "hidden_width=16",
        "mel_width=4",
        "batch_size=2",
        "steps_stage1=4",
        "ref_samples=2",
        "seq_len=3",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
    cfg: TrainConfig,
}

fn workspace() -> Result<Workspace, String> {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let root = dir.path().to_path_buf();
    let cfg = ConfigSource {
        file: None,
        overrides: small_stage2_cfg(),
    }
    .resolve(TrainConfig::default())
    .map_err(e2s)?;
    // Two audio-only speakers, two silent speakers, one held-out clip with both.
    for s in 0..5u64 {
        let sp = SyntheticSpeaker::random(format!("spk{s}"), s);
        let c = synth_clip(&sp, 12, Some(32), 20 + s);
        let (audio, frames, sub) = match s {
            0 | 1 => (true, false, "audio"),
            2 | 3 => (false, true, "silent"),
            _ => (true, true, "target"),
        };
        write_clip_dir(&c, root.join(sub).join(format!("clip{s}")), audio, frames).map_err(e2s)?;
    }
    Ok(Workspace {
        _dir: dir,
        root,
        cfg,
    })
}

fn prepare(ws: &Workspace, sub: &str) -> Result<DatasetManifest, String> {
    let out = ws.root.join(format!("{sub}.json"));
    pipeline::prepare(&ws.root.join(sub), &out, &ws.root.join("cache")).map_err(e2s)
}

fn bin_exit_code(args: &[&str]) -> Option<i32> {
    Command::new(env!("CARGO_BIN_EXE_lipdub"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .ok()
        .and_then(|o| o.status.code())
}

fn criterion_heterogeneous(ws: &Workspace) -> Check {
    let p = LandmarkPartition::default();
    let audio = prepare(ws, "audio")?;
    let silent = prepare(ws, "silent")?;
    ensure(
        audio.entries.iter().all(|e| e.frames.is_none()),
        "audio manifest has frames",
    )?;
    ensure(
        silent.entries.iter().all(|e| e.audio.is_none()),
        "silent manifest has audio",
    )?;

    // Frame paths that do not exist must not matter to stage 1.
    let mut poisoned = audio.clone();
    for e in &mut poisoned.entries {
        e.frames = Some(ws.root.join("missing").join(&e.clip_id).join("frames"));
    }
    let s1 = cmd_train_stage1(&poisoned, &ws.cfg, &p, &ws.root.join("s1")).map_err(e2s)?;
    let s2 = cmd_train_stage2(&silent, &ws.cfg, &p, None, &ws.root.join("s2")).map_err(e2s)?;
    ensure(
        s1.checkpoint.exists() && s1.loss_csv.exists(),
        "stage-1 outputs missing",
    )?;
    ensure(
        s2.checkpoint.exists() && s2.loss_csv.exists(),
        "stage-2 outputs missing",
    )?;

    let e1 = cmd_train_stage1(&silent, &ws.cfg, &p, &ws.root.join("x1"))
        .err()
        .map(|e| exit_code(&e));
    let e2 = cmd_train_stage2(&audio, &ws.cfg, &p, None, &ws.root.join("x2"))
        .err()
        .map(|e| exit_code(&e));
    ensure(
        e1 == Some(2) && e2 == Some(2),
        format!("library exit codes {e1:?} {e2:?}"),
    )?;

    let silent_json = ws.root.join("silent.json");
    let audio_json = ws.root.join("audio.json");
    let c1 = bin_exit_code(&[
        "train-stage1",
        "--manifest",
        silent_json.to_str().unwrap(),
        "--out",
        ws.root.join("b1").to_str().unwrap(),
    ]);
    let c2 = bin_exit_code(&[
        "train-stage2",
        "--manifest",
        audio_json.to_str().unwrap(),
        "--out",
        ws.root.join("b2").to_str().unwrap(),
    ]);
    ensure(
        c1 == Some(2) && c2 == Some(2),
        format!("binary exit codes {c1:?} {c2:?}"),
    )?;
    Ok(format!(
        "stage 1 on {:?}, stage 2 on {:?}; empty sets exit 2",
        s1.clips_used, s2.clips_used
    ))
}

fn criterion_freeze(ws: &Workspace) -> Check {
    let p = LandmarkPartition::default();
    let s = cmd_finetune(
        &ws.root.join("s2/stage2.safetensors"),
        &ws.root.join("target/clip4"),
        &ConfigSource::default(),
        &p,
        None,
        &ws.root.join("ft"),
    )
    .map_err(e2s)?;
    let before = &s.extra["embedder_checksum_before"];
    let after = &s.extra["embedder_checksum_after"];
    ensure(s.steps >= FREEZE_STEPS, format!("only {} steps", s.steps))?;
    ensure(before == after, format!("{before} != {after}"))?;
    ensure(s.loss_csv.exists(), "loss CSV missing")?;
    Ok(format!(
        "{} steps, embedder checksum {}… unchanged",
        s.steps,
        &after[..16]
    ))
}

fn dub_paths(ws: &Workspace, out: &str) -> DubPaths {
    let clip = ws.root.join("target/clip4");
    DubPaths {
        frames: clip.join("frames"),
        audio: clip.join("audio.wav"),
        landmarks: clip.join("landmarks.json"),
        stage1: ws.root.join("s1/stage1.safetensors"),
        stage2: ws.root.join("ft/stage2_finetuned.safetensors"),
        reference_landmarks: None,
        out_dir: ws.root.join(out),
        cache: Some(ws.root.join("cache")),
    }
}

fn criterion_locality(ws: &Workspace) -> Check {
    let paths = dub_paths(ws, "dub");
    let out = cmd_dub(&paths, LandmarkPartition::default(), 0).map_err(e2s)?;
    let input = VideoClip::load(&paths.frames).map_err(e2s)?;
    let written = VideoClip::load(paths.out_dir.join("frames")).map_err(e2s)?;
    ensure(written.len() == input.len(), "frame count changed")?;
    let mut outside = 0usize;
    let mut changed_inside = 0usize;
    for (t, ((a, b), m)) in input
        .frames
        .iter()
        .zip(&written.frames)
        .zip(&out.masks)
        .enumerate()
    {
        for y in 0..a.height {
            for x in 0..a.width {
                for c in 0..3 {
                    let (u, v) = (a.get(y, x, c), b.get(y, x, c));
                    if m.contains(y, x) {
                        changed_inside += (u != v) as usize;
                    } else {
                        outside += 1;
                        ensure(
                            u.to_bits() == v.to_bits(),
                            format!("frame {t} pixel ({y},{x},{c}) changed"),
                        )?;
                    }
                }
            }
        }
    }
    ensure(changed_inside > 0, "dub changed nothing inside the mask")?;
    Ok(format!(
        "{} frames, {outside} outside-mask values bit-identical",
        input.len()
    ))
}

fn criterion_adain_law() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (b, c) = (3, 16);
    let x = rand_tensor(&mut rng, &[b, c, 12, 12], -3.0, 5.0);
    let gamma = rand_tensor(&mut rng, &[b, c], 0.2, 3.0);
    let beta = rand_tensor(&mut rng, &[b, c], -2.0, 2.0);
    let y: Vec<Vec<Vec<f64>>> = adain(&x, &gamma, &beta)
        .and_then(|t| Ok(t.reshape((b, c, 144))?.to_vec3()?))
        .map_err(e2s)?;
    let g: Vec<Vec<f64>> = gamma.to_vec2().map_err(e2s)?;
    let be: Vec<Vec<f64>> = beta.to_vec2().map_err(e2s)?;
    let mut worst = 0.0f64;
    for i in 0..b {
        for k in 0..c {
            let v = &y[i][k];
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let std = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            worst = worst
                .max((mean - be[i][k]).abs())
                .max((std - g[i][k]).abs());
        }
    }
    ensure(worst < ADAIN_TOL, format!("max deviation {worst:e}"))?;
    Ok(format!("{b}×{c} channels, max |stat − target| {worst:.1e}"))
}

fn criterion_transfer(ws: &Workspace) -> Check {
    let dub = VideoClip::load(ws.root.join("dub/frames")).map_err(e2s)?;
    let own = ws.root.join("target/clip4/frames/000000.png");
    let paths = dub_paths(ws, "transfer");
    let out = cmd_transfer(&paths, LandmarkPartition::default(), &own).map_err(e2s)?;
    let written = VideoClip::load(paths.out_dir.join("frames")).map_err(e2s)?;
    ensure(out.frames.len() == dub.len(), "frame count differs")?;
    for (t, (a, b)) in dub.frames.iter().zip(&written.frames).enumerate() {
        ensure(
            a.data
                .iter()
                .zip(&b.data)
                .all(|(u, v)| u.to_bits() == v.to_bits()),
            format!("frame {t} differs"),
        )?;
    }
    let other = ws.root.join("silent/clip2/frames/000000.png");
    let swapped = cmd_transfer(
        &dub_paths(ws, "transfer2"),
        LandmarkPartition::default(),
        &other,
    )
    .map_err(e2s)?;
    let differs = swapped.frames.iter().zip(&out.frames).any(|(a, b)| a != b);
    Ok(format!(
        "{} frames bit-exact with own reference; other reference changes output: {differs}",
        dub.len()
    ))
}

fn main() {
    // Let `cargo test -- <filter>` style arguments pass through harmlessly.
    let _ = std::env::args();
    let started = Instant::now();
    let mut results: Vec<(usize, &str, Check)> = Vec::new();
    let mut record = |n: usize, name: &'static str, f: &dyn Fn() -> Check| {
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match &r {
            Ok(msg) => println!("PASS {n:>2} {name}: {msg}"),
            Err(msg) => println!("FAIL {n:>2} {name}: {msg}"),
        }
        results.push((n, name, r));
    };

    record(1, "metric oracle suite", &criterion_metrics);
    record(2, "gradient checks", &criterion_gradients);
    record(3, "fusion simplex invariant", &criterion_simplex);
    record(4, "stage-1 overfit", &criterion_stage1_overfit);
    record(5, "stage-2 overfit", &criterion_stage2_overfit);
    let ws = workspace();
    let with_ws = |f: fn(&Workspace) -> Check| -> Check {
        match &ws {
            Ok(w) => f(w),
            Err(e) => Err(format!("workspace setup failed: {e}")),
        }
    };
    record(6, "heterogeneous-data contract", &|| {
        with_ws(criterion_heterogeneous)
    });
    record(7, "embedder freeze contract", &|| with_ws(criterion_freeze));
    record(8, "dub locality contract", &|| with_ws(criterion_locality));
    record(9, "AdaIN statistics law", &criterion_adain_law);
    record(10, "transfer substitution identity", &|| {
        with_ws(criterion_transfer)
    });

    let failed = results.iter().filter(|(_, _, r)| r.is_err()).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.0}s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
