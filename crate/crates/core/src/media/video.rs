//! Frames in, frames out: RGB images in `[0, 1]`, stored height-major with
//! interleaved channels.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

pub const DEFAULT_FPS: f64 = 25.0;
const RAW_MAGIC: &[u8; 8] = b"LDFRAMES";

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    /// `height * width * 3` values, row-major, RGB interleaved.
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(
                format!("{height}x{width}x3 = {} values", height * width * 3),
                data.len(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * 3],
        }
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * 3 + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.idx(y, x, c)]
    }

    #[inline]
    pub fn put(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = self.idx(y, x, 0);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// `[3, H, W]` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (self.height, self.width, 3), device)?
            .permute((2, 0, 1))?
            .contiguous()?
            .to_dtype(dtype)?;
        Ok(t)
    }

    /// Inverse of [`Image::to_tensor`]; accepts `[3, H, W]` or `[1, 3, H, W]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = if t.rank() == 4 {
            t.squeeze(0)?
        } else {
            t.clone()
        };
        let (c, h, w) = t.dims3()?;
        if c != 3 {
            return Err(Error::shape("3 channels", c));
        }
        let data = t
            .to_dtype(DType::F32)?
            .permute((1, 2, 0))?
            .flatten_all()?
            .to_vec1::<f32>()?;
        Image::new(h, w, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let rgb = image::open(path.as_ref())?.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Image::new(h as usize, w as usize, data)
    }

    /// Writes an 8-bit PNG; values are clamped and rounded.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::Invalid("image buffer size".into()))?;
        buf.save(path.as_ref())?;
        Ok(())
    }

    /// Quantizes to 8 bits per channel, as a PNG round trip would.
    pub fn quantized(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Image>,
    pub fps: f64,
}

impl VideoClip {
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        if let Some(first) = frames.first() {
            if let Some((i, f)) = frames
                .iter()
                .enumerate()
                .find(|(_, f)| !f.same_shape(first))
            {
                return Err(Error::shape(
                    format!("{}x{}", first.height, first.width),
                    format!("{}x{} at frame {i}", f.height, f.width),
                ));
            }
        }
        Ok(Self {
            frames,
            fps: DEFAULT_FPS,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Loads `*.png` / `*.jpg` / `*.jpeg` from a directory in filename order,
    /// or a raw frame dump when `path` is a file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.is_file() {
            return Self::load_raw(path);
        }
        let files = frame_files(path)?;
        let frames = files.iter().map(Image::load).collect::<Result<Vec<_>>>()?;
        Self::new(frames)
    }

    /// Writes `000000.png`, `000001.png`, ... into `dir`.
    pub fn save_frames(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, f) in self.frames.iter().enumerate() {
            f.save_png(dir.join(format!("{i:06}.png")))?;
        }
        Ok(())
    }

    /// Raw dump: magic, then `T H W` as little-endian u32, then f32 data.
    pub fn save_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (h, w) = self
            .frames
            .first()
            .map(|f| (f.height, f.width))
            .unwrap_or((0, 0));
        let mut out = Vec::with_capacity(20 + self.frames.len() * h * w * 12);
        out.extend_from_slice(RAW_MAGIC);
        for v in [self.frames.len(), h, w] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for f in &self.frames {
            for v in &f.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load_raw(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 20 || &bytes[..8] != RAW_MAGIC {
            return Err(Error::format(path, "not a raw frame dump"));
        }
        let word = |i: usize| {
            u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize
        };
        let (t, h, w) = (word(0), word(1), word(2));
        let per = h * w * 3;
        if bytes.len() != 20 + t * per * 4 {
            return Err(Error::format(path, "truncated raw frame dump"));
        }
        let floats: Vec<f32> = bytes[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let frames = floats
            .chunks(per.max(1))
            .take(t)
            .map(|c| Image::new(h, w, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames)
    }
}

pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}
