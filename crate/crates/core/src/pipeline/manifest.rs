//! Dataset manifest and the `prepare` step.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::landmarks::load_landmark_track;
use crate::media::{extract_mel, load_audio, MelSpectrogram};

pub const CACHE_ENV: &str = "LIPDUB_CACHE_DIR";
pub const MANIFEST_VERSION: u32 = 1;

/// Per-clip files recognised by `prepare`.
pub const LANDMARKS_FILE: &str = "landmarks.json";
pub const AUDIO_FILE: &str = "audio.wav";
pub const FRAMES_DIR: &str = "frames";
pub const FRAMES_RAW: &str = "frames.raw";
pub const SPEAKER_FILE: &str = "speaker.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub speaker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<PathBuf>,
    pub landmarks: PathBuf,
    /// Cached log-mel matrix computed from `audio`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mel_cache: Option<PathBuf>,
}

impl ManifestEntry {
    /// Audio and landmarks present.
    pub fn stage1_eligible(&self) -> bool {
        self.audio.is_some()
    }

    /// Frames and landmarks present.
    pub fn stage2_eligible(&self) -> bool {
        self.frames.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported manifest version {}", m.version),
            ));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn stage1_entries(&self) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.stage1_eligible())
            .collect()
    }

    pub fn stage2_entries(&self) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.stage2_eligible())
            .collect()
    }

    /// Counts of each modality, for diagnostics.
    pub fn modality_summary(&self) -> String {
        let audio = self.entries.iter().filter(|e| e.audio.is_some()).count();
        let frames = self.entries.iter().filter(|e| e.frames.is_some()).count();
        format!(
            "{} entries: {audio} with audio+landmarks, {frames} with frames+landmarks",
            self.entries.len()
        )
    }
}

/// `$LIPDUB_CACHE_DIR` if set, else `<root>/.lipdub-cache`.
pub fn cache_dir(root: &Path) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => root.join(".lipdub-cache"),
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).map_err(|e| Error::io(p, e))
}

/// Loads the mel matrix for `audio`, computing and caching it under
/// `cache` keyed by the file's content hash.
pub fn cached_mel(audio: &Path, cache: &Path) -> Result<(MelSpectrogram, PathBuf)> {
    let bytes = std::fs::read(audio).map_err(|e| Error::io(audio, e))?;
    let digest: String = Sha256::digest(&bytes)
        .iter()
        .take(16)
        .map(|b| format!("{b:02x}"))
        .collect();
    let path = cache.join(format!("mel-{digest}.safetensors"));
    if path.exists() {
        if let Ok(m) = MelSpectrogram::load(&path) {
            return Ok((m, path));
        }
        log::warn!("ignoring unreadable cache entry {}", path.display());
    }
    let mel = extract_mel(&load_audio(audio)?)?;
    std::fs::create_dir_all(cache).map_err(|e| Error::io(cache, e))?;
    mel.save(&path)?;
    Ok((mel, path))
}

/// Scans `raw_dir/<clip>/` for landmarks, audio and frames, validates each
/// clip, caches mel matrices and writes the manifest.
///
/// A clip without `landmarks.json`, or with neither audio nor frames, is an
/// error naming the clip.
pub fn prepare(raw_dir: &Path, out_manifest: &Path, cache: &Path) -> Result<DatasetManifest> {
    let rd = std::fs::read_dir(raw_dir).map_err(|e| Error::io(raw_dir, e))?;
    let mut dirs = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(raw_dir, e))?.path();
        if p.is_dir() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::NoEligible(format!(
            "{} has no clip directories",
            raw_dir.display()
        )));
    }
    let mut entries = Vec::new();
    for dir in dirs {
        let clip_id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let lm = dir.join(LANDMARKS_FILE);
        if !lm.is_file() {
            return Err(Error::Invalid(format!(
                "clip `{clip_id}`: landmark track {LANDMARKS_FILE} is missing"
            )));
        }
        let track = load_landmark_track(&lm)?;
        let audio = Some(dir.join(AUDIO_FILE)).filter(|p| p.is_file());
        let frames = [dir.join(FRAMES_DIR), dir.join(FRAMES_RAW)]
            .into_iter()
            .find(|p| p.exists());
        if audio.is_none() && frames.is_none() {
            return Err(Error::Invalid(format!(
                "clip `{clip_id}` has neither {AUDIO_FILE} nor {FRAMES_DIR}/"
            )));
        }
        let speaker_file = dir.join(SPEAKER_FILE);
        let speaker_id = if speaker_file.is_file() {
            std::fs::read_to_string(&speaker_file)
                .map_err(|e| Error::io(&speaker_file, e))?
                .trim()
                .to_string()
        } else if !track.source_id.is_empty() {
            track.source_id.clone()
        } else {
            clip_id.clone()
        };
        let mel_cache = match &audio {
            Some(a) => Some(absolute(&cached_mel(a, cache)?.1)?),
            None => None,
        };
        entries.push(ManifestEntry {
            clip_id,
            speaker_id,
            frames: frames.as_deref().map(absolute).transpose()?,
            audio: audio.as_deref().map(absolute).transpose()?,
            landmarks: absolute(&lm)?,
            mel_cache,
        });
    }
    let m = DatasetManifest {
        version: MANIFEST_VERSION,
        entries,
    };
    m.save(out_manifest)?;
    Ok(m)
}
