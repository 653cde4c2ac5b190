//! Audio, mel features, frames and landmark tracks.

pub mod audio;
pub mod mel;
pub mod video;

pub use audio::{load_audio, save_audio, AudioTrack};
pub use mel::{extract_mel, mel_window_for_frame, MelSpectrogram};
pub use video::{Image, VideoClip};
