//! Landmark geometry: the 216-point schema, drawing, lower-face masking and
//! compositing, and the NME metric.

pub mod frame;
pub mod mask;
pub mod nme;
pub mod partition;
pub mod raster;

pub use frame::{
    load_landmark_track, save_landmark_track, LandmarkFrame, LandmarkTrack, Point, NUM_POINTS,
};
pub use mask::{composite_output, lower_half_mask, make_composite, CompositeFrame, FaceMask};
pub use nme::{nme, nme_frame};
pub use partition::{merge_landmarks, split_landmarks, LandmarkPartition};
pub use raster::{rasterize_frame, rasterize_landmarks};
