//! Poses, the delay-correcting feature warp and rotated-box overlap.

mod boxes;
mod pose;
mod warp;

pub use boxes::{rotated_iou, BoxBEV};
pub use pose::{normalize_angle, Pose2};
pub use warp::{relative_transform, stcm_warp, AffineTransform};

pub use crate::feature::RoiMask;
