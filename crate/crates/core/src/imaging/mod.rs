//! Probe-pose algebra, sector slicing of labeled volumes, and mask output.

mod mask_io;
mod pgm;
mod pose;
mod slice;

pub use mask_io::{load_mask, save_mask, MaskHeader};
pub use pgm::{gray_level, render_pgm, write_pgm};
pub use pose::{rotate_pose, Axis, ProbePose, Quaternion};
pub use slice::{slice_volume, ImageConfig, MaskImage, Slicer};
