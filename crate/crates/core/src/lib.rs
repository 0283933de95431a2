//! Body composition analysis of abdominal CT.
//!
//! Two pipelines share the modules below:
//!
//! * 3D: DICOM series -> spine segmentation -> per-level trabecular ROIs and
//!   superior-inferior centers -> axial slice per level -> muscle/adipose
//!   segmentation, post-processing and metrics -> images, masks, CSV.
//! * 2D: the muscle/adipose half of the above on user-supplied axial slices.

pub mod anatomy;
pub mod cli;
pub mod components;
pub mod pipeline;
pub mod render;
pub mod segmentation;
pub mod spine;
pub mod tissue;
pub mod validation;
pub mod volume;

pub use anatomy::{TissueClass, VertebralLevel};
pub use volume::{CtVolume, SegmentationMask};
