//! LiDAR-only multi-class 3D object detection on frontal-view range maps.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense maps and layer primitives with analytic gradients.
//! * [`geom`]: cylindrical projection, five-channel encoding and the
//!   corner-offset box codec.
//! * [`dataset`]: KITTI I/O, range cropping, target rasterization,
//!   augmentation and a synthetic scene generator.
//! * [`net`]: the fixed dilated encoder/decoder network, its multi-task loss,
//!   SGD training and the weight file format.
//! * [`postproc`]: candidate decoding, neighbour-count NMS and BEV evaluation.

pub mod dataset;
pub mod error;
pub mod geom;
pub mod net;
pub mod postproc;
pub mod tensor;

pub use error::{Error, Result};
