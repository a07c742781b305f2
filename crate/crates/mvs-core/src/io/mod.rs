//! Readers and writers for the on-disk formats: PFM rasters, binary PLY
//! clouds, camera and pair text files, and the dataset directory layout
//! that ties them together. Every writer/parser pair is an exact inverse:
//! binary payloads round-trip bit for bit, text payloads field for field.

pub mod cam;
pub mod dataset;
pub mod pair;
pub mod pfm;
pub mod ply;

pub use cam::{parse_cam_file, write_cam_file, CamFile};
pub use dataset::{load_dataset, write_dataset, Dataset};
pub use pair::{parse_pair_file, write_pair_file};
pub use pfm::{read_depth_pfm, read_pfm, write_depth_pfm, write_pfm};
pub use ply::{read_ply, write_ply};
