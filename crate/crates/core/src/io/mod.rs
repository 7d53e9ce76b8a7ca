//! Dataset ingestion: KITTI-style scans and poses, map assembly, and the
//! synthetic world generator.

pub mod kitti;
pub mod synth;

pub use kitti::{
    assemble_map, read_kitti_poses, read_kitti_scan, read_scan_file, write_kitti_poses, write_kitti_scan,
    write_scan_file, KittiSequence,
};
pub use synth::{generate_world, Building, CityLayout, GeneratedWorld, SensorModel, SyntheticWorld};
