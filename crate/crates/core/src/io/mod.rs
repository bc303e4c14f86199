//! On-disk formats: feature matrices, dataset directories, checkpoints and
//! recommendation exports.

pub mod bundle_files;
pub mod checkpoint;
pub mod fmat;
pub mod export;
