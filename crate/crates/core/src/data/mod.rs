//! On-disk formats, the toy dataset generator and split management.

pub mod checkpoint;
pub mod manifest;
pub mod splits;
pub mod tensorfile;
pub mod toy;

pub use checkpoint::{fingerprint, load_checkpoint, save_checkpoint, Checkpoint};
pub use manifest::{Manifest, ManifestKind, SplitDef, VideoEntry, MANIFEST_FILE};
pub use splits::{make_splits, random_half, stratified_holdout, SplitScheme};
pub use tensorfile::{decode_tensor, encode_tensor, read_tensor, write_tensor};
pub use toy::{generate_toy, generate_video, write_toy_dataset, ToyConfig, TOY_CLASSES};
