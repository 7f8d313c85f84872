//! File formats: binary tensors, pose logs and structured text.

pub mod binary;
pub mod poselog;
pub mod text;

pub use binary::{decode_desc, decode_fmap, encode_desc, encode_fmap, read_desc_db, read_fmap, write_desc_db, write_fmap};
pub use poselog::{read_pose_log, write_pose_log};
pub use text::{read_pairsets, write_pairsets, SplitFile};
