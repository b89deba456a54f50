//! EEG recordings, fixed-length labeled segments, subject-wise splits and a
//! synthetic generator.

mod preprocess;
mod segments;
mod split;
mod synth;

pub use preprocess::{downsample, import_csv, segment, Recording, Segmented};
pub use segments::{load_segments, read_segments, save_segments, write_segments, SegmentSet, SEGMENT_MAGIC};
pub use split::{loso_split, stratified_split, LosoFold};
pub use synth::{synth_generate, SynthSpec};

pub const HIGH_ATTENTION: u8 = 1;
pub const LOW_ATTENTION: u8 = 0;
