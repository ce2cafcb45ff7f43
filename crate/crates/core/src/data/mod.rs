//! Synthetic moving-digit sequences, the sequence and checkpoint file
//! formats, and image/flow file IO.

mod checkpoint;
mod dataset;
mod flo;
mod glyphs;
mod moving_mnist;
mod pgm;

pub use checkpoint::{Checkpoint, StoredTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, RESERVED_PREFIX};
pub use dataset::{
    binarize, save_sequences, write_moving_mnist, DatasetHeader, DatasetReader, DatasetWriter, DATASET_HEADER_LEN,
    DATASET_MAGIC, DATASET_VERSION,
};
pub use flo::{encode_flo, parse_flo, read_flo, write_flo, FLO_MAGIC};
pub use glyphs::{builtin_glyphs, load_idx_glyphs, parse_idx_glyphs, Glyph, GLYPH_SIZE};
pub use moving_mnist::{bounce_step, render_sequence, scaled_sequence, sequence_bytes, sequence_seed, to_bytes, tracks, MovingMnistSpec, Track};
pub use pgm::{load_pgm_sequence, Pgm};
