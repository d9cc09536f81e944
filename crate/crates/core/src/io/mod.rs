pub mod format;
pub mod synth;

pub use format::{decode_records, encode_records, read_records, write_records};
pub use synth::{gen_raw, gen_synthetic, SynthConfig};
