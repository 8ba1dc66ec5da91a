//! Clip data model and on-disk formats, plus the synthetic corpus generator.

pub mod clip;
pub mod synthetic;
pub mod tensor;
pub mod wav;

pub use clip::{list_clip_dirs, read_clip_dir, write_clip_dir, Clip, Image, Track};
pub use synthetic::{generate_clip, generate_synthetic, write_synthetic_corpus, SyntheticClip, SyntheticSpec};
pub use tensor::{read_tensor, write_tensor, Tensor, TensorData};
pub use wav::{read_wav, write_wav_pcm16, Waveform};
