//! File formats: the `LLT1` tensor container, binary PPM frames, run
//! configuration files and toy-model checkpoints.

mod checkpoint;
mod ppm;
mod run_config;
mod tensor_dump;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, write_loss_csv};
pub use ppm::{decode_ppm, encode_ppm, frame_to_gray, read_ppm, squarest_factorization, write_ppm, Normalization};
pub use run_config::{apply_setting, parse_run_config, RunConfigFile, CONFIG_KEYS};
pub use tensor_dump::{TensorData, TensorDump, TensorRecord, MAGIC};
