mod checkpoint;
mod config;
mod encoder;
mod head;
mod stack;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{ArchConfig, EncoderStackConfig};
pub use encoder::{ModalityCache, ModalityEncoder};
pub use head::{ClassifierHead, HeadCache};
pub use stack::*;
