//! The four training stages, run bookkeeping and model selection.

mod config;
mod record;
mod rundir;
mod train;

pub use config::{AutoencoderConfig, DecConfig, FinetuneConfig, FinetuneMode, TrainConfig};
pub use record::{better, provenance, select_best, EpochRecord, RunRecord, SelectionRule};
pub use rundir::{
    read_metrics, resolve_checkpoint, RunDir, CHECKPOINT_DIR, CONFIG_FILE, LOCK_FILE,
    METRICS_FILE, POINTER_FILE, RECORD_FILE, TIMING_FILE,
};
pub use train::{
    batches, cluster_purity, epoch_rng, latents_of, pretrain_autoencoder, pretrain_dec,
    train_baseline, transfer_and_finetune, transfer_encoders, unmask, StageContext, StageOutput,
};
