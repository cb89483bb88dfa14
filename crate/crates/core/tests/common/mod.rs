#![allow(dead_code)]

use semidec::data::{generate_synthetic_corpus, pad_all, prepare_split, CorpusSplit, GeneratorSpec};
use semidec::model::{ArchConfig, EncoderStackConfig};

pub const SEQ_LEN: usize = 6;

pub fn tiny_spec(samples: usize, noise: f64, seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        samples,
        seed,
        seq_len_min: 3,
        seq_len_max: 8,
        text_dim: 6,
        visual_dim: 4,
        audio_dim: 5,
        signal_distance: 2.0,
        noise,
        sample_noise: noise / 2.0,
        ..GeneratorSpec::default()
    }
}

pub fn tiny_split(spec: &GeneratorSpec, label_fraction: f64, seed: u64) -> CorpusSplit {
    let corpus = pad_all(&generate_synthetic_corpus(spec).unwrap(), SEQ_LEN).unwrap();
    prepare_split(&corpus, label_fraction, 0.2, seed).unwrap().0
}

pub fn tiny_model(spec: &GeneratorSpec) -> EncoderStackConfig {
    let arch = ArchConfig {
        d_model: 8,
        heads: 2,
        layers: 1,
        ff_dim: 16,
        dropout: 0.1,
        encoder_dropout: 0.0,
        latent_dim: 4,
        head_widths: vec![16, 8],
        decoder_widths: vec![16],
        positional_encoding: true,
    };
    EncoderStackConfig::new(spec.dims(), SEQ_LEN, arch)
}
