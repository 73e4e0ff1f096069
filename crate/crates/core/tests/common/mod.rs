#![allow(dead_code)]

use prosody_vc::data::Utterance;
use prosody_vc::features::FeatureConfig;
use prosody_vc::gst::GstConfig;
use prosody_vc::model::ModelConfig;
use prosody_vc::pipelines::{PipelineConfig, StageBudgets, TrainConfig};
use prosody_vc::recognizer::{Charset, Recognizer};
use prosody_vc::synthesizer::TtsConfig;
use prosody_vc::toy;
use prosody_vc::tp::TpConfig;

pub fn features() -> FeatureConfig {
    FeatureConfig { n_mels: 40, ..Default::default() }
}

pub fn small_model() -> ModelConfig {
    ModelConfig {
        tts: TtsConfig { hidden: 24, speaker_dim: 8, attention_dim: 16, position_dim: 8 },
        gst: GstConfig { num_tokens: 6, style_dim: 16, query_dim: 16, channels: 16 },
        tp: TpConfig { hidden: 16, ..Default::default() },
        ..Default::default()
    }
}

/// Speakers `first..first + n` of the toy voice family.
pub fn voices(first: usize, n: usize) -> Vec<toy::ToySpeaker> {
    toy::speakers(first + n)[first..].to_vec()
}

pub fn corpus(first: usize, n: usize, per: usize, shared: bool, seed: u64, prefix: &str) -> Vec<Utterance> {
    let fc = features();
    toy::featurize(&toy::corpus(&voices(first, n), per, shared, seed, prefix, &fc), &fc).unwrap()
}

pub fn text_recognizer() -> Recognizer {
    Recognizer::Text { charset: Charset::from_transcripts([toy::ALPHABET, "a b"]), noise_rate: 0.0, noise_seed: 0 }
}

pub fn pipeline(pretrain: usize, finetune: usize, tp: usize) -> PipelineConfig {
    let train = TrainConfig {
        budgets: StageBudgets {
            pretrain_steps: pretrain,
            finetune_steps: finetune,
            tp_pretrain_steps: tp,
            ..Default::default()
        },
        batch_size: 4,
        warmup_steps: 10,
        grad_clip: 1.0,
    };
    PipelineConfig::new(small_model(), train, 5)
}

/// A toy experiment on disk with desk-scale budgets.
pub fn toy_experiment(dir: &std::path::Path, seed: u64) -> prosody_vc::config::ExperimentConfig {
    let spec = toy::ToyExperiment {
        pretrain_speakers: 2,
        per_speaker: 4,
        target_utterances: 4,
        eval_utterances: 3,
        seed,
        features: features(),
    };
    let path = toy::write_experiment(dir, &spec).unwrap();
    let mut cfg = prosody_vc::config::ExperimentConfig::load(&path).unwrap();
    cfg.model = small_model();
    cfg.training = pipeline(20, 10, 10).train;
    cfg.convert.vocoder.iterations = 4;
    cfg.viz.iterations = 200;
    cfg
}
