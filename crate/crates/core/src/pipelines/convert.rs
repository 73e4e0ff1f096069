use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::gst::StyleEmbedding;
use crate::recognizer::ContentSequence;
use crate::synthesizer::SynthOutput;

use super::checkpoint::Checkpoint;
use super::plan::Strategy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvertConfig {
    /// Decoding limit as a multiple of the source length in frames.
    pub max_frames_ratio: f64,
    pub max_frames_cap: usize,
}

impl Default for ConvertConfig {
    fn default() -> Self {
        Self { max_frames_ratio: 3.0, max_frames_cap: 2000 }
    }
}

impl ConvertConfig {
    pub fn max_frames(&self, source_frames: usize, content_len: usize) -> usize {
        let n = source_frames.max(content_len) as f64 * self.max_frames_ratio;
        (n.ceil() as usize).clamp(1, self.max_frames_cap.max(1))
    }
}

/// Which encoder produced the style input of a conversion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StyleSource {
    Zero,
    /// The reference encoder applied to the source audio.
    RefEnc { source_utterance: String },
    /// The text predictor applied to recognised content only.
    TextPrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionTrace {
    pub utterance_id: String,
    pub strategy: Strategy,
    pub target_speaker: String,
    pub style_source: StyleSource,
    pub content: ContentSequence,
    /// Text rendering of the recognised content, when the recognizer has one.
    pub hypothesis: Option<String>,
    pub style: StyleEmbedding,
    pub source_frames: usize,
    pub output_frames: usize,
    pub max_frames: usize,
    pub truncated: bool,
    pub seed: u64,
    pub config_hash: String,
}

/// Converts one source utterance to the checkpoint's target speaker.
pub fn convert(
    strategy: Strategy,
    source: &Utterance,
    ckpt: &Checkpoint,
    cfg: &ConvertConfig,
) -> Result<(SynthOutput, ConversionTrace)> {
    if ckpt.provenance.strategy != strategy {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained for {}, conversion requested {strategy}",
            ckpt.provenance.strategy
        )));
    }
    let target = ckpt
        .target_speaker
        .clone()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no target speaker; run fine-tuning first".into()))?;
    let model = &ckpt.model;
    let speaker = model.speaker_embedding(&target)?;
    let content = model.recognize(source)?;
    let (style, style_source) = match strategy {
        Strategy::Baseline => (StyleEmbedding::zeros(model.style_dim()), StyleSource::Zero),
        Strategy::Spt => (
            model.ref_enc(&source.mel)?,
            StyleSource::RefEnc { source_utterance: source.id().to_string() },
        ),
        Strategy::Ttp => {
            if !model.has_tp() {
                return Err(Error::Checkpoint("ttp conversion needs tp.* parameters".into()));
            }
            (model.predict_style(&content)?, StyleSource::TextPrediction)
        }
    };
    let max_frames = cfg.max_frames(source.mel.num_frames(), content.len());
    let out = model.synthesize(
        &content,
        &speaker,
        &style,
        max_frames,
        source.mel.frame_shift_ms,
        source.mel.sample_rate,
    )?;
    let trace = ConversionTrace {
        utterance_id: source.id().to_string(),
        strategy,
        target_speaker: target,
        style_source,
        content,
        hypothesis: model.recognizer.transcribe(source)?,
        style,
        source_frames: source.mel.num_frames(),
        output_frames: out.mel.num_frames(),
        max_frames,
        truncated: out.truncated,
        seed: ckpt.provenance.seed,
        config_hash: ckpt.provenance.config_hash.clone(),
    };
    Ok((out, trace))
}
