//! The full conversion model: recognizer tables, feature normaliser, speaker
//! table bookkeeping and every parameter group.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::features::{MelFeatures, Normalizer};
use crate::gst::{self, GstConfig, StyleEmbedding};
use crate::params::{ParamStore, GROUP_TP};
use crate::recognizer::{ContentSequence, Recognizer};
use crate::synthesizer::{self, LossConfig, SpeakerEmbedding, SynthOutput, TrainExample, TtsConfig};
use crate::tensor::Mat;
use crate::tp::{self, PredictionTarget, TpConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfig {
    pub tts: TtsConfig,
    pub gst: GstConfig,
    pub tp: TpConfig,
    pub loss: LossConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.tts.hidden,
            self.tts.speaker_dim,
            self.tts.attention_dim,
            self.tts.position_dim,
            self.gst.num_tokens,
            self.gst.style_dim,
            self.gst.query_dim,
            self.gst.channels,
            self.tp.hidden,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.tp.target == PredictionTarget::Weights && self.gst.num_tokens == self.gst.style_dim {
            return Err(Error::Config("weights-mode prediction needs num_tokens != style_dim".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub recognizer: Recognizer,
    pub normalizer: Normalizer,
    /// Speaker ids in speaker-table row order.
    pub speakers: Vec<String>,
    pub params: ParamStore,
}

impl Model {
    /// Fresh synthesizer, plus the style-token module when `with_gst`.
    pub fn init(
        config: ModelConfig,
        recognizer: Recognizer,
        normalizer: Normalizer,
        speakers: Vec<String>,
        with_gst: bool,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if speakers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one speaker".into()));
        }
        let mel_dim = normalizer.mean.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        synthesizer::init_params(
            &mut params,
            &config.tts,
            recognizer.vocabulary_size(),
            mel_dim,
            config.gst.style_dim,
            speakers.len(),
            &mut rng,
        );
        if with_gst {
            gst::init_params(&mut params, &config.gst, mel_dim, &mut rng);
        }
        Ok(Self { config, recognizer, normalizer, speakers, params })
    }

    /// Adds the text predictor with its own seed.
    pub fn attach_tp(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.params.remove_group(GROUP_TP);
        tp::init_params(
            &mut self.params,
            &self.config.tp,
            self.config.tts.hidden,
            self.config.gst.style_dim,
            self.config.gst.num_tokens,
            &mut rng,
        );
    }

    pub fn has_gst(&self) -> bool {
        self.params.contains(gst::TOKENS)
    }

    pub fn has_tp(&self) -> bool {
        tp::check_params(&self.params).is_ok()
    }

    pub fn mel_dim(&self) -> usize {
        self.normalizer.mean.len()
    }

    pub fn style_dim(&self) -> usize {
        self.config.gst.style_dim
    }

    pub fn speaker_index(&self, id: &str) -> Option<usize> {
        self.speakers.iter().position(|s| s == id)
    }

    /// Index of `id`, appending a row initialised to the mean of the
    /// existing rows when the speaker is new.
    pub fn ensure_speaker(&mut self, id: &str) -> usize {
        if let Some(i) = self.speaker_index(id) {
            return i;
        }
        let table = self.params.get(synthesizer::SPEAKER_TABLE).expect("speaker table").clone();
        let mean = table.mean_rows();
        let mut grown = Mat::zeros(table.rows + 1, table.cols);
        grown.data[..table.data.len()].copy_from_slice(&table.data);
        grown.row_mut(table.rows).copy_from_slice(&mean.data);
        self.params.insert(synthesizer::SPEAKER_TABLE, grown);
        self.speakers.push(id.to_string());
        self.speakers.len() - 1
    }

    pub fn speaker_embedding(&self, id: &str) -> Result<SpeakerEmbedding> {
        let i = self.speaker_index(id).ok_or_else(|| Error::InvalidArgument(format!("unknown speaker {id}")))?;
        synthesizer::speaker_embedding(&self.params, i, id)
    }

    /// Normalised copy of `mel`, the space the networks operate in.
    pub fn to_model_space(&self, mel: &MelFeatures) -> Result<MelFeatures> {
        if mel.dim() != self.mel_dim() {
            return Err(Error::Shape(format!("mel dimension {} vs model {}", mel.dim(), self.mel_dim())));
        }
        MelFeatures::new(self.normalizer.normalize(&mel.frames), mel.frame_shift_ms, mel.sample_rate)
    }

    pub fn recognize(&self, utt: &Utterance) -> Result<ContentSequence> {
        self.recognizer.recognize(utt)
    }

    pub fn example(&self, utt: &Utterance) -> Result<TrainExample> {
        let speaker = self
            .speaker_index(utt.speaker())
            .ok_or_else(|| Error::InvalidArgument(format!("speaker {} not in model", utt.speaker())))?;
        Ok(TrainExample {
            target: self.to_model_space(&utt.mel)?.frames,
            content: self.recognize(utt)?,
            speaker,
        })
    }

    pub fn examples(&self, utts: &[Utterance]) -> Result<Vec<TrainExample>> {
        utts.iter().map(|u| self.example(u)).collect()
    }

    /// `RefEnc(X)` on a raw (unnormalised) mel.
    pub fn ref_enc(&self, mel: &MelFeatures) -> Result<StyleEmbedding> {
        gst::ref_enc(&self.to_model_space(mel)?, &self.params)
    }

    /// `TP(Y)`.
    pub fn predict_style(&self, content: &ContentSequence) -> Result<StyleEmbedding> {
        let states = synthesizer::encode_content(content, &self.params)?;
        tp::predict_style(&states, &self.params)
    }

    /// Decodes and maps the result back to raw log-mel space.
    pub fn synthesize(
        &self,
        content: &ContentSequence,
        speaker: &SpeakerEmbedding,
        style: &StyleEmbedding,
        max_frames: usize,
        frame_shift_ms: f64,
        sample_rate: u32,
    ) -> Result<SynthOutput> {
        let mut out = synthesizer::synthesize(content, speaker, style, &self.params, max_frames)?;
        out.mel = MelFeatures::new(self.normalizer.denormalize(&out.mel.frames), frame_shift_ms, sample_rate)?;
        Ok(out)
    }
}
