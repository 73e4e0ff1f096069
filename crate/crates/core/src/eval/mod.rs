//! Objective metrics: mel-cepstral distortion, F0 RMSE, character and word
//! error rates, and checkpoint selection.

pub mod cepstrum;
pub mod dtw;
pub mod pitch;
pub mod report;
pub mod text;

pub use cepstrum::{frame_distortion, mcd, mel_cepstrum, Mcd, DEFAULT_ORDER, MCD_SCALE};
pub use dtw::{dtw, is_valid_path, Alignment};
pub use pitch::{extract_f0, f0_rmse, F0Rmse, F0Track, PitchConfig};
pub use report::{
    evaluate_pair, evaluate_pairs, select_model, CorpusMeans, EvalConfig, EvalPair, MetricReport, SelectionMode,
    UtteranceMetrics,
};
pub use text::{error_rate, levenshtein, ErrorUnit};
