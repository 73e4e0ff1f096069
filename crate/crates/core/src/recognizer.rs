//! Speaker-independent content extraction.
//!
//! Two representations are supported. Text mode is an oracle recognizer: the
//! content is the normalised transcript, so it cannot depend on the audio or
//! the speaker. Frame-code mode quantises every mel frame against a k-means
//! codebook, giving a framewise discrete representation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Utterance, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::MelFeatures;
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContentKind {
    Text,
    FrameCode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentSequence {
    pub kind: ContentKind,
    pub symbols: Vec<usize>,
    pub vocabulary_size: usize,
}

impl ContentSequence {
    pub fn new(kind: ContentKind, symbols: Vec<usize>, vocabulary_size: usize) -> Result<Self> {
        if let Some(&bad) = symbols.iter().find(|&&s| s >= vocabulary_size) {
            return Err(Error::OutOfVocabulary { symbol: bad, vocabulary: vocabulary_size });
        }
        Ok(Self { kind, symbols, vocabulary_size })
    }

    pub fn frame_aligned(&self) -> bool {
        self.kind == ContentKind::FrameCode
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Lowercase and collapse whitespace runs to a single space.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Charset {
    symbols: Vec<char>,
}

impl Charset {
    pub fn new(symbols: Vec<char>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if let Some(c) = symbols.iter().find(|c| !seen.insert(**c)) {
            return Err(Error::InvalidArgument(format!("duplicate charset symbol {c:?}")));
        }
        Ok(Self { symbols })
    }

    /// Sorted set of characters appearing in the normalised transcripts.
    pub fn from_transcripts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set: std::collections::BTreeSet<char> = std::collections::BTreeSet::new();
        for t in texts {
            set.extend(normalize_text(t).chars());
        }
        Self { symbols: set.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == c)
    }

    pub fn symbol(&self, id: usize) -> Option<char> {
        self.symbols.get(id).copied()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&i| self.symbol(i)).collect()
    }
}

/// Oracle text recognition: normalised transcript mapped through `charset`.
pub fn recognize_text(record: &UtteranceRecord, charset: &Charset) -> Result<ContentSequence> {
    let text = normalize_text(&record.transcript);
    if text.is_empty() {
        return Err(Error::InvalidArgument(format!("utterance {} has an empty transcript", record.utterance_id)));
    }
    let mut missing: Vec<char> = Vec::new();
    let mut ids = Vec::with_capacity(text.len());
    for c in text.chars() {
        match charset.id(c) {
            Some(i) => ids.push(i),
            None if !missing.contains(&c) => missing.push(c),
            None => {}
        }
    }
    if !missing.is_empty() {
        return Err(Error::OutOfCharset(missing));
    }
    ContentSequence::new(ContentKind::Text, ids, charset.len())
}

/// Replaces each symbol, with probability `rate`, by a different symbol drawn
/// uniformly. Models recognition errors.
pub fn inject_substitutions(seq: &ContentSequence, rate: f64, rng: &mut impl Rng) -> ContentSequence {
    let mut out = seq.clone();
    if rate <= 0.0 || seq.vocabulary_size < 2 {
        return out;
    }
    for s in out.symbols.iter_mut() {
        if rng.gen::<f64>() < rate {
            let r = rng.gen_range(0..seq.vocabulary_size - 1);
            *s = if r >= *s { r + 1 } else { r };
        }
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameCodebook {
    pub centroids: Mat,
    pub training_corpus_id: String,
}

impl FrameCodebook {
    pub fn num_codes(&self) -> usize {
        self.centroids.rows
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols
    }

    /// Nearest centroid, lowest index on ties.
    pub fn nearest(&self, frame: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.centroids.rows {
            let d = sq_dist(frame, self.centroids.row(k));
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iter: 100 }
    }
}

/// k-means with k-means++ seeding and Lloyd iterations to a fixed point.
pub fn train_codebook(
    corpus: &[&MelFeatures],
    num_codes: usize,
    seed: u64,
    corpus_id: &str,
    cfg: &KMeansConfig,
) -> Result<FrameCodebook> {
    if num_codes < 2 {
        return Err(Error::InvalidArgument(format!("codebook needs at least 2 codes, got {num_codes}")));
    }
    let dim = corpus.first().map(|m| m.dim()).unwrap_or(0);
    let mut points: Vec<&[f64]> = Vec::new();
    for m in corpus {
        if m.dim() != dim {
            return Err(Error::Shape(format!("mel dimension {} vs {dim}", m.dim())));
        }
        points.extend((0..m.num_frames()).map(|r| m.frames.row(r)));
    }
    if points.len() < num_codes {
        return Err(Error::InvalidArgument(format!("{} frames cannot fill {num_codes} codes", points.len())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Mat::zeros(num_codes, dim);
    let first = rng.gen_range(0..points.len());
    centroids.row_mut(0).copy_from_slice(points[first]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[first])).collect();
    for k in 1..num_codes {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument(format!("corpus has fewer than {num_codes} distinct frames")));
        }
        let mut u = rng.gen::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap();
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && u < d {
                pick = i;
                break;
            }
            u -= d;
        }
        centroids.row_mut(k).copy_from_slice(points[pick]);
        for (dd, p) in d2.iter_mut().zip(&points) {
            *dd = dd.min(sq_dist(p, points[pick]));
        }
    }

    let mut book = FrameCodebook { centroids, training_corpus_id: corpus_id.to_string() };
    let mut assign: Vec<usize> = points.iter().map(|p| book.nearest(p)).collect();
    for _ in 0..cfg.max_iter {
        let mut sums = Mat::zeros(num_codes, dim);
        let mut counts = vec![0usize; num_codes];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums.row_mut(a).iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for k in 0..num_codes {
            if counts[k] == 0 {
                // re-seed an empty cluster at the worst-fit point
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = sq_dist(points[a], book.centroids.row(assign[a]));
                        let db = sq_dist(points[b], book.centroids.row(assign[b]));
                        da.total_cmp(&db)
                    })
                    .unwrap();
                book.centroids.row_mut(k).copy_from_slice(points[far]);
            } else {
                let n = counts[k] as f64;
                for (c, s) in book.centroids.row_mut(k).iter_mut().zip(sums.row(k)) {
                    *c = s / n;
                }
            }
        }
        let next: Vec<usize> = points.iter().map(|p| book.nearest(p)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok(book)
}

/// Quantises every frame of `mel` to its nearest code.
pub fn extract_frame_codes(mel: &MelFeatures, book: &FrameCodebook) -> Result<ContentSequence> {
    if mel.dim() != book.dim() {
        return Err(Error::Shape(format!("mel dimension {} vs codebook dimension {}", mel.dim(), book.dim())));
    }
    let symbols = (0..mel.num_frames()).map(|r| book.nearest(mel.frames.row(r))).collect();
    ContentSequence::new(ContentKind::FrameCode, symbols, book.num_codes())
}

/// Recognizer state stored with a model: which representation it consumes
/// and the tables needed to produce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Recognizer {
    Text {
        charset: Charset,
        #[serde(default)]
        noise_rate: f64,
        #[serde(default)]
        noise_seed: u64,
    },
    FrameCode {
        codebook: FrameCodebook,
    },
}

impl Recognizer {
    pub fn kind(&self) -> ContentKind {
        match self {
            Recognizer::Text { .. } => ContentKind::Text,
            Recognizer::FrameCode { .. } => ContentKind::FrameCode,
        }
    }

    pub fn vocabulary_size(&self) -> usize {
        match self {
            Recognizer::Text { charset, .. } => charset.len(),
            Recognizer::FrameCode { codebook } => codebook.num_codes(),
        }
    }

    /// Content of `utt`. In text mode only the transcript is read; injected
    /// recognition noise is seeded by the transcript itself so the output
    /// stays a function of the text.
    pub fn recognize(&self, utt: &Utterance) -> Result<ContentSequence> {
        match self {
            Recognizer::Text { charset, noise_rate, noise_seed } => {
                let clean = recognize_text(&utt.record, charset)?;
                if *noise_rate > 0.0 {
                    let digest = Sha256::digest(normalize_text(&utt.record.transcript).as_bytes());
                    let mut s = [0u8; 8];
                    s.copy_from_slice(&digest[..8]);
                    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed ^ u64::from_le_bytes(s));
                    Ok(inject_substitutions(&clean, *noise_rate, &mut rng))
                } else {
                    Ok(clean)
                }
            }
            Recognizer::FrameCode { codebook } => extract_frame_codes(&utt.mel, codebook),
        }
    }

    /// Text rendering of recognised content, used as the hypothesis when
    /// scoring error rates. Frame codes have no text rendering.
    pub fn transcribe(&self, utt: &Utterance) -> Result<Option<String>> {
        match self {
            Recognizer::Text { charset, .. } => Ok(Some(charset.decode(&self.recognize(utt)?.symbols))),
            Recognizer::FrameCode { .. } => Ok(None),
        }
    }
}
