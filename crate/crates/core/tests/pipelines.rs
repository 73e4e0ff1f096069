mod common;

use common::*;
use prosody_vc::data::Utterance;
use prosody_vc::features::Normalizer;
use prosody_vc::model::Model;
use prosody_vc::params::{group_matches, group_of};
use prosody_vc::pipelines::*;
use prosody_vc::tp::PredictionTarget;

fn subset_diff(a: &Model, b: &Model, pattern: &str) -> f64 {
    a.params.group_subset(pattern).max_abs_diff(&b.params.group_subset(pattern))
}

fn pretrained(strategy: Strategy, steps: usize) -> (Vec<Utterance>, Checkpoint, PipelineConfig) {
    let tts = corpus(0, 2, 4, false, 1, "tts");
    let cfg = pipeline(steps, 20, 20);
    let ck = pretrain_gst_tts(&tts, text_recognizer(), strategy, &cfg).unwrap();
    (tts, ck, cfg)
}

fn target() -> Vec<Utterance> {
    corpus(2, 1, 4, false, 2, "trg")
}

#[test]
fn zero_step_budget_returns_the_initialisation() {
    let tts = corpus(0, 2, 3, false, 1, "tts");
    let cfg = pipeline(0, 0, 0);
    let ck = pretrain_gst_tts(&tts, text_recognizer(), Strategy::Spt, &cfg).unwrap();
    let norm = Normalizer::fit(tts.iter().map(|u| &u.mel)).unwrap();
    let init = Model::init(cfg.model.clone(), text_recognizer(), norm, vec!["spk0".into(), "spk1".into()], true, cfg.seed)
        .unwrap();
    assert_eq!(ck.model.params.max_abs_diff(&init.params), 0.0);
    assert_eq!(ck.provenance.stages.len(), 1);
    assert_eq!(ck.provenance.step_count, 0);
}

#[test]
fn pretraining_is_deterministic_and_logs_losses() {
    let (_, a, _) = pretrained(Strategy::Spt, 25);
    let (_, b, _) = pretrained(Strategy::Spt, 25);
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let rec = &a.provenance.stages[0];
    assert_eq!(rec.epochs.last().unwrap().step, 25);
    assert!(rec.final_l1 < rec.initial_l1);
    assert!(rec.speaker_separation.is_some());
}

#[test]
fn reloaded_checkpoints_reproduce_inference_exactly() {
    let (tts, ck, _) = pretrained(Strategy::Spt, 10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    let u = &tts[0];
    let run = |m: &Model| {
        let s = m.speaker_embedding(u.speaker()).unwrap();
        m.synthesize(&m.recognize(u).unwrap(), &s, &m.ref_enc(&u.mel).unwrap(), 40, 16.0, 16000).unwrap()
    };
    assert_eq!(run(&ck.model), run(&back.model));
}

#[test]
fn frozen_spt_fine_tuning_leaves_gst_untouched() {
    let (_, ck, cfg) = pretrained(Strategy::Spt, 15);
    let frozen = finetune_spt(&target(), ck.clone(), true, &cfg).unwrap();
    assert_eq!(subset_diff(&ck.model, &frozen.model, "gst.*"), 0.0);
    assert!(subset_diff(&ck.model, &frozen.model, "tts.decoder") > 0.0);
    assert!(frozen.provenance.freeze_refenc);
    assert!(frozen.provenance.stages[1].freeze_refenc);

    let free = finetune_spt(&target(), ck.clone(), false, &cfg).unwrap();
    assert!(subset_diff(&ck.model, &free.model, "gst.refenc") > 0.0);
    assert!(subset_diff(&ck.model, &free.model, "gst.tokens") > 0.0);
    assert_eq!(free.target_speaker.as_deref(), Some("spk2"));
}

#[test]
fn tp_pretraining_trains_only_the_predictor() {
    let (tts, ck, cfg) = pretrained(Strategy::Ttp, 20);
    let after = pretrain_tp(&tts, ck.clone(), &cfg).unwrap();
    for name in ck.model.params.names() {
        let g = group_of(name);
        assert!(!group_matches(prosody_vc::params::GROUP_TP, g));
        assert_eq!(ck.model.params.get(name), after.model.params.get(name), "{name} moved");
    }
    assert!(after.model.has_tp());
    let rec = after.provenance.stages.last().unwrap();
    assert_eq!(rec.trainable, vec!["tp.net".to_string()]);
    let d = &rec.style_distance;
    assert!(d.len() >= 2);
    assert!(d.last().unwrap() < d.first().unwrap(), "{d:?}");
}

#[test]
fn ttp_fine_tuning_leaves_gst_alone_and_lowers_the_loss() {
    let (tts, ck, cfg) = pretrained(Strategy::Ttp, 20);
    let ck = pretrain_tp(&tts, ck, &cfg).unwrap();
    let ft = finetune_ttp(&target(), ck.clone(), &cfg).unwrap();
    assert_eq!(subset_diff(&ck.model, &ft.model, "gst.*"), 0.0);
    assert!(subset_diff(&ck.model, &ft.model, "tp.net") > 0.0);
    let rec = ft.provenance.stages.last().unwrap();
    assert!(rec.final_l1 < rec.initial_l1);
    assert_eq!(ft.provenance.stages.len(), 3);

    let mixed: Vec<Utterance> = target().into_iter().chain(corpus(3, 1, 2, false, 9, "x")).collect();
    assert!(finetune_ttp(&mixed, ck, &cfg).is_err());
}

#[test]
fn stage_order_is_enforced() {
    let tts = corpus(0, 2, 3, false, 1, "tts");
    let cfg = pipeline(5, 5, 5);
    let base = pretrain_baseline(&tts, text_recognizer(), &cfg).unwrap();
    assert!(!base.model.has_gst());
    assert!(finetune_spt(&target(), base.clone(), false, &cfg).is_err());
    assert!(pretrain_tp(&tts, base.clone(), &cfg).is_err());
    assert!(finetune_ttp(&target(), base, &cfg).is_err());
    let (_, gst, _) = pretrained(Strategy::Ttp, 5);
    assert!(finetune_ttp(&target(), gst, &cfg).is_err());
    assert!(pretrain_gst_tts(&tts, text_recognizer(), Strategy::Baseline, &cfg).is_err());
}

#[test]
fn single_speaker_pretraining_is_allowed() {
    let tts = corpus(0, 1, 3, false, 1, "solo");
    assert!(pretrain_gst_tts(&tts, text_recognizer(), Strategy::Spt, &pipeline(3, 0, 0)).is_ok());
}

#[test]
fn seventy_utterance_target_is_accepted() {
    let (_, ck, _) = pretrained(Strategy::Spt, 2);
    let big = corpus(2, 1, 70, false, 4, "trg");
    let ft = finetune_spt(&big, ck, false, &pipeline(0, 1, 0)).unwrap();
    assert_eq!(ft.provenance.stages[1].steps, 1);
}

/// Pretrained and fine-tuned checkpoints for every strategy plus two source
/// speakers reading the same sentences.
fn converted_setup(weights: bool) -> (Vec<(Strategy, Checkpoint)>, Vec<Utterance>) {
    let tts = corpus(0, 2, 4, false, 1, "tts");
    let mut cfg = pipeline(10, 5, 5);
    if weights {
        cfg.model.tp.target = PredictionTarget::Weights;
    }
    let trg = target();
    let spt = finetune_spt(&trg, pretrain_gst_tts(&tts, text_recognizer(), Strategy::Spt, &cfg).unwrap(), false, &cfg);
    let ttp = pretrain_gst_tts(&tts, text_recognizer(), Strategy::Ttp, &cfg).unwrap();
    let ttp = finetune_ttp(&trg, pretrain_tp(&tts, ttp, &cfg).unwrap(), &cfg);
    let base = finetune_baseline(&trg, pretrain_baseline(&tts, text_recognizer(), &cfg).unwrap(), &cfg);
    let sources = corpus(3, 2, 2, true, 11, "src");
    (vec![(Strategy::Baseline, base.unwrap()), (Strategy::Spt, spt.unwrap()), (Strategy::Ttp, ttp.unwrap())], sources)
}

#[test]
fn conversion_style_sources_follow_the_strategy() {
    for weights in [false, true] {
        let (cks, src) = converted_setup(weights);
        // src[0] and src[2] read the same sentence in different voices
        assert_eq!(src[0].record.transcript, src[2].record.transcript);
        assert_ne!(src[0].speaker(), src[2].speaker());
        let cfg = ConvertConfig::default();
        for (strategy, ck) in &cks {
            let (_, a) = convert(*strategy, &src[0], ck, &cfg).unwrap();
            let (_, b) = convert(*strategy, &src[2], ck, &cfg).unwrap();
            assert_eq!(a.target_speaker, "spk2");
            match strategy {
                Strategy::Baseline => {
                    assert!(a.style.vector.iter().all(|v| *v == 0.0));
                    assert_eq!(a.style_source, StyleSource::Zero);
                }
                Strategy::Spt => {
                    assert_ne!(a.style.vector, b.style.vector);
                    assert_eq!(a.style_source, StyleSource::RefEnc { source_utterance: src[0].id().to_string() });
                }
                Strategy::Ttp => {
                    assert_eq!(a.style.vector, b.style.vector);
                    assert_eq!(a.style_source, StyleSource::TextPrediction);
                    assert_eq!(a.style.weights.is_some(), weights);
                }
            }
            assert!(a.output_frames <= a.max_frames);
            let other = if *strategy == Strategy::Ttp { Strategy::Spt } else { Strategy::Ttp };
            assert!(convert(other, &src[0], ck, &cfg).is_err());
        }
    }
}
