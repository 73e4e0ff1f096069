mod common;

use std::fs;
use std::path::Path;

use common::*;
use prosody_vc::audio::read_wav;
use prosody_vc::data::{load_manifest_with_base, write_manifest, UtteranceRecord};
use prosody_vc::experiment::*;
use prosody_vc::features::extract_mel;
use prosody_vc::pipelines::{Checkpoint, StageKind, Strategy};
use prosody_vc::viz::EmbeddingMode;

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn ttp_run_trains_resumes_converts_evaluates_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_experiment(dir.path(), 1);
    let run = run_dir(&cfg.output_root(), Strategy::Ttp, false);
    let ck = train(&cfg, Strategy::Ttp, false, &run).unwrap();
    assert_eq!(ck.provenance.stages.len(), 3);
    assert_eq!(ck.provenance.config_hash, cfg.hash());
    for (i, k) in [StageKind::PretrainGstTts, StageKind::PretrainTp, StageKind::FinetuneTtp].into_iter().enumerate() {
        assert!(stage_checkpoint_path(&run, i, k).exists());
    }

    // a crash after stage 1 resumes from that boundary
    let before = files_under(&run.join("checkpoints"));
    fs::remove_file(stage_checkpoint_path(&run, 2, StageKind::FinetuneTtp)).unwrap();
    let again = train(&cfg, Strategy::Ttp, false, &run).unwrap();
    assert_eq!(again, ck);
    assert_eq!(files_under(&run.join("checkpoints")), before);

    let src = cfg.resolve(cfg.data.source_eval.as_ref().unwrap());
    let out = run.join("converted");
    let summary = convert_corpus(&cfg, &ck, Strategy::Ttp, &src, &out).unwrap();
    assert_eq!(summary.converted.len(), 3);
    assert!(summary.failures.is_empty());
    let art: ConvertedMel = serde_json::from_str(&fs::read_to_string(converted_mel_path(&out, &summary.converted[0])).unwrap()).unwrap();
    assert_eq!(art.config_hash, cfg.hash());
    assert!(converted_wav_path(&out, &summary.converted[0]).exists());
    assert!(convert_corpus(&cfg, &ck, Strategy::Spt, &src, &out).is_err());

    let report = evaluate_converted(&cfg, &out, &cfg.resolve(cfg.data.reference.as_ref().unwrap()), None).unwrap();
    assert_eq!(report.utterances.len(), 3);
    assert!(report.means.mcd_db > 0.0);
    assert_eq!(report.means.cer, Some(0.0));
    report.write(&run.join("eval")).unwrap();
    assert!(run.join("eval/metrics.jsonl").exists());

    let viz = visualize(&cfg, &ck, &cfg.resolve(&cfg.data.tts), EmbeddingMode::RefEnc, &run.join("viz")).unwrap();
    assert_eq!(viz.utterances, 8);
    assert!(viz.silhouette.is_some());
    let csv = fs::read_to_string(run.join("viz/coordinates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert!(visualize(&cfg, &ck, &cfg.resolve(&cfg.data.tts), EmbeddingMode::Tp, &run.join("viz-tp")).is_ok());
}

#[test]
fn reference_copies_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_experiment(dir.path(), 2);
    let reference = cfg.resolve(cfg.data.reference.as_ref().unwrap());
    let m = load_manifest_with_base(&reference).unwrap();
    let out = dir.path().join("copies");
    fs::create_dir_all(&out).unwrap();
    let mut hyps = String::new();
    for r in &m.records {
        let wav = read_wav(&r.resolve_audio(&m.base_dir)).unwrap();
        let art = ConvertedMel {
            utterance_id: r.utterance_id.clone(),
            strategy: Strategy::Ttp,
            mel: extract_mel(&wav, &cfg.features).unwrap(),
            truncated: false,
            config_hash: cfg.hash(),
            seed: cfg.seed,
        };
        fs::write(converted_mel_path(&out, &r.utterance_id), serde_json::to_string(&art).unwrap()).unwrap();
        fs::copy(r.resolve_audio(&m.base_dir), converted_wav_path(&out, &r.utterance_id)).unwrap();
        hyps += &format!("{{\"utterance_id\":\"{}\",\"text\":\"{}\"}}\n", r.utterance_id, r.transcript);
    }
    let hyp_path = dir.path().join("hyp.jsonl");
    fs::write(&hyp_path, hyps).unwrap();
    let report = evaluate_converted(&cfg, &out, &reference, Some(&hyp_path)).unwrap();
    assert_eq!(report.means.mcd_db, 0.0);
    assert_eq!(report.means.f0_rmse, Some(0.0));
    assert_eq!(report.means.cer, Some(0.0));
    assert_eq!(report.means.wer, Some(0.0));

    // a missing converted file is reported as a gap
    fs::remove_file(converted_mel_path(&out, &m.records[0].utterance_id)).unwrap();
    let report = evaluate_converted(&cfg, &out, &reference, Some(&hyp_path)).unwrap();
    assert_eq!(report.utterances.len(), m.records.len() - 1);
    assert_eq!(report.missing[0].0, m.records[0].utterance_id);

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert!(evaluate_converted(&cfg, &empty, &reference, None).is_err());
}

#[test]
fn missing_audio_fails_one_utterance_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_experiment(dir.path(), 3);
    cfg.training = pipeline(3, 2, 0).train;
    let run = run_dir(&cfg.output_root(), Strategy::Spt, true);
    let ck = train(&cfg, Strategy::Spt, true, &run).unwrap();
    assert!(ck.provenance.freeze_refenc);
    let src = cfg.resolve(cfg.data.source_eval.as_ref().unwrap());
    let mut records = load_manifest_with_base(&src).unwrap().records;
    records.push(UtteranceRecord {
        utterance_id: "ghost".into(),
        audio_path: "wav/ghost.wav".into(),
        transcript: "abc".into(),
        speaker_id: "spk9".into(),
        language: "en".into(),
    });
    let with_gap = dir.path().join("with_gap.jsonl");
    write_manifest(&with_gap, &records).unwrap();
    let summary = convert_corpus(&cfg, &ck, Strategy::Spt, &with_gap, &run.join("converted")).unwrap();
    assert_eq!(summary.converted.len(), records.len() - 1);
    assert_eq!(summary.failures.len(), 1);
    assert_eq!(summary.failures[0].0, "ghost");
}

#[test]
fn baseline_runs_have_two_stages_without_gst() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_experiment(dir.path(), 4);
    cfg.training = pipeline(3, 2, 0).train;
    let run = run_dir(&cfg.output_root(), Strategy::Baseline, false);
    let ck = train(&cfg, Strategy::Baseline, false, &run).unwrap();
    assert_eq!(ck.provenance.stages.len(), 2);
    assert!(!ck.model.has_gst());
    assert!(Checkpoint::load(&final_checkpoint_path(&run)).unwrap() == ck);
}
