use std::collections::HashSet;

use preictal_core::ais::AisParams;
use preictal_core::decision::{read_log, render_log, EventKind, EventLogWriter};
use preictal_core::detector::DetectorOutput;
use preictal_core::eval::{synthetic_corpus, threshold_sweep, train_population, Corpus, CorpusSpec, SweepTarget};
use preictal_core::ingest::windows;
use preictal_core::par::Execution;
use preictal_core::pipeline::{run_recording, Engine, EngineOptions};
use preictal_core::{EngineConfig, Error};

fn small_corpus() -> Corpus {
    let spec = CorpusSpec { train_recordings: 3, test_recordings: 3, seed: 31, ..CorpusSpec::default() };
    synthetic_corpus(&spec, Execution::Parallel).unwrap()
}

#[test]
fn config_change_takes_effect_after_the_ack_window() {
    let corpus = small_corpus();
    let cfg = EngineConfig::default();
    let pop = train_population(&corpus.train, &cfg, &AisParams::default(), 2, Execution::Parallel).unwrap();
    let rec = &corpus.test[0];
    let mut engine = Engine::new(&cfg, pop, rec.sample_rate_hz(), rec.channel_count()).unwrap();
    let k = 20;
    let mut outcomes = Vec::new();
    for w in windows(rec, &cfg) {
        let id = w.window_id;
        outcomes.push(engine.process_window(&w).unwrap());
        if id == k {
            let bad = EngineConfig { tp: 1.5, ..cfg.clone() };
            assert!(engine.apply_config(&bad).is_err());
            let ack = engine.apply_config(&EngineConfig { td: 0.99, ..cfg.clone() }).unwrap();
            assert_eq!(ack.applied_version, cfg.version + 1);
            assert_eq!(ack.effective_from_window, k + 1);
        }
    }
    for o in &outcomes {
        let want = if o.window_id <= k { cfg.version } else { cfg.version + 1 };
        assert_eq!(o.config_version, want, "window {}", o.window_id);
        if let Some(e) = &o.event {
            assert_eq!(e.config_version, want);
        }
    }
    // td=0.99 is above every likelihood, so nothing after the boundary is an onset.
    assert!(outcomes.iter().filter(|o| o.window_id > k).all(|o| o.detector == DetectorOutput::None));
    assert_eq!(engine.config_history().len(), 2);
    assert_eq!(engine.config_history()[1].from_window, k + 1);
}

#[test]
fn windows_must_arrive_in_order() {
    let corpus = small_corpus();
    let cfg = EngineConfig::default();
    let pop = train_population(&corpus.train, &cfg, &AisParams::default(), 2, Execution::Parallel).unwrap();
    let rec = &corpus.test[0];
    let mut engine = Engine::new(&cfg, pop, rec.sample_rate_hz(), rec.channel_count()).unwrap();
    let ws: Vec<_> = windows(rec, &cfg).take(3).collect();
    engine.process_window(&ws[0]).unwrap();
    engine.process_window(&ws[1]).unwrap();
    assert!(matches!(engine.process_window(&ws[0]), Err(Error::Validation(_))));
}

#[test]
fn event_stream_invariants() {
    let corpus = small_corpus();
    let cfg = EngineConfig::default();
    let pop = train_population(&corpus.train, &cfg, &AisParams::default(), 5, Execution::Parallel).unwrap();
    for rec in &corpus.test {
        let run = run_recording(rec, &cfg, pop.clone(), EngineOptions::default()).unwrap();
        let mut seen = HashSet::new();
        let mut last = None;
        for o in &run.outcomes {
            let Some(e) = &o.event else { continue };
            assert!(last.is_none_or(|l| e.window_id > l));
            last = Some(e.window_id);
            assert!(seen.insert((e.window_id, e.kind)));
            match e.kind {
                EventKind::Alarm => assert_eq!(o.detector, DetectorOutput::Onset),
                EventKind::Warn => {
                    assert!(o.prediction.fired);
                    assert!(!o.detector.is_active());
                }
                EventKind::Clear => assert!(!o.detector.is_active()),
            }
        }
        assert!(run.population.len() <= run.population.params.antibody_count);
        assert_eq!(run.population.self_tolerance_violations(), 0);
    }
}

#[test]
fn event_log_file_round_trips() {
    let corpus = small_corpus();
    let cfg = EngineConfig::default();
    let pop = train_population(&corpus.train, &cfg, &AisParams::default(), 5, Execution::Parallel).unwrap();
    let run = run_recording(&corpus.test[1], &cfg, pop, EngineOptions::default()).unwrap();
    let events = run.events();
    assert!(!events.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.log");
    let mut w = EventLogWriter::open(&path).unwrap();
    for e in &events {
        w.append(e).unwrap();
    }
    drop(w);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), render_log(&events));
    assert_eq!(read_log(&path).unwrap(), events);
}

#[test]
fn sweep_extremes() {
    let corpus = small_corpus();
    let cfg = EngineConfig::default();
    let pop = train_population(&corpus.train, &cfg, &AisParams::default(), 5, Execution::Parallel).unwrap();
    let pts = threshold_sweep(&corpus.test, &cfg, &pop, &[0.0, 0.23, 1.0], SweepTarget::Detection, Execution::Parallel)
        .unwrap();
    assert_eq!((pts[0].fpr, pts[0].tpr), (1.0, 1.0));
    assert!(pts[1].tpr > 0.8 && pts[1].fpr < 0.2, "{:?}", pts[1]);
    assert_eq!((pts[2].fpr, pts[2].tpr), (0.0, 0.0));
    assert!(threshold_sweep(&corpus.test, &cfg, &pop, &[], SweepTarget::Detection, Execution::Parallel).is_err());
}

#[test]
fn sequential_and_parallel_engines_agree() {
    let corpus = small_corpus();
    let cfg = EngineConfig::default();
    let a = train_population(&corpus.train, &cfg, &AisParams::default(), 8, Execution::Parallel).unwrap();
    let b = train_population(&corpus.train, &cfg, &AisParams::default(), 8, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    let rec = &corpus.test[2];
    let mut e1 = Engine::new(&cfg, a, 250, rec.channel_count()).unwrap().with_execution(Execution::Parallel);
    let mut e2 = Engine::new(&cfg, b, 250, rec.channel_count()).unwrap().with_execution(Execution::Sequential);
    for w in windows(rec, &cfg) {
        assert_eq!(e1.process_window(&w).unwrap(), e2.process_window(&w).unwrap());
    }
}
