mod support;

use biasprobe::dialogue::{DialogueState, OptionSlot, ParticipantId, Phase, SessionId, SessionSpec};
use biasprobe::report::{analyze, AnalysisRequest};
use biasprobe::responder::{simulate_cohort, CohortSpec, ResponderProfile};
use biasprobe::store::{export, read_sessions, ExportFilter, ExportFormat, FileStore, PersistOutcome, SessionStore};
use biasprobe::tasks::{BiasKind, Condition, Study};
use chrono::{TimeZone, Utc};

#[test]
fn plans_hold_structural_invariants() {
    let study = Study::bundled();
    for seed in 0..200 {
        let problems = support::invariants::plan_violations(&study, seed);
        assert!(problems.is_empty(), "seed {seed}: {problems:?}");
    }
}

#[test]
fn dialogue_to_store_and_back() {
    let study = Study::bundled();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.jsonl");
    let t0 = Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap();
    {
        let store = FileStore::open(&path).unwrap();
        for i in 0..6u64 {
            let condition = if i % 2 == 0 {
                Condition::Experimental
            } else {
                Condition::Control
            };
            let spec = SessionSpec {
                session_id: SessionId(format!("s{i}")),
                participant_id: ParticipantId(format!("p{i}")),
                condition,
                seed: i,
            };
            let mut state = DialogueState::start(&study, spec, t0).unwrap();
            let greeting = state.next_utterance().unwrap();
            assert_eq!(greeting.turn_index, 1);
            while state.phase() == Phase::AwaitingChoice {
                let task = state.current_task().unwrap().clone();
                let slot = if i < 2 {
                    task.suboptimal_slot()
                } else {
                    OptionSlot::First
                };
                state.apply_choice_at(slot, t0).unwrap();
                state.next_utterance().unwrap();
            }
            let log = state.finalize().unwrap();
            assert_eq!(store.persist(&log).unwrap(), PersistOutcome::Stored);
            assert_eq!(store.persist(&log).unwrap(), PersistOutcome::Duplicate);
        }
    }
    let reopened = FileStore::open(&path).unwrap();
    assert_eq!(reopened.len(), 6);
    let logs = read_sessions(&path).unwrap();
    assert_eq!(logs, reopened.all());
    assert!(logs[0].records.iter().all(|r| r.chose_suboptimal));
    assert!(logs[0].records.iter().all(|r| r.chose_framed));
    assert!(logs[1].records.iter().all(|r| !r.chose_framed));

    let mut jsonl = Vec::new();
    export(&logs, &ExportFilter::default(), ExportFormat::Jsonl, &mut jsonl).unwrap();
    let exported = dir.path().join("export.jsonl");
    std::fs::write(&exported, &jsonl).unwrap();
    assert_eq!(read_sessions(&exported).unwrap(), logs);
}

#[test]
fn simulated_cohort_analysis() {
    let study = Study::bundled();
    let profile = ResponderProfile::new(0.35, 0.3, 0.0).unwrap();
    let logs = simulate_cohort(&study, &CohortSpec::new(150, 150, profile, 17)).unwrap();
    let mut request = AnalysisRequest::new(BiasKind::ALL.to_vec(), 0.05);
    request.curve = true;
    let report = analyze(&logs, &request).unwrap();
    let framing = &report.biases[0];
    assert!(framing.bias_found);
    assert!(framing.result.effect_size_r > 0.0);
    assert_eq!(report.cohorts.n_experimental, 150);
    assert_eq!(report.seeds_control.len(), 150);
    assert_eq!(analyze(&logs, &request).unwrap(), report);
}
