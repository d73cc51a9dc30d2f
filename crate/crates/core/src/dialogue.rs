//! The conversation state machine.
//!
//! ```text
//! greeting --next_utterance--> awaiting_choice(1) --apply_choice--> ... awaiting_choice(10) --apply_choice--> complete
//! ```
//!
//! `next_utterance` is idempotent while a choice is pending. Once complete it
//! returns the closing utterance exactly once.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::store::SessionLog;
use crate::tasks::{fill, BiasKind, Condition, DecisionTask, Study, TaskError, TaskPlan, TURNS};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionSlot {
    First,
    Second,
}

impl OptionSlot {
    pub fn index(self) -> usize {
        match self {
            OptionSlot::First => 0,
            OptionSlot::Second => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            OptionSlot::First => OptionSlot::Second,
            OptionSlot::Second => OptionSlot::First,
        }
    }

    pub fn from_index(index: usize) -> Result<Self, DialogueError> {
        match index {
            0 => Ok(OptionSlot::First),
            1 => Ok(OptionSlot::Second),
            _ => Err(DialogueError::InvalidSlot(index.to_string())),
        }
    }
}

impl fmt::Display for OptionSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptionSlot::First => "first",
            OptionSlot::Second => "second",
        })
    }
}

impl std::str::FromStr for OptionSlot {
    type Err = DialogueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first" => Ok(OptionSlot::First),
            "second" => Ok(OptionSlot::Second),
            other => Err(DialogueError::InvalidSlot(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Greeting,
    AwaitingChoice,
    Complete,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DialogueError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("protocol error: {action} is not allowed in phase {phase:?}")]
    Protocol { action: &'static str, phase: Phase },
    #[error("invalid option slot '{0}' (expected first or second)")]
    InvalidSlot(String),
    #[error("session complete: closing utterance already delivered")]
    SessionComplete,
    #[error("incomplete session: {answered} of {TURNS} choices recorded")]
    Incomplete { answered: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParticipantId(pub String);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiceRecord {
    pub turn_index: usize,
    pub bias_kind: BiasKind,
    pub chose_suboptimal: bool,
    pub chose_framed: bool,
    pub raw_choice: OptionSlot,
    pub timestamp: DateTime<Utc>,
}

/// What the agent says next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Utterance {
    pub turn_index: usize,
    pub text: String,
    /// Two option labels while a choice is pending, otherwise empty.
    pub options: Vec<String>,
    pub terminal: bool,
}

/// Identity and randomization of one session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSpec {
    pub session_id: SessionId,
    pub participant_id: ParticipantId,
    pub condition: Condition,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct DialogueState {
    session_id: SessionId,
    participant_id: ParticipantId,
    plan: TaskPlan,
    turn_index: usize,
    choices: Vec<ChoiceRecord>,
    phase: Phase,
    started: DateTime<Utc>,
    completed: Option<DateTime<Utc>>,
    closing_delivered: bool,
    greeting: String,
    acknowledgement: String,
    reprompt: String,
    closing: String,
    intros: Vec<String>,
}

impl DialogueState {
    pub fn start(study: &Study, spec: SessionSpec, started: DateTime<Utc>) -> Result<Self, DialogueError> {
        let plan = study.build_task_plan(spec.condition, spec.seed)?;
        let t = study.templates();
        let mut seen = Vec::new();
        let intros = plan
            .tasks
            .iter()
            .map(|task| {
                let kind = task.pair.kind();
                let intro = &t.intro[&kind];
                if seen.contains(&kind) {
                    intro.next.clone()
                } else {
                    seen.push(kind);
                    intro.first.clone()
                }
            })
            .collect();
        Ok(DialogueState {
            session_id: spec.session_id,
            participant_id: spec.participant_id,
            plan,
            turn_index: 0,
            choices: Vec::with_capacity(TURNS),
            phase: Phase::Greeting,
            started,
            completed: None,
            closing_delivered: false,
            greeting: t.greeting.clone(),
            acknowledgement: t.acknowledgement.clone(),
            reprompt: t.reprompt.clone(),
            closing: t.closing.clone(),
            intros,
        })
    }

    pub fn session_id(&self) -> &SessionId {
        &self.session_id
    }

    pub fn participant_id(&self) -> &ParticipantId {
        &self.participant_id
    }

    pub fn condition(&self) -> Condition {
        self.plan.condition
    }

    pub fn plan(&self) -> &TaskPlan {
        &self.plan
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn turn_index(&self) -> usize {
        self.turn_index
    }

    pub fn choices(&self) -> &[ChoiceRecord] {
        &self.choices
    }

    pub fn closing_delivered(&self) -> bool {
        self.closing_delivered
    }

    /// Task awaiting a choice, if any.
    pub fn current_task(&self) -> Option<&DecisionTask> {
        match self.phase {
            Phase::AwaitingChoice => self.plan.task(self.turn_index),
            _ => None,
        }
    }

    /// The utterance for the current phase, without advancing anything.
    pub fn peek_utterance(&self) -> Utterance {
        match self.phase {
            Phase::Greeting => self.task_utterance(1),
            Phase::AwaitingChoice => self.task_utterance(self.turn_index),
            Phase::Complete => self.closing_utterance(),
        }
    }

    pub fn next_utterance(&mut self) -> Result<Utterance, DialogueError> {
        match self.phase {
            Phase::Greeting => {
                self.phase = Phase::AwaitingChoice;
                self.turn_index = 1;
                Ok(self.task_utterance(1))
            }
            Phase::AwaitingChoice => Ok(self.task_utterance(self.turn_index)),
            Phase::Complete if self.closing_delivered => Err(DialogueError::SessionComplete),
            Phase::Complete => {
                self.closing_delivered = true;
                Ok(self.closing_utterance())
            }
        }
    }

    fn task_utterance(&self, turn: usize) -> Utterance {
        let task = self.plan.task(turn).expect("turn within plan");
        let lead = if turn == 1 {
            self.greeting.clone()
        } else {
            let prev = &self.choices[turn - 2];
            let name = self.plan.task(turn - 1).expect("previous turn").label(prev.raw_choice);
            fill(&self.acknowledgement, &[("choice", name)])
        };
        let text = format!("{lead} {} {}", self.intros[turn - 1], task.render(self.plan.condition));
        Utterance {
            turn_index: turn,
            text,
            options: task.option_labels.to_vec(),
            terminal: false,
        }
    }

    fn closing_utterance(&self) -> Utterance {
        let itinerary = self
            .choices
            .iter()
            .zip(&self.plan.tasks)
            .map(|(c, t)| t.label(c.raw_choice))
            .collect::<Vec<_>>()
            .join(", ");
        Utterance {
            turn_index: self.turn_index,
            text: fill(&self.closing, &[("itinerary", &itinerary)]),
            options: Vec::new(),
            terminal: true,
        }
    }

    /// Text asking the participant to pick again after unmatched free text.
    pub fn reprompt(&self) -> Option<String> {
        self.current_task().map(|t| {
            fill(
                &self.reprompt,
                &[("first", &t.option_labels[0]), ("second", &t.option_labels[1])],
            )
        })
    }

    /// Maps free text to a slot when it names exactly one of the two options
    /// (case-insensitive substring match).
    pub fn match_free_text(&self, text: &str) -> Option<OptionSlot> {
        let task = self.current_task()?;
        let text = text.to_lowercase();
        let hits: Vec<OptionSlot> = [OptionSlot::First, OptionSlot::Second]
            .into_iter()
            .filter(|s| text.contains(&task.label(*s).to_lowercase()))
            .collect();
        match hits.as_slice() {
            [one] => Some(*one),
            _ => None,
        }
    }

    pub fn apply_choice(&mut self, chosen: OptionSlot) -> Result<&ChoiceRecord, DialogueError> {
        self.apply_choice_at(chosen, Utc::now())
    }

    pub fn apply_choice_at(&mut self, chosen: OptionSlot, at: DateTime<Utc>) -> Result<&ChoiceRecord, DialogueError> {
        if self.phase != Phase::AwaitingChoice {
            return Err(DialogueError::Protocol {
                action: "apply_choice",
                phase: self.phase,
            });
        }
        let task = self.plan.task(self.turn_index).expect("turn within plan");
        let chose_suboptimal = chosen == task.suboptimal_slot();
        let chose_framed = self.plan.condition == Condition::Experimental && chosen == task.framed_option;
        self.choices.push(ChoiceRecord {
            turn_index: self.turn_index,
            bias_kind: task.bias_kind,
            chose_suboptimal,
            chose_framed,
            raw_choice: chosen,
            timestamp: at,
        });
        if self.choices.len() == TURNS {
            self.phase = Phase::Complete;
            self.completed = Some(at);
        } else {
            self.turn_index += 1;
        }
        Ok(self.choices.last().expect("just pushed"))
    }

    pub fn finalize(&self) -> Result<SessionLog, DialogueError> {
        if self.phase != Phase::Complete {
            return Err(DialogueError::Incomplete {
                answered: self.choices.len(),
            });
        }
        Ok(self.log(true))
    }

    /// Snapshot of an unfinished session, marked incomplete.
    pub fn partial_log(&self) -> SessionLog {
        self.log(false)
    }

    fn log(&self, complete: bool) -> SessionLog {
        SessionLog {
            schema_version: SCHEMA_VERSION,
            session_id: self.session_id.clone(),
            participant_id: self.participant_id.clone(),
            condition: self.plan.condition,
            seed: self.plan.seed,
            catalog_version: self.plan.catalog_version.clone(),
            started: self.started,
            completed: if complete { self.completed } else { None },
            records: self.choices.clone(),
            complete,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::tests::study_from;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn spec(condition: Condition, seed: u64) -> SessionSpec {
        SessionSpec {
            session_id: SessionId("s1".into()),
            participant_id: ParticipantId("p1".into()),
            condition,
            seed,
        }
    }

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn fresh_state() {
        let study = Study::bundled();
        let s = DialogueState::start(&study, spec(Condition::Experimental, 7), t0()).unwrap();
        assert_eq!(s.phase(), Phase::Greeting);
        assert_eq!(s.turn_index(), 0);
        assert!(s.choices().is_empty());
        assert_eq!(s.plan().tasks.len(), 10);
    }

    #[test]
    fn two_entity_catalog_is_exhausted() {
        let study = study_from(&crate::catalog::tests::two_cities_with_priced());
        let err = DialogueState::start(&study, spec(Condition::Experimental, 7), t0()).unwrap_err();
        assert!(err.to_string().contains("exhausted"), "{err}");
    }

    #[test]
    fn greeting_and_idempotent_reask() {
        let study = Study::bundled();
        let mut s = DialogueState::start(&study, spec(Condition::Experimental, 7), t0()).unwrap();
        let u = s.next_utterance().unwrap();
        assert!(u.text.starts_with("Great! Let's start. Here are the first two cities."));
        assert_eq!(u.options.len(), 2);
        for name in &u.options {
            assert!(u.text.contains(name.as_str()));
        }
        assert_eq!(s.next_utterance().unwrap(), u);
        assert_eq!(s.peek_utterance(), u);
    }

    fn run(s: &mut DialogueState, choices: &[OptionSlot]) {
        for (i, c) in choices.iter().enumerate() {
            s.next_utterance().unwrap();
            s.apply_choice_at(*c, t0() + chrono::Duration::seconds(i as i64 + 1))
                .unwrap();
        }
    }

    #[test]
    fn full_session_and_terminal() {
        let study = Study::bundled();
        let mut s = DialogueState::start(&study, spec(Condition::Control, 9), t0()).unwrap();
        run(&mut s, &[OptionSlot::First; 10]);
        assert_eq!(s.phase(), Phase::Complete);
        let closing = s.next_utterance().unwrap();
        assert!(closing.terminal);
        assert!(closing.options.is_empty());
        assert_eq!(s.next_utterance(), Err(DialogueError::SessionComplete));
        assert!(matches!(
            s.apply_choice(OptionSlot::First),
            Err(DialogueError::Protocol { .. })
        ));
        let log = s.finalize().unwrap();
        assert_eq!(log.records.len(), 10);
        for bias in BiasKind::ALL {
            assert_eq!(log.records.iter().filter(|r| r.bias_kind == bias).count(), 5);
        }
        assert!(log.records.iter().all(|r| !r.chose_framed));
    }

    #[test]
    fn choice_flags_follow_slots() {
        let study = Study::bundled();
        let mut s = DialogueState::start(&study, spec(Condition::Experimental, 3), t0()).unwrap();
        s.next_utterance().unwrap();
        let sub = s.current_task().unwrap().suboptimal_slot();
        let r = s.apply_choice_at(sub, t0()).unwrap().clone();
        assert!(r.chose_suboptimal && r.chose_framed);
        s.next_utterance().unwrap();
        let opt = s.current_task().unwrap().optimal_slot();
        let r = s.apply_choice_at(opt, t0()).unwrap();
        assert!(!r.chose_suboptimal && !r.chose_framed);
    }

    #[test]
    fn apply_before_greeting_is_protocol_error() {
        let study = Study::bundled();
        let mut s = DialogueState::start(&study, spec(Condition::Experimental, 3), t0()).unwrap();
        assert!(matches!(
            s.apply_choice(OptionSlot::First),
            Err(DialogueError::Protocol {
                phase: Phase::Greeting,
                ..
            })
        ));
        assert!(s.choices().is_empty());
    }

    #[test]
    fn incomplete_session_cannot_finalize() {
        let study = Study::bundled();
        let mut s = DialogueState::start(&study, spec(Condition::Experimental, 3), t0()).unwrap();
        run(&mut s, &[OptionSlot::Second; 7]);
        assert_eq!(s.finalize(), Err(DialogueError::Incomplete { answered: 7 }));
        let partial = s.partial_log();
        assert!(!partial.complete);
        assert_eq!(partial.records.len(), 7);
    }

    #[test]
    fn slot_parsing() {
        assert_eq!("first".parse::<OptionSlot>(), Ok(OptionSlot::First));
        assert!("third".parse::<OptionSlot>().is_err());
        assert!(OptionSlot::from_index(2).is_err());
    }

    #[test]
    fn free_text_matching() {
        let study = Study::bundled();
        let mut s = DialogueState::start(&study, spec(Condition::Experimental, 3), t0()).unwrap();
        s.next_utterance().unwrap();
        let labels = s.current_task().unwrap().option_labels.clone();
        assert_eq!(
            s.match_free_text(&format!("let's go to {}", labels[1].to_uppercase())),
            Some(OptionSlot::Second)
        );
        assert_eq!(s.match_free_text("no idea"), None);
        assert_eq!(s.match_free_text(&format!("{} or {}", labels[0], labels[1])), None);
        let reprompt = s.reprompt().unwrap();
        assert!(reprompt.contains(&labels[0]) && reprompt.contains(&labels[1]));
    }

    #[derive(Debug, Clone)]
    enum Call {
        Next,
        Choose(OptionSlot),
        Finalize,
    }

    fn call() -> impl Strategy<Value = Call> {
        prop_oneof![
            Just(Call::Next),
            Just(Call::Choose(OptionSlot::First)),
            Just(Call::Choose(OptionSlot::Second)),
            Just(Call::Finalize),
        ]
    }

    proptest! {
        #[test]
        fn random_call_sequences_stay_on_the_chain(calls in proptest::collection::vec(call(), 0..60), seed in 0u64..1000) {
            let study = Study::bundled();
            let mut s = DialogueState::start(&study, spec(Condition::Experimental, seed), t0()).unwrap();
            let mut last_turn = 0;
            for c in calls {
                let before = s.choices().len();
                match c {
                    Call::Next => { let _ = s.next_utterance(); }
                    Call::Choose(slot) => {
                        let ok = s.phase() == Phase::AwaitingChoice;
                        let res = s.apply_choice_at(slot, t0());
                        prop_assert_eq!(res.is_ok(), ok);
                        if !ok { prop_assert_eq!(s.choices().len(), before); }
                    }
                    Call::Finalize => { prop_assert_eq!(s.finalize().is_ok(), s.phase() == Phase::Complete); }
                }
                prop_assert!(s.turn_index() >= last_turn);
                last_turn = s.turn_index();
                prop_assert!(s.choices().len() <= 10);
                prop_assert_eq!(s.phase() == Phase::Complete, s.choices().len() == 10);
                for r in s.choices() {
                    prop_assert!(!r.chose_framed || r.chose_suboptimal);
                    prop_assert_eq!(r.chose_framed, r.chose_suboptimal);
                }
            }
        }
    }
}
