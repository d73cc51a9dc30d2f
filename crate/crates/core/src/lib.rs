//! Conversational measurement of framing and loss-aversion biases.
//!
//! A trip-planning dialogue presents ten two-option decision tasks. Half of
//! them probe framing (an intensifying phrase attached to the dominated
//! option), half probe loss aversion (the dominated option worded as a loss to
//! avoid). Participants are split into an experimental group that hears the
//! biased wording and a control group that hears facts only; the per-participant
//! count of dominated picks is then compared across groups with a
//! Mann-Whitney U test.
//!
//! Module map:
//!
//! - [`catalog`]: entities, phrase banks and pair drawing.
//! - [`tasks`]: utterance templates and the ten-task plan.
//! - [`dialogue`]: the per-session conversation state machine.
//! - [`responder`]: synthetic participants for desk-scale validation.
//! - [`stats`]: scoring, the U test, effect sizes and the confidence curve.
//! - [`store`]: append-only session persistence, group assignment and export.
//! - [`report`]: analysis report documents.

pub mod catalog;
pub mod dialogue;
pub mod report;
pub mod responder;
pub mod stats;
pub mod store;
pub mod tasks;

pub use catalog::{Catalog, Entity, EntityKind, EntityPair};
pub use dialogue::{ChoiceRecord, DialogueState, OptionSlot, Utterance};
pub use responder::{CohortSpec, ResponderProfile};
pub use stats::TestResult;
pub use store::SessionLog;
pub use tasks::{BiasKind, Condition, DecisionTask, Study, TaskPlan, Templates};

/// Version stamped into every persisted or exported session document.
pub const SCHEMA_VERSION: u32 = 1;
