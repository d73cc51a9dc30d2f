//! Scoring of session logs and group comparison.
//!
//! A participant's score for a bias is the number of dominated picks among
//! the first `k` probes of that bias. Groups are compared with a two-sided
//! Mann-Whitney U test on those scores; sweeping `k` from one to five gives
//! the confidence curve.

mod utest;

pub use utest::{
    mann_whitney_u, mann_whitney_u_with, midranks, rank_biserial, Method, TestMethod, TestResult, UTestConfig,
    DEFAULT_EXACT_CAP,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::SessionLog;
use crate::tasks::{BiasKind, Condition, PROBES_PER_BIAS};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("group {0} is empty")]
    EmptyGroup(&'static str),
    #[error("scores must be finite")]
    NonFinite,
    #[error("exact test requested for {n} observations, above the cap of {cap}")]
    ExactTooLarge { n: usize, cap: usize },
    #[error("U = {u} outside [0, {max}]")]
    UOutOfRange { u: f64, max: f64 },
    #[error("prefix length must be between 1 and {max}, got {k}")]
    InvalidPrefix { k: usize, max: usize },
    #[error("session {session} has {available} {bias} probes, {needed} needed")]
    InsufficientData {
        session: String,
        bias: BiasKind,
        needed: usize,
        available: usize,
    },
    #[error("incompatible sessions: {0}")]
    Incompatible(String),
    #[error("alpha must lie in (0, 0.5], got {0}")]
    InvalidAlpha(f64),
}

/// Dominated-pick counts, one per participant.
pub type ScoreVector = Vec<f64>;

/// Dominated picks among the first `k` probes of `bias` in `log`.
pub fn score_session(log: &SessionLog, bias: BiasKind, k: usize) -> Result<u32, StatsError> {
    if k == 0 || k > PROBES_PER_BIAS {
        return Err(StatsError::InvalidPrefix {
            k,
            max: PROBES_PER_BIAS,
        });
    }
    let probes: Vec<bool> = log
        .records
        .iter()
        .filter(|r| r.bias_kind == bias)
        .map(|r| r.chose_suboptimal)
        .collect();
    if probes.len() < k {
        return Err(StatsError::InsufficientData {
            session: log.session_id.0.clone(),
            bias,
            needed: k,
            available: probes.len(),
        });
    }
    Ok(probes[..k].iter().filter(|&&s| s).count() as u32)
}

pub fn score_group(logs: &[&SessionLog], bias: BiasKind, k: usize) -> Result<ScoreVector, StatsError> {
    logs.iter().map(|l| score_session(l, bias, k).map(f64::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    /// Keep sessions that stopped before the last turn. They still need
    /// enough probes of the analysed bias for every requested `k`.
    pub include_partial: bool,
    pub method: Method,
    pub config: UTestConfig,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            include_partial: false,
            method: Method::Auto,
            config: UTestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bias: BiasKind,
    pub bias_found: bool,
    pub alpha: f64,
    pub result: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidencePoint {
    pub k: usize,
    pub result: TestResult,
}

pub fn check_alpha(alpha: f64) -> Result<(), StatsError> {
    if alpha > 0.0 && alpha <= 0.5 {
        Ok(())
    } else {
        Err(StatsError::InvalidAlpha(alpha))
    }
}

/// Sessions that enter the analysis, and how many partial ones were dropped.
pub struct Cohorts<'a> {
    pub experimental: Vec<&'a SessionLog>,
    pub control: Vec<&'a SessionLog>,
    pub excluded_partial: usize,
}

impl<'a> Cohorts<'a> {
    /// Splits a mixed collection of logs by condition.
    pub fn split(logs: &'a [SessionLog], include_partial: bool) -> Self {
        let mut cohorts = Cohorts {
            experimental: Vec::new(),
            control: Vec::new(),
            excluded_partial: 0,
        };
        for log in logs {
            if !log.complete && !include_partial {
                cohorts.excluded_partial += 1;
                continue;
            }
            match log.condition {
                Condition::Experimental => cohorts.experimental.push(log),
                Condition::Control => cohorts.control.push(log),
            }
        }
        cohorts
    }

    pub fn check(&self) -> Result<(), StatsError> {
        if self.experimental.is_empty() {
            return Err(StatsError::EmptyGroup("experimental"));
        }
        if self.control.is_empty() {
            return Err(StatsError::EmptyGroup("control"));
        }
        check_compatible(&self.experimental, &self.control)
    }
}

/// Both groups must come from the same catalog and present biases in the
/// same order; partial sessions must follow a prefix of that order.
fn check_compatible(experimental: &[&SessionLog], control: &[&SessionLog]) -> Result<(), StatsError> {
    for log in experimental {
        if log.condition != Condition::Experimental {
            return Err(StatsError::Incompatible(format!(
                "session {} is {} but was passed as experimental",
                log.session_id, log.condition
            )));
        }
    }
    for log in control {
        if log.condition != Condition::Control {
            return Err(StatsError::Incompatible(format!(
                "session {} is {} but was passed as control",
                log.session_id, log.condition
            )));
        }
    }
    let all: Vec<&SessionLog> = experimental.iter().chain(control).copied().collect();
    let first = all[0];
    if let Some(other) = all.iter().find(|l| l.catalog_version != first.catalog_version) {
        return Err(StatsError::Incompatible(format!(
            "catalog version {} of session {} differs from {} of session {}",
            other.catalog_version, other.session_id, first.catalog_version, first.session_id
        )));
    }
    let sequence = |l: &SessionLog| l.records.iter().map(|r| r.bias_kind).collect::<Vec<_>>();
    let reference = all
        .iter()
        .map(|l| sequence(l))
        .max_by_key(|s| s.len())
        .unwrap_or_default();
    for log in &all {
        let seq = sequence(log);
        if reference[..seq.len()] != seq[..] {
            return Err(StatsError::Incompatible(format!(
                "session {} presents biases in a different order",
                log.session_id
            )));
        }
    }
    Ok(())
}

fn test_at(
    experimental: &[&SessionLog],
    control: &[&SessionLog],
    bias: BiasKind,
    k: usize,
    options: &AnalysisOptions,
) -> Result<TestResult, StatsError> {
    let a = score_group(experimental, bias, k)?;
    let b = score_group(control, bias, k)?;
    mann_whitney_u_with(&a, &b, options.method, &options.config)
}

pub fn detect_bias(
    experimental: &[SessionLog],
    control: &[SessionLog],
    bias: BiasKind,
    alpha: f64,
) -> Result<Detection, StatsError> {
    let e: Vec<&SessionLog> = experimental.iter().collect();
    let c: Vec<&SessionLog> = control.iter().collect();
    detect_bias_with(&e, &c, bias, alpha, &AnalysisOptions::default())
}

/// Compares full per-bias scores (all five probes). Partial sessions must
/// already have been filtered out by the caller unless `include_partial`.
pub fn detect_bias_with(
    experimental: &[&SessionLog],
    control: &[&SessionLog],
    bias: BiasKind,
    alpha: f64,
    options: &AnalysisOptions,
) -> Result<Detection, StatsError> {
    check_alpha(alpha)?;
    let (e, c) = filter_partial(experimental, control, options)?;
    let result = test_at(&e, &c, bias, PROBES_PER_BIAS, options)?;
    Ok(Detection {
        bias,
        bias_found: result.p_two_sided < alpha,
        alpha,
        result,
    })
}

pub fn confidence_curve(
    experimental: &[SessionLog],
    control: &[SessionLog],
    bias: BiasKind,
) -> Result<Vec<ConfidencePoint>, StatsError> {
    let e: Vec<&SessionLog> = experimental.iter().collect();
    let c: Vec<&SessionLog> = control.iter().collect();
    confidence_curve_with(&e, &c, bias, &AnalysisOptions::default())
}

/// The U test repeated on scores over the first `k = 1..=5` probes.
pub fn confidence_curve_with(
    experimental: &[&SessionLog],
    control: &[&SessionLog],
    bias: BiasKind,
    options: &AnalysisOptions,
) -> Result<Vec<ConfidencePoint>, StatsError> {
    let (e, c) = filter_partial(experimental, control, options)?;
    (1..=PROBES_PER_BIAS)
        .map(|k| test_at(&e, &c, bias, k, options).map(|result| ConfidencePoint { k, result }))
        .collect()
}

type Groups<'a> = (Vec<&'a SessionLog>, Vec<&'a SessionLog>);

fn filter_partial<'a>(
    experimental: &[&'a SessionLog],
    control: &[&'a SessionLog],
    options: &AnalysisOptions,
) -> Result<Groups<'a>, StatsError> {
    let keep = |l: &&&'a SessionLog| options.include_partial || l.complete;
    let e: Vec<&SessionLog> = experimental.iter().filter(keep).copied().collect();
    let c: Vec<&SessionLog> = control.iter().filter(keep).copied().collect();
    if e.is_empty() {
        return Err(StatsError::EmptyGroup("experimental"));
    }
    if c.is_empty() {
        return Err(StatsError::EmptyGroup("control"));
    }
    check_compatible(&e, &c)?;
    Ok((e, c))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dialogue::{ChoiceRecord, OptionSlot, ParticipantId, SessionId};
    use crate::tasks::SCHEDULE;
    use crate::SCHEMA_VERSION;
    use chrono::{TimeZone, Utc};

    /// A complete log whose framing probes carry `framing` dominated picks and
    /// whose loss-aversion probes carry `loss` (each filled from the front).
    pub(crate) fn scored_log(id: &str, condition: Condition, framing: usize, loss: usize) -> SessionLog {
        let t = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let (mut f, mut l) = (0, 0);
        let records = SCHEDULE
            .iter()
            .enumerate()
            .map(|(i, (bias, _))| {
                let chose_suboptimal = match bias {
                    BiasKind::Framing => {
                        f += 1;
                        f <= framing
                    }
                    BiasKind::LossAversion => {
                        l += 1;
                        l <= loss
                    }
                };
                ChoiceRecord {
                    turn_index: i + 1,
                    bias_kind: *bias,
                    chose_suboptimal,
                    chose_framed: chose_suboptimal && condition == Condition::Experimental,
                    raw_choice: OptionSlot::First,
                    timestamp: t,
                }
            })
            .collect();
        SessionLog {
            schema_version: SCHEMA_VERSION,
            session_id: SessionId(id.into()),
            participant_id: ParticipantId(format!("p-{id}")),
            condition,
            seed: 0,
            catalog_version: "v".into(),
            started: t,
            completed: Some(t),
            records,
            complete: true,
        }
    }

    #[test]
    fn score_counts_prefix() {
        let log = scored_log("a", Condition::Experimental, 3, 1);
        let scores: Vec<u32> = (1..=5)
            .map(|k| score_session(&log, BiasKind::Framing, k).unwrap())
            .collect();
        assert_eq!(scores, vec![1, 2, 3, 3, 3]);
        assert_eq!(score_session(&log, BiasKind::LossAversion, 5).unwrap(), 1);
        assert!(matches!(
            score_session(&log, BiasKind::Framing, 0),
            Err(StatsError::InvalidPrefix { .. })
        ));
        assert!(matches!(
            score_session(&log, BiasKind::Framing, 6),
            Err(StatsError::InvalidPrefix { .. })
        ));
    }

    #[test]
    fn insufficient_probes() {
        let mut log = scored_log("a", Condition::Experimental, 5, 5);
        log.records.truncate(6);
        log.complete = false;
        assert_eq!(score_session(&log, BiasKind::Framing, 3).unwrap(), 3);
        assert_eq!(
            score_session(&log, BiasKind::Framing, 4),
            Err(StatsError::InsufficientData {
                session: "a".into(),
                bias: BiasKind::Framing,
                needed: 4,
                available: 3
            })
        );
    }

    #[test]
    fn detection_separated_groups() {
        let e: Vec<SessionLog> = (0..4)
            .map(|i| scored_log(&format!("e{i}"), Condition::Experimental, 5, 0))
            .collect();
        let c: Vec<SessionLog> = (0..4)
            .map(|i| scored_log(&format!("c{i}"), Condition::Control, 0, 0))
            .collect();
        let d = detect_bias(&e, &c, BiasKind::Framing, 0.05).unwrap();
        assert!(d.bias_found);
        assert_eq!(d.result.u, 16.0);
        assert_eq!(d.result.effect_size_r, 1.0);
        assert_eq!(d.result.method, TestMethod::ExactEnumeration);
        // 2 / C(8,4)
        assert!((d.result.p_two_sided - 2.0 / 70.0).abs() < 1e-15);
        let la = detect_bias(&e, &c, BiasKind::LossAversion, 0.05).unwrap();
        assert!(!la.bias_found);
        assert!(la.result.degenerate);
    }

    #[test]
    fn curve_has_five_points() {
        let e: Vec<SessionLog> = (0..10)
            .map(|i| scored_log(&format!("e{i}"), Condition::Experimental, i % 6, 0))
            .collect();
        let c: Vec<SessionLog> = (0..10)
            .map(|i| scored_log(&format!("c{i}"), Condition::Control, i % 3, 0))
            .collect();
        let curve = confidence_curve(&e, &c, BiasKind::Framing).unwrap();
        assert_eq!(curve.iter().map(|p| p.k).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        assert!(curve.iter().all(|p| p.result.method == TestMethod::NormalApproximation));
    }

    #[test]
    fn alpha_and_empty_groups() {
        let e = vec![scored_log("e", Condition::Experimental, 1, 1)];
        let c = vec![scored_log("c", Condition::Control, 1, 1)];
        assert_eq!(
            detect_bias(&e, &c, BiasKind::Framing, 0.0).unwrap_err(),
            StatsError::InvalidAlpha(0.0)
        );
        assert_eq!(
            detect_bias(&e, &c, BiasKind::Framing, 0.6).unwrap_err(),
            StatsError::InvalidAlpha(0.6)
        );
        assert!(detect_bias(&e, &c, BiasKind::Framing, 0.5).is_ok());
        assert_eq!(
            detect_bias(&[], &c, BiasKind::Framing, 0.05).unwrap_err(),
            StatsError::EmptyGroup("experimental")
        );
        assert_eq!(
            detect_bias(&e, &[], BiasKind::Framing, 0.05).unwrap_err(),
            StatsError::EmptyGroup("control")
        );
    }

    #[test]
    fn incompatible_groups_rejected() {
        let e = vec![scored_log("e", Condition::Experimental, 1, 1)];
        let mut c = vec![scored_log("c", Condition::Control, 1, 1)];
        c[0].catalog_version = "other".into();
        assert!(matches!(
            detect_bias(&e, &c, BiasKind::Framing, 0.05),
            Err(StatsError::Incompatible(_))
        ));

        let mut c = vec![scored_log("c", Condition::Control, 1, 1)];
        c[0].records.swap(0, 1);
        assert!(matches!(
            detect_bias(&e, &c, BiasKind::Framing, 0.05),
            Err(StatsError::Incompatible(_))
        ));

        let c = vec![scored_log("c", Condition::Experimental, 1, 1)];
        assert!(matches!(
            detect_bias(&e, &c, BiasKind::Framing, 0.05),
            Err(StatsError::Incompatible(_))
        ));
    }

    #[test]
    fn partial_sessions_excluded_by_default() {
        let e: Vec<SessionLog> = (0..3)
            .map(|i| scored_log(&format!("e{i}"), Condition::Experimental, 4, 0))
            .collect();
        let mut c: Vec<SessionLog> = (0..3)
            .map(|i| scored_log(&format!("c{i}"), Condition::Control, 1, 0))
            .collect();
        let mut partial = scored_log("cp", Condition::Control, 5, 0);
        partial.records.truncate(4);
        partial.complete = false;
        partial.completed = None;
        c.push(partial);

        let full = detect_bias(&e, &c, BiasKind::Framing, 0.05).unwrap();
        assert_eq!(full.result.n2, 3);

        let er: Vec<&SessionLog> = e.iter().collect();
        let cr: Vec<&SessionLog> = c.iter().collect();
        let opts = AnalysisOptions {
            include_partial: true,
            ..Default::default()
        };
        // the partial session has only 2 framing probes
        assert!(matches!(
            detect_bias_with(&er, &cr, BiasKind::Framing, 0.05, &opts),
            Err(StatsError::InsufficientData {
                needed: 5,
                available: 2,
                ..
            })
        ));
        let curve = confidence_curve_with(&er, &cr, BiasKind::Framing, &opts);
        assert!(curve.is_err());
    }

    #[test]
    fn cohort_split() {
        let mut logs = vec![
            scored_log("e", Condition::Experimental, 1, 1),
            scored_log("c", Condition::Control, 1, 1),
            scored_log("c2", Condition::Control, 1, 1),
        ];
        logs[2].complete = false;
        let cohorts = Cohorts::split(&logs, false);
        assert_eq!(
            (
                cohorts.experimental.len(),
                cohorts.control.len(),
                cohorts.excluded_partial
            ),
            (1, 1, 1)
        );
        cohorts.check().unwrap();
        let cohorts = Cohorts::split(&logs, true);
        assert_eq!(cohorts.control.len(), 2);
    }
}
