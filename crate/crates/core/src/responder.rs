//! Synthetic participants.
//!
//! A simulated participant picks the dominated option with probability
//! `baseline` in the control group and `baseline + delta_kind` in the
//! experimental group, independently on every turn. Each participant draws
//! from its own stream of one base seed, so a cohort is reproducible
//! regardless of thread count.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{DialogueError, DialogueState, OptionSlot, ParticipantId, SessionId, SessionSpec};
use crate::store::SessionLog;
use crate::tasks::{BiasKind, Condition, DecisionTask, Study};

#[derive(Debug, Error)]
pub enum ResponderError {
    #[error("invalid responder profile: {0}")]
    Profile(String),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponderProfile {
    /// Probability of a dominated pick without biased wording.
    pub baseline: f64,
    /// Added to `baseline` in the experimental group on framing probes.
    pub delta_framing: f64,
    /// Added to `baseline` in the experimental group on loss-aversion probes.
    pub delta_loss_aversion: f64,
}

impl ResponderProfile {
    pub fn new(baseline: f64, delta_framing: f64, delta_loss_aversion: f64) -> Result<Self, ResponderError> {
        let p = ResponderProfile {
            baseline,
            delta_framing,
            delta_loss_aversion,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ResponderError> {
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !unit(self.baseline) {
            return Err(ResponderError::Profile(format!(
                "baseline {} outside [0, 1]",
                self.baseline
            )));
        }
        for (name, delta) in [
            ("framing", self.delta_framing),
            ("loss_aversion", self.delta_loss_aversion),
        ] {
            if !delta.is_finite() || delta < 0.0 {
                return Err(ResponderError::Profile(format!("delta {name} {delta} is negative")));
            }
            if !unit(self.baseline + delta) {
                return Err(ResponderError::Profile(format!(
                    "baseline {} + delta {name} {delta} exceeds 1",
                    self.baseline
                )));
            }
        }
        Ok(())
    }

    pub fn delta(&self, bias: BiasKind) -> f64 {
        match bias {
            BiasKind::Framing => self.delta_framing,
            BiasKind::LossAversion => self.delta_loss_aversion,
        }
    }

    pub fn suboptimal_probability(&self, bias: BiasKind, condition: Condition) -> f64 {
        match condition {
            Condition::Control => self.baseline,
            Condition::Experimental => self.baseline + self.delta(bias),
        }
    }

    /// Shifts each delta by a uniform draw in `[-jitter, jitter]`, clamped so
    /// the profile stays valid.
    fn jittered<R: Rng + ?Sized>(&self, jitter: f64, rng: &mut R) -> Self {
        if jitter <= 0.0 {
            return *self;
        }
        let room = 1.0 - self.baseline;
        let mut shift = |d: f64| (d + rng.random_range(-jitter..=jitter)).clamp(0.0, room);
        ResponderProfile {
            baseline: self.baseline,
            delta_framing: shift(self.delta_framing),
            delta_loss_aversion: shift(self.delta_loss_aversion),
        }
    }
}

pub fn simulate_choice<R: Rng + ?Sized>(
    profile: &ResponderProfile,
    task: &DecisionTask,
    condition: Condition,
    rng: &mut R,
) -> OptionSlot {
    let p = profile
        .suboptimal_probability(task.bias_kind, condition)
        .clamp(0.0, 1.0);
    if rng.random_bool(p) {
        task.suboptimal_slot()
    } else {
        task.optimal_slot()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_experimental: usize,
    pub n_control: usize,
    pub profile: ResponderProfile,
    pub seed: u64,
    /// Half-width of the per-participant uniform jitter on each delta; zero disables it.
    pub delta_jitter: f64,
}

impl CohortSpec {
    pub fn new(n_experimental: usize, n_control: usize, profile: ResponderProfile, seed: u64) -> Self {
        CohortSpec {
            n_experimental,
            n_control,
            profile,
            seed,
            delta_jitter: 0.0,
        }
    }
}

/// Start of the synthetic clock used in simulated logs.
pub fn simulation_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap()
}

/// Runs full dialogues for every participant of the cohort. Experimental
/// participants come first; timestamps advance one second per turn from
/// [`simulation_epoch`], so identical specs yield identical logs.
pub fn simulate_cohort(study: &Study, spec: &CohortSpec) -> Result<Vec<SessionLog>, ResponderError> {
    spec.profile.validate()?;
    if !spec.delta_jitter.is_finite() || spec.delta_jitter < 0.0 {
        return Err(ResponderError::Profile(format!(
            "jitter {} is negative",
            spec.delta_jitter
        )));
    }
    let total = spec.n_experimental + spec.n_control;
    (0..total)
        .into_par_iter()
        .map(|idx| {
            let condition = if idx < spec.n_experimental {
                Condition::Experimental
            } else {
                Condition::Control
            };
            simulate_participant(study, spec, idx, condition)
        })
        .collect()
}

fn simulate_participant(
    study: &Study,
    spec: &CohortSpec,
    idx: usize,
    condition: Condition,
) -> Result<SessionLog, ResponderError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(idx as u64);
    let session_seed = rng.next_u64();
    let profile = spec.profile.jittered(spec.delta_jitter, &mut rng);
    let tag = match condition {
        Condition::Experimental => 'e',
        Condition::Control => 'c',
    };
    let session = SessionSpec {
        session_id: SessionId(format!("sim-{}-{tag}-{idx:05}", spec.seed)),
        participant_id: ParticipantId(format!("sim-p{idx:05}")),
        condition,
        seed: session_seed,
    };
    let epoch = simulation_epoch();
    let mut state = DialogueState::start(study, session, epoch)?;
    state.next_utterance()?;
    let mut second = 0;
    while let Some(task) = state.current_task() {
        let slot = simulate_choice(&profile, task, condition, &mut rng);
        second += 1;
        state.apply_choice_at(slot, epoch + Duration::seconds(second))?;
        state.next_utterance()?;
    }
    Ok(state.finalize()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::PROBES_PER_BIAS;
    use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

    fn profile(b: f64, f: f64, l: f64) -> ResponderProfile {
        ResponderProfile::new(b, f, l).unwrap()
    }

    #[test]
    fn profile_validation() {
        assert!(ResponderProfile::new(0.35, 0.25, 0.25).is_ok());
        assert!(ResponderProfile::new(-0.1, 0.0, 0.0).is_err());
        assert!(ResponderProfile::new(0.8, 0.3, 0.0).is_err());
        assert!(ResponderProfile::new(0.5, -0.1, 0.0).is_err());
        assert!(ResponderProfile::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(ResponderProfile::new(0.5, 0.5, 0.5).is_ok());
    }

    #[test]
    fn choice_frequencies() {
        let study = Study::bundled();
        let plan = study.build_task_plan(Condition::Experimental, 3).unwrap();
        let task = plan.task(1).unwrap();
        assert_eq!(task.bias_kind, BiasKind::Framing);
        let p = profile(0.5, 0.2, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let freq = |condition, rng: &mut ChaCha8Rng| {
            (0..n)
                .filter(|_| simulate_choice(&p, task, condition, rng) == task.suboptimal_slot())
                .count() as f64
                / n as f64
        };
        assert!((freq(Condition::Control, &mut rng) - 0.5).abs() < 0.01);
        assert!((freq(Condition::Experimental, &mut rng) - 0.7).abs() < 0.01);
    }

    #[test]
    fn scores_follow_binomial() {
        let study = Study::bundled();
        let spec = CohortSpec::new(10_000, 0, profile(0.35, 0.25, 0.0), 99);
        let logs = simulate_cohort(&study, &spec).unwrap();
        let mut observed = [0usize; PROBES_PER_BIAS + 1];
        for log in &logs {
            let s = log
                .records
                .iter()
                .filter(|r| r.bias_kind == BiasKind::Framing && r.chose_suboptimal)
                .count();
            observed[s] += 1;
        }
        let binom = Binomial::new(0.6, PROBES_PER_BIAS as u64).unwrap();
        let n = logs.len() as f64;
        let chi2: f64 = observed
            .iter()
            .enumerate()
            .map(|(s, &o)| {
                let e = n * binom.pmf(s as u64);
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let critical = ChiSquared::new(PROBES_PER_BIAS as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn cohort_is_deterministic_and_ordered() {
        let study = Study::bundled();
        let spec = CohortSpec::new(7, 5, profile(0.35, 0.2, 0.1), 5);
        let a = simulate_cohort(&study, &spec).unwrap();
        let b = simulate_cohort(&study, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        assert!(a[..7].iter().all(|l| l.condition == Condition::Experimental));
        assert!(a[7..].iter().all(|l| l.condition == Condition::Control));
        assert!(a.iter().all(|l| l.complete && l.records.len() == 10));
        let other = simulate_cohort(&study, &CohortSpec { seed: 6, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn smallest_cohort() {
        let study = Study::bundled();
        let logs = simulate_cohort(&study, &CohortSpec::new(1, 1, profile(0.5, 0.0, 0.0), 1)).unwrap();
        assert_eq!(logs.len(), 2);
        assert_eq!(logs[0].condition, Condition::Experimental);
        assert_eq!(logs[1].condition, Condition::Control);
    }

    #[test]
    fn jitter_stays_in_range() {
        let p = profile(0.9, 0.05, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let j = p.jittered(0.2, &mut rng);
            j.validate().unwrap();
        }
        let study = Study::bundled();
        let spec = CohortSpec {
            delta_jitter: 0.05,
            ..CohortSpec::new(3, 3, profile(0.35, 0.2, 0.2), 8)
        };
        assert_eq!(
            simulate_cohort(&study, &spec).unwrap(),
            simulate_cohort(&study, &spec).unwrap()
        );
        assert!(simulate_cohort(
            &study,
            &CohortSpec {
                delta_jitter: -1.0,
                ..spec
            }
        )
        .is_err());
    }
}
