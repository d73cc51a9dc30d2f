//! Structural checks on task plans, shared with the acceptance suite.

#![allow(dead_code)]

use biasprobe::tasks::{BiasKind, Condition, Study, PROBES_PER_BIAS, TURNS};

/// Builds both condition plans for `seed` and returns every violated rule.
pub fn plan_violations(study: &Study, seed: u64) -> Vec<String> {
    let mut problems = Vec::new();
    let exp = study
        .build_task_plan(Condition::Experimental, seed)
        .expect("experimental plan");
    let ctl = study.build_task_plan(Condition::Control, seed).expect("control plan");
    let intensifiers: Vec<&str> = study.catalog().intensifier_texts().collect();

    for plan in [&exp, &ctl] {
        if plan.tasks.len() != TURNS {
            problems.push(format!("{} turns", plan.tasks.len()));
        }
        for bias in BiasKind::ALL {
            let n = plan.tasks.iter().filter(|t| t.bias_kind == bias).count();
            if n != PROBES_PER_BIAS {
                problems.push(format!("{n} {bias} probes"));
            }
        }
    }
    for (i, (e, c)) in exp.tasks.iter().zip(&ctl.tasks).enumerate() {
        let turn = i + 1;
        if e.turn_index != turn || c.turn_index != turn {
            problems.push(format!("turn index mismatch at {turn}"));
        }
        if e.bias_kind != c.bias_kind || e.pair != c.pair || e.option_labels != c.option_labels {
            problems.push(format!("turn {turn}: conditions differ beyond phrasing"));
        }
        if e.utterance_experimental != c.utterance_experimental || e.utterance_control != c.utterance_control {
            problems.push(format!("turn {turn}: renderings differ between plans"));
        }
        let control = e.render(Condition::Control);
        if let Some(hit) = intensifiers.iter().find(|p| control.contains(*p)) {
            problems.push(format!("turn {turn}: control utterance contains intensifier '{hit}'"));
        }
        let sub = e.pair.suboptimal.name.as_str();
        let opt = e.pair.optimal.name.as_str();
        if e.option_labels.iter().filter(|l| l.as_str() == sub).count() != 1
            || e.option_labels.iter().filter(|l| l.as_str() == opt).count() != 1
        {
            problems.push(format!("turn {turn}: option labels {:?}", e.option_labels));
        }
        for condition in [Condition::Experimental, Condition::Control] {
            let text = e.render(condition);
            let once = e.bias_kind == BiasKind::LossAversion;
            for name in [sub, opt] {
                let n = text.matches(name).count();
                if n == 0 || (once && n != 1) {
                    problems.push(format!("turn {turn} {condition}: '{name}' named {n} times"));
                }
            }
        }
    }
    problems
}
