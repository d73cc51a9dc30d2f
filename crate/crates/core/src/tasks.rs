//! Decision tasks and their rendering.
//!
//! A [`Study`] binds a catalog to a template set. From it, [`Study::build_task_plan`]
//! produces the ten tasks of one session: framing probes on odd turns (city
//! pairs ranked by carbon emissions) and loss-aversion probes on even turns
//! (priced pairs). Every task carries both utterance variants; the session's
//! [`Condition`] picks which one is spoken. Both variants are drawn from the
//! same random stream in the same order, so experimental and control plans for
//! one seed differ in wording only.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CatalogError, Entity, EntityKind, EntityPair, PhraseForm, PhraseTag, UsedEntities};
use crate::dialogue::OptionSlot;

pub const BUNDLED_TEMPLATES: &str = include_str!("../data/templates.toml");

/// Number of decision tasks in a session.
pub const TURNS: usize = 10;
/// Number of probes per bias kind in a session.
pub const PROBES_PER_BIAS: usize = 5;

/// Bias kind and entity kind of every turn, in conversation order.
pub const SCHEDULE: [(BiasKind, EntityKind); TURNS] = [
    (BiasKind::Framing, EntityKind::City),
    (BiasKind::LossAversion, EntityKind::Hotel),
    (BiasKind::Framing, EntityKind::City),
    (BiasKind::LossAversion, EntityKind::Restaurant),
    (BiasKind::Framing, EntityKind::City),
    (BiasKind::LossAversion, EntityKind::Hotel),
    (BiasKind::Framing, EntityKind::City),
    (BiasKind::LossAversion, EntityKind::Event),
    (BiasKind::Framing, EntityKind::City),
    (BiasKind::LossAversion, EntityKind::Hotel),
];

const TASK_PLACEHOLDERS: [&str; 5] = [
    "suboptimal_name",
    "optimal_name",
    "suboptimal_phrase",
    "optimal_phrase",
    "dominance_clause",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Experimental,
    Control,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Experimental => "experimental",
            Condition::Control => "control",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "experimental" => Ok(Condition::Experimental),
            "control" => Ok(Condition::Control),
            other => Err(format!(
                "unknown condition '{other}' (expected experimental or control)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    Framing,
    LossAversion,
}

impl BiasKind {
    pub const ALL: [BiasKind; 2] = [BiasKind::Framing, BiasKind::LossAversion];

    pub fn as_str(self) -> &'static str {
        match self {
            BiasKind::Framing => "framing",
            BiasKind::LossAversion => "loss_aversion",
        }
    }
}

impl fmt::Display for BiasKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BiasKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "framing" => Ok(BiasKind::Framing),
            "loss_aversion" => Ok(BiasKind::LossAversion),
            other => Err(format!("unknown bias '{other}' (expected framing or loss_aversion)")),
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TaskError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("template document is not valid TOML: {0}")]
    TemplateSyntax(String),
    #[error("template '{name}': {message}")]
    Template { name: String, message: String },
    #[error("entity '{entity}' has no 'price' attribute")]
    MissingPrice { entity: String },
    #[error("reference price {reference} for '{kind}' must exceed the price of '{entity}' ({price})")]
    Reference {
        kind: EntityKind,
        entity: String,
        price: f64,
        reference: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intro {
    pub first: String,
    pub next: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramingTemplates {
    pub experimental: String,
    pub control: String,
    /// Keyed by discriminating attribute.
    pub dominance: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossAversionTemplates {
    pub experimental: String,
    pub control: String,
    pub loss_phrase: String,
    pub gain_phrase: String,
    pub neutral_phrase: String,
    pub dominance: BTreeMap<String, String>,
    /// Common standard rate savings are measured from, per entity kind.
    pub reference_price: BTreeMap<EntityKind, f64>,
}

/// The natural-language template set.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Templates {
    pub schema_version: u32,
    pub greeting: String,
    pub acknowledgement: String,
    pub reprompt: String,
    pub closing: String,
    pub intro: BTreeMap<EntityKind, Intro>,
    pub framing: FramingTemplates,
    pub loss_aversion: LossAversionTemplates,
}

impl Templates {
    pub fn load(source: &str) -> Result<Self, TaskError> {
        let t: Templates = toml::from_str(source).map_err(|e| TaskError::TemplateSyntax(e.message().to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn bundled() -> Self {
        Self::load(BUNDLED_TEMPLATES).expect("bundled templates are valid")
    }

    fn validate(&self) -> Result<(), TaskError> {
        if self.schema_version != 1 {
            return Err(template_err(
                "schema_version",
                format!("unsupported version {}", self.schema_version),
            ));
        }
        let skeletons = [
            ("framing.experimental", &self.framing.experimental),
            ("framing.control", &self.framing.control),
            ("loss_aversion.experimental", &self.loss_aversion.experimental),
            ("loss_aversion.control", &self.loss_aversion.control),
        ];
        for (name, text) in skeletons {
            let found = placeholders(text).map_err(|m| template_err(name, m))?;
            for required in TASK_PLACEHOLDERS {
                if !found.contains(required) {
                    return Err(template_err(name, format!("missing placeholder {{{required}}}")));
                }
            }
            check_allowed(name, &found, &TASK_PLACEHOLDERS)?;
            if !text.trim_end().ends_with('?') {
                return Err(template_err(name, "must end with a question".into()));
            }
        }
        let clause_vars = ["suboptimal_name", "optimal_name", "reference", "unit"];
        for (attr, text) in self.framing.dominance.iter().chain(&self.loss_aversion.dominance) {
            let found = placeholders(text).map_err(|m| template_err(attr, m))?;
            check_allowed(&format!("dominance.{attr}"), &found, &clause_vars)?;
        }
        let phrase_vars = ["saving", "price", "reference", "unit"];
        for (name, text) in [
            ("loss_aversion.loss_phrase", &self.loss_aversion.loss_phrase),
            ("loss_aversion.gain_phrase", &self.loss_aversion.gain_phrase),
            ("loss_aversion.neutral_phrase", &self.loss_aversion.neutral_phrase),
        ] {
            let found = placeholders(text).map_err(|m| template_err(name, m))?;
            check_allowed(name, &found, &phrase_vars)?;
        }
        for (name, text, vars) in [
            ("greeting", &self.greeting, &[][..]),
            ("acknowledgement", &self.acknowledgement, &["choice"][..]),
            ("reprompt", &self.reprompt, &["first", "second"][..]),
            ("closing", &self.closing, &["itinerary"][..]),
        ] {
            let found = placeholders(text).map_err(|m| template_err(name, m))?;
            check_allowed(name, &found, vars)?;
        }
        for (kind, reference) in &self.loss_aversion.reference_price {
            if !reference.is_finite() || *reference <= 0.0 {
                return Err(template_err(
                    &format!("loss_aversion.reference_price.{kind}"),
                    "must be a positive number".into(),
                ));
            }
        }
        Ok(())
    }
}

fn template_err(name: &str, message: String) -> TaskError {
    TaskError::Template {
        name: name.to_string(),
        message,
    }
}

fn check_allowed(name: &str, found: &BTreeSet<String>, allowed: &[&str]) -> Result<(), TaskError> {
    match found.iter().find(|p| !allowed.contains(&p.as_str())) {
        Some(p) => Err(template_err(name, format!("unknown placeholder {{{p}}}"))),
        None => Ok(()),
    }
}

/// Names of `{placeholder}`s in `text`.
fn placeholders(text: &str) -> Result<BTreeSet<String>, String> {
    let mut out = BTreeSet::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or_else(|| "unclosed '{'".to_string())?;
        let name = &after[..close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            return Err(format!("bad placeholder '{{{name}}}'"));
        }
        out.insert(name.to_string());
        rest = &after[close + 1..];
    }
    Ok(out)
}

/// Substitutes `{name}` placeholders. Unknown names are left untouched.
pub(crate) fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match values.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Formats a monetary amount: whole numbers without decimals, otherwise two places.
pub fn format_amount(value: f64) -> String {
    if value.fract() == 0.0 {
        format!("{value:.0}")
    } else {
        format!("{value:.2}")
    }
}

/// One two-option probe.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTask {
    pub turn_index: usize,
    pub bias_kind: BiasKind,
    pub pair: EntityPair,
    /// Slot carrying the bias-inducing wording; always the suboptimal one.
    pub framed_option: OptionSlot,
    pub utterance_experimental: String,
    pub utterance_control: String,
    /// Entity names in slot order.
    pub option_labels: [String; 2],
}

impl DecisionTask {
    pub fn render(&self, condition: Condition) -> &str {
        match condition {
            Condition::Experimental => &self.utterance_experimental,
            Condition::Control => &self.utterance_control,
        }
    }

    pub fn optimal_slot(&self) -> OptionSlot {
        self.pair.optimal_slot
    }

    pub fn suboptimal_slot(&self) -> OptionSlot {
        self.pair.suboptimal_slot()
    }

    pub fn label(&self, slot: OptionSlot) -> &str {
        &self.option_labels[slot.index()]
    }
}

pub fn render_utterance(task: &DecisionTask, condition: Condition) -> &str {
    task.render(condition)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPlan {
    pub tasks: Vec<DecisionTask>,
    pub seed: u64,
    pub condition: Condition,
    pub catalog_version: String,
}

impl TaskPlan {
    pub fn task(&self, turn_index: usize) -> Option<&DecisionTask> {
        turn_index.checked_sub(1).and_then(|i| self.tasks.get(i))
    }

    pub fn bias_sequence(&self) -> Vec<BiasKind> {
        self.tasks.iter().map(|t| t.bias_kind).collect()
    }
}

/// Per-session record of phrases already spoken in one utterance variant.
#[derive(Debug, Default, Clone)]
pub struct PhraseBag {
    used: HashSet<String>,
}

impl PhraseBag {
    /// Draws an unused phrase of the given tag and form. When every matching
    /// phrase of the entity has been used, the full list is drawn from again.
    pub fn draw<R: Rng + ?Sized>(&mut self, entity: &Entity, tag: PhraseTag, form: PhraseForm, rng: &mut R) -> String {
        let all: Vec<&str> = entity.phrases_of(tag, form).map(|p| p.text.as_str()).collect();
        let fresh: Vec<&str> = all.iter().copied().filter(|t| !self.used.contains(*t)).collect();
        let pool = if fresh.is_empty() { &all } else { &fresh };
        let pick = pool[rng.random_range(0..pool.len())].to_string();
        self.used.insert(pick.clone());
        pick
    }
}

/// Phrase bags of both variants for one session.
#[derive(Debug, Default, Clone)]
pub struct SessionPhrases {
    pub experimental: PhraseBag,
    pub control: PhraseBag,
}

/// A catalog and template set validated against each other.
#[derive(Debug, Clone)]
pub struct Study {
    catalog: Arc<Catalog>,
    templates: Arc<Templates>,
}

impl Study {
    pub fn new(catalog: Catalog, templates: Templates) -> Result<Self, TaskError> {
        for (bias, kind) in SCHEDULE {
            let attribute = catalog.discriminator(kind).ok_or(CatalogError::NoDiscriminator(kind))?;
            if !templates.intro.contains_key(&kind) {
                return Err(template_err("intro", format!("no intro for kind '{kind}'")));
            }
            match bias {
                BiasKind::Framing => {
                    if !templates.framing.dominance.contains_key(attribute) {
                        return Err(template_err(
                            "framing.dominance",
                            format!("no clause for attribute '{attribute}'"),
                        ));
                    }
                }
                BiasKind::LossAversion => {
                    if attribute != "price" {
                        return Err(template_err(
                            "loss_aversion",
                            format!("kind '{kind}' must be ranked on 'price', not '{attribute}'"),
                        ));
                    }
                    if !templates.loss_aversion.dominance.contains_key(attribute) {
                        return Err(template_err(
                            "loss_aversion.dominance",
                            format!("no clause for attribute '{attribute}'"),
                        ));
                    }
                    let reference = *templates.loss_aversion.reference_price.get(&kind).ok_or_else(|| {
                        template_err("loss_aversion.reference_price", format!("no reference for '{kind}'"))
                    })?;
                    for e in catalog.of_kind(kind) {
                        let price = e
                            .attribute("price")
                            .ok_or_else(|| TaskError::MissingPrice { entity: e.id.0.clone() })?
                            .value;
                        if price >= reference {
                            return Err(TaskError::Reference {
                                kind,
                                entity: e.id.0.clone(),
                                price,
                                reference,
                            });
                        }
                    }
                }
            }
        }
        Ok(Study {
            catalog: Arc::new(catalog),
            templates: Arc::new(templates),
        })
    }

    pub fn bundled() -> Self {
        Self::new(Catalog::bundled(), Templates::bundled()).expect("bundled study is consistent")
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    /// Builds the ten-task plan of one session.
    pub fn build_task_plan(&self, condition: Condition, seed: u64) -> Result<TaskPlan, TaskError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut used = UsedEntities::new();
        let mut phrases = SessionPhrases::default();
        let mut tasks = Vec::with_capacity(TURNS);
        for (i, (bias, kind)) in SCHEDULE.into_iter().enumerate() {
            let pair = self.catalog.draw_pair(kind, &mut rng, &mut used)?;
            let mut task = match bias {
                BiasKind::Framing => self.make_framing_task(pair, &mut rng, &mut phrases)?,
                BiasKind::LossAversion => self.make_loss_aversion_task(pair)?,
            };
            task.turn_index = i + 1;
            tasks.push(task);
        }
        Ok(TaskPlan {
            tasks,
            seed,
            condition,
            catalog_version: self.catalog.version().to_string(),
        })
    }

    /// Framing probe: in the experimental variant the suboptimal option gets an
    /// intensifier and the optimal option a fact; in the control variant both
    /// get facts. The dominance clause is spoken in both.
    pub fn make_framing_task<R: Rng + ?Sized>(
        &self,
        pair: EntityPair,
        rng: &mut R,
        phrases: &mut SessionPhrases,
    ) -> Result<DecisionTask, TaskError> {
        let t = &self.templates.framing;
        let clause = t.dominance.get(&pair.discriminating_attribute).ok_or_else(|| {
            template_err(
                "framing.dominance",
                format!("no clause for attribute '{}'", pair.discriminating_attribute),
            )
        })?;
        let sub = &pair.suboptimal;
        let opt = &pair.optimal;
        let exp_sub = phrases
            .experimental
            .draw(sub, PhraseTag::Intensifier, PhraseForm::Predicate, rng);
        let exp_opt = phrases
            .experimental
            .draw(opt, PhraseTag::Fact, PhraseForm::Appositive, rng);
        let ctl_sub = phrases.control.draw(sub, PhraseTag::Fact, PhraseForm::Predicate, rng);
        let ctl_opt = phrases.control.draw(opt, PhraseTag::Fact, PhraseForm::Appositive, rng);

        let unit = opt
            .attribute(&pair.discriminating_attribute)
            .map(|a| a.unit.as_str())
            .unwrap_or_default();
        let names = [
            ("suboptimal_name", sub.name.as_str()),
            ("optimal_name", opt.name.as_str()),
        ];
        let dominance = fill(clause, &[names[0], names[1], ("unit", unit)]);
        let render = |skeleton: &str, sub_phrase: &str, opt_phrase: &str| {
            fill(
                skeleton,
                &[
                    names[0],
                    names[1],
                    ("suboptimal_phrase", sub_phrase),
                    ("optimal_phrase", opt_phrase),
                    ("dominance_clause", &dominance),
                ],
            )
        };
        let experimental = render(&t.experimental, &exp_sub, &exp_opt);
        let control = render(&t.control, &ctl_sub, &ctl_opt);
        Ok(self.assemble(BiasKind::Framing, pair, experimental, control))
    }

    /// Loss-aversion probe over a priced pair. Savings are measured from the
    /// kind's reference price, so the optimal (cheaper) option always offers the
    /// larger saving. The experimental variant words the suboptimal saving as a
    /// loss to avoid and the optimal one as a gain; control states both prices.
    pub fn make_loss_aversion_task(&self, pair: EntityPair) -> Result<DecisionTask, TaskError> {
        let t = &self.templates.loss_aversion;
        let kind = pair.kind();
        let price_of = |e: &Entity| {
            e.attribute("price")
                .map(|a| (a.value, a.unit.clone()))
                .ok_or_else(|| TaskError::MissingPrice { entity: e.id.0.clone() })
        };
        let (sub_price, unit) = price_of(&pair.suboptimal)?;
        let (opt_price, _) = price_of(&pair.optimal)?;
        let reference = *t
            .reference_price
            .get(&kind)
            .ok_or_else(|| template_err("loss_aversion.reference_price", format!("no reference for '{kind}'")))?;
        for (e, price) in [(&pair.suboptimal, sub_price), (&pair.optimal, opt_price)] {
            if price >= reference {
                return Err(TaskError::Reference {
                    kind,
                    entity: e.id.0.clone(),
                    price,
                    reference,
                });
            }
        }
        let clause = t.dominance.get(&pair.discriminating_attribute).ok_or_else(|| {
            template_err(
                "loss_aversion.dominance",
                format!("no clause for attribute '{}'", pair.discriminating_attribute),
            )
        })?;
        let reference_s = format_amount(reference);
        let money = |template: &str, price: f64| {
            fill(
                template,
                &[
                    ("saving", &format_amount(reference - price)),
                    ("price", &format_amount(price)),
                    ("reference", &reference_s),
                    ("unit", &unit),
                ],
            )
        };
        let sub_name = pair.suboptimal.name.as_str();
        let opt_name = pair.optimal.name.as_str();
        let dominance = fill(
            clause,
            &[
                ("suboptimal_name", sub_name),
                ("optimal_name", opt_name),
                ("reference", &reference_s),
                ("unit", &unit),
            ],
        );
        let render = |skeleton: &str, sub_phrase: &str, opt_phrase: &str| {
            fill(
                skeleton,
                &[
                    ("suboptimal_name", sub_name),
                    ("optimal_name", opt_name),
                    ("suboptimal_phrase", sub_phrase),
                    ("optimal_phrase", opt_phrase),
                    ("dominance_clause", &dominance),
                ],
            )
        };
        let experimental = render(
            &t.experimental,
            &money(&t.loss_phrase, sub_price),
            &money(&t.gain_phrase, opt_price),
        );
        let control = render(
            &t.control,
            &money(&t.neutral_phrase, sub_price),
            &money(&t.neutral_phrase, opt_price),
        );
        Ok(self.assemble(BiasKind::LossAversion, pair, experimental, control))
    }

    fn assemble(&self, bias_kind: BiasKind, pair: EntityPair, experimental: String, control: String) -> DecisionTask {
        let option_labels = [
            pair.in_slot(OptionSlot::First).name.clone(),
            pair.in_slot(OptionSlot::Second).name.clone(),
        ];
        DecisionTask {
            turn_index: 0,
            bias_kind,
            framed_option: pair.suboptimal_slot(),
            pair,
            utterance_experimental: experimental,
            utterance_control: control,
            option_labels,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::catalog::EntityId;

    pub(crate) fn study_from(catalog: &str) -> Study {
        Study::new(Catalog::load(catalog).unwrap(), Templates::bundled()).unwrap()
    }

    const FRAMING_GOLDEN_SEED: u64 = 5;

    fn city_pair_task(seed: u64) -> DecisionTask {
        let study = study_from(&crate::catalog::tests::two_cities_with_priced());
        let cat = study.catalog();
        let pair = EntityPair::ranked(
            cat.get(&EntityId("brussels".into())).unwrap().clone(),
            cat.get(&EntityId("malaga".into())).unwrap().clone(),
            "carbon_emissions",
            OptionSlot::Second,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        study
            .make_framing_task(pair, &mut rng, &mut SessionPhrases::default())
            .unwrap()
    }

    #[test]
    fn framing_utterances_for_a_city_pair() {
        let task = city_pair_task(FRAMING_GOLDEN_SEED);
        assert_eq!(task.pair.optimal.name, "Malaga");
        assert_eq!(
            task.utterance_experimental,
            "Brussels offers spectacular natural views. However, the estimated carbon emissions for the trip to \
             Brussels is higher than the trip to Malaga, a city with an area of 66 sq. km. Where do you want to go?"
        );
        assert_eq!(
            task.utterance_control,
            "Brussels is a city which has an area of 64 sqkm. However, the estimated carbon emissions for the trip \
             to Brussels is higher than the trip to Malaga, a city which has an area of 66 sqkm. Where do you want to go?"
        );
        assert_eq!(task.option_labels, ["Brussels".to_string(), "Malaga".to_string()]);
        assert_eq!(task.framed_option, OptionSlot::First);
    }

    #[test]
    fn placeholder_scan() {
        let found = placeholders("a {x} b {y_z} {x}").unwrap();
        assert_eq!(found.into_iter().collect::<Vec<_>>(), vec!["x", "y_z"]);
        assert!(placeholders("oops {x").is_err());
        assert_eq!(fill("{a}-{b}-{c}", &[("a", "1"), ("b", "2")]), "1-2-{c}");
    }

    #[test]
    fn template_missing_placeholder_is_rejected() {
        let doc = BUNDLED_TEMPLATES.replacen(
            "{dominance_clause} {optimal_name}, {optimal_phrase}. Where do you want to go?\"\ncontrol",
            "{optimal_name}, {optimal_phrase}. Where do you want to go?\"\ncontrol",
            1,
        );
        assert_ne!(doc, BUNDLED_TEMPLATES);
        match Templates::load(&doc) {
            Err(TaskError::Template { name, message }) => {
                assert_eq!(name, "framing.experimental");
                assert!(message.contains("dominance_clause"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn golden_bias_sequence_seed_42() {
        let study = Study::bundled();
        let plan = study.build_task_plan(Condition::Experimental, 42).unwrap();
        use BiasKind::{Framing as F, LossAversion as L};
        assert_eq!(plan.bias_sequence(), vec![F, L, F, L, F, L, F, L, F, L]);
        assert_eq!(
            plan.tasks.iter().map(|t| t.turn_index).collect::<Vec<_>>(),
            (1..=10).collect::<Vec<_>>()
        );
    }

    #[test]
    fn control_plan_matches_experimental_in_substance() {
        let study = Study::bundled();
        let e = study.build_task_plan(Condition::Experimental, 42).unwrap();
        let c = study.build_task_plan(Condition::Control, 42).unwrap();
        assert_eq!(e.tasks, c.tasks);
        assert_ne!(e.condition, c.condition);
        assert_eq!(e, study.build_task_plan(Condition::Experimental, 42).unwrap());
    }

    #[test]
    fn exhausted_catalog_propagates() {
        let study = study_from(&crate::catalog::tests::two_cities_with_priced());
        assert!(matches!(
            study.build_task_plan(Condition::Control, 1),
            Err(TaskError::Catalog(CatalogError::Exhausted { .. }))
        ));
    }

    fn hotels(opt_price: f64, sub_price: f64) -> EntityPair {
        let study = Study::bundled();
        let mut h: Vec<Entity> = study.catalog().of_kind(EntityKind::Hotel).cloned().collect();
        let mut a = h.remove(0);
        let mut b = h.remove(0);
        a.attributes.iter_mut().find(|x| x.name == "price").unwrap().value = opt_price;
        b.attributes.iter_mut().find(|x| x.name == "price").unwrap().value = sub_price;
        EntityPair::ranked(a, b, "price", OptionSlot::Second).unwrap()
    }

    #[test]
    fn loss_aversion_golden() {
        // reference 190: optimal at 140 saves 50, suboptimal at 160 saves 30
        let study = Study::bundled();
        let task = study.make_loss_aversion_task(hotels(140.0, 160.0)).unwrap();
        assert_eq!(
            task.utterance_experimental,
            "Both are listed at a standard rate of 190 EUR. Book Pension Ilirija now to avoid \
             losing your 30 EUR discount, or choose Hotel Vesna to gain a 50 EUR saving. \
             Which one would you like?"
        );
        assert_eq!(
            task.utterance_control,
            "Both are listed at a standard rate of 190 EUR. Pension Ilirija costs 160 EUR, and \
             Hotel Vesna costs 140 EUR. Which one would you like?"
        );
        assert_eq!(task.framed_option, OptionSlot::First);
        assert_eq!(
            task.option_labels,
            ["Pension Ilirija".to_string(), "Hotel Vesna".to_string()]
        );
    }

    #[test]
    fn loss_aversion_needs_price() {
        let study = Study::bundled();
        let mut pair = hotels(140.0, 160.0);
        pair.suboptimal.attributes.retain(|a| a.name != "price");
        assert_eq!(
            study.make_loss_aversion_task(pair),
            Err(TaskError::MissingPrice {
                entity: "pension_ilirija".into()
            })
        );
    }

    #[test]
    fn equal_prices_never_form_a_pair() {
        let study = Study::bundled();
        let h: Vec<Entity> = study.catalog().of_kind(EntityKind::Hotel).cloned().collect();
        let mut b = h[1].clone();
        b.attributes.iter_mut().find(|x| x.name == "price").unwrap().value = h[0].attribute("price").unwrap().value;
        assert!(EntityPair::ranked(h[0].clone(), b, "price", OptionSlot::First).is_err());
    }

    #[test]
    fn render_is_pure() {
        let study = Study::bundled();
        let plan = study.build_task_plan(Condition::Control, 5).unwrap();
        let t = &plan.tasks[0];
        assert_eq!(
            render_utterance(t, Condition::Control),
            render_utterance(t, Condition::Control)
        );
        assert_eq!(render_utterance(t, Condition::Experimental), t.utterance_experimental);
    }
}
