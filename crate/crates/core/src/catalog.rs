//! Domain entities and the phrase banks decision tasks are built from.
//!
//! The catalog is a TOML document. Every entity record carries its factual
//! attributes and a list of tagged phrases:
//!
//! ```toml
//! schema_version = 1
//!
//! [discriminators]
//! city = "carbon_emissions"
//!
//! [[entity]]
//! id = "malaga"
//! kind = "city"
//! name = "Malaga"
//! attributes = [
//!   { name = "area", value = 66.0, unit = "sq. km" },
//!   { name = "carbon_emissions", value = 150.0, unit = "kg CO2", direction = "lower_is_better" },
//! ]
//! phrases = [
//!   { tag = "fact", form = "predicate", text = "is a city which has an area of 66 sqkm" },
//!   { tag = "fact", form = "appositive", text = "a city with an area of 66 sq. km" },
//!   { tag = "intensifier", form = "predicate", text = "has a dazzling seafront" },
//! ]
//! ```
//!
//! `discriminators` names, per entity kind, the attribute on which pairs of
//! that kind are ranked. The loader rejects unknown fields everywhere.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dialogue::OptionSlot;

/// Catalog shipped with the crate: 12 cities, 6 hotels, 3 restaurants, 3 events.
pub const BUNDLED_CATALOG: &str = include_str!("../data/catalog.toml");

const SUPPORTED_SCHEMA: u32 = 1;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("catalog document is not valid TOML: {0}")]
    Syntax(String),
    #[error("malformed record {record}: {message}")]
    Parse { record: String, message: String },
    #[error("validation error: no entities")]
    NoEntities,
    #[error("validation error in entity '{entity}': {rule}")]
    Validation { entity: String, rule: String },
    #[error("validation error: {0}")]
    Document(String),
    #[error("no discriminating attribute declared for kind '{0}'")]
    NoDiscriminator(EntityKind),
    #[error("catalog exhausted: need 2 unused '{kind}' entities, {available} left")]
    Exhausted { kind: EntityKind, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    City,
    Hotel,
    Restaurant,
    Event,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::City => "city",
            EntityKind::Hotel => "hotel",
            EntityKind::Restaurant => "restaurant",
            EntityKind::Event => "event",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which way an attribute orders entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

impl Direction {
    /// True if `a` strictly dominates `b`.
    pub fn dominates(self, a: f64, b: f64) -> bool {
        match self {
            Direction::LowerIsBetter => a < b,
            Direction::HigherIsBetter => a > b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attribute {
    pub name: String,
    pub value: f64,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhraseTag {
    /// A verifiable attribute statement.
    Fact,
    /// A subjective modifier.
    Intensifier,
}

/// Grammatical slot a phrase fits into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhraseForm {
    /// Follows the name as a verb phrase: "Tartu *is a university town*".
    Predicate,
    /// Follows the name after a comma: "Tartu, *a city of 97,000 people*".
    Appositive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phrase {
    pub tag: PhraseTag,
    pub form: PhraseForm,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub String);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entity {
    pub id: EntityId,
    pub kind: EntityKind,
    pub name: String,
    pub attributes: Vec<Attribute>,
    pub phrases: Vec<Phrase>,
}

impl Entity {
    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn phrases_of(&self, tag: PhraseTag, form: PhraseForm) -> impl Iterator<Item = &Phrase> {
        self.phrases.iter().filter(move |p| p.tag == tag && p.form == form)
    }
}

/// Two same-kind entities where `optimal` strictly dominates `suboptimal` on
/// `discriminating_attribute`. `optimal_slot` is the presentation slot of the
/// optimal entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityPair {
    pub optimal: Entity,
    pub suboptimal: Entity,
    pub discriminating_attribute: String,
    pub optimal_slot: OptionSlot,
}

impl EntityPair {
    /// Builds a pair from two entities, ordering them by the attribute.
    /// Ties and kind mismatches are rejected.
    pub fn ranked(a: Entity, b: Entity, attribute: &str, optimal_slot: OptionSlot) -> Result<Self, CatalogError> {
        if a.kind != b.kind {
            return Err(CatalogError::Validation {
                entity: b.id.0.clone(),
                rule: format!("kind {} differs from paired entity kind {}", b.kind, a.kind),
            });
        }
        let (va, vb) = match (a.attribute(attribute), b.attribute(attribute)) {
            (Some(x), Some(y)) => (x, y),
            (None, _) => return Err(missing_attr(&a, attribute)),
            (_, None) => return Err(missing_attr(&b, attribute)),
        };
        let direction = va.direction.ok_or_else(|| CatalogError::Validation {
            entity: a.id.0.clone(),
            rule: format!("attribute '{attribute}' has no dominance direction"),
        })?;
        let (optimal, suboptimal) = if direction.dominates(va.value, vb.value) {
            (a, b)
        } else if direction.dominates(vb.value, va.value) {
            (b, a)
        } else {
            return Err(CatalogError::Validation {
                entity: a.id.0.clone(),
                rule: format!("ties with '{}' on '{attribute}'", b.id),
            });
        };
        Ok(EntityPair {
            optimal,
            suboptimal,
            discriminating_attribute: attribute.to_string(),
            optimal_slot,
        })
    }

    pub fn kind(&self) -> EntityKind {
        self.optimal.kind
    }

    pub fn suboptimal_slot(&self) -> OptionSlot {
        self.optimal_slot.other()
    }

    /// Entity presented in `slot`.
    pub fn in_slot(&self, slot: OptionSlot) -> &Entity {
        if slot == self.optimal_slot {
            &self.optimal
        } else {
            &self.suboptimal
        }
    }
}

fn missing_attr(e: &Entity, attribute: &str) -> CatalogError {
    CatalogError::Validation {
        entity: e.id.0.clone(),
        rule: format!("missing attribute '{attribute}'"),
    }
}

/// Entities already used in one session.
pub type UsedEntities = BTreeSet<EntityId>;

/// A validated, immutable catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    entities: Vec<Entity>,
    discriminators: BTreeMap<EntityKind, String>,
    version: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeader {
    schema_version: u32,
    #[serde(default)]
    discriminators: BTreeMap<EntityKind, String>,
    #[serde(default)]
    entity: Vec<toml::Value>,
}

impl Catalog {
    /// Parses and validates a catalog document.
    pub fn load(source: &str) -> Result<Self, CatalogError> {
        let header: RawHeader = toml::from_str(source).map_err(|e| CatalogError::Syntax(e.message().to_string()))?;
        if header.schema_version != SUPPORTED_SCHEMA {
            return Err(CatalogError::Document(format!(
                "unsupported schema_version {}",
                header.schema_version
            )));
        }
        let mut entities = Vec::with_capacity(header.entity.len());
        for (i, raw) in header.entity.into_iter().enumerate() {
            let label = match raw.get("id").and_then(|v| v.as_str()) {
                Some(id) => format!("entity #{} ('{id}')", i + 1),
                None => format!("entity #{}", i + 1),
            };
            let entity: Entity = raw.try_into().map_err(|e: toml::de::Error| CatalogError::Parse {
                record: label,
                message: e.message().to_string(),
            })?;
            entities.push(entity);
        }
        let version = hex::encode(Sha256::digest(source.as_bytes()));
        let catalog = Catalog {
            entities,
            discriminators: header.discriminators,
            version,
        };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn bundled() -> Self {
        Self::load(BUNDLED_CATALOG).expect("bundled catalog is valid")
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn of_kind(&self, kind: EntityKind) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(move |e| e.kind == kind)
    }

    pub fn get(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.iter().find(|e| &e.id == id)
    }

    /// SHA-256 of the source document, hex encoded.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn discriminator(&self, kind: EntityKind) -> Option<&str> {
        self.discriminators.get(&kind).map(String::as_str)
    }

    /// All intensifier-tagged phrase texts in the catalog.
    pub fn intensifier_texts(&self) -> impl Iterator<Item = &str> {
        self.entities
            .iter()
            .flat_map(|e| e.phrases.iter())
            .filter(|p| p.tag == PhraseTag::Intensifier)
            .map(|p| p.text.as_str())
    }

    /// Draws a fresh pair of `kind`, marking both entities used.
    ///
    /// The two entities are drawn uniformly without replacement from the
    /// unused entities of that kind; the slot of the optimal entity is a fair
    /// coin flip.
    pub fn draw_pair<R: Rng + ?Sized>(
        &self,
        kind: EntityKind,
        rng: &mut R,
        used: &mut UsedEntities,
    ) -> Result<EntityPair, CatalogError> {
        let attribute = self.discriminator(kind).ok_or(CatalogError::NoDiscriminator(kind))?;
        let candidates: Vec<&Entity> = self.of_kind(kind).filter(|e| !used.contains(&e.id)).collect();
        if candidates.len() < 2 {
            return Err(CatalogError::Exhausted {
                kind,
                available: candidates.len(),
            });
        }
        let i = rng.random_range(0..candidates.len());
        let mut j = rng.random_range(0..candidates.len() - 1);
        if j >= i {
            j += 1;
        }
        let optimal_slot = if rng.random_bool(0.5) {
            OptionSlot::First
        } else {
            OptionSlot::Second
        };
        let pair = EntityPair::ranked(candidates[i].clone(), candidates[j].clone(), attribute, optimal_slot)?;
        used.insert(pair.optimal.id.clone());
        used.insert(pair.suboptimal.id.clone());
        Ok(pair)
    }

    fn validate(&self) -> Result<(), CatalogError> {
        if self.entities.is_empty() {
            return Err(CatalogError::NoEntities);
        }
        let fail = |e: &Entity, rule: String| CatalogError::Validation {
            entity: e.id.0.clone(),
            rule,
        };

        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        let mut tag_of_text: HashMap<&str, PhraseTag> = HashMap::new();
        for e in &self.entities {
            if e.id.0.trim().is_empty() {
                return Err(fail(e, "empty id".into()));
            }
            if !ids.insert(&e.id) {
                return Err(fail(e, "duplicate id".into()));
            }
            if e.name.trim().is_empty() {
                return Err(fail(e, "empty name".into()));
            }
            if !names.insert(e.name.to_lowercase()) {
                return Err(fail(e, format!("duplicate name '{}'", e.name)));
            }

            let mut attr_names = BTreeSet::new();
            for a in &e.attributes {
                if !attr_names.insert(a.name.as_str()) {
                    return Err(fail(e, format!("duplicate attribute '{}'", a.name)));
                }
                if !a.value.is_finite() {
                    return Err(fail(e, format!("attribute '{}' is not finite", a.name)));
                }
            }
            let required = match e.kind {
                EntityKind::City => Some("carbon_emissions"),
                EntityKind::Hotel => Some("price"),
                _ => None,
            };
            if let Some(name) = required {
                if e.attribute(name).is_none() {
                    return Err(fail(e, format!("{} entities need a '{name}' attribute", e.kind)));
                }
            }

            for p in &e.phrases {
                if p.text.trim().is_empty() {
                    return Err(fail(e, "empty phrase text".into()));
                }
                if let Some(prev) = tag_of_text.insert(p.text.as_str(), p.tag) {
                    if prev != p.tag {
                        return Err(fail(
                            e,
                            format!("phrase '{}' is tagged both fact and intensifier", p.text),
                        ));
                    }
                }
            }
            if e.phrases_of(PhraseTag::Intensifier, PhraseForm::Predicate)
                .next()
                .is_none()
            {
                return Err(fail(e, "needs at least one intensifier phrase (predicate form)".into()));
            }
            for form in [PhraseForm::Predicate, PhraseForm::Appositive] {
                if e.phrases_of(PhraseTag::Fact, form).next().is_none() {
                    let form = match form {
                        PhraseForm::Predicate => "predicate",
                        PhraseForm::Appositive => "appositive",
                    };
                    return Err(fail(e, format!("needs at least one fact phrase ({form} form)")));
                }
            }
        }

        // Control utterances are checked by substring search, so an intensifier
        // must never hide inside a fact phrase.
        let intensifiers: Vec<&str> = self.intensifier_texts().collect();
        for e in &self.entities {
            for p in e.phrases.iter().filter(|p| p.tag == PhraseTag::Fact) {
                if let Some(hit) = intensifiers.iter().find(|i| p.text.contains(**i)) {
                    return Err(fail(
                        e,
                        format!("fact phrase '{}' contains intensifier '{hit}'", p.text),
                    ));
                }
            }
        }

        let kinds: BTreeSet<EntityKind> = self.entities.iter().map(|e| e.kind).collect();
        for kind in kinds {
            let attribute = self.discriminator(kind).ok_or(CatalogError::NoDiscriminator(kind))?;
            let members: Vec<&Entity> = self.of_kind(kind).collect();
            let first = members[0]
                .attribute(attribute)
                .ok_or_else(|| missing_attr(members[0], attribute))?;
            let direction = first.direction.ok_or_else(|| {
                fail(
                    members[0],
                    format!("attribute '{attribute}' has no dominance direction"),
                )
            })?;
            let mut seen: Vec<(f64, &Entity)> = Vec::new();
            for e in &members {
                let a = e.attribute(attribute).ok_or_else(|| missing_attr(e, attribute))?;
                if a.direction != Some(direction) {
                    return Err(fail(
                        e,
                        format!(
                            "dominance direction of '{attribute}' disagrees with '{}'",
                            members[0].id
                        ),
                    ));
                }
                if a.unit != first.unit {
                    return Err(fail(
                        e,
                        format!("unit of '{attribute}' disagrees with '{}'", members[0].id),
                    ));
                }
                if let Some((_, other)) = seen.iter().find(|(v, _)| *v == a.value) {
                    return Err(fail(
                        e,
                        format!("ties with '{}' on '{attribute}' (strict dominance required)", other.id),
                    ));
                }
                seen.push((a.value, e));
            }
        }
        for kind in self.discriminators.keys() {
            if self.of_kind(*kind).next().is_none() {
                return Err(CatalogError::Document(format!(
                    "discriminator declared for '{kind}' but no entities of that kind"
                )));
            }
        }
        Ok(())
    }
}
