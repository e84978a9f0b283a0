//! Instrument definitions: option sets, dimensions, items and scoring keys.
//!
//! Scales are loaded from TOML data files. Item texts are never compiled
//! into the crate; the files under `data/` are synthetic stand-ins with the
//! same structure as the licensed instruments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::variant::VariantId;

pub const LIKERT_POINTS: usize = 5;
pub const FORCED_CHOICE_OPTIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    Likert,
    ForcedChoice,
}

impl OptionKind {
    pub fn cardinality(self) -> usize {
        match self {
            OptionKind::Likert => LIKERT_POINTS,
            OptionKind::ForcedChoice => FORCED_CHOICE_OPTIONS,
        }
    }
}

impl fmt::Display for OptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptionKind::Likert => "likert",
            OptionKind::ForcedChoice => "forced_choice",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionSet {
    pub kind: OptionKind,
    pub labels: Vec<String>,
    pub anchors: Vec<String>,
}

impl OptionSet {
    /// 1-based ordinal of `label` within the set.
    pub fn ordinal(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label).map(|p| p + 1)
    }
}

/// Forced-choice item flavour, which selects the A/B rewrite template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Behavior,
    WordPreference,
}

/// One scale item as authored in the data file.
///
/// Likert items carry `reverse`; forced-choice items carry `pole_key`,
/// two `options` and usually a `kind_tag`. The rewrite fields
/// (`descriptor`, `second_person`, `context`, ...) are authored by hand
/// and consumed by the variant engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub index: usize,
    pub dimension: String,
    pub stem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_word: Option<String>,
    /// Grammatical subject after which the V3 blank is inserted. Defaults to
    /// the first whitespace-delimited word of the stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    /// Second-person restatement of the stem used by Likert V2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_person: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pole_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind_tag: Option<ItemKind>,
    /// Forced-choice option texts, one per label.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    /// Third-person situation phrase for forced-choice V1 behavior items
    /// ("plans to go somewhere").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    /// Second-person descriptions of each option for forced-choice V2.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub second_person_options: Vec<String>,
}

impl Item {
    pub fn is_reverse(&self) -> bool {
        self.reverse.unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub id: String,
    pub name: String,
    pub expected_items: usize,
    pub low_pole: String,
    pub high_pole: String,
}

/// Instruction text shown for each rewritten form.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantInstructions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v2: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v3: Option<String>,
}

impl VariantInstructions {
    pub fn get(&self, variant: VariantId) -> Option<&str> {
        match variant {
            VariantId::Original => None,
            VariantId::V1 => self.v1.as_deref(),
            VariantId::V2 => self.v2.as_deref(),
            VariantId::V3 => self.v3.as_deref(),
        }
    }
}

/// Optional replacements for the built-in per-variant anchor tables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantAnchors {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v1: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v2: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v3: Option<Vec<String>>,
}

impl VariantAnchors {
    pub fn get(&self, variant: VariantId) -> Option<&[String]> {
        match variant {
            VariantId::Original => None,
            VariantId::V1 => self.v1.as_deref(),
            VariantId::V2 => self.v2.as_deref(),
            VariantId::V3 => self.v3.as_deref(),
        }
    }

    fn is_empty(&self) -> bool {
        self.v1.is_none() && self.v2.is_none() && self.v3.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scale {
    pub id: String,
    pub title: String,
    pub version: String,
    pub instructions: String,
    pub option_set: OptionSet,
    #[serde(default)]
    pub variant_instructions: VariantInstructions,
    #[serde(default, skip_serializing_if = "VariantAnchors::is_empty")]
    pub variant_anchors: VariantAnchors,
    pub dimensions: Vec<Dimension>,
    pub items: Vec<Item>,
}

impl Scale {
    pub fn kind(&self) -> OptionKind {
        self.option_set.kind
    }

    pub fn dimension(&self, id: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.id == id)
    }

    pub fn items_in<'a>(&'a self, dimension: &'a str) -> impl Iterator<Item = &'a Item> + 'a {
        self.items.iter().filter(move |i| i.dimension == dimension)
    }

    pub fn item(&self, index: usize) -> Option<&Item> {
        self.items.iter().find(|i| i.index == index)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scale serializes to TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self, ScaleError> {
        let scale: Scale =
            toml::from_str(text).map_err(|e| ScaleError::Parse(e.to_string()))?;
        let violations = validate_scale(&scale);
        if violations.is_empty() {
            Ok(scale)
        } else {
            Err(ScaleError::Validation(violations))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScaleError> {
        std::fs::write(path.as_ref(), self.to_toml())
            .map_err(|e| ScaleError::Io(format!("{}: {e}", path.as_ref().display())))
    }
}

/// A broken structural rule, with the location it was found at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub location: String,
    pub message: String,
}

impl Violation {
    fn new(rule: &str, location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            rule: rule.to_string(),
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.rule, self.location, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("failed to read scale file: {0}")]
    Io(String),
    #[error("malformed scale file: {0}")]
    Parse(String),
    #[error("invalid scale: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
}

impl ScaleError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ScaleError::Validation(v) => v,
            _ => &[],
        }
    }
}

pub fn load_scale(path: impl AsRef<Path>) -> Result<Scale, ScaleError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScaleError::Io(format!("{}: {e}", path.display())))?;
    Scale::from_toml(&text)
}

/// Collects every structural violation in `scale`; an empty list means valid.
pub fn validate_scale(scale: &Scale) -> Vec<Violation> {
    let mut out = Vec::new();
    let opts = &scale.option_set;
    let kind = opts.kind;

    if opts.labels.len() != kind.cardinality() {
        out.push(Violation::new(
            "option cardinality",
            "option_set",
            format!(
                "{kind} option set needs {} labels, found {}",
                kind.cardinality(),
                opts.labels.len()
            ),
        ));
    }
    let mut seen = BTreeSet::new();
    for label in &opts.labels {
        if !seen.insert(label.as_str()) {
            out.push(Violation::new(
                "option labels unique",
                "option_set",
                format!("label {label:?} repeated"),
            ));
        }
    }
    if opts.anchors.len() != opts.labels.len() {
        out.push(Violation::new(
            "option anchors",
            "option_set",
            format!(
                "{} anchors for {} labels",
                opts.anchors.len(),
                opts.labels.len()
            ),
        ));
    }
    for (variant, anchors) in [
        (VariantId::V1, &scale.variant_anchors.v1),
        (VariantId::V2, &scale.variant_anchors.v2),
        (VariantId::V3, &scale.variant_anchors.v3),
    ] {
        if let Some(a) = anchors {
            if a.len() != opts.labels.len() {
                out.push(Violation::new(
                    "option anchors",
                    format!("variant_anchors.{variant}"),
                    format!("{} anchors for {} labels", a.len(), opts.labels.len()),
                ));
            }
        }
    }

    let mut dim_ids = BTreeSet::new();
    for d in &scale.dimensions {
        if !dim_ids.insert(d.id.as_str()) {
            out.push(Violation::new(
                "dimension unique",
                format!("dimension {}", d.id),
                "dimension id declared twice",
            ));
        }
    }

    let mut index_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for item in &scale.items {
        let loc = format!("item {}", item.index);
        let count = index_counts.entry(item.index).or_default();
        *count += 1;
        if *count > 1 {
            out.push(Violation::new(
                "item index unique",
                loc.clone(),
                "index appears more than once",
            ));
        }
        if item.index == 0 {
            out.push(Violation::new("item index", loc.clone(), "indices are 1-based"));
        }
        if item.stem.trim().is_empty() {
            out.push(Violation::new("item stem", loc.clone(), "empty stem"));
        }
        if !dim_ids.contains(item.dimension.as_str()) {
            out.push(Violation::new(
                "item dimension",
                loc.clone(),
                format!("unknown dimension {:?}", item.dimension),
            ));
        }
        match (kind, item.reverse.is_some(), item.pole_key.is_some()) {
            (OptionKind::Likert, true, false) | (OptionKind::ForcedChoice, false, true) => {}
            (_, true, true) => out.push(Violation::new(
                "item keying",
                loc.clone(),
                "both reverse and pole_key are set",
            )),
            (OptionKind::Likert, _, _) => out.push(Violation::new(
                "item keying",
                loc.clone(),
                "likert items need `reverse` and no `pole_key`",
            )),
            (OptionKind::ForcedChoice, _, _) => out.push(Violation::new(
                "item keying",
                loc.clone(),
                "forced-choice items need `pole_key` and no `reverse`",
            )),
        }
        if let Some(key) = &item.pole_key {
            if kind == OptionKind::ForcedChoice && !opts.labels.contains(key) {
                out.push(Violation::new(
                    "item pole key",
                    loc.clone(),
                    format!("pole_key {key:?} is not an option label"),
                ));
            }
        }
        if kind == OptionKind::Likert && item.kind_tag.is_some() {
            out.push(Violation::new(
                "item kind tag",
                loc.clone(),
                "kind_tag only applies to forced-choice items",
            ));
        }
        match kind {
            OptionKind::ForcedChoice if item.options.len() != opts.labels.len() => {
                out.push(Violation::new(
                    "item options",
                    loc.clone(),
                    format!(
                        "{} option texts for {} labels",
                        item.options.len(),
                        opts.labels.len()
                    ),
                ))
            }
            OptionKind::Likert if !item.options.is_empty() => out.push(Violation::new(
                "item options",
                loc.clone(),
                "likert items take the scale-level option set",
            )),
            _ => {}
        }
        if !item.second_person_options.is_empty()
            && item.second_person_options.len() != opts.labels.len()
        {
            out.push(Violation::new(
                "item options",
                loc.clone(),
                "second_person_options must give one text per label",
            ));
        }
        if let Some(desc) = &item.descriptor {
            if desc.trim().is_empty() {
                out.push(Violation::new("item descriptor", loc.clone(), "empty descriptor"));
            } else if !item.stem.contains(desc.as_str()) {
                out.push(Violation::new(
                    "item descriptor",
                    loc.clone(),
                    format!("descriptor {desc:?} does not occur in the stem"),
                ));
            }
        }
        if let Some(word) = &item.frequency_word {
            if word.trim().is_empty() || !item.stem.contains(word.as_str()) {
                out.push(Violation::new(
                    "item frequency word",
                    loc.clone(),
                    format!("frequency word {word:?} does not occur in the stem"),
                ));
            }
        }
        if let Some(subject) = &item.subject {
            if subject.is_empty() || !item.stem.starts_with(subject.as_str()) {
                out.push(Violation::new(
                    "item subject",
                    loc.clone(),
                    format!("subject {subject:?} does not start the stem"),
                ));
            }
        }
    }

    for d in &scale.dimensions {
        let actual = scale.items.iter().filter(|i| i.dimension == d.id).count();
        if actual != d.expected_items {
            out.push(Violation::new(
                "dimension item count",
                format!("dimension {}", d.id),
                format!(
                    "dimension {} declares {} items but lists {actual}",
                    d.id, d.expected_items
                ),
            ));
        }
    }
    out
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bfi_shaped_scale_is_valid() {
        let s = likert_scale(&[("E", 12), ("A", 12), ("C", 12), ("N", 12), ("O", 12)]);
        assert!(validate_scale(&s).is_empty());
        assert_eq!(s.items.len(), 60);
        assert_eq!(s.dimensions.len(), 5);
    }

    #[test]
    fn mbti_shaped_scale_is_valid() {
        let s = forced_scale(&[("EI", 21), ("SN", 27), ("TF", 23), ("JP", 22)]);
        assert_eq!(validate_scale(&s), vec![]);
        assert_eq!(s.items.len(), 93);
    }

    #[test]
    fn four_label_likert_is_rejected() {
        let mut s = likert_scale(&[("E", 2)]);
        s.option_set.labels.pop();
        s.option_set.anchors.pop();
        let err = Scale::from_toml(&s.to_toml()).unwrap_err();
        assert!(err.violations().iter().any(|v| v.rule == "option cardinality"));
    }

    #[test]
    fn short_dimension_is_named() {
        let mut s = likert_scale(&[("E", 21)]);
        s.items.pop();
        let v = validate_scale(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "dimension item count");
        assert!(v[0].location.contains('E'));
    }

    #[test]
    fn both_keys_is_one_violation() {
        let mut s = likert_scale(&[("E", 3)]);
        s.items[1].pole_key = Some("1".into());
        let v = validate_scale(&s);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, "item keying");
        assert_eq!(v[0].location, "item 2");
    }

    #[test]
    fn duplicate_indices_one_violation_each() {
        let mut s = likert_scale(&[("E", 12)]);
        for (i, item) in s.items.iter_mut().enumerate() {
            // indices 1,1,1,2,2,3,...
            item.index = [1, 1, 1, 2, 2, 3, 4, 5, 6, 6, 7, 8][i];
        }
        let indices: Vec<usize> = s.items.iter().map(|i| i.index).collect();
        let mut expected = 0;
        for (pos, idx) in indices.iter().enumerate() {
            if indices[..pos].contains(idx) {
                expected += 1;
            }
        }
        let got = validate_scale(&s)
            .into_iter()
            .filter(|v| v.rule == "item index unique")
            .count();
        assert_eq!(got, expected);
        assert_eq!(got, 4);
    }

    #[test]
    fn descriptor_must_come_from_stem() {
        let mut s = likert_scale(&[("E", 1)]);
        s.items[0].descriptor = Some("quiet".into());
        assert_eq!(validate_scale(&s)[0].rule, "item descriptor");
    }

    #[test]
    fn malformed_toml_is_parse_error() {
        assert!(matches!(
            Scale::from_toml("id = [unterminated"),
            Err(ScaleError::Parse(_))
        ));
    }

    #[test]
    fn item_order_survives_round_trip() {
        let mut s = likert_scale(&[("E", 4), ("A", 4)]);
        s.items.reverse();
        let back = Scale::from_toml(&s.to_toml()).unwrap();
        let order: Vec<usize> = back.items.iter().map(|i| i.index).collect();
        assert_eq!(order, vec![8, 7, 6, 5, 4, 3, 2, 1]);
    }

    proptest! {
        #[test]
        fn toml_round_trip_is_exact(
            stems in proptest::collection::vec("[ -~\u{4e00}-\u{4e20}\"'\\\\]{1,40}", 6),
            title in "[ -~\n\t]{0,30}",
            reverse in proptest::collection::vec(any::<bool>(), 6),
        ) {
            let mut s = likert_scale(&[("E", 3), ("N", 3)]);
            s.title = title;
            for ((item, stem), r) in s.items.iter_mut().zip(stems).zip(reverse) {
                item.descriptor = None;
                item.stem = format!("I {stem}");
                item.reverse = Some(r);
            }
            let text = s.to_toml();
            let back = Scale::from_toml(&text).unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(back.to_toml(), text);
        }
    }
}
