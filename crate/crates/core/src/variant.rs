//! Deterministic rewrites of a scale into its indirect-measurement forms.
//!
//! Likert scales have three variants (similarity to another person, accuracy
//! of a description, sentence completion). Forced-choice scales have the
//! first two, recast as an A/B pair of people or descriptions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scale::{Item, ItemKind, OptionKind, Scale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantId {
    Original,
    V1,
    V2,
    V3,
}

impl VariantId {
    pub const ALL: [VariantId; 4] = [VariantId::Original, VariantId::V1, VariantId::V2, VariantId::V3];

    pub fn applicable_to(self, kind: OptionKind) -> bool {
        !(kind == OptionKind::ForcedChoice && self == VariantId::V3)
    }

    /// Every variant defined for an option kind, original first.
    pub fn for_kind(kind: OptionKind) -> Vec<VariantId> {
        Self::ALL
            .into_iter()
            .filter(|v| v.applicable_to(kind))
            .collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VariantId::Original => "original",
            VariantId::V1 => "v1",
            VariantId::V2 => "v2",
            VariantId::V3 => "v3",
        }
    }

    /// Row label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            VariantId::Original => "Original",
            VariantId::V1 => "Variant 1",
            VariantId::V2 => "Variant 2",
            VariantId::V3 => "Variant 3",
        }
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "original" | "orig" | "o" | "v0" => Ok(VariantId::Original),
            "v1" | "1" => Ok(VariantId::V1),
            "v2" | "2" => Ok(VariantId::V2),
            "v3" | "3" => Ok(VariantId::V3),
            other => Err(format!("unknown variant {other:?} (expected original|v1|v2|v3)")),
        }
    }
}

pub const LIKERT_V1_ANCHORS: [&str; 5] = [
    "Very Dissimilar",
    "Somewhat Dissimilar",
    "Neutral",
    "Somewhat Similar",
    "Very Similar",
];
pub const LIKERT_V2_ANCHORS: [&str; 5] = [
    "Very Inaccurate",
    "Somewhat Inaccurate",
    "Neutral",
    "Somewhat Accurate",
    "Very Accurate",
];
pub const LIKERT_V3_ANCHORS: [&str; 5] = ["Never", "Rarely", "Occasionally", "Often", "Always"];
pub const FORCED_V1_ANCHORS: [&str; 2] = ["More similar to A", "More similar to B"];
pub const FORCED_V2_ANCHORS: [&str; 2] = ["A is more accurate", "B is more accurate"];

/// The sentence-completion blank.
pub const BLANK: &str = "_";

fn default_anchors(kind: OptionKind, variant: VariantId) -> Option<&'static [&'static str]> {
    match (kind, variant) {
        (OptionKind::Likert, VariantId::V1) => Some(&LIKERT_V1_ANCHORS),
        (OptionKind::Likert, VariantId::V2) => Some(&LIKERT_V2_ANCHORS),
        (OptionKind::Likert, VariantId::V3) => Some(&LIKERT_V3_ANCHORS),
        (OptionKind::ForcedChoice, VariantId::V1) => Some(&FORCED_V1_ANCHORS),
        (OptionKind::ForcedChoice, VariantId::V2) => Some(&FORCED_V2_ANCHORS),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("variant {variant} is not defined for {kind} scales")]
    UnsupportedVariant { variant: VariantId, kind: OptionKind },
    #[error("item {index} has no descriptor")]
    MissingDescriptor { index: usize },
    #[error("item {index} has no second-person form")]
    MissingPersonSwitch { index: usize },
    #[error("item {index} has no kind_tag")]
    MissingKindTag { index: usize },
    #[error("item {index} has no situation context")]
    MissingContext { index: usize },
    #[error("item {index} needs exactly two option texts")]
    MissingOptions { index: usize },
    #[error("scale has no instructions for variant {0}")]
    MissingInstructions(VariantId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedItem {
    pub source_index: usize,
    pub dimension: String,
    pub stem: String,
    pub labels: Vec<String>,
    pub anchors: Vec<String>,
}

/// A scale after variant transformation, in administration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedScale {
    pub scale_id: String,
    pub scale_version: String,
    pub variant: VariantId,
    pub kind: OptionKind,
    pub instructions: String,
    pub items: Vec<RenderedItem>,
}

impl RenderedScale {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("rendered scale serializes to TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

pub fn render_scale(scale: &Scale, variant: VariantId) -> Result<RenderedScale, RenderError> {
    let kind = scale.kind();
    if !variant.applicable_to(kind) {
        return Err(RenderError::UnsupportedVariant { variant, kind });
    }
    let instructions = match variant {
        VariantId::Original => scale.instructions.clone(),
        v => scale
            .variant_instructions
            .get(v)
            .ok_or(RenderError::MissingInstructions(v))?
            .to_string(),
    };
    let anchors = scale.variant_anchors.get(variant);
    let items = scale
        .items
        .iter()
        .map(|item| match kind {
            OptionKind::Likert => render_likert_item(scale, item, variant, anchors),
            OptionKind::ForcedChoice => render_forced_item(scale, item, variant, anchors),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RenderedScale {
        scale_id: scale.id.clone(),
        scale_version: scale.version.clone(),
        variant,
        kind,
        instructions,
        items,
    })
}

/// Renders every variant defined for the scale's option kind.
pub fn render_all(scale: &Scale) -> Result<Vec<RenderedScale>, RenderError> {
    VariantId::for_kind(scale.kind())
        .into_iter()
        .map(|v| render_scale(scale, v))
        .collect()
}

fn anchors_for(
    scale: &Scale,
    variant: VariantId,
    overrides: Option<&[String]>,
) -> Vec<String> {
    if let Some(a) = overrides {
        return a.to_vec();
    }
    match default_anchors(scale.kind(), variant) {
        Some(a) => a.iter().map(|s| s.to_string()).collect(),
        None => scale.option_set.anchors.clone(),
    }
}

pub fn render_likert_item(
    scale: &Scale,
    item: &Item,
    variant: VariantId,
    anchor_override: Option<&[String]>,
) -> Result<RenderedItem, RenderError> {
    let stem = match variant {
        VariantId::Original => item.stem.clone(),
        VariantId::V1 => {
            let descriptor = item
                .descriptor
                .as_deref()
                .ok_or(RenderError::MissingDescriptor { index: item.index })?;
            format!(
                "If there is a person who is {descriptor}, how similar do you think you are to that person?"
            )
        }
        VariantId::V2 => {
            let described = item
                .second_person
                .as_deref()
                .ok_or(RenderError::MissingPersonSwitch { index: item.index })?;
            format!("If I describe you as '{described},' do you think it is accurate?")
        }
        VariantId::V3 => sentence_completion(item),
    };
    Ok(RenderedItem {
        source_index: item.index,
        dimension: item.dimension.clone(),
        stem,
        labels: scale.option_set.labels.clone(),
        anchors: anchors_for(scale, variant, anchor_override),
    })
}

/// Replaces the frequency word with the blank, or inserts the blank after
/// the subject when the item has none.
fn sentence_completion(item: &Item) -> String {
    if let Some(word) = item.frequency_word.as_deref().filter(|w| !w.is_empty()) {
        if let Some(pos) = find_word(&item.stem, word) {
            let mut out = String::with_capacity(item.stem.len());
            out.push_str(&item.stem[..pos]);
            out.push_str(BLANK);
            out.push_str(&item.stem[pos + word.len()..]);
            return out;
        }
    }
    let (subject, rest) = match item.subject.as_deref() {
        Some(s) if item.stem.starts_with(s) => (s, &item.stem[s.len()..]),
        _ => match item.stem.find(char::is_whitespace) {
            Some(p) => (&item.stem[..p], &item.stem[p..]),
            None => (item.stem.as_str(), ""),
        },
    };
    let rest = rest.trim_start();
    if rest.is_empty() {
        format!("{subject} {BLANK}")
    } else {
        format!("{subject} {BLANK} {rest}")
    }
}

/// First occurrence of `word` not embedded in a longer alphanumeric run;
/// falls back to the first plain occurrence.
fn find_word(haystack: &str, word: &str) -> Option<usize> {
    let bounded = haystack.match_indices(word).find(|(pos, _)| {
        let before = haystack[..*pos].chars().next_back();
        let after = haystack[pos + word.len()..].chars().next();
        let is_word = |c: Option<char>| c.is_some_and(|c| c.is_ascii_alphanumeric());
        !is_word(before) && !is_word(after)
    });
    bounded.map(|(p, _)| p).or_else(|| haystack.find(word))
}

/// Option text as embedded mid-sentence: first letter lowercased, trailing
/// full stops removed.
pub fn embedded_phrase(text: &str) -> String {
    let trimmed = text.trim().trim_end_matches(['.', '。']);
    let mut chars = trimmed.chars();
    match chars.next() {
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn render_forced_item(
    scale: &Scale,
    item: &Item,
    variant: VariantId,
    anchor_override: Option<&[String]>,
) -> Result<RenderedItem, RenderError> {
    if item.options.len() != 2 {
        return Err(RenderError::MissingOptions { index: item.index });
    }
    let (stem, anchors) = match variant {
        VariantId::Original => (item.stem.clone(), item.options.clone()),
        VariantId::V3 => {
            return Err(RenderError::UnsupportedVariant {
                variant,
                kind: OptionKind::ForcedChoice,
            })
        }
        VariantId::V1 | VariantId::V2 => {
            let tag = item
                .kind_tag
                .ok_or(RenderError::MissingKindTag { index: item.index })?;
            let a = embedded_phrase(&item.options[0]);
            let b = embedded_phrase(&item.options[1]);
            let stem = if variant == VariantId::V1 {
                match tag {
                    ItemKind::Behavior => {
                        let ctx = item
                            .context
                            .as_deref()
                            .ok_or(RenderError::MissingContext { index: item.index })?;
                        format!(
                            "There are two people. When A {ctx}, they {a}; when B {ctx}, they {b}. Which person do you resemble more?"
                        )
                    }
                    ItemKind::WordPreference => format!(
                        "There are two people. A is more inclined to prefer words like \"{a}\"; B is more inclined to prefer words like \"{b}.\" Which person do you resemble more?"
                    ),
                }
            } else {
                let (da, db) = match (tag, item.second_person_options.as_slice()) {
                    (_, [da, db]) => (da.clone(), db.clone()),
                    (ItemKind::WordPreference, _) => (
                        format!("You are more likely to prefer the word '{a}'"),
                        format!("You are more likely to prefer the word '{b}'"),
                    ),
                    (ItemKind::Behavior, _) => {
                        return Err(RenderError::MissingPersonSwitch { index: item.index })
                    }
                };
                format!(
                    "There are two descriptions about you: one is \u{201c}{da}\u{201d}; the other is \u{201c}{db}.\u{201d} Which description is more accurate?"
                )
            };
            (stem, anchors_for(scale, variant, anchor_override))
        }
    };
    Ok(RenderedItem {
        source_index: item.index,
        dimension: item.dimension.clone(),
        stem,
        labels: scale.option_set.labels.clone(),
        anchors,
    })
}
