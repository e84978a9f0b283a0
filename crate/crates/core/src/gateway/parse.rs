//! Maps a free-text reply onto an option label.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStatus {
    Answered,
    Refusal,
    InvalidOption,
    Unparseable,
    /// The run was aborted before this item could be asked.
    NotAdministered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub status: AnswerStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub raw_text: String,
    pub attempts: u32,
}

impl ParsedAnswer {
    pub fn is_answered(&self) -> bool {
        self.status == AnswerStatus::Answered
    }
}

/// Case-insensitive phrases that mark a reply as a refusal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefusalLexicon {
    phrases: Vec<String>,
}

const DEFAULT_REFUSALS: &[&str] = &[
    "i cannot",
    "i can't",
    "i can not",
    "i'm sorry",
    "i am sorry",
    "i'm unable",
    "i am unable",
    "unable to answer",
    "cannot answer",
    "can't answer",
    "as an ai",
    "as a language model",
    "i don't have personal",
    "i do not have personal",
    "i prefer not to",
    "i decline",
    "无法回答",
    "无法作答",
    "抱歉",
    "作为一个人工智能",
    "作为ai",
];

impl Default for RefusalLexicon {
    fn default() -> Self {
        Self::new(DEFAULT_REFUSALS.iter().copied())
    }
}

impl RefusalLexicon {
    pub fn new<S: AsRef<str>>(phrases: impl IntoIterator<Item = S>) -> Self {
        Self {
            phrases: phrases
                .into_iter()
                .map(|p| p.as_ref().trim().to_lowercase())
                .filter(|p| !p.is_empty())
                .collect(),
        }
    }

    /// One phrase per line; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self::from_text(&std::fs::read_to_string(path)?))
    }

    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.phrases.iter().any(|p| lower.contains(p.as_str()))
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }
}

fn strip_punct(s: &str) -> &str {
    s.trim_matches(|c: char| !c.is_alphanumeric())
}

fn tokens(s: &str) -> impl Iterator<Item = &str> {
    s.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LabelShape {
    Numeric,
    Letter,
    Other,
}

fn label_shape(labels: &[String]) -> LabelShape {
    if labels.iter().all(|l| !l.is_empty() && l.chars().all(|c| c.is_ascii_digit())) {
        LabelShape::Numeric
    } else if labels
        .iter()
        .all(|l| l.len() == 1 && l.chars().all(|c| c.is_ascii_uppercase()))
    {
        LabelShape::Letter
    } else {
        LabelShape::Other
    }
}

fn looks_like_label(token: &str, shape: LabelShape) -> bool {
    match shape {
        LabelShape::Numeric => token.chars().all(|c| c.is_ascii_digit()),
        // "I" is the pronoun far more often than an option letter.
        LabelShape::Letter => token.len() == 1 && token != "I" && token.chars().all(|c| c.is_ascii_uppercase()),
        LabelShape::Other => false,
    }
}

/// Classifies a reply. Rules, first match wins: the bare label (possibly
/// wrapped in punctuation); more than one distinct label mentioned is
/// unparseable; a label prefixing the first token; the full anchor text; a
/// refusal phrase; a label-shaped token outside the set; otherwise
/// unparseable.
pub fn parse_response(
    raw: &str,
    labels: &[String],
    anchors: &[String],
    lexicon: &RefusalLexicon,
) -> ParsedAnswer {
    let answer = |status, label: Option<&String>| ParsedAnswer {
        status,
        label: label.cloned(),
        raw_text: raw.to_string(),
        attempts: 1,
    };
    let core = strip_punct(raw);

    if let Some(l) = labels.iter().find(|l| l.as_str() == core) {
        return answer(AnswerStatus::Answered, Some(l));
    }
    if let Some(l) = labels.iter().find(|l| l.eq_ignore_ascii_case(core)) {
        return answer(AnswerStatus::Answered, Some(l));
    }

    let mentioned: BTreeSet<&str> = tokens(raw)
        .filter(|t| labels.iter().any(|l| l == t))
        .collect();
    if mentioned.len() > 1 {
        return answer(AnswerStatus::Unparseable, None);
    }

    if let Some(first) = raw.split_whitespace().next() {
        let first = first.trim_start_matches(|c: char| !c.is_alphanumeric());
        let prefixed: Vec<&String> = labels
            .iter()
            .filter(|l| {
                first.starts_with(l.as_str())
                    && first[l.len()..]
                        .chars()
                        .next()
                        .is_none_or(|c| !c.is_alphanumeric())
            })
            .collect();
        if let [only] = prefixed.as_slice() {
            return answer(AnswerStatus::Answered, Some(only));
        }
    }

    if !core.is_empty() {
        if let Some(pos) = anchors
            .iter()
            .position(|a| strip_punct(a).to_lowercase() == core.to_lowercase())
        {
            if let Some(l) = labels.get(pos) {
                return answer(AnswerStatus::Answered, Some(l));
            }
        }
    }

    if lexicon.matches(raw) {
        return answer(AnswerStatus::Refusal, None);
    }

    let shape = label_shape(labels);
    if tokens(raw).any(|t| looks_like_label(t, shape) && !labels.iter().any(|l| l == t)) {
        return answer(AnswerStatus::InvalidOption, None);
    }
    answer(AnswerStatus::Unparseable, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn likert() -> (Vec<String>, Vec<String>) {
        (
            (1..=5).map(|i| i.to_string()).collect(),
            ["Strongly Disagree", "Disagree", "Neutral", "Agree", "Strongly Agree"]
                .map(String::from)
                .to_vec(),
        )
    }

    fn forced() -> (Vec<String>, Vec<String>) {
        (
            vec!["A".into(), "B".into()],
            vec!["More similar to A".into(), "More similar to B".into()],
        )
    }

    fn parse(raw: &str, (labels, anchors): &(Vec<String>, Vec<String>)) -> ParsedAnswer {
        parse_response(raw, labels, anchors, &RefusalLexicon::default())
    }

    #[test]
    fn bare_label() {
        let p = parse("3", &likert());
        assert_eq!(p.status, AnswerStatus::Answered);
        assert_eq!(p.label.as_deref(), Some("3"));
        assert_eq!(parse("  \"4.\"\n", &likert()).label.as_deref(), Some("4"));
        assert_eq!(parse("(b)", &forced()).label.as_deref(), Some("B"));
    }

    #[test]
    fn out_of_set_letter_is_invalid() {
        assert_eq!(parse("C", &forced()).status, AnswerStatus::InvalidOption);
        assert_eq!(parse("6", &likert()).status, AnswerStatus::InvalidOption);
    }

    #[test]
    fn two_labels_are_unparseable() {
        assert_eq!(parse("A or B, both fit me", &forced()).status, AnswerStatus::Unparseable);
        assert_eq!(parse("2 or maybe 4", &likert()).status, AnswerStatus::Unparseable);
    }

    #[test]
    fn label_prefix_of_first_token() {
        let p = parse("4: Agree, mostly", &likert());
        assert_eq!(p.label.as_deref(), Some("4"));
        let p = parse("A. More similar to A", &forced());
        assert_eq!(p.label.as_deref(), Some("A"));
    }

    #[test]
    fn anchor_text_answers() {
        assert_eq!(parse("Neutral.", &likert()).label.as_deref(), Some("3"));
        assert_eq!(parse("strongly agree", &likert()).label.as_deref(), Some("5"));
    }

    #[test]
    fn refusals() {
        let p = parse("I'm sorry, but as an AI I have no personality.", &likert());
        assert_eq!(p.status, AnswerStatus::Refusal);
        assert_eq!(p.raw_text, "I'm sorry, but as an AI I have no personality.");
        let custom = RefusalLexicon::from_text("# comment\nnope\n");
        let (l, a) = likert();
        assert_eq!(parse_response("NOPE", &l, &a, &custom).status, AnswerStatus::Refusal);
    }

    #[test]
    fn plain_prose_is_unparseable() {
        assert_eq!(parse("It depends on the day.", &likert()).status, AnswerStatus::Unparseable);
        assert_eq!(parse("", &forced()).status, AnswerStatus::Unparseable);
        assert_eq!(parse("I think so", &forced()).status, AnswerStatus::Unparseable);
    }
}
