//! Standardized prompt assembly: one item per exchange.

use crate::variant::{RenderedItem, RenderedScale};

pub const ANSWER_DIRECTIVE: &str = "Choose one answer from the following options and reply only with the option number, without additional content.";

const SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptEnvelope {
    pub role_instruction: Option<String>,
    pub answer_directive: String,
    pub instructions: String,
    pub item_text: String,
    pub option_block: String,
}

impl PromptEnvelope {
    pub fn for_item(scale: &RenderedScale, item: &RenderedItem, role_instruction: Option<&str>) -> Self {
        Self {
            role_instruction: role_instruction.map(str::to_string),
            answer_directive: ANSWER_DIRECTIVE.to_string(),
            instructions: scale.instructions.clone(),
            item_text: item.stem.clone(),
            option_block: option_block(&item.labels, &item.anchors),
        }
    }
}

/// One "label. anchor" line per option.
pub fn option_block(labels: &[String], anchors: &[String]) -> String {
    labels
        .iter()
        .zip(anchors)
        .map(|(l, a)| format!("{l}. {a}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Role preamble (if any), instructions, item, options, answer directive,
/// separated by blank lines.
pub fn build_prompt(envelope: &PromptEnvelope) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(5);
    if let Some(role) = envelope.role_instruction.as_deref().filter(|r| !r.is_empty()) {
        parts.push(role);
    }
    if !envelope.instructions.is_empty() {
        parts.push(&envelope.instructions);
    }
    parts.push(&envelope.item_text);
    parts.push(&envelope.option_block);
    parts.push(&envelope.answer_directive);
    parts.join(SEPARATOR)
}
