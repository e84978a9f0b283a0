//! Deterministic simulated respondents driven by a script.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Exchange, RespondError, Respondent};

/// How a scripted respondent picks a label for an item.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum AnswerRule {
    /// Always the same label.
    Fixed { label: String },
    /// Independent draw per item from weights over the labels, in label order.
    Categorical { weights: Vec<f64> },
    /// Walks the label list, offset by run and item.
    #[default]
    Cycle,
}

/// Refusal injection. `period` refuses item i of run k exactly when
/// `(i + k) % period == 0`; `rate` refuses at random with that probability.
/// `attempts` limits refusals to the first n attempts of an item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefusalInjection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
    #[serde(default = "default_refusal_text")]
    pub text: String,
}

fn default_refusal_text() -> String {
    "I'm sorry, but as an AI I cannot answer questions about my own personality.".into()
}

/// Verbatim outputs for one item, one per attempt; the last one repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOverride {
    pub index: usize,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptSpec {
    #[serde(default)]
    pub answer: AnswerRule,
    /// Per-dimension rules, keyed by dimension id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub dimensions: BTreeMap<String, AnswerRule>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<ItemOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refusal: Option<RefusalInjection>,
    /// Scripts used instead of this one while playing a role.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub roles: BTreeMap<String, ScriptSpec>,
}

pub struct ScriptedRespondent {
    name: String,
    script: ScriptSpec,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, item: usize, attempt: u32, salt: u64) -> ChaCha8Rng {
    let s = splitmix(splitmix(splitmix(seed ^ salt) ^ item as u64) ^ u64::from(attempt));
    ChaCha8Rng::seed_from_u64(s)
}

impl ScriptedRespondent {
    pub fn new(name: impl Into<String>, script: ScriptSpec) -> Self {
        Self {
            name: name.into(),
            script,
        }
    }

    fn script_for(&self, ex: &Exchange<'_>) -> &ScriptSpec {
        ex.role
            .and_then(|r| self.script.roles.get(r.as_str()))
            .unwrap_or(&self.script)
    }
}

impl Respondent for ScriptedRespondent {
    fn identity(&self) -> String {
        self.name.clone()
    }

    fn respond(&self, ex: &Exchange<'_>) -> Result<String, RespondError> {
        let script = self.script_for(ex);
        let seed = ex.seed.unwrap_or(ex.run_index as u64);

        if let Some(o) = script.overrides.iter().find(|o| o.index == ex.item_index) {
            if let Some(last) = o.outputs.last() {
                let pick = o.outputs.get(ex.attempt as usize - 1).unwrap_or(last);
                return Ok(pick.clone());
            }
        }

        if let Some(inj) = &script.refusal {
            let within_attempts = inj.attempts.is_none_or(|n| ex.attempt <= n);
            let periodic = inj
                .period
                .is_some_and(|p| p > 0 && (ex.item_index + ex.run_index).is_multiple_of(p));
            let random = inj.rate.is_some_and(|rate| {
                stream(seed, ex.item_index, 0, 0x05EF_05A1).gen::<f64>() < rate
            });
            if within_attempts && (periodic || random) {
                return Ok(inj.text.clone());
            }
        }

        let rule = script
            .dimensions
            .get(ex.dimension)
            .unwrap_or(&script.answer);
        let labels = ex.labels;
        let label = match rule {
            AnswerRule::Fixed { label } => label.clone(),
            AnswerRule::Cycle => labels[(ex.run_index + ex.item_index) % labels.len()].clone(),
            AnswerRule::Categorical { weights } => {
                let total: f64 = weights.iter().take(labels.len()).sum();
                let mut rng = stream(seed, ex.item_index, ex.attempt, 0xCA7E);
                let mut u = rng.gen::<f64>() * total;
                let mut chosen = labels.len() - 1;
                for (i, w) in weights.iter().take(labels.len()).enumerate() {
                    if u < *w {
                        chosen = i;
                        break;
                    }
                    u -= w;
                }
                labels[chosen].clone()
            }
        };
        Ok(label)
    }
}
