//! Role-play conditions and their instruction preambles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum RoleId {
    LinDaiyu,
    SunWukong,
    VeryIntroverted,
    VeryExtroverted,
    Custom(String),
}

impl RoleId {
    pub const BUILT_IN: [RoleId; 4] = [
        RoleId::LinDaiyu,
        RoleId::SunWukong,
        RoleId::VeryIntroverted,
        RoleId::VeryExtroverted,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            RoleId::LinDaiyu => "lin_daiyu",
            RoleId::SunWukong => "sun_wukong",
            RoleId::VeryIntroverted => "very_introverted",
            RoleId::VeryExtroverted => "very_extroverted",
            RoleId::Custom(name) => name,
        }
    }
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "lin_daiyu" => RoleId::LinDaiyu,
            "sun_wukong" => RoleId::SunWukong,
            "very_introverted" => RoleId::VeryIntroverted,
            "very_extroverted" => RoleId::VeryExtroverted,
            "" => return Err("empty role id".into()),
            other => RoleId::Custom(other.to_string()),
        })
    }
}

impl From<RoleId> for String {
    fn from(r: RoleId) -> Self {
        r.as_str().to_string()
    }
}

impl TryFrom<String> for RoleId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoleTag {
    IntrovertedPole,
    ExtrovertedPole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub role_id: RoleId,
    pub instruction_text: String,
    pub pole_tag: PoleTag,
}

impl RoleSpec {
    pub fn built_in(role: &RoleId) -> Option<RoleSpec> {
        let (text, pole) = match role {
            RoleId::LinDaiyu => (
                "Hello! Welcome to participate in this experiment! In the following process, please play the role of [Lin Daiyu]. Please try to fully integrate into the role of Lin Daiyu based on your understanding of the role, and then complete the following test as Lin Daiyu.",
                PoleTag::IntrovertedPole,
            ),
            RoleId::SunWukong => (
                "Hello! Welcome to participate in this experiment! In the following process, please play the role of [Sun Wukong]. Please try to fully integrate into the role of Sun Wukong based on your understanding of the role, and then complete the following test as Sun Wukong.",
                PoleTag::ExtrovertedPole,
            ),
            RoleId::VeryExtroverted => (
                "Hello! Welcome to participate in this experiment! In the following process, please play the role of [a very extroverted person]. Please try to fully integrate into this role based on your understanding of the role, and then complete the following test as a very extroverted person.",
                PoleTag::ExtrovertedPole,
            ),
            RoleId::VeryIntroverted => (
                "Hello! Welcome to this experiment! In the following process, please play the role of [a very introverted person]. Please try to fully integrate into this role based on your own understanding of the role, and then complete the following test as a very introverted person.",
                PoleTag::IntrovertedPole,
            ),
            RoleId::Custom(_) => return None,
        };
        Some(RoleSpec {
            role_id: role.clone(),
            instruction_text: text.to_string(),
            pole_tag: pole,
        })
    }

    pub fn all_built_in() -> Vec<RoleSpec> {
        RoleId::BUILT_IN
            .iter()
            .map(|r| RoleSpec::built_in(r).expect("built-in role"))
            .collect()
    }
}
