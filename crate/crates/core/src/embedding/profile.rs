use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prompt used offline to generate operator profiles from operator code.
pub const PROFILE_PROMPT: &str = include_str!("../../assets/operator_profile_prompt.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorProfile {
    #[serde(skip)]
    pub operator_name: String,
    pub description: String,
    pub interface: String,
}

impl OperatorProfile {
    /// The text that gets embedded for this operator.
    pub fn embedding_text(&self) -> String {
        format!("{}\n{}", self.description, self.interface)
    }
}

/// Parse the `name → {description, interface}` profile map, keeping file order.
pub fn parse_operator_profiles(text: &str) -> Result<Vec<OperatorProfile>> {
    let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)?;
    let mut out = Vec::with_capacity(map.len());
    for (name, value) in map {
        let mut profile: OperatorProfile = serde_json::from_value(value)?;
        if profile.description.trim().is_empty() {
            return Err(Error::contract(format!(
                "operator `{name}` has an empty description"
            )));
        }
        profile.operator_name = name;
        out.push(profile);
    }
    if out.is_empty() {
        return Err(Error::contract("operator profile file is empty"));
    }
    Ok(out)
}

pub fn load_operator_profiles(path: &Path) -> Result<Vec<OperatorProfile>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_operator_profiles(&text)
}
