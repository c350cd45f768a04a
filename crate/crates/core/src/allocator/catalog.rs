use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{parse_operator_profiles, Embedder, EmbeddingVector, OperatorProfile};
use crate::error::{Error, Result};

pub const BUILTIN_OPERATORS: &str = include_str!("../../assets/operators.json");

/// Collaboration protocols an operator can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolId {
    Cot,
    Debate,
    SelfConsistency,
    SelfRefine,
    Ensemble,
    Testing,
    React,
}

impl ProtocolId {
    pub const ALL: [ProtocolId; 7] = [
        ProtocolId::Cot,
        ProtocolId::Debate,
        ProtocolId::SelfConsistency,
        ProtocolId::SelfRefine,
        ProtocolId::Ensemble,
        ProtocolId::Testing,
        ProtocolId::React,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolId::Cot => "cot",
            ProtocolId::Debate => "debate",
            ProtocolId::SelfConsistency => "self_consistency",
            ProtocolId::SelfRefine => "self_refine",
            ProtocolId::Ensemble => "ensemble",
            ProtocolId::Testing => "testing",
            ProtocolId::React => "react",
        }
    }
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolId {
    type Err = Error;

    /// Accepts protocol ids and common operator names, ignoring case and
    /// punctuation: `CoT`, `LLM-Debate`, `self_consistency`, `ReAct`, ...
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Ok(match key.as_str() {
            "cot" | "chainofthought" => ProtocolId::Cot,
            "debate" | "llmdebate" => ProtocolId::Debate,
            "selfconsistency" | "sc" => ProtocolId::SelfConsistency,
            "selfrefine" | "refine" | "review" => ProtocolId::SelfRefine,
            "ensemble" => ProtocolId::Ensemble,
            "testing" | "test" => ProtocolId::Testing,
            "react" => ProtocolId::React,
            _ => return Err(Error::contract(format!("unknown protocol `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    pub name: String,
    pub protocol: ProtocolId,
    pub profile: OperatorProfile,
    pub embedding: EmbeddingVector,
}

/// The ordered set of operators the allocator chooses from.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorCatalog {
    operators: Vec<OperatorSpec>,
}

impl OperatorCatalog {
    /// Embeds every profile once. Operator names select the protocol; an
    /// optional `@suffix` (`CoT@fast`) allows several operators per protocol.
    pub fn from_profiles(profiles: Vec<OperatorProfile>, embedder: &dyn Embedder) -> Result<Self> {
        let mut operators = Vec::with_capacity(profiles.len());
        for profile in profiles {
            let name = profile.operator_name.clone();
            if operators.iter().any(|o: &OperatorSpec| o.name == name) {
                return Err(Error::contract(format!("duplicate operator `{name}`")));
            }
            let protocol: ProtocolId = name.split('@').next().unwrap_or_default().parse()?;
            let embedding = embedder.embed(&profile.embedding_text())?;
            operators.push(OperatorSpec {
                name,
                protocol,
                profile,
                embedding,
            });
        }
        Self::new(operators)
    }

    pub fn new(operators: Vec<OperatorSpec>) -> Result<Self> {
        if operators.is_empty() {
            return Err(Error::contract("operator catalog is empty"));
        }
        let dim = operators[0].embedding.dim();
        if operators.iter().any(|o| o.embedding.dim() != dim) {
            return Err(Error::contract("operator embeddings differ in dimension"));
        }
        for (i, o) in operators.iter().enumerate() {
            if operators[..i].iter().any(|p| p.name == o.name) {
                return Err(Error::contract(format!("duplicate operator `{}`", o.name)));
            }
        }
        Ok(Self { operators })
    }

    pub fn builtin(embedder: &dyn Embedder) -> Result<Self> {
        Self::from_profiles(parse_operator_profiles(BUILTIN_OPERATORS)?, embedder)
    }

    pub fn load(path: &Path, embedder: &dyn Embedder) -> Result<Self> {
        Self::from_profiles(crate::embedding::load_operator_profiles(path)?, embedder)
    }

    /// Keep only the named operators, in the given order.
    pub fn subset(&self, names: &[&str]) -> Result<Self> {
        let ops = names
            .iter()
            .map(|n| {
                self.index_of(n)
                    .map(|i| self.operators[i].clone())
                    .ok_or_else(|| Error::contract(format!("no operator `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ops)
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn get(&self, i: usize) -> &OperatorSpec {
        &self.operators[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &OperatorSpec> {
        self.operators.iter()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.operators.iter().position(|o| o.name == name)
    }

    pub fn dim(&self) -> usize {
        self.operators[0].embedding.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;

    #[test]
    fn builtin_catalog_covers_every_protocol() {
        let cat = OperatorCatalog::builtin(&HashingEmbedder::default()).unwrap();
        assert_eq!(cat.len(), 7);
        for p in ProtocolId::ALL {
            assert!(cat.iter().any(|o| o.protocol == p), "{p} missing");
        }
    }

    #[test]
    fn protocol_names_parse() {
        assert_eq!("LLM-Debate".parse::<ProtocolId>().unwrap(), ProtocolId::Debate);
        assert_eq!("self_consistency".parse::<ProtocolId>().unwrap(), ProtocolId::SelfConsistency);
        assert!("Teleport".parse::<ProtocolId>().is_err());
    }

    #[test]
    fn suffixed_names_share_a_protocol() {
        let text = r#"{"CoT@a": {"description": "a", "interface": "a()"},
                       "CoT@b": {"description": "b", "interface": "b()"}}"#;
        let cat = OperatorCatalog::from_profiles(
            parse_operator_profiles(text).unwrap(),
            &HashingEmbedder::new(16, 0),
        )
        .unwrap();
        assert!(cat.iter().all(|o| o.protocol == ProtocolId::Cot));
    }
}
