use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Tensors of one module: shapes plus the flat row-major concatenation of
/// all values, each value a shortest round-trip decimal string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleParams {
    pub shapes: Vec<[usize; 2]>,
    pub values: Vec<String>,
}

impl ModuleParams {
    pub fn from_matrices(matrices: Vec<&Matrix>) -> Self {
        let shapes = matrices.iter().map(|m| [m.rows(), m.cols()]).collect();
        let values = matrices
            .iter()
            .flat_map(|m| m.as_slice().iter().map(|v| format!("{v:?}")))
            .collect();
        Self { shapes, values }
    }

    pub fn to_matrices(&self) -> Result<Vec<Matrix>> {
        let expected: usize = self.shapes.iter().map(|[r, c]| r * c).sum();
        if expected != self.values.len() {
            return Err(Error::contract(format!(
                "checkpoint shapes need {expected} values, found {}",
                self.values.len()
            )));
        }
        let mut values = self.values.iter();
        self.shapes
            .iter()
            .map(|&[r, c]| {
                let data = values
                    .by_ref()
                    .take(r * c)
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|_| Error::contract(format!("bad checkpoint value `{s}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Matrix::from_vec(r, c, data)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub modules: BTreeMap<String, ModuleParams>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(seed: u64) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            modules: BTreeMap::new(),
            seed,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, params: ModuleParams) {
        self.modules.insert(name.into(), params);
    }

    pub fn module(&self, name: &str) -> Result<&ModuleParams> {
        self.modules
            .get(name)
            .ok_or_else(|| Error::contract(format!("checkpoint has no module `{name}`")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::contract(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn values_round_trip_exactly(values in prop::collection::vec(-1e300f64..1e300, 1..40)) {
            let n = values.len();
            let m = Matrix::from_vec(1, n, values).unwrap();
            let mut ckpt = Checkpoint::new(9);
            ckpt.insert("m", ModuleParams::from_matrices(vec![&m]));
            let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
            let restored = back.module("m").unwrap().to_matrices().unwrap();
            prop_assert_eq!(&restored[0], &m);
        }
    }

    #[test]
    fn subnormal_and_tiny_values_survive() {
        let m = Matrix::from_vec(1, 3, vec![5e-324, -0.0, 0.1 + 0.2]).unwrap();
        let p = ModuleParams::from_matrices(vec![&m]);
        let back = p.to_matrices().unwrap();
        assert_eq!(back[0].as_slice()[0].to_bits(), m.as_slice()[0].to_bits());
        assert_eq!(back[0].as_slice()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back[0].as_slice()[2], 0.1 + 0.2);
    }

    #[test]
    fn rejects_wrong_version_and_counts() {
        let bad = r#"{"version":2,"modules":{},"seed":0}"#;
        assert!(Checkpoint::from_json(bad).is_err());
        let p = ModuleParams {
            shapes: vec![[2, 2]],
            values: vec!["1".into()],
        };
        assert!(p.to_matrices().is_err());
    }
}
