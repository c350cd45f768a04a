use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Numeric,
    ExactText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub gold_answer: String,
    pub task_kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_difficulty: Option<f64>,
    /// Synthetic tier label, used only for per-tier reporting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<String>,
}

impl DatasetRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("field `id` is empty".into());
        }
        if self.gold_answer.trim().is_empty() {
            return Err("field `gold_answer` is empty".into());
        }
        if let Some(d) = self.true_difficulty {
            if !(d > 0.0 && d < 1.0) {
                return Err(format!("field `true_difficulty` must lie in (0, 1), got {d}"));
            }
        }
        Ok(())
    }
}

/// Parse line-delimited JSON; blank lines are skipped and errors carry
/// 1-based line numbers.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Dataset {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: DatasetRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        record.validate().map_err(err)?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn dataset_to_jsonl(records: &[DatasetRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    crate::io::write_atomic(path, dataset_to_jsonl(records)?.as_bytes())
}

/// Seeded shuffle, then the first `round(n · train / (train + test))`
/// records form the training split.
pub fn split_train_test(
    records: &[DatasetRecord],
    ratio: (usize, usize),
    seed: u64,
) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>)> {
    let (a, b) = ratio;
    if a + b == 0 {
        return Err(Error::contract("split ratio has no parts"));
    }
    if records.is_empty() {
        return Err(Error::contract("cannot split an empty dataset"));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (records.len() as f64 * a as f64 / (a + b) as f64).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}
