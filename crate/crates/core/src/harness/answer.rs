use serde::{Deserialize, Serialize};

use super::{DatasetRecord, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerCheck {
    pub correct: u8,
    /// The prediction of a numeric task did not parse as a number.
    pub parse_failed: bool,
}

/// Strip whitespace, thousands separators and currency symbols, then parse.
pub fn parse_numeric(text: &str) -> Option<f64> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_whitespace() && !matches!(c, ',' | '$' | '€' | '£' | '¥'))
        .collect();
    let cleaned = cleaned.strip_suffix('.').unwrap_or(&cleaned);
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn numbers_match(predicted: f64, gold: f64) -> bool {
    predicted == gold || (predicted - gold).abs() <= 1e-6 * gold.abs().max(predicted.abs())
}

fn normalize_text(s: &str) -> String {
    s.trim().to_lowercase()
}

pub fn check_answer(predicted: &str, record: &DatasetRecord) -> AnswerCheck {
    match record.task_kind {
        TaskKind::Numeric => match (parse_numeric(predicted), parse_numeric(&record.gold_answer)) {
            (Some(p), Some(g)) => AnswerCheck {
                correct: numbers_match(p, g) as u8,
                parse_failed: false,
            },
            (None, _) => AnswerCheck {
                correct: 0,
                parse_failed: true,
            },
            (Some(_), None) => AnswerCheck {
                correct: 0,
                parse_failed: false,
            },
        },
        TaskKind::ExactText => AnswerCheck {
            correct: (normalize_text(predicted) == normalize_text(&record.gold_answer)) as u8,
            parse_failed: false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric(gold: &str) -> DatasetRecord {
        DatasetRecord {
            id: "x".into(),
            question: "q".into(),
            gold_answer: gold.into(),
            task_kind: TaskKind::Numeric,
            true_difficulty: None,
            tier: None,
        }
    }

    #[test]
    fn numeric_rules() {
        let r = numeric("42");
        assert_eq!(check_answer("42", &r).correct, 1);
        assert_eq!(check_answer("42.0000001", &r).correct, 1);
        assert_eq!(check_answer("43", &r).correct, 0);
        let words = check_answer("forty-two", &r);
        assert_eq!((words.correct, words.parse_failed), (0, true));
        assert_eq!(check_answer(" $1,234.50 ", &numeric("1234.5")).correct, 1);
    }

    #[test]
    fn text_rules() {
        let mut r = numeric("Paris");
        r.task_kind = TaskKind::ExactText;
        assert_eq!(check_answer("  paris ", &r).correct, 1);
        assert_eq!(check_answer("Lyon", &r).correct, 0);
    }
}
