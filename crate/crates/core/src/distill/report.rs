use serde::{Deserialize, Serialize};

use super::DistillError;

/// One training epoch. Metrics are absent when undefined on a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub gen_loss: f64,
    pub distill_loss: Option<f64>,
    pub disc_loss: Option<f64>,
    pub disc_accuracy: Option<f64>,
    pub train_metric: Option<f64>,
    pub val_metric: Option<f64>,
    pub test_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub metric: String,
    pub mode: String,
    pub gen_steps: usize,
    pub disc_steps: usize,
    pub params_student: usize,
    pub params_teacher: Option<usize>,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub summary: FinalRecord,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn final_test(&self) -> Option<f64> {
        self.last().and_then(|r| r.test_metric)
    }

    /// Epoch with the highest validation metric; the earliest wins ties.
    pub fn best_val(&self) -> Option<&EpochRecord> {
        let mut best: Option<&EpochRecord> = None;
        for r in &self.epochs {
            if let Some(v) = r.val_metric {
                if best.and_then(|b| b.val_metric).is_none_or(|bv| v > bv) {
                    best = Some(r);
                }
            }
        }
        best
    }

    /// One JSON object per epoch followed by the summary record.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r).expect("epoch records serialize"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.summary).expect("summary serializes"));
        out.push('\n');
        out
    }

    pub fn from_json_lines(text: &str) -> Result<Self, DistillError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let (last, body) = lines
            .split_last()
            .ok_or_else(|| DistillError::Contract("empty report".into()))?;
        let parse_err = |e: serde_json::Error| DistillError::Contract(format!("bad report line: {e}"));
        let epochs = body
            .iter()
            .map(|l| serde_json::from_str(l).map_err(parse_err))
            .collect::<Result<Vec<EpochRecord>, _>>()?;
        let summary = serde_json::from_str(last).map_err(parse_err)?;
        Ok(Self { epochs, summary })
    }
}
