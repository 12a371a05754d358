//! Per-frame semantic scores and the diagonal quality weights built from them.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Spread below which the softmax output counts as constant.
const CONSTANT_SPREAD: f64 = 1e-12;

/// Calibrated value assigned to every frame when scores are constant.
pub const CONSTANT_CALIBRATED: f64 = 0.5;

/// Raw per-frame relevance scores, optionally with the keyword matrix they
/// were aggregated from.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticScores {
    pub raw: Vec<f64>,
    pub keywords: Option<Vec<String>>,
    pub per_keyword: Option<Vec<Vec<f64>>>,
}

impl SemanticScores {
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = raw.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::input(format!("raw score {v} of frame {i} is outside [0, 1]")));
        }
        Ok(Self {
            raw,
            keywords: None,
            per_keyword: None,
        })
    }

    pub fn from_keywords(keywords: Vec<String>, per_keyword: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(row) = per_keyword.iter().position(|r| r.len() != keywords.len()) {
            return Err(Error::input(format!(
                "frame {row} has {} keyword scores, expected {}",
                per_keyword[row].len(),
                keywords.len()
            )));
        }
        let raw = aggregate_keyword_scores(&per_keyword)?;
        Ok(Self {
            raw,
            keywords: Some(keywords),
            per_keyword: Some(per_keyword),
        })
    }

    /// Every frame equally relevant; the stand-in scorer when no embedding
    /// model output is available.
    pub fn uniform(n: usize) -> Self {
        Self {
            raw: vec![1.0; n],
            keywords: None,
            per_keyword: None,
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Softmax at temperature `T` followed by min-max rescaling to `[0, 1]`.
///
/// Constant softmax output maps every frame to [`CONSTANT_CALIBRATED`].
pub fn calibrate_scores(raw: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::input("no semantic scores to calibrate"));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::input(format!("temperature must be > 0, got {temperature}")));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("semantic scores must be finite"));
    }
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let soft: Vec<f64> = exps.iter().map(|e| e / sum).collect();

    let lo = soft.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = soft.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    if spread < CONSTANT_SPREAD {
        return Ok(vec![CONSTANT_CALIBRATED; raw.len()]);
    }
    Ok(soft.iter().map(|s| ((s - lo) / spread).clamp(0.0, 1.0)).collect())
}

/// Diagonal of the quality matrix, `qᵢ = (1 − α) + α·s̃ᵢ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityWeights {
    pub q: Vec<f64>,
    pub alpha: f64,
}

impl QualityWeights {
    pub fn uniform(n: usize) -> Self {
        Self {
            q: vec![1.0; n],
            alpha: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

pub fn quality_weights(calibrated: &[f64], alpha: f64) -> Result<QualityWeights> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::input(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if let Some(v) = calibrated.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::input(format!("calibrated score {v} is outside [0, 1]")));
    }
    Ok(QualityWeights {
        q: calibrated.iter().map(|s| (1.0 - alpha) + alpha * s).collect(),
        alpha,
    })
}

/// Collapses a frame × keyword matrix to one score per frame by taking the
/// best-matching keyword, clamped to `[0, 1]`.
pub fn aggregate_keyword_scores(per_keyword: &[Vec<f64>]) -> Result<Vec<f64>> {
    if per_keyword.is_empty() {
        return Err(Error::input("keyword score matrix has no frames"));
    }
    per_keyword
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row.is_empty() {
                return Err(Error::input(format!("frame {i} has no keyword scores")));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("frame {i} has a non-finite keyword score")));
            }
            Ok(row.iter().copied().fold(f64::NEG_INFINITY, f64::max).clamp(0.0, 1.0))
        })
        .collect()
}
