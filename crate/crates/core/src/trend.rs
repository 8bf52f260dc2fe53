//! Ground-truth trend labels for predict segments, and scoring of direction
//! predictions against them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetRecord;
use crate::market::OhlcvBar;
use crate::sampler::RecordId;
use crate::Stage;

pub const DEFAULT_EPSILON: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Flat,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Up, Direction::Down, Direction::Flat];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Flat => "flat",
        }
    }

    fn index(self) -> usize {
        match self {
            Direction::Up => 0,
            Direction::Down => 1,
            Direction::Flat => 2,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = TrendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            "flat" => Ok(Direction::Flat),
            other => Err(TrendError::BadDirection(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrendError {
    #[error("predict segment is empty")]
    EmptySegment,
    #[error("epsilon must be finite and >= 0, got {0}")]
    InvalidEpsilon(f64),
    #[error("{predictions} predictions for {truths} labels")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("unknown direction {0:?} (want up, down or flat)")]
    BadDirection(String),
    #[error("predictions file {path}: {reason}")]
    PredictionsFile { path: String, reason: String },
}

/// Direction and fractional close-to-close change of a predict segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrendLabel {
    pub direction: Direction,
    /// `(last close - first close) / first close`, exact.
    pub magnitude: Ratio<i64>,
}

impl TrendLabel {
    pub fn magnitude_f64(&self) -> f64 {
        self.magnitude.to_f64().unwrap_or(f64::NAN)
    }
}

#[derive(Serialize, Deserialize)]
struct TrendLabelRepr {
    direction: Direction,
    magnitude: f64,
    magnitude_exact: String,
}

impl Serialize for TrendLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TrendLabelRepr {
            direction: self.direction,
            magnitude: self.magnitude_f64(),
            magnitude_exact: self.magnitude.to_string(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TrendLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = TrendLabelRepr::deserialize(deserializer)?;
        let magnitude = repr
            .magnitude_exact
            .parse::<Ratio<i64>>()
            .map_err(|e| serde::de::Error::custom(format!("magnitude_exact: {e}")))?;
        Ok(TrendLabel {
            direction: repr.direction,
            magnitude,
        })
    }
}

/// Labels a segment up when its close-to-close change exceeds `epsilon`, down
/// when it falls below `-epsilon`, flat otherwise. Comparisons are exact.
pub fn trend_label(predict_bars: &[OhlcvBar], epsilon: f64) -> Result<TrendLabel, TrendError> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(TrendError::InvalidEpsilon(epsilon));
    }
    let (first, last) = match (predict_bars.first(), predict_bars.last()) {
        (Some(f), Some(l)) => (f.close.ticks(), l.close.ticks()),
        _ => return Err(TrendError::EmptySegment),
    };
    let magnitude = Ratio::new(last - first, first);
    let exact = BigRational::new(BigInt::from(last - first), BigInt::from(first));
    let eps = BigRational::from_float(epsilon).unwrap_or_else(BigRational::zero);
    let direction = if exact > eps {
        Direction::Up
    } else if exact < -eps {
        Direction::Down
    } else {
        Direction::Flat
    };
    Ok(TrendLabel {
        direction,
        magnitude,
    })
}

/// Truth-by-prediction counts. Rows are truth classes (up, down, flat); the
/// fourth column counts abstentions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub total: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub abstentions: u64,
    pub truth_counts: BTreeMap<Direction, u64>,
    pub confusion: ConfusionMatrix,
}

/// Scores predicted directions against ground truth. Missing predictions count
/// as abstentions and are scored wrong.
pub fn score_directions(
    predictions: &[Option<Direction>],
    truth: &[TrendLabel],
) -> Result<TrendReport, TrendError> {
    if predictions.len() != truth.len() {
        return Err(TrendError::LengthMismatch {
            predictions: predictions.len(),
            truths: truth.len(),
        });
    }
    let mut counts = vec![vec![0u64; 4]; 3];
    let mut correct = 0;
    let mut abstentions = 0;
    let mut truth_counts: BTreeMap<Direction, u64> = Direction::ALL.iter().map(|d| (*d, 0)).collect();
    for (pred, label) in predictions.iter().zip(truth) {
        let row = label.direction.index();
        *truth_counts.entry(label.direction).or_default() += 1;
        match pred {
            Some(d) => {
                counts[row][d.index()] += 1;
                if *d == label.direction {
                    correct += 1;
                }
            }
            None => {
                counts[row][3] += 1;
                abstentions += 1;
            }
        }
    }
    let total = truth.len() as u64;
    Ok(TrendReport {
        total,
        correct,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        abstentions,
        truth_counts,
        confusion: ConfusionMatrix {
            rows: Direction::ALL.iter().map(|d| d.to_string()).collect(),
            columns: ["up", "down", "flat", "abstain"].map(String::from).to_vec(),
            counts,
        },
    })
}

/// Scores predictions against the trend labels of every instruction record in
/// `records`. Records without a prediction count as abstentions.
pub fn score_corpus(
    records: &[DatasetRecord],
    predictions: &BTreeMap<RecordId, Option<Direction>>,
) -> Result<TrendReport, TrendError> {
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for r in records.iter().filter(|r| r.stage == Stage::Instruct) {
        if let Some(label) = &r.meta.trend_label {
            preds.push(predictions.get(&r.id).copied().flatten());
            truth.push(label.clone());
        }
    }
    score_directions(&preds, &truth)
}

/// Reads a `record_id,direction` file. A header row is optional; an empty
/// direction (or `none`/`abstain`) records an explicit abstention.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<RecordId, Option<Direction>>, TrendError> {
    let err = |reason: String| TrendError::PredictionsFile {
        path: path.display().to_string(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| err(e.to_string()))?;
        let id = row.get(0).unwrap_or("");
        let dir = row.get(1).unwrap_or("");
        if i == 0 && id.eq_ignore_ascii_case("record_id") {
            continue;
        }
        if id.is_empty() {
            continue;
        }
        let direction = match dir.to_ascii_lowercase().as_str() {
            "" | "none" | "abstain" => None,
            other => Some(other.parse().map_err(|e: TrendError| err(format!("row {}: {e}", i + 1)))?),
        };
        out.insert(RecordId::from_string(id), direction);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Price;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn bars(closes: &[i64]) -> Vec<OhlcvBar> {
        let d0 = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
        closes
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let p = Price::from_ticks(t);
                OhlcvBar::new(d0 + chrono::Days::new(i as u64), p, p, p, p, 1).unwrap()
            })
            .collect()
    }

    #[test]
    fn clear_rise() {
        let l = trend_label(&bars(&[100_000, 110_000, 120_000]), 0.005).unwrap();
        assert_eq!(l.direction, Direction::Up);
        assert_eq!(l.magnitude, Ratio::new(1, 5));
        assert!((l.magnitude_f64() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn unchanged_is_flat() {
        let l = trend_label(&bars(&[100_000, 100_000]), 0.005).unwrap();
        assert_eq!(l.direction, Direction::Flat);
        assert_eq!(l.magnitude, Ratio::from_integer(0));
    }

    #[test]
    fn band_edges() {
        // +0.5% exactly is inside the band.
        assert_eq!(trend_label(&bars(&[100_000, 100_500]), 0.005).unwrap().direction, Direction::Flat);
        assert_eq!(trend_label(&bars(&[100_000, 100_501]), 0.005).unwrap().direction, Direction::Up);
        assert_eq!(trend_label(&bars(&[100_000, 99_499]), 0.005).unwrap().direction, Direction::Down);
        assert_eq!(trend_label(&bars(&[100_000, 100_001]), 0.0).unwrap().direction, Direction::Up);
    }

    #[test]
    fn errors() {
        assert!(matches!(trend_label(&[], 0.01), Err(TrendError::EmptySegment)));
        assert!(matches!(trend_label(&bars(&[1]), -0.1), Err(TrendError::InvalidEpsilon(_))));
        assert!(matches!(
            score_directions(&[None], &[]),
            Err(TrendError::LengthMismatch { predictions: 1, truths: 0 })
        ));
    }

    #[test]
    fn perfect_and_inverted_scores() {
        let truth: Vec<TrendLabel> = [[100, 120], [120, 100], [100, 130]]
            .iter()
            .map(|c| trend_label(&bars(c), 0.005).unwrap())
            .collect();
        let perfect: Vec<_> = truth.iter().map(|t| Some(t.direction)).collect();
        let r = score_directions(&perfect, &truth).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion.counts, vec![vec![2, 0, 0, 0], vec![0, 1, 0, 0], vec![0, 0, 0, 0]]);

        let inverted: Vec<_> = truth
            .iter()
            .map(|t| Some(if t.direction == Direction::Up { Direction::Down } else { Direction::Up }))
            .collect();
        assert_eq!(score_directions(&inverted, &truth).unwrap().accuracy, 0.0);

        let r = score_directions(&[None, Some(Direction::Down), None], &truth).unwrap();
        assert_eq!((r.correct, r.abstentions), (1, 2));
        assert_eq!(r.confusion.counts[0][3], 2);
    }

    #[test]
    fn label_json_round_trip() {
        let l = trend_label(&bars(&[30_000, 31_000]), 0.005).unwrap();
        let json = serde_json::to_string(&l).unwrap();
        assert_eq!(json, r#"{"direction":"up","magnitude":0.03333333333333333,"magnitude_exact":"1/30"}"#);
        assert_eq!(serde_json::from_str::<TrendLabel>(&json).unwrap(), l);
    }

    #[test]
    fn predictions_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "record_id,direction\na1,up\na2, Down \na3,\na4,abstain\n").unwrap();
        let p = read_predictions(&path).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p[&RecordId::from_string("a2")], Some(Direction::Down));
        assert_eq!(p[&RecordId::from_string("a3")], None);
        std::fs::write(&path, "a1,sideways\n").unwrap();
        assert!(read_predictions(&path).is_err());
    }

    proptest! {
        #[test]
        fn sign_matches_brute_force(
            closes in proptest::collection::vec(1i64..5_000_000, 1..30),
            eps_bp in 0u32..300,
        ) {
            let eps = eps_bp as f64 / 10_000.0;
            let l = trend_label(&bars(&closes), eps).unwrap();
            let first = closes[0] as f64;
            let change = (closes[closes.len() - 1] as f64 - first) / first;
            if change > eps + 1e-12 {
                prop_assert_eq!(l.direction, Direction::Up);
            } else if change < -eps - 1e-12 {
                prop_assert_eq!(l.direction, Direction::Down);
            } else if (change.abs() - eps).abs() > 1e-12 {
                prop_assert_eq!(l.direction, Direction::Flat);
            }
        }

        #[test]
        fn scale_invariant(
            closes in proptest::collection::vec(1i64..1_000_000, 1..30),
            factor in 1i64..500,
        ) {
            let base = trend_label(&bars(&closes), 0.005).unwrap();
            let scaled: Vec<i64> = closes.iter().map(|c| c * factor).collect();
            prop_assert_eq!(trend_label(&bars(&scaled), 0.005).unwrap(), base);
        }

        #[test]
        fn confusion_rows_sum_to_truth(
            pairs in proptest::collection::vec((0usize..3, 0usize..4), 0..200),
        ) {
            let truth: Vec<TrendLabel> = pairs
                .iter()
                .map(|(t, _)| TrendLabel { direction: Direction::ALL[*t], magnitude: Ratio::from_integer(0) })
                .collect();
            let preds: Vec<Option<Direction>> = pairs.iter().map(|(_, p)| Direction::ALL.get(*p).copied()).collect();
            let r = score_directions(&preds, &truth).unwrap();
            for (i, d) in Direction::ALL.iter().enumerate() {
                prop_assert_eq!(r.confusion.counts[i].iter().sum::<u64>(), r.truth_counts[d]);
            }
        }
    }
}
