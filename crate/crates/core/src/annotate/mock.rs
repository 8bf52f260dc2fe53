//! Offline backend whose answers are computed from the k-line data in the
//! request, so parsing and trend scoring can be exercised end to end.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend};
use crate::market::OhlcvBar;
use crate::prompt::{extract_kline_blocks, AnnotationRequest};
use crate::trend::{trend_label, Direction, DEFAULT_EPSILON};
use crate::Stage;

/// The question whose answer carries the echoed direction in mock dialogs.
pub const PREDICTION_QUESTION: &str =
    "Based on the chart, which way is this stock likely to move over the coming trading days?";

/// Deterministic fault injection. Each rate is the fraction of records (chosen
/// by record id hash) whose answer is corrupted in that way.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockFaults {
    pub ticker_rate: f64,
    pub leakage_rate: f64,
    pub unpaired_rate: f64,
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    epsilon: f64,
    faults: MockFaults,
}

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend::new(DEFAULT_EPSILON)
    }
}

#[derive(Clone, Copy)]
enum Fault {
    Ticker,
    Leakage,
    Unpaired,
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

fn unit(bytes: &[u8]) -> f64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[..8]);
    (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

fn pct(from: i64, to: i64) -> f64 {
    (to - from) as f64 / from as f64 * 100.0
}

struct Summary {
    days: usize,
    change_pct: f64,
    up_days: usize,
    high_idx: usize,
    low_idx: usize,
    range_pct: f64,
    last_half_change_pct: f64,
    vol_ratio: f64,
}

fn summarize(bars: &[OhlcvBar]) -> Summary {
    let closes: Vec<i64> = bars.iter().map(|b| b.close.ticks()).collect();
    let first = closes[0];
    let last = *closes.last().unwrap();
    let high_idx = (0..bars.len()).max_by_key(|&i| (bars[i].high, std::cmp::Reverse(i))).unwrap();
    let low_idx = (0..bars.len()).min_by_key(|&i| (bars[i].low, i)).unwrap();
    let mid = bars.len() / 2;
    let half = |r: &[OhlcvBar]| r.iter().map(|b| b.volume as f64).sum::<f64>() / r.len().max(1) as f64;
    let early = half(&bars[..mid.max(1)]);
    let late = half(&bars[mid..]);
    Summary {
        days: bars.len(),
        change_pct: pct(first, last),
        up_days: bars.iter().filter(|b| b.is_up()).count(),
        high_idx,
        low_idx,
        range_pct: pct(bars[low_idx].low.ticks(), bars[high_idx].high.ticks()),
        last_half_change_pct: pct(closes[mid.min(closes.len() - 1)], last),
        vol_ratio: if early > 0.0 { late / early } else { 1.0 },
    }
}

fn tone(change_pct: f64) -> &'static str {
    if change_pct > 5.0 {
        "a clear upward trend"
    } else if change_pct > 0.5 {
        "a mild upward drift"
    } else if change_pct < -5.0 {
        "a clear downward trend"
    } else if change_pct < -0.5 {
        "a mild downward drift"
    } else {
        "a broadly sideways pattern"
    }
}

fn direction_word(d: Direction) -> &'static str {
    match d {
        Direction::Up => "upward",
        Direction::Down => "downward",
        Direction::Flat => "sideways",
    }
}

const OPENERS: [&str; 4] = [
    "## Overview",
    "## Chart summary",
    "## Price action",
    "## General picture",
];

impl MockBackend {
    pub fn new(epsilon: f64) -> Self {
        MockBackend {
            epsilon,
            faults: MockFaults::default(),
        }
    }

    pub fn with_faults(mut self, faults: MockFaults) -> Self {
        self.faults = faults;
        self
    }

    /// Which fault, if any, is injected into the answer for `record_id`.
    fn fault_for(&self, record_id: &str) -> Option<Fault> {
        let d = digest(&[b"mock-fault", record_id.as_bytes()]);
        let u = unit(&d);
        let f = &self.faults;
        if u < f.ticker_rate {
            Some(Fault::Ticker)
        } else if u < f.ticker_rate + f.leakage_rate {
            Some(Fault::Leakage)
        } else if u < f.ticker_rate + f.leakage_rate + f.unpaired_rate {
            Some(Fault::Unpaired)
        } else {
            None
        }
    }

    fn pretrain_answer(&self, record_id: &str, bars: &[OhlcvBar], fault: Option<Fault>) -> String {
        let s = summarize(bars);
        let d = digest(&[b"mock-pretrain", record_id.as_bytes()]);
        let mut out = String::new();
        let _ = writeln!(out, "{}\n", OPENERS[d[0] as usize % OPENERS.len()]);
        let _ = writeln!(
            out,
            "Across these {} trading days this stock shows {}, with the closing price moving {:+.2}% from the first session to the last.\n",
            s.days,
            tone(s.change_pct),
            s.change_pct
        );
        let _ = writeln!(out, "## Trend stages\n");
        let _ = writeln!(
            out,
            "- The peak of the period comes on day {} and the trough on day {}, a swing of {:.2}% between the two extremes.",
            s.high_idx + 1,
            s.low_idx + 1,
            s.range_pct
        );
        let _ = writeln!(
            out,
            "- Over the second half of the chart the price changes by {:+.2}%, which {} the overall move.",
            s.last_half_change_pct,
            if (s.last_half_change_pct >= 0.0) == (s.change_pct >= 0.0) {
                "reinforces"
            } else {
                "partly reverses"
            }
        );
        let _ = writeln!(
            out,
            "- {} of {} sessions finish at or above their opening price.\n",
            s.up_days, s.days
        );
        let _ = writeln!(out, "## Trading activity\n");
        let _ = write!(
            out,
            "Turnover in the later sessions is {:.2} times the earlier average, so trading interest has {}.",
            s.vol_ratio,
            if s.vol_ratio > 1.1 {
                "picked up"
            } else if s.vol_ratio < 0.9 {
                "cooled"
            } else {
                "stayed fairly steady"
            }
        );
        match fault {
            Some(Fault::Ticker) => out.push_str(" The pattern resembles stock 600519 last spring."),
            Some(Fault::Leakage) | Some(Fault::Unpaired) | None => {}
        }
        out
    }

    fn instruct_answer(
        &self,
        record_id: &str,
        prompt_bars: &[OhlcvBar],
        predict_bars: &[OhlcvBar],
        fault: Option<Fault>,
    ) -> Result<String, BackendError> {
        let s = summarize(prompt_bars);
        let label = trend_label(predict_bars, self.epsilon)
            .map_err(|e| BackendError::Rejected {
                status: 400,
                message: e.to_string(),
            })?;
        let future_pct = label.magnitude_f64() * 100.0;
        let d = digest(&[b"mock-instruct", record_id.as_bytes()]);

        let mut turns: Vec<(String, String)> = vec![
            (
                "What is the overall trend of this stock in the chart?".into(),
                format!(
                    "The chart shows {} over {} trading days, with a net change of {:+.2}% in the closing price.",
                    tone(s.change_pct),
                    s.days,
                    s.change_pct
                ),
            ),
            (
                "Where does this stock reach its highest and lowest levels?".into(),
                format!(
                    "The highest point appears on day {} and the lowest on day {}, a spread of {:.2}%.",
                    s.high_idx + 1,
                    s.low_idx + 1,
                    s.range_pct
                ),
            ),
            (
                "How does trading activity change across the chart?".into(),
                format!(
                    "Later sessions trade {:.2} times the earlier average turnover, so activity has {}.",
                    s.vol_ratio,
                    if s.vol_ratio >= 1.0 { "increased" } else { "decreased" }
                ),
            ),
            (
                "How many sessions end higher than they open?".into(),
                format!("{} of the {} sessions end at or above their opening price.", s.up_days, s.days),
            ),
            (
                "Is the recent momentum consistent with the overall move?".into(),
                format!(
                    "The second half of the chart moves {:+.2}%, which {} the overall direction.",
                    s.last_half_change_pct,
                    if (s.last_half_change_pct >= 0.0) == (s.change_pct >= 0.0) {
                        "agrees with"
                    } else {
                        "runs against"
                    }
                ),
            ),
        ];
        // Four to six turns; the prediction question always closes the dialog.
        let keep = 3 + d[0] as usize % 3;
        let offset = d[1] as usize % turns.len();
        turns.rotate_left(offset);
        turns.truncate(keep);
        let mut prediction = format!(
            "I expect this stock to move {} over the coming trading days, with the closing price changing by roughly {:+.2}%.",
            direction_word(label.direction),
            future_pct
        );
        match fault {
            Some(Fault::Ticker) => prediction.push_str(" Stock 600519 behaved the same way."),
            Some(Fault::Leakage) => prediction.push_str(" The future data confirms this."),
            Some(Fault::Unpaired) | None => {}
        }
        turns.push((PREDICTION_QUESTION.to_string(), prediction));

        let mut out = String::new();
        for (q, a) in &turns {
            out.push_str(q);
            out.push('@');
            out.push_str(a);
            out.push('@');
        }
        if let Some(Fault::Unpaired) = fault {
            out.push_str("And what about next month?");
        }
        Ok(out)
    }
}

impl ChatBackend for MockBackend {
    fn backend_id(&self) -> String {
        "mock-v1".into()
    }

    fn complete(&self, request: &AnnotationRequest) -> Result<String, BackendError> {
        let blocks = extract_kline_blocks(&request.user_content);
        let missing = || BackendError::Rejected {
            status: 400,
            message: "request carries no k-line data".into(),
        };
        let id = request.record_id.as_str();
        let fault = self.fault_for(id);
        match request.stage {
            Stage::Pretrain => {
                let bars = blocks.first().filter(|b| !b.is_empty()).ok_or_else(missing)?;
                Ok(self.pretrain_answer(id, bars, fault))
            }
            Stage::Instruct => match blocks.as_slice() {
                [prompt, predict, ..] if !prompt.is_empty() && !predict.is_empty() => {
                    self.instruct_answer(id, prompt, predict, fault)
                }
                _ => Err(missing()),
            },
        }
    }
}
