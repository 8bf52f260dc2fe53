//! Word-count statistics over written records.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{DatasetRecord, Role, IMAGE_PLACEHOLDER};
use crate::Stage;

/// Name of the counting rule, recorded in the manifest.
pub const WORD_COUNT_RULE: &str = "whitespace-tokens+cjk-chars";
pub const QUANTILE_METHOD: &str = "nearest-rank";

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xAC00..=0xD7AF    // hangul
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F)
}

/// Whitespace-separated tokens, except that every CJK character counts as one
/// word on its own. The image placeholder is not a word.
pub fn count_words(text: &str) -> u64 {
    let mut n = 0;
    for token in text.split_whitespace() {
        if token == IMAGE_PLACEHOLDER {
            continue;
        }
        let token = token.replace(IMAGE_PLACEHOLDER, " ");
        for part in token.split_whitespace() {
            let mut in_run = false;
            for c in part.chars() {
                if is_cjk(c) {
                    n += 1;
                    in_run = false;
                } else if !in_run {
                    n += 1;
                    in_run = true;
                }
            }
        }
    }
    n
}

/// The `ceil(p * n / 100)`-th smallest value (1-based, clamped to at least 1).
/// `sorted` must be ascending and non-empty.
pub fn nearest_rank(sorted: &[u64], percent: u32) -> u64 {
    let n = sorted.len() as u64;
    let rank = (percent as u64 * n).div_ceil(100).max(1);
    sorted[(rank - 1) as usize]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub q5: u64,
    pub q95: u64,
}

impl Summary {
    pub fn of(values: &[u64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let total: u128 = sorted.iter().map(|&v| v as u128).sum();
        Some(Summary {
            count: sorted.len(),
            mean: total as f64 / sorted.len() as f64,
            q5: nearest_rank(&sorted, 5),
            q95: nearest_rank(&sorted, 95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: Stage,
    pub records: usize,
    /// Turns per dialog; reported for instruction records only.
    pub turns: Option<Summary>,
    /// Words per question (pretraining: the instruction).
    pub question: Summary,
    /// Words per answer.
    pub answer: Summary,
    /// Words per record, all messages together.
    pub dialog: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub word_count_rule: String,
    pub quantile_method: String,
    pub stages: Vec<StageStats>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("no records to summarize")]
    EmptyCorpus,
    #[error("record {id} has an empty or unpaired conversation")]
    BadRecord { id: String },
}

fn stage_stats(stage: Stage, records: &[&DatasetRecord]) -> Result<StageStats, StatsError> {
    let mut turns = Vec::new();
    let mut questions = Vec::new();
    let mut answers = Vec::new();
    let mut dialogs = Vec::new();
    for r in records {
        let mut dialog = 0;
        let mut t = 0;
        for m in &r.conversations {
            let w = count_words(&m.value);
            dialog += w;
            match m.from {
                Role::Human => {
                    questions.push(w);
                    t += 1;
                }
                Role::Gpt => answers.push(w),
            }
        }
        if t == 0 {
            return Err(StatsError::BadRecord { id: r.id.to_string() });
        }
        turns.push(t);
        dialogs.push(dialog);
    }
    let bad = || StatsError::BadRecord {
        id: records.first().map(|r| r.id.to_string()).unwrap_or_default(),
    };
    Ok(StageStats {
        stage,
        records: records.len(),
        turns: if stage == Stage::Instruct { Summary::of(&turns) } else { None },
        question: Summary::of(&questions).ok_or_else(bad)?,
        answer: Summary::of(&answers).ok_or_else(bad)?,
        dialog: Summary::of(&dialogs).ok_or_else(bad)?,
    })
}

/// Summarizes each stage that has at least one record.
pub fn compute_stats(records: &[DatasetRecord]) -> Result<DatasetStats, StatsError> {
    if records.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    let mut stages = Vec::new();
    for stage in [Stage::Pretrain, Stage::Instruct] {
        let subset: Vec<&DatasetRecord> = records.iter().filter(|r| r.stage == stage).collect();
        if !subset.is_empty() {
            stages.push(stage_stats(stage, &subset)?);
        }
    }
    Ok(DatasetStats {
        word_count_rule: WORD_COUNT_RULE.into(),
        quantile_method: QUANTILE_METHOD.into(),
        stages,
    })
}

fn stage_label(stage: Stage) -> &'static str {
    match stage {
        Stage::Pretrain => "pre-train",
        Stage::Instruct => "instruction",
    }
}

fn rows(s: &StageStats) -> Vec<(&'static str, &Summary)> {
    let mut rows = Vec::with_capacity(4);
    if let Some(t) = &s.turns {
        rows.push(("# Turns", t));
    }
    rows.push(("# Question", &s.question));
    rows.push(("# Answer", &s.answer));
    rows.push(("# Dialog", &s.dialog));
    rows
}

impl DatasetStats {
    /// Fixed-width text table: stage, measure, mean, q-5%, q-95%.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:<11} {:>10} {:>8} {:>8}", "", "", "mean", "q-5%", "q-95%");
        for s in &self.stages {
            let _ = writeln!(out, "{}", "-".repeat(53));
            for (i, (label, sum)) in rows(s).into_iter().enumerate() {
                let stage = if i == 0 { stage_label(s.stage) } else { "" };
                let _ = writeln!(
                    out,
                    "{stage:<12} {label:<11} {:>10.2} {:>8} {:>8}",
                    sum.mean, sum.q5, sum.q95
                );
            }
        }
        out
    }

    /// The same table as comma-separated values with a header row.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("stage,measure,records,mean,q-5%,q-95%\n");
        for s in &self.stages {
            for (label, sum) in rows(s) {
                let _ = writeln!(
                    out,
                    "{},{label},{},{:.6},{},{}",
                    stage_label(s.stage),
                    s.records,
                    sum.mean,
                    sum.q5,
                    sum.q95
                );
            }
        }
        out
    }
}
