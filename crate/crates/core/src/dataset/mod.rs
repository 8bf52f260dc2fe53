//! Corpus records in the LLaVA conversation layout, the corpus files and their manifest.

mod stats;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use stats::{
    compute_stats, count_words, nearest_rank, DatasetStats, StageStats, StatsError, Summary, QUANTILE_METHOD,
    WORD_COUNT_RULE,
};

use crate::market::SymbolId;
use crate::parse::DialogTurn;
use crate::render::RenderedChart;
use crate::sampler::{ChartSpec, CorpusPlan, RecordId};
use crate::trend::TrendLabel;
use crate::Stage;

/// Token that marks where the image goes in the first human message.
pub const IMAGE_PLACEHOLDER: &str = "<image>";
pub const PRETRAIN_FILE: &str = "pretrain.json";
pub const INSTRUCT_FILE: &str = "instruct.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_DIR: &str = "images";
pub const REJECTS_DIR: &str = "rejects";
pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Human,
    /// The answering side; LLaVA tooling expects the literal `gpt`.
    Gpt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub from: Role,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub symbol_id: SymbolId,
    pub window_start: usize,
    pub start_date: NaiveDate,
    pub prompt_end_date: NaiveDate,
    pub end_date: NaiveDate,
    pub prompt_len: usize,
    pub total_len: usize,
    pub chart: String,
    pub chart_spec: ChartSpec,
    pub image_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trend_label: Option<TrendLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: RecordId,
    /// Path of the PNG relative to the corpus directory.
    pub image: String,
    pub conversations: Vec<Message>,
    pub stage: Stage,
    pub meta: RecordMeta,
}

pub fn image_path_for(id: &RecordId) -> String {
    format!("{IMAGES_DIR}/{id}.png")
}

/// Validated annotation content for one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordContent {
    Pretrain { instruction: String, answer: String },
    Instruct { turns: Vec<DialogTurn>, trend_label: TrendLabel },
}

/// Everything needed to build one record. Ids must agree.
#[derive(Debug, Clone)]
pub struct RecordParts<'a> {
    pub plan: &'a CorpusPlan,
    pub chart: &'a RenderedChart,
    /// Id carried by the annotation response.
    pub annotation_id: &'a RecordId,
    /// First date, last prompt date and last date of the window.
    pub dates: (NaiveDate, NaiveDate, NaiveDate),
    pub content: RecordContent,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssembleError {
    #[error("record {expected}: part belongs to {found}")]
    IdMismatch { expected: RecordId, found: String },
    #[error("record {id}: {reason}")]
    InvariantViolation { id: RecordId, reason: String },
}

/// Builds a record: the image placeholder opens the first human message,
/// followed by the instruction (pretraining) or the first question.
pub fn assemble_record(parts: RecordParts<'_>, turn_band: (usize, usize)) -> Result<DatasetRecord, AssembleError> {
    let plan = parts.plan;
    let id = &plan.id;
    if parts.annotation_id != id {
        return Err(AssembleError::IdMismatch {
            expected: id.clone(),
            found: parts.annotation_id.to_string(),
        });
    }
    let chart_id = RecordId::derive(&plan.window, parts.chart.spec.seed);
    if parts.chart.spec != plan.spec || &chart_id != id {
        return Err(AssembleError::IdMismatch {
            expected: id.clone(),
            found: format!("chart {chart_id}"),
        });
    }
    let invariant = |reason: String| AssembleError::InvariantViolation { id: id.clone(), reason };

    let (stage, pairs, trend_label) = match parts.content {
        RecordContent::Pretrain { instruction, answer } => (Stage::Pretrain, vec![(instruction, answer)], None),
        RecordContent::Instruct { turns, trend_label } => {
            let (min, max) = turn_band;
            if turns.len() < min || turns.len() > max {
                return Err(invariant(format!("{} turns, expected {min}..={max}", turns.len())));
            }
            let pairs = turns.into_iter().map(|t| (t.question, t.answer)).collect();
            (Stage::Instruct, pairs, Some(trend_label))
        }
    };
    let mut conversations = Vec::with_capacity(pairs.len() * 2);
    for (i, (q, a)) in pairs.into_iter().enumerate() {
        if q.trim().is_empty() || a.trim().is_empty() {
            return Err(invariant(format!("turn {i} has an empty message")));
        }
        if q.contains(IMAGE_PLACEHOLDER) || a.contains(IMAGE_PLACEHOLDER) {
            return Err(invariant(format!("turn {i} contains the image placeholder")));
        }
        let q = if i == 0 { format!("{IMAGE_PLACEHOLDER}\n{q}") } else { q };
        conversations.push(Message { from: Role::Human, value: q });
        conversations.push(Message { from: Role::Gpt, value: a });
    }
    let (start_date, prompt_end_date, end_date) = parts.dates;
    Ok(DatasetRecord {
        id: id.clone(),
        image: image_path_for(id),
        conversations,
        stage,
        meta: RecordMeta {
            symbol_id: plan.window.symbol_id.clone(),
            window_start: plan.window.start,
            start_date,
            prompt_end_date,
            end_date,
            prompt_len: plan.window.prompt_len,
            total_len: plan.window.total_len,
            chart: plan.spec.summary(),
            chart_spec: plan.spec.clone(),
            image_sha256: parts.chart.content_hash.clone(),
            trend_label,
        },
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub planned: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub skipped: usize,
    pub pretrain: usize,
    pub instruct: usize,
}

/// Run metadata and accounting, rewritten after every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub generator: String,
    pub seed: u64,
    /// SHA-256 of the effective configuration (canonical JSON).
    pub config_sha256: String,
    pub template_version: String,
    pub template_language: String,
    pub template_hashes: BTreeMap<String, String>,
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub trend_epsilon: f64,
    pub min_turns: usize,
    pub max_turns: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub word_count_rule: String,
    pub quantile_method: String,
    pub moving_average_basis: String,
    pub price_adjustment: String,
    pub complete: bool,
    pub counts: Counts,
    /// Rejection code -> count.
    pub rejections: BTreeMap<String, usize>,
    pub planned_ids: Vec<RecordId>,
    pub accepted_ids: Vec<RecordId>,
    pub rejected_ids: Vec<RecordId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<DatasetStats>,
}

/// Why a planned record was quarantined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub id: RecordId,
    pub stage: Stage,
    pub code: String,
    pub reason: String,
    /// False when the failure was in the backend, so a rerun tries again.
    pub final_verdict: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

#[derive(Debug, Error)]
pub enum WriteError {
    #[error("record {id}: image {path} does not exist")]
    DanglingImagePath { id: RecordId, path: String },
    #[error("{path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> WriteError + '_ {
    move |source| WriteError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), WriteError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn to_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<Vec<u8>, WriteError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| WriteError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), WriteError> {
    write_atomic(path, &to_json(value, path)?)
}

pub fn write_reject(out_dir: &Path, reject: &RejectRecord) -> Result<(), WriteError> {
    write_json(&out_dir.join(REJECTS_DIR).join(format!("{}.json", reject.id)), reject)
}

/// Writes both corpus files (records partitioned by stage, order kept) and the
/// manifest. Every record's image must already exist under `out_dir`.
pub fn write_corpus(out_dir: &Path, records: &[DatasetRecord], manifest: &Manifest) -> Result<(), WriteError> {
    for r in records {
        if !out_dir.join(&r.image).is_file() {
            return Err(WriteError::DanglingImagePath {
                id: r.id.clone(),
                path: r.image.clone(),
            });
        }
    }
    let (pretrain, instruct): (Vec<&DatasetRecord>, Vec<&DatasetRecord>) =
        records.iter().partition(|r| r.stage == Stage::Pretrain);
    write_json(&out_dir.join(PRETRAIN_FILE), &pretrain)?;
    write_json(&out_dir.join(INSTRUCT_FILE), &instruct)?;
    write_json(&out_dir.join(MANIFEST_FILE), manifest)
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| LoadError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads both corpus files, pretraining records first. A missing file counts as empty.
pub fn load_records(out_dir: &Path) -> Result<Vec<DatasetRecord>, LoadError> {
    let mut records = Vec::new();
    for name in [PRETRAIN_FILE, INSTRUCT_FILE] {
        let path = out_dir.join(name);
        if path.exists() {
            records.extend(read_json::<Vec<DatasetRecord>>(&path)?);
        }
    }
    Ok(records)
}

pub fn load_manifest(out_dir: &Path) -> Result<Manifest, LoadError> {
    read_json(&out_dir.join(MANIFEST_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::render;
    use crate::sampler::{plan_corpus, seeded_rng, SamplerConfig};
    use crate::synth::random_walk_series;
    use crate::trend::trend_label;

    struct Fixture {
        plan: CorpusPlan,
        chart: RenderedChart,
        label: TrendLabel,
        dates: (NaiveDate, NaiveDate, NaiveDate),
    }

    fn fixtures(n: usize) -> Vec<Fixture> {
        let series = vec![random_walk_series("sym_ds", 200, 3)];
        let cfg = SamplerConfig::default();
        let plans = plan_corpus(&series, n, &mut seeded_rng(9), &cfg).unwrap();
        plans
            .into_iter()
            .map(|plan| {
                let w = &plan.window;
                let prompt = w.prompt_bars(&series[0]);
                let predict = w.predict_bars(&series[0]);
                let chart = render(w, prompt, &plan.spec).unwrap();
                Fixture {
                    label: trend_label(predict, 0.005).unwrap(),
                    dates: (prompt[0].date, prompt.last().unwrap().date, predict.last().unwrap().date),
                    chart,
                    plan,
                }
            })
            .collect()
    }

    fn turns(n: usize) -> Vec<DialogTurn> {
        (0..n)
            .map(|i| DialogTurn {
                question: format!("question {i}?"),
                answer: format!("answer {i}."),
            })
            .collect()
    }

    fn parts(f: &Fixture, content: RecordContent) -> RecordParts<'_> {
        RecordParts {
            plan: &f.plan,
            chart: &f.chart,
            annotation_id: &f.plan.id,
            dates: f.dates,
            content,
        }
    }

    #[test]
    fn pretrain_record_shape() {
        let f = &fixtures(1)[0];
        let r = assemble_record(
            parts(
                f,
                RecordContent::Pretrain {
                    instruction: "Describe the chart.".into(),
                    answer: "## Overview\n\nText.".into(),
                },
            ),
            (3, 7),
        )
        .unwrap();
        assert_eq!(r.conversations.len(), 2);
        assert_eq!(r.conversations[0].value, "<image>\nDescribe the chart.");
        assert_eq!(r.conversations[1].from, Role::Gpt);
        assert_eq!(r.image, format!("images/{}.png", f.plan.id));
        assert!(r.meta.trend_label.is_none());
    }

    #[test]
    fn instruct_record_alternates() {
        let f = &fixtures(1)[0];
        let r = assemble_record(
            parts(
                f,
                RecordContent::Instruct {
                    turns: turns(5),
                    trend_label: f.label.clone(),
                },
            ),
            (3, 7),
        )
        .unwrap();
        assert_eq!(r.conversations.len(), 10);
        for (i, m) in r.conversations.iter().enumerate() {
            assert_eq!(m.from, if i % 2 == 0 { Role::Human } else { Role::Gpt });
        }
        assert_eq!(r.conversations[0].value.matches(IMAGE_PLACEHOLDER).count(), 1);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains(r#""from":"human""#) && json.contains(r#""stage":"instruct""#));
        assert_eq!(serde_json::from_str::<DatasetRecord>(&json).unwrap(), r);
    }

    #[test]
    fn assemble_errors() {
        let fx = fixtures(2);
        let content = || RecordContent::Instruct {
            turns: turns(5),
            trend_label: fx[0].label.clone(),
        };
        let mut p = parts(&fx[0], content());
        p.annotation_id = &fx[1].plan.id;
        assert!(matches!(assemble_record(p, (3, 7)), Err(AssembleError::IdMismatch { .. })));
        let mut p = parts(&fx[0], content());
        p.chart = &fx[1].chart;
        assert!(matches!(assemble_record(p, (3, 7)), Err(AssembleError::IdMismatch { .. })));
        let p = parts(
            &fx[0],
            RecordContent::Instruct {
                turns: turns(2),
                trend_label: fx[0].label.clone(),
            },
        );
        assert!(matches!(
            assemble_record(p, (3, 7)),
            Err(AssembleError::InvariantViolation { .. })
        ));
        let mut t = turns(3);
        t[1].answer = "see <image>".into();
        let p = parts(
            &fx[0],
            RecordContent::Instruct {
                turns: t,
                trend_label: fx[0].label.clone(),
            },
        );
        assert!(matches!(
            assemble_record(p, (3, 7)),
            Err(AssembleError::InvariantViolation { .. })
        ));
    }

    fn manifest() -> Manifest {
        Manifest {
            format: MANIFEST_FORMAT,
            generator: "test".into(),
            seed: 1,
            config_sha256: String::new(),
            template_version: "1".into(),
            template_language: "en".into(),
            template_hashes: BTreeMap::new(),
            backend_id: "mock-v1".into(),
            model: None,
            temperature: None,
            trend_epsilon: 0.005,
            min_turns: 3,
            max_turns: 7,
            image_width: 640,
            image_height: 480,
            word_count_rule: WORD_COUNT_RULE.into(),
            quantile_method: QUANTILE_METHOD.into(),
            moving_average_basis: "close".into(),
            price_adjustment: "as-given".into(),
            complete: true,
            counts: Counts::default(),
            rejections: BTreeMap::new(),
            planned_ids: Vec::new(),
            accepted_ids: Vec::new(),
            rejected_ids: Vec::new(),
            stats: None,
        }
    }

    #[test]
    fn write_partitions_and_checks_images() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixtures(20);
        let records: Vec<DatasetRecord> = fx
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let content = if i % 2 == 0 {
                    RecordContent::Pretrain {
                        instruction: "Describe.".into(),
                        answer: "Answer.".into(),
                    }
                } else {
                    RecordContent::Instruct {
                        turns: turns(4),
                        trend_label: f.label.clone(),
                    }
                };
                assemble_record(parts(f, content), (3, 7)).unwrap()
            })
            .collect();
        for (f, r) in fx.iter().zip(&records) {
            write_atomic(&dir.path().join(&r.image), &f.chart.png_bytes).unwrap();
        }
        write_corpus(dir.path(), &records, &manifest()).unwrap();
        let pre: Vec<DatasetRecord> = read_json(&dir.path().join(PRETRAIN_FILE)).unwrap();
        let ins: Vec<DatasetRecord> = read_json(&dir.path().join(INSTRUCT_FILE)).unwrap();
        assert_eq!((pre.len(), ins.len()), (10, 10));
        assert_eq!(pre[0], records[0]);
        assert_eq!(load_manifest(dir.path()).unwrap(), manifest());

        fs::remove_file(dir.path().join(&records[3].image)).unwrap();
        match write_corpus(dir.path(), &records, &manifest()) {
            Err(WriteError::DanglingImagePath { id, .. }) => assert_eq!(id, records[3].id),
            other => panic!("expected dangling image, got {other:?}"),
        }
    }
}
