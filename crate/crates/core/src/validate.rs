//! Re-checks a written corpus: record structure, images, and manifest accounting.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{
    compute_stats, image_path_for, read_json, DatasetRecord, Manifest, Role, IMAGE_PLACEHOLDER, INSTRUCT_FILE,
    MANIFEST_FILE, PRETRAIN_FILE,
};
use crate::render::{png_dimensions, sha256_hex};
use crate::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    CorpusFile,
    DuplicateId,
    StageMismatch,
    Alternation,
    Placeholder,
    TurnCount,
    MissingTrendLabel,
    ImagePath,
    ImageIntegrity,
    Accounting,
    Stats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: CheckKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record: Option<String>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = serde_json::to_value(self.kind).ok();
        let kind = kind.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
        match &self.record {
            Some(id) => write!(f, "[{kind}] record {id}: {}", self.detail),
            None => write!(f, "[{kind}] {}", self.detail),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub records_checked: usize,
    pub images_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("no {MANIFEST_FILE} in {0}")]
    ManifestMissing(PathBuf),
    #[error("{MANIFEST_FILE} is unreadable: {0}")]
    ManifestUnreadable(String),
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn flag(&mut self, kind: CheckKind, record: Option<&str>, detail: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            record: record.map(str::to_string),
            detail: detail.into(),
        });
    }

    fn record(&mut self, r: &DatasetRecord, file_stage: Stage, manifest: &Manifest) {
        let id = Some(r.id.as_str());
        if r.stage != file_stage {
            self.flag(CheckKind::StageMismatch, id, format!("{} record in the {file_stage} file", r.stage));
        }
        let msgs = &r.conversations;
        if msgs.is_empty() {
            self.flag(CheckKind::Alternation, id, "no messages");
            return;
        }
        for (i, m) in msgs.iter().enumerate() {
            let want = if i % 2 == 0 { Role::Human } else { Role::Gpt };
            if m.from != want {
                self.flag(
                    CheckKind::Alternation,
                    id,
                    format!("message {i} is from {:?}, expected {want:?}", m.from),
                );
                break;
            }
        }
        if !msgs.len().is_multiple_of(2) {
            self.flag(CheckKind::Alternation, id, "conversation ends on a human message");
        }
        let first = msgs[0].value.matches(IMAGE_PLACEHOLDER).count();
        let rest: usize = msgs[1..].iter().map(|m| m.value.matches(IMAGE_PLACEHOLDER).count()).sum();
        if first != 1 || rest != 0 {
            self.flag(
                CheckKind::Placeholder,
                id,
                format!("{first} placeholder(s) in the first message, {rest} elsewhere"),
            );
        }
        let turns = msgs.len().div_ceil(2);
        let (min, max) = match r.stage {
            Stage::Pretrain => (1, 1),
            Stage::Instruct => (manifest.min_turns, manifest.max_turns),
        };
        if turns < min || turns > max {
            self.flag(CheckKind::TurnCount, id, format!("{turns} turns, expected {min}..={max}"));
        }
        if r.stage == Stage::Instruct && r.meta.trend_label.is_none() {
            self.flag(CheckKind::MissingTrendLabel, id, "instruction record without a trend label");
        }
    }

    /// Returns true when the image was read.
    fn image(&mut self, out_dir: &Path, r: &DatasetRecord) -> bool {
        let id = Some(r.id.as_str());
        if r.image != image_path_for(&r.id) {
            self.flag(CheckKind::ImagePath, id, format!("unexpected image path {}", r.image));
        }
        let bytes = match fs::read(out_dir.join(&r.image)) {
            Ok(b) => b,
            Err(e) => {
                self.flag(CheckKind::ImagePath, id, format!("{}: {e}", r.image));
                return false;
            }
        };
        let hash = sha256_hex(&bytes);
        if hash != r.meta.image_sha256 {
            self.flag(
                CheckKind::ImageIntegrity,
                id,
                format!("{} hashes to {hash}, record says {}", r.image, r.meta.image_sha256),
            );
        }
        match png_dimensions(&bytes) {
            Ok((w, h)) if (w, h) == (r.meta.chart_spec.width_px, r.meta.chart_spec.height_px) => {}
            Ok((w, h)) => self.flag(
                CheckKind::ImageIntegrity,
                id,
                format!(
                    "{} is {w}x{h}, spec says {}x{}",
                    r.image, r.meta.chart_spec.width_px, r.meta.chart_spec.height_px
                ),
            ),
            Err(e) => self.flag(CheckKind::ImageIntegrity, id, format!("{} does not decode: {e}", r.image)),
        }
        true
    }
}

/// Checks every record invariant, every image, the manifest accounting and the
/// recorded statistics of the corpus in `out_dir`.
pub fn validate_corpus(out_dir: &Path) -> Result<ValidationReport, ValidateError> {
    let manifest_path = out_dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(ValidateError::ManifestMissing(out_dir.to_path_buf()));
    }
    let manifest: Manifest = read_json(&manifest_path).map_err(|e| ValidateError::ManifestUnreadable(e.to_string()))?;
    let mut c = Checker { violations: Vec::new() };

    let mut records = Vec::new();
    for (file, stage) in [(PRETRAIN_FILE, Stage::Pretrain), (INSTRUCT_FILE, Stage::Instruct)] {
        match read_json::<Vec<DatasetRecord>>(&out_dir.join(file)) {
            Ok(rs) => records.extend(rs.into_iter().map(|r| (stage, r))),
            Err(e) => c.flag(CheckKind::CorpusFile, None, e.to_string()),
        }
    }

    let mut seen = HashSet::new();
    let mut images_checked = 0;
    for (stage, r) in &records {
        if !seen.insert(r.id.clone()) {
            c.flag(CheckKind::DuplicateId, Some(r.id.as_str()), "id appears more than once");
        }
        c.record(r, *stage, &manifest);
        images_checked += c.image(out_dir, r) as usize;
    }

    let listed: HashSet<_> = manifest.accepted_ids.iter().collect();
    for (_, r) in &records {
        if !listed.contains(&r.id) {
            c.flag(CheckKind::Accounting, Some(r.id.as_str()), "record is not listed as accepted in the manifest");
        }
    }
    for id in &manifest.accepted_ids {
        if !seen.contains(id) {
            c.flag(CheckKind::Accounting, Some(id.as_str()), "listed as accepted but missing from the corpus");
        }
    }
    let n = &manifest.counts;
    if n.planned != n.accepted + n.rejected + n.skipped {
        c.flag(
            CheckKind::Accounting,
            None,
            format!(
                "planned {} != accepted {} + rejected {} + skipped {}",
                n.planned, n.accepted, n.rejected, n.skipped
            ),
        );
    }
    if n.accepted != records.len() {
        c.flag(
            CheckKind::Accounting,
            None,
            format!("manifest counts {} accepted, corpus holds {}", n.accepted, records.len()),
        );
    }

    let plain: Vec<DatasetRecord> = records.into_iter().map(|(_, r)| r).collect();
    let recomputed = compute_stats(&plain).ok();
    if recomputed != manifest.stats {
        c.flag(CheckKind::Stats, None, "statistics recomputed from the corpus differ from the manifest");
    }

    Ok(ValidationReport {
        records_checked: plain.len(),
        images_checked,
        violations: c.violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PipelineConfig;
    use crate::pipeline::{build_backend, run_pipeline};
    use crate::synth::synthetic_csv;
    use std::sync::atomic::AtomicBool;

    fn corpus(dir: &Path) -> PathBuf {
        let csv = dir.join("in.csv");
        fs::write(&csv, synthetic_csv(&["600000", "000002"], 250, 1)).unwrap();
        let cfg = PipelineConfig {
            inputs: vec![csv],
            output_dir: dir.join("out"),
            pretrain_count: 6,
            instruct_count: 6,
            ..PipelineConfig::default()
        };
        let backend = build_backend(&cfg).unwrap();
        run_pipeline(&cfg, backend.as_ref(), &AtomicBool::new(false)).unwrap();
        cfg.output_dir
    }

    fn edit_instruct(out: &Path, f: impl FnOnce(&mut Vec<serde_json::Value>)) {
        let path = out.join(INSTRUCT_FILE);
        let mut v: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        f(&mut v);
        fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    }

    #[test]
    fn fresh_corpus_is_clean() {
        let dir = tempfile::tempdir().unwrap();
        let out = corpus(dir.path());
        let report = validate_corpus(&out).unwrap();
        assert!(report.is_clean(), "{:?}", report.violations);
        assert_eq!(report.records_checked, 12);
        assert_eq!(report.images_checked, 12);
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(validate_corpus(dir.path()), Err(ValidateError::ManifestMissing(_))));
    }

    #[test]
    fn corrupt_png_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let out = corpus(dir.path());
        let records: Vec<DatasetRecord> = read_json(&out.join(PRETRAIN_FILE)).unwrap();
        let victim = &records[2];
        let path = out.join(&victim.image);
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        let report = validate_corpus(&out).unwrap();
        let hits: Vec<_> = report
            .violations
            .iter()
            .filter(|v| v.kind == CheckKind::ImageIntegrity)
            .collect();
        assert!(!hits.is_empty());
        assert!(hits.iter().all(|v| v.record.as_deref() == Some(victim.id.as_str())));
    }

    #[test]
    fn alternation_flip_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let out = corpus(dir.path());
        edit_instruct(&out, |v| v[0]["conversations"][0]["from"] = "gpt".into());
        let report = validate_corpus(&out).unwrap();
        assert!(report.violations.iter().any(|v| v.kind == CheckKind::Alternation));
    }

    #[test]
    fn duplicate_placeholder_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let out = corpus(dir.path());
        edit_instruct(&out, |v| {
            let first = v[0]["conversations"][0]["value"].as_str().unwrap().to_string();
            v[0]["conversations"][0]["value"] = format!("<image>\n{first}").into();
        });
        let report = validate_corpus(&out).unwrap();
        assert!(report.violations.iter().any(|v| v.kind == CheckKind::Placeholder));
    }
}
