//! K-line text serialization and annotation prompt construction.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::OhlcvBar;
use crate::render::sha256_hex;
use crate::sampler::{RecordId, Window};
use crate::Stage;

pub const KLINE_HEADER: &str = "date open high low close volume";
pub const PROMPT_DATA_PLACEHOLDER: &str = "${prompt_data}";
pub const PREDICT_DATA_PLACEHOLDER: &str = "${predict_data}";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot serialize an empty bar list")]
    EmptyBars,
    #[error("{segment} segment has {actual} bars, window expects {expected}")]
    SegmentMismatch {
        segment: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("template manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
    #[error("template {file} hash mismatch: manifest pins {expected}, file is {actual}")]
    HashMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("template {file}: placeholder {placeholder} must appear exactly once on its own line")]
    Placeholder {
        file: String,
        placeholder: &'static str,
    },
}

/// Serializes bars as a header line followed by one space-separated line per day.
pub fn serialize_kline(bars: &[OhlcvBar]) -> Result<String, PromptError> {
    if bars.is_empty() {
        return Err(PromptError::EmptyBars);
    }
    let mut out = String::with_capacity(48 * (bars.len() + 1));
    out.push_str(KLINE_HEADER);
    for b in bars {
        let _ = write!(
            out,
            "\n{} {} {} {} {} {}",
            b.date.format("%Y-%m-%d"),
            b.open,
            b.high,
            b.low,
            b.close,
            b.volume
        );
    }
    Ok(out)
}

/// A loaded, hash-verified template set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub version: String,
    pub language: String,
    pretrain_system: String,
    instruct: String,
    instructions: Vec<String>,
    /// File name -> SHA-256 of its bytes, as recorded in the corpus manifest.
    hashes: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct TemplateManifest {
    version: String,
    template: Vec<TemplateEntry>,
}

#[derive(Deserialize)]
struct TemplateEntry {
    kind: String,
    language: String,
    file: String,
    sha256: String,
}

const EMBEDDED_MANIFEST: &str = include_str!("../prompts/templates.toml");
const EMBEDDED_FILES: [(&str, &str); 3] = [
    ("pretrain.en.txt", include_str!("../prompts/pretrain.en.txt")),
    ("instruct.en.txt", include_str!("../prompts/instruct.en.txt")),
    ("instructions.en.txt", include_str!("../prompts/instructions.en.txt")),
];

impl PromptTemplates {
    /// The English template set compiled into the binary.
    pub fn embedded() -> Self {
        Self::from_sources(Path::new("<embedded>"), EMBEDDED_MANIFEST, "en", |file| {
            EMBEDDED_FILES
                .iter()
                .find(|(name, _)| *name == file)
                .map(|(_, text)| text.to_string())
                .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, file.to_string()))
        })
        .expect("embedded templates are consistent")
    }

    /// Loads `dir/templates.toml` and the `language` variants it lists.
    pub fn load_dir(dir: &Path, language: &str) -> Result<Self, PromptError> {
        let manifest_path = dir.join("templates.toml");
        let manifest = std::fs::read_to_string(&manifest_path).map_err(|source| PromptError::Io {
            path: manifest_path.clone(),
            source,
        })?;
        Self::from_sources(&manifest_path, &manifest, language, |file| {
            std::fs::read_to_string(dir.join(file))
        })
    }

    fn from_sources(
        manifest_path: &Path,
        manifest: &str,
        language: &str,
        read: impl Fn(&str) -> std::io::Result<String>,
    ) -> Result<Self, PromptError> {
        let bad = |reason: String| PromptError::BadManifest {
            path: manifest_path.to_path_buf(),
            reason,
        };
        let parsed: TemplateManifest = toml::from_str(manifest).map_err(|e| bad(e.to_string()))?;
        let mut texts: BTreeMap<String, String> = BTreeMap::new();
        let mut hashes = BTreeMap::new();
        for entry in parsed.template.iter().filter(|e| e.language == language) {
            let text = read(&entry.file).map_err(|source| PromptError::Io {
                path: manifest_path.with_file_name(&entry.file),
                source,
            })?;
            let actual = sha256_hex(text.as_bytes());
            if !actual.eq_ignore_ascii_case(&entry.sha256) {
                return Err(PromptError::HashMismatch {
                    file: entry.file.clone(),
                    expected: entry.sha256.clone(),
                    actual,
                });
            }
            hashes.insert(entry.file.clone(), actual);
            if texts.insert(entry.kind.clone(), text).is_some() {
                return Err(bad(format!("duplicate {} template for {language}", entry.kind)));
            }
        }
        let mut take = |kind: &str| {
            texts
                .remove(kind)
                .ok_or_else(|| bad(format!("no {kind} template for language {language:?}")))
        };
        let pretrain_system = take("pretrain")?.trim_end().to_string();
        let instruct = take("instruct")?;
        let instructions: Vec<String> = take("instructions")?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if instructions.is_empty() {
            return Err(bad("instruction pool is empty".into()));
        }
        let instruct_file = parsed
            .template
            .iter()
            .find(|e| e.kind == "instruct" && e.language == language)
            .map(|e| e.file.clone())
            .unwrap_or_default();
        for placeholder in [PROMPT_DATA_PLACEHOLDER, PREDICT_DATA_PLACEHOLDER] {
            let own_lines = instruct.lines().filter(|l| l.trim() == placeholder).count();
            if own_lines != 1 || instruct.matches(placeholder).count() != 1 {
                return Err(PromptError::Placeholder {
                    file: instruct_file.clone(),
                    placeholder,
                });
            }
        }
        Ok(PromptTemplates {
            version: parsed.version,
            language: language.to_string(),
            pretrain_system,
            instruct: instruct.trim_end().to_string(),
            instructions,
            hashes,
        })
    }

    pub fn pretrain_system(&self) -> &str {
        &self.pretrain_system
    }

    pub fn instruct_template(&self) -> &str {
        &self.instruct
    }

    pub fn instructions(&self) -> &[String] {
        &self.instructions
    }

    pub fn hashes(&self) -> &BTreeMap<String, String> {
        &self.hashes
    }

    /// Picks the pretraining instruction for a record from the fixed pool.
    pub fn instruction_for(&self, seed: u64) -> &str {
        &self.instructions[(seed % self.instructions.len() as u64) as usize]
    }
}

/// A prompt ready to send to a chat-completion backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub stage: Stage,
    /// Empty when the whole prompt travels in `user_content`.
    pub system_prompt: String,
    pub user_content: String,
    pub record_id: RecordId,
    pub window: Window,
}

fn check_len(segment: &'static str, expected: usize, bars: &[OhlcvBar]) -> Result<(), PromptError> {
    if bars.len() != expected {
        return Err(PromptError::SegmentMismatch {
            segment,
            expected,
            actual: bars.len(),
        });
    }
    Ok(())
}

/// Pretraining request: the description prompt as system message, the prompt
/// segment's k-line text as user message.
pub fn build_pretrain_request(
    templates: &PromptTemplates,
    record_id: &RecordId,
    window: &Window,
    prompt_bars: &[OhlcvBar],
) -> Result<AnnotationRequest, PromptError> {
    let user_content = serialize_kline(prompt_bars)?;
    check_len("prompt", window.prompt_len, prompt_bars)?;
    Ok(AnnotationRequest {
        stage: Stage::Pretrain,
        system_prompt: templates.pretrain_system().to_string(),
        user_content,
        record_id: record_id.clone(),
        window: window.clone(),
    })
}

/// Instruction request: the dialog template with both k-line blocks spliced in
/// at their placeholder lines, prompt block first.
pub fn build_instruct_request(
    templates: &PromptTemplates,
    record_id: &RecordId,
    window: &Window,
    prompt_bars: &[OhlcvBar],
    predict_bars: &[OhlcvBar],
) -> Result<AnnotationRequest, PromptError> {
    let prompt_block = serialize_kline(prompt_bars)?;
    let predict_block = serialize_kline(predict_bars)?;
    check_len("prompt", window.prompt_len, prompt_bars)?;
    check_len("predict", window.predict_len(), predict_bars)?;
    let lines: Vec<&str> = templates
        .instruct_template()
        .lines()
        .map(|line| match line.trim() {
            PROMPT_DATA_PLACEHOLDER => prompt_block.as_str(),
            PREDICT_DATA_PLACEHOLDER => predict_block.as_str(),
            _ => line,
        })
        .collect();
    Ok(AnnotationRequest {
        stage: Stage::Instruct,
        system_prompt: String::new(),
        user_content: lines.join("\n"),
        record_id: record_id.clone(),
        window: window.clone(),
    })
}

/// Extracts every k-line block (header line plus following data rows) from a
/// prompt, in order of appearance. Rows that do not parse end the block.
pub fn extract_kline_blocks(text: &str) -> Vec<Vec<OhlcvBar>> {
    let mut blocks = Vec::new();
    let mut lines = text.lines().peekable();
    while let Some(line) = lines.next() {
        if line.trim() != KLINE_HEADER {
            continue;
        }
        let mut bars = Vec::new();
        while let Some(bar) = lines.peek().and_then(|l| parse_kline_row(l)) {
            bars.push(bar);
            lines.next();
        }
        blocks.push(bars);
    }
    blocks
}

fn parse_kline_row(line: &str) -> Option<OhlcvBar> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 6 {
        return None;
    }
    OhlcvBar::new(
        chrono::NaiveDate::parse_from_str(f[0], "%Y-%m-%d").ok()?,
        f[1].parse().ok()?,
        f[2].parse().ok()?,
        f[3].parse().ok()?,
        f[4].parse().ok()?,
        f[5].parse().ok()?,
    )
    .ok()
}
