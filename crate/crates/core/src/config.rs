//! Pipeline configuration, read from TOML. Every field has a default, so an
//! empty file is a valid (if input-less) configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{HttpSettings, MockFaults, RetryPolicy};
use crate::market::{Anonymizer, IngestOptions, DEFAULT_SALT};
use crate::parse::{ContentPolicy, ContentRules};
use crate::render::sha256_hex;
use crate::sampler::{SampleError, SamplerConfig};
use crate::trend::DEFAULT_EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StageSelection {
    Pretrain,
    Instruct,
    Both,
}

impl StageSelection {
    pub fn includes_pretrain(self) -> bool {
        matches!(self, StageSelection::Pretrain | StageSelection::Both)
    }

    pub fn includes_instruct(self) -> bool {
        matches!(self, StageSelection::Instruct | StageSelection::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub max_in_flight: usize,
    #[serde(flatten)]
    pub http: HttpSettings,
    pub mock_faults: MockFaults,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            max_in_flight: 8,
            http: HttpSettings::default(),
            mock_faults: MockFaults::default(),
        }
    }
}

fn backend_kind_or_table<'de, D: serde::Deserializer<'de>>(d: D) -> Result<BackendConfig, D::Error> {
    struct V;

    impl<'de> serde::de::Visitor<'de> for V {
        type Value = BackendConfig;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a backend kind (\"mock\" or \"http\") or a backend table")
        }

        fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<BackendConfig, E> {
            let kind = BackendKind::deserialize(serde::de::value::StrDeserializer::<E>::new(v))?;
            Ok(BackendConfig {
                kind,
                ..BackendConfig::default()
            })
        }

        fn visit_map<A: serde::de::MapAccess<'de>>(self, map: A) -> Result<BackendConfig, A::Error> {
            BackendConfig::deserialize(serde::de::value::MapAccessDeserializer::new(map))
        }
    }

    d.deserialize_any(V)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub delimiter: char,
    pub max_reject_rate: f64,
    /// Salt for the opaque symbol ids. Changing it changes every record id.
    pub salt: String,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            delimiter: ',',
            max_reject_rate: 0.10,
            salt: DEFAULT_SALT.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    /// Directory with `templates.toml`; the built-in English set when unset.
    pub dir: Option<PathBuf>,
    pub language: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            dir: None,
            language: "en".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    /// Where the ticker-to-id sidecar goes. Defaults to `<output_dir>.tickers.csv`,
    /// outside the corpus directory.
    pub ticker_map: Option<PathBuf>,
    pub seed: u64,
    pub stage: StageSelection,
    pub pretrain_count: usize,
    pub instruct_count: usize,
    /// Records rendered and annotated between checkpoints.
    pub chunk_size: usize,
    /// On resume, send quarantined records to the backend again instead of
    /// keeping their earlier verdict.
    pub reannotate_rejects: bool,
    pub trend_epsilon: f64,
    pub ingest: IngestConfig,
    pub sampler: SamplerConfig,
    /// Either a bare kind (`backend = "mock"`) or a full `[backend]` table.
    #[serde(deserialize_with = "backend_kind_or_table")]
    pub backend: BackendConfig,
    pub retry: RetryPolicy,
    pub content: ContentRules,
    pub prompts: PromptConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            output_dir: PathBuf::from("corpus"),
            ticker_map: None,
            seed: 42,
            stage: StageSelection::Both,
            pretrain_count: 100,
            instruct_count: 100,
            chunk_size: 64,
            reannotate_rejects: false,
            trend_epsilon: DEFAULT_EPSILON,
            ingest: IngestConfig::default(),
            sampler: SamplerConfig::default(),
            backend: BackendConfig::default(),
            retry: RetryPolicy::default(),
            content: ContentRules::default(),
            prompts: PromptConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Syntax {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::ConfigInvalid {
        field: field.into(),
        reason: reason.into(),
    }
}

fn probability(field: &str, p: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid(field, format!("{p} is not in [0, 1]")))
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax {
            path: origin.to_path_buf(),
            source: Box::new(e),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sampler.validate().map_err(|e| match e {
            SampleError::InvalidConfig { field, reason } => invalid(&format!("sampler.{field}"), reason),
            other => invalid("sampler", other.to_string()),
        })?;
        if !self.trend_epsilon.is_finite() || self.trend_epsilon < 0.0 {
            return Err(invalid("trend_epsilon", "must be finite and >= 0"));
        }
        if self.chunk_size == 0 {
            return Err(invalid("chunk_size", "must be at least 1"));
        }
        if self.backend.max_in_flight == 0 {
            return Err(invalid("backend.max_in_flight", "must be at least 1"));
        }
        if !(0.0..=2.0).contains(&self.backend.http.temperature) {
            return Err(invalid("backend.temperature", "must be in [0, 2]"));
        }
        if self.backend.http.api_key_env.trim().is_empty() {
            return Err(invalid("backend.api_key_env", "must name an environment variable"));
        }
        let f = &self.backend.mock_faults;
        probability("backend.mock_faults.ticker_rate", f.ticker_rate)?;
        probability("backend.mock_faults.leakage_rate", f.leakage_rate)?;
        probability("backend.mock_faults.unpaired_rate", f.unpaired_rate)?;
        probability(
            "backend.mock_faults",
            f.ticker_rate + f.leakage_rate + f.unpaired_rate,
        )?;
        if self.retry.max_attempts == 0 {
            return Err(invalid("retry.max_attempts", "must be at least 1"));
        }
        if !self.retry.backoff_factor.is_finite() || self.retry.backoff_factor < 1.0 {
            return Err(invalid("retry.backoff_factor", "must be >= 1"));
        }
        probability("ingest.max_reject_rate", self.ingest.max_reject_rate)?;
        if !self.ingest.delimiter.is_ascii() {
            return Err(invalid("ingest.delimiter", "must be a single ASCII character"));
        }
        if self.content.min_turns == 0 || self.content.min_turns > self.content.max_turns {
            return Err(invalid("content.min_turns", "need 1 <= min_turns <= max_turns"));
        }
        ContentPolicy::new(&self.content).map_err(|e| invalid("content", e.to_string()))?;
        Ok(())
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            delimiter: self.ingest.delimiter as u8,
            max_reject_rate: self.ingest.max_reject_rate,
            anonymizer: Anonymizer::new(self.ingest.salt.clone()),
        }
    }

    pub fn ticker_map_path(&self) -> PathBuf {
        self.ticker_map.clone().unwrap_or_else(|| {
            let mut p = self.output_dir.as_os_str().to_owned();
            p.push(".tickers.csv");
            PathBuf::from(p)
        })
    }

    /// Hash of everything that can change corpus content. Output locations and
    /// throughput knobs are excluded so the same run in two directories agrees.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.ticker_map = None;
        c.chunk_size = 0;
        c.reannotate_rejects = false;
        c.backend.max_in_flight = 0;
        c.backend.http.timeout_secs = 0;
        c.retry = RetryPolicy::default();
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PipelineConfig, ConfigError> {
        PipelineConfig::from_toml_str(text, Path::new("test.toml"))
    }

    #[test]
    fn empty_file_is_default() {
        let c = parse("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let c = PipelineConfig {
            inputs: vec!["a.csv".into()],
            ..PipelineConfig::default()
        };
        assert_eq!(parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn nested_overrides() {
        let c = parse(
            r#"
            seed = 7
            stage = "instruct"
            [sampler]
            candlestick_probability = 0.5
            ma_periods = [3, 9]
            [backend]
            kind = "http"
            model = "gpt-4o-mini"
            api_key_env = "MY_KEY"
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.stage, StageSelection::Instruct);
        assert_eq!(c.sampler.ma_periods.len(), 2);
        assert_eq!(c.backend.kind, BackendKind::Http);
        assert_eq!(c.backend.http.api_key_env, "MY_KEY");
        c.validate().unwrap();
    }

    #[test]
    fn backend_as_bare_kind() {
        let c = parse("backend = \"http\"").unwrap();
        assert_eq!(c.backend.kind, BackendKind::Http);
        assert_eq!(c.backend.max_in_flight, BackendConfig::default().max_in_flight);
        assert_eq!(parse("backend = \"mock\"").unwrap(), PipelineConfig::default());
        assert!(matches!(parse("backend = \"carrier-pigeon\""), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse("[backend]\nmodle = \"x\""), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(parse("sede = 1"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse("[sampler]\nwidth = 3"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn invalid_fields_are_named() {
        let field_of = |text: &str| match parse(text).unwrap().validate() {
            Err(ConfigError::ConfigInvalid { field, .. }) => field,
            other => panic!("expected ConfigInvalid, got {other:?}"),
        };
        assert_eq!(field_of("[sampler]\ncandlestick_probability = 1.5"), "sampler.candlestick_probability");
        assert_eq!(field_of("trend_epsilon = -0.1"), "trend_epsilon");
        assert_eq!(field_of("[backend]\nmax_in_flight = 0"), "backend.max_in_flight");
        assert_eq!(field_of("[backend.mock_faults]\nticker_rate = 2.0"), "backend.mock_faults.ticker_rate");
        assert_eq!(field_of("[content]\nmin_turns = 9"), "content.min_turns");
    }

    #[test]
    fn content_hash_ignores_locations() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            output_dir: "elsewhere".into(),
            chunk_size: 3,
            ..a.clone()
        };
        assert_eq!(a.content_hash(), b.content_hash());
        let c = PipelineConfig { seed: 1, ..a.clone() };
        assert_ne!(a.content_hash(), c.content_hash());
        assert_eq!(a.ticker_map_path(), PathBuf::from("corpus.tickers.csv"));
    }
}
