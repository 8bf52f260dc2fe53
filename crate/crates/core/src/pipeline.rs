//! End-to-end corpus generation: ingest, plan, render, annotate, parse, write.
//!
//! Work proceeds in chunks of planned records. After each chunk the corpus
//! files and manifest are rewritten, so an interrupted run can be resumed:
//! records whose ids the manifest lists as accepted or finally rejected are not
//! sent to the backend again.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::annotate::{annotate_batch, AnnotateError, ChatBackend, HttpBackend, MockBackend};
use crate::config::{BackendKind, ConfigError, PipelineConfig};
use crate::dataset::{
    assemble_record, compute_stats, image_path_for, load_manifest, load_records, read_json, write_atomic,
    write_corpus, write_reject, Counts, DatasetRecord, LoadError, Manifest, RecordContent, RecordParts,
    RejectRecord, WriteError, IMAGES_DIR, MANIFEST_FILE, MANIFEST_FORMAT, QUANTILE_METHOD, REJECTS_DIR,
    WORD_COUNT_RULE,
};
use crate::market::{load_many, IngestError, Series, SymbolId};
use crate::parse::{parse_instruct_dialog, parse_pretrain_answer, ContentPolicy};
use crate::prompt::{build_instruct_request, build_pretrain_request, AnnotationRequest, PromptError, PromptTemplates};
use crate::render::{render, RenderedChart};
use crate::sampler::{plan_corpus, seeded_rng, CorpusPlan, RecordId, SampleError};
use crate::trend::trend_label;
use crate::Stage;

pub const STATS_TEXT_FILE: &str = "stats.txt";
pub const STATS_CSV_FILE: &str = "stats.csv";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("templates: {0}")]
    Templates(#[from] PromptError),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("planning: {0}")]
    Plan(#[from] SampleError),
    #[error("writing corpus: {0}")]
    Write(#[from] WriteError),
    #[error("reading existing corpus: {0}")]
    Load(#[from] LoadError),
    #[error("backend setup: {0}")]
    Backend(String),
    #[error("ticker map {path}: {source}")]
    TickerMap {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Builds the backend the config asks for. The HTTP credential comes from the
/// environment only.
pub fn build_backend(config: &PipelineConfig) -> Result<Box<dyn ChatBackend>, PipelineError> {
    match config.backend.kind {
        BackendKind::Mock => Ok(Box::new(
            MockBackend::new(config.trend_epsilon).with_faults(config.backend.mock_faults.clone()),
        )),
        BackendKind::Http => HttpBackend::from_env(config.backend.http.clone())
            .map(|b| Box::new(b) as Box<dyn ChatBackend>)
            .map_err(PipelineError::Backend),
    }
}

/// Machine-readable result of a run, printed to stdout by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub output_dir: String,
    pub backend_id: String,
    pub counts: Counts,
    pub rejections: BTreeMap<String, usize>,
    /// Records already settled by a previous run.
    pub resumed: usize,
    /// Requests sent to the backend during this run.
    pub annotated: usize,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl RunSummary {
    pub fn exit_ok(&self) -> bool {
        self.aborted.is_none()
    }
}

struct Planned {
    stage: Stage,
    plan: CorpusPlan,
}

enum Outcome {
    Accepted(Box<DatasetRecord>),
    Rejected(RejectRecord),
}

fn reject(item: &Planned, code: &str, reason: String, final_verdict: bool, raw_text: Option<String>) -> Outcome {
    Outcome::Rejected(RejectRecord {
        id: item.plan.id.clone(),
        stage: item.stage,
        code: code.to_string(),
        reason,
        final_verdict,
        raw_text,
    })
}

fn load_templates(config: &PipelineConfig) -> Result<PromptTemplates, PromptError> {
    match &config.prompts.dir {
        Some(dir) => PromptTemplates::load_dir(dir, &config.prompts.language),
        None if config.prompts.language == "en" => Ok(PromptTemplates::embedded()),
        None => Err(PromptError::BadManifest {
            path: "<embedded>".into(),
            reason: format!(
                "no built-in templates for language {:?}; set prompts.dir",
                config.prompts.language
            ),
        }),
    }
}

fn plan_all(config: &PipelineConfig, series: &[Series]) -> Result<Vec<Planned>, PipelineError> {
    let mut rng = seeded_rng(config.seed);
    let mut planned = Vec::new();
    for (stage, wanted, count) in [
        (Stage::Pretrain, config.stage.includes_pretrain(), config.pretrain_count),
        (Stage::Instruct, config.stage.includes_instruct(), config.instruct_count),
    ] {
        if !wanted {
            continue;
        }
        for plan in plan_corpus(series, count, &mut rng, &config.sampler)? {
            planned.push(Planned { stage, plan });
        }
    }
    let mut seen = HashSet::new();
    for p in &planned {
        if !seen.insert(&p.plan.id) {
            return Err(SampleError::DuplicateRecordId(p.plan.id.clone()).into());
        }
    }
    Ok(planned)
}

/// State carried over from an earlier run in the same directory.
#[derive(Default)]
struct Prior {
    accepted: HashMap<RecordId, DatasetRecord>,
    rejected: HashMap<RecordId, RejectRecord>,
}

fn load_prior(out_dir: &Path, config_hash: &str, keep_rejects: bool) -> Result<Prior, PipelineError> {
    if !out_dir.join(MANIFEST_FILE).exists() {
        return Ok(Prior::default());
    }
    let manifest = load_manifest(out_dir)?;
    if manifest.config_sha256 != config_hash {
        warn!("existing corpus was built with a different configuration; ids that still match are reused");
    }
    let mut prior = Prior::default();
    let accepted: HashSet<&RecordId> = manifest.accepted_ids.iter().collect();
    for r in load_records(out_dir)? {
        if accepted.contains(&r.id) && out_dir.join(&r.image).is_file() {
            prior.accepted.insert(r.id.clone(), r);
        }
    }
    for id in &manifest.rejected_ids {
        let path = out_dir.join(REJECTS_DIR).join(format!("{id}.json"));
        if let Ok(rej) = read_json::<RejectRecord>(&path) {
            if rej.final_verdict && keep_rejects {
                prior.rejected.insert(id.clone(), rej);
            }
        }
    }
    Ok(prior)
}

struct Ctx<'a> {
    config: &'a PipelineConfig,
    templates: &'a PromptTemplates,
    policy: &'a ContentPolicy,
    series: &'a HashMap<&'a SymbolId, &'a Series>,
    out_dir: &'a Path,
}

impl Ctx<'_> {
    fn bars(&self, plan: &CorpusPlan) -> (&[crate::market::OhlcvBar], &[crate::market::OhlcvBar]) {
        let s = self.series[&plan.window.symbol_id];
        (plan.window.prompt_bars(s), plan.window.predict_bars(s))
    }

    fn request(&self, item: &Planned) -> Result<AnnotationRequest, PromptError> {
        let (prompt, predict) = self.bars(&item.plan);
        match item.stage {
            Stage::Pretrain => build_pretrain_request(self.templates, &item.plan.id, &item.plan.window, prompt),
            Stage::Instruct => {
                build_instruct_request(self.templates, &item.plan.id, &item.plan.window, prompt, predict)
            }
        }
    }

    /// Turns a backend answer into an accepted record or a reject.
    fn finish(&self, item: &Planned, chart: &RenderedChart, response: Result<crate::annotate::AnnotationResponse, AnnotateError>) -> Outcome {
        let response = match response {
            Ok(r) => r,
            Err(e) => {
                // Backend trouble is not a verdict on the record; a rerun retries it.
                let final_verdict = matches!(e, AnnotateError::EmptyCompletion);
                return reject(item, e.code(), e.to_string(), final_verdict, None);
            }
        };
        let (prompt, predict) = self.bars(&item.plan);
        let content = match item.stage {
            Stage::Pretrain => match parse_pretrain_answer(&response.raw_text, self.policy) {
                Ok(answer) => RecordContent::Pretrain {
                    instruction: self.templates.instruction_for(item.plan.spec.seed).to_string(),
                    answer,
                },
                Err(e) => return reject(item, e.code(), e.to_string(), true, Some(response.raw_text)),
            },
            Stage::Instruct => {
                let turns = match parse_instruct_dialog(&response.raw_text, self.policy) {
                    Ok(t) => t,
                    Err(e) => return reject(item, e.code(), e.to_string(), true, Some(response.raw_text)),
                };
                match trend_label(predict, self.config.trend_epsilon) {
                    Ok(trend_label) => RecordContent::Instruct { turns, trend_label },
                    Err(e) => return reject(item, "trend_label", e.to_string(), true, None),
                }
            }
        };
        let parts = RecordParts {
            plan: &item.plan,
            chart,
            annotation_id: &response.record_id,
            dates: (
                prompt[0].date,
                prompt[prompt.len() - 1].date,
                predict.last().map_or(prompt[prompt.len() - 1].date, |b| b.date),
            ),
            content,
        };
        match assemble_record(parts, (self.policy.min_turns, self.policy.max_turns)) {
            Ok(r) => Outcome::Accepted(Box::new(r)),
            Err(e) => reject(item, "assembly", e.to_string(), true, Some(response.raw_text)),
        }
    }

    /// Renders, annotates and parses one chunk. Images of rejected records are removed.
    fn process_chunk(&self, chunk: &[&Planned], backend: &dyn ChatBackend) -> Result<Vec<Outcome>, PipelineError> {
        let rendered: Vec<Result<RenderedChart, String>> = chunk
            .par_iter()
            .map(|item| {
                let (prompt, _) = self.bars(&item.plan);
                let chart = render(&item.plan.window, prompt, &item.plan.spec).map_err(|e| e.to_string())?;
                write_atomic(&self.out_dir.join(image_path_for(&item.plan.id)), &chart.png_bytes)
                    .map_err(|e| e.to_string())?;
                Ok(chart)
            })
            .collect();

        let mut outcomes: Vec<Option<Outcome>> = Vec::with_capacity(chunk.len());
        let mut requests = Vec::new();
        let mut request_slot = Vec::new();
        for (i, (item, chart)) in chunk.iter().zip(&rendered).enumerate() {
            match chart {
                Err(e) => outcomes.push(Some(reject(item, "render_failure", e.clone(), true, None))),
                Ok(_) => match self.request(item) {
                    Ok(req) => {
                        outcomes.push(None);
                        requests.push(req);
                        request_slot.push(i);
                    }
                    Err(e) => outcomes.push(Some(reject(item, "prompt_failure", e.to_string(), true, None))),
                },
            }
        }

        let responses = annotate_batch(
            &requests,
            backend,
            &self.config.retry,
            self.config.backend.max_in_flight,
        );
        for (slot, response) in request_slot.into_iter().zip(responses) {
            let chart = rendered[slot].as_ref().expect("only rendered items are annotated");
            outcomes[slot] = Some(self.finish(chunk[slot], chart, response));
        }
        let outcomes: Vec<Outcome> = outcomes.into_iter().map(|o| o.expect("every slot filled")).collect();
        for o in &outcomes {
            if let Outcome::Rejected(r) = o {
                let image = self.out_dir.join(image_path_for(&r.id));
                if image.exists() {
                    let _ = fs::remove_file(image);
                }
            }
        }
        Ok(outcomes)
    }
}

/// Runs (or resumes) generation into `config.output_dir`. Setup failures are
/// errors; a run that stops early returns a summary with `aborted` set.
pub fn run_pipeline(
    config: &PipelineConfig,
    backend: &dyn ChatBackend,
    cancel: &AtomicBool,
) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let templates = load_templates(config)?;
    let policy = ContentPolicy::new(&config.content).map_err(|e| ConfigError::ConfigInvalid {
        field: "content".into(),
        reason: e.to_string(),
    })?;

    let report = load_many(&config.inputs, &config.ingest_options())?;
    if !report.rejected.is_empty() {
        warn!("{} of {} input rows skipped as malformed", report.rejected.len(), report.rows_read);
    }
    let map_path = config.ticker_map_path();
    report
        .ticker_map
        .write_csv(&map_path)
        .map_err(|source| PipelineError::TickerMap { path: map_path.clone(), source })?;
    info!(
        "loaded {} series ({} rows) from {} file(s)",
        report.series.len(),
        report.rows_read,
        config.inputs.len()
    );

    let planned = plan_all(config, &report.series)?;
    let out_dir = config.output_dir.as_path();
    fs::create_dir_all(out_dir.join(IMAGES_DIR)).map_err(|source| WriteError::IoFailure {
        path: out_dir.join(IMAGES_DIR),
        source,
    })?;
    let config_hash = config.content_hash();
    let prior = load_prior(out_dir, &config_hash, !config.reannotate_rejects)?;

    let series: HashMap<&SymbolId, &Series> = report.series.iter().map(|s| (s.symbol_id(), s)).collect();
    let ctx = Ctx {
        config,
        templates: &templates,
        policy: &policy,
        series: &series,
        out_dir,
    };

    let mut accepted: HashMap<RecordId, DatasetRecord> = HashMap::new();
    let mut rejected: HashMap<RecordId, RejectRecord> = HashMap::new();
    let mut pending: Vec<&Planned> = Vec::new();
    for item in &planned {
        if let Some(r) = prior.accepted.get(&item.plan.id) {
            accepted.insert(item.plan.id.clone(), r.clone());
        } else if let Some(r) = prior.rejected.get(&item.plan.id) {
            rejected.insert(item.plan.id.clone(), r.clone());
        } else {
            pending.push(item);
        }
    }
    let resumed = accepted.len() + rejected.len();
    if resumed > 0 {
        info!("resuming: {resumed} of {} planned records already settled", planned.len());
    }

    let base = ManifestBase::new(config, &templates, backend, config_hash);
    let mut annotated = 0;
    let mut aborted = None;
    let total_pending = pending.len();
    for chunk in pending.chunks(config.chunk_size) {
        if cancel.load(Ordering::SeqCst) {
            aborted = Some("interrupted".to_string());
            break;
        }
        let outcomes = ctx.process_chunk(chunk, backend)?;
        annotated += chunk.len();
        let mut auth_failure = None;
        for outcome in outcomes {
            match outcome {
                Outcome::Accepted(r) => {
                    let stale = out_dir.join(REJECTS_DIR).join(format!("{}.json", r.id));
                    if stale.exists() {
                        let _ = fs::remove_file(stale);
                    }
                    accepted.insert(r.id.clone(), *r);
                }
                Outcome::Rejected(r) => {
                    if r.code == "auth_failure" {
                        auth_failure.get_or_insert_with(|| r.reason.clone());
                    }
                    write_reject(out_dir, &r)?;
                    rejected.insert(r.id.clone(), r);
                }
            }
        }
        checkpoint(out_dir, &planned, &accepted, &rejected, &base, false)?;
        info!(
            "progress: {}/{} processed, {} accepted, {} rejected",
            annotated,
            total_pending,
            accepted.len(),
            rejected.len()
        );
        if let Some(reason) = auth_failure {
            aborted = Some(format!("annotation stage aborted: {reason}"));
            break;
        }
    }

    let manifest = checkpoint(out_dir, &planned, &accepted, &rejected, &base, aborted.is_none())?;
    if let Some(stats) = &manifest.stats {
        write_atomic(&out_dir.join(STATS_TEXT_FILE), stats.render_table().as_bytes())?;
        write_atomic(&out_dir.join(STATS_CSV_FILE), stats.render_csv().as_bytes())?;
    }
    Ok(RunSummary {
        output_dir: out_dir.display().to_string(),
        backend_id: manifest.backend_id.clone(),
        counts: manifest.counts.clone(),
        rejections: manifest.rejections.clone(),
        resumed,
        annotated,
        complete: manifest.complete,
        aborted,
    })
}

/// Manifest fields fixed for the whole run.
struct ManifestBase {
    template: Manifest,
}

impl ManifestBase {
    fn new(config: &PipelineConfig, templates: &PromptTemplates, backend: &dyn ChatBackend, config_hash: String) -> Self {
        let http = config.backend.kind == BackendKind::Http;
        ManifestBase {
            template: Manifest {
                format: MANIFEST_FORMAT,
                generator: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
                seed: config.seed,
                config_sha256: config_hash,
                template_version: templates.version.clone(),
                template_language: templates.language.clone(),
                template_hashes: templates.hashes().clone(),
                backend_id: backend.backend_id(),
                // Sampling settings only mean something for a real model.
                model: http.then(|| config.backend.http.model.clone()),
                temperature: http.then_some(config.backend.http.temperature),
                trend_epsilon: config.trend_epsilon,
                min_turns: config.content.min_turns,
                max_turns: config.content.max_turns,
                image_width: config.sampler.width_px,
                image_height: config.sampler.height_px,
                word_count_rule: WORD_COUNT_RULE.into(),
                quantile_method: QUANTILE_METHOD.into(),
                moving_average_basis: "close".into(),
                price_adjustment: "as-given".into(),
                complete: false,
                counts: Counts::default(),
                rejections: BTreeMap::new(),
                planned_ids: Vec::new(),
                accepted_ids: Vec::new(),
                rejected_ids: Vec::new(),
                stats: None,
            },
        }
    }
}

fn checkpoint(
    out_dir: &Path,
    planned: &[Planned],
    accepted: &HashMap<RecordId, DatasetRecord>,
    rejected: &HashMap<RecordId, RejectRecord>,
    base: &ManifestBase,
    finished: bool,
) -> Result<Manifest, PipelineError> {
    let mut records = Vec::with_capacity(accepted.len());
    let mut m = base.template.clone();
    for item in planned {
        let id = &item.plan.id;
        m.planned_ids.push(id.clone());
        if let Some(r) = accepted.get(id) {
            records.push(r.clone());
            m.accepted_ids.push(id.clone());
        } else if let Some(r) = rejected.get(id) {
            m.rejected_ids.push(id.clone());
            *m.rejections.entry(r.code.clone()).or_default() += 1;
        }
    }
    m.counts = Counts {
        planned: planned.len(),
        accepted: m.accepted_ids.len(),
        rejected: m.rejected_ids.len(),
        skipped: planned.len() - m.accepted_ids.len() - m.rejected_ids.len(),
        pretrain: records.iter().filter(|r| r.stage == Stage::Pretrain).count(),
        instruct: records.iter().filter(|r| r.stage == Stage::Instruct).count(),
    };
    m.complete = finished && m.counts.skipped == 0;
    m.stats = compute_stats(&records).ok();
    write_corpus(out_dir, &records, &m)?;
    Ok(m)
}
