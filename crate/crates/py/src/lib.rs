//! Python bindings. Plain data (records, reports, summaries) crosses the
//! boundary as dicts built from the JSON form of the Rust types.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use kline_corpus::config::{PipelineConfig, StageSelection};
use kline_corpus::dataset::{compute_stats, load_records};
use kline_corpus::market::{load_many, Anonymizer, IngestOptions, OhlcvBar, Price};
use kline_corpus::parse::{self, ContentPolicy};
use kline_corpus::pipeline::{build_backend, run_pipeline};
use kline_corpus::render::{draw_chart, sha256_hex};
use kline_corpus::sampler::{self, ChartStyle, ChartType, MaPeriod, SamplerConfig};
use kline_corpus::trend::{self, Direction};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn price_arg(value: &Bound<'_, PyAny>, field: &str) -> PyResult<Price> {
    let text = if let Ok(s) = value.extract::<String>() {
        s
    } else if let Ok(i) = value.extract::<i64>() {
        i.to_string()
    } else if let Ok(f) = value.extract::<f64>() {
        // Shortest round-trip form, so 10.1 stays 10.1 and excess digits are rejected.
        format!("{f}")
    } else {
        return Err(PyValueError::new_err(format!("{field}: expected str, int or float")));
    };
    text.parse().map_err(|e| PyValueError::new_err(format!("{field}: {e}")))
}

/// One daily bar. Prices are exact to four decimals.
#[pyclass(name = "Bar", frozen, from_py_object)]
#[derive(Clone)]
struct PyBar(OhlcvBar);

#[pymethods]
impl PyBar {
    #[new]
    fn new(
        date: &str,
        open: &Bound<'_, PyAny>,
        high: &Bound<'_, PyAny>,
        low: &Bound<'_, PyAny>,
        close: &Bound<'_, PyAny>,
        volume: u64,
    ) -> PyResult<Self> {
        let date = date.parse().map_err(|e| PyValueError::new_err(format!("date {date:?}: {e}")))?;
        OhlcvBar::new(
            date,
            price_arg(open, "open")?,
            price_arg(high, "high")?,
            price_arg(low, "low")?,
            price_arg(close, "close")?,
            volume,
        )
        .map(PyBar)
        .map_err(value_err)
    }

    #[getter]
    fn date(&self) -> String {
        self.0.date.to_string()
    }
    #[getter]
    fn open(&self) -> f64 {
        self.0.open.to_f64()
    }
    #[getter]
    fn high(&self) -> f64 {
        self.0.high.to_f64()
    }
    #[getter]
    fn low(&self) -> f64 {
        self.0.low.to_f64()
    }
    #[getter]
    fn close(&self) -> f64 {
        self.0.close.to_f64()
    }
    #[getter]
    fn volume(&self) -> u64 {
        self.0.volume
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        let b = &self.0;
        format!(
            "Bar('{}', '{}', '{}', '{}', '{}', {})",
            b.date, b.open, b.high, b.low, b.close, b.volume
        )
    }
}

fn bars_of(bars: &[PyRef<'_, PyBar>]) -> Vec<OhlcvBar> {
    bars.iter().map(|b| b.0).collect()
}

/// Rendering options for one chart.
#[pyclass(name = "ChartSpec", frozen, from_py_object)]
#[derive(Clone)]
struct PyChartSpec(sampler::ChartSpec);

#[pymethods]
impl PyChartSpec {
    #[new]
    #[pyo3(signature = (chart_type="candlestick", style="light", ma_periods=vec![], show_volume=false, width_px=None, height_px=None, seed=0))]
    fn new(
        chart_type: &str,
        style: &str,
        ma_periods: Vec<u32>,
        show_volume: bool,
        width_px: Option<u32>,
        height_px: Option<u32>,
        seed: u64,
    ) -> PyResult<Self> {
        let chart_type: ChartType = serde_json::from_value(chart_type.into()).map_err(value_err)?;
        let style: ChartStyle = serde_json::from_value(style.into()).map_err(value_err)?;
        let mut ma_periods = ma_periods
            .into_iter()
            .map(MaPeriod::try_from)
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_err)?;
        ma_periods.sort();
        ma_periods.dedup();
        let defaults = SamplerConfig::default();
        Ok(PyChartSpec(sampler::ChartSpec {
            chart_type,
            style,
            ma_periods,
            show_volume,
            width_px: width_px.unwrap_or(defaults.width_px),
            height_px: height_px.unwrap_or(defaults.height_px),
            seed,
        }))
    }

    /// Compact description such as `candlestick/dark/ma3+ma9/vol`.
    fn summary(&self) -> String {
        self.0.summary()
    }

    fn __repr__(&self) -> String {
        format!("ChartSpec({})", self.0.summary())
    }
}

/// Pipeline configuration. Construct from TOML text; common fields are also
/// settable as attributes.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig(PipelineConfig);

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml=""))]
    fn new(toml: &str) -> PyResult<Self> {
        PipelineConfig::from_toml_str(toml, Path::new("<python>"))
            .map(PyConfig)
            .map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        PipelineConfig::load(&path).map(PyConfig).map_err(value_err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    fn validate(&self) -> PyResult<()> {
        self.0.validate().map_err(value_err)
    }

    fn content_hash(&self) -> String {
        self.0.content_hash()
    }

    #[getter]
    fn inputs(&self) -> Vec<PathBuf> {
        self.0.inputs.clone()
    }
    #[setter]
    fn set_inputs(&mut self, v: Vec<PathBuf>) {
        self.0.inputs = v;
    }
    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.0.output_dir.clone()
    }
    #[setter]
    fn set_output_dir(&mut self, v: PathBuf) {
        self.0.output_dir = v;
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.0.seed = v;
    }
    #[getter]
    fn stage(&self) -> &'static str {
        match self.0.stage {
            StageSelection::Pretrain => "pretrain",
            StageSelection::Instruct => "instruct",
            StageSelection::Both => "both",
        }
    }
    #[setter]
    fn set_stage(&mut self, v: &str) -> PyResult<()> {
        self.0.stage = serde_json::from_value(v.into()).map_err(value_err)?;
        Ok(())
    }
    #[getter]
    fn pretrain_count(&self) -> usize {
        self.0.pretrain_count
    }
    #[setter]
    fn set_pretrain_count(&mut self, v: usize) {
        self.0.pretrain_count = v;
    }
    #[getter]
    fn instruct_count(&self) -> usize {
        self.0.instruct_count
    }
    #[setter]
    fn set_instruct_count(&mut self, v: usize) {
        self.0.instruct_count = v;
    }
    #[getter]
    fn trend_epsilon(&self) -> f64 {
        self.0.trend_epsilon
    }
    #[setter]
    fn set_trend_epsilon(&mut self, v: f64) {
        self.0.trend_epsilon = v;
    }

    fn __repr__(&self) -> String {
        format!("Config(sha256={})", &self.0.content_hash()[..12])
    }
}

/// Synthetic OHLCV CSV text in the ingest format.
#[pyfunction]
#[pyo3(signature = (tickers, days, seed=1))]
fn synthetic_csv(tickers: Vec<String>, days: usize, seed: u64) -> String {
    let refs: Vec<&str> = tickers.iter().map(String::as_str).collect();
    kline_corpus::synth::synthetic_csv(&refs, days, seed)
}

/// Loads CSV files into `{symbol_id: [Bar, ...]}` plus ingest counts. Tickers
/// are replaced by salted opaque ids.
#[pyfunction]
#[pyo3(signature = (paths, salt=None, max_reject_rate=0.10))]
fn load_csv(
    py: Python<'_>,
    paths: Vec<PathBuf>,
    salt: Option<String>,
    max_reject_rate: f64,
) -> PyResult<(BTreeMap<String, Vec<PyBar>>, usize, usize)> {
    let mut options = IngestOptions {
        max_reject_rate,
        ..IngestOptions::default()
    };
    if let Some(salt) = salt {
        options.anonymizer = Anonymizer::new(salt);
    }
    let report = py
        .detach(|| load_many(&paths, &options))
        .map_err(|e| PyIOError::new_err(e.to_string()))?;
    let series = report
        .series
        .iter()
        .map(|s| (s.symbol_id().to_string(), s.bars().iter().copied().map(PyBar).collect()))
        .collect();
    Ok((series, report.rows_read, report.rejected.len()))
}

/// Text form of bars as embedded in annotation prompts.
#[pyfunction]
fn serialize_kline(bars: Vec<PyRef<'_, PyBar>>) -> PyResult<String> {
    kline_corpus::prompt::serialize_kline(&bars_of(&bars)).map_err(value_err)
}

/// `(direction, magnitude)` of a predict segment, direction one of up/down/flat.
#[pyfunction]
#[pyo3(signature = (bars, epsilon=trend::DEFAULT_EPSILON))]
fn trend_label(bars: Vec<PyRef<'_, PyBar>>, epsilon: f64) -> PyResult<(&'static str, f64)> {
    let label = trend::trend_label(&bars_of(&bars), epsilon).map_err(value_err)?;
    Ok((label.direction.as_str(), label.magnitude_f64()))
}

/// Renders bars to PNG. Returns `(png_bytes, sha256_hex)`.
#[pyfunction]
fn render_chart<'py>(
    py: Python<'py>,
    bars: Vec<PyRef<'py, PyBar>>,
    spec: &PyChartSpec,
) -> PyResult<(Bound<'py, PyBytes>, String)> {
    let bars = bars_of(&bars);
    if bars.is_empty() {
        return Err(PyValueError::new_err("no bars to render"));
    }
    let spec = spec.0.clone();
    let png = py
        .detach(|| draw_chart(&bars, &spec).encode_png())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let hash = sha256_hex(&png);
    Ok((PyBytes::new(py, &png), hash))
}

/// Splits an `@`-separated completion into `(question, answer)` pairs without
/// checking turn count or content.
#[pyfunction]
fn split_dialog(raw: &str) -> PyResult<Vec<(String, String)>> {
    parse::split_dialog(raw)
        .map(|turns| turns.into_iter().map(|t| (t.question, t.answer)).collect())
        .map_err(|e| PyValueError::new_err(format!("{}: {e}", e.code())))
}

/// Full instruction-dialog check with the default content rules. Raises
/// ValueError whose message starts with the reject code.
#[pyfunction]
fn parse_instruct_dialog(raw: &str) -> PyResult<Vec<(String, String)>> {
    parse::parse_instruct_dialog(raw, &ContentPolicy::default())
        .map(|turns| turns.into_iter().map(|t| (t.question, t.answer)).collect())
        .map_err(|e| PyValueError::new_err(format!("{}: {e}", e.code())))
}

/// Generates (or resumes) a corpus and returns the run summary. The HTTP
/// backend reads its key from the environment variable the config names.
#[pyfunction]
fn run(py: Python<'_>, config: &PyConfig) -> PyResult<Py<PyAny>> {
    let config = config.0.clone();
    let summary = py
        .detach(|| {
            config.validate()?;
            let backend = build_backend(&config)?;
            run_pipeline(&config, backend.as_ref(), &AtomicBool::new(false))
        })
        .map_err(|e: kline_corpus::pipeline::PipelineError| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &summary)
}

/// Re-checks a written corpus and returns the validation report.
#[pyfunction]
fn validate_corpus(py: Python<'_>, corpus: PathBuf) -> PyResult<Py<PyAny>> {
    let report = py
        .detach(|| kline_corpus::validate::validate_corpus(&corpus))
        .map_err(|e| PyIOError::new_err(e.to_string()))?;
    to_py(py, &report)
}

/// All records of a corpus, pretraining first, as LLaVA-style dicts.
#[pyfunction]
fn read_records(py: Python<'_>, corpus: PathBuf) -> PyResult<Py<PyAny>> {
    let records = load_records(&corpus).map_err(|e| PyIOError::new_err(e.to_string()))?;
    to_py(py, &records)
}

/// Word-count statistics per stage.
#[pyfunction]
#[pyo3(signature = (corpus, format="dict"))]
fn corpus_stats(py: Python<'_>, corpus: PathBuf, format: &str) -> PyResult<Py<PyAny>> {
    let records = load_records(&corpus).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let stats = compute_stats(&records).map_err(value_err)?;
    match format {
        "dict" => to_py(py, &stats),
        "table" => Ok(stats.render_table().into_pyobject(py)?.into_any().unbind()),
        "csv" => Ok(stats.render_csv().into_pyobject(py)?.into_any().unbind()),
        other => Err(PyValueError::new_err(format!("unknown format {other:?}"))),
    }
}

/// Scores `{record_id: "up"|"down"|"flat"|None}` against the corpus labels.
#[pyfunction]
fn score_predictions(
    py: Python<'_>,
    corpus: PathBuf,
    predictions: BTreeMap<String, Option<String>>,
) -> PyResult<Py<PyAny>> {
    let records = load_records(&corpus).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let mut preds = BTreeMap::new();
    for (id, dir) in predictions {
        let dir = dir.map(|d| d.parse::<Direction>()).transpose().map_err(value_err)?;
        let id = serde_json::from_value(id.into()).map_err(value_err)?;
        preds.insert(id, dir);
    }
    let report = trend::score_corpus(&records, &preds).map_err(value_err)?;
    to_py(py, &report)
}

#[pymodule]
#[pyo3(name = "kline_corpus")]
fn kline_corpus_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBar>()?;
    m.add_class::<PyChartSpec>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(synthetic_csv, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(serialize_kline, m)?)?;
    m.add_function(wrap_pyfunction!(trend_label, m)?)?;
    m.add_function(wrap_pyfunction!(render_chart, m)?)?;
    m.add_function(wrap_pyfunction!(split_dialog, m)?)?;
    m.add_function(wrap_pyfunction!(parse_instruct_dialog, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(validate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(read_records, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_stats, m)?)?;
    m.add_function(wrap_pyfunction!(score_predictions, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
