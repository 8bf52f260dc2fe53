use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{OhlcvBar, Series, SeriesError, SymbolId};

pub const DEFAULT_SALT: &str = "kline-corpus/v1";

/// A series still keyed by its raw exchange ticker. Never leaves the ingest layer
/// except through [`Anonymizer::anonymize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSeries {
    pub ticker: String,
    pub bars: Vec<OhlcvBar>,
}

/// Maps raw tickers to salted content-hash identifiers.
#[derive(Debug, Clone)]
pub struct Anonymizer {
    salt: String,
}

impl Default for Anonymizer {
    fn default() -> Self {
        Anonymizer::new(DEFAULT_SALT)
    }
}

impl Anonymizer {
    pub fn new(salt: impl Into<String>) -> Self {
        Anonymizer { salt: salt.into() }
    }

    pub fn opaque_id(&self, ticker: &str) -> SymbolId {
        let mut hasher = Sha256::new();
        hasher.update(self.salt.as_bytes());
        hasher.update([0u8]);
        hasher.update(ticker.trim().as_bytes());
        let digest = hasher.finalize();
        SymbolId(format!("sym_{}", hex::encode(&digest[..8])))
    }

    pub fn anonymize(&self, raw: RawSeries) -> Result<Series, SeriesError> {
        Series::new(self.opaque_id(&raw.ticker), raw.bars)
    }
}

/// Sidecar record of which raw ticker produced which opaque id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TickerMap {
    entries: BTreeMap<String, SymbolId>,
}

impl TickerMap {
    pub fn insert(&mut self, ticker: impl Into<String>, id: SymbolId) {
        self.entries.insert(ticker.into(), id);
    }

    pub fn get(&self, ticker: &str) -> Option<&SymbolId> {
        self.entries.get(ticker)
    }

    pub fn tickers(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: TickerMap) {
        self.entries.extend(other.entries);
    }

    /// Writes `ticker,symbol_id` rows, sorted by ticker.
    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["ticker", "symbol_id"])?;
        for (ticker, id) in &self.entries {
            writer.write_record([ticker.as_str(), id.as_str()])?;
        }
        writer.flush()
    }

    pub fn read_csv(path: &Path) -> io::Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut map = TickerMap::default();
        for row in reader.records() {
            let row = row?;
            match (row.get(0), row.get(1)) {
                (Some(t), Some(id)) => map.insert(t, SymbolId(id.to_string())),
                _ => {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        "ticker map row needs two columns",
                    ))
                }
            }
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_ticker_same_id() {
        let a = Anonymizer::default();
        assert_eq!(a.opaque_id("600519"), a.opaque_id("600519"));
    }

    #[test]
    fn different_tickers_differ() {
        let a = Anonymizer::default();
        assert_ne!(a.opaque_id("600519"), a.opaque_id("000001"));
    }

    #[test]
    fn salt_changes_id() {
        assert_ne!(
            Anonymizer::new("a").opaque_id("600519"),
            Anonymizer::new("b").opaque_id("600519")
        );
    }

    #[test]
    fn id_does_not_contain_ticker() {
        let id = Anonymizer::default().opaque_id("600519");
        assert!(!id.as_str().contains("600519"));
        assert!(id.as_str().starts_with("sym_"));
        assert_eq!(id.as_str().len(), 4 + 16);
    }

    #[test]
    fn ticker_map_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/map.csv");
        let anon = Anonymizer::default();
        let mut map = TickerMap::default();
        map.insert("600519", anon.opaque_id("600519"));
        map.insert("000001", anon.opaque_id("000001"));
        map.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("ticker,symbol_id\n000001,sym_"));
        assert_eq!(TickerMap::read_csv(&path).unwrap(), map);
    }
}
