//! Elasticity priors: a static lookup from product category to a plausible
//! own-price elasticity range, with an elastic/inelastic classifier.
//!
//! The built-in table holds textbook point values and ranges; point values
//! are returned as degenerate ranges. Lookups never fail: an unknown
//! category falls back to the training range (-3.0, -1.0), flagged as a
//! default. Alternative providers (a user-supplied JSON table, or an
//! external classification service) plug in through [`PriorProvider`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum PriorError {
    #[error("prior table parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid prior range ({low}, {high}) for '{category}'")]
    InvalidRange {
        category: String,
        low: f64,
        high: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorSource {
    TextbookTable,
    UserSupplied,
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityPrior {
    pub category: String,
    pub low: f64,
    pub high: f64,
    pub source: PriorSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElasticityClass {
    Elastic,
    Inelastic,
    Mixed,
}

/// Training elasticity range used when no prior is known.
pub const DEFAULT_RANGE: (f64, f64) = (-3.0, -1.0);

/// Anything that can supply an elasticity prior for a category.
pub trait PriorProvider {
    fn lookup(&self, category: &str) -> ElasticityPrior;
}

#[derive(Debug, Clone, Deserialize, Serialize)]
struct TableEntry {
    category: String,
    low: f64,
    high: f64,
}

/// The bundled textbook table (shipped as a JSON resource).
const BUILTIN_TABLE: &str = include_str!("priors_table.json");

/// Exact-match table over normalized (lowercased, trimmed) category keys.
#[derive(Debug, Clone)]
pub struct PriorTable {
    entries: Vec<TableEntry>,
    source: PriorSource,
}

fn normalize_key(s: &str) -> String {
    s.trim().to_lowercase()
}

impl PriorTable {
    pub fn builtin() -> Self {
        PriorTable {
            entries: serde_json::from_str(BUILTIN_TABLE)
                .expect("bundled prior table is valid JSON"),
            source: PriorSource::TextbookTable,
        }
    }

    /// Loads a user-supplied table from JSON text with the same schema as
    /// the bundled resource: `[{"category": ..., "low": ..., "high": ...}]`.
    pub fn from_json(text: &str) -> Result<Self, PriorError> {
        let entries: Vec<TableEntry> = serde_json::from_str(text)?;
        for e in &entries {
            if !(e.low <= e.high && e.high < 0.0) {
                return Err(PriorError::InvalidRange {
                    category: e.category.clone(),
                    low: e.low,
                    high: e.high,
                });
            }
        }
        Ok(PriorTable {
            entries,
            source: PriorSource::UserSupplied,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl PriorProvider for PriorTable {
    fn lookup(&self, category: &str) -> ElasticityPrior {
        let key = normalize_key(category);
        for e in &self.entries {
            if normalize_key(&e.category) == key {
                return ElasticityPrior {
                    category: e.category.clone(),
                    low: e.low,
                    high: e.high,
                    source: self.source,
                };
            }
        }
        ElasticityPrior {
            category: category.to_string(),
            low: DEFAULT_RANGE.0,
            high: DEFAULT_RANGE.1,
            source: PriorSource::Default,
        }
    }
}

/// Convenience lookup against the bundled table.
pub fn lookup(category: &str) -> ElasticityPrior {
    PriorTable::builtin().lookup(category)
}

/// Classifies a range: elastic when the whole range is at or beyond -1,
/// inelastic when it sits entirely inside (-1, 0), mixed when it straddles.
pub fn classify(low: f64, high: f64) -> ElasticityClass {
    if high <= -1.0 {
        ElasticityClass::Elastic
    } else if low >= -1.0 {
        ElasticityClass::Inelastic
    } else {
        ElasticityClass::Mixed
    }
}
