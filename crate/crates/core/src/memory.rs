//! Per-question store of high-confidence facts carried across hops.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::extraction::fold_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemorySource {
    Extraction,
    Retrieval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub key: String,
    pub surface: String,
    pub relation: Option<String>,
    pub confidence: f64,
    pub hop_added: usize,
    pub source: MemorySource,
}

impl MemoryRecord {
    pub fn new(
        surface: impl Into<String>,
        relation: Option<String>,
        confidence: f64,
        hop_added: usize,
        source: MemorySource,
    ) -> Self {
        let surface = surface.into();
        Self {
            key: fold_key(&surface),
            surface,
            relation,
            confidence,
            hop_added,
            source,
        }
    }

    fn render_line(&self) -> String {
        match &self.relation {
            Some(relation) => format!("- {} ({relation})\n", self.surface),
            None => format!("- {}\n", self.surface),
        }
    }
}

/// Keyed by folded surface; iteration follows first insertion.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryStore {
    records: IndexMap<String, MemoryRecord>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, surface: &str) -> Option<&MemoryRecord> {
        self.records.get(&fold_key(surface))
    }

    pub fn records(&self) -> impl Iterator<Item = &MemoryRecord> {
        self.records.values()
    }

    /// Inserts a new key at the end, or raises an existing record to the
    /// higher confidence, taking that observation's surface and relation.
    pub fn upsert(&mut self, record: MemoryRecord) {
        match self.records.get_mut(&record.key) {
            Some(existing) => {
                if record.confidence > existing.confidence {
                    existing.confidence = record.confidence;
                    existing.surface = record.surface;
                    existing.relation = record.relation;
                }
            }
            None => {
                self.records.insert(record.key.clone(), record);
            }
        }
    }

    /// `- surface (relation)` lines by descending confidence, ties by
    /// insertion order, cut to the longest whole-line prefix within budget.
    pub fn render(&self, budget_chars: usize) -> String {
        let mut ordered: Vec<&MemoryRecord> = self.records.values().collect();
        ordered.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        let mut out = String::new();
        let mut used = 0;
        for record in ordered {
            let line = record.render_line();
            let cost = line.chars().count();
            if used + cost > budget_chars {
                break;
            }
            used += cost;
            out.push_str(&line);
        }
        out
    }
}
