//! Entity table, dialog-state-driven querying and the match-degree vector.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Var};
use crate::corpus::split_state;
use crate::error::{MossError, Result};

pub const DEFAULT_KB_DIM: usize = 6;

pub type Entity = BTreeMap<String, String>;
pub type Query = BTreeMap<String, String>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawKb {
    informable: Vec<String>,
    requestable: Vec<String>,
    entities: Vec<Entity>,
}

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    informable: Vec<String>,
    requestable: Vec<String>,
    entities: Vec<Entity>,
    // case-folded value -> informable slot
    value_slot: HashMap<String, String>,
}

impl KnowledgeBase {
    pub fn new(
        informable: Vec<String>,
        requestable: Vec<String>,
        entities: Vec<Entity>,
    ) -> Result<Self> {
        let mut names = HashSet::new();
        for (i, e) in entities.iter().enumerate() {
            if let Some(missing) = informable.iter().find(|s| !e.contains_key(*s)) {
                return Err(MossError::contract(format!(
                    "entity {i} lacks informable slot `{missing}`"
                )));
            }
            if let Some(name) = e.get("name") {
                if !names.insert(name.clone()) {
                    return Err(MossError::contract(format!(
                        "duplicate entity name `{name}`"
                    )));
                }
            }
        }
        let mut value_slot = HashMap::new();
        for slot in &informable {
            for e in &entities {
                value_slot
                    .entry(e[slot].to_lowercase())
                    .or_insert_with(|| slot.clone());
            }
        }
        Ok(KnowledgeBase {
            informable,
            requestable,
            entities,
            value_slot,
        })
    }

    pub fn empty(informable: Vec<String>, requestable: Vec<String>) -> Self {
        KnowledgeBase {
            informable,
            requestable,
            entities: Vec::new(),
            value_slot: HashMap::new(),
        }
    }

    pub fn informable(&self) -> &[String] {
        &self.informable
    }

    pub fn requestable(&self) -> &[String] {
        &self.requestable
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    /// Informable slot that `value` belongs to, if any.
    pub fn slot_of(&self, value: &str) -> Option<&str> {
        self.value_slot
            .get(&value.to_lowercase())
            .map(String::as_str)
    }

    /// Entities satisfying every constraint of `q` (case-folded equality)
    /// and the bucketed match degree.
    pub fn query(&self, q: &Query, kb_dim: usize) -> Result<(Vec<&Entity>, MatchDegree)> {
        if let Some(bad) = q.keys().find(|k| !self.informable.contains(k)) {
            return Err(MossError::contract(format!(
                "query uses unknown slot `{bad}`"
            )));
        }
        let matches: Vec<&Entity> = self
            .entities
            .iter()
            .filter(|e| {
                q.iter().all(|(slot, v)| {
                    e.get(slot)
                        .is_some_and(|ev| ev.to_lowercase() == v.to_lowercase())
                })
            })
            .collect();
        let degree = MatchDegree::from_count(matches.len(), kb_dim);
        Ok((matches, degree))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&RawKb {
            informable: self.informable.clone(),
            requestable: self.requestable.clone(),
            entities: self.entities.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawKb = serde_json::from_str(text)?;
        Self::new(raw.informable, raw.requestable, raw.entities)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| MossError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MossError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Query from the constraint segment of a decoded dialog state. The first
/// value seen for a slot wins; tokens that are not informable values are
/// ignored.
pub fn state_to_query(state: &[String], kb: &KnowledgeBase) -> Query {
    let (constraints, _) = split_state(state);
    let mut q = Query::new();
    for tok in constraints {
        if let Some(slot) = kb.slot_of(tok) {
            q.entry(slot.to_string())
                .or_insert_with(|| tok.to_lowercase());
        }
    }
    q
}

/// One-hot match degree: bucket `min(count, dim - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchDegree {
    bucket: usize,
    dim: usize,
}

impl MatchDegree {
    pub fn from_count(count: usize, dim: usize) -> Self {
        assert!(dim > 0, "match degree needs at least one bucket");
        MatchDegree {
            bucket: count.min(dim - 1),
            dim,
        }
    }

    pub fn bucket(&self) -> usize {
        self.bucket
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn one_hot<T: Real>(&self) -> Vec<T> {
        let mut v = vec![T::zero(); self.dim];
        v[self.bucket] = T::one();
        v
    }
}

/// `[emb ; k_t]` for every row of `emb`.
pub fn condition_embedding<T: Real>(
    tape: &mut Tape<'_, T>,
    emb: Var,
    k: &MatchDegree,
) -> Result<Var> {
    let rows = tape.shape(emb).0;
    let mut data = Vec::with_capacity(rows * k.dim());
    for _ in 0..rows {
        data.extend(k.one_hot::<T>());
    }
    let kv = tape.constant(rows, k.dim(), data)?;
    tape.concat_cols(&[emb, kv])
}
