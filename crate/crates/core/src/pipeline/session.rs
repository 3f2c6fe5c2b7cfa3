use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{Candidate, ConceptSource, Engine, PipelineError, Prediction};
use crate::bank::case_fold;
use crate::regress::SolverConfig;
use crate::vecstore::{normalize, Embedder};

pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    Delete { index: usize },
    Restore { index: usize },
    Insert { concept: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub seq: usize,
    pub at_ms: u64,
    #[serde(flatten)]
    pub op: EditOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConcept {
    #[serde(flatten)]
    pub candidate: Candidate,
    /// Weight in the current prediction; 0 when deleted or not yet fitted.
    pub weight: f64,
    pub deleted: bool,
    /// Position among the base prediction's candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_position: Option<usize>,
}

/// An editable view of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSession {
    pub session_id: String,
    pub k: usize,
    pub solver: SolverConfig,
    pub base: Prediction,
    pub current: Prediction,
    pub concepts: Vec<SessionConcept>,
    pub history: Vec<HistoryEntry>,
    /// Edits were applied since the last recompute.
    pub pending: bool,
    pub created_ms: u64,
    pub last_access_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl InterventionSession {
    pub fn new(base: Prediction, k: usize, solver: SolverConfig) -> Self {
        let concepts = base
            .ranked_positions()
            .into_iter()
            .map(|j| SessionConcept {
                candidate: base.candidates[j].clone(),
                weight: base.weights.w[j],
                deleted: false,
                base_position: Some(j),
            })
            .collect();
        let now = now_ms();
        Self {
            session_id: uuid::Uuid::new_v4().to_string(),
            k,
            solver,
            current: base.clone(),
            base,
            concepts,
            history: Vec::new(),
            pending: false,
            created_ms: now,
            last_access_ms: now,
        }
    }

    /// Applies one edit and appends it to the history. Inserted concepts are
    /// embedded by `embedder`; without one, only bank concepts can be inserted
    /// and they reuse their bank row.
    pub fn apply_edit(&mut self, engine: &Engine, op: EditOp, embedder: Option<&dyn Embedder>) -> Result<(), PipelineError> {
        match &op {
            EditOp::Delete { index } | EditOp::Restore { index } => {
                let deleted = matches!(op, EditOp::Delete { .. });
                let c = self.concepts.get_mut(*index).ok_or(PipelineError::UnknownConcept(*index))?;
                c.deleted = deleted;
            }
            EditOp::Insert { concept } => {
                let text = concept.trim();
                if text.is_empty() {
                    return Err(PipelineError::InvalidParameter("empty concept".into()));
                }
                let key = case_fold(text);
                if !self.concepts.iter().any(|c| !c.deleted && case_fold(&c.candidate.text) == key) {
                    let bank_index = engine.bank().find(text);
                    let embedding = match (embedder, bank_index) {
                        (Some(e), _) => {
                            let m = e.embed(&[text.to_string()])?;
                            if m.dim() != engine.dim() {
                                return Err(PipelineError::DimensionMismatch {
                                    expected: engine.dim(),
                                    actual: m.dim(),
                                });
                            }
                            normalize(m.row(0))?.into_values()
                        }
                        (None, Some(i)) => engine.bank().embeddings().row(i).to_vec(),
                        (None, None) => {
                            return Err(PipelineError::InvalidParameter(format!(
                                "{text:?} is not in the bank and no embedding provider is configured"
                            )))
                        }
                    };
                    self.concepts.push(SessionConcept {
                        candidate: Candidate {
                            text: text.to_string(),
                            bank_index,
                            source: ConceptSource::Inserted,
                            embedding: Some(embedding),
                        },
                        weight: 0.0,
                        deleted: false,
                        base_position: None,
                    });
                }
            }
        }
        self.history.push(HistoryEntry {
            seq: self.history.len(),
            at_ms: now_ms(),
            op,
        });
        self.pending = true;
        Ok(())
    }

    /// Zeroes deleted concepts; if any inserted concept is active, re-fits
    /// least squares on the remaining nonzero and inserted concepts.
    pub fn recompute(&mut self, engine: &Engine) -> Result<&Prediction, PipelineError> {
        let deleted: Vec<usize> = self
            .concepts
            .iter()
            .filter(|c| c.deleted)
            .filter_map(|c| c.base_position)
            .collect();
        let inserted: Vec<Candidate> = self
            .concepts
            .iter()
            .filter(|c| !c.deleted && c.candidate.source == ConceptSource::Inserted)
            .map(|c| c.candidate.clone())
            .collect();
        self.current = if inserted.is_empty() {
            engine.with_deleted(&self.base, &deleted)?
        } else {
            let mut candidates: Vec<Candidate> = (0..self.base.candidates.len())
                .filter(|j| self.base.weights.w[*j] != 0.0 && !deleted.contains(j))
                .map(|j| self.base.candidates[j].clone())
                .collect();
            candidates.extend(inserted);
            engine.refit(&self.base, candidates)?
        };
        let weights: HashMap<String, f64> = self
            .current
            .candidates
            .iter()
            .zip(&self.current.weights.w)
            .map(|(c, &w)| (case_fold(&c.text), w))
            .collect();
        for c in &mut self.concepts {
            c.weight = if c.deleted { 0.0 } else { weights.get(&case_fold(&c.candidate.text)).copied().unwrap_or(0.0) };
        }
        self.pending = false;
        Ok(&self.current)
    }
}

/// In-memory sessions with a sliding expiry.
#[derive(Debug)]
pub struct SessionStore {
    ttl: Duration,
    sessions: Mutex<HashMap<String, Arc<Mutex<InterventionSession>>>>,
    expired: Mutex<HashSet<String>>,
    snapshot: Option<PathBuf>,
}

impl Default for SessionStore {
    fn default() -> Self {
        Self::new(DEFAULT_SESSION_TTL)
    }
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            sessions: Mutex::new(HashMap::new()),
            expired: Mutex::new(HashSet::new()),
            snapshot: None,
        }
    }

    /// Persists all sessions to `path` after every [`SessionStore::persist`].
    /// Sessions found in an existing file are restored.
    pub fn with_snapshot(mut self, path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref().to_path_buf();
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            let saved: Vec<InterventionSession> = serde_json::from_str(&text)
                .map_err(|e| PipelineError::InvalidParameter(format!("session snapshot {}: {e}", path.display())))?;
            let mut map = self.sessions.lock().unwrap();
            for s in saved {
                map.insert(s.session_id.clone(), Arc::new(Mutex::new(s)));
            }
        }
        self.snapshot = Some(path);
        Ok(self)
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn insert(&self, session: InterventionSession) -> Arc<Mutex<InterventionSession>> {
        let id = session.session_id.clone();
        let handle = Arc::new(Mutex::new(session));
        self.sessions.lock().unwrap().insert(id, handle.clone());
        handle
    }

    /// Looks a session up and refreshes its expiry.
    pub fn get(&self, id: &str) -> Result<Arc<Mutex<InterventionSession>>, PipelineError> {
        let mut map = self.sessions.lock().unwrap();
        let Some(handle) = map.get(id).cloned() else {
            return Err(if self.expired.lock().unwrap().contains(id) {
                PipelineError::ExpiredSession(id.to_string())
            } else {
                PipelineError::UnknownSession(id.to_string())
            });
        };
        let now = now_ms();
        let mut s = handle.lock().unwrap();
        if now.saturating_sub(s.last_access_ms) > self.ttl.as_millis() as u64 {
            drop(s);
            map.remove(id);
            self.expired.lock().unwrap().insert(id.to_string());
            return Err(PipelineError::ExpiredSession(id.to_string()));
        }
        s.last_access_ms = now;
        drop(s);
        Ok(handle)
    }

    /// Drops every expired session; returns how many were removed.
    pub fn sweep(&self) -> usize {
        let now = now_ms();
        let ttl = self.ttl.as_millis() as u64;
        let mut map = self.sessions.lock().unwrap();
        let stale: Vec<String> = map
            .iter()
            .filter(|(_, s)| now.saturating_sub(s.lock().unwrap().last_access_ms) > ttl)
            .map(|(id, _)| id.clone())
            .collect();
        let mut expired = self.expired.lock().unwrap();
        for id in &stale {
            map.remove(id);
            expired.insert(id.clone());
        }
        stale.len()
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the snapshot file, if one is configured.
    pub fn persist(&self) -> Result<(), PipelineError> {
        let Some(path) = &self.snapshot else { return Ok(()) };
        let handles: Vec<_> = self.sessions.lock().unwrap().values().cloned().collect();
        let mut all: Vec<InterventionSession> = handles.iter().map(|h| h.lock().unwrap().clone()).collect();
        all.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(&all).map_err(|e| PipelineError::InvalidParameter(e.to_string()))?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}
