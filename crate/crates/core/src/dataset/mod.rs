//! LETOR / SVMlight ranking data.
//!
//! A [`Corpus`] owns one split: every (query, document) pair is stored once
//! as a [`Document`] and each [`QuerySession`] lists the indices of its
//! documents in logged order. The corpus is never mutated after
//! construction; cutoffs produce new sessions.

mod letor;
mod padding;
pub mod synthetic;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use letor::{parse_letor, parse_letor_reader, to_letor};
pub use padding::{pad_batch, PaddedBatch, PaddingPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub features: Vec<f64>,
    pub relevance_grade: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySession {
    pub query_id: String,
    /// Corpus document indices in logged order.
    pub doc_ids: Vec<usize>,
    /// Relevance grades aligned with `doc_ids`.
    pub labels: Vec<u32>,
}

impl QuerySession {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidValue(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    sessions: Vec<QuerySession>,
    feature_size: usize,
    g_max: u32,
    split: Split,
}

impl Corpus {
    /// Builds a corpus from already-dense documents. Every document must
    /// have `feature_size` features and every session index must be valid.
    pub fn new(documents: Vec<Document>, sessions: Vec<QuerySession>, split: Split) -> Result<Self> {
        if sessions.is_empty() || documents.is_empty() {
            return Err(Error::EmptyInput("corpus has no queries".into()));
        }
        let feature_size = documents[0].features.len();
        if feature_size == 0 {
            return Err(Error::InvalidValue("feature size must be positive".into()));
        }
        for doc in &documents {
            if doc.features.len() != feature_size {
                return Err(Error::DimensionMismatch {
                    expected: feature_size,
                    actual: doc.features.len(),
                });
            }
        }
        for session in &sessions {
            if session.doc_ids.len() != session.labels.len() {
                return Err(Error::Contract(format!(
                    "query {}: {} ids but {} labels",
                    session.query_id,
                    session.doc_ids.len(),
                    session.labels.len()
                )));
            }
            for (&id, &label) in session.doc_ids.iter().zip(&session.labels) {
                let doc = documents.get(id).ok_or_else(|| {
                    Error::Contract(format!("query {}: document {id} out of range", session.query_id))
                })?;
                if doc.relevance_grade != label {
                    return Err(Error::Contract(format!(
                        "query {}: label of document {id} disagrees with its grade",
                        session.query_id
                    )));
                }
            }
        }
        let g_max = documents.iter().map(|d| d.relevance_grade).max().unwrap_or(0);
        Ok(Self {
            documents,
            sessions,
            feature_size,
            g_max,
            split,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, id: usize) -> &Document {
        &self.documents[id]
    }

    pub fn sessions(&self) -> &[QuerySession] {
        &self.sessions
    }

    pub fn session(&self, index: usize) -> &QuerySession {
        &self.sessions[index]
    }

    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn num_documents(&self) -> usize {
        self.documents.len()
    }

    pub fn feature_size(&self) -> usize {
        self.feature_size
    }

    /// Maximum relevance grade: the largest observed grade unless overridden.
    pub fn g_max(&self) -> u32 {
        self.g_max
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Overrides the maximum grade. Fails if an observed grade exceeds it.
    pub fn with_g_max(mut self, g_max: u32) -> Result<Self> {
        let observed = self.documents.iter().map(|d| d.relevance_grade).max().unwrap_or(0);
        if observed > g_max {
            return Err(Error::InvalidValue(format!(
                "g_max override {g_max} is below observed grade {observed}"
            )));
        }
        self.g_max = g_max;
        Ok(self)
    }

    /// Truncates every session to its first `cutoff` documents (0: no limit).
    pub fn with_list_cutoff(mut self, cutoff: usize) -> Self {
        if cutoff > 0 {
            self.sessions = self.sessions.iter().map(|s| apply_cutoff(s, cutoff)).collect();
        }
        self
    }

    /// Feature vectors of a session's documents, in logged order.
    pub fn session_features(&self, index: usize) -> Vec<Vec<f64>> {
        self.sessions[index]
            .doc_ids
            .iter()
            .map(|&id| self.documents[id].features.clone())
            .collect()
    }
}

/// First `min(cutoff, len)` documents of `session` in logged order;
/// `cutoff == 0` means no limit.
pub fn apply_cutoff(session: &QuerySession, cutoff: usize) -> QuerySession {
    if cutoff == 0 || cutoff >= session.len() {
        return session.clone();
    }
    QuerySession {
        query_id: session.query_id.clone(),
        doc_ids: session.doc_ids[..cutoff].to_vec(),
        labels: session.labels[..cutoff].to_vec(),
    }
}

/// Resolves `<data_dir>/<prefix>.txt`, falling back to `<data_dir>/<prefix>`.
pub fn split_path(data_dir: &Path, prefix: &str) -> PathBuf {
    let with_ext = data_dir.join(format!("{prefix}.txt"));
    if with_ext.exists() {
        with_ext
    } else {
        data_dir.join(prefix)
    }
}

pub fn load_split(data_dir: &Path, prefix: &str, split: Split) -> Result<Corpus> {
    let path = split_path(data_dir, prefix);
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let corpus = parse_letor_reader(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    Ok(corpus.with_split(split))
}
