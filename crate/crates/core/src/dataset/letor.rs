use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use super::{Corpus, Document, QuerySession, Split};
use crate::error::{Error, Result};

struct RawLine {
    grade: u32,
    qid: String,
    features: Vec<(usize, f64)>,
}

fn parse_grade(token: &str, line: usize) -> Result<u32> {
    let value: f64 = token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("non-numeric grade `{token}`"),
    })?;
    if !value.is_finite() || value.fract() != 0.0 {
        return Err(Error::Parse {
            line,
            message: format!("grade `{token}` is not an integer"),
        });
    }
    // Negative labels are clamped to 0.
    Ok(value.max(0.0) as u32)
}

fn parse_line(text: &str, line: usize) -> Result<Option<RawLine>> {
    let body = match text.find('#') {
        Some(pos) => &text[..pos],
        None => text,
    };
    let mut tokens = body.split_whitespace();
    let Some(grade_token) = tokens.next() else {
        return Ok(None);
    };
    let grade = parse_grade(grade_token, line)?;
    let qid = match tokens.next() {
        Some(tok) if tok.starts_with("qid:") && tok.len() > 4 => tok[4..].to_string(),
        _ => {
            return Err(Error::Parse {
                line,
                message: "missing qid".into(),
            })
        }
    };
    let mut features = Vec::new();
    for tok in tokens {
        let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
            line,
            message: format!("malformed feature `{tok}`"),
        })?;
        let idx: usize = idx.parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad feature index `{idx}`"),
        })?;
        if idx == 0 {
            return Err(Error::Parse {
                line,
                message: "feature indices are 1-based".into(),
            });
        }
        let val: f64 = val.parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad feature value `{val}`"),
        })?;
        if !val.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("non-finite feature value `{val}`"),
            });
        }
        features.push((idx, val));
    }
    Ok(Some(RawLine { grade, qid, features }))
}

/// Parses LETOR text (`<grade> qid:<id> <idx>:<val> ... [# comment]`).
///
/// Documents are grouped by qid in order of first appearance; absent
/// features are 0.0 and the feature size is the largest index seen.
pub fn parse_letor(text: &str) -> Result<Corpus> {
    parse_letor_reader(text.as_bytes())
}

pub fn parse_letor_reader<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut raw = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(parsed) = parse_line(&line, line_no)? {
            raw.push(parsed);
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput("no LETOR lines".into()));
    }
    let feature_size = raw
        .iter()
        .flat_map(|r| r.features.iter().map(|&(idx, _)| idx))
        .max()
        .unwrap_or(0);
    if feature_size == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no features found".into(),
        });
    }

    let mut documents = Vec::with_capacity(raw.len());
    let mut sessions: Vec<QuerySession> = Vec::new();
    let mut by_qid: HashMap<String, usize> = HashMap::new();
    for line in raw {
        let mut features = vec![0.0; feature_size];
        for (idx, val) in line.features {
            features[idx - 1] = val;
        }
        let id = documents.len();
        documents.push(Document {
            features,
            relevance_grade: line.grade,
        });
        let slot = *by_qid.entry(line.qid.clone()).or_insert_with(|| {
            sessions.push(QuerySession {
                query_id: line.qid.clone(),
                doc_ids: Vec::new(),
                labels: Vec::new(),
            });
            sessions.len() - 1
        });
        sessions[slot].doc_ids.push(id);
        sessions[slot].labels.push(line.grade);
    }
    Corpus::new(documents, sessions, Split::Train)
}

/// Writes every feature densely so that reparsing reproduces the corpus.
pub fn to_letor(corpus: &Corpus) -> String {
    let mut out = String::new();
    for session in corpus.sessions() {
        for &id in &session.doc_ids {
            let doc = corpus.document(id);
            write!(out, "{} qid:{}", doc.relevance_grade, session.query_id).unwrap();
            for (i, v) in doc.features.iter().enumerate() {
                write!(out, " {}:{}", i + 1, v).unwrap();
            }
            out.push('\n');
        }
    }
    out
}
