//! Candidate pools and the JSONL record format.
//!
//! One line of a record file holds one query: its `K` sampled candidates with
//! their raw features, optional pairwise similarity / entailment matrices,
//! and an optional most-likely-generation answer used as a point-prediction
//! baseline.
//!
//! Loading normalizes the data so that downstream code can rely on it:
//! similarity matrices are symmetrized as `(S + Sᵀ)/2` with a unit diagonal,
//! entailment matrices get a true diagonal, and values inside `[0, 1]` are
//! clamped after a `1e-9` tolerance check.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RANGE_SLACK: f64 = 1e-9;

/// One sampled answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(default)]
    pub text: String,
    /// Raw uncertainty feature, oriented so that larger means more reliable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_raw: Option<f64>,
    /// Similarity to the gold answer; input to the admission rule.
    pub sim_to_gold: f64,
    /// Reliability score in `[0, 1]`, absent until scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_score: Option<f64>,
}

impl Candidate {
    pub fn new(sim_to_gold: f64) -> Self {
        Self {
            text: String::new(),
            u_raw: None,
            sim_to_gold,
            f_score: None,
        }
    }

    pub fn with_score(sim_to_gold: f64, f_score: f64) -> Self {
        Self {
            f_score: Some(f_score),
            ..Self::new(sim_to_gold)
        }
    }
}

/// A query together with its pool of `K` sampled candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_matrix: Option<Vec<Vec<f64>>>,
    /// `entail_matrix[j][k]` is true when candidate `j` entails candidate `k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entail_matrix: Option<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlg: Option<Candidate>,
    /// Semantic cluster label per candidate, written back by scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<usize>>,
}

impl CandidateRecord {
    pub fn new(id: impl Into<String>, candidates: Vec<Candidate>) -> Self {
        Self {
            id: id.into(),
            candidates,
            sim_matrix: None,
            entail_matrix: None,
            mlg: None,
            clusters: None,
        }
    }

    /// Sampling budget of this record.
    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    /// Checks the schema invariants and normalizes matrices in place.
    ///
    /// `line` is only used to label errors (1-based; pass 0 when the record
    /// did not come from a file).
    pub fn validate(&mut self, line: usize) -> Result<()> {
        let k = self.k();
        let id = self.id.clone();
        let schema = |message: String| Error::Schema {
            line,
            id: id.clone(),
            message,
        };
        let range = |message: String| Error::Range {
            line,
            id: id.clone(),
            message,
        };

        if k == 0 {
            return Err(schema("candidates list is empty".into()));
        }

        for (j, c) in self.candidates.iter_mut().enumerate() {
            c.sim_to_gold = unit_value(c.sim_to_gold)
                .ok_or_else(|| range(format!("candidates[{j}].sim_to_gold = {}", c.sim_to_gold)))?;
            if let Some(f) = c.f_score {
                c.f_score = Some(
                    unit_value(f).ok_or_else(|| range(format!("candidates[{j}].f_score = {f}")))?,
                );
            }
            if let Some(u) = c.u_raw {
                if !u.is_finite() {
                    return Err(range(format!("candidates[{j}].u_raw = {u}")));
                }
            }
        }

        if let Some(m) = self.mlg.as_mut() {
            m.sim_to_gold = unit_value(m.sim_to_gold)
                .ok_or_else(|| range(format!("mlg.sim_to_gold = {}", m.sim_to_gold)))?;
        }

        if let Some(s) = self.sim_matrix.as_mut() {
            check_square(s.len(), s.iter().map(Vec::len), k)
                .map_err(|m| schema(format!("sim_matrix {m}")))?;
            for (j, row) in s.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = unit_value(*v)
                        .ok_or_else(|| range(format!("sim_matrix[{j}][{c}] = {v}")))?;
                }
            }
            symmetrize(s);
        }

        if let Some(e) = self.entail_matrix.as_mut() {
            check_square(e.len(), e.iter().map(Vec::len), k)
                .map_err(|m| schema(format!("entail_matrix {m}")))?;
            for (j, row) in e.iter_mut().enumerate() {
                row[j] = true;
            }
        }

        if let Some(labels) = &self.clusters {
            if labels.len() != k {
                return Err(schema(format!(
                    "clusters has {} labels for {k} candidates",
                    labels.len()
                )));
            }
        }
        Ok(())
    }
}

impl AsRef<CandidateRecord> for CandidateRecord {
    fn as_ref(&self) -> &CandidateRecord {
        self
    }
}

fn unit_value(v: f64) -> Option<f64> {
    if v.is_finite() && (-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&v) {
        Some(v.clamp(0.0, 1.0))
    } else {
        None
    }
}

fn check_square(
    rows: usize,
    mut row_lens: impl Iterator<Item = usize>,
    k: usize,
) -> std::result::Result<(), String> {
    if rows != k {
        return Err(format!("has {rows} rows, expected {k}x{k}"));
    }
    if let Some((j, len)) = row_lens.by_ref().enumerate().find(|(_, len)| *len != k) {
        return Err(format!("row {j} has {len} columns, expected {k}x{k}"));
    }
    Ok(())
}

fn symmetrize(s: &mut [Vec<f64>]) {
    let k = s.len();
    for j in 0..k {
        s[j][j] = 1.0;
        for c in (j + 1)..k {
            let mean = (s[j][c] + s[c][j]) / 2.0;
            s[j][c] = mean;
            s[c][j] = mean;
        }
    }
}

/// Admission rule realizing the alignment function: a candidate is
/// admissible when its similarity to the gold answer reaches `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmissionRule {
    pub tau: f64,
}

impl AdmissionRule {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::argument(format!(
                "admission tau must lie in (0, 1), got {tau}"
            )));
        }
        Ok(Self { tau })
    }

    pub fn admits(&self, c: &Candidate) -> bool {
        is_admissible(c, self)
    }
}

impl Default for AdmissionRule {
    fn default() -> Self {
        Self { tau: 0.7 }
    }
}

/// Closed comparison: `sim_to_gold >= tau`.
pub fn is_admissible(c: &Candidate, rule: &AdmissionRule) -> bool {
    c.sim_to_gold >= rule.tau
}

/// Keeps the first `k` candidates and the leading `k x k` block of every
/// matrix. Cluster labels survive only when nothing is removed.
pub fn truncate_budget(r: &CandidateRecord, k: usize) -> Result<CandidateRecord> {
    if k == 0 || k > r.k() {
        return Err(Error::argument(format!(
            "budget {k} out of range 1..={} for record {:?}",
            r.k(),
            r.id
        )));
    }
    if k == r.k() {
        return Ok(r.clone());
    }
    Ok(CandidateRecord {
        id: r.id.clone(),
        candidates: r.candidates[..k].to_vec(),
        sim_matrix: r
            .sim_matrix
            .as_ref()
            .map(|s| s[..k].iter().map(|row| row[..k].to_vec()).collect()),
        entail_matrix: r
            .entail_matrix
            .as_ref()
            .map(|e| e[..k].iter().map(|row| row[..k].to_vec()).collect()),
        mlg: r.mlg.clone(),
        clusters: None,
    })
}

/// Parses JSONL from a reader. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_records(reader: impl BufRead) -> Result<Vec<CandidateRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: CandidateRecord =
            serde_json::from_str(&line).map_err(|source| Error::Parse {
                line: line_no,
                source,
            })?;
        rec.validate(line_no)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<CandidateRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn to_jsonl(records: &[CandidateRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_records(path: impl AsRef<Path>, records: &[CandidateRecord]) -> Result<()> {
    write_atomic(path, to_jsonl(records)?.as_bytes())
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
