//! Multi-view reliability score for sampled candidates.
//!
//! For a pool of `K` candidates the score combines three signals:
//!
//! - self-uncertainty `u_raw` (larger = more reliable), z-normalized within
//!   the pool;
//! - consistency, the mean off-diagonal similarity `AvgSim_j`, z-normalized
//!   within the pool;
//! - consensus strength `CS_j = (n_j / n_max)^γ` from mutual-entailment
//!   clusters.
//!
//! `Q_j = sigmoid(w_u·ũ_j + w_s·s̃_j)` and the final score is
//! `F_j = CS_j · Q_j ∈ [0, 1]`.

use rayon::prelude::*;
use serde::Serialize;

use crate::cluster::DisjointSet;
use crate::error::{Error, Result};
use crate::record::CandidateRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoringConfig {
    pub w_u: f64,
    pub w_s: f64,
    pub gamma_cons: f64,
    pub epsilon: f64,
    pub use_consensus: bool,
    pub use_uncertainty: bool,
    pub use_consistency: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            w_u: 0.5,
            w_s: 0.5,
            gamma_cons: 1.0,
            epsilon: 1e-8,
            use_consensus: true,
            use_uncertainty: true,
            use_consistency: true,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::argument(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.gamma_cons > 0.0) {
            return Err(Error::argument(format!(
                "gamma_cons must be > 0, got {}",
                self.gamma_cons
            )));
        }
        if !self.w_u.is_finite() || !self.w_s.is_finite() {
            return Err(Error::argument("scoring weights must be finite"));
        }
        Ok(())
    }
}

/// Partition of a pool into semantic clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    /// Cluster label per candidate; labels are numbered by smallest member.
    pub labels: Vec<usize>,
    /// Size of each cluster, indexed by label.
    pub sizes: Vec<usize>,
    pub n_max: usize,
}

impl ClusterAssignment {
    fn from_labels(labels: Vec<usize>) -> Self {
        let n_clusters = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
        let mut sizes = vec![0; n_clusters];
        for &l in &labels {
            sizes[l] += 1;
        }
        let n_max = sizes.iter().copied().max().unwrap_or(0);
        Self {
            labels,
            sizes,
            n_max,
        }
    }

    /// Size of the cluster each candidate belongs to.
    pub fn member_sizes(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| self.sizes[l]).collect()
    }
}

/// Mean off-diagonal similarity of each candidate. A single-candidate pool
/// has no peers and gets 0.
pub fn avg_similarity(sim: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = sim.len();
    if sim.iter().any(|row| row.len() != k) {
        return Err(Error::argument("similarity matrix is not square"));
    }
    if k <= 1 {
        return Ok(vec![0.0; k]);
    }
    Ok(sim
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let off: f64 = row
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != j)
                .map(|(_, v)| v)
                .sum();
            off / (k - 1) as f64
        })
        .collect())
}

/// `(v - mean) / (std + epsilon)` with the population standard deviation.
pub fn z_normalize(values: &[f64], epsilon: f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + epsilon;
    values.iter().map(|v| (v - mean) / denom).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn base_quality(u_norm: &[f64], s_norm: &[f64], cfg: &ScoringConfig) -> Result<Vec<f64>> {
    if u_norm.len() != s_norm.len() {
        return Err(Error::argument(format!(
            "uncertainty and consistency lengths differ ({} vs {})",
            u_norm.len(),
            s_norm.len()
        )));
    }
    let w_u = if cfg.use_uncertainty { cfg.w_u } else { 0.0 };
    let w_s = if cfg.use_consistency { cfg.w_s } else { 0.0 };
    Ok(u_norm
        .iter()
        .zip(s_norm)
        .map(|(u, s)| sigmoid(w_u * u + w_s * s))
        .collect())
}

/// Transitive closure of mutual entailment (`j ⊨ k` and `k ⊨ j`).
pub fn cluster_candidates(entail: &[Vec<bool>]) -> Result<ClusterAssignment> {
    let k = entail.len();
    if entail.iter().any(|row| row.len() != k) {
        return Err(Error::argument("entailment matrix is not square"));
    }
    let mut ds = DisjointSet::new(k);
    for j in 0..k {
        for c in (j + 1)..k {
            if entail[j][c] && entail[c][j] {
                ds.union(j, c);
            }
        }
    }
    Ok(ClusterAssignment::from_labels(ds.labels()))
}

pub fn consensus_strength(assign: &ClusterAssignment, gamma: f64) -> Vec<f64> {
    let n_max = assign.n_max as f64;
    assign
        .member_sizes()
        .into_iter()
        .map(|n| (n as f64 / n_max).powf(gamma))
        .collect()
}

/// A record whose every candidate carries a reliability score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    record: CandidateRecord,
    scores: Vec<f64>,
}

impl ScoredRecord {
    /// Accepts a record whose candidates already carry `f_score`.
    pub fn from_prescored(record: CandidateRecord) -> Result<Self> {
        let scores = record
            .candidates
            .iter()
            .map(|c| c.f_score)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::FeatureMissing {
                id: record.id.clone(),
                feature: "f_score",
            })?;
        Ok(Self { record, scores })
    }

    pub fn record(&self) -> &CandidateRecord {
        &self.record
    }

    pub fn into_record(self) -> CandidateRecord {
        self.record
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn k(&self) -> usize {
        self.scores.len()
    }
}

impl AsRef<CandidateRecord> for ScoredRecord {
    fn as_ref(&self) -> &CandidateRecord {
        &self.record
    }
}

/// Scores every candidate of `r`; features needed by disabled components
/// may be absent.
pub fn score_record(r: &CandidateRecord, cfg: &ScoringConfig) -> Result<ScoredRecord> {
    cfg.validate()?;
    let k = r.k();
    let missing = |feature| Error::FeatureMissing {
        id: r.id.clone(),
        feature,
    };

    let u_norm = if cfg.use_uncertainty {
        let raw = r
            .candidates
            .iter()
            .map(|c| c.u_raw)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| missing("u_raw"))?;
        z_normalize(&raw, cfg.epsilon)
    } else {
        vec![0.0; k]
    };

    let s_norm = if cfg.use_consistency {
        let sim = r.sim_matrix.as_ref().ok_or_else(|| missing("sim_matrix"))?;
        z_normalize(&avg_similarity(sim)?, cfg.epsilon)
    } else {
        vec![0.0; k]
    };

    let quality = base_quality(&u_norm, &s_norm, cfg)?;

    let assignment = match &r.entail_matrix {
        Some(e) => Some(cluster_candidates(e)?),
        None if cfg.use_consensus => return Err(missing("entail_matrix")),
        None => None,
    };
    let consensus = match (&assignment, cfg.use_consensus) {
        (Some(a), true) => consensus_strength(a, cfg.gamma_cons),
        _ => vec![1.0; k],
    };

    let scores: Vec<f64> = consensus
        .iter()
        .zip(&quality)
        .map(|(cs, q)| (cs * q).clamp(0.0, 1.0))
        .collect();

    let mut record = r.clone();
    for (c, &f) in record.candidates.iter_mut().zip(&scores) {
        c.f_score = Some(f);
    }
    record.clusters = assignment.map(|a| a.labels);
    Ok(ScoredRecord { record, scores })
}

pub fn score_records(
    records: &[CandidateRecord],
    cfg: &ScoringConfig,
) -> Result<Vec<ScoredRecord>> {
    records.par_iter().map(|r| score_record(r, cfg)).collect()
}

/// Uses stored scores where every candidate has one, otherwise fails with
/// the first record lacking them.
pub fn prescored(records: Vec<CandidateRecord>) -> Result<Vec<ScoredRecord>> {
    records
        .into_iter()
        .map(ScoredRecord::from_prescored)
        .collect()
}
