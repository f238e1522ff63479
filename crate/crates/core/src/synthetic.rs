//! Exchangeable synthetic candidate pools with known admissibility, plus
//! exhaustive reference implementations used to cross-check calibration.
//!
//! Every record is drawn i.i.d. from one seeded ChaCha stream, so a set of
//! records is exchangeable by construction and a file is reproducible byte
//! for byte from its config.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::Serialize;

use crate::calibration::{LambdaGrid, SCORE_SLACK};
use crate::error::{Error, Result};
use crate::record::{AdmissionRule, Candidate, CandidateRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreModel {
    /// Candidates carry `f_score` drawn from a label-dependent Beta.
    PrescoredBeta,
    /// Candidates carry raw features (`u_raw`, similarity and entailment
    /// matrices) for the scoring pipeline.
    FullFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleConfig {
    pub n_records: usize,
    pub k: usize,
    /// Per-candidate admissibility probability.
    pub p_adm: f64,
    pub score_model: ScoreModel,
    pub beta_adm: (f64, f64),
    pub beta_inadm: (f64, f64),
    /// Uniform jitter half-width applied to similarities in full-feature mode.
    pub noise: f64,
    /// When set, each record draws its own admissibility probability from
    /// `Beta(a, b)` instead of using `p_adm`.
    pub difficulty: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_records: 1000,
            k: 20,
            p_adm: 0.35,
            score_model: ScoreModel::PrescoredBeta,
            beta_adm: (5.0, 2.0),
            beta_inadm: (2.0, 5.0),
            noise: 0.1,
            difficulty: None,
            seed: 10,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::argument("k must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.p_adm) {
            return Err(Error::argument(format!(
                "p_adm must lie in [0, 1], got {}",
                self.p_adm
            )));
        }
        let shapes = [Some(self.beta_adm), Some(self.beta_inadm), self.difficulty];
        if shapes
            .iter()
            .flatten()
            .any(|&(a, b)| !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()))
        {
            return Err(Error::argument(
                "beta shape parameters must be positive and finite",
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::argument(format!(
                "noise must be >= 0, got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

fn beta(shape: (f64, f64)) -> Result<Beta<f64>> {
    Beta::new(shape.0, shape.1).map_err(|e| Error::argument(format!("beta{shape:?}: {e}")))
}

pub fn generate(cfg: &OracleConfig) -> Result<Vec<CandidateRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adm_dist = beta(cfg.beta_adm)?;
    let inadm_dist = beta(cfg.beta_inadm)?;
    let difficulty = cfg.difficulty.map(beta).transpose()?;
    let u_noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut out = Vec::with_capacity(cfg.n_records);
    for i in 0..cfg.n_records {
        let p = match &difficulty {
            Some(d) => d.sample(&mut rng),
            None => cfg.p_adm,
        };
        let labels: Vec<bool> = (0..cfg.k).map(|_| rng.random_bool(p)).collect();
        let id = format!("syn-{i:06}");

        let record = match cfg.score_model {
            ScoreModel::PrescoredBeta => {
                let candidates = labels
                    .iter()
                    .map(|&adm| {
                        let f = if adm {
                            adm_dist.sample(&mut rng)
                        } else {
                            inadm_dist.sample(&mut rng)
                        };
                        Candidate {
                            text: String::new(),
                            u_raw: Some(f),
                            sim_to_gold: if adm { 1.0 } else { 0.0 },
                            f_score: Some(f),
                        }
                    })
                    .collect();
                CandidateRecord::new(id, candidates)
            }
            ScoreModel::FullFeature => {
                let candidates = labels
                    .iter()
                    .map(|&adm| Candidate {
                        text: String::new(),
                        u_raw: Some(f64::from(u8::from(adm)) + u_noise.sample(&mut rng)),
                        sim_to_gold: if adm { 1.0 } else { 0.0 },
                        f_score: None,
                    })
                    .collect();
                let mut sim = vec![vec![1.0; cfg.k]; cfg.k];
                for j in 0..cfg.k {
                    for c in 0..cfg.k {
                        if j == c {
                            continue;
                        }
                        let base = if labels[j] == labels[c] { 1.0 } else { 0.0 };
                        let jitter = if cfg.noise > 0.0 {
                            rng.random_range(-cfg.noise..=cfg.noise)
                        } else {
                            0.0
                        };
                        sim[j][c] = f64::clamp(base + jitter, 0.0, 1.0);
                    }
                }
                let entail = (0..cfg.k)
                    .map(|j| (0..cfg.k).map(|c| labels[j] == labels[c]).collect())
                    .collect();
                let mut r = CandidateRecord::new(id, candidates);
                r.sim_matrix = Some(sim);
                r.entail_matrix = Some(entail);
                r
            }
        };
        out.push(record);
    }
    for r in &mut out {
        // symmetrizes the jittered similarities
        r.validate(0)?;
    }
    Ok(out)
}

/// Reference `α_l`: explicit loops over records and candidates.
pub fn brute_force_mrl(records: &[CandidateRecord], rule: &AdmissionRule) -> f64 {
    let mut failures = 0usize;
    for r in records {
        let mut found = false;
        for c in &r.candidates {
            if c.sim_to_gold >= rule.tau {
                found = true;
            }
        }
        if !found {
            failures += 1;
        }
    }
    failures as f64 / (records.len() + 1) as f64
}

/// Reference `λ̂`: scans every grid value and recomputes each record's
/// loss from its stored `f_score` values.
pub fn brute_force_lambda(
    records: &[CandidateRecord],
    alpha: f64,
    grid: &LambdaGrid,
    rule: &AdmissionRule,
) -> Option<f64> {
    let n = records.len() as f64;
    let budget = alpha - (1.0 - alpha) / n;
    for &lambda in grid.values() {
        let mut total = 0.0;
        for r in records {
            let mut covered = false;
            for c in &r.candidates {
                let f = c.f_score.unwrap_or(f64::NEG_INFINITY);
                if f >= 1.0 - lambda - SCORE_SLACK && c.sim_to_gold >= rule.tau {
                    covered = true;
                }
            }
            if !covered {
                total += 1.0;
            }
        }
        if total / n <= budget + 1e-9 / n {
            return Some(lambda);
        }
    }
    None
}
