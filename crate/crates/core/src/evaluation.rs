//! Repeated random-split evaluation of calibrated prediction sets.
//!
//! Each trial shuffles the records with its own derived seed, calibrates
//! every α on the calibration part and measures coverage and average
//! prediction set size (APSS) on the rest. Infeasible α are evaluated at
//! `λ = 1` and flagged rather than skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::calibration::{
    compute_mrl, coverage_score, prediction_set, sampling_failure, LambdaGrid, LossCurve,
};
use crate::cluster::DisjointSet;
use crate::error::{Error, Result};
use crate::record::{is_admissible, truncate_budget, write_atomic, AdmissionRule, CandidateRecord};
use crate::scoring::ScoredRecord;

pub const SEED_DERIVATION: &str =
    "trial_seed = splitmix64(seed + (trial + 1) * 0x9E3779B97F4A7C15); split = Fisher-Yates shuffle driven by ChaCha8(trial_seed)";

pub const CSV_HEADER: &str =
    "alpha,trial,coverage,apss,apss_dedup,alpha_l,alpha_feasible,feasible,lambda_hat";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub alpha_grid: Vec<f64>,
    /// Fraction of records used for calibration.
    pub split_ratio: f64,
    pub trials: usize,
    pub seed: u64,
    pub admission: AdmissionRule,
    pub dedup_threshold: Option<f64>,
    #[serde(serialize_with = "serialize_grid_step")]
    pub lambda_grid: LambdaGrid,
}

fn serialize_grid_step<S: serde::Serializer>(
    g: &LambdaGrid,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(g.step())
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            alpha_grid: (1..=10).map(|i| i as f64 / 20.0).collect(),
            split_ratio: 0.5,
            trials: 100,
            seed: 10,
            admission: AdmissionRule::default(),
            dedup_threshold: None,
            lambda_grid: LambdaGrid::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() {
            return Err(Error::argument("alpha grid is empty"));
        }
        if self.alpha_grid.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::argument("alpha grid values must lie in (0, 1)"));
        }
        if self.alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::argument("alpha grid must be strictly ascending"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::argument(format!(
                "split ratio must lie in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if self.trials == 0 {
            return Err(Error::argument("trials must be at least 1"));
        }
        if let Some(t) = self.dedup_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::argument(format!(
                    "dedup threshold must lie in (0, 1], got {t}"
                )));
            }
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of trial `t`; see [`SEED_DERIVATION`].
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    splitmix64(seed.wrapping_add((trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Random calibration/test partition of `0..n`; the calibration part holds
/// `⌊ratio·n⌋` indices.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::argument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n_cal = (ratio * n as f64 + 1e-9).floor() as usize;
    if n_cal == 0 || n_cal >= n {
        return Err(Error::argument(format!(
            "split of {n} records at ratio {ratio} leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_cal);
    Ok((idx, test))
}

pub fn split_records<T: Clone>(records: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (cal, test) = split_indices(records.len(), ratio, seed)?;
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| records[i].clone()).collect();
    Ok((pick(cal), pick(test)))
}

/// Collapses near-duplicates inside a prediction set: connected components
/// of `sim ≥ threshold` keep only their highest-scoring member (lowest index
/// on ties). Output is in candidate order.
pub fn deduplicate_set(
    r: &ScoredRecord,
    set_indices: &[usize],
    threshold: f64,
) -> Result<Vec<usize>> {
    let rec = r.record();
    let sim = rec
        .sim_matrix
        .as_ref()
        .ok_or_else(|| Error::FeatureMissing {
            id: rec.id.clone(),
            feature: "sim_matrix",
        })?;
    if let Some(&bad) = set_indices.iter().find(|&&j| j >= r.k()) {
        return Err(Error::argument(format!(
            "set index {bad} out of range for record {:?} with {} candidates",
            rec.id,
            r.k()
        )));
    }
    let m = set_indices.len();
    let mut ds = DisjointSet::new(m);
    for a in 0..m {
        for b in (a + 1)..m {
            if sim[set_indices[a]][set_indices[b]] >= threshold {
                ds.union(a, b);
            }
        }
    }
    let labels = ds.labels();
    let scores = r.scores();
    let mut best: BTreeMap<usize, usize> = BTreeMap::new();
    for (pos, &label) in labels.iter().enumerate() {
        let j = set_indices[pos];
        best.entry(label)
            .and_modify(|cur| {
                if scores[j] > scores[*cur] || (scores[j] == scores[*cur] && j < *cur) {
                    *cur = j;
                }
            })
            .or_insert(j);
    }
    let mut kept: Vec<usize> = best.into_values().collect();
    kept.sort_unstable();
    Ok(kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialRow {
    pub alpha: f64,
    pub trial: usize,
    pub coverage: f64,
    pub apss: f64,
    pub apss_dedup: Option<f64>,
    /// Coverage of the deduplicated sets.
    pub coverage_dedup: Option<f64>,
    pub alpha_l: f64,
    pub alpha_feasible: f64,
    pub feasible: bool,
    pub lambda_hat: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

/// Per-α aggregates over trials (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub trials: usize,
    pub feasible_trials: usize,
    pub coverage: MeanStd,
    pub apss: MeanStd,
    pub apss_dedup: Option<MeanStd>,
    pub coverage_dedup: Option<MeanStd>,
    pub alpha_l: MeanStd,
    pub alpha_feasible: MeanStd,
    /// Over feasible trials only.
    pub lambda_hat: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub config: EvalConfig,
    /// Ordered by α, then trial.
    pub rows: Vec<TrialRow>,
    pub summaries: Vec<AlphaSummary>,
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

impl EvaluationReport {
    pub fn rows_for(&self, alpha: f64) -> impl Iterator<Item = &TrialRow> {
        self.rows.iter().filter(move |r| r.alpha == alpha)
    }

    pub fn summary_for(&self, alpha: f64) -> Option<&AlphaSummary> {
        self.summaries.iter().find(|s| s.alpha == alpha)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(f6).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                f6(r.alpha),
                r.trial,
                f6(r.coverage),
                f6(r.apss),
                opt(r.apss_dedup),
                f6(r.alpha_l),
                f6(r.alpha_feasible),
                r.feasible,
                opt(r.lambda_hat),
            );
        }
        out
    }

    /// Aggregates plus the full configuration and seed derivation.
    pub fn summary_json(&self) -> serde_json::Value {
        let ms = |m: &MeanStd| json!({ "mean": round6(m.mean), "std": round6(m.std) });
        let oms = |m: &Option<MeanStd>| m.as_ref().map(ms);
        let aggregates: Vec<_> = self
            .summaries
            .iter()
            .map(|s| {
                json!({
                    "alpha": round6(s.alpha),
                    "trials": s.trials,
                    "feasible_trials": s.feasible_trials,
                    "coverage": ms(&s.coverage),
                    "apss": ms(&s.apss),
                    "apss_dedup": oms(&s.apss_dedup),
                    "coverage_dedup": oms(&s.coverage_dedup),
                    "alpha_l": ms(&s.alpha_l),
                    "alpha_feasible": ms(&s.alpha_feasible),
                    "lambda_hat": oms(&s.lambda_hat),
                })
            })
            .collect();
        json!({
            "seed_derivation": SEED_DERIVATION,
            "config": &self.config,
            "aggregates": aggregates,
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(&self.summary_json())?;
        s.push('\n');
        write_atomic(path, s.as_bytes())
    }
}

pub fn evaluate(records: &[ScoredRecord], cfg: &EvalConfig) -> Result<EvaluationReport> {
    cfg.validate()?;
    if records.len() < 4 {
        return Err(Error::argument(format!(
            "evaluation needs at least 4 records, got {}",
            records.len()
        )));
    }
    if cfg.dedup_threshold.is_some() {
        if let Some(r) = records.iter().find(|r| r.record().sim_matrix.is_none()) {
            return Err(Error::FeatureMissing {
                id: r.record().id.clone(),
                feature: "sim_matrix",
            });
        }
    }
    let rule = &cfg.admission;
    let cov_scores: Vec<Option<f64>> = records.iter().map(|r| coverage_score(r, rule)).collect();

    let per_trial = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(records, &cov_scores, cfg, t))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(cfg.trials * cfg.alpha_grid.len());
    let mut summaries = Vec::with_capacity(cfg.alpha_grid.len());
    for (a_idx, &alpha) in cfg.alpha_grid.iter().enumerate() {
        let start = rows.len();
        rows.extend(per_trial.iter().map(|trial_rows| trial_rows[a_idx]));
        let rs = &rows[start..];
        summaries.push(AlphaSummary {
            alpha,
            trials: rs.len(),
            feasible_trials: rs.iter().filter(|r| r.feasible).count(),
            coverage: MeanStd::of(rs.iter().map(|r| r.coverage)).expect("trials >= 1"),
            apss: MeanStd::of(rs.iter().map(|r| r.apss)).expect("trials >= 1"),
            apss_dedup: MeanStd::of(rs.iter().filter_map(|r| r.apss_dedup)),
            coverage_dedup: MeanStd::of(rs.iter().filter_map(|r| r.coverage_dedup)),
            alpha_l: MeanStd::of(rs.iter().map(|r| r.alpha_l)).expect("trials >= 1"),
            alpha_feasible: MeanStd::of(rs.iter().map(|r| r.alpha_feasible)).expect("trials >= 1"),
            lambda_hat: MeanStd::of(rs.iter().filter_map(|r| r.lambda_hat)),
        });
    }
    Ok(EvaluationReport {
        config: cfg.clone(),
        rows,
        summaries,
    })
}

fn run_trial(
    records: &[ScoredRecord],
    cov_scores: &[Option<f64>],
    cfg: &EvalConfig,
    trial: usize,
) -> Result<Vec<TrialRow>> {
    let rule = &cfg.admission;
    let (cal, test) = split_indices(records.len(), cfg.split_ratio, trial_seed(cfg.seed, trial))?;
    let cal_scores: Vec<Option<f64>> = cal.iter().map(|&i| cov_scores[i]).collect();
    let curve = LossCurve::from_coverage_scores(&cal_scores, &cfg.lambda_grid)?;
    let n_test = test.len() as f64;

    cfg.alpha_grid
        .iter()
        .map(|&alpha| {
            let outcome = curve.outcome(alpha)?;
            let lambda = outcome.lambda_or_full();
            let (mut covered, mut size) = (0usize, 0usize);
            let (mut covered_dd, mut size_dd) = (0usize, 0usize);
            for &i in &test {
                let r = &records[i];
                let set = prediction_set(r, lambda, rule);
                covered += usize::from(set.covered);
                size += set.len();
                if let Some(th) = cfg.dedup_threshold {
                    let kept = deduplicate_set(r, &set.indices, th)?;
                    size_dd += kept.len();
                    let cands = &r.record().candidates;
                    covered_dd += usize::from(kept.iter().any(|&j| is_admissible(&cands[j], rule)));
                }
            }
            let dedup = cfg.dedup_threshold.is_some();
            Ok(TrialRow {
                alpha,
                trial,
                coverage: covered as f64 / n_test,
                apss: size as f64 / n_test,
                apss_dedup: dedup.then(|| size_dd as f64 / n_test),
                coverage_dedup: dedup.then(|| covered_dd as f64 / n_test),
                alpha_l: outcome.alpha_l,
                alpha_feasible: outcome.alpha_feasible,
                feasible: outcome.feasible(),
                lambda_hat: outcome.lambda_hat,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Baseline {
    /// Fraction of records whose single most-likely answer is admissible.
    pub mlg_accuracy: f64,
    /// Fraction of records whose pool holds an admissible candidate.
    pub attainability: f64,
}

pub fn mlg_baseline<R: AsRef<CandidateRecord>>(
    records: &[R],
    rule: &AdmissionRule,
) -> Result<Baseline> {
    if records.is_empty() {
        return Err(Error::argument("no records"));
    }
    let mut hits = 0usize;
    let mut failures = 0usize;
    for r in records {
        let r = r.as_ref();
        let mlg = r.mlg.as_ref().ok_or_else(|| Error::FeatureMissing {
            id: r.id.clone(),
            feature: "mlg",
        })?;
        hits += usize::from(is_admissible(mlg, rule));
        failures += usize::from(sampling_failure(r, rule));
    }
    let n = records.len() as f64;
    Ok(Baseline {
        mlg_accuracy: hits as f64 / n,
        attainability: (records.len() - failures) as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetPoint {
    pub alpha_l: f64,
    pub attainability: f64,
}

/// Risk floor and attainability of the whole dataset at each budget `k`.
pub fn sweep_budget<R: AsRef<CandidateRecord>>(
    records: &[R],
    cfg: &EvalConfig,
    k_values: &[usize],
) -> Result<BTreeMap<usize, BudgetPoint>> {
    let mut out = BTreeMap::new();
    for &k in k_values {
        let truncated = records
            .iter()
            .map(|r| truncate_budget(r.as_ref(), k))
            .collect::<Result<Vec<_>>>()?;
        let floor = compute_mrl(&truncated, &cfg.admission)?;
        out.insert(
            k,
            BudgetPoint {
                alpha_l: floor.alpha_l,
                attainability: (floor.n - floor.failures) as f64 / floor.n as f64,
            },
        );
    }
    Ok(out)
}
