//! Feasibility boundary and learn-then-test threshold calibration.
//!
//! A prediction set keeps every candidate with `F ≥ 1 − λ`, so a larger `λ`
//! gives a larger set. Its miscoverage loss is 1 when no retained candidate
//! is admissible. Over `n` calibration records:
//!
//! - `α_l = Σ l_i / (n + 1)` where `l_i` flags a pool without any admissible
//!   candidate. No set rule can reach a risk below this floor.
//! - `λ̂ = min { λ in grid : L̂_n(λ) ≤ α − (1 − α)/n }`, equivalently
//!   `(misses(λ) + 1)/(n + 1) ≤ α`.
//!
//! At `λ = 1` the condition reads `α ≥ (Σ l_i + 1)/(n + 1)`, reported as
//! `alpha_feasible`. Below it the outcome is infeasible and carries no `λ̂`.

use std::collections::BTreeMap;

use serde::ser::{SerializeStruct, Serializer};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::record::{is_admissible, truncate_budget, AdmissionRule, CandidateRecord};
use crate::scoring::ScoredRecord;

/// Absorbs rounding in `1 − λ` so that grid thresholds such as `1 − 0.07`
/// compare like their decimal values.
pub const SCORE_SLACK: f64 = 1e-12;

/// Tolerance on the count-scaled budget test `misses + 1 ≤ α(n + 1)`.
const BUDGET_SLACK: f64 = 1e-9;

/// Whether a candidate with score `f` belongs to the set at `lambda`.
#[inline]
pub fn retains(f: f64, lambda: f64) -> bool {
    f >= 1.0 - lambda - SCORE_SLACK
}

#[inline]
fn within_budget(misses: usize, n: usize, alpha: f64) -> bool {
    (misses + 1) as f64 <= alpha * (n + 1) as f64 + BUDGET_SLACK
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    step: f64,
    values: Vec<f64>,
}

impl LambdaGrid {
    /// Ascending grid `0, step, 2·step, …` closed with `1`.
    pub fn new(step: f64) -> Result<Self> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::argument(format!(
                "grid step must lie in (0, 1], got {step}"
            )));
        }
        let inv = 1.0 / step;
        let values = if (inv - inv.round()).abs() < 1e-9 {
            let m = inv.round() as usize;
            (0..=m).map(|i| i as f64 / m as f64).collect()
        } else {
            let mut v: Vec<f64> = (0..)
                .map(|i| i as f64 * step)
                .take_while(|&x| x < 1.0 - 1e-12)
                .collect();
            v.push(1.0);
            v
        };
        Ok(Self { step, values })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self::new(0.01).expect("0.01 is a valid step")
    }
}

/// Retained candidate indices for one record at one threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSet {
    pub indices: Vec<usize>,
    /// True when some retained candidate is admissible.
    pub covered: bool,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `l_i`: true when no candidate in the pool is admissible.
pub fn sampling_failure<R: AsRef<CandidateRecord>>(r: &R, rule: &AdmissionRule) -> bool {
    !r.as_ref().candidates.iter().any(|c| is_admissible(c, rule))
}

/// Minimum risk level of a calibration set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskFloor {
    /// `Σ l_i / (n + 1)`.
    pub alpha_l: f64,
    /// `(Σ l_i + 1) / (n + 1)`, the smallest α for which the λ search can
    /// succeed.
    pub alpha_feasible: f64,
    pub failures: usize,
    pub n: usize,
}

impl RiskFloor {
    fn from_counts(failures: usize, n: usize) -> Self {
        let denom = (n + 1) as f64;
        Self {
            alpha_l: failures as f64 / denom,
            alpha_feasible: (failures + 1) as f64 / denom,
            failures,
            n,
        }
    }
}

pub fn compute_mrl<R: AsRef<CandidateRecord>>(
    cal: &[R],
    rule: &AdmissionRule,
) -> Result<RiskFloor> {
    if cal.is_empty() {
        return Err(Error::argument("calibration set is empty"));
    }
    let failures = cal.iter().filter(|r| sampling_failure(*r, rule)).count();
    Ok(RiskFloor::from_counts(failures, cal.len()))
}

pub fn prediction_set(r: &ScoredRecord, lambda: f64, rule: &AdmissionRule) -> PredictionSet {
    let cands = &r.record().candidates;
    let indices: Vec<usize> = r
        .scores()
        .iter()
        .enumerate()
        .filter(|&(_, &f)| retains(f, lambda))
        .map(|(j, _)| j)
        .collect();
    let covered = indices.iter().any(|&j| is_admissible(&cands[j], rule));
    PredictionSet { indices, covered }
}

pub fn set_loss(r: &ScoredRecord, lambda: f64, rule: &AdmissionRule) -> u8 {
    u8::from(!prediction_set(r, lambda, rule).covered)
}

pub fn empirical_loss(cal: &[ScoredRecord], lambda: f64, rule: &AdmissionRule) -> Result<f64> {
    if cal.is_empty() {
        return Err(Error::argument("calibration set is empty"));
    }
    let misses: usize = cal.iter().map(|r| set_loss(r, lambda, rule) as usize).sum();
    Ok(misses as f64 / cal.len() as f64)
}

/// Highest score among admissible candidates; the record is covered at `λ`
/// exactly when this value is retained.
pub fn coverage_score(r: &ScoredRecord, rule: &AdmissionRule) -> Option<f64> {
    r.record()
        .candidates
        .iter()
        .zip(r.scores())
        .filter(|(c, _)| is_admissible(c, rule))
        .map(|(_, &f)| f)
        .reduce(f64::max)
}

/// Miss counts of a calibration set over every grid value. Independent of
/// α, so one curve serves a whole α sweep.
#[derive(Debug, Clone)]
pub struct LossCurve {
    lambdas: Vec<f64>,
    misses: Vec<usize>,
    n: usize,
}

impl LossCurve {
    pub fn new(cal: &[ScoredRecord], grid: &LambdaGrid, rule: &AdmissionRule) -> Result<Self> {
        let scores: Vec<Option<f64>> = cal.iter().map(|r| coverage_score(r, rule)).collect();
        Self::from_coverage_scores(&scores, grid)
    }

    /// Builds the curve from per-record [`coverage_score`] values.
    pub fn from_coverage_scores(scores: &[Option<f64>], grid: &LambdaGrid) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::argument("calibration set is empty"));
        }
        let misses = grid
            .values()
            .iter()
            .map(|&lambda| {
                scores
                    .iter()
                    .filter(|s| !s.is_some_and(|f| retains(f, lambda)))
                    .count()
            })
            .collect();
        Ok(Self {
            lambdas: grid.values().to_vec(),
            misses,
            n: scores.len(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn risk_floor(&self) -> RiskFloor {
        // the grid always ends at λ = 1, where only pools without any
        // admissible candidate miss
        RiskFloor::from_counts(*self.misses.last().expect("grid is non-empty"), self.n)
    }

    pub fn losses(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.n as f64;
        self.lambdas
            .iter()
            .zip(&self.misses)
            .map(move |(&l, &m)| (l, m as f64 / n))
    }

    pub fn outcome(&self, alpha: f64) -> Result<CalibrationOutcome> {
        check_alpha(alpha)?;
        let lambda_hat = self
            .lambdas
            .iter()
            .zip(&self.misses)
            .find(|&(_, &m)| within_budget(m, self.n, alpha))
            .map(|(&l, _)| l);
        let floor = self.risk_floor();
        Ok(CalibrationOutcome {
            alpha,
            alpha_l: floor.alpha_l,
            alpha_feasible: floor.alpha_feasible,
            lambda_hat,
            loss_curve: self.losses().collect(),
            n: self.n,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::argument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    pub alpha: f64,
    pub alpha_l: f64,
    pub alpha_feasible: f64,
    /// `None` when no grid value satisfies the budget.
    pub lambda_hat: Option<f64>,
    /// `(λ, L̂_n(λ))` for every grid value.
    pub loss_curve: Vec<(f64, f64)>,
    pub n: usize,
}

impl CalibrationOutcome {
    pub fn feasible(&self) -> bool {
        self.lambda_hat.is_some()
    }

    /// Threshold to apply at test time: `λ̂`, or the full set when infeasible.
    pub fn lambda_or_full(&self) -> f64 {
        self.lambda_hat.unwrap_or(1.0)
    }
}

impl Serialize for CalibrationOutcome {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let curve: Vec<[f64; 2]> = self.loss_curve.iter().map(|&(l, v)| [l, v]).collect();
        let mut st = s.serialize_struct("CalibrationOutcome", 7)?;
        st.serialize_field("alpha", &self.alpha)?;
        st.serialize_field("alpha_l", &self.alpha_l)?;
        st.serialize_field("alpha_feasible", &self.alpha_feasible)?;
        st.serialize_field("lambda_hat", &self.lambda_hat)?;
        st.serialize_field("feasible", &self.feasible())?;
        st.serialize_field("loss_curve", &curve)?;
        st.serialize_field("n", &self.n)?;
        st.end()
    }
}

pub fn calibrate_threshold(
    cal: &[ScoredRecord],
    alpha: f64,
    grid: &LambdaGrid,
    rule: &AdmissionRule,
) -> Result<CalibrationOutcome> {
    check_alpha(alpha)?;
    LossCurve::new(cal, grid, rule)?.outcome(alpha)
}

/// `α_l` after truncating every pool to its first `k` candidates.
pub fn mrl_curve<R: AsRef<CandidateRecord>>(
    cal: &[R],
    rule: &AdmissionRule,
    k_values: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    for &k in k_values {
        let truncated = cal
            .iter()
            .map(|r| truncate_budget(r.as_ref(), k))
            .collect::<Result<Vec<_>>>()?;
        out.insert(k, compute_mrl(&truncated, rule)?.alpha_l);
    }
    Ok(out)
}
