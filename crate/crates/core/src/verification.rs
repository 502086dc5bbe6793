//! Membership tests and their error rates.
//!
//! A query code `q` is compared with a representative `r` through the score
//! `c(q, r) = −‖q − r‖` and accepted when the score is strictly above a
//! threshold τ. With several groups the system accepts when any group test
//! accepts, which is the same as thresholding the maximum score.

use std::io::Write;

use crate::embedding::TernaryCode;
use crate::error::{domain_err, shape_err, Error, Result};
use crate::exec::Exec;
use crate::format::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub tau: f64,
    pub p_fp: f64,
    pub p_fn: f64,
}

impl OperatingPoint {
    pub fn p_tp(&self) -> f64 {
        1.0 - self.p_fn
    }
}

/// Operating points ordered by increasing τ plus the area under the curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<OperatingPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// CSV with header `tau,p_fp,p_fn`, one row per point and a final
    /// `auc,<value>,` summary row.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "tau,p_fp,p_fn")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{}",
                fmt_f64(p.tau),
                fmt_f64(p.p_fp),
                fmt_f64(p.p_fn)
            )?;
        }
        writeln!(w, "auc,{},", fmt_f64(self.auc))?;
        Ok(())
    }
}

/// Squared Euclidean distance between two codes.
pub fn squared_distance(q: &TernaryCode, r: &TernaryCode) -> Result<u64> {
    if q.len() != r.len() {
        return Err(shape_err(format!(
            "code lengths differ: {} vs {}",
            q.len(),
            r.len()
        )));
    }
    Ok(squared_distance_unchecked(q.symbols(), r.symbols()))
}

#[inline]
fn squared_distance_unchecked(q: &[i8], r: &[i8]) -> u64 {
    q.iter()
        .zip(r)
        .map(|(&a, &b)| {
            let d = (a - b) as i32;
            (d * d) as u32
        })
        .sum::<u32>() as u64
}

/// `c(q, r) = −‖q − r‖`.
pub fn score(q: &TernaryCode, r: &TernaryCode) -> Result<f64> {
    Ok(-(squared_distance(q, r)? as f64).sqrt())
}

/// The test `[s > τ]`.
pub fn decide(s: f64, tau: f64) -> bool {
    s > tau
}

/// Score against the best-matching representative.
pub fn multi_group_score(q: &TernaryCode, reps: &[TernaryCode]) -> Result<f64> {
    let mut best: Option<u64> = None;
    for r in reps {
        let d = squared_distance(q, r)?;
        best = Some(best.map_or(d, |b| b.min(d)));
    }
    best.map(|d| -(d as f64).sqrt())
        .ok_or_else(|| Error::InsufficientData("no representatives".into()))
}

/// Scores of every query against every representative: `out[i][k]`.
pub fn score_matrix(
    queries: &[TernaryCode],
    reps: &[TernaryCode],
    exec: Exec,
) -> Result<Vec<Vec<f64>>> {
    if let Some(r) = reps.first() {
        let len = r.len();
        if reps.iter().chain(queries).any(|c| c.len() != len) {
            return Err(shape_err("codes have mixed lengths"));
        }
    }
    Ok(exec.map(queries.len(), |i| {
        let q = queries[i].symbols();
        reps.iter()
            .map(|r| -(squared_distance_unchecked(q, r.symbols()) as f64).sqrt())
            .collect()
    }))
}

/// Mann–Whitney estimate of `P(pos > neg) + ½ P(pos = neg)`.
///
/// Computed with exact integer pair counts, so it equals brute-force pair
/// counting bit for bit.
pub fn auc_mann_whitney(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InsufficientData(
            "AUC needs at least one positive and one negative score".into(),
        ));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(domain_err("scores must not be NaN"));
    }
    let mut neg_sorted = neg.to_vec();
    neg_sorted.sort_by(f64::total_cmp);
    // twice the U statistic
    let mut twice_u: u128 = 0;
    for &p in pos {
        let below = neg_sorted.partition_point(|&n| n < p);
        let not_above = neg_sorted.partition_point(|&n| n <= p);
        twice_u += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(twice_u as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}

/// Empirical ROC at every distinct score threshold.
///
/// The first point has τ = −∞ (everything accepted); each later point uses
/// a distinct observed score as τ, so the last one rejects everything.
pub fn roc_curve(pos_scores: &[f64], neg_scores: &[f64]) -> Result<RocCurve> {
    let auc = auc_mann_whitney(pos_scores, neg_scores)?;
    let mut pos = pos_scores.to_vec();
    let mut neg = neg_scores.to_vec();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut taus: Vec<f64> = pos.iter().chain(&neg).cloned().collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut points = Vec::with_capacity(taus.len() + 1);
    points.push(OperatingPoint {
        tau: f64::NEG_INFINITY,
        p_fp: 1.0,
        p_fn: 0.0,
    });
    for tau in taus {
        let neg_above = neg.len() - neg.partition_point(|&s| s <= tau);
        let pos_not_above = pos.partition_point(|&s| s <= tau);
        points.push(OperatingPoint {
            tau,
            p_fp: neg_above as f64 / nn,
            p_fn: pos_not_above as f64 / np,
        });
    }
    Ok(RocCurve { points, auc })
}

/// True-positive rate at the threshold set to the `1 − target_fp` empirical
/// quantile of the negative scores.
pub fn tpr_at_fpr(pos: &[f64], neg: &[f64], target_fp: f64) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InsufficientData("empty score list".into()));
    }
    if !(0.0..1.0).contains(&target_fp) {
        return Err(domain_err(format!(
            "false-positive target {target_fp} not in [0, 1)"
        )));
    }
    let mut neg = neg.to_vec();
    neg.sort_by(f64::total_cmp);
    let idx = (((1.0 - target_fp) * neg.len() as f64).ceil() as usize).clamp(1, neg.len()) - 1;
    let tau = neg[idx];
    Ok(pos.iter().filter(|&&s| decide(s, tau)).count() as f64 / pos.len() as f64)
}

/// One group's operating point at a given τ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupPoint {
    pub size: usize,
    pub p_fp: f64,
    pub p_fn: f64,
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(domain_err(format!("{what} = {p} is not a probability")))
    }
}

/// System error rates when accepting on any positive group test:
///
/// `P_fp = 1 − ∏ₖ (1 − p_fp⁽ᵏ⁾)` and
/// `P_fn = Σₖ (nₖ/N) p_fn⁽ᵏ⁾ ∏_{l≠k} (1 − p_fp⁽ˡ⁾)`.
pub fn predict_multi_group(groups: &[GroupPoint], total: usize) -> Result<(f64, f64)> {
    if groups.is_empty() {
        return Err(Error::InsufficientData("no groups".into()));
    }
    let sum: usize = groups.iter().map(|g| g.size).sum();
    if sum != total {
        return Err(domain_err(format!(
            "group sizes sum to {sum}, expected {total}"
        )));
    }
    for g in groups {
        check_prob(g.p_fp, "p_fp")?;
        check_prob(g.p_fn, "p_fn")?;
    }
    let m = groups.len();
    // prefix/suffix products avoid dividing by (1 − p_fp) = 0
    let mut prefix = vec![1.0; m + 1];
    for (k, g) in groups.iter().enumerate() {
        prefix[k + 1] = prefix[k] * (1.0 - g.p_fp);
    }
    let mut suffix = vec![1.0; m + 1];
    for k in (0..m).rev() {
        suffix[k] = suffix[k + 1] * (1.0 - groups[k].p_fp);
    }
    let p_fp = 1.0 - prefix[m];
    let p_fn = groups
        .iter()
        .enumerate()
        .map(|(k, g)| g.size as f64 / total as f64 * g.p_fn * prefix[k] * suffix[k + 1])
        .sum();
    Ok((p_fp, p_fn))
}

/// Per-group score samples used to estimate `(p_fp⁽ᵏ⁾(τ), p_fn⁽ᵏ⁾(τ))`:
/// unrelated queries scored against this group, and related queries scored
/// against their own group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupScores {
    pub size: usize,
    pub neg: Vec<f64>,
    pub pos: Vec<f64>,
}

/// ROC predicted by [`predict_multi_group`] from per-group empirical points,
/// swept over every distinct observed score. The AUC is the trapezoidal area
/// of the resulting curve. Groups that received no related query drop out of
/// the miss term and the remaining size weights are renormalized.
pub fn predicted_roc(groups: &[GroupScores], total: usize) -> Result<RocCurve> {
    if groups.is_empty() {
        return Err(Error::InsufficientData("no groups".into()));
    }
    let sum: usize = groups.iter().map(|g| g.size).sum();
    if sum != total {
        return Err(domain_err(format!(
            "group sizes sum to {sum}, expected {total}"
        )));
    }
    if groups.iter().all(|g| g.pos.is_empty()) || groups.iter().any(|g| g.neg.is_empty()) {
        return Err(Error::InsufficientData(
            "every group needs negative scores and some group needs positive scores".into(),
        ));
    }
    let sorted: Vec<(Vec<f64>, Vec<f64>)> = groups
        .iter()
        .map(|g| {
            let mut n = g.neg.clone();
            let mut p = g.pos.clone();
            n.sort_by(f64::total_cmp);
            p.sort_by(f64::total_cmp);
            (n, p)
        })
        .collect();
    let mut taus: Vec<f64> = sorted
        .iter()
        .flat_map(|(n, p)| n.iter().chain(p.iter()).cloned())
        .collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    let probed: usize = groups
        .iter()
        .filter(|g| !g.pos.is_empty())
        .map(|g| g.size)
        .sum();

    let eval = |tau: f64| -> Result<OperatingPoint> {
        let points: Vec<GroupPoint> = groups
            .iter()
            .zip(&sorted)
            .map(|(g, (n, p))| {
                let p_fp = (n.len() - n.partition_point(|&s| s <= tau)) as f64 / n.len() as f64;
                let (size, p_fn) = if p.is_empty() {
                    (0, 0.0)
                } else {
                    (
                        g.size,
                        p.partition_point(|&s| s <= tau) as f64 / p.len() as f64,
                    )
                };
                GroupPoint { size, p_fp, p_fn }
            })
            .collect();
        let (p_fp, p_fn) = predict_multi_group(&points, probed)?;
        Ok(OperatingPoint { tau, p_fp, p_fn })
    };

    let mut points = vec![OperatingPoint {
        tau: f64::NEG_INFINITY,
        p_fp: 1.0,
        p_fn: 0.0,
    }];
    for tau in taus {
        points.push(eval(tau)?);
    }
    let auc = trapezoid_auc(&points);
    Ok(RocCurve { points, auc })
}

/// Area under the (p_fp, p_tp) polyline, closed at (0, 0) and (1, 1).
pub fn trapezoid_auc(points: &[OperatingPoint]) -> f64 {
    let mut xy: Vec<(f64, f64)> = points.iter().map(|p| (p.p_fp, p.p_tp())).collect();
    xy.push((0.0, 0.0));
    xy.push((1.0, 1.0));
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    xy.windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[1].1 + w[0].1))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}
