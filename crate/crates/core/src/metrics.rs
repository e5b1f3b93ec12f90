//! Hungarian-matched clustering accuracy and the forgetting / discovery
//! summary of a run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GmError, Result};
use crate::kernel::{hungarian_assign, CostMatrix};

/// Best one-to-one map from predicted labels to true labels, maximizing the
/// number of agreeing samples. Predicted labels left without a partner are
/// absent from the map.
pub fn best_matching(pred: &[usize], truth: &[usize]) -> Result<BTreeMap<usize, usize>> {
    if pred.len() != truth.len() {
        return Err(GmError::DimensionMismatch { expected: truth.len(), found: pred.len() });
    }
    if pred.is_empty() {
        return Err(GmError::Empty("label list"));
    }
    let p_ids: Vec<usize> = sorted_unique(pred);
    let t_ids: Vec<usize> = sorted_unique(truth);
    let p_pos: BTreeMap<usize, usize> = p_ids.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let t_pos: BTreeMap<usize, usize> = t_ids.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let n = p_ids.len().max(t_ids.len());
    let mut counts = vec![0.0; n * n];
    for (p, t) in pred.iter().zip(truth) {
        counts[p_pos[p] * n + t_pos[t]] += 1.0;
    }
    let max = counts.iter().copied().fold(0.0, f64::max);
    let costs = CostMatrix::new(n, n, counts.iter().map(|c| max - c).collect())?;
    let assignment = hungarian_assign(&costs)?;
    Ok(assignment
        .row_to_col
        .iter()
        .enumerate()
        .filter(|&(r, &c)| r < p_ids.len() && c < t_ids.len())
        .map(|(r, &c)| (p_ids[r], t_ids[c]))
        .collect())
}

fn sorted_unique(v: &[usize]) -> Vec<usize> {
    let mut u = v.to_vec();
    u.sort_unstable();
    u.dedup();
    u
}

fn agreement(pred: &[usize], truth: &[usize], h: &BTreeMap<usize, usize>) -> usize {
    pred.iter().zip(truth).filter(|(p, t)| h.get(p) == Some(t)).count()
}

/// Fraction of samples whose predicted cluster maps to their true label
/// under the best one-to-one relabeling.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let h = best_matching(pred, truth)?;
    Ok(agreement(pred, truth, &h) as f64 / pred.len() as f64)
}

/// Accuracy on known and novel classes at stage `t` under one matching over
/// all test samples. A class is known when it appeared before `t` (every
/// class at `t = 0`) and novel when it first appears at `t`.
/// `acc_novel` is `None` when no test sample belongs to a novel class; the
/// known accuracy is 0 when no known sample is present.
pub fn evaluate_timestep(
    pred: &[usize],
    truth: &[usize],
    class_origin: &BTreeMap<usize, usize>,
    t: usize,
) -> Result<(f64, Option<f64>)> {
    let h = best_matching(pred, truth)?;
    let mut known = (0usize, 0usize);
    let mut novel = (0usize, 0usize);
    for (p, y) in pred.iter().zip(truth) {
        let origin = *class_origin
            .get(y)
            .ok_or_else(|| GmError::Scenario(format!("test label {y} has no recorded origin")))?;
        let slot = if t > 0 && origin == t { &mut novel } else { &mut known };
        slot.1 += 1;
        if h.get(p) == Some(y) {
            slot.0 += 1;
        }
    }
    let ratio = |(hit, n): (usize, usize)| hit as f64 / n as f64;
    let acc_known = if known.1 == 0 { 0.0 } else { ratio(known) };
    Ok((acc_known, (novel.1 > 0).then(|| ratio(novel))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimestepRecord {
    pub t: usize,
    pub acc_known: f64,
    pub acc_novel: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLedger {
    pub records: Vec<TimestepRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Largest drop of known accuracy from the initial stage; negative when
    /// accuracy only improved.
    pub m_f: f64,
    /// Novel accuracy at the final stage.
    pub m_d: Option<f64>,
}

impl MetricsLedger {
    pub fn push(&mut self, t: usize, acc_known: f64, acc_novel: Option<f64>) {
        self.records.push(TimestepRecord { t, acc_known, acc_novel });
    }

    /// Ledger from a sequence of known accuracies at `t = 0, 1, ...`.
    pub fn from_known(acc_known: &[f64]) -> Self {
        Self {
            records: acc_known
                .iter()
                .enumerate()
                .map(|(t, &a)| TimestepRecord { t, acc_known: a, acc_novel: None })
                .collect(),
        }
    }

    /// `m_f` is zero for a ledger holding only the initial stage.
    pub fn finalize(&self) -> Result<Summary> {
        let first = self.records.iter().find(|r| r.t == 0).ok_or(GmError::MissingInitialRecord)?;
        let m_f = self
            .records
            .iter()
            .filter(|r| r.t >= 1)
            .map(|r| first.acc_known - r.acc_known)
            .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d))))
            .unwrap_or(0.0);
        let last = self.records.iter().max_by_key(|r| r.t).expect("non-empty");
        let m_d = if last.t == 0 { None } else { last.acc_novel };
        Ok(Summary { m_f, m_d })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(clustering_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert!((clustering_accuracy(&[0, 1, 1], &[0, 0, 1]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(clustering_accuracy(&[3, 1, 4], &[3, 1, 4]).unwrap(), 1.0);
        assert!(clustering_accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn rectangular_matchings() {
        // more predicted clusters than labels: the extra cluster scores zero
        assert_eq!(clustering_accuracy(&[0, 1, 2, 2], &[5, 5, 6, 6]).unwrap(), 0.75);
        // fewer predicted clusters than labels
        assert_eq!(clustering_accuracy(&[0, 0, 0, 0], &[1, 1, 2, 3]).unwrap(), 0.5);
    }

    #[test]
    fn joint_matching_with_one_mislabeled_known_sample() {
        // classes 0..4 known, 4..8 novel at t = 1; one sample of class 0 is
        // predicted as class 1
        let origin: BTreeMap<usize, usize> = (0..8).map(|c| (c, usize::from(c >= 4))).collect();
        let truth: Vec<usize> = (0..8).collect();
        let mut pred: Vec<usize> = (10..18).collect();
        pred[0] = 11;
        let (k, n) = evaluate_timestep(&pred, &truth, &origin, 1).unwrap();
        assert_eq!(k, 0.75);
        assert_eq!(n, Some(1.0));
    }

    #[test]
    fn initial_stage_has_no_novel_accuracy() {
        let origin: BTreeMap<usize, usize> = [(0, 0), (1, 0)].into();
        assert_eq!(evaluate_timestep(&[0, 1], &[0, 1], &origin, 0).unwrap(), (1.0, None));
    }

    #[test]
    fn finalize_examples() {
        let s = MetricsLedger::from_known(&[0.9, 0.85, 0.80, 0.82]).finalize().unwrap();
        assert_eq!(s.m_f, 0.9 - 0.80);
        assert!((s.m_f - 0.10).abs() < 1e-12);
        let s = MetricsLedger::from_known(&[0.7, 0.8]).finalize().unwrap();
        assert!((s.m_f + 0.10).abs() < 1e-12);
        let mut l = MetricsLedger::default();
        l.push(0, 1.0, None);
        l.push(1, 1.0, Some(0.36));
        assert_eq!(l.finalize().unwrap().m_d, Some(0.36));
        assert_eq!(MetricsLedger::from_known(&[0.5]).finalize().unwrap(), Summary { m_f: 0.0, m_d: None });
        assert!(matches!(MetricsLedger::default().finalize(), Err(GmError::MissingInitialRecord)));
    }
}
