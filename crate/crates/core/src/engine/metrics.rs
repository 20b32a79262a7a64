use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleRecord;
use crate::error::{HlgtError, Result};
use crate::head::{iou_1d, GroundTruth, SegmentPrediction};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallEntry {
    pub n: usize,
    pub m: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub entries: Vec<RecallEntry>,
    pub samples: usize,
    pub seconds: f64,
    pub samples_per_second: f64,
}

impl MetricReport {
    pub fn recall(&self, n: usize, m: f64) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.n == n && e.m == m)
            .map(|e| e.recall)
    }

    /// Recall must not decrease with `n` nor increase with `m`.
    pub fn check_monotone(&self) -> Result<()> {
        for a in &self.entries {
            for b in &self.entries {
                let violated = (a.m == b.m && a.n < b.n && a.recall > b.recall)
                    || (a.n == b.n && a.m < b.m && a.recall < b.recall);
                if violated {
                    return Err(HlgtError::InvalidArgument(format!(
                        "non-monotone recall: R@{},{} = {} vs R@{},{} = {}",
                        a.n, a.m, a.recall, b.n, b.m, b.recall
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:>4} {:>6} {:>8}\n", "n", "IoU>m", "recall");
        for e in &self.entries {
            s.push_str(&format!("{:>4} {:>6.2} {:>8.4}\n", e.n, e.m, e.recall));
        }
        s.push_str(&format!(
            "{} samples, {:.3}s, {:.1} samples/s\n",
            self.samples, self.seconds, self.samples_per_second
        ));
        s
    }
}

/// Slot indices ordered by confidence, highest first, ties by index.
pub fn rank_slots(preds: &[SegmentPrediction]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .total_cmp(&preds[a].confidence)
            .then(a.cmp(&b))
    });
    idx
}

/// Whether any of the top-`n` ranked slots has IoU strictly above `m`.
pub fn hit(preds: &[SegmentPrediction], gt: &GroundTruth, n: usize, m: f64) -> bool {
    rank_slots(preds)
        .iter()
        .take(n)
        .any(|&h| iou_1d(preds[h].bounds, gt.bounds) > m)
}

pub fn recall_report(
    preds: &[Vec<SegmentPrediction>],
    gts: &[GroundTruth],
    n_list: &[usize],
    m_list: &[f64],
) -> Result<MetricReport> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(HlgtError::InvalidArgument(format!(
            "{} prediction sets for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let mut entries = Vec::new();
    for &n in n_list {
        for &m in m_list {
            let hits = preds
                .iter()
                .zip(gts)
                .filter(|(p, g)| hit(p, g, n, m))
                .count();
            entries.push(RecallEntry {
                n,
                m,
                recall: hits as f64 / preds.len() as f64,
            });
        }
    }
    let report = MetricReport {
        entries,
        samples: preds.len(),
        seconds: 0.0,
        samples_per_second: 0.0,
    };
    report.check_monotone()?;
    Ok(report)
}

/// Predicts every sample (fanned out over the thread pool) and scores it.
pub fn evaluate(
    model: &Model,
    data: &[SampleRecord],
    n_list: &[usize],
    m_list: &[f64],
) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(HlgtError::Empty("evaluation set"));
    }
    let start = std::time::Instant::now();
    let preds = data
        .par_iter()
        .map(|s| model.predict_sample(s))
        .collect::<Result<Vec<_>>>()?;
    let seconds = start.elapsed().as_secs_f64();
    let gts: Vec<GroundTruth> = data.iter().map(|s| s.gt).collect();
    let mut report = recall_report(&preds, &gts, n_list, m_list)?;
    report.seconds = seconds;
    report.samples_per_second = data.len() as f64 / seconds.max(1e-12);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::Interval;

    fn p(slot: usize, s: f64, e: f64, d: f64) -> SegmentPrediction {
        SegmentPrediction {
            slot,
            bounds: Interval { start: s, end: e },
            confidence: d,
        }
    }

    #[test]
    fn single_sample_thresholds() {
        let gt = GroundTruth::from_seconds(0.0, 6.0, 10.0).unwrap();
        // prediction (0, 0.36) vs gt (0, 0.6): IoU 0.6
        let preds = vec![vec![p(0, 0.0, 0.36, 0.9)]];
        let r = recall_report(&preds, &[gt], &[1], &[0.5, 0.7]).unwrap();
        assert_eq!(r.recall(1, 0.5), Some(1.0));
        assert_eq!(r.recall(1, 0.7), Some(0.0));
    }

    #[test]
    fn iou_equal_to_threshold_is_a_miss() {
        let gt = GroundTruth::from_seconds(0.0, 5.0, 10.0).unwrap();
        let preds = vec![vec![p(0, 0.0, 0.25, 0.9)]];
        let r = recall_report(&preds, &[gt], &[1], &[0.5]).unwrap();
        assert_eq!(r.recall(1, 0.5), Some(0.0));
    }

    #[test]
    fn ranking_ties_by_index() {
        assert_eq!(
            rank_slots(&[p(0, 0., 1., 0.5), p(1, 0., 1., 0.7), p(2, 0., 1., 0.5)]),
            vec![1, 0, 2]
        );
    }
}
