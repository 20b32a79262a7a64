//! Boundary head, 1-D GIoU, slot matching and the training objective.

use serde::{Deserialize, Serialize};

use crate::blocks::{Linear, ParamBuilder};
use crate::error::{HlgtError, Result};
use crate::params::Binding;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Closed interval `[start, end]` in normalized time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start <= end) {
            return Err(HlgtError::InvalidArgument(format!(
                "inverted interval ({start}, {end})"
            )));
        }
        Ok(Interval { start, end })
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrediction {
    pub slot: usize,
    pub bounds: Interval,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bounds: Interval,
    pub start_sec: f64,
    pub end_sec: f64,
    pub duration: f64,
}

impl GroundTruth {
    pub fn from_seconds(start_sec: f64, end_sec: f64, duration: f64) -> Result<Self> {
        if !(duration > 0.0) || !(0.0 <= start_sec && start_sec < end_sec && end_sec <= duration) {
            return Err(HlgtError::InvalidArgument(format!(
                "segment ({start_sec}, {end_sec}) invalid for duration {duration}"
            )));
        }
        Ok(GroundTruth {
            bounds: Interval {
                start: start_sec / duration,
                end: end_sec / duration,
            },
            start_sec,
            end_sec,
            duration,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub l1: f64,
    pub iou: f64,
    pub f: f64,
    pub neg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 0.8,
            iou: 0.5,
            f: 0.2,
            neg: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cmcc: f64,
    pub l1_term: f64,
    pub iou_term: f64,
    pub conf_term: f64,
    pub neg_conf_term: f64,
    pub boundary: f64,
    pub total: f64,
    pub slot: usize,
}

/// Three-layer feed-forward head emitting `(center, width, confidence)`.
#[derive(Debug, Clone, Copy)]
pub struct HeadParams {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl HeadParams {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        pb.scope(name, |pb| HeadParams {
            l1: Linear::new(pb, "l1", dim, dim),
            l2: Linear::new(pb, "l2", dim, dim),
            l3: Linear::new(pb, "l3", dim, 3),
        })
    }
}

/// Tape columns of the head output.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    /// `M×1` each.
    pub start: Var,
    pub end: Var,
    pub confidence: Var,
}

pub fn head_forward<F: Real>(
    tape: &mut Tape<F>,
    bind: &Binding,
    head: &HeadParams,
    o_cross: Var,
) -> Result<HeadVars> {
    let h = head.l1.forward(tape, bind, o_cross)?;
    let h = tape.gelu(h)?;
    let h = head.l2.forward(tape, bind, h)?;
    let h = tape.gelu(h)?;
    let out = head.l3.forward(tape, bind, h)?;
    let out = tape.sigmoid(out)?;
    let center = tape.slice_cols(out, 0, 1)?;
    let width = tape.slice_cols(out, 1, 1)?;
    let confidence = tape.slice_cols(out, 2, 1)?;
    let half = tape.scale(width, 0.5)?;
    let lo = tape.sub(center, half)?;
    let hi = tape.add(center, half)?;
    Ok(HeadVars {
        start: tape.clamp01(lo)?,
        end: tape.clamp01(hi)?,
        confidence,
    })
}

pub fn read_predictions<F: Real>(tape: &Tape<F>, vars: &HeadVars) -> Vec<SegmentPrediction> {
    let (s, e, c) = (
        tape.value(vars.start),
        tape.value(vars.end),
        tape.value(vars.confidence),
    );
    (0..s.rows())
        .map(|h| SegmentPrediction {
            slot: h,
            bounds: Interval {
                start: s.get(h, 0).as_f64(),
                end: e.get(h, 0).as_f64(),
            },
            confidence: c.get(h, 0).as_f64(),
        })
        .collect()
}

/// `start = clamp(c - w/2)`, `end = clamp(c + w/2)`.
pub fn center_width_to_interval(center: f64, width: f64) -> Interval {
    Interval {
        start: (center - width / 2.0).clamp(0.0, 1.0),
        end: (center + width / 2.0).clamp(0.0, 1.0),
    }
}

pub fn iou_1d(a: Interval, b: Interval) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.len() + b.len() - inter;
    if union == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / union
}

/// IoU minus the fraction of the enclosing interval covered by neither.
pub fn giou_1d(a: Interval, b: Interval) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.len() + b.len() - inter;
    let hull = a.end.max(b.end) - a.start.min(b.start);
    if union == 0.0 {
        return if a == b { 1.0 } else { -1.0 };
    }
    inter / union - (hull - union) / hull
}

pub fn boundary_loss(pred: &SegmentPrediction, gt: &GroundTruth, w: &LossWeights) -> f64 {
    let l1 = (pred.bounds.start - gt.bounds.start).abs() + (pred.bounds.end - gt.bounds.end).abs();
    w.l1 * l1 + w.iou * (1.0 - giou_1d(pred.bounds, gt.bounds)) - pred.confidence
}

/// Slot with the lowest boundary loss; ties go to the lowest index.
pub fn select_slot(
    preds: &[SegmentPrediction],
    gt: &GroundTruth,
    w: &LossWeights,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (h, p) in preds.iter().enumerate() {
        let l = boundary_loss(p, gt, w);
        if best.is_none_or(|(_, b)| l < b) {
            best = Some((h, l));
        }
    }
    best.map(|(h, _)| h).ok_or(HlgtError::Empty("predictions"))
}

/// Highest-confidence slot; ties go to the lowest index.
pub fn infer_segment(preds: &[SegmentPrediction]) -> Result<SegmentPrediction> {
    let mut best: Option<&SegmentPrediction> = None;
    for p in preds {
        if best.is_none_or(|b| p.confidence > b.confidence) {
            best = Some(p);
        }
    }
    best.copied().ok_or(HlgtError::Empty("predictions"))
}

/// Value-level objective for already-decoded predictions.
pub fn final_loss(
    preds: &[SegmentPrediction],
    gt: &GroundTruth,
    cmcc: f64,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let mu = select_slot(preds, gt, w)?;
    let p = &preds[mu];
    let l1_term =
        w.l1 * ((p.bounds.start - gt.bounds.start).abs() + (p.bounds.end - gt.bounds.end).abs());
    let iou_term = w.iou * (1.0 - giou_1d(p.bounds, gt.bounds));
    let conf_term = -p.confidence;
    let boundary = l1_term + iou_term + conf_term;
    let neg_conf_term = w.neg
        * preds
            .iter()
            .enumerate()
            .filter(|&(h, _)| h != mu)
            .map(|(_, q)| q.confidence)
            .sum::<f64>();
    Ok(LossBreakdown {
        cmcc,
        l1_term,
        iou_term,
        conf_term,
        neg_conf_term,
        boundary,
        total: cmcc + w.f * boundary + neg_conf_term,
        slot: mu,
    })
}

/// Differentiable GIoU between `1×1` interval endpoints.
pub fn giou_tape<F: Real>(tape: &mut Tape<F>, s1: Var, e1: Var, s2: Var, e2: Var) -> Result<Var> {
    let lo = tape.maximum(s1, s2)?;
    let hi = tape.minimum(e1, e2)?;
    let overlap = tape.sub(hi, lo)?;
    let zero = tape.constant(Tensor::zeros(1, 1))?;
    let inter = tape.maximum(overlap, zero)?;
    let len1 = tape.sub(e1, s1)?;
    let len2 = tape.sub(e2, s2)?;
    let sum = tape.add(len1, len2)?;
    let union = tape.sub(sum, inter)?;
    let outer_hi = tape.maximum(e1, e2)?;
    let outer_lo = tape.minimum(s1, s2)?;
    let hull = tape.sub(outer_hi, outer_lo)?;
    let iou = tape.div(inter, union)?;
    let gap = tape.sub(hull, union)?;
    let frac = tape.div(gap, hull)?;
    tape.sub(iou, frac)
}

/// Differentiable boundary loss of slot `slot` against `gt`.
pub fn boundary_loss_tape<F: Real>(
    tape: &mut Tape<F>,
    vars: &HeadVars,
    slot: usize,
    gt: &GroundTruth,
    w: &LossWeights,
) -> Result<Var> {
    let s = tape.gather_rows(vars.start, &[slot])?;
    let e = tape.gather_rows(vars.end, &[slot])?;
    let d = tape.gather_rows(vars.confidence, &[slot])?;
    let gs = tape.constant(Tensor::from_f64(1, 1, &[gt.bounds.start])?)?;
    let ge = tape.constant(Tensor::from_f64(1, 1, &[gt.bounds.end])?)?;
    let ds = tape.sub(s, gs)?;
    let ds = tape.abs(ds)?;
    let de = tape.sub(e, ge)?;
    let de = tape.abs(de)?;
    let l1 = tape.add(ds, de)?;
    let l1 = tape.scale(l1, w.l1)?;
    let g = giou_tape(tape, s, e, gs, ge)?;
    let c = tape.scale(g, -w.iou)?;
    let c = tape.add_const(c, w.iou)?;
    let total = tape.add(l1, c)?;
    tape.sub(total, d)
}

/// Differentiable objective: selects the matched slot on current values,
/// then builds `cmcc + λ_f·boundary(μ) + λ_neg·Σ_{h≠μ} d̂_h`.
pub fn final_loss_tape<F: Real>(
    tape: &mut Tape<F>,
    vars: &HeadVars,
    cmcc: Option<Var>,
    gt: &GroundTruth,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let preds = read_predictions(tape, vars);
    let cmcc_value = cmcc.map_or(0.0, |c| tape.scalar(c).as_f64());
    let breakdown = final_loss(&preds, gt, cmcc_value, w)?;
    let mu = breakdown.slot;
    let b = boundary_loss_tape(tape, vars, mu, gt, w)?;
    let mut total = tape.scale(b, w.f)?;
    if let Some(c) = cmcc {
        total = tape.add(total, c)?;
    }
    let others: Vec<usize> = (0..preds.len()).filter(|&h| h != mu).collect();
    if !others.is_empty() && w.neg != 0.0 {
        let rest = tape.gather_rows(vars.confidence, &others)?;
        let rest = tape.sum_all(rest)?;
        let rest = tape.scale(rest, w.neg)?;
        total = tape.add(total, rest)?;
    }
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: f64, e: f64) -> Interval {
        Interval::new(s, e).unwrap()
    }

    fn pred(slot: usize, s: f64, e: f64, d: f64) -> SegmentPrediction {
        SegmentPrediction {
            slot,
            bounds: iv(s, e),
            confidence: d,
        }
    }

    fn gt(s: f64, e: f64) -> GroundTruth {
        GroundTruth::from_seconds(s, e, 1.0).unwrap()
    }

    #[test]
    fn center_width_examples() {
        let a = center_width_to_interval(0.5, 0.2);
        assert!((a.start - 0.4).abs() < 1e-12 && (a.end - 0.6).abs() < 1e-12);
        let b = center_width_to_interval(0.05, 0.3);
        assert_eq!(b.start, 0.0);
        assert!((b.end - 0.2).abs() < 1e-12);
    }

    #[test]
    fn giou_examples() {
        assert_eq!(giou_1d(iv(0.2, 0.7), iv(0.2, 0.7)), 1.0);
        assert!((giou_1d(iv(0.1, 0.4), iv(0.5, 0.9)) + 0.125).abs() < 1e-12);
        assert!((giou_1d(iv(0.0, 1.0), iv(0.25, 0.75)) - 0.5).abs() < 1e-12);
        assert_eq!(giou_1d(iv(0.3, 0.3), iv(0.3, 0.3)), 1.0);
        assert!(Interval::new(0.5, 0.4).is_err());
    }

    #[test]
    fn boundary_loss_examples() {
        let w = LossWeights::default();
        assert_eq!(
            boundary_loss(&pred(0, 0.5, 0.9, 1.0), &gt(0.5, 0.9), &w),
            -1.0
        );
        let l = boundary_loss(&pred(0, 0.1, 0.4, 0.0), &gt(0.5, 0.9), &w);
        assert!((l - 1.2825).abs() < 1e-12);
    }

    #[test]
    fn slot_selection() {
        let w = LossWeights::default();
        let g = gt(0.5, 0.9);
        assert_eq!(select_slot(&[pred(0, 0.1, 0.2, 0.3)], &g, &w).unwrap(), 0);
        let same = [pred(0, 0.1, 0.2, 0.3), pred(1, 0.1, 0.2, 0.3)];
        assert_eq!(select_slot(&same, &g, &w).unwrap(), 0);
        let two = [pred(0, 0.5, 0.9, 0.5), pred(1, 0.1, 0.4, 0.9)];
        assert_eq!(select_slot(&two, &g, &w).unwrap(), 0);
        assert!(select_slot(&[], &g, &w).is_err());
    }

    #[test]
    fn inference_argmax() {
        let p = [
            pred(0, 0.0, 0.1, 0.2),
            pred(1, 0.0, 0.1, 0.9),
            pred(2, 0.0, 0.1, 0.5),
        ];
        assert_eq!(infer_segment(&p).unwrap().slot, 1);
        let eq = [pred(0, 0.0, 0.1, 0.5), pred(1, 0.0, 0.1, 0.5)];
        assert_eq!(infer_segment(&eq).unwrap().slot, 0);
    }

    #[test]
    fn final_loss_examples() {
        let w = LossWeights::default();
        let g = gt(0.5, 0.9);
        let b = final_loss(&[pred(0, 0.5, 0.9, 1.0)], &g, (-1.0f64).exp(), &w).unwrap();
        assert!((b.total - 0.167_879_441_171_442_3).abs() < 1e-12);
        let w0 = LossWeights { f: 0.0, ..w };
        let b = final_loss(
            &[pred(0, 0.5, 0.9, 1.0), pred(1, 0.0, 0.2, 0.4)],
            &g,
            0.3,
            &w0,
        )
        .unwrap();
        assert!((b.total - (0.3 + 0.1 * 0.4)).abs() < 1e-12);
    }

    #[test]
    fn tape_giou_matches_value_level() {
        let mut tape = Tape::<f64>::new();
        let v = |t: &mut Tape<f64>, x: f64| t.constant(Tensor::scalar(x)).unwrap();
        let (a, b, c, d) = (
            v(&mut tape, 0.1),
            v(&mut tape, 0.4),
            v(&mut tape, 0.5),
            v(&mut tape, 0.9),
        );
        let g = giou_tape(&mut tape, a, b, c, d).unwrap();
        assert!((tape.scalar(g) + 0.125).abs() < 1e-12);
    }
}
