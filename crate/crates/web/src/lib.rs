//! WebAssembly bindings for the demo page in `www/`.

use hlgt::blocks::PositionalEncoding;
use hlgt::decoder::{cmcc_loss, cycle, CmccMode};
use hlgt::head::{giou_1d, iou_1d, Interval};
use hlgt::tensor::{Tape, Tensor};
use wasm_bindgen::prelude::*;

fn interval(start: f64, end: f64) -> Interval {
    Interval {
        start: start.min(end),
        end: start.max(end),
    }
}

/// `[iou, giou, hull_start, hull_end]` for two intervals given in any order.
#[wasm_bindgen]
pub fn interval_overlap(a_start: f64, a_end: f64, b_start: f64, b_end: f64) -> Vec<f64> {
    let (a, b) = (interval(a_start, a_end), interval(b_start, b_end));
    vec![
        iou_1d(a, b),
        giou_1d(a, b),
        a.start.min(b.start),
        a.end.max(b.end),
    ]
}

/// Row-major `len×dim` sinusoidal table, or an empty vector for an odd or
/// zero width.
#[wasm_bindgen]
pub fn positional_table(dim: usize, len: usize) -> Vec<f64> {
    let Ok(pe) = PositionalEncoding::new(dim, len.max(1)) else {
        return Vec::new();
    };
    (0..len)
        .flat_map(|t| pe.at(t).map(|r| r.to_vec()).unwrap_or_default())
        .collect()
}

/// Phrase → soft nearest clip → soft phrase location for points in the
/// plane. `clips` and `phrases` hold `x, y` pairs. Returns
/// `[loss, J×J assignment..., J locations...]`, or an empty vector when
/// either set is empty.
#[wasm_bindgen]
pub fn cycle_assignment(clips: &[f64], phrases: &[f64]) -> Vec<f64> {
    let (p, j) = (clips.len() / 2, phrases.len() / 2);
    if p == 0 || j == 0 {
        return Vec::new();
    }
    let mut tape = Tape::<f64>::new();
    let (Ok(c), Ok(q)) = (
        Tensor::from_f64(p, 2, &clips[..2 * p]),
        Tensor::from_f64(j, 2, &phrases[..2 * j]),
    ) else {
        return Vec::new();
    };
    let (Ok(c), Ok(q)) = (tape.constant(c), tape.constant(q)) else {
        return Vec::new();
    };
    let (Ok(cyc), Ok(loss)) = (
        cycle(&mut tape, c, q),
        cmcc_loss(&mut tape, c, q, CmccMode::Distribution),
    ) else {
        return Vec::new();
    };
    let mut out = vec![tape.scalar(loss)];
    out.extend_from_slice(tape.value(cyc.assignment).data());
    out.extend_from_slice(tape.value(cyc.location).data());
    out
}
