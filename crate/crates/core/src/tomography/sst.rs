//! Analytic initial guess from coincidence ratios.
//!
//! Moduli come from the doubly stochastic core of R. Phases are referenced
//! to row 0 and column 0 (both fixed real). For every other entry the quad
//! with inputs (0, b) and outputs (0, a) gives
//!
//! ```text
//! Q/C - 1 = 2 I |U_00 U_0b U_a0 U_ab| cos θ_ab / (|U_00 U_ab|^2 + |U_0b U_a0|^2)
//! ```
//!
//! which fixes θ_ab up to sign. Signs are chosen greedily, column by column,
//! against every other quad whose remaining entries are already known.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{TransferMatrix, C64};
use crate::optics::ModeQuad;
use crate::tomography::convert::ConvertedRecord;

/// Cosines beyond ±(1 + CLIP_TOLERANCE) are counted as warnings before clipping.
pub const CLIP_TOLERANCE: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct SstGuess {
    pub unitary: TransferMatrix,
    /// Number of cosine estimates that fell outside [-1, 1].
    pub clipped: usize,
    /// Subset of `clipped` that exceeded the clip tolerance.
    pub clip_warnings: usize,
}

fn combo(theta: &DMatrix<f64>, q: &ModeQuad) -> f64 {
    theta[(q.k, q.j)] + theta[(q.l, q.i)] - theta[(q.k, q.i)] - theta[(q.l, q.j)]
}

fn entries(q: &ModeQuad) -> [(usize, usize); 4] {
    [(q.k, q.i), (q.k, q.j), (q.l, q.i), (q.l, q.j)]
}

fn predicted_ratio(moduli: &DMatrix<f64>, theta: &DMatrix<f64>, q: &ModeQuad, indist: f64) -> Option<f64> {
    let [ka, kb, la, lb] = entries(q).map(|e| moduli[e]);
    let cross = (ka * lb).powi(2) + (kb * la).powi(2);
    if cross < 1e-15 {
        return None;
    }
    Some(1.0 + 2.0 * indist * ka * kb * la * lb * combo(theta, q).cos() / cross)
}

/// Build U0 from coincidence ratios and the stochastic core `stochastic` (≈ |U|^2).
pub fn sst_initial_guess(
    records: &[ConvertedRecord],
    stochastic: &DMatrix<f64>,
    indist: f64,
) -> Result<SstGuess> {
    let n = stochastic.nrows();
    if n < 2 || stochastic.ncols() != n {
        return Err(Error::InvalidDimension(format!("power matrix {}x{}", n, stochastic.ncols())));
    }
    if !(indist > 0.0 && indist <= 1.0) {
        return Err(Error::OutOfRange(format!("assumed indistinguishability {indist} must be in (0, 1]")));
    }
    let moduli = stochastic.map(|v| v.max(0.0).sqrt());
    let lookup: BTreeMap<ModeQuad, f64> = records
        .iter()
        .filter(|r| r.defined && r.value.is_finite())
        .map(|r| (r.quad.canonical(), r.value))
        .collect();

    let mut theta = DMatrix::<f64>::zeros(n, n);
    let mut known = DMatrix::<bool>::from_fn(n, n, |r, c| r == 0 || c == 0);
    let mut clipped = 0;
    let mut clip_warnings = 0;

    for b in 1..n {
        for a in 1..n {
            let primary = ModeQuad { i: 0, j: b, k: 0, l: a };
            let value = *lookup.get(&primary).ok_or_else(|| {
                Error::InsufficientData(format!(
                    "missing quad inputs (0,{b}) outputs (0,{a}) needed for the initial guess"
                ))
            })?;
            let prod = moduli[(0, 0)] * moduli[(0, b)] * moduli[(a, 0)] * moduli[(a, b)];
            let cross = (moduli[(0, 0)] * moduli[(a, b)]).powi(2) + (moduli[(0, b)] * moduli[(a, 0)]).powi(2);
            let mut cosine = if prod > 0.0 {
                (value - 1.0) * cross / (2.0 * indist * prod)
            } else {
                0.0
            };
            if cosine.abs() > 1.0 {
                clipped += 1;
                if cosine.abs() > 1.0 + CLIP_TOLERANCE {
                    clip_warnings += 1;
                }
                cosine = cosine.clamp(-1.0, 1.0);
            }
            let magnitude = cosine.acos();

            // sign: score both candidates against quads that touch (a, b) and known entries only
            known[(a, b)] = true;
            let mut scores = [0.0f64; 2];
            for (slot, sign) in [(0usize, 1.0f64), (1, -1.0)] {
                theta[(a, b)] = sign * magnitude;
                for (q, &obs) in &lookup {
                    let touches = entries(q).contains(&(a, b));
                    if !touches || q == &primary || !entries(q).iter().all(|&e| known[e]) {
                        continue;
                    }
                    if let Some(pred) = predicted_ratio(&moduli, &theta, q, indist) {
                        scores[slot] += (pred - obs).powi(2);
                    }
                }
            }
            theta[(a, b)] = if scores[1] < scores[0] { -magnitude } else { magnitude };
        }
    }

    let raw = DMatrix::from_fn(n, n, |r, c| C64::from_polar(moduli[(r, c)], theta[(r, c)]));
    let unitary = TransferMatrix::new(raw)?.nearest_unitary();
    Ok(SstGuess {
        unitary,
        clipped,
        clip_warnings,
    })
}
