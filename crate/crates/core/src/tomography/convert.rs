//! Conversion of cross-correlation visibilities into coincidence ratios.
//!
//! A cross-correlation visibility normalizes the central peak by the side
//! peaks, which also contain same-input contributions. Removing those with
//! the Sinkhorn estimates of |U|^2 and of the input transmissions gives the
//! ratio of indistinguishable to distinguishable coincidences, the quantity
//! whose cosine relations the SST phase construction inverts.

use nalgebra::{DMatrix, DVector};

use crate::optics::{ModeQuad, DENOMINATOR_FLOOR};
use crate::tomography::dataset::VisibilityDataset;

/// Coincidence ratio Q/C for one quad.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvertedRecord {
    pub quad: ModeQuad,
    pub value: f64,
    pub defined: bool,
}

/// Side-peak excess α for a quad: same-input terms over cross terms.
/// Returns `None` when the cross-term denominator is below the floor.
pub fn side_excess(q: &ModeQuad, power: &DMatrix<f64>, in_scale: &DVector<f64>) -> Option<f64> {
    let aa = power[(q.k, q.i)];
    let bb = power[(q.k, q.j)];
    let cc = power[(q.l, q.i)];
    let dd = power[(q.l, q.j)];
    let x = in_scale[q.i] / in_scale[q.j];
    let cross = aa * dd + bb * cc;
    if cross < DENOMINATOR_FLOOR {
        return None;
    }
    Some((x * aa * cc + bb * dd / x) / cross)
}

/// V' = (1 + α) V for every record, with α from the stochastic core `power`
/// (≈ |U|^2) and input scales `in_scale` (∝ t_i^2).
pub fn visibility_convert(
    data: &VisibilityDataset,
    power: &DMatrix<f64>,
    in_scale: &DVector<f64>,
) -> Vec<ConvertedRecord> {
    data.records
        .iter()
        .map(|r| match side_excess(&r.quad, power, in_scale) {
            Some(alpha) if r.flag.is_usable() => ConvertedRecord {
                quad: r.quad,
                value: (1.0 + alpha) * r.value,
                defined: true,
            },
            _ => ConvertedRecord {
                quad: r.quad,
                value: r.value,
                defined: false,
            },
        })
        .collect()
}
