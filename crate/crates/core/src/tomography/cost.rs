use crate::error::{Error, Result};
use crate::optics::{check_indistinguishability, submatrix, visibility_parts, DENOMINATOR_FLOOR};
use crate::reck::{reck_compose, ReckParams};
use crate::tomography::dataset::VisibilityDataset;

/// Sum of squared visibility residuals over the usable records.
///
/// `t_ratios[i]` is t_i^2 up to a common factor. Records whose model
/// denominator vanishes contribute nothing.
pub fn cost(params: &ReckParams, t_ratios: &[f64], indist: f64, data: &VisibilityDataset) -> Result<f64> {
    check_indistinguishability(indist)?;
    if params.dim() != data.dim || t_ratios.len() != data.dim {
        return Err(Error::DimensionMismatch {
            expected: data.dim,
            got: if params.dim() != data.dim { params.dim() } else { t_ratios.len() },
        });
    }
    if t_ratios.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::OutOfRange("transmission ratios must be positive".into()));
    }
    let u = reck_compose(params);
    let mut total = 0.0;
    for r in data.usable() {
        let q = &r.quad;
        let (num, den) = visibility_parts(&submatrix(&u, q)?, t_ratios[q.i] / t_ratios[q.j], indist);
        if den >= DENOMINATOR_FLOOR {
            total += (num / den - r.value).powi(2);
        }
    }
    Ok(total)
}
