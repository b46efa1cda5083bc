//! Forward model: losses, two-photon peak areas, visibilities, and the
//! integrated correlation-function expressions that include source coherence.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{TransferMatrix, C64};

/// Denominators below this make a visibility undefined.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Amplitude transmissions of the input (`t_in`) and output (`t_out`) modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub t_in: Vec<f64>,
    pub t_out: Vec<f64>,
}

impl LossModel {
    pub fn new(t_in: Vec<f64>, t_out: Vec<f64>) -> Result<Self> {
        if t_in.len() != t_out.len() {
            return Err(Error::DimensionMismatch {
                expected: t_in.len(),
                got: t_out.len(),
            });
        }
        if t_in.iter().chain(&t_out).any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::OutOfRange("transmissions must lie in (0, 1]".into()));
        }
        Ok(Self { t_in, t_out })
    }

    pub fn lossless(dim: usize) -> Self {
        Self {
            t_in: vec![1.0; dim],
            t_out: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.t_in.len()
    }

    /// x_ij = (t_i / t_j)^2.
    pub fn input_ratio(&self, i: usize, j: usize) -> f64 {
        (self.t_in[i] / self.t_in[j]).powi(2)
    }
}

/// Scalar summary of the photon source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub indistinguishability: f64,
    pub g2_0: f64,
    pub c1: f64,
    pub c2: f64,
    pub b0: C64,
    pub p_emit: f64,
}

impl SourceModel {
    /// Independent single-photon pulses with the given indistinguishability.
    pub fn ideal(indistinguishability: f64) -> Self {
        Self {
            indistinguishability,
            g2_0: 0.0,
            c1: 0.0,
            c2: 0.0,
            b0: C64::new(0.0, 0.0),
            p_emit: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_indistinguishability(self.indistinguishability)?;
        if !(self.g2_0 >= 0.0) || !(self.c1 >= 0.0) || !(self.c2 >= 0.0) {
            return Err(Error::OutOfRange("g2_0, c1 and c2 must be >= 0".into()));
        }
        if !(self.p_emit > 0.0 && self.p_emit <= 1.0) {
            return Err(Error::OutOfRange(format!("p_emit {} outside (0, 1]", self.p_emit)));
        }
        if !self.b0.re.is_finite() || !self.b0.im.is_finite() {
            return Err(Error::OutOfRange("b0 must be finite".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_indistinguishability(i: f64) -> Result<()> {
    if (0.0..=1.0).contains(&i) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("indistinguishability {i} outside [0, 1]")))
    }
}

/// Input pair (i, j) and output pair (k, l).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeQuad {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub l: usize,
}

impl ModeQuad {
    pub fn new(i: usize, j: usize, k: usize, l: usize) -> Result<Self> {
        if i == j || k == l {
            return Err(Error::InvalidData(format!("degenerate quad ({i},{j},{k},{l})")));
        }
        Ok(Self { i, j, k, l })
    }

    /// Same quad with i < j and k < l; visibilities are symmetric under both swaps.
    pub fn canonical(self) -> Self {
        Self {
            i: self.i.min(self.j),
            j: self.i.max(self.j),
            k: self.k.min(self.l),
            l: self.k.max(self.l),
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.i.max(self.j).max(self.k).max(self.l) >= dim {
            return Err(Error::OutOfRange(format!("quad {self:?} outside dim {dim}")));
        }
        Ok(())
    }

    /// All canonical quads for the given input pairs, outputs in lexicographic order.
    pub fn all_for_pairs(dim: usize, pairs: &[(usize, usize)]) -> Vec<Self> {
        let mut out = Vec::new();
        for &(i, j) in pairs {
            for k in 0..dim {
                for l in k + 1..dim {
                    out.push(Self { i, j, k, l }.canonical());
                }
            }
        }
        out
    }
}

/// 2×2 block `[[a, b], [c, d]] = [[M_ki, M_kj], [M_li, M_lj]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sub2 {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub d: C64,
}

impl Sub2 {
    pub fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Self { a, b, c, d }
    }

    pub fn permanent(&self) -> C64 {
        self.a * self.d + self.b * self.c
    }

    pub fn determinant(&self) -> C64 {
        self.a * self.d - self.b * self.c
    }

    fn moduli_sq(&self) -> [f64; 4] {
        [self.a.norm_sqr(), self.b.norm_sqr(), self.c.norm_sqr(), self.d.norm_sqr()]
    }

    /// Re{a* d* b c}, the two-photon interference term.
    pub fn interference(&self) -> f64 {
        (self.a.conj() * self.d.conj() * self.b * self.c).re
    }
}

/// M = T' U T.
pub fn apply_losses(u: &TransferMatrix, loss: &LossModel) -> Result<TransferMatrix> {
    let n = u.dim();
    if loss.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: loss.dim(),
        });
    }
    let m = u.as_matrix();
    Ok(TransferMatrix::from_raw(DMatrix::from_fn(n, n, |a, b| {
        m[(a, b)] * (loss.t_out[a] * loss.t_in[b])
    })))
}

/// R = |M|^2 entrywise.
pub fn power_matrix(m: &TransferMatrix) -> DMatrix<f64> {
    m.power()
}

pub fn submatrix(m: &TransferMatrix, q: &ModeQuad) -> Result<Sub2> {
    q.check_dim(m.dim())?;
    Ok(Sub2 {
        a: m.get(q.k, q.i),
        b: m.get(q.k, q.j),
        c: m.get(q.l, q.i),
        d: m.get(q.l, q.j),
    })
}

/// Central and side peak areas (A0, Ak) for a lossy block.
pub fn peak_areas(mp: &Sub2, indist: f64) -> Result<(f64, f64)> {
    check_indistinguishability(indist)?;
    let a0 = 0.5 * (1.0 + indist) * mp.permanent().norm_sqr()
        + 0.5 * (1.0 - indist) * mp.determinant().norm_sqr();
    let [aa, bb, cc, dd] = mp.moduli_sq();
    let ak = aa * cc + bb * dd + aa * dd + bb * cc;
    Ok((a0, ak))
}

/// Numerator and denominator of the lossy visibility on a unitary block.
pub(crate) fn visibility_parts(up: &Sub2, x: f64, indist: f64) -> (f64, f64) {
    let [aa, bb, cc, dd] = up.moduli_sq();
    let num = 0.5 * (1.0 + indist) * up.permanent().norm_sqr()
        + 0.5 * (1.0 - indist) * up.determinant().norm_sqr();
    let den = aa * dd + bb * cc + x * aa * cc + bb * dd / x;
    (num, den)
}

/// Central-to-side peak ratio for the quad, with input-loss ratio `x_ij`.
pub fn visibility(u: &TransferMatrix, x_ij: f64, indist: f64, q: &ModeQuad) -> Result<f64> {
    check_indistinguishability(indist)?;
    if !(x_ij > 0.0) || !x_ij.is_finite() {
        return Err(Error::OutOfRange(format!("x_ij = {x_ij} must be > 0")));
    }
    let up = submatrix(u, q)?;
    visibility_of_block(&up, x_ij, indist)
}

pub fn visibility_of_block(up: &Sub2, x_ij: f64, indist: f64) -> Result<f64> {
    let (num, den) = visibility_parts(up, x_ij, indist);
    if den < DENOMINATOR_FLOOR {
        return Err(Error::UndefinedVisibility { denominator: den });
    }
    Ok(num / den)
}

/// Integrated, normalized central-peak correlation including source coherence terms.
pub fn g2_central(mp: &Sub2, src: &SourceModel) -> Result<f64> {
    src.validate()?;
    let Sub2 { a, b, c, d } = *mp;
    let [aa, bb, cc, dd] = mp.moduli_sq();
    let cross = aa * dd + bb * cc;
    let same_input = aa * cc + bb * dd;
    let c2_term = (b.conj() * d.conj() * a * c).re;
    let b0_term = ((a * d + b * c) * (c.conj() * a.conj() + d.conj() * b.conj()) * src.b0).re;
    // cross + 2I Re{a* d* b c}, written as I |Per|^2 + (1 - I) cross to avoid
    // cancellation near a HOM dip.
    let i = src.indistinguishability;
    let interfering = i * mp.permanent().norm_sqr() + (1.0 - i) * cross;
    Ok(interfering + same_input * src.g2_0 + 2.0 * c2_term * src.c2 + 2.0 * b0_term)
}

/// Integrated, normalized side-peak correlation (factored form).
pub fn g2_side(mp: &Sub2, c1: f64) -> Result<f64> {
    if !(c1 >= 0.0) {
        return Err(Error::OutOfRange(format!("c1 = {c1} must be >= 0")));
    }
    let Sub2 { a, b, c, d } = *mp;
    let first = a.norm_sqr() + b.norm_sqr() + 2.0 * (a.conj() * b).re * c1;
    let second = c.norm_sqr() + d.norm_sqr() + 2.0 * (c.conj() * d).re * c1;
    Ok(first * second)
}

/// Expanded (sum) form of [`g2_side`], kept for cross-checking.
pub fn g2_side_expanded(mp: &Sub2, c1: f64) -> f64 {
    let Sub2 { a, b, c, d } = *mp;
    let row_a = a.norm_sqr() + b.norm_sqr();
    let row_b = c.norm_sqr() + d.norm_sqr();
    row_a * row_b
        + 4.0 * (d.conj() * c).re * (a.conj() * b).re * c1 * c1
        + (2.0 * (c.conj() * d).re * row_a + 2.0 * (b.conj() * a).re * row_b) * c1
}

/// For an ideal source, the ratio g2_central / g2_side on the lossy block
/// and the lossless-block visibility it must equal.
pub fn reduction_check(mp: &Sub2, src_ideal: &SourceModel) -> Result<(f64, f64)> {
    let ideal = src_ideal.g2_0 == 0.0
        && src_ideal.c1 == 0.0
        && src_ideal.c2 == 0.0
        && src_ideal.b0 == C64::new(0.0, 0.0);
    if !ideal {
        return Err(Error::InvalidData(
            "reduction check needs g2_0 = c1 = c2 = b0 = 0".into(),
        ));
    }
    let central = g2_central(mp, src_ideal)?;
    let side = g2_side(mp, 0.0)?;
    if side < DENOMINATOR_FLOOR {
        return Err(Error::UndefinedVisibility { denominator: side });
    }
    let (num, den) = visibility_parts(mp, 1.0, src_ideal.indistinguishability);
    Ok((central / side, num / den))
}

/// Result of the HOM indistinguishability correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomEstimate {
    pub indistinguishability: f64,
    /// Raw value before clamping;
    pub raw: f64,
    /// True when the raw value fell outside [0, 1] and was clamped.
    pub clamped: bool,
}

/// Indistinguishability from a HOM central/side ratio `v` on an (R, T) splitter
/// with input efficiency ratio `r_eta` and source g2(0).
pub fn hom_indistinguishability(v: f64, r: f64, t: f64, r_eta: f64, g2_0: f64) -> Result<HomEstimate> {
    if (r + t - 1.0).abs() > 1e-9 || r < 0.0 || t < 0.0 {
        return Err(Error::OutOfRange(format!("R + T must equal 1 (R={r}, T={t})")));
    }
    if r * t == 0.0 {
        return Err(Error::DegenerateSplitter);
    }
    if !(r_eta > 0.0 && r_eta.is_finite()) {
        return Err(Error::OutOfRange(format!("r_eta = {r_eta} must be in (0, inf)")));
    }
    if !(v >= 0.0) {
        return Err(Error::OutOfRange(format!("V = {v} must be >= 0")));
    }
    let rt = r * t;
    let imbalance = (r_eta.sqrt() - 1.0 / r_eta.sqrt()).powi(2);
    let raw = (r * r + t * t) / (2.0 * rt) + 0.5 * (r_eta + 1.0 / r_eta) * g2_0
        - (1.0 / (2.0 * rt) + 0.5 * imbalance) * v;
    let clamped = !(0.0..=1.0).contains(&raw);
    Ok(HomEstimate {
        indistinguishability: raw.clamp(0.0, 1.0),
        raw,
        clamped,
    })
}
