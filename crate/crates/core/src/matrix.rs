//! Complex transfer matrices: Haar sampling, fidelity, and phase gauges.
//!
//! Two-photon visibilities are blind to phases on individual input and
//! output modes and to complex conjugation of the whole matrix, so every
//! comparison between matrices goes through [`canonicalize_phases`] and
//! [`resolve_conjugate_ambiguity`] first.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance used when tagging a matrix as unitary.
pub const UNITARY_TOL: f64 = 1e-10;

/// Square complex matrix mapping input-mode amplitudes to output-mode amplitudes.
///
/// Rows index output modes, columns index input modes.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferMatrix {
    data: DMatrix<C64>,
}

impl TransferMatrix {
    pub fn new(data: DMatrix<C64>) -> Result<Self> {
        if data.nrows() != data.ncols() || data.nrows() == 0 {
            return Err(Error::InvalidDimension(format!(
                "transfer matrix must be square and non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidData("non-finite matrix entry".into()));
        }
        Ok(Self { data })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            data: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidDimension("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
    }

    pub(crate) fn from_raw(data: DMatrix<C64>) -> Self {
        debug_assert!(data.is_square());
        Self { data }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[(row, col)]
    }

    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.data
    }

    pub fn conj(&self) -> Self {
        Self {
            data: self.data.map(|z| z.conj()),
        }
    }

    /// Largest entry of |U^dag U - I|.
    pub fn unitarity_residual(&self) -> f64 {
        let n = self.dim();
        let g = self.data.adjoint() * &self.data;
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in 0..n {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((g[(r, c)] - C64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_residual() <= tol
    }

    /// Entrywise squared moduli, rows = outputs.
    pub fn power(&self) -> DMatrix<f64> {
        self.data.map(|z| z.norm_sqr())
    }

    /// Nearest unitary in Frobenius norm (polar factor).
    pub fn nearest_unitary(&self) -> Self {
        let svd = self.data.clone().svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        Self { data: u * v_t }
    }

    pub fn rows(&self) -> Vec<Vec<C64>> {
        (0..self.dim())
            .map(|r| (0..self.dim()).map(|c| self.data[(r, c)]).collect())
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    #[serde(default = "crate::io::format_version")]
    format_version: u32,
    dim: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for TransferMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let json = MatrixJson {
            format_version: crate::io::FORMAT_VERSION,
            dim: n,
            re: (0..n)
                .map(|r| (0..n).map(|c| self.data[(r, c)].re).collect())
                .collect(),
            im: (0..n)
                .map(|r| (0..n).map(|c| self.data[(r, c)].im).collect())
                .collect(),
        };
        json.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TransferMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let json = MatrixJson::deserialize(d)?;
        let n = json.dim;
        let shape_ok = json.re.len() == n
            && json.im.len() == n
            && json.re.iter().all(|r| r.len() == n)
            && json.im.iter().all(|r| r.len() == n);
        if !shape_ok {
            return Err(D::Error::custom(format!("matrix arrays do not match dim {n}")));
        }
        let data = DMatrix::from_fn(n, n, |r, c| C64::new(json.re[r][c], json.im[r][c]));
        TransferMatrix::new(data).map_err(D::Error::custom)
    }
}

/// Haar-distributed unitary from the QR decomposition of a complex Ginibre matrix.
pub fn haar_random_unitary(dim: usize, seed: u64) -> Result<TransferMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    haar_random_unitary_with(dim, &mut rng)
}

pub fn haar_random_unitary_with<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<TransferMatrix> {
    if dim == 0 {
        return Err(Error::InvalidDimension("dim must be >= 1".into()));
    }
    let z = DMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Q * diag(r_ii / |r_ii|) makes the distribution exactly Haar.
    for c in 0..dim {
        let d = r[(c, c)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for row in 0..dim {
            q[(row, c)] *= ph;
        }
    }
    Ok(TransferMatrix::from_raw(q))
}

/// Matrix fidelity |Tr(A^dag B)|^2 / (Tr(A^dag A) Tr(B^dag B)).
pub fn matrix_fidelity(a: &TransferMatrix, b: &TransferMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut overlap = C64::new(0.0, 0.0);
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.data.iter().zip(b.data.iter()) {
        overlap += x.conj() * y;
        na += x.norm_sqr();
        nb += y.norm_sqr();
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedFidelity);
    }
    Ok((overlap.norm_sqr() / (na * nb)).clamp(0.0, 1.0))
}

/// Row and column used for the default phase gauge: last row, second column.
pub fn default_gauge(dim: usize) -> (usize, usize) {
    (dim - 1, 1.min(dim - 1))
}

/// Returns D1 U D2 with the chosen row and column real and nonnegative.
pub fn canonicalize_phases(u: &TransferMatrix, row: usize, col: usize) -> Result<TransferMatrix> {
    let n = u.dim();
    if row >= n || col >= n {
        return Err(Error::OutOfRange(format!("gauge ({row}, {col}) outside dim {n}")));
    }
    for c in 0..n {
        if u.get(row, c).norm() == 0.0 {
            return Err(Error::CannotCanonicalize { row, col: c });
        }
    }
    for r in 0..n {
        if u.get(r, col).norm() == 0.0 {
            return Err(Error::CannotCanonicalize { row: r, col });
        }
    }
    let mut m = u.data.clone();
    for c in 0..n {
        let z = m[(row, c)];
        let ph = z.conj() / z.norm();
        for r in 0..n {
            m[(r, c)] *= ph;
        }
        m[(row, c)] = C64::new(z.norm(), 0.0);
    }
    for r in 0..n {
        if r == row {
            continue;
        }
        let z = m[(r, col)];
        let ph = z.conj() / z.norm();
        for c in 0..n {
            m[(r, c)] *= ph;
        }
        m[(r, col)] = C64::new(z.norm(), 0.0);
    }
    Ok(TransferMatrix::from_raw(m))
}

pub fn canonicalize_default(u: &TransferMatrix) -> Result<TransferMatrix> {
    let (r, c) = default_gauge(u.dim());
    canonicalize_phases(u, r, c)
}

/// Which member of the {U, U*} pair was returned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    #[serde(rename = "U")]
    Direct,
    #[serde(rename = "U*")]
    Conjugate,
}

/// Entries with |Im| below this fraction of the largest modulus count as real.
const REAL_ENTRY_TOL: f64 = 1e-6;

/// Picks between U and U*. With a reference the closer one wins; otherwise
/// the first clearly non-real entry (row-major) gets a positive imaginary part.
pub fn resolve_conjugate_ambiguity(
    candidate: &TransferMatrix,
    reference: Option<&TransferMatrix>,
) -> Result<(TransferMatrix, Branch)> {
    let conj = candidate.conj();
    match reference {
        Some(r) => {
            let f_direct = matrix_fidelity(candidate, r)?;
            let f_conj = matrix_fidelity(&conj, r)?;
            if f_conj > f_direct {
                Ok((conj, Branch::Conjugate))
            } else {
                Ok((candidate.clone(), Branch::Direct))
            }
        }
        None => {
            let scale = candidate.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let first = candidate
                .data
                .transpose()
                .iter()
                .copied()
                .find(|z| z.im.abs() > REAL_ENTRY_TOL * scale);
            match first {
                Some(z) if z.im < 0.0 => Ok((conj, Branch::Conjugate)),
                _ => Ok((candidate.clone(), Branch::Direct)),
            }
        }
    }
}

/// Canonicalize both matrices with the default gauge, resolve the branch of
/// `estimate` against `truth`, and return their fidelity.
pub fn gauge_fidelity(estimate: &TransferMatrix, truth: &TransferMatrix) -> Result<f64> {
    let t = canonicalize_default(truth)?;
    let e = canonicalize_default(estimate)?;
    let (e, _) = resolve_conjugate_ambiguity(&e, Some(&t))?;
    matrix_fidelity(&e, &t)
}
