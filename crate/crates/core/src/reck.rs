//! Triangular (Reck) mesh of two-mode mixers.
//!
//! Each mixer acts on adjacent modes `(m, m+1)` as
//!
//! ```text
//! T(θ, φ) = [[e^{iφ} cos θ, -sin θ],
//!            [e^{iφ} sin θ,  cos θ]]
//! ```
//!
//! and the mesh is `T_{K-1} ⋯ T_1 T_0` with `K = n(n-1)/2`. Mixer order
//! follows the nulling sequence of [`reck_decompose`]: the last row first,
//! left to right, then the row above it. Any unitary equals `D · mesh` for a
//! diagonal phase layer `D` on the outputs, which is returned separately.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{TransferMatrix, C64};

/// Phase vector of a Reck mesh, two entries `(θ, φ)` per mixer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReckParams {
    dim: usize,
    phases: Vec<f64>,
}

impl ReckParams {
    pub fn new(dim: usize, phases: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension("dim must be >= 1".into()));
        }
        let expected = dim * (dim - 1);
        if phases.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: phases.len(),
            });
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidData("non-finite phase".into()));
        }
        Ok(Self {
            dim,
            phases: phases.into_iter().map(wrap_phase).collect(),
        })
    }

    /// All mixers at θ = φ = 0, which composes to the identity.
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            phases: vec![0.0; dim * (dim.max(1) - 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn n_mixers(&self) -> usize {
        self.phases.len() / 2
    }

    /// Mirror image under complex conjugation: φ → -φ.
    pub fn mirrored(&self) -> Self {
        let phases = self
            .phases
            .chunks(2)
            .flat_map(|p| [p[0], -p[1]])
            .collect();
        Self::new(self.dim, phases).expect("same length")
    }
}

pub(crate) fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Mode index `m` of every mixer, in mesh order.
pub fn mixer_modes(dim: usize) -> Vec<usize> {
    let mut modes = Vec::with_capacity(dim * dim.saturating_sub(1) / 2);
    for row in (1..dim).rev() {
        modes.extend(0..row);
    }
    modes
}

fn mixer(theta: f64, phi: f64) -> [[C64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    let e = C64::from_polar(1.0, phi);
    [[e * c, C64::new(-s, 0.0)], [e * s, C64::new(c, 0.0)]]
}

fn d_mixer_theta(theta: f64, phi: f64) -> [[C64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    let e = C64::from_polar(1.0, phi);
    [[-e * s, C64::new(-c, 0.0)], [e * c, C64::new(-s, 0.0)]]
}

fn d_mixer_phi(theta: f64, phi: f64) -> [[C64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    let ie = C64::new(0.0, 1.0) * C64::from_polar(1.0, phi);
    let zero = C64::new(0.0, 0.0);
    [[ie * c, zero], [ie * s, zero]]
}

/// M <- T M, with T acting on rows (m, m+1).
fn left_apply(mat: &mut DMatrix<C64>, m: usize, t: &[[C64; 2]; 2]) {
    for c in 0..mat.ncols() {
        let a = mat[(m, c)];
        let b = mat[(m + 1, c)];
        mat[(m, c)] = t[0][0] * a + t[0][1] * b;
        mat[(m + 1, c)] = t[1][0] * a + t[1][1] * b;
    }
}

/// M <- M T, with T acting on columns (m, m+1).
fn right_apply(mat: &mut DMatrix<C64>, m: usize, t: &[[C64; 2]; 2]) {
    for r in 0..mat.nrows() {
        let a = mat[(r, m)];
        let b = mat[(r, m + 1)];
        mat[(r, m)] = a * t[0][0] + b * t[1][0];
        mat[(r, m + 1)] = a * t[0][1] + b * t[1][1];
    }
}

fn compose_raw(dim: usize, phases: &[f64]) -> DMatrix<C64> {
    let mut u = DMatrix::identity(dim, dim);
    for (k, &m) in mixer_modes(dim).iter().enumerate() {
        left_apply(&mut u, m, &mixer(phases[2 * k], phases[2 * k + 1]));
    }
    u
}

/// Unitary realized by the mesh.
pub fn reck_compose(params: &ReckParams) -> TransferMatrix {
    TransferMatrix::from_raw(compose_raw(params.dim, &params.phases))
}

/// The mesh unitary together with its derivative with respect to every phase,
/// ordered like [`ReckParams::phases`].
pub fn reck_compose_with_jacobian(params: &ReckParams) -> (DMatrix<C64>, Vec<DMatrix<C64>>) {
    let n = params.dim;
    let modes = mixer_modes(n);
    let k_total = modes.len();
    let ph = &params.phases;

    // before[k] = T_{k-1} ⋯ T_0
    let mut before = Vec::with_capacity(k_total + 1);
    let mut acc = DMatrix::<C64>::identity(n, n);
    before.push(acc.clone());
    for (k, &m) in modes.iter().enumerate() {
        left_apply(&mut acc, m, &mixer(ph[2 * k], ph[2 * k + 1]));
        before.push(acc.clone());
    }
    let u = acc;

    let mut grads = vec![DMatrix::<C64>::zeros(n, n); 2 * k_total];
    // after = T_{K-1} ⋯ T_{k+1}
    let mut after = DMatrix::<C64>::identity(n, n);
    for k in (0..k_total).rev() {
        let m = modes[k];
        let (theta, phi) = (ph[2 * k], ph[2 * k + 1]);
        let b = &before[k];
        for (slot, dt) in [(2 * k, d_mixer_theta(theta, phi)), (2 * k + 1, d_mixer_phi(theta, phi))] {
            let g = &mut grads[slot];
            for r in 0..n {
                let a0 = after[(r, m)];
                let a1 = after[(r, m + 1)];
                // row vector after[r, m..m+2] * dT
                let w0 = a0 * dt[0][0] + a1 * dt[1][0];
                let w1 = a0 * dt[0][1] + a1 * dt[1][1];
                for c in 0..n {
                    g[(r, c)] = w0 * b[(m, c)] + w1 * b[(m + 1, c)];
                }
            }
        }
        right_apply(&mut after, m, &mixer(theta, phi));
    }
    (u, grads)
}

/// Factor a unitary into mesh phases and a residual output phase layer,
/// `U = diag(external) · reck_compose(params)`.
pub fn reck_decompose(u: &TransferMatrix) -> Result<(ReckParams, Vec<f64>)> {
    let residual = u.unitarity_residual();
    if residual > 1e-8 {
        return Err(Error::NotUnitary { residual });
    }
    let n = u.dim();
    let mut work = u.as_matrix().clone();
    let mut phases = Vec::with_capacity(n * (n - 1));
    for row in (1..n).rev() {
        for m in 0..row {
            let target = work[(row, m)];
            let partner = work[(row, m + 1)];
            let (theta, phi) = if target.norm() == 0.0 {
                (0.0, 0.0)
            } else if partner.norm() == 0.0 {
                (std::f64::consts::FRAC_PI_2, 0.0)
            } else {
                (target.norm().atan2(partner.norm()), target.arg() - partner.arg())
            };
            let t = mixer(theta, phi);
            // inverse = adjoint
            let t_inv = [
                [t[0][0].conj(), t[1][0].conj()],
                [t[0][1].conj(), t[1][1].conj()],
            ];
            right_apply(&mut work, m, &t_inv);
            work[(row, m)] = C64::new(0.0, 0.0);
            phases.push(theta);
            phases.push(phi);
        }
    }
    let external = (0..n).map(|k| wrap_phase(work[(k, k)].arg())).collect();
    Ok((ReckParams::new(n, phases)?, external))
}

/// Apply a diagonal output phase layer: diag(e^{i p}) · U.
pub fn with_output_phases(u: &TransferMatrix, phases: &[f64]) -> TransferMatrix {
    let m = u.as_matrix();
    TransferMatrix::from_raw(DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
        C64::from_polar(1.0, phases[r]) * m[(r, c)]
    }))
}
