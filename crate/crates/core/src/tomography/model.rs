//! Parameterized visibility models and their analytic Jacobians.
//!
//! Parameter vector layout:
//! `[mesh phases (n(n-1)) | log t_i^2/t_0^2, i = 1..n (cross-correlation only) | logit I]`.

use nalgebra::{DMatrix, DVector};

use crate::lm::LeastSquares;
use crate::matrix::C64;
use crate::optics::{visibility_parts, ModeQuad, Sub2, DENOMINATOR_FLOOR};
use crate::reck::{reck_compose, reck_compose_with_jacobian, ReckParams};

/// What each record measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observable {
    /// Central over mean side peak of the cross-correlation histogram.
    CrossCorrelation,
    /// Coincidence ratio Q / C from separate indistinguishable and
    /// distinguishable runs.
    CoincidenceRatio,
}

pub(crate) fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// Ratio of indistinguishable to distinguishable coincidences of a unitary block.
pub fn coincidence_ratio(up: &Sub2, indist: f64) -> Option<f64> {
    let cross = (up.a * up.d).norm_sqr() + (up.b * up.c).norm_sqr();
    if cross < DENOMINATOR_FLOOR {
        return None;
    }
    Some(1.0 + 2.0 * indist * up.interference() / cross)
}

#[derive(Clone, Debug)]
pub struct VisibilityFit {
    pub dim: usize,
    pub observable: Observable,
    pub quads: Vec<ModeQuad>,
    pub targets: Vec<f64>,
    /// Extra residuals tying |U|^2 and the input ratios to the scaled power
    /// matrix. Only needed when the visibilities alone leave the fit
    /// underdetermined.
    pub anchor: Option<PowerAnchor>,
}

/// Targets from the Sinkhorn scaling of R.
#[derive(Clone, Debug)]
pub struct PowerAnchor {
    /// Doubly stochastic core, an estimate of |U|^2.
    pub moduli_sq: DMatrix<f64>,
    /// ln(t_i^2 / t_0^2) for i = 1..n. Ignored by the coincidence-ratio observable.
    pub log_ratios: Vec<f64>,
}

/// Decoded parameter vector.
#[derive(Clone, Debug)]
pub struct FitPoint {
    pub params: ReckParams,
    /// t_i^2 / t_0^2 per input mode (all ones for the coincidence-ratio observable).
    pub t_ratios: Vec<f64>,
    pub indistinguishability: f64,
}

impl VisibilityFit {
    pub fn n_phases(&self) -> usize {
        self.dim * (self.dim - 1)
    }

    fn n_log_ratios(&self) -> usize {
        match self.observable {
            Observable::CrossCorrelation => self.dim - 1,
            Observable::CoincidenceRatio => 0,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_phases() + self.n_log_ratios() + 1
    }

    pub fn encode(&self, params: &ReckParams, t_ratios: &[f64], indist: f64) -> DVector<f64> {
        let mut x = Vec::with_capacity(self.n_params());
        x.extend_from_slice(params.phases());
        if self.observable == Observable::CrossCorrelation {
            x.extend(t_ratios[1..].iter().map(|t| (t / t_ratios[0]).ln()));
        }
        x.push(logit(indist));
        DVector::from_vec(x)
    }

    pub fn decode(&self, x: &DVector<f64>) -> FitPoint {
        let np = self.n_phases();
        let params = ReckParams::new(self.dim, x.as_slice()[..np].to_vec()).expect("phase count");
        let mut t_ratios = vec![1.0; self.dim];
        for k in 0..self.n_log_ratios() {
            t_ratios[k + 1] = x[np + k].exp();
        }
        FitPoint {
            params,
            t_ratios,
            indistinguishability: logistic(x[self.n_params() - 1]),
        }
    }

    fn log_ratio(&self, x: &DVector<f64>, mode: usize) -> f64 {
        match (self.observable, mode) {
            (Observable::CrossCorrelation, m) if m > 0 => x[self.n_phases() + m - 1],
            _ => 0.0,
        }
    }

    /// Model value of one record; `None` where the denominator vanishes.
    fn model_value(&self, up: &Sub2, x_ij: f64, indist: f64) -> Option<f64> {
        match self.observable {
            Observable::CrossCorrelation => {
                let (num, den) = visibility_parts(up, x_ij, indist);
                (den >= DENOMINATOR_FLOOR).then(|| num / den)
            }
            Observable::CoincidenceRatio => coincidence_ratio(up, indist),
        }
    }

    fn block(u: &DMatrix<C64>, q: &ModeQuad) -> Sub2 {
        Sub2::new(u[(q.k, q.i)], u[(q.k, q.j)], u[(q.l, q.i)], u[(q.l, q.j)])
    }

    /// Wirtinger gradients (∂f/∂a, ∂f/∂b, ∂f/∂c, ∂f/∂d), ∂f/∂x and ∂f/∂I of one record.
    fn record_gradient(&self, s: &Sub2, x_ij: f64, indist: f64) -> Option<([C64; 4], f64, f64)> {
        let Sub2 { a, b, c, d } = *s;
        let (aa, bb, cc, dd) = (a.norm_sqr(), b.norm_sqr(), c.norm_sqr(), d.norm_sqr());
        let interference = s.interference();
        // ∂Re{a* d* b c}
        let d_int = [
            0.5 * d * b.conj() * c.conj(),
            0.5 * a.conj() * d.conj() * c,
            0.5 * a.conj() * d.conj() * b,
            0.5 * a * b.conj() * c.conj(),
        ];
        let d_cross = [a.conj() * dd, b.conj() * cc, c.conj() * bb, d.conj() * aa];
        let cross = aa * dd + bb * cc;
        match self.observable {
            Observable::CrossCorrelation => {
                let den = cross + x_ij * aa * cc + bb * dd / x_ij;
                if den < DENOMINATOR_FLOOR {
                    return None;
                }
                let v = (cross + 2.0 * indist * interference) / den;
                let d_den = [
                    d_cross[0] + a.conj() * (x_ij * cc),
                    d_cross[1] + b.conj() * (dd / x_ij),
                    d_cross[2] + c.conj() * (x_ij * aa),
                    d_cross[3] + d.conj() * (bb / x_ij),
                ];
                let mut g = [C64::new(0.0, 0.0); 4];
                for e in 0..4 {
                    let d_num = d_cross[e] + d_int[e] * (2.0 * indist);
                    g[e] = (d_num - d_den[e] * v) / den;
                }
                let dx = -v * (aa * cc - bb * dd / (x_ij * x_ij)) / den;
                let di = 2.0 * interference / den;
                Some((g, dx, di))
            }
            Observable::CoincidenceRatio => {
                if cross < DENOMINATOR_FLOOR {
                    return None;
                }
                let mut g = [C64::new(0.0, 0.0); 4];
                for e in 0..4 {
                    g[e] = (d_int[e] * cross - d_cross[e] * interference) * (2.0 * indist / (cross * cross));
                }
                Some((g, 0.0, 2.0 * interference / cross))
            }
        }
    }
}

impl LeastSquares for VisibilityFit {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let point = self.decode(x);
        let u = reck_compose(&point.params).into_matrix();
        let indist = point.indistinguishability;
        let mut r: Vec<f64> = self
            .quads
            .iter()
            .zip(&self.targets)
            .map(|(q, &target)| {
                let x_ij = (self.log_ratio(x, q.i) - self.log_ratio(x, q.j)).exp();
                self.model_value(&Self::block(&u, q), x_ij, indist)
                    .map_or(0.0, |v| v - target)
            })
            .collect();
        if let Some(anchor) = &self.anchor {
            r.extend(u.iter().zip(anchor.moduli_sq.iter()).map(|(z, a)| z.norm_sqr() - a));
            r.extend((1..=self.n_log_ratios()).map(|m| self.log_ratio(x, m) - anchor.log_ratios[m - 1]));
        }
        DVector::from_vec(r)
    }

    fn residuals_and_jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let point = self.decode(x);
        let (u, grads) = reck_compose_with_jacobian(&point.params);
        let indist = point.indistinguishability;
        let np = self.n_phases();
        let n_par = self.n_params();
        let n_rows = self.quads.len() + self.anchor.as_ref().map_or(0, |_| self.dim * self.dim + self.n_log_ratios());
        let mut r = DVector::zeros(n_rows);
        let mut jac = DMatrix::zeros(n_rows, n_par);
        for (row, (q, &target)) in self.quads.iter().zip(&self.targets).enumerate() {
            let x_ij = (self.log_ratio(x, q.i) - self.log_ratio(x, q.j)).exp();
            let s = Self::block(&u, q);
            let Some(value) = self.model_value(&s, x_ij, indist) else {
                continue;
            };
            r[row] = value - target;
            let Some((g, dx, di)) = self.record_gradient(&s, x_ij, indist) else {
                continue;
            };
            let idx = [(q.k, q.i), (q.k, q.j), (q.l, q.i), (q.l, q.j)];
            for (p, dmat) in grads.iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for e in 0..4 {
                    acc += g[e] * dmat[idx[e]];
                }
                jac[(row, p)] = 2.0 * acc.re;
            }
            if self.observable == Observable::CrossCorrelation {
                // x_ij = exp(s_i - s_j)
                if q.i > 0 {
                    jac[(row, np + q.i - 1)] += dx * x_ij;
                }
                if q.j > 0 {
                    jac[(row, np + q.j - 1)] -= dx * x_ij;
                }
            }
            jac[(row, n_par - 1)] = di * indist * (1.0 - indist);
        }
        if let Some(anchor) = &self.anchor {
            let base = self.quads.len();
            // column-major, matching the residual order
            for (e, (z, a)) in u.iter().zip(anchor.moduli_sq.iter()).enumerate() {
                r[base + e] = z.norm_sqr() - a;
                for (p, dmat) in grads.iter().enumerate() {
                    jac[(base + e, p)] = 2.0 * (z.conj() * dmat.as_slice()[e]).re;
                }
            }
            let base = base + self.dim * self.dim;
            for m in 1..=self.n_log_ratios() {
                r[base + m - 1] = self.log_ratio(x, m) - anchor.log_ratios[m - 1];
                jac[(base + m - 1, np + m - 1)] = 1.0;
            }
        }
        (r, jac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::haar_random_unitary;
    use crate::optics::visibility;
    use crate::reck::reck_decompose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(observable: Observable, n: usize) -> VisibilityFit {
        let pairs: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let quads = ModeQuad::all_for_pairs(n, &pairs);
        let targets = vec![0.3; quads.len()];
        VisibilityFit { dim: n, observable, quads, targets, anchor: None }
    }

    #[test]
    fn anchored_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for observable in [Observable::CrossCorrelation, Observable::CoincidenceRatio] {
            let mut fit = problem(observable, 3);
            fit.anchor = Some(PowerAnchor {
                moduli_sq: DMatrix::from_element(3, 3, 1.0 / 3.0),
                log_ratios: vec![0.1, -0.2],
            });
            let x = DVector::from_fn(fit.n_params(), |_, _| rng.random::<f64>() * 2.0 - 0.5);
            let (r, jac) = fit.residuals_and_jacobian(&x);
            assert_eq!(r, fit.residuals(&x));
            let h = 1e-6;
            for p in 0..fit.n_params() {
                let mut plus = x.clone();
                let mut minus = x.clone();
                plus[p] += h;
                minus[p] -= h;
                let fd = (fit.residuals(&plus) - fit.residuals(&minus)) / (2.0 * h);
                for row in 0..r.len() {
                    let (a, b) = (jac[(row, p)], fd[row]);
                    assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-3), "{observable:?} p{p} r{row}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for observable in [Observable::CrossCorrelation, Observable::CoincidenceRatio] {
            let fit = problem(observable, 4);
            let x = DVector::from_fn(fit.n_params(), |_, _| rng.random::<f64>() * 2.0 - 0.5);
            let (_, jac) = fit.residuals_and_jacobian(&x);
            let h = 1e-6;
            for p in 0..fit.n_params() {
                let mut plus = x.clone();
                let mut minus = x.clone();
                plus[p] += h;
                minus[p] -= h;
                let fd = (fit.residuals(&plus) - fit.residuals(&minus)) / (2.0 * h);
                for row in 0..fit.quads.len() {
                    let (a, b) = (jac[(row, p)], fd[row]);
                    assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-3), "{observable:?} p{p} r{row}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn residuals_vanish_at_generating_point() {
        let u = haar_random_unitary(5, 17).unwrap();
        let (params, _) = reck_decompose(&u).unwrap();
        let t_ratios = vec![1.0, 0.8, 1.3, 0.6, 0.95];
        let mut fit = problem(Observable::CrossCorrelation, 5);
        fit.targets = fit
            .quads
            .iter()
            .map(|q| visibility(&u, t_ratios[q.i] / t_ratios[q.j], 0.9, q).unwrap())
            .collect();
        let x = fit.encode(&params, &t_ratios, 0.9);
        assert!(fit.residuals(&x).norm_squared() < 1e-20);
        let back = fit.decode(&x);
        assert!((back.indistinguishability - 0.9).abs() < 1e-12);
        for (a, b) in back.t_ratios.iter().zip(&t_ratios) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
