//! Two-photon boson sampling: count prediction and source/loss fitting.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{minimize, LeastSquares, LmConfig};
use crate::matrix::TransferMatrix;
use crate::optics::{apply_losses, g2_central, peak_areas, submatrix, LossModel, ModeQuad, SourceModel};
use crate::tomography::model::{logistic, logit};

/// Output pairs (k, l), k < l, in the order coincidence vectors use.
pub fn output_pairs(dim: usize) -> Vec<(usize, usize)> {
    (0..dim).flat_map(|k| (k + 1..dim).map(move |l| (k, l))).collect()
}

/// Counts for one two-photon input pair, in arbitrary common units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountsRecord {
    pub input_pair: (usize, usize),
    /// Per output mode.
    pub singles: Vec<f64>,
    /// Per output pair, ordered as `output_pairs(dim)`.
    pub coincidences: Vec<f64>,
}

impl CountsRecord {
    pub fn dim(&self) -> usize {
        self.singles.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let (i, j) = self.input_pair;
        if n < 2 || i >= n || j >= n || i == j {
            return Err(Error::InvalidData(format!("input pair {:?} invalid for dim {n}", self.input_pair)));
        }
        if self.coincidences.len() != n * (n - 1) / 2 {
            return Err(Error::DimensionMismatch {
                expected: n * (n - 1) / 2,
                got: self.coincidences.len(),
            });
        }
        if self.singles.iter().chain(&self.coincidences).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidData("counts must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Singles divided by their sum.
    pub fn singles_distribution(&self) -> Result<Vec<f64>> {
        normalized(&self.singles)
    }

    /// Coincidences divided by their sum.
    pub fn coincidence_distribution(&self) -> Result<Vec<f64>> {
        normalized(&self.coincidences)
    }
}

fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let s: f64 = v.iter().sum();
    if !(s > 0.0) {
        return Err(Error::NotNormalized { sum: s });
    }
    Ok(v.iter().map(|x| x / s).collect())
}

/// What the coincidence entries of a record represent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoincidenceModel {
    /// Background-corrected two-photon coincidences (multiphoton terms removed).
    #[default]
    Corrected,
    /// Raw central-peak areas, including the g2(0), c2 and b0 source terms.
    CentralPeak,
}

fn check_pair(dim: usize, pair: (usize, usize)) -> Result<()> {
    if pair.0 >= dim || pair.1 >= dim || pair.0 == pair.1 {
        return Err(Error::InvalidData(format!("input pair {pair:?} invalid for dim {dim}")));
    }
    Ok(())
}

pub fn predict_counts(
    u: &TransferMatrix,
    loss: &LossModel,
    src: &SourceModel,
    input_pair: (usize, usize),
) -> Result<CountsRecord> {
    predict_counts_with(u, loss, src, input_pair, CoincidenceModel::Corrected)
}

pub fn predict_counts_with(
    u: &TransferMatrix,
    loss: &LossModel,
    src: &SourceModel,
    input_pair: (usize, usize),
    model: CoincidenceModel,
) -> Result<CountsRecord> {
    src.validate()?;
    let n = u.dim();
    check_pair(n, input_pair)?;
    let m = apply_losses(u, loss)?;
    let (i, j) = input_pair;
    let p = src.p_emit;
    let singles = (0..n)
        .map(|k| p * (m.get(k, i).norm_sqr() + m.get(k, j).norm_sqr()))
        .collect();
    let coincidences = output_pairs(n)
        .into_iter()
        .map(|(k, l)| {
            let s = submatrix(&m, &ModeQuad { i, j, k, l })?;
            let area = match model {
                CoincidenceModel::Corrected => peak_areas(&s, src.indistinguishability)?.0,
                CoincidenceModel::CentralPeak => g2_central(&s, src)?,
            };
            Ok(p * p * area)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CountsRecord {
        input_pair,
        singles,
        coincidences,
    })
}

/// Bhattacharyya overlap Σ √(p_i q_i) of two normalized distributions.
pub fn classical_fidelity(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    for v in [p, q] {
        if v.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidData("probabilities must be >= 0".into()));
        }
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized { sum: s });
        }
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum::<f64>().min(1.0))
}

/// Mean classical fidelity over the singles and coincidence distributions of
/// matching records.
pub fn mean_classical_fidelity(predicted: &[CountsRecord], observed: &[CountsRecord]) -> Result<f64> {
    if predicted.len() != observed.len() || predicted.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: observed.len(),
            got: predicted.len(),
        });
    }
    let mut total = 0.0;
    for (a, b) in predicted.iter().zip(observed) {
        total += classical_fidelity(&a.singles_distribution()?, &b.singles_distribution()?)?;
        total += classical_fidelity(&a.coincidence_distribution()?, &b.coincidence_distribution()?)?;
    }
    Ok(total / (2 * predicted.len()) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceFitConfig {
    pub seed: u64,
    pub n_starts: usize,
    pub max_iter: usize,
    pub initial_indistinguishability: f64,
    pub initial_p_emit: f64,
    pub coincidence_model: CoincidenceModel,
}

impl Default for SourceFitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_starts: 4,
            max_iter: 500,
            initial_indistinguishability: 0.9,
            initial_p_emit: 0.5,
            coincidence_model: CoincidenceModel::Corrected,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceFit {
    /// Input amplitude transmissions, scaled so the largest is 1.
    pub t_in: Vec<f64>,
    /// Output amplitude transmissions, scaled so the largest is 1.
    pub t_out: Vec<f64>,
    pub indistinguishability: f64,
    /// Emission probability times the largest input and output power transmissions.
    pub p_emit: f64,
    /// Per-record accumulation scale.
    pub scales: Vec<f64>,
    /// Sum of squared normalized residuals.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SourceFit {
    pub fn loss_model(&self) -> Result<LossModel> {
        LossModel::new(self.t_in.clone(), self.t_out.clone())
    }

    pub fn source_model(&self) -> SourceModel {
        SourceModel {
            p_emit: self.p_emit,
            ..SourceModel::ideal(self.indistinguishability)
        }
    }

    /// Predictions of the fitted model, scaled like the fitted records.
    pub fn predict(&self, u: &TransferMatrix, pairs: &[(usize, usize)]) -> Result<Vec<CountsRecord>> {
        let loss = self.loss_model()?;
        let src = self.source_model();
        pairs
            .iter()
            .zip(&self.scales)
            .map(|(&pair, &c)| {
                let mut r = predict_counts(u, &loss, &src, pair)?;
                r.singles.iter_mut().chain(r.coincidences.iter_mut()).for_each(|v| *v *= c);
                Ok(r)
            })
            .collect()
    }
}

/// Layout: [ln t_in[1..] | ln t_out[1..] | logit I | logit p | ln C_r].
/// t_in[0] = t_out[0] = 1 fixes the overall transmission scale.
struct SourceProblem<'a> {
    u: &'a TransferMatrix,
    observed: &'a [CountsRecord],
    model: CoincidenceModel,
    singles_norm: Vec<f64>,
    coinc_norm: Vec<f64>,
}

struct Decoded {
    loss: LossModel,
    src: SourceModel,
    scales: Vec<f64>,
}

impl SourceProblem<'_> {
    fn dim(&self) -> usize {
        self.u.dim()
    }

    fn n_params(&self) -> usize {
        2 * (self.dim() - 1) + 2 + self.observed.len()
    }

    fn decode_raw(&self, x: &DVector<f64>) -> (Vec<f64>, Vec<f64>, f64, f64, Vec<f64>) {
        let n = self.dim();
        let mut t_in = vec![1.0; n];
        let mut t_out = vec![1.0; n];
        for k in 1..n {
            t_in[k] = x[k - 1].exp();
            t_out[k] = x[n - 1 + k - 1].exp();
        }
        let base = 2 * (n - 1);
        let indist = logistic(x[base]);
        let p = logistic(x[base + 1]);
        let scales = (0..self.observed.len()).map(|r| x[base + 2 + r].exp()).collect();
        (t_in, t_out, indist, p, scales)
    }

    fn decode(&self, x: &DVector<f64>) -> Decoded {
        let (t_in, t_out, indist, p, scales) = self.decode_raw(x);
        Decoded {
            // transmissions above 1 are a gauge artifact; predictions only need them positive
            loss: LossModel {
                t_in,
                t_out,
            },
            src: SourceModel {
                p_emit: p,
                ..SourceModel::ideal(indist)
            },
            scales,
        }
    }
}

impl LeastSquares for SourceProblem<'_> {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = self.decode(x);
        let mut out = Vec::new();
        for (r, obs) in self.observed.iter().enumerate() {
            let Ok(pred) = predict_counts_with(self.u, &d.loss, &d.src, obs.input_pair, self.model) else {
                return DVector::from_element(self.observed.len() * (obs.singles.len() + obs.coincidences.len()), f64::NAN);
            };
            let c = d.scales[r];
            out.extend(pred.singles.iter().zip(&obs.singles).map(|(p, o)| (c * p - o) / self.singles_norm[r]));
            out.extend(pred.coincidences.iter().zip(&obs.coincidences).map(|(p, o)| (c * p - o) / self.coinc_norm[r]));
        }
        DVector::from_vec(out)
    }
}

/// Fit transmissions, indistinguishability and emission probability to
/// observed singles and coincidences with `u` held fixed.
pub fn fit_source(u: &TransferMatrix, observed: &[CountsRecord], cfg: &SourceFitConfig) -> Result<SourceFit> {
    let n = u.dim();
    if observed.len() < 2 {
        return Err(Error::InsufficientData(format!("{} input pairs observed, need >= 2", observed.len())));
    }
    if cfg.n_starts == 0 {
        return Err(Error::OutOfRange("n_starts must be >= 1".into()));
    }
    for obs in observed {
        obs.validate()?;
        if obs.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: obs.dim() });
        }
    }
    let mut singles_norm = Vec::new();
    let mut coinc_norm = Vec::new();
    for obs in observed {
        let s: f64 = obs.singles.iter().sum();
        let c: f64 = obs.coincidences.iter().sum();
        if !(s > 0.0) || !(c > 0.0) {
            return Err(Error::InsufficientData(format!("input pair {:?} has no counts", obs.input_pair)));
        }
        singles_norm.push(s);
        coinc_norm.push(c);
    }
    let problem = SourceProblem {
        u,
        observed,
        model: cfg.coincidence_model,
        singles_norm,
        coinc_norm,
    };
    let n_par = problem.n_params();
    if observed.len() * (n + n * (n - 1) / 2) < n_par {
        return Err(Error::InsufficientData("fewer observations than parameters".into()));
    }

    // start: lossless, assumed I and p, scales matched to the observed singles
    let base = 2 * (n - 1);
    let mut x0 = DVector::zeros(n_par);
    x0[base] = logit(cfg.initial_indistinguishability);
    x0[base + 1] = logit(cfg.initial_p_emit);
    {
        let d = problem.decode(&x0);
        for (r, obs) in observed.iter().enumerate() {
            let pred = predict_counts_with(u, &d.loss, &d.src, obs.input_pair, cfg.coincidence_model)?;
            let ps: f64 = pred.singles.iter().sum();
            x0[base + 2 + r] = (problem.singles_norm[r] / ps).ln();
        }
    }

    let lm = LmConfig {
        max_iter: cfg.max_iter,
        ..LmConfig::default()
    };
    let outcomes: Vec<_> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|start| {
            let mut x = x0.clone();
            if start > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(start as u64);
                let normal = Normal::new(0.0, 0.2).expect("valid width");
                for p in 0..base + 2 {
                    x[p] += normal.sample(&mut rng);
                }
            }
            minimize(&problem, x, &lm)
        })
        .collect();
    let best = outcomes
        .iter()
        .enumerate()
        .fold(0, |b, (k, o)| if o.cost < outcomes[b].cost || outcomes[b].cost.is_nan() { k } else { b });
    let outcome = &outcomes[best];

    let (mut t_in, mut t_out, indist, p, scales) = problem.decode_raw(&outcome.x);
    let max_in = t_in.iter().copied().fold(0.0, f64::max);
    let max_out = t_out.iter().copied().fold(0.0, f64::max);
    t_in.iter_mut().for_each(|t| *t /= max_in);
    t_out.iter_mut().for_each(|t| *t /= max_out);
    // singles ∝ C p t^2 t'^2 and coincidences ∝ C p^2 t^4 t'^4, so the
    // rescaling moves into p alone and C is unchanged
    let p_emit = p * max_in * max_in * max_out * max_out;
    // sources with p near 1 sit on the logistic's edge; a sub-ppm overshoot is rounding
    let p_emit = if p_emit > 1.0 && p_emit < 1.0 + 1e-6 { 1.0 } else { p_emit };
    Ok(SourceFit {
        t_in,
        t_out,
        indistinguishability: indist,
        p_emit,
        scales,
        residual: outcome.cost,
        iterations: outcome.iterations,
        converged: outcome.converged(),
    })
}
