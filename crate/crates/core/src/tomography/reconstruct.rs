//! Full reconstruction pipeline: scaling, conversion, analytic guess, refinement.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{minimize, LmConfig, LmOutcome};
use crate::matrix::{canonicalize_default, resolve_conjugate_ambiguity, Branch, TransferMatrix};
use crate::optics::ModeQuad;
use crate::reck::{reck_compose, reck_decompose, ReckParams};
use crate::sinkhorn::{floor_entries, sinkhorn_knopp, SinkhornScaling};
use crate::tomography::convert::visibility_convert;
use crate::tomography::dataset::VisibilityDataset;
use crate::tomography::model::{Observable, PowerAnchor, VisibilityFit};
use crate::tomography::plan::MeasurementMode;
use crate::tomography::sst::{sst_initial_guess, SstGuess};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub seed: u64,
    /// Starting points: the analytic guess plus `n_starts - 1` perturbations of it.
    pub n_starts: usize,
    pub max_iter: usize,
    pub cost_rel_tol: f64,
    pub grad_tol: f64,
    /// Indistinguishability assumed by the analytic guess and used to start the fit.
    pub initial_indistinguishability: f64,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    /// Entries of R below this fraction of max(R) are raised to it.
    pub power_floor: f64,
    /// Perturbation widths of the extra starts.
    pub phase_jitter: f64,
    pub log_ratio_jitter: f64,
    pub logit_jitter: f64,
    pub mode: MeasurementMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_starts: 16,
            max_iter: 500,
            cost_rel_tol: 1e-12,
            grad_tol: 1e-12,
            initial_indistinguishability: 0.9,
            sinkhorn_tol: 1e-12,
            sinkhorn_max_iter: 100_000,
            power_floor: 1e-9,
            phase_jitter: 0.3,
            log_ratio_jitter: 0.1,
            logit_jitter: 0.5,
            mode: MeasurementMode::Full,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::OutOfRange("n_starts must be >= 1".into()));
        }
        if !(self.initial_indistinguishability > 0.0 && self.initial_indistinguishability <= 1.0) {
            return Err(Error::OutOfRange("initial_indistinguishability must be in (0, 1]".into()));
        }
        for (name, v) in [
            ("cost_rel_tol", self.cost_rel_tol),
            ("grad_tol", self.grad_tol),
            ("sinkhorn_tol", self.sinkhorn_tol),
            ("power_floor", self.power_floor),
            ("phase_jitter", self.phase_jitter),
            ("log_ratio_jitter", self.log_ratio_jitter),
            ("logit_jitter", self.logit_jitter),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::OutOfRange(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    fn lm(&self) -> LmConfig {
        LmConfig {
            max_iter: self.max_iter,
            cost_rel_tol: self.cost_rel_tol,
            grad_tol: self.grad_tol,
            ..LmConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub records_used: usize,
    pub records_undefined: usize,
    pub power_entries_floored: usize,
    pub sinkhorn_iterations: usize,
    pub sinkhorn_residual: f64,
    pub guess_clipped: usize,
    pub guess_clip_warnings: usize,
    /// Cost of the analytic guess before refinement.
    pub guess_cost: f64,
    pub best_start: usize,
    pub start_costs: Vec<f64>,
    pub stop_reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    /// Canonicalized, branch-resolved unitary.
    pub unitary: TransferMatrix,
    /// Mesh parameters of the selected branch (before canonicalization).
    pub params: ReckParams,
    /// t_i^2 / t_0^2 per input mode.
    pub t_ratios: Vec<f64>,
    pub indistinguishability: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub branch: Branch,
    pub diagnostics: Diagnostics,
}

/// Floor, then scale R to doubly stochastic form.
pub(crate) fn scale_power(power: &DMatrix<f64>, cfg: &OptimizerConfig) -> Result<(SinkhornScaling, usize)> {
    let mut r = power.clone();
    if r.iter().all(|&v| !(v > 0.0)) {
        return Err(Error::InsufficientData("power matrix is all zero".into()));
    }
    let floored = floor_entries(&mut r, cfg.power_floor);
    Ok((sinkhorn_knopp(&r, cfg.sinkhorn_tol, cfg.sinkhorn_max_iter)?, floored))
}

/// Outcome of a multi-start refinement.
#[derive(Clone, Debug)]
pub struct Refined {
    pub params: ReckParams,
    pub t_ratios: Vec<f64>,
    pub indistinguishability: f64,
    pub outcome: LmOutcome,
    pub best_start: usize,
    pub start_costs: Vec<f64>,
    pub guess_cost: f64,
}

/// Multi-start least squares from `u0`, `t0`, `i0`. The first start is the
/// unperturbed guess; the rest get Gaussian jitter from a per-start stream.
pub fn refine(
    problem: &VisibilityFit,
    u0: &TransferMatrix,
    t0: &[f64],
    i0: f64,
    cfg: &OptimizerConfig,
) -> Result<Refined> {
    cfg.validate()?;
    let (p0, _) = reck_decompose(u0)?;
    let x0 = problem.encode(&p0, t0, i0);
    let guess_cost = crate::lm::LeastSquares::residuals(problem, &x0).norm_squared();
    let np = problem.n_phases();
    let n_par = problem.n_params();
    let lm = cfg.lm();

    let outcomes: Vec<LmOutcome> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|start| {
            let mut x = x0.clone();
            if start > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(start as u64);
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                let mut jitter = DVector::from_fn(n_par, |_, _| normal.sample(&mut rng));
                for p in 0..n_par {
                    let width = if p < np {
                        cfg.phase_jitter
                    } else if p + 1 < n_par {
                        cfg.log_ratio_jitter
                    } else {
                        cfg.logit_jitter
                    };
                    jitter[p] *= width;
                }
                x += jitter;
            }
            minimize(problem, x, &lm)
        })
        .collect();

    let start_costs: Vec<f64> = outcomes.iter().map(|o| o.cost).collect();
    let best_start = start_costs
        .iter()
        .enumerate()
        .fold(0, |best, (k, &c)| if c < start_costs[best] || start_costs[best].is_nan() { k } else { best });
    let outcome = outcomes.into_iter().nth(best_start).expect("n_starts >= 1");
    let point = problem.decode(&outcome.x);
    Ok(Refined {
        params: point.params,
        t_ratios: point.t_ratios,
        indistinguishability: point.indistinguishability,
        outcome,
        best_start,
        start_costs,
        guess_cost,
    })
}

/// Analytic initial guess from a dataset: Sinkhorn scaling, conversion, SST.
pub fn initial_guess(data: &VisibilityDataset, cfg: &OptimizerConfig) -> Result<(SstGuess, SinkhornScaling, usize)> {
    data.validate()?;
    cfg.validate()?;
    let (scaling, floored) = scale_power(&data.power, cfg)?;
    let converted = visibility_convert(data, &scaling.stochastic, &scaling.in_scale);
    let guess = sst_initial_guess(&converted, &scaling.stochastic, cfg.initial_indistinguishability)?;
    Ok((guess, scaling, floored))
}

/// The visibility fit, anchored to the power matrix when there are fewer
/// usable records than free parameters (e.g. a single quad at dim 2).
fn fit_problem(data: &VisibilityDataset, observable: Observable, scaling: &SinkhornScaling) -> VisibilityFit {
    let (quads, targets): (Vec<ModeQuad>, Vec<f64>) = data.usable().map(|r| (r.quad, r.value)).unzip();
    let mut fit = VisibilityFit {
        dim: data.dim,
        observable,
        quads,
        targets,
        anchor: None,
    };
    if fit.quads.len() < fit.n_params() {
        fit.anchor = Some(PowerAnchor {
            moduli_sq: scaling.stochastic.clone(),
            log_ratios: scaling.in_scale.iter().skip(1).map(|t| (t / scaling.in_scale[0]).ln()).collect(),
        });
    }
    fit
}

pub(crate) fn finish(
    refined: Refined,
    diagnostics: Diagnostics,
) -> Result<ReconstructionResult> {
    let u = reck_compose(&refined.params);
    let canonical = canonicalize_default(&u)?;
    let (unitary, branch) = resolve_conjugate_ambiguity(&canonical, None)?;
    let params = match branch {
        Branch::Direct => refined.params,
        Branch::Conjugate => refined.params.mirrored(),
    };
    Ok(ReconstructionResult {
        unitary,
        params,
        t_ratios: refined.t_ratios,
        indistinguishability: refined.indistinguishability,
        final_cost: refined.outcome.cost,
        iterations: refined.outcome.iterations,
        converged: refined.outcome.converged(),
        branch,
        diagnostics,
    })
}

/// Reconstruct the unitary, input transmission ratios and indistinguishability
/// from cross-correlation visibilities and the power matrix.
pub fn reconstruct(data: &VisibilityDataset, cfg: &OptimizerConfig) -> Result<ReconstructionResult> {
    let (guess, scaling, floored) = initial_guess(data, cfg)?;
    let problem = fit_problem(data, Observable::CrossCorrelation, &scaling);
    let t0: Vec<f64> = scaling.in_scale.iter().copied().collect();
    let refined = refine(&problem, &guess.unitary, &t0, cfg.initial_indistinguishability, cfg)?;
    let diagnostics = Diagnostics {
        records_used: problem.quads.len(),
        records_undefined: data.n_undefined(),
        power_entries_floored: floored,
        sinkhorn_iterations: scaling.iterations,
        sinkhorn_residual: scaling.residual,
        guess_clipped: guess.clipped,
        guess_clip_warnings: guess.clip_warnings,
        guess_cost: refined.guess_cost,
        best_start: refined.best_start,
        start_costs: refined.start_costs.clone(),
        stop_reason: format!("{:?}", refined.outcome.reason),
    };
    finish(refined, diagnostics)
}

/// Fit used by the two-run baseline: records hold Q / C.
pub fn reconstruct_ratio(data: &VisibilityDataset, cfg: &OptimizerConfig) -> Result<ReconstructionResult> {
    data.validate()?;
    cfg.validate()?;
    let (scaling, floored) = scale_power(&data.power, cfg)?;
    let converted: Vec<_> = data
        .records
        .iter()
        .map(|r| crate::tomography::convert::ConvertedRecord {
            quad: r.quad,
            value: r.value,
            defined: r.flag.is_usable(),
        })
        .collect();
    let guess = sst_initial_guess(&converted, &scaling.stochastic, cfg.initial_indistinguishability)?;
    let problem = fit_problem(data, Observable::CoincidenceRatio, &scaling);
    let refined = refine(&problem, &guess.unitary, &vec![1.0; data.dim], cfg.initial_indistinguishability, cfg)?;
    let diagnostics = Diagnostics {
        records_used: problem.quads.len(),
        records_undefined: data.n_undefined(),
        power_entries_floored: floored,
        sinkhorn_iterations: scaling.iterations,
        sinkhorn_residual: scaling.residual,
        guess_clipped: guess.clipped,
        guess_clip_warnings: guess.clip_warnings,
        guess_cost: refined.guess_cost,
        best_start: refined.best_start,
        start_costs: refined.start_costs.clone(),
        stop_reason: format!("{:?}", refined.outcome.reason),
    };
    finish(refined, diagnostics)
}
