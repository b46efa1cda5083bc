//! Synthetic instances, noise injection, baselines and sweeps.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{canonicalize_default, gauge_fidelity, haar_random_unitary_with, TransferMatrix};
use crate::optics::{apply_losses, check_indistinguishability, submatrix, visibility_of_block, LossModel, ModeQuad};
use crate::tomography::dataset::{RecordFlag, VisibilityDataset, VisibilityRecord};
use crate::tomography::model::coincidence_ratio;
use crate::tomography::plan::{measurement_plan, MeasurementMode};
use crate::tomography::reconstruct::{initial_guess, reconstruct, reconstruct_ratio, OptimizerConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticInstance {
    pub unitary: TransferMatrix,
    pub loss: LossModel,
    pub indistinguishability: f64,
    pub seed: u64,
    pub mode: MeasurementMode,
    /// Noiseless cross-correlation visibilities and power matrix.
    pub dataset: VisibilityDataset,
}

impl SyntheticInstance {
    /// Quads measured under the instance's plan.
    pub fn quads(&self) -> Vec<ModeQuad> {
        self.dataset.records.iter().map(|r| r.quad).collect()
    }

    /// Noiseless Q/C coincidence ratios on the same quads, for the two-run baseline.
    /// Equal to V(I) / V(0) record by record.
    pub fn coincidence_ratios(&self) -> VisibilityDataset {
        let records = self
            .dataset
            .records
            .iter()
            .map(|r| {
                let s = submatrix(&self.unitary, &r.quad).expect("quad in range");
                match coincidence_ratio(&s, self.indistinguishability) {
                    Some(v) if r.flag.is_usable() => VisibilityRecord { value: v, ..*r },
                    _ => VisibilityRecord {
                        value: 0.0,
                        flag: RecordFlag::Undefined,
                        ..*r
                    },
                }
            })
            .collect();
        VisibilityDataset {
            records,
            ..self.dataset.clone()
        }
    }

    /// Cross-correlation visibilities with fully distinguishable photons.
    pub fn distinguishable_dataset(&self) -> VisibilityDataset {
        let mut ds = visibility_dataset(&self.unitary, &self.loss, 0.0, &self.quads());
        ds.power = self.dataset.power.clone();
        ds
    }
}

fn visibility_dataset(u: &TransferMatrix, loss: &LossModel, indist: f64, quads: &[ModeQuad]) -> VisibilityDataset {
    let n = u.dim();
    let records = quads
        .iter()
        .map(|&q| {
            let s = submatrix(u, &q).expect("quad in range");
            match visibility_of_block(&s, loss.input_ratio(q.i, q.j), indist) {
                Ok(v) => VisibilityRecord {
                    quad: q,
                    value: v,
                    sigma: 0.0,
                    flag: RecordFlag::Valid,
                },
                Err(_) => VisibilityRecord {
                    quad: q,
                    value: 0.0,
                    sigma: 0.0,
                    flag: RecordFlag::Undefined,
                },
            }
        })
        .collect();
    let m = apply_losses(u, loss).expect("dims match");
    VisibilityDataset {
        dim: n,
        records,
        power: m.power(),
        power_sigma: DMatrix::zeros(n, n),
    }
}

/// Haar unitary, random input/output power transmissions, noiseless dataset.
///
/// t_i^2 and t'_j^2 are drawn uniformly on [√loss_low, √loss_high], so every
/// product t_i^2 t'_j^2 lies in [loss_low, loss_high].
pub fn generate_instance(
    dim: usize,
    seed: u64,
    loss_low: f64,
    loss_high: f64,
    indist: f64,
    mode: MeasurementMode,
) -> Result<SyntheticInstance> {
    if !(loss_low > 0.0 && loss_low <= loss_high && loss_high <= 1.0) {
        return Err(Error::OutOfRange(format!(
            "need 0 < loss_low <= loss_high <= 1, got [{loss_low}, {loss_high}]"
        )));
    }
    check_indistinguishability(indist)?;
    let plan = measurement_plan(dim, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unitary = haar_random_unitary_with(dim, &mut rng)?;
    let (lo, hi) = (loss_low.sqrt(), loss_high.sqrt());
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        if lo == hi {
            lo.sqrt()
        } else {
            Uniform::new_inclusive(lo, hi).expect("ordered range").sample(rng).sqrt()
        }
    };
    let t_in: Vec<f64> = (0..dim).map(|_| draw(&mut rng)).collect();
    let t_out: Vec<f64> = (0..dim).map(|_| draw(&mut rng)).collect();
    let loss = LossModel::new(t_in, t_out)?;
    let quads = ModeQuad::all_for_pairs(dim, &plan.distinct_pairs());
    let dataset = visibility_dataset(&unitary, &loss, indist, &quads);
    Ok(SyntheticInstance {
        unitary,
        loss,
        indistinguishability: indist,
        seed,
        mode,
        dataset,
    })
}

/// Multiply every usable value and every power entry by (1 + N(0, σ²)).
/// Negative results are floored at zero; floored records are flagged.
pub fn add_noise(data: &VisibilityDataset, sigma: f64, seed: u64) -> Result<VisibilityDataset> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::OutOfRange(format!("noise sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(data.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut out = data.clone();
    for r in &mut out.records {
        let factor = 1.0 + normal.sample(&mut rng);
        if !r.flag.is_usable() {
            continue;
        }
        let clean = r.value;
        r.value = clean * factor;
        r.sigma = sigma * clean;
        if r.value < 0.0 {
            r.value = 0.0;
            r.flag = RecordFlag::Floored;
        }
    }
    for (v, s) in out.power.iter_mut().zip(out.power_sigma.iter_mut()) {
        let factor = 1.0 + normal.sample(&mut rng);
        *s = sigma * *v;
        *v = (*v * factor).max(0.0);
    }
    Ok(out)
}

/// Q/C ratios from two independently noised visibility runs, V(I) / V(0).
pub fn two_run_ratios(
    indistinguishable: &VisibilityDataset,
    distinguishable: &VisibilityDataset,
) -> Result<VisibilityDataset> {
    if indistinguishable.records.len() != distinguishable.records.len() {
        return Err(Error::DimensionMismatch {
            expected: indistinguishable.records.len(),
            got: distinguishable.records.len(),
        });
    }
    let records = indistinguishable
        .records
        .iter()
        .zip(&distinguishable.records)
        .map(|(q, c)| {
            if q.quad != c.quad {
                return Err(Error::InvalidData("runs cover different quads".into()));
            }
            let usable = q.flag.is_usable() && c.flag.is_usable() && c.value > 0.0;
            Ok(if usable {
                let value = q.value / c.value;
                let rel = ((q.sigma / q.value.max(f64::MIN_POSITIVE)).powi(2)
                    + (c.sigma / c.value).powi(2))
                .sqrt();
                VisibilityRecord {
                    value,
                    sigma: value * rel,
                    flag: RecordFlag::Valid,
                    ..*q
                }
            } else {
                VisibilityRecord {
                    value: 0.0,
                    sigma: 0.0,
                    flag: RecordFlag::Undefined,
                    ..*q
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VisibilityDataset {
        records,
        ..indistinguishable.clone()
    })
}

/// Dip visibilities (C - Q) / C = 1 - Q/C each multiplied by (1 + N(0, σ²)),
/// returned as Q/C ratios. Ratios driven negative are floored and flagged.
pub fn noisy_dip_ratios(ratios: &VisibilityDataset, sigma: f64, seed: u64) -> Result<VisibilityDataset> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::OutOfRange(format!("noise sigma {sigma} must be >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor = || {
        if sigma > 0.0 {
            1.0 + Normal::new(0.0, sigma).expect("finite sigma").sample(&mut rng)
        } else {
            1.0
        }
    };
    let mut out = ratios.clone();
    for r in &mut out.records {
        let f = factor();
        if !r.flag.is_usable() {
            continue;
        }
        let dip = 1.0 - r.value;
        r.value = 1.0 - dip * f;
        r.sigma = sigma * dip.abs();
        if r.value < 0.0 {
            r.value = 0.0;
            r.flag = RecordFlag::Floored;
        }
    }
    for (v, s) in out.power.iter_mut().zip(out.power_sigma.iter_mut()) {
        let f = factor();
        *s = sigma * *v;
        *v = (*v * f).max(0.0);
    }
    Ok(out)
}

/// How the two-run baseline's data is noised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioNoise {
    /// One draw per dip visibility (C - Q) / C, like every other visibility.
    #[default]
    Dip,
    /// Indistinguishable and distinguishable visibility runs noised separately.
    IndependentRuns,
}

impl std::str::FromStr for RatioNoise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dip" => Ok(Self::Dip),
            "independent-runs" => Ok(Self::IndependentRuns),
            other => Err(Error::InvalidData(format!("unknown ratio noise '{other}'"))),
        }
    }
}

/// Analytic guess only, canonicalized.
pub fn baseline_sst(data: &VisibilityDataset, cfg: &OptimizerConfig) -> Result<TransferMatrix> {
    let (guess, _, _) = initial_guess(data, cfg)?;
    canonicalize_default(&guess.unitary)
}

/// Optimization against Q/C ratios from distinguishable and indistinguishable runs.
pub fn baseline_tillmann(ratios: &VisibilityDataset, cfg: &OptimizerConfig) -> Result<TransferMatrix> {
    Ok(reconstruct_ratio(ratios, cfg)?.unitary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ThisWork,
    Sst,
    Tillmann,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::ThisWork, Method::Sst, Method::Tillmann];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ThisWork => "this-work",
            Method::Sst => "sst",
            Method::Tillmann => "tillmann",
        }
    }

    /// Measurement runs per recorded value.
    pub fn measurement_cost(self) -> usize {
        match self {
            Method::Tillmann => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidData(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Noise,
    Modes,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Self::Noise),
            "modes" => Ok(Self::Modes),
            other => Err(Error::InvalidData(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    /// Noise levels (noise axis) or dimensions (modes axis).
    pub grid: Vec<f64>,
    /// Dimensions swept on the noise axis.
    pub dims: Vec<usize>,
    /// Noise level on the modes axis.
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub loss_low: f64,
    pub loss_high: f64,
    pub indistinguishability: f64,
    pub mode: MeasurementMode,
    pub methods: Vec<Method>,
    pub ratio_noise: RatioNoise,
    pub optimizer: OptimizerConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Noise,
            grid: vec![0.0, 0.05, 0.1, 0.15, 0.2],
            dims: vec![4],
            sigma: 0.1,
            trials: 50,
            seed: 0,
            loss_low: 0.5,
            loss_high: 1.0,
            indistinguishability: 0.9,
            mode: MeasurementMode::Full,
            methods: Method::ALL.to_vec(),
            ratio_noise: RatioNoise::Dip,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: Method,
    pub median: f64,
    pub p05: f64,
    pub p95: f64,
    pub n_trials: usize,
    /// Trials where the method returned an error (scored as fidelity 0).
    pub n_failed: usize,
    /// Records fitted per trial (mean).
    pub records: f64,
    /// Measurement runs per trial (mean), counting both runs of the two-run baseline.
    pub measurements: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x: f64,
    pub dim: usize,
    pub sigma: f64,
    pub methods: Vec<MethodStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

/// Linear-interpolated percentile of sorted data, q in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-trial fidelities of each method on one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub fidelity: Vec<Option<f64>>,
    pub records: usize,
}

/// One trial: noisy data for every method, fidelity against the truth.
pub fn run_trial(
    dim: usize,
    sigma: f64,
    instance_seed: u64,
    noise_seed: u64,
    cfg: &SweepConfig,
) -> Result<TrialOutcome> {
    let inst = generate_instance(dim, instance_seed, cfg.loss_low, cfg.loss_high, cfg.indistinguishability, cfg.mode)?;
    let mut streams = ChaCha8Rng::seed_from_u64(noise_seed);
    let (s_vis, s_ind, s_dis) = (streams.next_u64(), streams.next_u64(), streams.next_u64());
    let noisy = add_noise(&inst.dataset, sigma, s_vis)?;
    let opt = OptimizerConfig {
        seed: noise_seed,
        ..cfg.optimizer.clone()
    };
    let fidelity = cfg
        .methods
        .iter()
        .map(|m| {
            let estimate = match m {
                Method::ThisWork => reconstruct(&noisy, &opt).map(|r| r.unitary),
                Method::Sst => baseline_sst(&noisy, &opt),
                Method::Tillmann => {
                    let ratios = match cfg.ratio_noise {
                        RatioNoise::IndependentRuns => {
                            let ind = add_noise(&inst.dataset, sigma, s_ind)?;
                            let dis = add_noise(&inst.distinguishable_dataset(), sigma, s_dis)?;
                            two_run_ratios(&ind, &dis)?
                        }
                        RatioNoise::Dip => noisy_dip_ratios(&inst.coincidence_ratios(), sigma, s_ind)?,
                    };
                    baseline_tillmann(&ratios, &opt)
                }
            };
            Ok(estimate.and_then(|u| gauge_fidelity(&u, &inst.unitary)).ok())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialOutcome {
        fidelity,
        records: inst.dataset.records.len(),
    })
}

fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// Run every grid point. Instances depend only on (seed, dim, trial), so
/// noise levels share instances; noise draws depend on (seed, point, trial).
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    if cfg.grid.is_empty() {
        return Err(Error::InvalidData("empty sweep grid".into()));
    }
    if cfg.trials == 0 {
        return Err(Error::OutOfRange("trials must be >= 1".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::InvalidData("no methods selected".into()));
    }
    let points: Vec<(f64, usize, f64)> = match cfg.axis {
        SweepAxis::Noise => {
            if cfg.dims.is_empty() {
                return Err(Error::InvalidData("noise sweep needs at least one dim".into()));
            }
            cfg.dims
                .iter()
                .flat_map(|&d| cfg.grid.iter().map(move |&s| (s, d, s)))
                .collect()
        }
        SweepAxis::Modes => cfg
            .grid
            .iter()
            .map(|&d| {
                if d < 2.0 || d.fract() != 0.0 {
                    Err(Error::InvalidDimension(format!("mode sweep grid value {d} is not a dimension >= 2")))
                } else {
                    Ok((d, d as usize, cfg.sigma))
                }
            })
            .collect::<Result<_>>()?,
    };
    let mut out = Vec::with_capacity(points.len());
    for (p_idx, &(x, dim, sigma)) in points.iter().enumerate() {
        if !(sigma >= 0.0) {
            return Err(Error::OutOfRange(format!("noise sigma {sigma} must be >= 0")));
        }
        let trials: Vec<Result<TrialOutcome>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let inst_seed = derive_seed(cfg.seed, dim as u64, t as u64);
                let noise_seed = derive_seed(cfg.seed, 1_000_000 + p_idx as u64, t as u64);
                run_trial(dim, sigma, inst_seed, noise_seed, cfg)
            })
            .collect();
        let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;
        let records = trials.iter().map(|t| t.records as f64).sum::<f64>() / trials.len() as f64;
        let methods = cfg
            .methods
            .iter()
            .enumerate()
            .map(|(m_idx, &method)| {
                let mut fids: Vec<f64> = trials.iter().map(|t| t.fidelity[m_idx].unwrap_or(0.0)).collect();
                let n_failed = trials.iter().filter(|t| t.fidelity[m_idx].is_none()).count();
                fids.sort_by(f64::total_cmp);
                MethodStats {
                    method,
                    median: percentile(&fids, 0.5),
                    p05: percentile(&fids, 0.05),
                    p95: percentile(&fids, 0.95),
                    n_trials: fids.len(),
                    n_failed,
                    records,
                    measurements: records * method.measurement_cost() as f64,
                }
            })
            .collect();
        out.push(SweepPoint { x, dim, sigma, methods });
    }
    Ok(SweepResult {
        axis: cfg.axis,
        points: out,
    })
}

impl SweepResult {
    pub fn stats(&self, point: usize, method: Method) -> Option<&MethodStats> {
        self.points.get(point)?.methods.iter().find(|m| m.method == method)
    }

    /// One row per grid point and method.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# format_version: {}", crate::io::FORMAT_VERSION)?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "axis", "x", "dim", "sigma", "method", "median", "p05", "p95", "n_trials", "n_failed", "records",
            "measurements",
        ])?;
        let axis = match self.axis {
            SweepAxis::Noise => "noise",
            SweepAxis::Modes => "modes",
        };
        for p in &self.points {
            for m in &p.methods {
                wr.write_record([
                    axis.to_string(),
                    p.x.to_string(),
                    p.dim.to_string(),
                    p.sigma.to_string(),
                    m.method.to_string(),
                    m.median.to_string(),
                    m.p05.to_string(),
                    m.p95.to_string(),
                    m.n_trials.to_string(),
                    m.n_failed.to_string(),
                    m.records.to_string(),
                    m.measurements.to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}
