//! Python bindings. Matrices cross the boundary as nested lists of complex
//! numbers; results and configs cross as plain dicts.

use ::corrtomo as ct;
use ct::bench::{self, SweepConfig};
use ct::histogram::{ingest_histogram, IngestOptions};
use ct::matrix;
use ct::optics::{self, LossModel, ModeQuad, SourceModel};
use ct::sampling::{self, CountsRecord, SourceFitConfig};
use ct::tomography::{self, MeasurementMode, OptimizerConfig, VisibilityDataset};
use ct::{Error, TransferMatrix, C64};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Fill a config from its defaults plus whatever keys the dict sets.
fn from_py<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let Some(d) = obj else {
        return Ok(T::default());
    };
    let text: String = d.py().import("json")?.call_method1("dumps", (d,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn real_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

fn real_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn mode_quad(q: (usize, usize, usize, usize)) -> PyResult<ModeQuad> {
    ModeQuad::new(q.0, q.1, q.2, q.3).map_err(err)
}

fn parse_mode(name: &str) -> PyResult<MeasurementMode> {
    name.parse().map_err(err)
}

/// Square complex matrix; rows are outputs.
#[pyclass(name = "TransferMatrix", module = "corrtomo", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTransferMatrix(TransferMatrix);

#[pymethods]
impl PyTransferMatrix {
    #[new]
    fn new(rows: Vec<Vec<C64>>) -> PyResult<Self> {
        TransferMatrix::from_rows(&rows).map(Self).map_err(err)
    }

    #[staticmethod]
    fn identity(dim: usize) -> Self {
        Self(TransferMatrix::identity(dim))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ct::io::from_json(text).map(Self).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        ct::io::to_json(&self.0).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn rows(&self) -> Vec<Vec<C64>> {
        self.0.rows()
    }

    fn __getitem__(&self, idx: (usize, usize)) -> PyResult<C64> {
        if idx.0 >= self.0.dim() || idx.1 >= self.0.dim() {
            return Err(pyo3::exceptions::PyIndexError::new_err(format!("{idx:?} out of range")));
        }
        Ok(self.0.get(idx.0, idx.1))
    }

    fn conj(&self) -> Self {
        Self(self.0.conj())
    }

    /// |M_kl|^2 as nested lists.
    fn power(&self) -> Vec<Vec<f64>> {
        real_rows(&self.0.power())
    }

    fn unitarity_residual(&self) -> f64 {
        self.0.unitarity_residual()
    }

    #[pyo3(signature = (tol = 1e-9))]
    fn is_unitary(&self, tol: f64) -> bool {
        self.0.is_unitary(tol)
    }

    fn __len__(&self) -> usize {
        self.0.dim()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("TransferMatrix(dim={})", self.0.dim())
    }
}

/// Visibility records and the single-photon power matrix.
#[pyclass(name = "Dataset", module = "corrtomo", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset(VisibilityDataset);

#[pymethods]
impl PyDataset {
    /// `records`: (i, j, k, l, V) or (i, j, k, l, V, sigma).
    #[new]
    #[pyo3(signature = (records, power, power_sigma = None))]
    fn new(records: Vec<Vec<f64>>, power: Vec<Vec<f64>>, power_sigma: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let power = real_matrix(power)?;
        let n = power.nrows();
        let sigma = match power_sigma {
            Some(s) => real_matrix(s)?,
            None => DMatrix::zeros(n, n),
        };
        let recs = records
            .iter()
            .map(|r| {
                if !(5..=6).contains(&r.len()) || r[..4].iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
                    return Err(PyValueError::new_err(format!("bad record {r:?}")));
                }
                Ok(tomography::VisibilityRecord {
                    quad: mode_quad((r[0] as usize, r[1] as usize, r[2] as usize, r[3] as usize))?,
                    value: r[4],
                    sigma: r.get(5).copied().unwrap_or(0.0),
                    flag: tomography::RecordFlag::Valid,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        VisibilityDataset::new(n, recs, power, sigma).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(data_path: std::path::PathBuf, power_path: std::path::PathBuf) -> PyResult<Self> {
        ct::io::load_dataset(&data_path, &power_path).map(Self).map_err(err)
    }

    fn save(&self, data_path: std::path::PathBuf, power_path: std::path::PathBuf) -> PyResult<()> {
        ct::io::save_dataset(&data_path, &power_path, &self.0).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim
    }

    /// List of dicts with quad, value, sigma and flag.
    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.records)
    }

    fn power(&self) -> Vec<Vec<f64>> {
        real_rows(&self.0.power)
    }

    /// Copy with multiplicative Gaussian noise on every value.
    fn with_noise(&self, sigma: f64, seed: u64) -> PyResult<Self> {
        bench::add_noise(&self.0, sigma, seed).map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.records.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(dim={}, records={})", self.0.dim, self.0.records.len())
    }
}

/// Reconstruction output; `to_dict()` has the full diagnostics.
#[pyclass(name = "Reconstruction", module = "corrtomo", frozen)]
struct PyReconstruction(tomography::ReconstructionResult);

#[pymethods]
impl PyReconstruction {
    #[getter]
    fn unitary(&self) -> PyTransferMatrix {
        PyTransferMatrix(self.0.unitary.clone())
    }

    #[getter]
    fn indistinguishability(&self) -> f64 {
        self.0.indistinguishability
    }

    #[getter]
    fn t_ratios(&self) -> Vec<f64> {
        self.0.t_ratios.clone()
    }

    #[getter]
    fn final_cost(&self) -> f64 {
        self.0.final_cost
    }

    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "Reconstruction(dim={}, I={:.6}, cost={:.3e}, converged={})",
            self.0.unitary.dim(),
            self.0.indistinguishability,
            self.0.final_cost,
            self.0.converged
        )
    }
}

#[pyfunction]
fn haar_random_unitary(dim: usize, seed: u64) -> PyResult<PyTransferMatrix> {
    matrix::haar_random_unitary(dim, seed).map(PyTransferMatrix).map_err(err)
}

#[pyfunction]
fn matrix_fidelity(a: &PyTransferMatrix, b: &PyTransferMatrix) -> PyResult<f64> {
    matrix::matrix_fidelity(&a.0, &b.0).map_err(err)
}

/// Fidelity after fixing phases and the conjugation branch of `estimate`.
#[pyfunction]
fn gauge_fidelity(estimate: &PyTransferMatrix, truth: &PyTransferMatrix) -> PyResult<f64> {
    matrix::gauge_fidelity(&estimate.0, &truth.0).map_err(err)
}

#[pyfunction]
fn canonicalize(u: &PyTransferMatrix) -> PyResult<PyTransferMatrix> {
    matrix::canonicalize_default(&u.0).map(PyTransferMatrix).map_err(err)
}

/// Theoretical visibility of quad (i, j, k, l) with x = t_i^2 / t_j^2.
#[pyfunction]
#[pyo3(signature = (u, quad, indistinguishability, x = 1.0))]
fn visibility(u: &PyTransferMatrix, quad: (usize, usize, usize, usize), indistinguishability: f64, x: f64) -> PyResult<f64> {
    optics::visibility(&u.0, x, indistinguishability, &mode_quad(quad)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (v, r, t, r_eta = 1.0, g2 = 0.0))]
fn hom_indistinguishability<'py>(
    py: Python<'py>,
    v: f64,
    r: f64,
    t: f64,
    r_eta: f64,
    g2: f64,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &optics::hom_indistinguishability(v, r, t, r_eta, g2).map_err(err)?)
}

/// Haar unitary, random transmissions and the noiseless dataset they produce.
#[pyfunction]
#[pyo3(signature = (dim, seed, indistinguishability = 0.9, loss_low = 0.5, loss_high = 1.0, mode = "full"))]
fn generate_instance<'py>(
    py: Python<'py>,
    dim: usize,
    seed: u64,
    indistinguishability: f64,
    loss_low: f64,
    loss_high: f64,
    mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let inst = bench::generate_instance(dim, seed, loss_low, loss_high, indistinguishability, parse_mode(mode)?)
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("unitary", PyTransferMatrix(inst.unitary))?;
    out.set_item("t_in", inst.loss.t_in)?;
    out.set_item("t_out", inst.loss.t_out)?;
    out.set_item("indistinguishability", inst.indistinguishability)?;
    out.set_item("dataset", PyDataset(inst.dataset))?;
    Ok(out)
}

/// Reconstruct U and I; `config` keys override optimizer defaults.
#[pyfunction]
#[pyo3(signature = (dataset, config = None))]
fn reconstruct(py: Python<'_>, dataset: &PyDataset, config: Option<&Bound<'_, PyDict>>) -> PyResult<PyReconstruction> {
    let cfg: OptimizerConfig = from_py(config)?;
    let data = dataset.0.clone();
    py.detach(|| tomography::reconstruct(&data, &cfg))
        .map(PyReconstruction)
        .map_err(err)
}

/// Two-photon singles and coincidences for one input pair.
#[pyfunction]
#[pyo3(signature = (u, pair, indistinguishability = 1.0, p_emit = 1.0, t_in = None, t_out = None, central_peak = false))]
#[allow(clippy::too_many_arguments)]
fn predict_counts<'py>(
    py: Python<'py>,
    u: &PyTransferMatrix,
    pair: (usize, usize),
    indistinguishability: f64,
    p_emit: f64,
    t_in: Option<Vec<f64>>,
    t_out: Option<Vec<f64>>,
    central_peak: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let n = u.0.dim();
    let loss = LossModel::new(t_in.unwrap_or(vec![1.0; n]), t_out.unwrap_or(vec![1.0; n])).map_err(err)?;
    let src = SourceModel {
        p_emit,
        ..SourceModel::ideal(indistinguishability)
    };
    let model = if central_peak {
        sampling::CoincidenceModel::CentralPeak
    } else {
        sampling::CoincidenceModel::Corrected
    };
    to_py(py, &sampling::predict_counts_with(&u.0, &loss, &src, pair, model).map_err(err)?)
}

/// Fit transmissions, I and p_emit to records shaped like `predict_counts` output.
#[pyfunction]
#[pyo3(signature = (u, records, config = None))]
fn fit_source<'py>(
    py: Python<'py>,
    u: &PyTransferMatrix,
    records: &Bound<'py, PyAny>,
    config: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let text: String = py.import("json")?.call_method1("dumps", (records,))?.extract()?;
    let observed: Vec<CountsRecord> = serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let cfg: SourceFitConfig = from_py(config)?;
    let um = u.0.clone();
    let (fit, f) = py
        .detach(|| -> ct::Result<_> {
            let fit = sampling::fit_source(&um, &observed, &cfg)?;
            let pairs: Vec<_> = observed.iter().map(|r| r.input_pair).collect();
            let f = sampling::mean_classical_fidelity(&fit.predict(&um, &pairs)?, &observed)?;
            Ok((fit, f))
        })
        .map_err(err)?;
    let out = to_py(py, &fit)?;
    out.set_item("mean_classical_fidelity", f)?;
    Ok(out)
}

/// Reduce one histogram (CSV plus JSON metadata) to a visibility.
#[pyfunction]
#[pyo3(signature = (csv_path, meta_path, options = None))]
fn ingest<'py>(
    py: Python<'py>,
    csv_path: std::path::PathBuf,
    meta_path: std::path::PathBuf,
    options: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let opts: IngestOptions = from_py(options)?;
    let h = ct::io::read_histogram(&csv_path, &meta_path).map_err(err)?;
    to_py(py, &ingest_histogram(&h, &opts).map_err(err)?)
}

/// Method comparison sweep; `config` keys override sweep defaults.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn run_sweep<'py>(py: Python<'py>, config: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: SweepConfig = from_py(config)?;
    let res = py.detach(|| bench::run_sweep(&cfg)).map_err(err)?;
    to_py(py, &res)
}

#[pymodule(name = "corrtomo")]
fn corrtomo_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTransferMatrix>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyReconstruction>()?;
    m.add_function(wrap_pyfunction!(haar_random_unitary, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(gauge_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(canonicalize, m)?)?;
    m.add_function(wrap_pyfunction!(visibility, m)?)?;
    m.add_function(wrap_pyfunction!(hom_indistinguishability, m)?)?;
    m.add_function(wrap_pyfunction!(generate_instance, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(predict_counts, m)?)?;
    m.add_function(wrap_pyfunction!(fit_source, m)?)?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
