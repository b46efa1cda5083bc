mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use corrtomo::bench::{generate_instance, run_sweep, Method, RatioNoise, SweepAxis};
use corrtomo::histogram::{ingest_histogram, Histogram};
use corrtomo::io;
use corrtomo::matrix::TransferMatrix;
use corrtomo::optics::{apply_losses, hom_indistinguishability, peak_areas, submatrix, LossModel, SourceModel};
use corrtomo::sampling::{
    fit_source, mean_classical_fidelity, predict_counts_with, CoincidenceModel, CountsRecord, SourceFit,
};
use corrtomo::tomography::{reconstruct, MeasurementMode, RecordFlag, VisibilityRecord};
use corrtomo::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "corrtomo", version, about = "Interferometer tomography from two-photon cross-correlations")]
struct Cli {
    /// TOML run configuration; CORRTOMO_SECTION__KEY variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic visibility dataset (and optionally raw histograms).
    Simulate(SimulateArgs),
    /// Reduce cross-correlation histograms to visibilities.
    Ingest(IngestArgs),
    /// Reconstruct the transfer matrix from visibilities and the power matrix.
    Reconstruct(ReconstructArgs),
    /// Compare reconstruction methods over a noise or mode-count sweep.
    Benchmark(BenchmarkArgs),
    /// Predict two-photon counts for an interferometer and source.
    Sample(SampleArgs),
    /// Fit source and loss parameters to observed two-photon counts.
    Fit(FitArgs),
    /// Indistinguishability from a HOM central/side peak ratio.
    Hom(HomArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<MeasurementMode>,
    /// Multiplicative Gaussian noise on visibilities and powers.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    indist: Option<f64>,
    #[arg(long)]
    out_data: PathBuf,
    #[arg(long)]
    out_power: PathBuf,
    /// Ground truth (unitary, transmissions, I) as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also write Poisson-sampled histograms and an index for `ingest`.
    #[arg(long)]
    histograms: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// CSV `i,j,k,l,histogram,meta`; paths relative to the index file.
    #[arg(long, conflicts_with = "histogram", required_unless_present = "histogram")]
    index: Option<PathBuf>,
    /// Single histogram CSV; prints its visibility as JSON.
    #[arg(long, requires = "meta")]
    histogram: Option<PathBuf>,
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Visibility CSV to write (index mode).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    window_fraction: Option<f64>,
    #[arg(long)]
    side_peaks: Option<usize>,
    #[arg(long)]
    subtract_background: bool,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    power: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    starts: Option<usize>,
    /// ReconstructionResult JSON; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Canonical unitary alone, as matrix JSON.
    #[arg(long)]
    matrix: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long)]
    axis: Option<SweepAxis>,
    /// Comma-separated dimensions for the noise axis.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// `start:stop:step` (inclusive) or a comma-separated list.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Noise level on the modes axis.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    mode: Option<MeasurementMode>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    ratio_noise: Option<RatioNoise>,
    /// SweepResult CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Matrix JSON or a reconstruction result.
    #[arg(long)]
    unitary: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    indist: f64,
    #[arg(long, default_value_t = 1.0)]
    p_emit: f64,
    #[arg(long, value_delimiter = ',')]
    t_in: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    t_out: Option<Vec<f64>>,
    /// Input pairs like `0-1,2-3`; all pairs if omitted.
    #[arg(long, value_delimiter = ',')]
    pairs: Option<Vec<String>>,
    #[arg(long, default_value = "corrected")]
    model: String,
    /// Multiply every count by this factor.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Multiplicative Gaussian noise on every count.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    unitary: PathBuf,
    #[arg(long)]
    counts: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HomArgs {
    #[arg(long = "V", allow_negative_numbers = true)]
    v: f64,
    #[arg(long = "R")]
    r: f64,
    #[arg(long = "T")]
    t: f64,
    #[arg(long = "reta")]
    r_eta: f64,
    #[arg(long = "g2", default_value_t = 0.0)]
    g2: f64,
}

enum Failure {
    Validation { kind: String, message: String },
    Runtime { kind: String, message: String },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, message) = (e.kind().to_string(), e.to_string());
        if e.is_validation() {
            Failure::Validation { kind, message }
        } else {
            Failure::Runtime { kind, message }
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation {
            kind: "config".into(),
            message: e.0,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure::Validation {
        kind: "invalid-argument".into(),
        message: message.into(),
    }
}

type CliResult<T> = Result<T, Failure>;

/// Input files are checked up front so the error names the path.
fn readable(paths: &[&Path]) -> CliResult<()> {
    for p in paths {
        if let Err(e) = fs::metadata(p) {
            return Err(Failure::Runtime {
                kind: "io".into(),
                message: format!("{}: {e}", p.display()),
            });
        }
    }
    Ok(())
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    emit(path, io::to_json(value)?.as_bytes())
}

/// `start:stop:step` with the stop included, or `a,b,c`.
fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| invalid(format!("bad grid value '{t}'")));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        1 => s.split(',').map(num).collect(),
        3 => {
            let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if step.is_nan() || step <= 0.0 || stop < start {
                return Err(invalid(format!("grid '{s}' needs step > 0 and stop >= start")));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            // Round to the step's precision so 0:0.2:0.05 gives 0.15, not 0.15000000000000002.
            let digits = (0..12).find(|&d| (step * 10f64.powi(d)).fract().abs() < 1e-9).unwrap_or(12);
            let scale = 10f64.powi(digits.max(0));
            Ok((0..=n).map(|k| ((start + k as f64 * step) * scale).round() / scale).collect())
        }
        _ => Err(invalid(format!("grid '{s}' is neither start:stop:step nor a list"))),
    }
}

fn parse_model(s: &str) -> CliResult<CoincidenceModel> {
    match s {
        "corrected" => Ok(CoincidenceModel::Corrected),
        "central-peak" => Ok(CoincidenceModel::CentralPeak),
        other => Err(invalid(format!("unknown coincidence model '{other}'"))),
    }
}

fn parse_pair(s: &str) -> CliResult<(usize, usize)> {
    let bad = || invalid(format!("bad input pair '{s}', expected i-j"));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// A bare matrix document or anything with a `unitary` field.
fn read_unitary(path: &Path) -> CliResult<TransferMatrix> {
    readable(&[path])?;
    let text = fs::read_to_string(path)?;
    let mut v: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    if let Some(u) = v.get_mut("unitary") {
        let u = u.take();
        return Ok(io::from_json(&u.to_string())?);
    }
    Ok(io::from_json(&text)?)
}

#[derive(Serialize)]
struct Truth<'a> {
    seed: u64,
    unitary: &'a TransferMatrix,
    t_in: &'a [f64],
    t_out: &'a [f64],
    indistinguishability: f64,
}

fn simulate(a: SimulateArgs, cfg: &RunConfig) -> CliResult<()> {
    let s = &cfg.simulate;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let dim = a.dim.unwrap_or(s.dim);
    let indist = a.indist.unwrap_or(s.indistinguishability);
    let sigma = a.sigma.unwrap_or(s.sigma);
    let inst = generate_instance(dim, seed, s.loss_low, s.loss_high, indist, a.mode.unwrap_or(s.mode))?;
    let data = corrtomo::bench::add_noise(&inst.dataset, sigma, seed.wrapping_add(1))?;
    io::save_dataset(&a.out_data, &a.out_power, &data)?;
    if let Some(p) = &a.truth {
        let truth = Truth {
            seed,
            unitary: &inst.unitary,
            t_in: &inst.loss.t_in,
            t_out: &inst.loss.t_out,
            indistinguishability: indist,
        };
        fs::write(p, io::to_json(&truth)?)?;
    }
    if let Some(dir) = &a.histograms {
        write_histograms(dir, &inst, s, seed)?;
    }
    Ok(())
}

fn write_histograms(
    dir: &Path,
    inst: &corrtomo::bench::SyntheticInstance,
    s: &config::SimulateConfig,
    seed: u64,
) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let m = apply_losses(&inst.unitary, &inst.loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut file = fs::File::create(dir.join("index.csv"))?;
    writeln!(file, "# format_version: {}", io::FORMAT_VERSION)?;
    let mut index = csv::Writer::from_writer(file);
    index.write_record(["i", "j", "k", "l", "histogram", "meta"]).map_err(Error::from)?;
    let tau = s.pump_period;
    for (n, r) in inst.dataset.records.iter().enumerate() {
        let (a0, ak) = peak_areas(&submatrix(&m, &r.quad)?, inst.indistinguishability)?;
        if ak <= 0.0 {
            continue;
        }
        let scale = s.side_counts / ak;
        let mut areas = vec![ak * scale; 13];
        areas[6] = a0 * scale;
        let h = Histogram::synthetic(&areas, tau / 200.0, tau, tau / 20.0, 0.0, &mut rng)?;
        let (csv_name, meta_name) = (format!("h{n:03}.csv"), format!("h{n:03}.json"));
        io::write_histogram(&dir.join(&csv_name), &dir.join(&meta_name), &h)?;
        let q = r.quad;
        index
            .write_record([q.i.to_string(), q.j.to_string(), q.k.to_string(), q.l.to_string(), csv_name, meta_name])
            .map_err(Error::from)?;
    }
    index.flush()?;
    Ok(())
}

fn ingest(a: IngestArgs, cfg: &RunConfig) -> CliResult<()> {
    let mut opts = cfg.ingest;
    if let Some(w) = a.window_fraction {
        opts.window_fraction = w;
    }
    if let Some(n) = a.side_peaks {
        opts.n_side_peaks = n;
    }
    opts.subtract_background |= a.subtract_background;

    if let (Some(h), Some(m)) = (&a.histogram, &a.meta) {
        readable(&[h, m])?;
        let v = ingest_histogram(&io::read_histogram(h, m)?, &opts)?;
        return emit_json(a.out.as_deref(), &v);
    }
    let index = a.index.expect("clap enforces --index or --histogram");
    readable(&[&index])?;
    let base = index.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(&index)
        .map_err(Error::from)?;
    let mut records = Vec::new();
    for row in rd.records() {
        let row = row.map_err(Error::from)?;
        if row.len() != 6 {
            return Err(Error::InvalidData(format!("index row {:?} needs 6 fields", row.position())).into());
        }
        let idx = |k: usize| {
            row[k]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidData(format!("bad mode index '{}'", &row[k])))
        };
        let quad = corrtomo::ModeQuad::new(idx(0)?, idx(1)?, idx(2)?, idx(3)?)?;
        let (hp, mp) = (base.join(row[4].trim()), base.join(row[5].trim()));
        readable(&[&hp, &mp])?;
        let h = io::read_histogram(&hp, &mp)?;
        let rec = match ingest_histogram(&h, &opts) {
            Ok(v) => VisibilityRecord {
                quad,
                value: v.value.max(0.0),
                sigma: v.sigma,
                flag: if v.value < 0.0 { RecordFlag::Floored } else { RecordFlag::Valid },
            },
            Err(Error::UndefinedVisibility { .. }) => VisibilityRecord {
                quad,
                value: 0.0,
                sigma: 0.0,
                flag: RecordFlag::Undefined,
            },
            Err(e) => return Err(e.into()),
        };
        records.push(rec);
    }
    let mut buf = Vec::new();
    io::write_visibilities(&mut buf, &records)?;
    emit(a.out.as_deref(), &buf)
}

fn reconstruct_cmd(a: ReconstructArgs, cfg: &RunConfig) -> CliResult<()> {
    readable(&[&a.data, &a.power])?;
    let data = io::load_dataset(&a.data, &a.power)?;
    let mut opt = cfg.optimizer.clone();
    if let Some(s) = a.seed.or(cfg.seed) {
        opt.seed = s;
    }
    if let Some(n) = a.starts {
        opt.n_starts = n;
    }
    let result = reconstruct(&data, &opt)?;
    if let Some(p) = &a.matrix {
        fs::write(p, io::to_json(&result.unitary)?)?;
    }
    emit_json(a.out.as_deref(), &result)
}

fn benchmark(a: BenchmarkArgs, cfg: &RunConfig) -> CliResult<()> {
    let mut sweep = cfg.benchmark.clone();
    sweep.optimizer = cfg.optimizer.clone();
    if let Some(axis) = a.axis {
        sweep.axis = axis;
    }
    if let Some(d) = a.dims {
        sweep.dims = d;
    }
    if let Some(g) = &a.grid {
        sweep.grid = parse_grid(g)?;
    }
    if let Some(t) = a.trials {
        sweep.trials = t;
    }
    if let Some(s) = a.seed.or(cfg.seed) {
        sweep.seed = s;
    }
    if let Some(s) = a.sigma {
        sweep.sigma = s;
    }
    if let Some(m) = a.mode {
        sweep.mode = m;
    }
    if let Some(m) = a.methods {
        sweep.methods = m;
    }
    if let Some(r) = a.ratio_noise {
        sweep.ratio_noise = r;
    }
    let result = run_sweep(&sweep)?;
    if let Some(p) = &a.json {
        fs::write(p, io::to_json(&result)?)?;
    }
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    emit(a.out.as_deref(), &buf)
}

fn sample(a: SampleArgs, cfg: &RunConfig) -> CliResult<()> {
    let u = read_unitary(&a.unitary)?;
    let n = u.dim();
    let loss = LossModel::new(a.t_in.unwrap_or(vec![1.0; n]), a.t_out.unwrap_or(vec![1.0; n]))?;
    let src = SourceModel {
        p_emit: a.p_emit,
        ..SourceModel::ideal(a.indist)
    };
    let model = parse_model(&a.model)?;
    let pairs = match &a.pairs {
        Some(p) => p.iter().map(|s| parse_pair(s)).collect::<CliResult<Vec<_>>>()?,
        None => (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect(),
    };
    if a.scale.is_nan() || a.scale <= 0.0 || a.noise.is_nan() || a.noise < 0.0 {
        return Err(invalid("--scale must be > 0 and --noise >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed.or(cfg.seed).unwrap_or(0));
    let normal = Normal::new(0.0, a.noise).map_err(|e| invalid(e.to_string()))?;
    let records = pairs
        .iter()
        .map(|&p| {
            let mut r = predict_counts_with(&u, &loss, &src, p, model)?;
            for v in r.singles.iter_mut().chain(r.coincidences.iter_mut()) {
                let f = if a.noise > 0.0 { 1.0 + normal.sample(&mut rng) } else { 1.0 };
                *v = (*v * a.scale * f).max(0.0);
            }
            Ok(r)
        })
        .collect::<CliResult<Vec<CountsRecord>>>()?;
    let mut buf = Vec::new();
    io::write_counts(&mut buf, &records)?;
    emit(a.out.as_deref(), &buf)
}

#[derive(Serialize)]
struct FitReport {
    #[serde(flatten)]
    fit: SourceFit,
    mean_classical_fidelity: f64,
}

fn fit(a: FitArgs, cfg: &RunConfig) -> CliResult<()> {
    let u = read_unitary(&a.unitary)?;
    readable(&[&a.counts])?;
    let observed = io::read_counts(fs::File::open(&a.counts)?)?;
    let mut fc = cfg.fit.clone();
    if let Some(s) = a.seed.or(cfg.seed) {
        fc.seed = s;
    }
    if let Some(m) = &a.model {
        fc.coincidence_model = parse_model(m)?;
    }
    let fit = fit_source(&u, &observed, &fc)?;
    let pairs: Vec<_> = observed.iter().map(|r| r.input_pair).collect();
    let f = mean_classical_fidelity(&fit.predict(&u, &pairs)?, &observed)?;
    emit_json(
        a.out.as_deref(),
        &FitReport {
            fit,
            mean_classical_fidelity: f,
        },
    )
}

fn hom(a: HomArgs) -> CliResult<()> {
    let est = hom_indistinguishability(a.v, a.r, a.t, a.r_eta, a.g2)?;
    if est.clamped {
        eprintln!(
            "{}",
            serde_json::json!({"warning": "clamped", "message": format!("raw indistinguishability {} outside [0, 1]", est.raw)})
        );
    }
    emit_json(None, &est)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(a, &cfg),
        Command::Ingest(a) => ingest(a, &cfg),
        Command::Reconstruct(a) => reconstruct_cmd(a, &cfg),
        Command::Benchmark(a) => benchmark(a, &cfg),
        Command::Sample(a) => sample(a, &cfg),
        Command::Fit(a) => fit(a, &cfg),
        Command::Hom(a) => hom(a),
    }
}

fn report(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::json!({"error": kind, "message": message, "exit_code": code}));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report("usage", e.to_string().trim(), 2),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation { kind, message }) => report(&kind, &message, 3),
        Err(Failure::Runtime { kind, message }) => report(&kind, &message, 1),
    }
}
