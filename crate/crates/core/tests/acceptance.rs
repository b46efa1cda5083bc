//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::time::Instant;

use common::*;
use corrtomo::bench::{generate_instance, run_sweep, Method, RatioNoise, SweepAxis, SweepConfig, SweepResult};
use corrtomo::matrix::{canonicalize_default, gauge_fidelity, matrix_fidelity, resolve_conjugate_ambiguity};
use corrtomo::optics::{
    apply_losses, hom_indistinguishability, reduction_check, visibility, ModeQuad, SourceModel, Sub2,
};
use corrtomo::sampling::{fit_source, mean_classical_fidelity, predict_counts, CountsRecord, SourceFitConfig};
use corrtomo::tomography::{reconstruct, MeasurementMode, OptimizerConfig, VisibilityDataset, VisibilityRecord};
use corrtomo::C64;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

// Pinned thresholds.
const NOISELESS_FIDELITY: f64 = 0.999;
const NOISELESS_INDIST_TOL: f64 = 0.01;
const HOM_TOL: f64 = 1e-12;
const REDUCTION_REL_TOL: f64 = 1e-12;
const ORDERING_SIGMA: f64 = 0.1;
const MONOTONE_SLACK: f64 = 1e-3;
const MAX_STEP_DROP: f64 = 0.02;
const SOURCE_FIT_FIDELITY: f64 = 0.99;
const COUNT_NOISE: f64 = 0.05;
const ORACLE_TOL: f64 = 1e-12;
const CONJUGATE_FIDELITY: f64 = 1.0 - 1e-6;

const TRUE_INDIST: f64 = 0.9;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn noiseless_recovery() -> Verdict {
    let cfg = OptimizerConfig::default();
    let mut worst_f: f64 = 1.0;
    let mut worst_i: f64 = 0.0;
    let mut fails = 0;
    for dim in [2, 4, 6] {
        for k in 0..20u64 {
            let inst = generate_instance(dim, 100 * dim as u64 + k, 0.5, 1.0, TRUE_INDIST, MeasurementMode::Full).unwrap();
            let ok = reconstruct(&inst.dataset, &cfg).and_then(|r| {
                let f = gauge_fidelity(&r.unitary, &inst.unitary)?;
                Ok((f, (r.indistinguishability - TRUE_INDIST).abs()))
            });
            match ok {
                Ok((f, di)) => {
                    worst_f = worst_f.min(f);
                    worst_i = worst_i.max(di);
                    if f < NOISELESS_FIDELITY || di > NOISELESS_INDIST_TOL {
                        fails += 1;
                    }
                }
                Err(_) => fails += 1,
            }
        }
    }
    verdict(
        fails == 0,
        format!("60 instances (dim 2,4,6): min fidelity {worst_f:.9}, max |dI| {worst_i:.2e}, {fails} failing"),
    )
}

fn hom_identity() -> Verdict {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let u = corrtomo::TransferMatrix::from_rows(&[
        vec![C64::new(h, 0.0), C64::new(h, 0.0)],
        vec![C64::new(h, 0.0), C64::new(-h, 0.0)],
    ])
    .unwrap();
    let q = ModeQuad::new(0, 1, 0, 1).unwrap();
    let mut worst_v: f64 = 0.0;
    let mut worst_i: f64 = 0.0;
    for i in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let v = visibility(&u, 1.0, i, &q).unwrap();
        worst_v = worst_v.max((v - (1.0 - i) / 2.0).abs());
        let est = hom_indistinguishability(v, 0.5, 0.5, 1.0, 0.0).unwrap();
        worst_i = worst_i.max((est.indistinguishability - i).abs());
    }
    verdict(
        worst_v <= HOM_TOL && worst_i <= HOM_TOL,
        format!("max |V - (1-I)/2| {worst_v:.1e}, max inversion error {worst_i:.1e}"),
    )
}

fn ideal_source_reduction() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let blocks: Vec<Sub2> = (0..1000).map(|_| random_lossy_block(&mut rng)).collect();
    let mut worst: f64 = 0.0;
    for i in [0.0, 0.5, 0.9, 1.0] {
        for b in &blocks {
            let (ratio, eq4) = reduction_check(b, &SourceModel::ideal(i)).unwrap();
            let (central, side) = ratio_parts(b, 1.0, i);
            let direct = central / side;
            worst = worst.max(((ratio - eq4) / eq4).abs()).max(((ratio - direct) / direct).abs());
        }
    }
    verdict(worst <= REDUCTION_REL_TOL, format!("4000 block/I cases, max relative deviation {worst:.1e}"))
}

fn medians(res: &SweepResult, m: Method) -> Vec<f64> {
    (0..res.points.len()).map(|p| res.stats(p, m).unwrap().median).collect()
}

fn fmt_medians(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(" ")
}

fn method_ordering() -> Verdict {
    let cfg = SweepConfig {
        axis: SweepAxis::Noise,
        grid: vec![0.0, 0.05, 0.1, 0.15, 0.2],
        dims: vec![4],
        trials: 50,
        ..SweepConfig::default()
    };
    let res = run_sweep(&cfg).unwrap();
    let at = cfg.grid.iter().position(|&s| s == ORDERING_SIGMA).unwrap();
    let [tw, sst, til] = [Method::ThisWork, Method::Sst, Method::Tillmann].map(|m| medians(&res, m));
    let ordered = til[at] >= tw[at] && tw[at] >= sst[at];
    let monotone = [&tw, &sst, &til]
        .iter()
        .all(|m| m.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK));
    let max_drop = tw.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    let smooth = monotone && max_drop <= MAX_STEP_DROP;

    // Same sweep with the two-run baseline noised run by run, reported for reference.
    let alt = run_sweep(&SweepConfig {
        grid: vec![ORDERING_SIGMA],
        methods: vec![Method::Tillmann],
        ratio_noise: RatioNoise::IndependentRuns,
        ..cfg.clone()
    })
    .unwrap();
    let alt_til = alt.stats(0, Method::Tillmann).unwrap().median;
    verdict(
        ordered && smooth,
        format!(
            "sigma 0.1: tillmann {:.5} >= this-work {:.5} >= sst {:.5}; medians over sigma 0..0.2: this-work [{}] sst [{}] tillmann [{}]; largest this-work step {max_drop:.4}; (independent-run baseline noise at 0.1: tillmann {alt_til:.5})",
            til[at],
            tw[at],
            sst[at],
            fmt_medians(&tw),
            fmt_medians(&sst),
            fmt_medians(&til)
        ),
    )
}

fn mode_scaling() -> Verdict {
    let cfg = SweepConfig {
        axis: SweepAxis::Modes,
        grid: vec![4.0, 8.0],
        sigma: 0.1,
        trials: 50,
        methods: vec![Method::ThisWork, Method::Sst],
        ..SweepConfig::default()
    };
    let res = run_sweep(&cfg).unwrap();
    let s = |p, m| res.stats(p, m).unwrap();
    let (tw4, tw8) = (s(0, Method::ThisWork), s(1, Method::ThisWork));
    let (sst4, sst8) = (s(0, Method::Sst), s(1, Method::Sst));
    verdict(
        tw8.median >= tw4.median && sst8.median <= sst4.median,
        format!(
            "this-work dim4 {:.5} [{:.4}, {:.4}] -> dim8 {:.5} [{:.4}, {:.4}]; sst dim4 {:.5} -> dim8 {:.5}",
            tw4.median, tw4.p05, tw4.p95, tw8.median, tw8.p05, tw8.p95, sst4.median, sst8.median
        ),
    )
}

fn boson_sampling_fit() -> Verdict {
    let pairs: Vec<(usize, usize)> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).collect();
    let normal = Normal::new(0.0, COUNT_NOISE).unwrap();
    let mut fids = Vec::new();
    for seed in 0..10u64 {
        let inst = generate_instance(4, 500 + seed, 0.5, 1.0, TRUE_INDIST, MeasurementMode::Full).unwrap();
        // Characterize the chip first, then fit the source to the sampling data.
        let u = reconstruct(&inst.dataset, &OptimizerConfig::default()).unwrap().unitary;
        let src = SourceModel { p_emit: 0.3, ..SourceModel::ideal(TRUE_INDIST) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let observed: Vec<CountsRecord> = pairs
            .iter()
            .map(|&p| {
                let mut r = predict_counts(&inst.unitary, &inst.loss, &src, p).unwrap();
                for v in r.singles.iter_mut().chain(r.coincidences.iter_mut()) {
                    *v = (*v * 1e6 * (1.0 + normal.sample(&mut rng))).max(0.0);
                }
                r
            })
            .collect();
        let fit = fit_source(&u, &observed, &SourceFitConfig::default()).unwrap();
        fids.push(mean_classical_fidelity(&fit.predict(&u, &pairs).unwrap(), &observed).unwrap());
    }
    let mean = fids.iter().sum::<f64>() / fids.len() as f64;
    let min = fids.iter().copied().fold(1.0, f64::min);
    verdict(
        mean >= SOURCE_FIT_FIDELITY,
        format!("10 dim-4 experiments, 6 input pairs, 5% count noise: mean F_c {mean:.5}, min {min:.5}"),
    )
}

fn oracle_equivalence() -> Verdict {
    let mut worst: f64 = 0.0;
    for dim in 2..=4 {
        for seed in 0..5 {
            let u = corrtomo::matrix::haar_random_unitary(dim, seed).unwrap();
            let loss = transmissions(dim, seed);
            let m = apply_losses(&u, &loss).unwrap();
            for indist in [0.0, 1.0] {
                for i in 0..dim {
                    for j in i + 1..dim {
                        let got = predict_counts(&u, &loss, &SourceModel::ideal(indist), (i, j)).unwrap();
                        let want = brute_force_coincidences(&m, (i, j), indist);
                        for (g, w) in got.coincidences.iter().zip(&want) {
                            worst = worst.max((g - w).abs());
                        }
                    }
                }
            }
        }
    }
    let shots = 400_000;
    let mut worst_z: f64 = 0.0;
    for dim in 2..=4 {
        let u = corrtomo::matrix::haar_random_unitary(dim, 40 + dim as u64).unwrap();
        let loss = transmissions(dim, 7);
        let m = apply_losses(&u, &loss).unwrap();
        let got = predict_counts(&u, &loss, &SourceModel::ideal(TRUE_INDIST), (0, dim - 1)).unwrap();
        let counts = sample_coincidences(&m, (0, dim - 1), TRUE_INDIST, shots, dim as u64);
        for (p, &c) in got.coincidences.iter().zip(&counts) {
            let sd = (p * (1.0 - p) / shots as f64).sqrt();
            worst_z = worst_z.max((c as f64 / shots as f64 - p).abs() / sd);
        }
    }
    verdict(
        worst <= ORACLE_TOL && worst_z <= 3.0,
        format!("permanent oracle max error {worst:.1e} (I = 0, 1); Monte Carlo at I = 0.9 worst deviation {worst_z:.2} sigma"),
    )
}

fn conjugate_hygiene() -> Verdict {
    let cfg = OptimizerConfig::default();
    let mut worst: f64 = 1.0;
    for dim in [3, 4, 5] {
        for seed in 0..5u64 {
            let inst = generate_instance(dim, 900 + seed, 0.5, 1.0, TRUE_INDIST, MeasurementMode::Full).unwrap();
            let data_of = |u: &corrtomo::TransferMatrix| {
                let records = inst
                    .dataset
                    .records
                    .iter()
                    .map(|r| VisibilityRecord {
                        value: visibility(u, inst.loss.input_ratio(r.quad.i, r.quad.j), TRUE_INDIST, &r.quad).unwrap(),
                        ..*r
                    })
                    .collect();
                let power = apply_losses(u, &inst.loss).unwrap().power();
                VisibilityDataset::new(dim, records, power, inst.dataset.power_sigma.clone()).unwrap()
            };
            let a = reconstruct(&data_of(&inst.unitary), &cfg).unwrap().unitary;
            let b = reconstruct(&data_of(&inst.unitary.conj()), &cfg).unwrap().unitary;
            let (rule, _) = resolve_conjugate_ambiguity(&canonicalize_default(&inst.unitary).unwrap(), None).unwrap();
            worst = worst.min(matrix_fidelity(&a, &b).unwrap()).min(matrix_fidelity(&a, &rule).unwrap());
        }
    }
    verdict(
        worst >= CONJUGATE_FIDELITY,
        format!("15 U/U* pairs (dim 3-5): min mutual fidelity {worst:.12}"),
    )
}

fn invariant_suites() -> Verdict {
    let mut failed = Vec::new();
    let mut run = |name: &str, outcome: Result<(), String>| {
        if let Err(e) = outcome {
            failed.push(format!("{name}: {e}"));
        }
    };
    let config = |cases| Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let runner = || TestRunner::new(config(128));
    let seed = any::<u64>();
    run("unitarity", runner().run(&(1usize..=10, seed), |(d, s)| haar_is_unitary(d, s)).map_err(|e| e.to_string()));
    run("reck", runner().run(&(2usize..=10, seed), |(d, s)| reck_round_trip(d, s)).map_err(|e| e.to_string()));
    run(
        "sinkhorn",
        runner()
            .run(&(2usize..=8, seed), |(d, s)| sinkhorn_is_doubly_stochastic(d, s))
            .map_err(|e| e.to_string()),
    );
    run(
        "fidelity",
        runner()
            .run(&(2usize..=8, seed, seed), |(d, s, p)| fidelity_bounds(d, s, p))
            .map_err(|e| e.to_string()),
    );
    run(
        "canonical",
        runner()
            .run(&(2usize..=8, seed), |(d, s)| canonicalization_keeps_moduli(d, s))
            .map_err(|e| e.to_string()),
    );
    let files = || TestRunner::new(config(32));
    run("dataset files", files().run(&(2usize..=5, seed), |(d, s)| dataset_round_trip(d, s)).map_err(|e| e.to_string()));
    run("counts files", files().run(&(2usize..=6, seed), |(d, s)| counts_round_trip(d, s)).map_err(|e| e.to_string()));
    run("histogram files", files().run(&seed, histogram_round_trip).map_err(|e| e.to_string()));
    run("json files", files().run(&(1usize..=8, seed), |(d, s)| unitary_json_round_trip(d, s)).map_err(|e| e.to_string()));
    verdict(
        failed.is_empty(),
        if failed.is_empty() {
            "unitarity, Reck round trip, Sinkhorn residual <= 1e-8, fidelity bounds, canonical form, 4 file formats".into()
        } else {
            failed.join("; ")
        },
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Verdict);
    let criteria: [Criterion; 9] = [
        ("noiseless recovery", noiseless_recovery),
        ("HOM identity", hom_identity),
        ("ideal-source reduction", ideal_source_reduction),
        ("method ordering", method_ordering),
        ("mode scaling", mode_scaling),
        ("boson sampling fit", boson_sampling_fit),
        ("oracle equivalence", oracle_equivalence),
        ("conjugate hygiene", conjugate_hygiene),
        ("invariant suites", invariant_suites),
    ];
    let mut passed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = f();
        passed += v.pass as usize;
        println!(
            "criterion {} {:<20} {} ({:.1}s) {}",
            n + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {passed}/{} passed", criteria.len());
    if passed < criteria.len() {
        std::process::exit(1);
    }
}
