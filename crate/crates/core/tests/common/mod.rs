#![allow(dead_code)]

use corrtomo::histogram::{ingest_histogram, Histogram, IngestOptions};
use corrtomo::matrix::{
    canonicalize_default, gauge_fidelity, haar_random_unitary, matrix_fidelity, TransferMatrix, UNITARY_TOL,
};
use corrtomo::optics::{
    apply_losses, g2_side, g2_side_expanded, hom_indistinguishability, submatrix, visibility, LossModel, ModeQuad,
    SourceModel, Sub2,
};
use corrtomo::reck::{reck_compose, reck_decompose, with_output_phases};
use corrtomo::sampling::{classical_fidelity, output_pairs, predict_counts, CountsRecord};
use corrtomo::sinkhorn::sinkhorn_knopp;
use corrtomo::tomography::{RecordFlag, VisibilityDataset, VisibilityRecord};
use corrtomo::{io, C64};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), TestCaseError>;

pub fn transmissions(dim: usize, seed: u64) -> LossModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut t = || (0.5 + 0.5 * rng.random::<f64>()).sqrt();
    let t_in = (0..dim).map(|_| t()).collect();
    let t_out = (0..dim).map(|_| t()).collect();
    LossModel::new(t_in, t_out).unwrap()
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Check {
    prop_assert!((a - b).abs() <= tol, "{}: {} vs {} (tol {})", what, a, b, tol);
    Ok(())
}

// ---- invariants ----

pub fn haar_is_unitary(dim: usize, seed: u64) -> Check {
    let u = haar_random_unitary(dim, seed).unwrap();
    prop_assert!(u.unitarity_residual() <= UNITARY_TOL, "residual {}", u.unitarity_residual());
    Ok(())
}

pub fn reck_round_trip(dim: usize, seed: u64) -> Check {
    let u = haar_random_unitary(dim, seed).unwrap();
    let (params, ext) = reck_decompose(&u).unwrap();
    prop_assert_eq!(params.phases().len(), dim * (dim - 1));
    let back = with_output_phases(&reck_compose(&params), &ext);
    let err = (back.as_matrix() - u.as_matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    prop_assert!(err < 1e-10, "max entry error {}", err);
    Ok(())
}

pub fn sinkhorn_is_doubly_stochastic(dim: usize, seed: u64) -> Check {
    let u = haar_random_unitary(dim, seed).unwrap();
    let r = apply_losses(&u, &transmissions(dim, seed)).unwrap().power();
    let s = sinkhorn_knopp(&r, 1e-12, 100_000).unwrap();
    for k in 0..dim {
        close(s.stochastic.row(k).sum(), 1.0, 1e-8, "row sum")?;
        close(s.stochastic.column(k).sum(), 1.0, 1e-8, "column sum")?;
    }
    // The doubly stochastic core of a T'|U|^2 T matrix is |U|^2 itself.
    let pu = u.power();
    for (a, b) in s.stochastic.iter().zip(pu.iter()) {
        close(*a, *b, 1e-8, "core vs |U|^2")?;
    }
    Ok(())
}

pub fn fidelity_bounds(dim: usize, seed: u64, phase_seed: u64) -> Check {
    let a = haar_random_unitary(dim, seed).unwrap();
    let b = haar_random_unitary(dim, seed.wrapping_add(1)).unwrap();
    let f_ab = matrix_fidelity(&a, &b).unwrap();
    let f_ba = matrix_fidelity(&b, &a).unwrap();
    prop_assert!((0.0..=1.0).contains(&f_ab));
    close(f_ab, f_ba, 1e-14, "symmetry")?;
    close(matrix_fidelity(&a, &a).unwrap(), 1.0, 1e-14, "self")?;
    // Gauge-equivalent matrices are indistinguishable after canonicalization.
    let mut rng = ChaCha8Rng::seed_from_u64(phase_seed);
    let mut ph = || C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU);
    let left: Vec<C64> = (0..dim).map(|_| ph()).collect();
    let right: Vec<C64> = (0..dim).map(|_| ph()).collect();
    let m = a.as_matrix();
    let g = TransferMatrix::new(DMatrix::from_fn(dim, dim, |r, c| left[r] * m[(r, c)] * right[c])).unwrap();
    close(gauge_fidelity(&g, &a).unwrap(), 1.0, 1e-12, "gauge fidelity")?;
    close(gauge_fidelity(&a.conj(), &a).unwrap(), 1.0, 1e-12, "conjugate gauge fidelity")?;
    Ok(())
}

pub fn canonicalization_keeps_moduli(dim: usize, seed: u64) -> Check {
    let u = haar_random_unitary(dim, seed).unwrap();
    let c = canonicalize_default(&u).unwrap();
    for (x, y) in u.power().iter().zip(c.power().iter()) {
        close(*x, *y, 1e-12, "modulus")?;
    }
    let again = canonicalize_default(&c).unwrap();
    let err = (again.as_matrix() - c.as_matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    prop_assert!(err < 1e-12, "not idempotent: {}", err);
    prop_assert!(c.is_unitary(1e-10));
    Ok(())
}

pub fn visibility_conjugation_and_output_loss(dim: usize, seed: u64, indist: f64) -> Check {
    let u = haar_random_unitary(dim, seed).unwrap();
    let loss = transmissions(dim, seed);
    let q = ModeQuad::new(0, dim - 1, dim - 1, 0).unwrap();
    let x = loss.input_ratio(q.i, q.j);
    let v = visibility(&u, x, indist, &q).unwrap();
    close(v, visibility(&u.conj(), x, indist, &q).unwrap(), 1e-12, "V(U*)")?;
    // The same ratio from the lossy matrix's peak areas, any output loss.
    let mut other = loss.clone();
    other.t_out.iter_mut().enumerate().for_each(|(k, t)| *t *= 0.3 + 0.1 * k as f64);
    for l in [&loss, &other] {
        let s = submatrix(&apply_losses(&u, l).unwrap(), &q).unwrap();
        let (a0, ak) = corrtomo::optics::peak_areas(&s, indist).unwrap();
        close(a0 / ak, v, 1e-12 * v.max(1.0), "peak-area ratio")?;
    }
    Ok(())
}

pub fn side_forms_agree(block: Sub2, c1: f64) -> Check {
    let f = g2_side(&block, c1).unwrap();
    let e = g2_side_expanded(&block, c1);
    close(f, e, 1e-12 * f.abs().max(1.0), "g2_side forms")
}

pub fn hom_inverts(indist: f64, r: f64, eta1: f64, eta2: f64) -> Check {
    // Splitter block with input efficiencies eta1, eta2; areas from first principles.
    let t = 1.0 - r;
    let re = |x: f64| C64::new(x, 0.0);
    let block = Sub2::new(re((eta1 * r).sqrt()), re((eta2 * t).sqrt()), re((eta1 * t).sqrt()), re(-(eta2 * r).sqrt()));
    let (a, b, c, d) = (block.a, block.b, block.c, block.d);
    let central = (a * d).norm_sqr() + (b * c).norm_sqr() + 2.0 * indist * (a.conj() * d.conj() * b * c).re;
    let side = (a.norm_sqr() + b.norm_sqr()) * (c.norm_sqr() + d.norm_sqr());
    let est = hom_indistinguishability(central / side, r, t, eta2 / eta1, 0.0).unwrap();
    close(est.raw, indist, 1e-10, "recovered I")
}

/// Central-to-side ratio for a lossless 2x2 block and input power ratio x,
/// evaluated from first principles.
pub fn ratio_parts(s: &Sub2, x: f64, indist: f64) -> (f64, f64) {
    let (a, b, c, d) = (s.a, s.b, s.c, s.d);
    let classical = (a * d).norm_sqr() + (b * c).norm_sqr();
    // Two-path interference: I |ad + bc|^2 plus the incoherent remainder.
    let central = indist * (a * d + b * c).norm_sqr() + (1.0 - indist) * classical;
    let side = classical + x * (a * c).norm_sqr() + (b * d).norm_sqr() / x;
    (central, side)
}

pub fn classical_fidelity_bounds(p: Vec<f64>, q: Vec<f64>) -> Check {
    let norm = |v: &[f64]| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let (p, q) = (norm(&p), norm(&q));
    let f_pq = classical_fidelity(&p, &q).unwrap();
    prop_assert!((0.0..=1.0).contains(&f_pq));
    close(f_pq, classical_fidelity(&q, &p).unwrap(), 1e-14, "symmetry")?;
    close(classical_fidelity(&p, &p).unwrap(), 1.0, 1e-12, "self")?;
    Ok(())
}

pub fn predictions_are_physical(dim: usize, seed: u64, indist: f64) -> Check {
    let u = haar_random_unitary(dim, seed).unwrap();
    let loss = transmissions(dim, seed);
    for i in 0..dim {
        for j in i + 1..dim {
            let rec = predict_counts(&u, &loss, &SourceModel::ideal(indist), (i, j)).unwrap();
            prop_assert!(rec.coincidences.iter().all(|&v| v >= 0.0));
            let total: f64 = rec.coincidences.iter().sum();
            prop_assert!(total <= 1.0 + 1e-12, "coincidence probability {}", total);
            let singles: f64 = rec.singles.iter().sum();
            prop_assert!(singles <= 2.0 + 1e-12);
            rec.validate().unwrap();
        }
    }
    Ok(())
}

// ---- file round trips ----

pub fn random_dataset(dim: usize, seed: u64) -> VisibilityDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for i in 0..dim {
        for j in i + 1..dim {
            for k in 0..dim {
                for l in k + 1..dim {
                    let flag = match rng.random_range(0..10) {
                        0 => RecordFlag::Undefined,
                        1 => RecordFlag::Floored,
                        _ => RecordFlag::Valid,
                    };
                    records.push(VisibilityRecord {
                        quad: ModeQuad { i, j, k, l },
                        value: rng.random::<f64>() * 2.0,
                        sigma: rng.random::<f64>() * 1e-2,
                        flag,
                    });
                }
            }
        }
    }
    let power = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>());
    let power_sigma = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() * 1e-3);
    VisibilityDataset::new(dim, records, power, power_sigma).unwrap()
}

pub fn dataset_round_trip(dim: usize, seed: u64) -> Check {
    let ds = random_dataset(dim, seed);
    let dir = tempfile::tempdir().unwrap();
    let (d, p) = (dir.path().join("vis.csv"), dir.path().join("power.csv"));
    io::save_dataset(&d, &p, &ds).unwrap();
    prop_assert_eq!(io::load_dataset(&d, &p).unwrap(), ds);
    Ok(())
}

pub fn counts_round_trip(dim: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<CountsRecord> = (0..dim)
        .flat_map(|i| (i + 1..dim).map(move |j| (i, j)))
        .map(|pair| CountsRecord {
            input_pair: pair,
            singles: (0..dim).map(|_| rng.random::<f64>() * 1e5).collect(),
            coincidences: output_pairs(dim).iter().map(|_| rng.random::<f64>() * 1e3).collect(),
        })
        .collect();
    let mut buf = Vec::new();
    io::write_counts(&mut buf, &records).unwrap();
    prop_assert_eq!(io::read_counts(buf.as_slice()).unwrap(), records);
    Ok(())
}

pub fn histogram_round_trip(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = rng.random_range(5..40usize);
    let bin_width = 1e-10 * (1.0 + rng.random::<f64>());
    let h = Histogram {
        bin_width,
        counts: (0..per * 13).map(|_| rng.random_range(0..10_000u64)).collect(),
        t0_offset: 6.5 * per as f64 * bin_width,
        pump_period: per as f64 * bin_width,
    };
    let dir = tempfile::tempdir().unwrap();
    let (c, m) = (dir.path().join("h.csv"), dir.path().join("h.json"));
    io::write_histogram(&c, &m, &h).unwrap();
    prop_assert_eq!(io::read_histogram(&c, &m).unwrap(), h.clone());
    // Rescaling every count leaves V unchanged.
    let scaled = Histogram {
        counts: h.counts.iter().map(|c| c * 7).collect(),
        ..h.clone()
    };
    let opts = IngestOptions::default();
    if let (Ok(a), Ok(b)) = (ingest_histogram(&h, &opts), ingest_histogram(&scaled, &opts)) {
        close(a.value, b.value, 1e-12 * a.value.abs().max(1.0), "scaled histogram V")?;
    }
    Ok(())
}

pub fn unitary_json_round_trip(dim: usize, seed: u64) -> Check {
    let u = haar_random_unitary(dim, seed).unwrap();
    let text = io::to_json(&u).unwrap();
    prop_assert_eq!(io::from_json::<TransferMatrix>(&text).unwrap(), u);
    Ok(())
}

// ---- oracles ----

/// Permanent by summing over all permutations.
pub fn permanent(m: &[Vec<C64>]) -> C64 {
    fn go(m: &[Vec<C64>], row: usize, used: &mut Vec<bool>) -> C64 {
        if row == m.len() {
            return C64::new(1.0, 0.0);
        }
        let mut acc = C64::new(0.0, 0.0);
        for c in 0..m.len() {
            if !used[c] {
                used[c] = true;
                acc += m[row][c] * go(m, row + 1, used);
                used[c] = false;
            }
        }
        acc
    }
    go(m, 0, &mut vec![false; m.len()])
}

/// Coincidence probabilities for photons in inputs (i, j) and outputs k < l.
/// I = 1: |Per|^2. I = 0: Per of the entrywise |M|^2 (distinguishable particles).
pub fn brute_force_coincidences(m: &TransferMatrix, pair: (usize, usize), indist: f64) -> Vec<f64> {
    let (i, j) = pair;
    output_pairs(m.dim())
        .into_iter()
        .map(|(k, l)| {
            let block = vec![vec![m.get(k, i), m.get(k, j)], vec![m.get(l, i), m.get(l, j)]];
            let quantum = permanent(&block).norm_sqr();
            let power: Vec<Vec<C64>> = block
                .iter()
                .map(|r| r.iter().map(|z| C64::new(z.norm_sqr(), 0.0)).collect())
                .collect();
            let classical = permanent(&power).re;
            indist * quantum + (1.0 - indist) * classical
        })
        .collect()
}

/// Draws photon pairs through M. With probability I the two photons share one
/// wave packet; otherwise they are orthogonal and route independently.
/// Returns counts per output pair k < l.
pub fn sample_coincidences(m: &TransferMatrix, pair: (usize, usize), indist: f64, shots: usize, seed: u64) -> Vec<u64> {
    let n = m.dim();
    let (i, j) = pair;
    let pairs = output_pairs(n);
    // Indistinguishable outcomes: (k, l) with k <= l; remainder means a photon was lost.
    let mut bosonic = Vec::new();
    for k in 0..n {
        for l in k..n {
            let amp = m.get(k, i) * m.get(l, j) + m.get(l, i) * m.get(k, j);
            let p = if k == l { amp.norm_sqr() / 2.0 } else { amp.norm_sqr() };
            bosonic.push(((k, l), p));
        }
    }
    let route = |col: usize| (0..n).map(|k| m.get(k, col).norm_sqr()).collect::<Vec<f64>>();
    let (ri, rj) = (route(i), route(j));
    let pick = |probs: &[f64], u: f64| -> Option<usize> {
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Some(k);
            }
        }
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; pairs.len()];
    for _ in 0..shots {
        let outcome = if rng.random::<f64>() < indist {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut hit = None;
            for &((k, l), p) in &bosonic {
                acc += p;
                if u < acc {
                    hit = Some((k, l));
                    break;
                }
            }
            hit
        } else {
            match (pick(&ri, rng.random()), pick(&rj, rng.random())) {
                (Some(a), Some(b)) => Some((a.min(b), a.max(b))),
                _ => None,
            }
        };
        if let Some((k, l)) = outcome {
            if k != l {
                counts[pairs.iter().position(|&p| p == (k, l)).unwrap()] += 1;
            }
        }
    }
    counts
}

pub fn random_lossy_block(rng: &mut ChaCha8Rng) -> Sub2 {
    let dim = rng.random_range(2..6usize);
    let u = haar_random_unitary(dim, rng.random()).unwrap();
    let loss = transmissions(dim, rng.random());
    let m = apply_losses(&u, &loss).unwrap();
    let i = rng.random_range(0..dim);
    let j = (i + rng.random_range(1..dim)) % dim;
    let k = rng.random_range(0..dim);
    let l = (k + rng.random_range(1..dim)) % dim;
    submatrix(&m, &ModeQuad { i, j, k, l }).unwrap()
}
