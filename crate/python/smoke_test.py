"""Smoke test for the corrtomo extension module.

Build and install it first:

    cd crates/py && maturin develop --release

then run ``python python/smoke_test.py`` (or ``pytest python/``).
"""

import math
import tempfile
from pathlib import Path

import corrtomo


def test_haar_and_fidelity():
    u = corrtomo.haar_random_unitary(5, 3)
    assert u.dim == 5 and u.is_unitary()
    assert abs(corrtomo.matrix_fidelity(u, u) - 1.0) < 1e-12
    # phases and conjugation are invisible to the gauge-fixed fidelity
    assert abs(corrtomo.gauge_fidelity(u.conj(), u) - 1.0) < 1e-9
    back = corrtomo.TransferMatrix.from_json(u.to_json())
    assert back == u
    assert abs(sum(u.power()[0]) - 1.0) < 1e-12


def test_reconstruct_noiseless():
    inst = corrtomo.generate_instance(4, seed=7, indistinguishability=0.85)
    res = corrtomo.reconstruct(inst["dataset"], {"n_starts": 8})
    assert res.converged
    assert abs(res.indistinguishability - 0.85) < 1e-6
    assert corrtomo.gauge_fidelity(res.unitary, inst["unitary"]) > 0.999
    assert res.to_dict()["diagnostics"]["records_used"] == len(inst["dataset"])


def test_dataset_files_and_noise():
    inst = corrtomo.generate_instance(3, seed=1)
    with tempfile.TemporaryDirectory() as d:
        v, p = Path(d, "v.csv"), Path(d, "p.csv")
        inst["dataset"].save(v, p)
        ds = corrtomo.Dataset.load(v, p)
    assert len(ds) == len(inst["dataset"])
    noisy = ds.with_noise(0.05, 2)
    assert noisy.records()[0]["value"] != ds.records()[0]["value"]
    res = corrtomo.reconstruct(noisy)
    assert corrtomo.gauge_fidelity(res.unitary, inst["unitary"]) > 0.95


def test_hom_and_visibility():
    est = corrtomo.hom_indistinguishability(0.0, 0.5, 0.5)
    assert abs(est["indistinguishability"] - 1.0) < 1e-12
    u = corrtomo.TransferMatrix([[1 / math.sqrt(2), 1 / math.sqrt(2)], [1 / math.sqrt(2), -1 / math.sqrt(2)]])
    assert abs(corrtomo.visibility(u, (0, 1, 0, 1), 1.0)) < 1e-12
    # side peaks also count pairs from separate pulses, so a classical source gives 1/2
    assert abs(corrtomo.visibility(u, (0, 1, 0, 1), 0.0) - 0.5) < 1e-12


def test_predict_then_fit():
    u = corrtomo.haar_random_unitary(4, 11)
    t_in = [1.0, 0.9, 0.8, 0.7]
    records = []
    for pair in [(0, 1), (0, 2), (1, 3), (2, 3)]:
        r = corrtomo.predict_counts(u, pair, indistinguishability=0.8, p_emit=0.4, t_in=t_in)
        r["singles"] = [1e6 * s for s in r["singles"]]
        r["coincidences"] = [1e6 * c for c in r["coincidences"]]
        records.append(r)
    fit = corrtomo.fit_source(u, records)
    assert abs(fit["indistinguishability"] - 0.8) < 1e-6
    assert abs(fit["p_emit"] - 0.4) < 1e-6
    assert fit["mean_classical_fidelity"] > 1 - 1e-9


def test_errors_map_to_python_exceptions():
    for bad in (lambda: corrtomo.haar_random_unitary(0, 1), lambda: corrtomo.hom_indistinguishability(0.0, 0.5, 0.6)):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")
    try:
        corrtomo.Dataset.load("missing.csv", "missing_power.csv")
    except OSError:
        pass
    else:
        raise AssertionError("expected OSError")


def test_small_sweep():
    res = corrtomo.run_sweep({"grid": [0.0, 0.1], "trials": 2, "seed": 4})
    assert len(res["points"]) == 2


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for t in tests:
        t()
        print(f"ok  {t.__name__}")
    print(f"{len(tests)} passed")
