"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL`` line (visible with
``pytest -s`` and in the terminal summary) before asserting.
"""

import json
import time

import numpy as np
import pytest

from quantcert.cli import main
from quantcert.interval import Box, interval_eval
from quantcert.merge import merge
from quantcert.network import model_size_bytes, random_network, save_model
from quantcert.quantization import (
    AffineCalibration,
    QuantizationScheme,
    quantize_network,
)
from quantcert.solver import Budget, bound_band, exact_reach_1d, grid_lower_bound, moore_skelboe

from conftest import PAPER_DIMS, paper_instance

UNIT = Box([0.0], [1.0])


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok

    return _report


def _random_scheme(rng):
    kind = rng.integers(3)
    if kind == 0:
        return QuantizationScheme.truncation(int(rng.integers(0, 7)))
    if kind == 1:
        return AffineCalibration(int(rng.integers(2, 17)))
    return QuantizationScheme.affine(float(rng.uniform(1e-3, 0.5)), 0, int(rng.integers(4, 17)))


def test_criterion_1_merge_exactness(report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for pair in range(100):
        depth = int(rng.integers(1, 5))
        dims = [int(d) for d in rng.integers(1, 51, size=depth + 1)]
        act = ["relu", "tanh", "sigmoid"][pair % 3]
        phi = random_network(dims, act, int(rng.integers(2**32)))
        q = quantize_network(phi, _random_scheme(rng))
        m = merge(phi, q)
        U = rng.uniform(-1, 1, size=(100, dims[0]))
        y = phi.forward_batch(U)
        err = np.max(np.abs(m.forward_batch(U) - (y - q.net.forward_batch(U))), axis=1)
        worst = max(worst, float(np.max(err / (1 + np.max(np.abs(y), axis=1)))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 60
    report(1, ok, f"100 pairs x 100 inputs, worst scaled error {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_interval_soundness(report):
    rng = np.random.default_rng(99)
    t0 = time.perf_counter()
    violations = monotone_failures = 0
    for k in range(50):
        n_in = int(rng.integers(1, 4))
        depth = int(rng.integers(1, 4))
        dims = [n_in] + [int(d) for d in rng.integers(1, 21, size=depth)]
        act = ["relu", "tanh", "sigmoid"][k % 3]
        phi = random_network(dims, act, int(rng.integers(2**32)))
        m = merge(phi, quantize_network(phi, _random_scheme(rng)))
        lo = rng.uniform(-2, 1, size=n_in)
        box = Box(lo, lo + rng.uniform(0, 1.5, size=n_in))
        enc = interval_eval(m, box)
        Y = m.forward_batch(box.sample(rng, 1000))
        violations += int(np.sum(np.any((Y < enc.lo) | (Y > enc.hi), axis=1)))
        t = np.sort(rng.random((2, n_in)), axis=0)
        inner = Box(box.lo + t[0] * box.widths, box.lo + t[1] * box.widths)
        monotone_failures += not enc.contains(interval_eval(m, inner))
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and monotone_failures == 0 and elapsed < 60
    report(2, ok, f"{violations} containment violations, {monotone_failures} monotonicity failures, {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def paper_cert():
    phi, q, m = paper_instance(seed=7, width=50)
    cert = moore_skelboe(m, UNIT, eps=1e-4, budget=Budget(max_boxes=10**8, max_seconds=1800))
    return phi, q, m, cert


@pytest.mark.slow
def test_criterion_3_moore_skelboe_gap(report, paper_cert):
    phi, q, m, cert = paper_cert
    grid = grid_lower_bound(m, UNIT, points_per_axis=100_000)
    gap_ok = cert.gap <= 1e-4 and not cert.stats.budget_exhausted
    oracle_ok = cert.lo - 1e-9 <= grid.lo <= cert.hi
    time_ok = cert.stats.wall_time < 300
    ok = gap_ok and oracle_ok and time_ok
    exact = exact_reach_1d(m, UNIT)[1].lo  # context only, not part of the criterion
    report(
        3,
        ok,
        f"gap_ok={gap_ok} oracle_ok={oracle_ok} time_ok={time_ok}; "
        f"lo={cert.lo:.10g} hi={cert.hi:.10g} gap={cert.gap:.3e} grid={grid.lo:.10g} exact={exact:.10g} "
        f"boxes={cert.stats.boxes_processed} time={cert.stats.wall_time:.0f}s",
    )
    assert ok


@pytest.mark.slow
def test_criterion_4_cross_method(report):
    # width 20 instead of 50; the property does not depend on width
    t0 = time.perf_counter()
    failures = []
    for seed in range(20):
        _, _, m = paper_instance(seed=seed, width=20)
        _, exact = exact_reach_1d(m, UNIT)
        ms = moore_skelboe(m, UNIT, eps=1e-4, budget=Budget(max_boxes=10**8, max_seconds=1800))
        rho = exact.lo
        if not (abs(rho - ms.hi) <= 1e-4 + 1e-9 and ms.lo <= rho <= ms.hi):
            failures.append((seed, rho, ms.lo, ms.hi))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 1800
    report(4, ok, f"20 instances (width 20), {len(failures)} disagreements {failures[:3]}, {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_5_band(report, paper_cert):
    phi, q, m, cert = paper_cert
    t0 = time.perf_counter()
    band = bound_band(phi, cert, np.linspace(0.0, 1.0, 500), phi_q=q, box=UNIT)
    elapsed = time.perf_counter() - t0
    ok = band.violations == 0 and len(band) == 500 and elapsed < 10
    report(5, ok, f"500 samples, {band.violations} violations, hi={cert.hi:.6g}, {elapsed:.2f}s")
    assert ok


def test_criterion_6_model_size(report, tmp_path):
    t0 = time.perf_counter()
    phi = random_network(PAPER_DIMS, "relu", 7)
    f32, i8 = model_size_bytes(phi, "float32"), model_size_bytes(phi, "int8-affine")
    model = tmp_path / "phi.json"
    model.write_bytes(save_model(phi))
    rep = tmp_path / "rep.json"
    rc = main(["quantize", "--model", str(model), "--quant", "affine:8",
               "--out", str(tmp_path / "q.json"), "--report", str(rep)])
    r = json.loads(rep.read_text())
    elapsed = time.perf_counter() - t0
    ok = rc == 0 and i8 <= 0.6 * f32 and r["compressed_bytes"] < r["original_bytes_float32"] and elapsed < 1.0
    report(6, ok, f"float32 {f32} B, int8-affine {i8} B ({i8 / f32:.1%}); CLI {r['original_bytes_float32']} -> "
                  f"{r['compressed_bytes']} B, {elapsed:.2f}s")
    assert ok


def test_criterion_7_two_dim_grid(report):
    t0 = time.perf_counter()
    box = Box.unit(2)
    rows, ok = [], True
    for seed in range(11, 16):
        phi = random_network([2, 4, 1], "relu", seed)
        m = merge(phi, quantize_network(phi, QuantizationScheme.truncation(2)))
        cert = moore_skelboe(m, box, eps=1e-6)
        grid = grid_lower_bound(m, box, points_per_axis=1000)
        inside = cert.lo - 1e-9 <= grid.lo <= cert.hi
        ok &= inside
        rows.append(f"seed {seed}: grid {grid.lo:.8g} in [{cert.lo:.8g}, {cert.hi:.8g}] {inside}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60
    report(7, ok, f"{len(rows)} instances, {elapsed:.1f}s; " + "; ".join(rows))
    assert ok
