"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the summary lines.
"""

import time

import numpy as np
import pytest

from hsm_casimir.calibration import GroundTruth, ScanPlan, run_pipeline
from hsm_casimir.cli import main
from hsm_casimir.dielectric import (
    GOLD_DRUDE, AbsorptionTable, Drude, IdealMetal, TransparencyWindow, eps_imag_axis_drude,
    eps_imag_axis_kk,
)
from hsm_casimir.lifshitz import (
    ForceQuery, Geometry, force_ratio_windowed, ideal_plate_pressure, ideal_sphere_plate,
    lifshitz_sphere_plate, lifshitz_sphere_plate_grid,
)

from conftest import drude_eps_imag

R = 100e-6
RATIO_SEPARATIONS = np.geomspace(70e-9, 400e-9, 20)

# Frozen from the first validated run (gold_drude base, R = 100 um, default tolerances).
GOLDEN_NARROW = np.array([
    0.992718, 0.993180, 0.993640, 0.994095, 0.994543, 0.994981, 0.995406, 0.995816,
    0.996209, 0.996583, 0.996935, 0.997266, 0.997574, 0.997859, 0.998121, 0.998359,
    0.998575, 0.998769, 0.998943, 0.999097,
])
GOLDEN_WIDE = np.array([
    0.503803, 0.512222, 0.521131, 0.530559, 0.540531, 0.551063, 0.562163, 0.573829,
    0.586048, 0.598798, 0.612046, 0.625746, 0.639845, 0.654281, 0.668984, 0.683880,
    0.698888, 0.713930, 0.728924, 0.743792,
])
GOLDEN_ATOL = 1e-5


def report(number, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, detail


def test_criterion_1_ideal_metal_limit():
    ideal = IdealMetal()
    worst, slowest = 0.0, 0.0
    for d in (70e-9, 100e-9, 200e-9, 400e-9):
        start = time.perf_counter()
        res = lifshitz_sphere_plate(ForceQuery(Geometry(R, d), ideal, ideal))
        slowest = max(slowest, time.perf_counter() - start)
        worst = max(worst, abs(res.force / ideal_sphere_plate(R, d) - 1))
    report(1, worst < 5e-3 and slowest < 10,
           f"ideal-metal limit, max rel dev {worst:.2e} (< 5e-3), slowest point {slowest:.2f} s (< 10 s)")


def test_criterion_2_pressure():
    p = ideal_plate_pressure(100e-9)
    report(2, abs(p - 13.0) <= 0.1 and 1 <= p <= 100,
           f"ideal plate pressure at 100 nm = {p:.3f} N/m^2 (13.0 +- 0.1, order 10)")


def test_criterion_3_kk_oracle():
    omega = np.geomspace(1e11, 1e19, 2000)
    table = AbsorptionTable(omega, drude_eps_imag(omega), low_tail="drude", high_tail=3.0)
    xi = np.geomspace(1e13, 1e17, 100)
    start = time.perf_counter()
    eps = eps_imag_axis_kk(table, xi)
    elapsed = time.perf_counter() - start
    worst = float(np.max(np.abs(eps / eps_imag_axis_drude(GOLD_DRUDE, xi) - 1)))
    report(3, worst < 1e-3 and elapsed < 5,
           f"KK vs analytic Drude, max rel dev {worst:.2e} (< 1e-3), {elapsed:.2f} s (< 5 s)")


def test_criterion_4_window_ordering():
    gold = Drude(GOLD_DRUDE)
    narrow_w = TransparencyWindow(0.2e-6, 2.5e-6)
    wide_w = TransparencyWindow(1e-6, 200e-6)
    narrow = np.array([force_ratio_windowed(gold, narrow_w, Geometry(R, d)) for d in RATIO_SEPARATIONS])
    wide = np.array([force_ratio_windowed(gold, wide_w, Geometry(R, d)) for d in RATIO_SEPARATIONS])
    ordered = bool(np.all(narrow > wide))
    bounded = bool(np.all((narrow > 0) & (narrow < 1) & (wide > 0) & (wide < 1)))
    high = bool(np.all(narrow > 0.8))
    golden = max(np.max(np.abs(narrow - GOLDEN_NARROW)), np.max(np.abs(wide - GOLDEN_WIDE)))
    report(4, ordered and bounded and high and golden <= GOLDEN_ATOL,
           f"window ordering narrow>wide={ordered}, in (0,1)={bounded}, narrow>0.8={high} "
           f"(min {narrow.min():.4f}), golden dev {golden:.1e} (<= {GOLDEN_ATOL:g})")


def test_criterion_5_calibration_round_trip():
    truth = GroundTruth(k=1e9, d0=500e-9, v0=0.025, sphere_radius=R,
                        force_curve=lambda d: ideal_sphere_plate(R, d))
    plan = ScanPlan(np.linspace(100e-9, 430e-9, 10), np.linspace(-0.3, 0.3, 11))
    start = time.perf_counter()
    res = run_pipeline(truth, plan)
    elapsed = time.perf_counter() - start
    devs = [abs(res.k / truth.k - 1), abs(res.d0 / truth.d0 - 1), abs(res.v0 / truth.v0 - 1)]
    devs += [abs(p.force / ideal_sphere_plate(R, truth.d0 - p.d_pz) - 1) for p in res.casimir_points]
    worst = max(devs)
    report(5, worst <= 1e-6 and elapsed < 5,
           f"noiseless round trip, max rel dev {worst:.2e} (<= 1e-6), {elapsed:.2f} s (< 5 s)")


def test_criterion_6_coverage():
    truth = GroundTruth(k=1e9, d0=500e-9, v0=0.025, sphere_radius=R,
                        force_curve=lambda d: ideal_sphere_plate(R, d))
    dpz = np.linspace(100e-9, 430e-9, 10)
    vbias = np.linspace(-0.3, 0.3, 11)
    hits = total = 0
    start = time.perf_counter()
    for seed in range(200):
        res = run_pipeline(truth, ScanPlan(dpz, vbias, noise_sigma=0.5e-3, rng_seed=seed))
        for p in res.casimir_points:
            true_f = ideal_sphere_plate(R, truth.d0 - p.d_pz)
            hits += abs(p.force - true_f) <= p.sigma_force
            total += 1
    elapsed = time.perf_counter() - start
    coverage = hits / total
    report(6, abs(coverage - 0.68) <= 0.07 and elapsed < 120,
           f"1-sigma coverage {coverage:.3f} over {total} points (0.68 +- 0.07), {elapsed:.1f} s (< 120 s)")


def test_criterion_7_grid_oracle():
    gold = Drude(GOLD_DRUDE)
    query = ForceQuery(Geometry(R, 100e-9), gold, gold)
    adaptive = lifshitz_sphere_plate(query).force
    grid = lifshitz_sphere_plate_grid(query, n=400)
    dev = abs(adaptive / grid - 1)
    report(7, dev < 1e-2, f"adaptive vs 400x400 grid on gold at 100 nm, rel dev {dev:.2e} (< 1e-2)")


@pytest.mark.parametrize("argv", [
    ["sweep", "--sphere", "gold_drude", "--plate", "gold_drude", "--points", "8"],
    ["ratio", "--window-min-um", "0.2", "--window-max-um", "2.5", "--points", "5"],
    ["calibrate-sim", "--example", "--seed", "3"],
], ids=["sweep", "ratio", "calibrate-sim"])
def test_criterion_8_determinism(capsys, argv):
    bodies = []
    for _ in range(2):
        code = main(argv)
        bodies.append((code, capsys.readouterr().out))
    ok = bodies[0] == bodies[1] and bodies[0][0] == 0 and bodies[0][1]
    with capsys.disabled():
        report(8, bool(ok), f"byte-identical data bodies for `{argv[0]}` across two runs")
