"""Acceptance criteria, each run at its pinned tolerance.

Every test prints one ``ACCEPT PASS|FAIL <criterion>`` line (shown even when
output is captured) before asserting. Full studies run here, so this module
dominates the suite's runtime.
"""
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from intrkpm.properties import run_properties
from intrkpm.solve import fit_rates
from intrkpm.studies import load_config, run_study

CONFIGS = Path(__file__).parent.parent / "configs"


@lru_cache(maxsize=None)
def study(name: str):
    return run_study(load_config(CONFIGS / f"{name}.cfg"))


def within(x, target, tol):
    return bool(np.isfinite(x) and abs(x - target) <= tol)


@pytest.fixture
def verdict(capsys):
    def emit(label, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPT {'PASS' if ok else 'FAIL'} {label}: {detail}")
        return ok
    return emit


def test_c1_poisson_rates(verdict):
    r1, r2 = study("poisson_n1"), study("poisson_n2")
    secs = max(sum(r.seconds for r in rep.rows) for rep in (r1, r2))
    parts = {
        "n1 L2": within(r1.rates["L2"], 2.0, 0.25),
        "n1 H1": within(r1.rates["H1"], 1.0, 0.25),
        "n2 L2": within(r2.rates["L2"], 3.0, 0.3),
        "n2 H1": within(r2.rates["H1"], 2.0, 0.3),
        "runtime": secs <= 120.0,
    }
    ok = verdict("C1 poisson rates", all(parts.values()),
                 f"n1 L2={r1.rates['L2']:.3f} H1={r1.rates['H1']:.3f}; "
                 f"n2 L2={r2.rates['L2']:.3f} H1={r2.rates['H1']:.3f}; slowest series {secs:.1f}s")
    assert ok, parts


def test_c2_classic_parity(verdict):
    it, cl = study("poisson_n2"), study("poisson_classic_n2")
    ratio = it.series("L2") / cl.series("L2")
    dr = abs(it.rates["L2"] - cl.rates["L2"])
    ok = bool(np.all((ratio <= 2.0) & (ratio >= 0.5)) and dr <= 0.2)
    ok = verdict("C2 int vs classic parity", ok,
                 f"error ratios {np.array2string(ratio, precision=3)}; rates int "
                 f"{it.rates['L2']:.3f} classic {cl.rates['L2']:.3f}")
    assert ok


def test_c3_foreground_refinement(verdict):
    k1, k2 = study("poisson_n1"), study("poisson_n1_pref")
    gain = 1.0 - k2.rows[-1].L2 / k1.rows[-1].L2
    dr = abs(k2.rates["L2"] - k1.rates["L2"])
    ok = verdict("C3 p-refined foreground", gain >= 0.2 and dr <= 0.2,
                 f"finest L2 reduction {100 * gain:.1f}%; rates k1 {k1.rates['L2']:.3f} "
                 f"k2 {k2.rates['L2']:.3f}")
    assert ok


def test_c4_biharmonic(verdict):
    rep = study("biharmonic_n2")
    r = rep.rates
    parts = {"L2": within(r["L2"], 3.0, 0.4), "H1": within(r["H1"], 2.0, 0.4),
             "H2": within(r["H2"], 1.0, 0.4)}
    ok = verdict("C4 biharmonic n2", all(parts.values()),
                 f"L2={r['L2']:.3f} H1={r['H1']:.3f} H2={r['H2']:.3f}")
    assert ok, parts


def test_c4_biharmonic_control(verdict):
    r = study("biharmonic_n1_control").rates["L2"]
    ok = verdict("C4 biharmonic n1 control", r < 0.5, f"L2 rate {r:.3f} (< 0.5 required)")
    assert ok


def test_c5_plate_hole(verdict):
    d1, d2, s2 = study("plate_hole_n1"), study("plate_hole_n2"), study("plate_hole_n2_single")
    e1, e2, es = d1.rates["energy"], d2.rates["energy"], s2.rates["energy"]
    parts = {"n1": e1 >= 0.8, "n2": e2 >= 1.7, "single": e2 - es >= 0.5}
    ok = verdict("C5 plate with hole", all(parts.values()),
                 f"energy rates n1 {e1:.3f}, n2 double {e2:.3f}, n2 single {es:.3f}")
    assert ok, parts


def test_c6_three_material(verdict):
    e1, p1, e2 = study("three_material_n1"), study("three_material_n1_plain"), study("three_material_n2")
    parts = {"enriched n1": within(e1.rates["L2"], 2.0, 0.3),
             "plain n1": p1.rates["L2"] <= 1.5,
             "enriched n2": within(e2.last_rate("L2"), 3.0, 0.4)}
    ok = verdict("C6 three-material heat", all(parts.values()),
                 f"enriched n1 {e1.rates['L2']:.3f}, plain n1 {p1.rates['L2']:.3f}, "
                 f"enriched n2 last interval {e2.last_rate('L2'):.3f}")
    assert ok, parts


def test_c7_inclusion(verdict):
    r1, r2 = study("inclusion_n1"), study("inclusion_n2")
    band = max(float(np.max(rep.series("jump") / rep.series("L2"))) for rep in (r1, r2))
    parts = {"n1": within(r1.rates["L2"], 2.0, 0.3), "n2": within(r2.rates["L2"], 3.0, 0.4),
             "continuity": band <= 5.0}
    ok = verdict("C7 inclusion eigenstrain", all(parts.values()),
                 f"L2 rates n1 {r1.rates['L2']:.3f}, n2 {r2.rates['L2']:.3f}; max jump/L2 {band:.3f}")
    assert ok, parts


def test_c8_property_suites(verdict):
    import time

    t0 = time.perf_counter()
    checks = run_properties("all")
    secs = time.perf_counter() - t0
    failed = [c.line() for c in checks if not c.passed]
    ok = verdict("C8 property suites", not failed and secs < 30.0,
                 f"{len(checks) - len(failed)}/{len(checks)} checks in {secs:.1f}s")
    assert ok, failed


def test_rate_helper_consistent_with_reports():
    rep = study("poisson_n1")
    h = [r.h for r in rep.rows]
    assert fit_rates(h, rep.series("L2"))[0] == rep.rates["L2"]
