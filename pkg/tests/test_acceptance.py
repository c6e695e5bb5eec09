"""Acceptance gate: one recorded PASS/FAIL line per criterion (see the summary)."""

import json
import time

import numpy as np
import pytest

from conformal_spectra.bounds import (
    CoverData, GlueData, dodziuk_check, dodziuk_interval, gluing_bound, mcgowan_bound,
)
from conformal_spectra.cli import main
from conformal_spectra.complex import build_complex, cycle
from conformal_spectra.eigen import coexact_spectrum, full_spectrum_report
from conformal_spectra.handles import handle_sweep
from conformal_spectra.hodge import ConformalProfile, conformal_volume
from conformal_spectra.pinch import PinchParams, pinch_sweep
from conformal_spectra.prescribe import PrescriptionTarget, bisection_oracle, prescribe

from corpus import split_instances

PINCH_CASES = [(5, 1), (7, 1), (7, 2), (8, 2)]
SWEEP = [1.0, 1e-1, 1e-2, 1e-3, 1e-4]
_sweeps: dict = {}


def _sweep(n, p):
    if (n, p) not in _sweeps:
        t0 = time.perf_counter()
        rep = pinch_sweep(PinchParams(n, p, resolution=2000), SWEEP, cross_check=True)
        _sweeps[(n, p)] = (rep, time.perf_counter() - t0)
    return _sweeps[(n, p)]


# 1 ---------------------------------------------------------------------------

@pytest.mark.parametrize("n,p", PINCH_CASES)
def test_criterion_1_pinch_scaling(record, n, p):
    rep, seconds = _sweep(n, p)
    tail = rep.rows[1:]
    slope = rep.slope(last_decades=3)
    expected = n - 2 * p - 2
    rel = abs(slope - expected) / expected
    below = all(r.mu1 <= r.rayleigh_bound for r in tail)
    ok = rel <= 0.15 and below and seconds <= 60 and all(r.status == "ok" for r in rep.rows)
    record(1, ok, f"(n,p)=({n},{p}) slope {slope:.3f} vs {expected} ({rel:.1%}), "
                  f"under bound {below}, {seconds:.2f}s")
    assert ok


# 2 ---------------------------------------------------------------------------

@pytest.mark.parametrize("n,p", PINCH_CASES)
def test_criterion_2_single_small_eigenvalue(record, n, p):
    rep, _ = _sweep(n, p)
    first, rest = rep.rows[0], rep.rows[1:]
    ratios = {"mu2": min(r.mu2 for r in rest) / first.mu2}
    for q in rep.other_degrees:
        ratios[f"mu{q}_1"] = min(r.other[q] for r in rest) / first.other[q]
    for q in rep.complex_degrees:
        vals = [r.complex_other[q] for r in rest if q in r.complex_other]
        ratios[f"complex mu{q}_1"] = min(vals) / first.complex_other[q]
    worst = min(ratios, key=ratios.get)
    ok = all(v >= 0.5 for v in ratios.values())
    record(2, ok, f"(n,p)=({n},{p}) worst {worst} at {ratios[worst]:.3f} of its eta=1 value")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_criterion_3_hodge_identities(record):
    specs = ["cycle:6*cycle:6", "simplex:4", "cycle:3*cycle:3*cycle:3", "cycle:5*path:6",
             "simplex:3*path:3", "cycle:4*cycle:7", "simplex:5", "cycle:9", "path:12*path:5",
             "cycle:3*cycle:4*path:3", "simplex:3*cycle:4", "cycle:5*cycle:5"]
    rng = np.random.default_rng(2024)
    worst, betti_ok, count = 0.0, True, 0
    for spec in specs:
        K = build_complex(spec)
        assert sum(K.counts) <= 500, spec
        h = ConformalProfile(rng.uniform(0.5, 2.0, K.n_cells(0)))
        rep = full_spectrum_report(K, h, range(K.dimension + 1), 3,
                                   ambient_dim=K.dimension + int(rng.integers(0, 3)))
        worst = max(worst, max(rep.union_error.values()))
        betti_ok &= rep.harmonic_matches_betti
        count += 1
    ok = count >= 10 and worst <= 1e-8 and betti_ok
    record(3, ok, f"{count} instances, worst union error {worst:.2e}, harmonic = Betti {betti_ok}")
    assert ok


# 4 ---------------------------------------------------------------------------

def test_criterion_4_homothety(record):
    rng = np.random.default_rng(7)
    worst_eig, worst_vol = 0.0, 0.0
    for spec, n in [("cycle:5*cycle:6", 2), ("simplex:4", 5), ("cycle:3*cycle:4*path:3", 4)]:
        K = build_complex(spec)
        h = ConformalProfile(rng.uniform(0.5, 2.0, K.n_cells(0)))
        for c in (0.1, 0.7, 3.0, 25.0):
            hc = h.scaled(c)
            for p in range(K.dimension):
                a = coexact_spectrum(K, h, p, ambient_dim=n).values
                b = coexact_spectrum(K, hc, p, ambient_dim=n).values
                worst_eig = max(worst_eig, np.max(np.abs(b * c ** 2 / a - 1)))
            v = conformal_volume(K, hc, n) / conformal_volume(K, h, n)
            worst_vol = max(worst_vol, abs(v / c ** n - 1))
    ok = worst_eig <= 1e-12 and worst_vol <= 1e-12
    record(4, ok, f"eigenvalue ratio error {worst_eig:.1e}, volume ratio error {worst_vol:.1e}")
    assert ok


# 5 ---------------------------------------------------------------------------

def test_criterion_5_dodziuk(record):
    t0 = time.perf_counter()
    chk = dodziuk_check(2.0, 4, 100, np.random.default_rng(5))
    seconds = time.perf_counter() - t0
    lo, hi = dodziuk_interval(1.0, 2.0, 4)
    ok = chk.violations == 0 and chk.trials == 100 and seconds <= 120
    record(5, ok, f"100 pairs, {chk.compared} ratios in [{chk.ratios_min:.3f}, "
                  f"{chk.ratios_max:.3f}] within [{lo:.1e}, {hi:.1e}], "
                  f"{chk.violations} violations, {seconds:.1f}s")
    assert ok


# 6 ---------------------------------------------------------------------------

def test_criterion_6_bounds(record):
    sound, n_inst = True, 0
    for _, true, data in split_instances():
        sound &= gluing_bound(data) <= true
        n_inst += 1
    single = mcgowan_bound(CoverData(1, (5.0,), {}, 1.0))
    pair = mcgowan_bound(CoverData(1, (1.0, 1.0), {(0, 1): (1.0, 0)}, 1.0))
    arithmetic = (single.denominator == 0.2 and single.bound == 5.0 and single.k_q == 1
                  and pair.denominator == 10.0 and pair.bound == 0.1 and pair.k_q == 1
                  and gluing_bound(GlueData(1, 1, 1, 0, 1)) == 1 / 66)
    rng = np.random.default_rng(11)
    monotone = True
    for _ in range(500):
        m1, m2, m12, vr = rng.uniform(0.01, 100, 4)
        c, f = rng.uniform(0, 100), rng.uniform(1.01, 5)
        g = gluing_bound(GlueData(m1, m2, m12, c, vr))
        monotone &= gluing_bound(GlueData(m1 * f, m2, m12, c, vr)) >= g
        monotone &= gluing_bound(GlueData(m1, m2, m12 * f, c, vr)) >= g
        monotone &= gluing_bound(GlueData(m1, m2, m12, c * f + 1e-3, vr)) <= g
        monotone &= gluing_bound(GlueData(m1, m2, m12, c, vr * f)) <= g
        b = mcgowan_bound(CoverData(1, (m1, m2), {(0, 1): (m12, 0)}, c)).bound
        monotone &= mcgowan_bound(CoverData(1, (m1 * f, m2), {(0, 1): (m12, 0)}, c)).bound >= b
        monotone &= mcgowan_bound(CoverData(1, (m1, m2), {(0, 1): (m12 * f, 0)}, c)).bound >= b
        monotone &= mcgowan_bound(CoverData(1, (m1, m2), {(0, 1): (m12, 0)}, c * f + 1e-3)).bound <= b
    ok = n_inst >= 5 and sound and arithmetic and monotone
    record(6, ok, f"{n_inst} splits sound {sound}, reference arithmetic exact {arithmetic}, "
                  f"monotone {monotone}")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_criterion_7_handles(record):
    t0 = time.perf_counter()
    rep = handle_sweep(cycle(16), cycle(16, 0.8), [0.1, 0.05, 0.02, 0.01], 4)
    seconds = time.perf_counter() - t0
    first, last = rep.deviation[0], rep.deviation[-1]
    ok = last <= 0.05 and last <= 0.5 * first and seconds <= 60
    record(7, ok, f"deviation {first:.3g} at eps=0.1 -> {last:.3g} at eps=0.01, {seconds:.2f}s")
    assert ok


# 8 ---------------------------------------------------------------------------

def test_criterion_8_prescription(record):
    target = PrescriptionTarget(5, ((1.0, 2.0),), 1.0)
    res = prescribe(target)
    top = float(res.achieved.mu[target.k + 1][0])
    ok_pair = (res.converged and res.max_error <= 1e-2 and top > 2.0
               and res.evaluations <= 200)
    record(8, ok_pair, f"N=2: max error {res.max_error:.2e} in {res.evaluations} evaluations, "
                       f"mu_(k+1),1 = {top:.3f}")
    single = PrescriptionTarget(5, ((1.0,),), 1.0)
    res1 = prescribe(single, 1e-6)
    c_oracle, _, _ = bisection_oracle(single, res1.eps)
    rel = abs(res1.point.c[0][0] - c_oracle) / c_oracle
    ok_single = res1.converged and rel <= 1e-3
    record(8, ok_single, f"single target: c = {res1.point.c[0][0]:.6f} vs oracle "
                         f"{c_oracle:.6f} ({rel:.1e})")
    assert ok_pair and ok_single


# 9 ---------------------------------------------------------------------------

def test_criterion_9_determinism(record, tmp_path):
    targets = tmp_path / "targets.json"
    targets.write_text(json.dumps({"n": 5, "nu": [[1.0, 2.0]], "V0": 1.0}))
    cover = tmp_path / "cover.json"
    cover.write_text(json.dumps({"degree": 1, "mu_domains": [2.0, 3.0], "overlap_width": 0.5,
                                 "intersections": [{"pair": [0, 1], "mu": 4.0,
                                                    "harmonic_dim": 1}]}))
    runs = {
        "spectrum": ["spectrum", "--complex", "cycle:4*cycle:5", "--p", "0,1,2",
                     "--profile", "random:0.5:2", "--seed", "3"],
        "pinch-sweep": ["pinch-sweep", "--n", "7", "--p", "2", "--eta-list", "1,0.1,0.01",
                        "--resolution", "2000", "--cross-check", "--threads", "2"],
        "dodziuk-check": ["dodziuk-check", "--tau", "2", "--n", "4", "--trials", "12",
                          "--seed", "8"],
        "handle-sweep": ["handle-sweep", "--left", "cycle:16", "--right", "cycle:16:0.8",
                         "--eps-list", "0.1,0.01"],
        "mcgowan": ["mcgowan", "--config", str(cover)],
        "prescribe": ["prescribe", "--targets", str(targets), "--threads", "2"],
    }
    same = {}
    for name, argv in runs.items():
        outs = []
        for rep in range(2):
            f = tmp_path / f"{name}-{rep}.out"
            assert main(argv + ["--out", str(f)]) == 0, name
            outs.append(f.read_bytes())
        same[name] = outs[0] == outs[1]
    ok = all(same.values())
    record(9, ok, "byte-identical reruns: " + ", ".join(f"{k} {v}" for k, v in same.items()))
    assert ok
