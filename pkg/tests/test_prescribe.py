import json
import math

import numpy as np
import pytest

from conformal_spectra.bounds import dodziuk_interval
from conformal_spectra.prescribe import (
    ModelSettings, ParameterPoint, PrescriptionError, PrescriptionTarget, bisection_oracle,
    load_targets, phi_map, prescribe,
)

SINGLE = PrescriptionTarget(5, ((1.0,),), 1.0)
PAIR = PrescriptionTarget(5, ((1.0, 2.0),), 1.0)


def _tuned(target, settings=ModelSettings()):
    return ParameterPoint.tuned(target.n, target.V0, target.nu, settings)


@pytest.mark.parametrize("kw", [dict(n=5, nu=((1.0, 1.0),), V0=1.0),
                                dict(n=5, nu=((2.0, 1.0),), V0=1.0),
                                dict(n=5, nu=((1.0,), (2.0,)), V0=1.0),
                                dict(n=4, nu=((1.0,),), V0=1.0),
                                dict(n=5, nu=((1.0,),), V0=-1.0),
                                dict(n=5, nu=((-1.0,),), V0=1.0),
                                dict(n=5, nu=((1.0, 2.0),), V0=1.0, delta=0.6),
                                dict(n=5, nu=((1.0,),), V0=0.1, delta=0.2)])
def test_invalid_targets_rejected(kw):
    with pytest.raises(PrescriptionError):
        PrescriptionTarget(**kw)


def test_default_margin_respects_constraints():
    t = PrescriptionTarget(7, ((1.0, 1.5), (3.0,)), 2.0)
    assert 0 < t.delta < t.min_gap / 2 and t.delta < t.V0
    assert t.k == 2 and t.max_nu == 3.0


def test_targets_json(tmp_path):
    f = tmp_path / "targets.json"
    f.write_text(json.dumps({"n": 5, "N": 2, "nu": [[1.0, 2.0]], "V0": 1.0}))
    assert load_targets(f) == PAIR
    f.write_text(json.dumps({"n": 5, "nu": [1.0, 2.0], "V0": 1.0}))
    assert load_targets(f).nu == ((1.0, 2.0),)
    f.write_text(json.dumps({"n": 5, "N": 3, "nu": [[1.0, 2.0]], "V0": 1.0}))
    with pytest.raises(PrescriptionError):
        load_targets(f)
    f.write_text(json.dumps({"n": 5, "V0": 1.0}))
    with pytest.raises(PrescriptionError):
        load_targets(f)


@pytest.mark.parametrize("s", [0.5, 1.3, 2.0])
def test_phi_homothety_equivariance(s):
    p = _tuned(PAIR)
    a = phi_map(PAIR, p, 0.1)
    b = phi_map(PAIR, p.scaled(s), 0.1)
    assert b.volume == pytest.approx(a.volume * s ** 5, rel=1e-12)
    for q in a.mu:
        assert np.allclose(b.mu[q], a.mu[q] / s ** 2, rtol=1e-10)


def test_phi_volume_is_requested_volume():
    p = _tuned(PAIR)
    assert phi_map(PAIR, p, 0.1).volume == pytest.approx(1.0, rel=1e-12)


def test_phi_single_target_inside_smoothing_interval():
    eps = 0.2
    res = phi_map(SINGLE, _tuned(SINGLE), eps)
    lo, hi = dodziuk_interval(1.0, math.exp(eps), 5)
    assert lo <= res.mu[1][0] <= hi


def test_phi_is_deterministic():
    p = _tuned(PAIR)
    a, b = phi_map(PAIR, p, 0.1), phi_map(PAIR, p, 0.1, threads=2)
    for q in a.mu:
        assert np.array_equal(a.mu[q], b.mu[q])


def test_identity_gap_shrinks_with_eps():
    gaps = []
    for eps in (0.2, 0.1, 0.05):
        res = phi_map(PAIR, _tuned(PAIR), eps)
        gaps.append(max(abs(a - t) / t for a, t in zip(res.mu[1][:2], PAIR.nu[0])))
    assert gaps[0] > gaps[1] > gaps[2]


def test_volume_too_small_rejected():
    p = ParameterPoint.tuned(5, 1e-6, ((1.0,),), ModelSettings())
    with pytest.raises(PrescriptionError):
        phi_map(SINGLE, p, 0.1)


def test_single_target_matches_oracle():
    res = prescribe(SINGLE, 1e-6, (0.2, 0.1, 0.05))
    assert res.converged
    c, rho, phi = bisection_oracle(SINGLE, res.eps)
    assert abs(res.point.c[0][0] - c) / c < 1e-3
    assert phi.mu[1][0] == pytest.approx(1.0, rel=1e-6)
    assert phi.volume == pytest.approx(1.0, rel=1e-9)


def test_budget_exhaustion_flags_failure():
    res = prescribe(PAIR, 1e-12, (0.2, 0.1), max_evaluations=4)
    assert not res.converged and res.evaluations == 4


def test_schedule_validated():
    with pytest.raises(PrescriptionError):
        prescribe(SINGLE, 1e-2, (0.05, 0.1))
    with pytest.raises(PrescriptionError):
        prescribe(SINGLE, 0.0)


def test_oracle_single_target_only():
    with pytest.raises(PrescriptionError):
        bisection_oracle(PAIR, 0.1)


def test_two_degree_target_n7():
    t = PrescriptionTarget(7, ((1.0,), (1.5,)), 10.0)
    res = prescribe(t, 1e-2, (0.2, 0.1))
    assert res.converged, res.max_error
    assert res.achieved.mu[3][0] > 1.5
