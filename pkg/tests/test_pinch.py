import numpy as np
import pytest

from conformal_spectra.complex import ComplexError, betti_numbers
from conformal_spectra.pinch import (
    PinchParams, default_profiles, degree_cap, omega_surrogate, pinch_sweep, pinch_volume,
    rayleigh_bound,
)

ETAS = [1.0, 1e-1, 1e-2, 1e-3, 1e-4]


def test_degree_cap():
    assert [degree_cap(n) for n in (5, 6, 7, 8, 9)] == [1, 1, 2, 2, 3]


def test_no_pinch_profile_is_one():
    r = np.linspace(0, 1, 101)
    assert np.all(PinchParams(5, 1, 1.0).h(r) == 1.0)


def test_piecewise_values():
    P = PinchParams(5, 1, 0.1)
    assert P.h(0.6) == pytest.approx(0.1, abs=1e-15)
    assert P.f(0.3) == 1.0
    assert P.h(0.2) == 1.0 and P.f(0.8) == 0.0


def test_joins_monotone():
    prof = default_profiles(PinchParams(7, 2, 1e-3), 10_000)
    assert np.all(np.diff(prof.h) <= 0) and np.all(np.diff(prof.f) <= 0)


def test_bound_without_pinch_is_finite():
    b = rayleigh_bound(PinchParams(5, 1, 1.0))
    assert np.isfinite(b) and b > 0


def test_bound_exponents():
    a, b = rayleigh_bound(PinchParams(5, 1, 0.3)), rayleigh_bound(PinchParams(5, 1, 0.03))
    assert a / b == pytest.approx(10.0, rel=1e-13)
    base = rayleigh_bound(PinchParams(6, 1, 1.0))
    assert rayleigh_bound(PinchParams(6, 1, 0.01)) == pytest.approx(1e-4 * base, rel=1e-12)


def test_volume_normalization_and_monotonicity():
    assert pinch_volume(PinchParams(5, 1, 1.0)) == pytest.approx(1.0, rel=1e-10)
    vols = [pinch_volume(PinchParams(7, 2, e)) for e in ETAS]
    assert np.all(np.diff(vols) < 0)
    # limit: the part of the ball that stays unpinched
    assert vols[-1] > 0


def test_sweep_first_value_decreases_and_second_stays():
    rep = pinch_sweep(PinchParams(5, 1), ETAS)
    mu1, mu2 = rep.column("mu1"), rep.column("mu2")
    assert np.all(np.diff(mu1) < 0)
    assert mu2.min() >= 0.5 * mu2[0]
    assert np.all(mu1 <= rep.column("rayleigh_bound"))
    assert np.all(rep.column("mu2") / mu1 > 0) and (mu2 / mu1)[-1] > 1e3


def test_no_pinch_row_is_unpinched_value():
    from conformal_spectra.radial import pinch_operator, radial_spectrum
    P = PinchParams(5, 1, 1.0)
    rep = pinch_sweep(P, [1.0])
    assert rep.rows[0].mu1 == radial_spectrum(pinch_operator(P), 2).values[0]


def test_normalized_values_invariant_under_homothety():
    # scaling lengths by s scales V by s^n and eigenvalues by s^-2
    s = 1.7
    a = pinch_sweep(PinchParams(5, 1, R=1.0, V=1.0), [0.1]).rows[0]
    b = pinch_sweep(PinchParams(5, 1, R=s, V=s ** 5), [0.1]).rows[0]
    assert b.mu1 == pytest.approx(a.mu1 / s ** 2, rel=1e-9)
    assert b.volume == pytest.approx(a.volume * s ** 5, rel=1e-9)
    assert b.mu1_normalized == pytest.approx(a.mu1_normalized, rel=1e-9)


def test_cross_check_against_complex():
    rep = pinch_sweep(PinchParams(5, 1), [1.0, 0.1], cross_check=True)
    for r in rep.rows:
        assert 0.5 < r.complex_mu1 / r.mu1 < 2.0


def test_cross_check_lower_degrees():
    rep = pinch_sweep(PinchParams(7, 2, resolution=500), [1.0, 0.1], cross_check=True)
    assert rep.complex_degrees == (1,)
    vals = [r.complex_other[1] for r in rep.rows]
    assert vals[1] >= 0.5 * vals[0]


def test_surrogate_topology():
    K, _ = omega_surrogate(PinchParams(5, 1), relative=False)
    assert betti_numbers(K)[:2] == [1, 1]
    K2, _ = omega_surrogate(PinchParams(7, 2), relative=False)
    assert betti_numbers(K2)[:3] == [1, 0, 1]


def test_witness_reported():
    rep = pinch_sweep(PinchParams(5, 1, resolution=500), ETAS)
    w = rep.witness()
    assert w.shape == (5,) and np.all(np.isfinite(w)) and np.all(w > 0)


def test_csv_shape():
    rep = pinch_sweep(PinchParams(7, 2, resolution=300), [1.0, 0.1], cross_check=True)
    lines = rep.to_csv().strip().splitlines()
    assert lines[0].split(",") == rep.header()
    assert all(len(l.split(",")) == len(rep.header()) for l in lines)
    assert "mu1_1" in rep.header() and "mu3_1" in rep.header()


@pytest.mark.parametrize("kw", [dict(n=4, p=1), dict(n=5, p=2), dict(n=7, p=0),
                                dict(n=5, p=1, eta=0.0), dict(n=5, p=1, eta=1.5),
                                dict(n=5, p=1, R=-1)])
def test_invalid_params(kw):
    with pytest.raises(ComplexError):
        PinchParams(**kw)


def test_eta_list_must_decrease():
    with pytest.raises(ComplexError):
        pinch_sweep(PinchParams(5, 1), [0.1, 1.0])
