import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conformal_spectra.complex import (
    ComplexError, betti_numbers, boundary_matrix, build_complex, cycle, dump_complex,
    integer_rank, load_complex, path, product, simplex_boundary,
)


def test_path_counts_and_signs():
    K = path(3)
    assert K.counts == (3, 2)
    B = boundary_matrix(K, 1).toarray()
    assert B.shape == (3, 2)
    assert set(np.unique(B)) <= {-1, 0, 1}
    assert np.all(np.abs(B).sum(axis=0) == 2)
    assert np.all(B.sum(axis=0) == 0)


def test_torus_counts():
    assert product(cycle(4), cycle(4)).counts == (16, 32, 16)


def test_simplex_boundary_binomial_counts():
    assert simplex_boundary(4).counts == (5, 10, 10, 5)


def test_cycle_incidence_is_circulant():
    B = boundary_matrix(cycle(4), 1).toarray()
    assert B.shape == (4, 4)
    assert np.all(np.abs(B).sum(axis=0) == 2) and np.all(np.abs(B).sum(axis=1) == 2)
    assert integer_rank(B) == 3


@pytest.mark.parametrize("spec", ["cycle:4*cycle:4", "simplex:4", "cycle:3*cycle:3*cycle:3",
                                  "cycle:5*path:4", "simplex:3*path:3"])
def test_boundary_of_boundary_is_zero_exactly(spec):
    K = build_complex(spec)
    for k in range(2, K.dimension + 1):
        dd = (boundary_matrix(K, k - 1) @ boundary_matrix(K, k)).toarray()
        assert dd.dtype.kind == "i"
        assert not dd.any()


@pytest.mark.parametrize("spec,betti", [
    ("cycle:8", [1, 1]),
    ("simplex:3", [1, 0, 1]),
    ("cycle:4*cycle:4", [1, 2, 1]),
    ("simplex:5", [1, 0, 0, 0, 1]),
    ("path:6", [1, 0]),
    ("cycle:3*cycle:3*cycle:3", [1, 3, 3, 1]),
])
def test_betti_numbers(spec, betti):
    assert betti_numbers(build_complex(spec)) == betti


def test_weights_positive():
    K = build_complex("cycle:5*path:4")
    for k in range(K.dimension + 1):
        assert np.all(K.volumes[k] > 0) and np.all(K.dual_volumes[k] > 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_betti_invariant_under_relabeling_and_orientation(seed):
    rng = np.random.default_rng(seed)
    K = product(cycle(3), cycle(4))
    ref = betti_numbers(K)
    Bs = [boundary_matrix(K, k).toarray() for k in range(1, K.dimension + 1)]
    perms = [rng.permutation(K.n_cells(k)) for k in range(K.dimension + 1)]
    signs = [rng.choice([-1, 1], K.n_cells(k)) for k in range(K.dimension + 1)]
    ranks = []
    for k, B in enumerate(Bs, 1):
        C = (signs[k - 1][:, None] * B * signs[k][None, :])[np.ix_(perms[k - 1], perms[k])]
        ranks.append(integer_rank(C))
    counts = K.counts
    ranks = [0] + ranks + [0]
    betti = [counts[k] - ranks[k] - ranks[k + 1] for k in range(K.dimension + 1)]
    assert betti == ref


def test_integer_rank_matches_float_rank_on_random_matrices():
    rng = np.random.default_rng(1)
    for _ in range(20):
        A = rng.integers(-2, 3, size=(7, 9))
        A[:, 4] = A[:, 0] + A[:, 1]
        assert integer_rank(A) == np.linalg.matrix_rank(A.astype(float))


def test_relative_complex_drops_boundary_cells():
    K = path(5)
    R = K.relative(lambda x: np.isclose(x[:, 0], 1.0))
    assert R.counts == (4, 4)


def test_restrict_keeps_subcomplex():
    K = product(cycle(4), path(9, 2.0))
    sub = K.restrict(K.coords[:, -1] <= 1.0 + 1e-12)
    assert sub.counts == (20, 36, 16)
    assert sub.name.endswith("|sub")


def test_round_trip_through_text_format(tmp_path):
    K = build_complex("cycle:3*cycle:4")
    f = tmp_path / "torus.txt"
    dump_complex(K, f)
    L = load_complex(f)
    assert L.counts == K.counts
    assert betti_numbers(L) == betti_numbers(K)
    for k in range(K.dimension + 1):
        assert np.allclose(L.volumes[k], K.volumes[k])


def test_imported_spec(tmp_path):
    f = tmp_path / "tri.txt"
    f.write_text("0 a : : 1\n0 b : : 1\n0 c : : 1\n"
                 "1 ab : -a +b : 1\n1 bc : -b +c : 1\n1 ca : -c +a : 1\n")
    K = build_complex(f"file:{f}")
    assert betti_numbers(K) == [1, 1]


@pytest.mark.parametrize("text", ["0 a : : 1\n1 e : a b : 1\n", "0 a : : 1\n1 e : +a +z : 1\n",
                                  "garbage\n", "", "0 a : : -1\n"])
def test_import_rejects_malformed(tmp_path, text):
    f = tmp_path / "bad.txt"
    f.write_text(text)
    with pytest.raises(ComplexError):
        load_complex(f)


@pytest.mark.parametrize("spec", ["bogus:3", "cycle", "cycle:x", "torus:4"])
def test_bad_specs_rejected(spec):
    with pytest.raises(ComplexError):
        build_complex(spec)
