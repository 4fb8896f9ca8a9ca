import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from macu.classic import RankError, fcls, pseudoinverse, vca
from macu.metrics import spectral_angle
from macu.simdata import lmm_mix, sample_dirichlet_abundances, synth_endmembers


def simplex_grid(P, step):
    n = int(round(1 / step))
    for c in itertools.product(range(n + 1), repeat=P - 1):
        if sum(c) <= n:
            yield np.array(list(c) + [n - sum(c)]) * step


# ---------------------------------------------------------------- pseudoinverse


def test_pinv_matches_numpy():
    M = synth_endmembers(40, 4, 0)
    np.testing.assert_allclose(pseudoinverse(M), np.linalg.pinv(M), rtol=1e-8, atol=1e-10)


def test_pinv_is_left_inverse():
    M = synth_endmembers(40, 3, 1)
    np.testing.assert_allclose(pseudoinverse(M) @ M, np.eye(3), atol=1e-10)


def test_pinv_rank_deficient():
    M = synth_endmembers(20, 2, 0)
    with pytest.raises(RankError):
        pseudoinverse(np.hstack([M, M[:, :1]]))


# ---------------------------------------------------------------- FCLS


def test_fcls_recovers_noiseless_abundances():
    M = synth_endmembers(50, 3, 0)
    A = sample_dirichlet_abundances(30, 3, seed=0)
    np.testing.assert_allclose(fcls(lmm_mix(M, A), M), A, atol=1e-6)


def test_fcls_output_on_simplex():
    M = synth_endmembers(30, 4, 2)
    Y = np.random.default_rng(0).uniform(0, 1, (50, 30))
    A = fcls(Y, M)
    assert np.all(A >= 0)
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)


def test_fcls_beats_or_ties_grid_oracle():
    M = synth_endmembers(30, 3, 5)
    r = np.random.default_rng(5)
    Y = lmm_mix(M, sample_dirichlet_abundances(20, 3, seed=5)) + 0.05 * r.standard_normal((20, 30))
    A = fcls(Y, M)
    G = np.array(list(simplex_grid(3, 0.01)))
    for y, a in zip(Y, A):
        grid_best = np.min(np.sum((G @ M.T - y) ** 2, axis=1))
        assert np.sum((M @ a - y) ** 2) <= grid_best + 1e-9


def test_fcls_band_mismatch():
    with pytest.raises(ValueError):
        fcls(np.ones((2, 5)), np.ones((4, 2)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_fcls_simplex_property(seed):
    r = np.random.default_rng(seed)
    M = r.uniform(0.05, 1, (12, 3))
    A = fcls(r.uniform(-0.5, 1.5, (5, 12)), M)
    assert np.all(A >= 0)
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-9)


# ---------------------------------------------------------------- VCA


@pytest.mark.parametrize("P", [2, 3, 4])
def test_vca_finds_planted_vertices(P):
    M = synth_endmembers(60, P, P)
    A = sample_dirichlet_abundances(500, P, seed=P)
    A[:P] = np.eye(P)
    res = vca(lmm_mix(M, A), P, seed=0)
    assert sorted(res.indices.tolist()) == list(range(P))
    for k in range(P):
        assert min(spectral_angle(res.endmembers[:, j], M[:, k]) for j in range(P)) < 1e-9


def test_vca_single_endmember():
    M = synth_endmembers(20, 2, 0)
    A = np.linspace(0, 1, 11)[:, None] * np.array([[1.0, -1.0]]) + np.array([[0.0, 1.0]])
    res = vca(lmm_mix(M, A), 1)
    assert res.endmembers.shape == (20, 1)


def test_vca_deterministic():
    Y = lmm_mix(synth_endmembers(30, 3, 0), sample_dirichlet_abundances(100, 3, seed=0))
    assert np.array_equal(vca(Y, 3, 4).indices, vca(Y, 3, 4).indices)


def test_vca_degenerate_cube():
    with pytest.raises(RankError):
        vca(np.ones((50, 10)), 3)
