import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from macu import diffcore as dc
from macu.model import (
    VARIANTS,
    build_network,
    decode,
    decoder_input,
    decoder_widths,
    encode,
    encoder_widths,
    nonlinearity_report,
    omega_d,
    param_order,
)
from macu.simdata import synth_endmembers

L, P = 12, 3
M0 = synth_endmembers(L, P, 0)


def test_widths():
    assert encoder_widths(224, 3) == [224, 448, 112, 56, 12, 3, 3]
    assert decoder_widths(224, 3) == [675, 672, 224, 224, 224]
    assert encoder_widths(13, 3)[2:4] == [7, 4]


def test_param_order_matches_built_keys():
    for v in VARIANTS:
        theta = build_network(M0, v, seed=0)
        assert sorted(param_order(L, P, v)) == sorted(theta.params)
    assert "Q" not in param_order(L, P, "nfaec")


def test_initialization():
    theta = build_network(M0, "macu", seed=1)
    np.testing.assert_allclose(theta.Q @ M0, np.eye(P), atol=1e-10)
    np.testing.assert_array_equal(theta.alpha, np.ones(P))
    np.testing.assert_array_equal(theta.M, M0)
    W = theta.params["enc.W0"]
    assert np.abs(W).max() <= np.sqrt(6 / L)
    assert not np.any(theta.params["enc.b0"])
    assert "enc.b5" not in theta.params and "dec.b3" not in theta.params


def test_build_is_seeded():
    a, b = build_network(M0, "macu", 4), build_network(M0, "macu", 4)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_rejects_bad_shapes():
    with pytest.raises(ValueError):
        build_network(M0, "other")
    with pytest.raises(ValueError):
        build_network(np.ones((3, 3)), "macu")


def test_split_first_layer_matches_concat():
    theta = build_network(M0, "nfaec", seed=2)
    p = theta.params
    A = np.random.default_rng(0).dirichlet(np.ones(P), 7)
    h = dc.leaky_relu(decoder_input(A, p["M"]) @ p["dec.W0"] + p["dec.b0"])
    for i in (1, 2):
        h = dc.leaky_relu(h @ p[f"dec.W{i}"] + p[f"dec.b{i}"])
    np.testing.assert_allclose(omega_d(A, p), h @ p["dec.W3"], rtol=1e-12, atol=1e-13)


def test_decoder_input_stacks_columns():
    M = np.arange(6.0).reshape(3, 2)
    x = decoder_input(np.array([[0.1, 0.9]]), M)
    np.testing.assert_array_equal(x, [[0.1, 0.9, 0, 2, 4, 1, 3, 5]])


def test_single_pixel_and_batch_agree():
    theta = build_network(M0, "macu", seed=0)
    Y = np.random.default_rng(1).uniform(0, 1, (4, L))
    np.testing.assert_allclose(encode(Y[2], theta), encode(Y, theta)[2])
    A = encode(Y, theta)
    np.testing.assert_allclose(decode(A[1], theta), decode(A, theta)[1])


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(VARIANTS), st.integers(0, 1000))
def test_encoder_on_simplex_decoder_nonnegative(variant, seed):
    theta = build_network(M0, variant, seed)
    Y = np.random.default_rng(seed).uniform(-1, 2, (16, L))
    A = encode(Y, theta)
    assert np.all(A >= 0)
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(decode(A, theta) >= 0)


def test_nonlinearity_report_shapes():
    Y = np.random.default_rng(0).uniform(0, 1, (10, L))
    for v in VARIANTS:
        rep = nonlinearity_report(Y, build_network(M0, v, 0))
        assert rep.encoder_norms.shape == rep.decoder_norms.shape == (10,)
        assert rep.mean_gap >= 0
