"""Model-based autoencoder: linear-plus-fluctuation decoder, pseudoinverse-tied encoder.

The same forward code serves eager evaluation (dict of arrays) and taped
evaluation (dict of :class:`~macu.diffcore.Node`), so the trainer differentiates
exactly what inference runs.

Three variants share the layout:

``macu``
    encoder ``s(diag|alpha| Q y + w_E(y))``, decoder ``r(M a + w_D(a, vec M))``
``nfaec``
    encoder ``s(w_E(y))``, decoder as ``macu``
``mfaec``
    encoder ``s(w_E(y))``, decoder ``r(w_D(a, vec M))``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .classic import pseudoinverse

VARIANTS = ("macu", "nfaec", "mfaec")


def encoder_widths(L: int, P: int) -> list[int]:
    return [L, 2 * L, math.ceil(L / 2), math.ceil(L / 4), 4 * P, P, P]


def decoder_widths(L: int, P: int) -> list[int]:
    return [P * (L + 1), P * L, L, L, L]


def _mlp_names(prefix, widths):
    names = []
    n = len(widths) - 1
    for i in range(n):
        names.append(f"{prefix}.W{i}")
        if i < n - 1:
            names.append(f"{prefix}.b{i}")
    return names


def param_order(L: int, P: int, variant: str) -> list[str]:
    """Canonical parameter order (also the checkpoint layout)."""
    names = ["M"]
    if variant == "macu":
        names += ["Q", "alpha"]
    names += _mlp_names("enc", encoder_widths(L, P))
    names += _mlp_names("dec", decoder_widths(L, P))
    return names


@dataclass
class AecParams:
    variant: str
    M0: np.ndarray
    params: dict[str, np.ndarray]
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_bands(self) -> int:
        return self.M0.shape[0]

    @property
    def n_endmembers(self) -> int:
        return self.M0.shape[1]

    @property
    def M(self) -> np.ndarray:
        return self.params["M"]

    @property
    def Q(self) -> np.ndarray | None:
        return self.params.get("Q")

    @property
    def alpha(self) -> np.ndarray | None:
        """Effective nonnegative gains ``|alpha_raw|`` (macu only)."""
        a = self.params.get("alpha")
        return None if a is None else np.abs(a).ravel()

    def weight_names(self, prefix=None) -> list[str]:
        p = ("enc.", "dec.") if prefix is None else (prefix + ".",)
        return [k for k in self.params if k.startswith(p)]

    def weight_norm_sq(self) -> float:
        return float(sum(np.sum(self.params[k] ** 2) for k in self.weight_names()))

    def copy(self) -> "AecParams":
        return AecParams(
            self.variant,
            self.M0.copy(),
            {k: v.copy() for k, v in self.params.items()},
            self.seed,
            dict(self.meta),
        )


def build_network(M0, variant: str = "macu", seed=0) -> AecParams:
    """Fresh parameters around the initial endmember matrix ``M0`` (L x P).

    Weights are uniform in ``+-sqrt(6 / fan_in)``, biases start at zero,
    ``alpha_raw`` at one, ``M`` at ``M0`` and ``Q`` at ``pinv(M0)``.
    """
    M0 = np.asarray(M0, dtype=np.float64)
    if M0.ndim != 2:
        raise ValueError("M0 must be an L x P matrix")
    L, P = M0.shape
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if not (L > P >= 2):
        raise ValueError(f"need L > P >= 2, got L={L}, P={P}")
    rng = np.random.default_rng([int(seed), 21])
    params: dict[str, np.ndarray] = {"M": M0.copy()}
    if variant == "macu":
        params["Q"] = pseudoinverse(M0)
        params["alpha"] = np.ones((1, P))
    for prefix, widths in (("enc", encoder_widths(L, P)), ("dec", decoder_widths(L, P))):
        n = len(widths) - 1
        for i in range(n):
            fan_in, fan_out = widths[i], widths[i + 1]
            bound = math.sqrt(6.0 / fan_in)
            params[f"{prefix}.W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            if i < n - 1:
                params[f"{prefix}.b{i}"] = np.zeros((1, fan_out))
    return AecParams(variant, M0.copy(), params, int(seed))


def _mlp(x, p, prefix):
    i = 0
    while f"{prefix}.W{i}" in p:
        x = dc.matmul(x, p[f"{prefix}.W{i}"])
        b = p.get(f"{prefix}.b{i}")
        if b is None:  # final layer: no bias, no activation
            return x
        x = dc.leaky_relu(dc.add(x, b))
        i += 1
    return x


def omega_e(Y, p):
    """Nonlinear encoder branch on a batch of pixels (B x L) -> B x P."""
    return _mlp(Y, p, "enc")


def decoder_input(A, M):
    """``[a, vec(M)]`` for every row of ``A``; vec stacks the columns of ``M``."""
    L, P = dc.value_of(M).shape
    vec_m = dc.reshape(dc.transpose(M), (1, L * P))
    B = dc.value_of(A).shape[0]
    return dc.concat(A, dc.matmul(np.ones((B, 1)), vec_m))


def omega_d(A, p):
    """Nonlinear decoder branch on abundances (B x P) and the current ``M``.

    The first layer acts on ``[a, vec(M)]``.  ``vec(M)`` is shared by the whole
    batch, so its product with the weight rows is done once and broadcast.
    This gives the same result as ``decoder_input(A, M) @ W0``.
    """
    M = p["M"]
    L, P = dc.value_of(M).shape
    W0 = p["dec.W0"]
    vec_m = dc.reshape(dc.transpose(M), (1, L * P))
    h = dc.add(
        dc.matmul(A, dc.row_slice(W0, 0, P)),
        dc.matmul(vec_m, dc.row_slice(W0, P, P + L * P)),
    )
    h = dc.leaky_relu(dc.add(h, p["dec.b0"]))
    i = 1
    while f"dec.W{i}" in p:
        h = dc.matmul(h, p[f"dec.W{i}"])
        b = p.get(f"dec.b{i}")
        if b is None:
            return h
        h = dc.leaky_relu(dc.add(h, b))
        i += 1
    return h


def encode_batch(Y, p, variant):
    pre = omega_e(Y, p)
    if variant == "macu":
        lin = dc.mul(dc.matmul(Y, dc.transpose(p["Q"])), dc.absolute(p["alpha"]))
        pre = dc.add(lin, pre)
    return dc.row_normalize(pre)


def decode_batch(A, p, variant):
    out = omega_d(A, p)
    if variant != "mfaec":
        out = dc.add(dc.matmul(A, dc.transpose(p["M"])), out)
    return dc.relu(out)


def encode(Y, theta: AecParams) -> np.ndarray:
    """Abundances on the unit simplex for one pixel (L,) or a batch (N x L)."""
    Y = np.asarray(Y, dtype=np.float64)
    out = encode_batch(np.atleast_2d(Y), theta.params, theta.variant)
    return out[0] if Y.ndim == 1 else out


def decode(A, theta: AecParams) -> np.ndarray:
    """Nonnegative reconstruction for one abundance vector (P,) or a batch (N x P)."""
    A = np.asarray(A, dtype=np.float64)
    out = decode_batch(np.atleast_2d(A), theta.params, theta.variant)
    return out[0] if A.ndim == 1 else out


def reconstruct(Y, theta: AecParams) -> np.ndarray:
    return decode(encode(Y, theta), theta)


@dataclass
class NonlinearityReport:
    encoder_norms: np.ndarray
    decoder_norms: np.ndarray

    @property
    def mean_gap(self) -> float:
        return float(np.mean(np.abs(self.encoder_norms - self.decoder_norms)))


def nonlinearity_report(Y, theta: AecParams) -> NonlinearityReport:
    """Per-pixel ``||w_E(y)||`` against ``||Q w_D(a, M)||`` with ``a = g(y)``.

    Both terms must be of similar size for the encoder to undo the decoder's
    nonlinear part.  Variants without ``Q`` use the exact pseudoinverse of ``M``.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    p = theta.params
    Q = p["Q"] if "Q" in p else pseudoinverse(p["M"])
    A = encode(Y, theta)
    e = np.linalg.norm(omega_e(Y, p), axis=1)
    d = np.linalg.norm(omega_d(A, p) @ Q.T, axis=1)
    return NonlinearityReport(e, d)
