"""Scoring: RMSE, spectral angle and permutation alignment of abundance columns."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


def rmse(X, X_ref) -> float:
    """``sqrt(||X - X_ref||_F^2 / n_elements)``."""
    X = np.asarray(X, dtype=np.float64)
    X_ref = np.asarray(X_ref, dtype=np.float64)
    if X.shape != X_ref.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {X_ref.shape}")
    return float(np.sqrt(np.sum((X - X_ref) ** 2) / X.size))


def spectral_angle(m, m_ref) -> float:
    m = np.asarray(m, dtype=np.float64).ravel()
    m_ref = np.asarray(m_ref, dtype=np.float64).ravel()
    nm, nr = np.linalg.norm(m), np.linalg.norm(m_ref)
    if nm == 0 or nr == 0:
        raise ValueError("spectral angle of a zero vector is undefined")
    # chord form stays accurate for nearly parallel spectra, unlike arccos
    chord = np.linalg.norm(m / nm - m_ref / nr)
    return float(2.0 * np.arcsin(min(chord / 2.0, 1.0)))


MAX_ALIGN_P = 8


def align_columns(A_est, A_true):
    """Column permutation of ``A_est`` closest to ``A_true`` in RMSE.

    Exhaustive over all P! orderings, so P is capped at 8.  Returns
    ``(perm, A_est[:, perm])``; ties keep the lexicographically first ordering,
    which makes the identity win when it is optimal.
    """
    A_est = np.asarray(A_est, dtype=np.float64)
    A_true = np.asarray(A_true, dtype=np.float64)
    if A_est.shape != A_true.shape:
        raise ValueError(f"shape mismatch: {A_est.shape} vs {A_true.shape}")
    P = A_est.shape[1]
    if P > MAX_ALIGN_P:
        raise ValueError(f"exhaustive alignment supports P <= {MAX_ALIGN_P}, got {P}")
    # squared error of every (estimated col, true col) pairing
    cost = ((A_est[:, :, None] - A_true[:, None, :]) ** 2).sum(axis=0)
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(P)):
        c = sum(cost[perm[j], j] for j in range(P))
        if c < best_cost:
            best, best_cost = perm, c
    perm = np.array(best)
    return perm, A_est[:, perm]


@dataclass
class EvalReport:
    rmse_a: float
    rmse_y: float
    angles: list[float] = field(default_factory=list)
    permutation: list[int] = field(default_factory=list)
    seconds: float = 0.0

    def fields(self) -> dict[str, str]:
        out = {
            "rmse_a": repr(float(self.rmse_a)),
            "rmse_y": repr(float(self.rmse_y)),
        }
        for k, a in enumerate(self.angles):
            out[f"angle_{k}"] = repr(float(a))
        out["permutation"] = " ".join(str(int(i)) for i in self.permutation)
        out["seconds"] = repr(float(self.seconds))
        return out

    def to_kv(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.fields().items())

    def csv_header(self) -> str:
        return ",".join(self.fields()) + "\n"

    def to_csv_row(self) -> str:
        return ",".join(self.fields().values()) + "\n"


def evaluate(A_est, A_true, Y_hat=None, Y=None, M_est=None, M_true=None, seconds=0.0):
    """Align abundance columns then score abundances, reconstruction and endmembers."""
    perm, A_al = align_columns(A_est, A_true)
    rmse_a = rmse(A_al, A_true)
    rmse_y = rmse(Y_hat, Y) if Y_hat is not None and Y is not None else float("nan")
    angles = []
    if M_est is not None and M_true is not None:
        M_est = np.asarray(M_est)[:, perm]
        angles = [spectral_angle(M_est[:, k], M_true[:, k]) for k in range(M_est.shape[1])]
    return EvalReport(rmse_a, rmse_y, angles, [int(i) for i in perm], seconds)
