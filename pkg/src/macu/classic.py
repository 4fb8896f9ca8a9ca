"""Classical unmixing pieces: pseudoinverse, VCA endmember extraction, FCLS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import nnls


class RankError(np.linalg.LinAlgError):
    pass


COND_LIMIT = 1e12


def pseudoinverse(M):
    """Moore-Penrose pseudoinverse ``(M^T M)^{-1} M^T`` of a tall full-rank matrix.

    Solved with a Cholesky factorization of the P x P normal matrix.  Raises
    :class:`RankError` when ``cond(M^T M)`` exceeds 1e12.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    G = M.T @ M
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise RankError(f"endmember matrix is rank deficient (cond(M^T M) = {cond:.3g})")
    return cho_solve(cho_factor(G), M.T)


@dataclass
class VcaResult:
    endmembers: np.ndarray  # L x P, columns taken from the cube
    indices: np.ndarray  # pixel indices of the selected spectra


def vca(Y, n_endmembers: int, seed=0) -> VcaResult:
    """Vertex component analysis on a pixel-major cube ``Y`` (N x L).

    Always uses the PCA projection (mean-removed, P-1 leading eigenvectors
    of the covariance, lifted by a constant coordinate), then picks, one at a
    time, the pixel with the largest absolute projection on a random
    direction orthogonal to the pixels already chosen.
    """
    Y = np.asarray(Y, dtype=np.float64)
    N, L = Y.shape
    P = int(n_endmembers)
    if P < 1 or P > N:
        raise ValueError(f"need 1 <= P <= N, got P={P}, N={N}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("cube contains NaN or Inf")
    rng = np.random.default_rng([int(seed), 11])

    if P == 1:
        # no centred subspace to speak of: project on the leading direction of Y^T Y
        w, V = np.linalg.eigh(Y.T @ Y / N)
        proj = np.abs(Y @ V[:, -1])
        idx = np.array([int(np.argmax(proj))])
        return VcaResult(Y[idx].T.copy(), idx)

    mean = Y.mean(axis=0)
    Yc = Y - mean
    w, V = np.linalg.eigh(Yc.T @ Yc / N)
    order = np.argsort(w)[::-1][: P - 1]
    w, Ud = w[order], V[:, order]
    if w[-1] <= 1e-12 * max(w[0], np.finfo(float).tiny):
        raise RankError("data covariance is degenerate for the requested number of endmembers")
    X = Yc @ Ud  # N x (P-1)
    c = np.sqrt(np.max(np.sum(X**2, axis=1)))
    Z = np.hstack([X, np.full((N, 1), c)]).T  # P x N

    A = np.zeros((P, P))
    A[-1, 0] = 1.0
    idx = np.zeros(P, dtype=int)
    for i in range(P):
        w_ = rng.standard_normal(P)
        f = w_ - A @ np.linalg.pinv(A) @ w_
        f /= np.linalg.norm(f)
        v = f @ Z
        idx[i] = int(np.argmax(np.abs(v)))
        A[:, i] = Z[:, idx[i]]
    return VcaResult(Y[idx].T.copy(), idx)


class FclsError(RuntimeError):
    pass


def fcls_pixel(y, M_aug, delta):
    """Simplex-constrained least squares for one pixel via augmented NNLS."""
    P = M_aug.shape[1]
    b = np.append(y, delta)
    try:
        a, _ = nnls(M_aug, b, maxiter=3 * P)
    except RuntimeError as exc:
        raise FclsError(f"active set did not converge in {3 * P} iterations") from exc
    s = a.sum()
    if s <= 0:
        return np.full(P, 1.0 / P)
    return a / s


def fcls(Y, M):
    """Fully constrained least squares abundances, one row per pixel."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    M = np.asarray(M, dtype=np.float64)
    if Y.shape[1] != M.shape[0]:
        raise ValueError(f"cube has {Y.shape[1]} bands but M has {M.shape[0]} rows")
    pseudoinverse(M)  # rank guard
    delta = 1e3 * np.max(np.abs(M))
    M_aug = np.vstack([M, np.full((1, M.shape[1]), delta)])
    out = np.empty((Y.shape[0], M.shape[1]))
    for n, y in enumerate(Y):
        try:
            out[n] = fcls_pixel(y, M_aug, delta)
        except FclsError as exc:
            raise FclsError(f"pixel {n}: {exc}") from exc
    return out
