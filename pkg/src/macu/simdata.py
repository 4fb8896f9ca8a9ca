"""Synthetic hyperspectral scenes: endmembers, abundance fields, mixing models, noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to regenerate a synthetic cube bit-for-bit."""

    n_pixels: int = 10_000
    n_bands: int = 224
    n_endmembers: int = 3
    sampler: str = "dirichlet"  # dirichlet | grf
    model: str = "blmm"  # lmm | blmm | pnmm
    xi: float = 0.7
    snr_db: float | None = 20.0
    seed: int = 0
    grid: tuple[int, int] | None = None
    concentration: float = 1.0
    corr_len: float = 5.0

    def __post_init__(self):
        if self.n_pixels < 1 or self.n_bands < 1 or self.n_endmembers < 1:
            raise SceneError("pixel, band and endmember counts must be positive")
        if self.n_bands <= self.n_endmembers:
            raise SceneError("need more bands than endmembers")
        if self.xi <= 0:
            raise SceneError("PNMM exponent must be positive")
        if self.sampler not in ("dirichlet", "grf"):
            raise SceneError(f"unknown abundance sampler {self.sampler!r}")
        if self.model not in MIXERS:
            raise SceneError(f"unknown mixing model {self.model!r}")
        if self.grid is not None and self.grid[0] * self.grid[1] != self.n_pixels:
            raise SceneError("grid shape does not match the pixel count")
        if self.sampler == "grf" and self.grid is None:
            raise SceneError("the grf sampler needs a grid shape")


@dataclass
class Scene:
    spec: SceneSpec
    endmembers: np.ndarray  # L x P
    abundances: np.ndarray  # N x P
    clean: np.ndarray  # N x L
    cube: np.ndarray  # N x L, noisy

    @property
    def grid(self):
        return self.spec.grid


def _rng(seed, stream: int):
    return np.random.default_rng([int(seed), stream])


def spectral_angles(M: np.ndarray) -> np.ndarray:
    """Pairwise spectral angles between columns of ``M`` (P x P, radians)."""
    norms = np.linalg.norm(M, axis=0)
    cos = (M.T @ M) / np.outer(norms, norms)
    return np.arccos(np.clip(cos, -1.0, 1.0))


def synth_endmembers(n_bands: int, n_endmembers: int, seed=0, min_angle=0.15):
    """Smooth random reflectance spectra in (0, 1), one per column.

    Each spectrum is a convex quadratic baseline plus 3-6 Gaussian bumps,
    rescaled so its maximum is 0.9.  Draws are repeated until every pair of
    columns is at least ``min_angle`` radians apart.
    """
    L, P = int(n_bands), int(n_endmembers)
    if L <= P:
        raise SceneError(f"need L > P, got L={L}, P={P}")
    rng = _rng(seed, 1)
    x = np.linspace(0.0, 1.0, L)
    for _ in range(100):
        M = np.empty((L, P))
        for k in range(P):
            c = rng.uniform(0.2, 0.8)
            spec = rng.uniform(0.05, 0.3) + rng.uniform(0.0, 1.0) * (x - c) ** 2
            for _ in range(rng.integers(3, 7)):
                mu = rng.uniform(0.0, 1.0)
                width = rng.uniform(0.03, 0.15)
                spec = spec + rng.uniform(0.1, 1.0) * np.exp(-0.5 * ((x - mu) / width) ** 2)
            M[:, k] = 0.9 * spec / spec.max()
        if P == 1:
            return M
        ang = spectral_angles(M)
        if ang[np.triu_indices(P, 1)].min() >= min_angle:
            return M
    raise SceneError(f"could not reach pairwise angle {min_angle} rad in 100 draws")


def sample_dirichlet_abundances(n_pixels, n_endmembers, concentration=1.0, seed=0):
    if n_pixels < 1 or concentration <= 0:
        raise SceneError("need n_pixels >= 1 and concentration > 0")
    rng = _rng(seed, 2)
    return rng.dirichlet(np.full(n_endmembers, float(concentration)), size=int(n_pixels))


def _gaussian_field(rows, cols, corr_len, rng):
    # Gaussian kernel of width s gives a field with correlation exp(-d^2 / (4 s^2));
    # corr_len is the length in exp(-d^2 / (2 corr_len^2)), hence s = corr_len / sqrt(2)
    s = corr_len / np.sqrt(2.0)
    r = int(np.ceil(3.0 * s))
    t = np.arange(-r, r + 1)
    k1 = np.exp(-0.5 * (t / s) ** 2)
    kernel = np.outer(k1, k1)
    kernel /= np.sqrt(np.sum(kernel**2))
    noise = rng.standard_normal((rows + 2 * r, cols + 2 * r))
    return fftconvolve(noise, kernel, mode="valid")


def sample_grf_abundances(rows, cols, n_endmembers, corr_len=5.0, seed=0):
    """Spatially smooth abundances on a ``rows x cols`` grid, pixels row-major.

    Each endmember gets an independent zero-mean unit-variance field; the
    stack is mapped to the simplex with ``|f| / sum |f|`` per pixel.
    """
    if rows * cols < 1 or corr_len <= 0:
        raise SceneError("need a nonempty grid and corr_len > 0")
    rng = _rng(seed, 3)
    fields = np.stack(
        [_gaussian_field(rows, cols, corr_len, rng).ravel() for _ in range(n_endmembers)],
        axis=1,
    )
    fields = np.abs(fields)
    s = fields.sum(axis=1, keepdims=True)
    return np.where(s > 0, fields / np.where(s > 0, s, 1.0), 1.0 / n_endmembers)


def _check(M, A):
    M = np.asarray(M, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if M.ndim != 2 or A.ndim != 2 or M.shape[1] != A.shape[1]:
        raise SceneError(f"shape mismatch: M {M.shape}, A {A.shape}")
    return M, A


def lmm_mix(M, A):
    """Linear mixture, one pixel per row: ``Y = A M^T``."""
    M, A = _check(M, A)
    return A @ M.T


def blmm_mix(M, A):
    """Linear mixture plus pairwise ``a_i a_j (m_i * m_j)`` interaction terms."""
    M, A = _check(M, A)
    Y = A @ M.T
    P = M.shape[1]
    for i in range(P - 1):
        for j in range(i + 1, P):
            Y += np.outer(A[:, i] * A[:, j], M[:, i] * M[:, j])
    return Y


def pnmm_mix(M, A, xi=0.7):
    """Post-nonlinear mixture ``(M a)^xi`` applied elementwise."""
    M, A = _check(M, A)
    lin = A @ M.T
    xi = float(xi)
    if xi == 1.0:
        return lin
    if not xi.is_integer() and np.any(lin < 0):
        raise SceneError("negative linear mixture with non-integer exponent")
    return lin**xi


def add_noise_snr(Y, snr_db, seed=0):
    """White Gaussian noise at a global SNR; ``snr_db=None`` returns ``Y`` untouched."""
    if snr_db is None or (isinstance(snr_db, str) and snr_db.lower() == "none"):
        return Y
    Y = np.asarray(Y, dtype=np.float64)
    snr_db = float(snr_db)
    if not np.isfinite(snr_db):
        raise SceneError("snr_db must be finite or None")
    sigma2 = np.sum(Y**2) / (Y.size * 10.0 ** (snr_db / 10.0))
    rng = _rng(seed, 4)
    return Y + np.sqrt(sigma2) * rng.standard_normal(Y.shape)


def empirical_snr(clean, noisy) -> float:
    e = np.asarray(noisy) - np.asarray(clean)
    return 10.0 * np.log10(np.sum(np.asarray(clean) ** 2) / np.sum(e**2))


MIXERS = {"lmm": lmm_mix, "blmm": blmm_mix, "pnmm": pnmm_mix}


def mix(model, M, A, xi=0.7):
    if model == "pnmm":
        return pnmm_mix(M, A, xi)
    try:
        return MIXERS[model](M, A)
    except KeyError:
        raise SceneError(f"unknown mixing model {model!r}") from None


def make_scene(spec: SceneSpec, endmembers=None) -> Scene:
    """Generate a full scene; pass ``endmembers`` (L x P) to skip the generator."""
    if endmembers is None:
        M = synth_endmembers(spec.n_bands, spec.n_endmembers, spec.seed)
    else:
        M = np.asarray(endmembers, dtype=np.float64)
        if M.shape != (spec.n_bands, spec.n_endmembers):
            raise SceneError(f"endmembers shape {M.shape} does not match the scene settings")
    if spec.sampler == "dirichlet":
        A = sample_dirichlet_abundances(
            spec.n_pixels, spec.n_endmembers, spec.concentration, spec.seed
        )
    else:
        rows, cols = spec.grid
        A = sample_grf_abundances(rows, cols, spec.n_endmembers, spec.corr_len, spec.seed)
    clean = mix(spec.model, M, A, spec.xi)
    cube = add_noise_snr(clean, spec.snr_db, spec.seed)
    return Scene(spec, M, A, clean, cube)


PRESETS = {
    "dc1": dict(n_pixels=10_000, sampler="dirichlet"),
    "dc2": dict(n_pixels=2_500, sampler="grf", grid=(50, 50)),
    "dc1-small": dict(n_pixels=2_500, sampler="dirichlet"),
}


def preset_spec(name: str, **overrides) -> SceneSpec:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise SceneError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return SceneSpec(**base)
