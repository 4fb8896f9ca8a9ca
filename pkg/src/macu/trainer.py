"""Training objective, minibatch Adam loop and hyper-parameter grid search."""

from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import diffcore as dc
from .metrics import align_columns, rmse
from .model import AecParams, build_network, decode_batch, encode, encode_batch, decode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lambda_q: float = 1e-2
    lambda_w: float = 1e-2
    lambda_m: float = 1e-2
    learning_rate: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 200
    stop_threshold: float = 0.01
    seed: int = 0
    # use the cosine itself instead of (1 - cosine) in the endmember term
    rm_literal: bool = False

    def __post_init__(self):
        if min(self.lambda_q, self.lambda_w, self.lambda_m) < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.stop_threshold <= 0:
            raise ValueError("stop_threshold must be > 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            default = getattr(cls, k)
            if isinstance(default, bool):
                kw[k] = v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                kw[k] = int(v)
            else:
                kw[k] = float(v)
        return cls(**kw)


TERMS = ("data", "rw", "rm", "lq")


@dataclass
class LossValue:
    data: float
    rw: float
    rm: float
    lq: float

    @property
    def total(self) -> float:
        return self.data + self.rw + self.rm + self.lq

    def as_array(self):
        return np.array([self.data, self.rw, self.rm, self.lq])


@dataclass
class TrainHistory:
    total: list[float] = field(default_factory=list)
    terms: list[LossValue] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.total)

    @property
    def wall_time(self) -> float:
        return self.seconds[-1] if self.seconds else 0.0

    def to_csv(self) -> str:
        lines = ["epoch,total,data,rw,rm,lq,seconds"]
        for e, (tot, t, s) in enumerate(zip(self.total, self.terms, self.seconds), 1):
            lines.append(
                f"{e},{tot!r},{t.data!r},{t.rw!r},{t.rm!r},{t.lq!r},{s!r}"
            )
        return "\n".join(lines) + "\n"


class TrainingDiverged(ArithmeticError):
    def __init__(self, msg, history=None, terms=None):
        super().__init__(msg)
        self.history = history
        self.terms = terms


def _loss_graph(Y, p, M0, variant, cfg: TrainConfig):
    """Build every term of the objective; works on arrays or tape nodes."""
    B = Y.shape[0]
    A = encode_batch(Y, p, variant)
    Y_hat = decode_batch(A, p, variant)
    data = dc.scale(dc.frob_sq(dc.add(Y, dc.scale(Y_hat, -1.0))), 1.0 / B)

    w_sq = None
    for k in p:
        if k.startswith(("enc.", "dec.")):
            t = dc.frob_sq(p[k])
            w_sq = t if w_sq is None else dc.add(w_sq, t)
    rw = dc.scale(w_sq, cfg.lambda_w)

    M = p["M"]
    P = M0.shape[1]
    m0_norm = np.linalg.norm(M0, axis=0, keepdims=True)  # 1 x P
    dots = dc.sum(dc.mul(M, M0 / m0_norm), axis=0)
    inv_norm = dc.power(dc.sum(dc.mul(M, M), axis=0), -0.5)
    cos_sum = dc.sum(dc.mul(dots, inv_norm))
    if cfg.rm_literal:
        rm = dc.scale(cos_sum, cfg.lambda_m)
    else:
        rm = dc.scale(dc.add(np.array([[float(P)]]), dc.scale(cos_sum, -1.0)), cfg.lambda_m)

    if "Q" in p:
        Mt = dc.transpose(M)
        resid = dc.add(dc.matmul(dc.matmul(Mt, M), p["Q"]), dc.scale(Mt, -1.0))
        lq = dc.scale(dc.frob_sq(resid), cfg.lambda_q)
    else:
        lq = np.zeros((1, 1))
    return {"data": data, "rw": rw, "rm": rm, "lq": lq}


def _terms_value(terms) -> LossValue:
    return LossValue(*(float(dc.value_of(terms[k])[0, 0]) for k in TERMS))


def loss(batch, theta: AecParams, cfg: TrainConfig) -> LossValue:
    """Objective on a batch of pixels, split into its four terms."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    terms = _loss_graph(batch, theta.params, theta.M0, theta.variant, cfg)
    value = _terms_value(terms)
    if not np.isfinite(value.total):
        raise TrainingDiverged("non-finite loss", terms=value)
    return value


def loss_and_grad(batch, theta: AecParams, cfg: TrainConfig):
    """Objective terms plus the gradient of the total w.r.t. every trainable array."""
    terms = {}

    def graph(p):
        t = _loss_graph(batch, p, theta.M0, theta.variant, cfg)
        terms.update(t)
        total = t["data"]
        for k in ("rw", "rm", "lq"):
            total = dc.add(total, t[k])
        return total

    _, tape = dc.record_forward(graph, theta.params)
    grads = dc.backward(tape)
    return _terms_value(terms), grads


def train(Y, M0, variant: str = "macu", cfg: TrainConfig | None = None):
    """Fit the autoencoder to the cube ``Y`` (N x L) starting from endmembers ``M0``.

    Minibatches are reshuffled each epoch.  After every epoch (from the second
    on) training stops once the epoch-mean loss changes by less than
    ``cfg.stop_threshold`` relative to the previous epoch.
    """
    cfg = cfg or TrainConfig()
    Y = np.asarray(Y, dtype=np.float64)
    N = Y.shape[0]
    if N < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} pixels, got {N}")
    theta = build_network(M0, variant, cfg.seed)
    params = theta.params
    state = dc.AdamState()
    rng = np.random.default_rng([int(cfg.seed), 31])
    hist = TrainHistory()
    t0 = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        acc = np.zeros(len(TERMS))
        perm = rng.permutation(N)
        for start in range(0, N, cfg.batch_size):
            batch = Y[perm[start : start + cfg.batch_size]]
            try:
                value, grads = loss_and_grad(batch, theta, cfg)
                if not np.isfinite(value.total):
                    raise dc.NonFiniteError("non-finite loss")
                params, state = dc.adam_step(params, grads, state, cfg.learning_rate, inplace=True)
            except dc.NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", history=hist) from exc
            theta.params = params
            acc += value.as_array() * batch.shape[0]
        mean = LossValue(*(acc / N))
        hist.total.append(mean.total)
        hist.terms.append(mean)
        hist.seconds.append(time.perf_counter() - t0)
        log.debug("epoch %d loss %.6g", epoch, mean.total)
        if epoch >= 2:
            prev = hist.total[-2]
            if prev == 0 or abs(mean.total - prev) / abs(prev) < cfg.stop_threshold:
                break
    theta.meta["epochs"] = hist.epochs
    return theta, hist


# ---------------------------------------------------------------- grid search

DEFAULT_GRID = {
    "lambda_q": (1e-6, 1e-2, 1.0),
    "lambda_w": (1e-6, 1e-2, 1.0),
    "lambda_m": (1e-6, 1e-2, 1.0),
    "learning_rate": (1e-6, 1e-4),
}

REDUCED_GRID = {
    "lambda_q": (1e-2, 1.0),
    "lambda_w": (1e-2, 1.0),
    "lambda_m": (1e-2, 1.0),
    "learning_rate": (1e-4,),
}


@dataclass
class CellResult:
    cfg: TrainConfig
    rmse_a: float | None = None
    rmse_y: float | None = None
    theta: AecParams | None = None
    history: TrainHistory | None = None
    error: str | None = None

    @property
    def diverged(self) -> bool:
        return self.error is not None


def grid_cells(grids=None, base: TrainConfig | None = None) -> list[TrainConfig]:
    grids = DEFAULT_GRID if grids is None else grids
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ValueError("grid axes must be nonempty")
    base = base or TrainConfig()
    keys = list(grids)
    return [replace(base, **dict(zip(keys, combo))) for combo in itertools.product(*grids.values())]


def _run_cell(Y, M0, variant, cfg, truth):
    try:
        theta, hist = train(Y, M0, variant, cfg)
        A = encode(Y, theta)
        Y_hat = decode(A, theta)
    except (TrainingDiverged, dc.NonFiniteError, FloatingPointError) as exc:
        return CellResult(cfg, error=str(exc) or type(exc).__name__)
    ra = None
    if truth is not None:
        _, A_al = align_columns(A, truth)
        ra = rmse(A_al, truth)
    return CellResult(cfg, ra, rmse(Y_hat, Y), theta, hist)


class AllCellsDiverged(ArithmeticError):
    pass


def grid_search(Y, M0, variant="macu", grids=None, truth=None, base=None, n_jobs=1):
    """Train one model per grid cell and keep the best.

    Cells are ranked by aligned abundance RMSE when ``truth`` is given, else by
    reconstruction RMSE.  Returns ``(best CellResult, all CellResults)``.
    """
    cells = grid_cells(grids, base)
    Y = np.asarray(Y, dtype=np.float64)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(lambda c: _run_cell(Y, M0, variant, c, truth), cells))
    else:
        results = [_run_cell(Y, M0, variant, c, truth) for c in cells]
    ok = [r for r in results if not r.diverged]
    if not ok:
        raise AllCellsDiverged(f"all {len(results)} grid cells diverged")
    key = (lambda r: r.rmse_a) if truth is not None else (lambda r: r.rmse_y)
    best = min(ok, key=key)
    return best, results
