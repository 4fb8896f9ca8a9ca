"""Side-by-side comparison of FCLS and the three autoencoder variants on synthetic scenes."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .classic import fcls, vca
from .metrics import align_columns, rmse
from .simdata import Scene, SceneSpec, make_scene
from .trainer import (
    DEFAULT_GRID,
    REDUCED_GRID,
    AllCellsDiverged,
    TrainConfig,
    grid_search,
)

METHODS = ("fcls", "macu", "nfaec", "mfaec")
GRIDS = {"default": DEFAULT_GRID, "reduced": REDUCED_GRID}


@dataclass
class MethodResult:
    scene: str
    model: str
    method: str
    rmse_a: float | None
    rmse_y: float | None
    seconds: float
    status: str = "ok"
    cfg: TrainConfig | None = None
    epochs: int | None = None
    alpha: np.ndarray | None = None
    cells: list | None = None  # every grid cell, for inspection after the run


def run_method(scene: Scene, M0, method, grid, base: TrainConfig, n_jobs=1, label=""):
    Y, truth = scene.cube, scene.abundances
    t0 = time.perf_counter()
    model = scene.spec.model
    if method == "fcls":
        A = fcls(Y, M0)
        _, A_al = align_columns(A, truth)
        return MethodResult(
            label, model, method, rmse(A_al, truth), rmse(A @ M0.T, Y), time.perf_counter() - t0
        )
    try:
        best, cells = grid_search(Y, M0, method, grid, truth=truth, base=base, n_jobs=n_jobs)
    except AllCellsDiverged:
        return MethodResult(label, model, method, None, None, time.perf_counter() - t0, "diverged")
    return MethodResult(
        label,
        model,
        method,
        best.rmse_a,
        best.rmse_y,
        time.perf_counter() - t0,
        cfg=best.cfg,
        epochs=best.history.epochs,
        alpha=best.theta.alpha,
        cells=cells,
    )


def run_benchmark(
    spec: SceneSpec,
    label: str,
    methods=METHODS,
    grid=REDUCED_GRID,
    base: TrainConfig | None = None,
    n_jobs=1,
):
    """Generate the scene, extract VCA endmembers and score every method."""
    base = base or TrainConfig(seed=spec.seed)
    scene = make_scene(spec)
    M0 = vca(scene.cube, spec.n_endmembers, spec.seed).endmembers
    return [run_method(scene, M0, m, grid, base, n_jobs, label) for m in methods]


RESULT_FIELDS = (
    "scene",
    "model",
    "method",
    "rmse_a",
    "rmse_y",
    "status",
    "lambda_q",
    "lambda_w",
    "lambda_m",
    "learning_rate",
    "epochs",
)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def results_csv(results) -> str:
    """Deterministic results (no timings), one row per scene/model/method."""
    lines = [",".join(RESULT_FIELDS)]
    for r in results:
        c = r.cfg
        row = [
            r.scene,
            r.model,
            r.method,
            _fmt(r.rmse_a),
            _fmt(r.rmse_y),
            r.status,
            _fmt(c.lambda_q if c else None),
            _fmt(c.lambda_w if c else None),
            _fmt(c.lambda_m if c else None),
            _fmt(c.learning_rate if c else None),
            _fmt(r.epochs),
        ]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


CELL_FIELDS = (
    "method",
    "cell",
    "lambda_q",
    "lambda_w",
    "lambda_m",
    "learning_rate",
    "rmse_a",
    "rmse_y",
    "epochs",
    "status",
)


def cell_name(method, i) -> str:
    return f"{method}_{i:02d}"


def cells_csv(results) -> str:
    """One row per grid cell of every trained method; deterministic like results_csv."""
    lines = [",".join(CELL_FIELDS)]
    for r in results:
        for i, c in enumerate(r.cells or ()):
            row = [
                r.method,
                cell_name(r.method, i),
                _fmt(c.cfg.lambda_q),
                _fmt(c.cfg.lambda_w),
                _fmt(c.cfg.lambda_m),
                _fmt(c.cfg.learning_rate),
                _fmt(c.rmse_a),
                _fmt(c.rmse_y),
                _fmt(c.history.epochs if c.history else None),
                "diverged" if c.diverged else "ok",
            ]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def timing_csv(results) -> str:
    lines = ["scene,model,method,seconds"]
    lines += [f"{r.scene},{r.model},{r.method},{r.seconds!r}" for r in results]
    return "\n".join(lines) + "\n"


def results_table(results) -> str:
    """Aligned text table with RMSE_A, RMSE_Y and Time columns."""
    head = f"{'Scene':<10} {'Model':<6} {'Method':<8} {'RMSE_A':>8} {'RMSE_Y':>8} {'Time':>9}"
    out = [head, "-" * len(head)]
    for r in results:
        if r.status != "ok":
            a = y = r.status
        else:
            a, y = f"{r.rmse_a:.4f}", f"{r.rmse_y:.4f}"
        out.append(
            f"{r.scene:<10} {r.model:<6} {r.method:<8} {a:>8} {y:>8} {r.seconds:>9.2f}"
        )
    return "\n".join(out) + "\n"
