"""Command-line entry point: ``macu generate | unmix | evaluate | benchmark | rerun``.

Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import io as mio
from .bench import (
    GRIDS,
    METHODS,
    cell_name,
    cells_csv,
    results_csv,
    results_table,
    run_benchmark,
    timing_csv,
)
from .classic import FclsError, RankError, fcls, vca
from .metrics import evaluate
from .model import VARIANTS, decode, encode
from .simdata import PRESETS, SceneError, make_scene, preset_spec
from .trainer import AllCellsDiverged, TrainConfig, TrainingDiverged, train

log = logging.getLogger("macu")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _snr(text):
    if text.lower() == "none":
        return None
    return float(text)


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _manifest(command, argv, inputs=(), **extra):
    d = {
        "command": command,
        "argv": json.dumps(argv),
        "tool_version": __version__,
        "numpy_version": np.__version__,
        "started": _now(),
    }
    for name, path in inputs:
        if path is not None:
            d[f"input.{name}.path"] = str(path)
            d[f"input.{name}.sha256"] = mio.sha256(path)
    d.update(extra)
    return d


def _finish(out: Path, manifest: dict):
    manifest["finished"] = _now()
    mio.write_kv(out / "manifest.txt", manifest)


# ---------------------------------------------------------------- generate


def _scene_spec(args):
    over = {"model": args.model, "seed": args.seed, "snr_db": args.snr}
    if args.bands is not None:
        over["n_bands"] = args.bands
    if args.endmember_count is not None:
        over["n_endmembers"] = args.endmember_count
    if args.xi is not None:
        over["xi"] = args.xi
    if args.pixels is not None:
        if PRESETS[args.preset].get("grid"):
            side = int(round(np.sqrt(args.pixels)))
            if side * side != args.pixels:
                raise UsageError("--pixels must be a perfect square for gridded presets")
            over["grid"] = (side, side)
        over["n_pixels"] = args.pixels
    return preset_spec(args.preset, **over)


def cmd_generate(args, argv):
    spec = _scene_spec(args)
    M = None
    if args.endmembers:
        M = mio.read_matrix_csv(args.endmembers)
        spec = replace(spec, n_bands=M.shape[0], n_endmembers=M.shape[1])
    scene = make_scene(spec, M)
    out = Path(args.out)
    mio.write_cube(out / "cube.macu", scene.cube, scene.grid)
    mio.write_matrix_csv(out / "abundances.csv", scene.abundances)
    mio.write_matrix_csv(out / "endmembers.csv", scene.endmembers)
    man = _manifest("generate", argv, [("endmembers", args.endmembers)])
    man.update({f"scene.{k}": v for k, v in asdict(spec).items()})
    _finish(out, man)
    print(f"wrote {out / 'cube.macu'} ({spec.n_pixels} pixels x {spec.n_bands} bands)")
    return EXIT_OK


# ---------------------------------------------------------------- unmix


def load_config(path) -> TrainConfig:
    if path is None:
        return TrainConfig()
    try:
        return TrainConfig.from_dict(mio.read_kv(path))
    except (ValueError, TypeError) as exc:
        raise UsageError(f"{path}: {exc}") from exc


def cmd_unmix(args, argv):
    cube = mio.read_cube(args.cube)
    Y = cube.data.astype(np.float64)
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    out = Path(args.out)
    if args.endmembers:
        M0 = mio.read_matrix_csv(args.endmembers)
        if M0.shape[0] != cube.n_bands:
            raise UsageError("endmember CSV has the wrong number of bands")
        idx = None
    else:
        if args.n_endmembers is None:
            raise UsageError("give --n-endmembers or --endmembers")
        res = vca(Y, args.n_endmembers, cfg.seed)
        M0, idx = res.endmembers, res.indices

    man = _manifest(
        "unmix",
        argv,
        [("cube", args.cube), ("config", args.config), ("endmembers", args.endmembers)],
        method=args.method,
    )
    man.update({f"config.{k}": v for k, v in cfg.to_dict().items()})
    if idx is not None:
        man["vca_indices"] = " ".join(str(int(i)) for i in idx)

    t0 = time.perf_counter()
    if args.method == "fcls":
        A = fcls(Y, M0)
        M = M0
        Y_hat = A @ M0.T
    else:
        try:
            theta, hist = train(Y, M0, args.method, cfg)
        except TrainingDiverged as exc:
            if exc.history is not None:
                mio.atomic_write(out / "history.csv", exc.history.to_csv())
            raise
        A = encode(Y, theta)
        Y_hat = decode(A, theta)
        M = theta.M
        mio.save_checkpoint(out / "checkpoint.bin", theta)
        mio.atomic_write(out / "history.csv", hist.to_csv())
        man["epochs"] = hist.epochs
        if theta.alpha is not None:
            man["alpha"] = " ".join(repr(float(a)) for a in theta.alpha)
    man["seconds"] = repr(time.perf_counter() - t0)

    mio.write_matrix_csv(out / "abundances.csv", A)
    mio.write_matrix_csv(out / "endmembers.csv", M)
    mio.write_cube(out / "reconstruction.macu", Y_hat, cube.grid)
    if cube.grid is not None:
        rows, cols = cube.grid
        for k in range(A.shape[1]):
            mio.write_pgm(out / f"abundance_{k}.pgm", A[:, k].reshape(rows, cols))
    _finish(out, man)
    print(f"wrote {out / 'abundances.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(args, argv):
    A = mio.read_matrix_csv(args.abundances)
    A_true = mio.read_matrix_csv(args.truth)
    if A.shape != A_true.shape:
        raise UsageError(f"abundance shapes differ: {A.shape} vs {A_true.shape}")
    Y_hat = Y = None
    if args.reconstruction and args.cube:
        Y_hat = mio.read_cube(args.reconstruction).data.astype(np.float64)
        Y = mio.read_cube(args.cube).data.astype(np.float64)
        if Y.shape != Y_hat.shape:
            raise UsageError("cube and reconstruction shapes differ")
    M = M_true = None
    if args.endmembers and args.true_endmembers:
        M = mio.read_matrix_csv(args.endmembers)
        M_true = mio.read_matrix_csv(args.true_endmembers)
        if M.shape != M_true.shape:
            raise UsageError("endmember shapes differ")
    t0 = time.perf_counter()
    report = evaluate(A, A_true, Y_hat, Y, M, M_true)
    report.seconds = time.perf_counter() - t0
    sys.stdout.write(report.to_kv())
    if args.out:
        out = Path(args.out)
        mio.atomic_write(out / "report.txt", report.to_kv())
        mio.atomic_write(out / "report.csv", report.csv_header() + report.to_csv_row())
        inputs = [
            ("abundances", args.abundances),
            ("truth", args.truth),
            ("reconstruction", args.reconstruction),
            ("cube", args.cube),
            ("endmembers", args.endmembers),
            ("true_endmembers", args.true_endmembers),
        ]
        _finish(out, _manifest("evaluate", argv, inputs))
    return EXIT_OK


# ---------------------------------------------------------------- benchmark


def cmd_benchmark(args, argv):
    spec = _scene_spec(args)
    methods = args.methods.split(",") if args.methods else list(METHODS)
    bad = set(methods) - set(METHODS)
    if bad:
        raise UsageError(f"unknown methods {sorted(bad)}")
    base = TrainConfig(seed=args.seed, max_epochs=args.max_epochs)
    results = run_benchmark(spec, args.preset, methods, GRIDS[args.grid], base, args.jobs)
    out = Path(args.out)
    mio.atomic_write(out / "results.csv", results_csv(results))
    mio.atomic_write(out / "timing.csv", timing_csv(results))
    mio.atomic_write(out / "cells.csv", cells_csv(results))
    for r in results:
        for i, c in enumerate(r.cells or ()):
            if c.theta is not None:
                mio.save_checkpoint(out / "cells" / f"{cell_name(r.method, i)}.bin", c.theta)
    table = results_table(results)
    mio.atomic_write(out / "table.txt", table)
    man = _manifest("benchmark", argv, grid=args.grid, methods=",".join(methods))
    man.update({f"scene.{k}": v for k, v in asdict(spec).items()})
    man.update({f"config.{k}": v for k, v in base.to_dict().items()})
    for r in results:
        if r.alpha is not None:
            man[f"alpha.{r.method}"] = " ".join(repr(float(a)) for a in r.alpha)
    _finish(out, man)
    sys.stdout.write(table)
    return EXIT_OK


# ---------------------------------------------------------------- rerun


def cmd_rerun(args, argv):
    man = mio.read_kv(args.manifest)
    try:
        old = json.loads(man["argv"])
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{args.manifest}: no usable argv entry") from exc
    new = list(old)
    if "--out" in new:
        new[new.index("--out") + 1] = args.out
    else:
        new += ["--out", args.out]
    return main(new)


# ---------------------------------------------------------------- parser


def _add_scene_flags(p):
    p.add_argument("--preset", choices=sorted(PRESETS), default="dc1")
    p.add_argument("--model", choices=("lmm", "blmm", "pnmm"), default="blmm")
    p.add_argument("--snr", type=_snr, default=20.0, help="dB, or 'none'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bands", type=int)
    p.add_argument("--pixels", type=int)
    p.add_argument("--endmember-count", type=int)
    p.add_argument("--xi", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="macu", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic cube and its ground truth")
    _add_scene_flags(p)
    p.add_argument("--endmembers", help="L x P CSV used instead of generated spectra")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("unmix", help="estimate abundances and endmembers of a cube")
    p.add_argument("cube")
    p.add_argument("--method", choices=VARIANTS + ("fcls",), default="macu")
    p.add_argument("--config", help="key = value file with TrainConfig fields")
    p.add_argument("--n-endmembers", type=int)
    p.add_argument("--endmembers", help="L x P CSV used instead of VCA")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_unmix)

    p = sub.add_parser("evaluate", help="score estimates against ground truth")
    p.add_argument("--abundances", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--reconstruction")
    p.add_argument("--cube")
    p.add_argument("--endmembers")
    p.add_argument("--true-endmembers")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="compare all methods on a synthetic scene")
    _add_scene_flags(p)
    p.add_argument("--grid", choices=sorted(GRIDS), default="default")
    p.add_argument("--methods", help=f"comma list from {','.join(METHODS)}")
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("rerun", help="repeat a command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args, argv)
    except (UsageError, SceneError) as exc:
        print(f"macu: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, AllCellsDiverged, RankError, FclsError, FloatingPointError) as exc:
        print(f"macu: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, mio.FormatError) as exc:
        print(f"macu: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
