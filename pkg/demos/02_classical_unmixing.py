# coding: utf-8

# # Classical unmixing: VCA then FCLS
#
# The usual two-stage pipeline. VCA finds the most extreme pixels of the cube
# and takes them as endmembers; FCLS then solves a small constrained least
# squares problem per pixel for the abundances.

import sys
import tempfile
from pathlib import Path

import numpy as np

from macu.classic import fcls, vca
from macu.io import write_pgm
from macu.metrics import align_columns, rmse, spectral_angle
from macu.simdata import make_scene, preset_spec

# A spatially smooth scene on a 50 x 50 grid, linear mixing, 30 dB noise.

scene = make_scene(preset_spec("dc2", model="lmm", snr_db=30.0, seed=2))
Y = scene.cube
print("cube", Y.shape, "grid", scene.grid)

# Endmember extraction.

res = vca(Y, 3, seed=2)
print("VCA picked pixels", res.indices)

# Abundances under the nonnegativity and sum-to-one constraints.

A = fcls(Y, res.endmembers)
perm, A_aligned = align_columns(A, scene.abundances)
print(f"abundance RMSE {rmse(A_aligned, scene.abundances):.4f}")
for k in range(3):
    angle = spectral_angle(res.endmembers[:, perm[k]], scene.endmembers[:, k])
    print(f"  endmember {k}: angle to truth {angle:.4f} rad")

# Abundance maps as greyscale images, one per material.

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
rows, cols = scene.grid
for k in range(3):
    write_pgm(out / f"abundance_{k}.pgm", A_aligned[:, k].reshape(rows, cols))
print("maps written to", out)
