# coding: utf-8

# # Mixing models
#
# A hyperspectral pixel is a spectrum. When several materials share a pixel the
# observed spectrum is some mixture of their pure spectra (endmembers). Here we
# build a few endmembers and mix them three ways.

import numpy as np

from macu.simdata import (
    add_noise_snr,
    blmm_mix,
    empirical_snr,
    lmm_mix,
    pnmm_mix,
    sample_dirichlet_abundances,
    spectral_angles,
    synth_endmembers,
)

np.set_printoptions(precision=4, suppress=True)

# Three smooth synthetic spectra over 224 bands. The generator keeps every pair
# at least 0.15 rad apart.

M = synth_endmembers(224, 3, seed=0)
print("endmember matrix", M.shape)
print("pairwise angles (rad)\n", spectral_angles(M))

# Abundances live on the simplex: nonnegative, summing to one per pixel.

A = sample_dirichlet_abundances(2500, 3, seed=0)
print("row sums", A.sum(axis=1)[:5])

# Linear mixing is a plain matrix product. The bilinear model adds pairwise
# products of endmembers, and the post-nonlinear model raises the linear
# mixture to a power xi.

Y_lin = lmm_mix(M, A)
Y_bil = blmm_mix(M, A)
Y_pnl = pnmm_mix(M, A, 0.7)

for name, Y in [("bilinear", Y_bil), ("power 0.7", Y_pnl)]:
    gap = np.linalg.norm(Y - Y_lin) / np.linalg.norm(Y_lin)
    print(f"{name:>10}: relative departure from linear {gap:.3f}")

# With xi = 1 the post-nonlinear model falls back to the linear one exactly.

print("xi=1 identical to linear:", np.array_equal(pnmm_mix(M, A, 1.0), Y_lin))

# Finally some white noise at a chosen signal-to-noise ratio.

noisy = add_noise_snr(Y_bil, 20.0, seed=1)
print(f"requested 20 dB, measured {empirical_snr(Y_bil, noisy):.2f} dB")
