"""Discretization conventions shared by every solver.

All fields live on the periodic box ``[-L, L)^d`` sampled at ``N`` points per
axis, ``y_j = -L + j * dy`` with ``dy = 2L / N``.

Fourier transform
    Forward transform uses the kernel ``exp(-i xi . y)`` (``numpy.fft.fftn``,
    unnormalized).  Frequencies are ``xi = 2*pi*fftfreq(N, dy)``, i.e. integer
    multiples of ``pi / L`` in numpy's standard ordering (zero first, Nyquist
    counted as negative).

Derivatives
    ``d/dy_k`` is multiplication by ``i xi_k``; the Laplacian is multiplication
    by ``-|xi|^2``.  The free propagator ``exp(i t Delta / 2)`` is therefore the
    multiplier ``exp(-i t |xi|^2 / 2)``.

Norms
    ``||f||_{L^p}^p = dy^d * sum |f|^p``.  With the unnormalized transform,
    Plancherel reads ``sum |f|^2 = N^{-d} sum |F|^2``.
"""

import numpy as np


def wavenumbers(n: int, spacing: float) -> np.ndarray:
    """Angular frequencies matching ``numpy.fft.fft`` ordering."""
    return 2.0 * np.pi * np.fft.fftfreq(n, d=spacing)


def forward(values: np.ndarray) -> np.ndarray:
    return np.fft.fftn(values)


def inverse(coeffs: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(coeffs)
