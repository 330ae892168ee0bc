"""Trajectory spectrums: Haar, DFT and identity transforms and their inverses.

Each kind is an isometry from a flattened ``t x m`` trajectory to a flattened
``T x M`` spectrum, stored as one dense matrix ``F``. Because ``F.T @ F = I``
the inverse is always ``F.T``; for Haar and identity this is the exact
inverse, for the DFT it is the adjoint (exact on spectrums of real inputs).

Column layout of a spectrum row:

* haar:  ``(a_x, d_x, a_y, d_y)`` -- approximation/detail per channel,
  ``a_k = (x_2k + x_2k+1)/sqrt2``, ``d_k = (x_2k - x_2k+1)/sqrt2``
* dft:   ``(re_x, im_x, re_y, im_y)`` of the orthonormal DFT
* identity: the trajectory itself
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .nn import tensor as T
from .nn.tensor import DimensionError, Tensor

KINDS = ("haar", "dft", "identity")


class SpectrumShapeError(DimensionError):
    pass


@dataclass(frozen=True)
class TrajectorySpectrum:
    coeffs: np.ndarray
    kind: str
    t: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape


def spectral_shape(kind: str, t: int, m: int = 2) -> tuple[int, int]:
    if kind == "haar":
        if t % 2:
            raise SpectrumShapeError(
                f"haar transform needs an even number of steps, got t={t}; "
                "pad the trajectory or re-window it")
        return t // 2, 2 * m
    if kind == "dft":
        return t, 2 * m
    if kind == "identity":
        return t, m
    raise ValueError(f"unknown transform kind {kind!r}; expected one of {KINDS}")


@lru_cache(maxsize=64)
def transform_matrix(kind: str, t: int, m: int = 2) -> np.ndarray:
    """``F`` with ``vec(S) = F @ vec(X)`` for row-major ``X`` (t, m)."""
    big_t, big_m = spectral_shape(kind, t, m)
    F = np.zeros((big_t * big_m, t * m))
    if kind == "identity":
        F[:] = np.eye(t * m)
    elif kind == "haar":
        r = 1.0 / np.sqrt(2.0)
        for k in range(big_t):
            for c in range(m):
                a_row, d_row = k * big_m + 2 * c, k * big_m + 2 * c + 1
                F[a_row, 2 * k * m + c] = r
                F[a_row, (2 * k + 1) * m + c] = r
                F[d_row, 2 * k * m + c] = r
                F[d_row, (2 * k + 1) * m + c] = -r
    else:
        n = np.arange(t)
        phase = -2.0 * np.pi * np.outer(n, n) / t
        re, im = np.cos(phase) / np.sqrt(t), np.sin(phase) / np.sqrt(t)
        for k in range(t):
            for c in range(m):
                F[k * big_m + 2 * c, c::m] = re[k]
                F[k * big_m + 2 * c + 1, c::m] = im[k]
    F.setflags(write=False)
    return F


def forward(X, kind: str = "haar") -> TrajectorySpectrum:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise SpectrumShapeError(f"expected a t x m trajectory, got shape {X.shape}")
    t, m = X.shape
    big_t, big_m = spectral_shape(kind, t, m)
    F = transform_matrix(kind, t, m)
    return TrajectorySpectrum((F @ X.reshape(-1)).reshape(big_t, big_m), kind, t)


def inverse(S: TrajectorySpectrum) -> np.ndarray:
    coeffs = np.asarray(S.coeffs, dtype=np.float64)
    m = _channels(S.kind, coeffs.shape[-1])
    if coeffs.shape != spectral_shape(S.kind, S.t, m):
        raise SpectrumShapeError(f"{S.kind} spectrum of shape {coeffs.shape} "
                                 f"does not match t={S.t}")
    F = transform_matrix(S.kind, S.t, m)
    return (F.T @ coeffs.reshape(-1)).reshape(S.t, m)


def _channels(kind: str, big_m: int) -> int:
    if kind == "identity":
        return big_m
    if big_m % 2:
        raise SpectrumShapeError(f"{kind} spectrum needs an even column count, got {big_m}")
    return big_m // 2


def forward_batch(X: np.ndarray, kind: str = "haar") -> np.ndarray:
    """Transform trajectories stacked on leading axes: (..., t, m) -> (..., T, M)."""
    X = np.asarray(X, dtype=np.float64)
    t, m = X.shape[-2:]
    big_t, big_m = spectral_shape(kind, t, m)
    F = transform_matrix(kind, t, m)
    flat = X.reshape(X.shape[:-2] + (t * m,))
    return (flat @ F.T).reshape(X.shape[:-2] + (big_t, big_m))


def inverse_batch(S: np.ndarray, kind: str, t: int) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    m = _channels(kind, S.shape[-1])
    F = transform_matrix(kind, t, m)
    flat = S.reshape(S.shape[:-2] + (-1,))
    return (flat @ F).reshape(S.shape[:-2] + (t, m))


def inverse_tensor(S: Tensor, kind: str, t: int) -> Tensor:
    """Differentiable inverse for network outputs (..., T, M) -> (..., t, m)."""
    m = _channels(kind, S.shape[-1])
    if tuple(S.shape[-2:]) != spectral_shape(kind, t, m):
        raise SpectrumShapeError(f"{kind} spectrum {S.shape[-2:]} does not match t={t}")
    F = transform_matrix(kind, t, m)
    lead = S.shape[:-2]
    flat = T.reshape(S, lead + (S.shape[-2] * S.shape[-1],))
    return T.reshape(T.matmul(flat, F), lead + (t, m))
