"""Least-squares linear base: fit, extrapolation and continuity translation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class LinearPair:
    fit: np.ndarray          # (t_h, 2)
    base: np.ndarray         # (t_f, 2)
    translation: np.ndarray  # (2,)


def design_matrix(start: int, stop: int) -> np.ndarray:
    """Rows ``(1, t)`` for t = start .. stop inclusive."""
    t = np.arange(start, stop + 1, dtype=np.float64)
    return np.stack([np.ones_like(t), t], axis=1)


def fit(X) -> np.ndarray:
    """Weights ``w`` (rows: intercept, slope; columns: x, y) minimising
    ``||A_h w - X||`` with ``A_h`` rows ``(1, t)``, t = 1..t_h.

    Solved from the 2x2 normal equations by Cramer's rule.
    """
    X = np.asarray(X, dtype=np.float64)
    t_h = X.shape[-2]
    if t_h < 2:
        raise InsufficientDataError(f"a linear fit needs at least 2 observed steps, got {t_h}")
    t = np.arange(1, t_h + 1, dtype=np.float64)
    s1, st, stt = float(t_h), t.sum(), (t * t).sum()
    bx, btx = X.sum(axis=-2), t @ X
    det = s1 * stt - st * st
    intercept = (stt * bx - st * btx) / det
    slope = (s1 * btx - st * bx) / det
    return np.stack([intercept, slope], axis=-2)


def fitted(w, t_h: int) -> np.ndarray:
    return design_matrix(1, t_h) @ np.asarray(w, dtype=np.float64)


def extrapolate(w, t_h: int, t_f: int) -> np.ndarray:
    return design_matrix(t_h + 1, t_h + t_f) @ np.asarray(w, dtype=np.float64)


def continuity_translate(pair: LinearPair, X) -> LinearPair:
    """Shift fit and base so the fit passes through the last observed point."""
    X = np.asarray(X, dtype=np.float64)
    shift = X[-1] - pair.fit[-1]
    new_fit = pair.fit + shift
    new_fit[-1] = X[-1]  # a + (b - a) can miss b by one ulp
    return LinearPair(new_fit, pair.base + shift, pair.translation + shift)


def linear_pair(X, t_f: int, translate: bool = True) -> LinearPair:
    X = np.asarray(X, dtype=np.float64)
    w = fit(X)
    pair = LinearPair(fitted(w, len(X)), extrapolate(w, len(X), t_f), np.zeros(2))
    return continuity_translate(pair, X) if translate else pair


def linear_pairs_batch(X: np.ndarray, t_f: int, translate: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`linear_pair` for (B, t_h, 2) observations -> (fits, bases)."""
    X = np.asarray(X, dtype=np.float64)
    t_h = X.shape[-2]
    W = fit(X)
    fits = design_matrix(1, t_h) @ W
    bases = design_matrix(t_h + 1, t_h + t_f) @ W
    if translate:
        shift = X[..., -1:, :] - fits[..., -1:, :]
        fits, bases = fits + shift, bases + shift
        fits[..., -1, :] = X[..., -1, :]
    return fits, bases
