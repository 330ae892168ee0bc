"""Self-sourced vibration: differential spectral embedding, the self-bias
Transformer, waypoint decoding and keypoint interpolation."""

from __future__ import annotations

import numpy as np

from . import spectrum
from .nn import tensor as T
from .nn.layers import MLP, ConfigError, Linear, ParamStore, Transformer, TransformerConfig
from .nn.tensor import DimensionError, Tensor

INTERP_MODES = ("hermite", "linear")


class InterpolationError(ValueError):
    pass


def outer_augment(S: np.ndarray) -> np.ndarray:
    """Append the flattened outer product of every spectrum row with itself:
    (..., T, M) -> (..., T, M + M*M)."""
    S = np.asarray(S, dtype=np.float64)
    outer = S[..., :, None] * S[..., None, :]
    return np.concatenate([S, outer.reshape(S.shape[:-1] + (-1,))], axis=-1)


class SpectralEmbedding:
    """One tanh layer over outer-product-augmented spectrum rows, width d/2."""

    def __init__(self, store: ParamStore, name: str, M: int, width: int):
        self.M = M
        self.fc = Linear(store, name, M + M * M, width)

    def __call__(self, S: np.ndarray) -> Tensor:
        T.check_finite(S, "spectrum")
        if S.shape[-1] != self.M:
            raise DimensionError(f"spectrum width {S.shape[-1]} != {self.M}")
        return T.tanh(self.fc(outer_augment(S)))


class DifferentialEncoder:
    """Mirrored embeddings of the observation and its linear fit; returns
    half their difference."""

    def __init__(self, store: ParamStore, M: int, d: int):
        self.net = SpectralEmbedding(store, "N_e", M, d // 2)
        self.net_l = SpectralEmbedding(store, "N_el", M, d // 2)

    def __call__(self, spec_obs: np.ndarray, spec_fit: np.ndarray) -> Tensor:
        return T.mul(T.sub(self.net(spec_obs), self.net_l(spec_fit)), 0.5)


def waypoint_indices(t_h: int, t_f: int, n_way: int) -> np.ndarray:
    """Equally spaced future step indices ending at ``t_h + t_f``."""
    if n_way < 1 or n_way > t_f:
        raise ConfigError(f"n_way must lie in [1, t_f={t_f}], got {n_way}")
    idx = np.rint(t_h + t_f * np.arange(1, n_way + 1) / n_way).astype(int)
    if np.any(np.diff(idx) <= 0):
        raise ConfigError(f"n_way={n_way} gives repeated waypoint steps for t_f={t_f}")
    return idx


def interpolate(keys: np.ndarray, values: np.ndarray, steps: np.ndarray,
                mode: str = "hermite") -> np.ndarray:
    """Interpolate keypoint ``values`` (n, dims) at integer ``keys`` onto ``steps``.

    ``hermite`` builds one cubic per segment that hits both end keypoints and
    whose one-step difference next to each keypoint equals that keypoint's
    velocity, so the step into and the step out of an interior keypoint
    match. Keypoint velocities are the mean of the two adjacent chord
    velocities (the single chord at the ends). Segments shorter than three
    steps cannot carry both conditions and fall back to a C1 Hermite cubic
    with the same slopes. ``linear`` is plain piecewise-linear.
    """
    keys = np.asarray(keys, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    steps = np.asarray(steps, dtype=np.float64)
    if keys.ndim != 1 or len(keys) < 2 or np.any(np.diff(keys) <= 0):
        raise InterpolationError(f"keypoint indices must be strictly increasing, got {keys}")
    if np.any(steps < keys[0]) or np.any(steps > keys[-1]):
        raise InterpolationError("query steps fall outside the keypoint span")
    if mode == "linear":
        return np.stack([np.interp(steps, keys, values[:, c]) for c in range(values.shape[1])],
                        axis=1)
    if mode != "hermite":
        raise ConfigError(f"unknown interpolation mode {mode!r}; expected one of {INTERP_MODES}")

    lengths = np.diff(keys)
    chords = np.diff(values, axis=0) / lengths[:, None]
    vel = np.empty_like(values)
    vel[0], vel[-1] = chords[0], chords[-1]
    vel[1:-1] = 0.5 * (chords[:-1] + chords[1:])

    out = np.empty((len(steps), values.shape[1]))
    seg = np.clip(np.searchsorted(keys, steps, side="left") - 1, 0, len(lengths) - 1)
    for i, n in enumerate(lengths):
        sel = seg == i
        if not np.any(sel):
            continue
        u = steps[sel] - keys[i]
        p0, p1, v0, v1 = values[i], values[i + 1], vel[i], vel[i + 1]
        if n >= 3:
            A = np.array([[n, n ** 2, n ** 3],
                          [1.0, 1.0, 1.0],
                          [1.0, 2 * n - 1, 3 * n * n - 3 * n + 1]])
            c = np.linalg.solve(A, np.stack([p1 - p0, v0, v1]))
            out[sel] = p0 + u[:, None] * c[0] + u[:, None] ** 2 * c[1] + u[:, None] ** 3 * c[2]
        else:
            s = u[:, None] / n
            h00, h10 = 2 * s ** 3 - 3 * s ** 2 + 1, s ** 3 - 2 * s ** 2 + s
            h01, h11 = -2 * s ** 3 + 3 * s ** 2, s ** 3 - s ** 2
            out[sel] = h00 * p0 + h10 * n * v0 + h01 * p1 + h11 * n * v1
    # keypoints come back exactly, not through the cubic
    hit = np.isin(steps, keys)
    if np.any(hit):
        out[hit] = values[np.searchsorted(keys, steps[hit])]
    return out


def interpolation_matrix(t_h: int, t_f: int, way_idx: np.ndarray, mode: str) -> np.ndarray:
    """Linear map (t_f, n_way) from waypoint biases to the per-step bias, with
    the implicit zero keypoint at step ``t_h``."""
    keys = np.concatenate([[t_h], way_idx])
    steps = np.arange(t_h + 1, t_h + t_f + 1)
    n = len(way_idx)
    L = np.zeros((t_f, n))
    for j in range(n):
        unit = np.zeros((n + 1, 1))
        unit[j + 1] = 1.0
        L[:, j] = interpolate(keys, unit, steps, mode)[:, 0]
    return L


def interpolate_bias(way: np.ndarray, way_idx: np.ndarray, t_h: int, t_f: int,
                     mode: str = "hermite") -> np.ndarray:
    """Per-step bias (t_f, 2) from waypoint biases (n_way, 2)."""
    keys = np.concatenate([[t_h], way_idx])
    vals = np.vstack([np.zeros((1, way.shape[1])), way])
    return interpolate(keys, vals, np.arange(t_h + 1, t_h + t_f + 1), mode)


class SelfVibration:
    """Transformer T_s plus decoder D_s; maps (Δf_e, z_s) to the self-bias."""

    def __init__(self, store: ParamStore, cfg: TransformerConfig, *, kind: str, t_h: int,
                 t_f: int, n_way: int, interp: str = "hermite", zero_init_decoder: bool = False):
        self.cfg, self.kind, self.t_h, self.t_f = cfg, kind, t_h, t_f
        self.T_h, self.M = spectrum.spectral_shape(kind, t_h)
        if kind == "haar" and n_way % 2:
            raise ConfigError(f"haar waypoints need an even n_way, got {n_way}")
        self.n_way = n_way
        self.T_way, _ = spectrum.spectral_shape(kind, n_way)
        self.way_idx = waypoint_indices(t_h, t_f, n_way)
        self.interp = interp
        self.L = interpolation_matrix(t_h, t_f, self.way_idx, interp)
        self.transformer = Transformer(store, "T_s", cfg, self.M)
        self.decoder = MLP(store, "D_s", [self.T_h * cfg.d, cfg.d, self.T_way * self.M],
                           last_init="zeros" if zero_init_decoder else "uniform")

    def feature(self, dfe: Tensor, spec_fit: np.ndarray, z_s: np.ndarray) -> Tensor:
        """f_s = T_s(concat(Δf_e, z_s), T(X_fit)); shapes (N, T_h, ...)."""
        if z_s.shape != dfe.shape:
            raise DimensionError(f"z_s shape {z_s.shape} != Δf_e shape {dfe.shape}")
        return self.transformer(T.concat([dfe, z_s], axis=-1), spec_fit)

    def waypoints(self, f_s: Tensor) -> Tensor:
        n = f_s.shape[0]
        flat = T.reshape(f_s, (n, self.T_h * self.cfg.d))
        spec = T.reshape(self.decoder(flat), (n, self.T_way, self.M))
        return spectrum.inverse_tensor(spec, self.kind, self.n_way)

    def bias(self, f_s: Tensor) -> Tensor:
        return T.matmul(self.L, self.waypoints(f_s))
