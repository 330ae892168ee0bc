"""Social-sourced vibration: resonance features, angle-partitioned gathering
into the resonance matrix, and the re-bias Transformer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectrum
from .nn import tensor as T
from .nn.layers import MLP, Linear, ParamStore, Transformer, TransformerConfig
from .nn.tensor import DimensionError, Tensor
from .self_vibration import SpectralEmbedding

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PolarOffset:
    theta: float
    distance: float
    coincident: bool = False


def polar_offset(p_ego, p_nb) -> PolarOffset:
    """Angle in [0, 2pi) and distance of the neighbor as seen from the ego."""
    dx, dy = np.asarray(p_nb, dtype=np.float64) - np.asarray(p_ego, dtype=np.float64)
    dist = float(np.hypot(dx, dy))
    if dist == 0.0:
        return PolarOffset(0.0, 0.0, True)
    return PolarOffset(float(np.mod(np.arctan2(dy, dx), TWO_PI)), dist)


def polar_offsets(p_ego: np.ndarray, p_nb: np.ndarray) -> np.ndarray:
    """Vectorised :func:`polar_offset`: rows (distance, theta)."""
    delta = np.asarray(p_nb, dtype=np.float64) - np.asarray(p_ego, dtype=np.float64)
    dist = np.hypot(delta[..., 0], delta[..., 1])
    theta = np.mod(np.arctan2(delta[..., 1], delta[..., 0]), TWO_PI)
    theta = np.where(dist == 0.0, 0.0, theta)
    return np.stack([dist, theta], axis=-1)


def partition_index(theta, n_theta: int) -> np.ndarray:
    """0-based partition n with 2pi n/N <= theta < 2pi (n+1)/N."""
    idx = np.floor(np.asarray(theta) * n_theta / TWO_PI).astype(np.int64)
    return np.clip(idx, 0, n_theta - 1)


def relative_spectrum(X: np.ndarray, kind: str) -> np.ndarray:
    """Spectrum of trajectories moved so that they end at the origin: (..., t, 2) -> (..., T, M)."""
    X = np.asarray(X, dtype=np.float64)
    return spectrum.forward_batch(X - X[..., -1:, :], kind)


@dataclass
class ResonanceMatrix:
    rows: Tensor                # (B, N_theta, d)
    counts: np.ndarray          # (B, N_theta)
    features: Tensor | None = None   # (P, d/2) resonance features, pair order
    positions: Tensor | None = None  # (P, d/2) embedded positions


class ResonanceEncoder:
    """N_r1 (relative spectral embedding), N_r2 (pair comparison) and the
    position embedding, plus angle-based gathering."""

    def __init__(self, store: ParamStore, M: int, T_h: int, d: int, n_theta: int):
        self.d, self.T_h, self.n_theta = d, T_h, n_theta
        self.embed = SpectralEmbedding(store, "N_r1", M, d // 2)
        self.compare = MLP(store, "N_r2", [T_h * (d // 2), d, d // 2], out_act="tanh")
        self.position = Linear(store, "N_p", 2, d // 2)

    def relative_embed(self, spec_rel: np.ndarray) -> Tensor:
        return self.embed(spec_rel)

    def resonance_feature(self, f_i: Tensor, f_j: Tensor) -> Tensor:
        f_i, f_j = T.as_tensor(f_i), T.as_tensor(f_j)
        if f_i.shape != f_j.shape:
            raise DimensionError(f"resonance pair shapes differ: {f_i.shape} vs {f_j.shape}")
        prod = T.mul(f_i, f_j)
        lead = prod.shape[:-2]
        return self.compare(T.reshape(prod, lead + (prod.shape[-2] * prod.shape[-1],)))

    def position_embed(self, polar: np.ndarray) -> Tensor:
        return T.tanh(self.position(polar))

    def gather(self, features: Tensor, polar: np.ndarray, owner: np.ndarray,
               n_samples: int) -> ResonanceMatrix:
        """Mean of concat(f, f_p) per (sample, partition); empty partitions are zero.

        ``polar`` rows are (distance, theta) for each neighbor pair and
        ``owner`` names the sample each pair belongs to.
        """
        polar = np.asarray(polar, dtype=np.float64).reshape(-1, 2)
        owner = np.asarray(owner, dtype=np.int64)
        f_p = self.position_embed(polar)
        part = partition_index(polar[:, 1], self.n_theta)
        seg = owner * self.n_theta + part
        n_seg = n_samples * self.n_theta
        counts = np.bincount(seg, minlength=n_seg).reshape(n_samples, self.n_theta)
        if len(owner) == 0:
            rows = T.Tensor(np.zeros((n_samples, self.n_theta, self.d)))
            return ResonanceMatrix(rows, counts, features, f_p)
        both = T.concat([features, f_p], axis=-1)
        rows = T.reshape(T.segment_mean(both, seg, n_seg), (n_samples, self.n_theta, self.d))
        return ResonanceMatrix(rows, counts, features, f_p)

    def __call__(self, spec_rel_ego: np.ndarray, spec_rel_nb: np.ndarray, polar: np.ndarray,
                 owner: np.ndarray) -> ResonanceMatrix:
        n = spec_rel_ego.shape[0]
        f_ego = self.relative_embed(spec_rel_ego)
        if len(owner) == 0:
            empty = T.Tensor(np.zeros((0, self.d // 2)))
            return self.gather(empty, np.zeros((0, 2)), np.zeros(0, dtype=np.int64), n)
        f_nb = self.relative_embed(spec_rel_nb)
        feats = self.resonance_feature(T.take(f_ego, np.asarray(owner)), f_nb)
        return self.gather(feats, polar, owner, n)


def assemble_re_source(dfe: Tensor, z_r: np.ndarray, F_R: Tensor) -> Tensor:
    """Encoder sequence for T_r: [concat(Δf_e, z_r) ; F_R] along the sequence axis.

    concat(Δf_e, z_r) is already width d, so no zero padding is needed.
    """
    if z_r.shape != dfe.shape:
        raise DimensionError(f"z_r shape {z_r.shape} != Δf_e shape {dfe.shape}")
    head = T.concat([dfe, z_r], axis=-1)
    if head.shape[-1] != F_R.shape[-1]:
        raise DimensionError(f"cannot stack width {head.shape[-1]} with resonance width "
                             f"{F_R.shape[-1]}")
    return T.concat([head, F_R], axis=-2)


class ReBias:
    """Transformer T_r plus decoder D_r."""

    def __init__(self, store: ParamStore, cfg: TransformerConfig, *, kind: str, t_h: int,
                 t_f: int, n_theta: int, zero_init_decoder: bool = False):
        self.cfg, self.kind, self.t_h, self.t_f, self.n_theta = cfg, kind, t_h, t_f, n_theta
        self.T_h, self.M = spectrum.spectral_shape(kind, t_h)
        self.T_f, _ = spectrum.spectral_shape(kind, t_f)
        self.transformer = Transformer(store, "T_r", cfg, self.M)
        self.decoder = MLP(store, "D_r", [self.T_h * cfg.d, cfg.d, self.T_f * self.M],
                           last_init="zeros" if zero_init_decoder else "uniform")

    def feature(self, dfe: Tensor, F_R: Tensor, spec_diff: np.ndarray, z_r: np.ndarray) -> Tensor:
        src = assemble_re_source(dfe, z_r, F_R)
        if src.shape[1] != self.T_h + self.n_theta:
            raise DimensionError(f"T_r source length {src.shape[1]} != "
                                 f"T_h + N_theta = {self.T_h + self.n_theta}")
        return self.transformer(src, spec_diff)

    def bias(self, f_r: Tensor) -> Tensor:
        n = f_r.shape[0]
        flat = T.reshape(f_r, (n, self.T_h * self.cfg.d))
        spec = T.reshape(self.decoder(flat), (n, self.T_f, self.M))
        return spectrum.inverse_tensor(spec, self.kind, self.t_f)
