"""Analysis tools: bias energy shares, vibration directions, social
modification grids, resonance/position contributions and feature PCA."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataio import Sample
from .model import Batch, ReModel


class DiagnosticError(ValueError):
    pass


# ---------------------------------------------------------------- energy


def bias_energy_shares(base, self_bias, re_bias, origin=None) -> dict[str, float]:
    """Percentage of the summed squared norm held by each term.

    Inputs are (..., t_f, 2) stacks of the three terms. Energies are averaged
    over every leading index. ``origin`` (broadcastable to ``base``) is
    subtracted from the linear base first, e.g. the last observed position to
    measure the base as displacement rather than absolute coordinates.
    """
    base = np.asarray(base, dtype=np.float64)
    if origin is not None:
        base = base - np.asarray(origin, dtype=np.float64)
    energies = {name: float((np.asarray(x, dtype=np.float64) ** 2).sum(axis=(-2, -1)).mean())
                for name, x in (("linear", base), ("self", self_bias), ("re", re_bias))}
    total = sum(energies.values())
    if total <= 0.0:
        raise DiagnosticError("all bias terms have zero energy; shares are undefined")
    return {k: 100.0 * v / total for k, v in energies.items()}


# ---------------------------------------------------------------- directions


def vibration_direction(points) -> float:
    """Acute angle in [0, pi/2] between the total-least-squares line through
    ``points`` (K, 2) and the horizontal axis."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise DiagnosticError("vibration direction needs K >= 2 points in 2D")
    centered = pts - pts.mean(axis=0)
    scale = np.abs(centered).max()
    if scale == 0.0:
        raise DiagnosticError("all points coincide; the direction is undefined")
    _, _, vt = np.linalg.svd(centered / scale)
    dx, dy = vt[0]
    return float(np.arctan2(abs(dy), abs(dx)))


def vibration_angles(self_bias: np.ndarray, re_bias: np.ndarray) -> np.ndarray:
    """(B, 2) angles (theta_s, theta_r) from (B, K, t_f, 2) bias stacks; NaN
    where a direction is degenerate."""
    out = np.full((self_bias.shape[0], 2), np.nan)
    for b in range(self_bias.shape[0]):
        for c, arr in enumerate((self_bias, re_bias)):
            try:
                out[b, c] = vibration_direction(arr[b, :, -1])
            except DiagnosticError:
                pass
    return out


# ---------------------------------------------------------------- interventions


@dataclass
class GridSpec:
    x0: float
    y0: float
    x1: float
    y1: float
    resolution: float

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        nx = int(np.floor((self.x1 - self.x0) / self.resolution + 1e-9)) + 1
        ny = int(np.floor((self.y1 - self.y0) / self.resolution + 1e-9)) + 1
        return self.x0 + self.resolution * np.arange(nx), self.y0 + self.resolution * np.arange(ny)

    def cells(self) -> np.ndarray:
        xs, ys = self.axes()
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    @classmethod
    def around(cls, center, half_width: float, resolution: float) -> "GridSpec":
        cx, cy = center
        return cls(cx - half_width, cy - half_width, cx + half_width, cy + half_width, resolution)


@dataclass
class InterventionGrid:
    cells: np.ndarray       # (n, 2) placement offsets (x, y), meters
    values: np.ndarray      # (n,) c(x, y | X_m), meters
    flagged: np.ndarray     # (n,) bool, cell coincides with the ego's current position
    manual: np.ndarray | None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "c", "at_ego"])
            for (x, y), c, f in zip(self.cells, self.values, self.flagged):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(c)), int(f)])


def _paired_predict(model: ReModel, sample: Sample, cands: list[Sample], K: int,
                    seed: int | None, chunk: int = 128) -> np.ndarray:
    """Max per-step change of each candidate's prediction against ``sample``.

    The reference sample rides in every chunk so both passes go through the
    same batched arithmetic; otherwise BLAS blocking alone leaves ~1e-16 noise.
    """
    n_k = max(K, 1)
    if K == 0:
        z_s = np.zeros((1, 1) + model.noise_shape)
        z_r = np.zeros_like(z_s)
    else:
        z_s, z_r = model.sample_noise(np.random.default_rng(seed), 1, K)
    out = []
    for lo in range(0, len(cands), chunk):
        part = [sample] + cands[lo:lo + chunk]
        n = len(part)
        f = model.forward(Batch(part, model.cfg), np.repeat(z_s, n, axis=0),
                          np.repeat(z_r, n, axis=0))
        pred = f.total.data.reshape(n, n_k, model.cfg.t_f, 2)
        diff = np.linalg.norm(pred[1:] - pred[:1], axis=-1)
        out.append(diff.max(axis=(1, 2)))
    return np.concatenate(out) if out else np.zeros(0)


def social_modification(model: ReModel, sample: Sample, manual, offsets, K: int = 0,
                        seed: int | None = 0) -> np.ndarray:
    """c(x, y | X_m) for each placement offset: the largest per-step change of
    the ego prediction after adding ``manual + (x, y)`` as a neighbor.

    ``K = 0`` compares equilibrium (z = 0) predictions; ``K > 0`` compares
    fixed-seed K-sets with identical noise in both passes and returns the
    largest change over k. ``manual=None`` adds nothing (both passes equal).
    """
    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 2)
    if manual is None:
        return np.zeros(len(offsets))
    manual = np.asarray(manual, dtype=np.float64)
    if manual.shape != sample.ego_obs.shape:
        raise DiagnosticError(f"manual trajectory shape {manual.shape} != {sample.ego_obs.shape}")
    cand = [sample.with_neighbors(list(sample.neighbors) + [manual + off]) for off in offsets]
    return _paired_predict(model, sample, cand, K, seed)


def social_modification_grid(model: ReModel, sample: Sample, manual, grid: GridSpec,
                             K: int = 0, seed: int | None = 0) -> InterventionGrid:
    cells = grid.cells()
    values = social_modification(model, sample, manual, cells, K, seed)
    if manual is None:
        flagged = np.zeros(len(cells), dtype=bool)
    else:
        end = cells + np.asarray(manual)[-1]
        flagged = np.all(np.isclose(end, sample.ego_obs[-1], atol=1e-12), axis=1)
    return InterventionGrid(cells, values, flagged, None if manual is None else np.asarray(manual))


def walking_manual(heading, speed_per_step: float, t_h: int) -> np.ndarray:
    """Origin-anchored straight trajectory moving along ``heading`` (unit or
    angle), ending at the origin."""
    h = np.asarray(heading, dtype=np.float64)
    if h.ndim == 0:
        h = np.array([np.cos(h), np.sin(h)])
    h = h / np.linalg.norm(h)
    return np.arange(-(t_h - 1), 1)[:, None] * speed_per_step * h


# ---------------------------------------------------------------- contributions


def first_layer_blocks(model: ReModel) -> tuple[np.ndarray, np.ndarray]:
    """(w_res, w_pos): rows of T_r's first linear layer that act on the
    resonance-feature half and the position half of each resonance row."""
    w = model.re_bias.transformer.enc_in.w.data
    half = model.cfg.d // 2
    return w[:half], w[half:]


def contribution_split(w_res, w_pos, f, f_p) -> tuple[np.ndarray, np.ndarray]:
    """Squared norms of ``f @ w_res`` and ``f_p @ w_pos`` per row."""
    w_res, w_pos = np.asarray(w_res), np.asarray(w_pos)
    f, f_p = np.atleast_2d(f), np.atleast_2d(f_p)
    if f.shape[-1] != w_res.shape[0] or f_p.shape[-1] != w_pos.shape[0]:
        raise DiagnosticError(f"weight blocks {w_res.shape}/{w_pos.shape} do not match "
                              f"feature widths {f.shape[-1]}/{f_p.shape[-1]}")
    return ((f @ w_res) ** 2).sum(axis=-1), ((f_p @ w_pos) ** 2).sum(axis=-1)


def resonance_rows(model: ReModel, sample: Sample) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(F_R rows (N_theta, d), counts (N_theta,), per-neighbor features (P, d/2))."""
    batch = Batch([sample], model.cfg)
    R = model.resonance(batch.spec_rel_ego, batch.spec_rel_nb, batch.polar, batch.owner)
    feats = R.features.data if R.features is not None else np.zeros((0, model.cfg.d // 2))
    return R.rows.data[0], R.counts[0], feats


def partition_contributions(model: ReModel, sample: Sample) -> tuple[np.ndarray, np.ndarray]:
    rows, _, _ = resonance_rows(model, sample)
    half = model.cfg.d // 2
    w_res, w_pos = first_layer_blocks(model)
    return contribution_split(w_res, w_pos, rows[:, :half], rows[:, half:])


# ---------------------------------------------------------------- PCA


def feature_pca(features, n_components: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Projection onto the top principal axes and explained-variance ratios."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise DiagnosticError("PCA needs at least 2 feature rows")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (len(X) - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    k = min(n_components, X.shape[1])
    total = vals.sum()
    ratio = vals[:k] / total if total > 0 else np.zeros(k)
    proj = Xc @ vecs[:, :k]
    if k < n_components:
        proj = np.hstack([proj, np.zeros((len(X), n_components - k))])
        ratio = np.concatenate([ratio, np.zeros(n_components - k)])
    return proj, ratio
