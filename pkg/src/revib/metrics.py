"""Best-of-K displacement metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np


def _check(Y, preds) -> tuple[np.ndarray, np.ndarray]:
    Y = np.asarray(Y, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim == Y.ndim:
        preds = preds[None]
    if preds.shape[0] == 0:
        raise ValueError("minADE/minFDE need K >= 1 predictions")
    if preds.shape[1:] != Y.shape:
        raise ValueError(f"prediction shape {preds.shape[1:]} != ground truth {Y.shape}")
    return Y, preds


def min_ade(Y, preds) -> float:
    """min over k of the mean per-step Euclidean error; ``preds`` is (K, t_f, 2)."""
    Y, preds = _check(Y, preds)
    return float(np.linalg.norm(preds - Y, axis=-1).mean(axis=-1).min())


def min_fde(Y, preds) -> float:
    """min over k of the final-step Euclidean error."""
    Y, preds = _check(Y, preds)
    return float(np.linalg.norm(preds[:, -1] - Y[-1], axis=-1).min())


@dataclass
class MetricReport:
    ade: np.ndarray
    fde: np.ndarray
    K: int
    ids: list[str]

    @property
    def mean_ade(self) -> float:
        return float(np.mean(self.ade)) if len(self.ade) else float("nan")

    @property
    def mean_fde(self) -> float:
        return float(np.mean(self.fde)) if len(self.fde) else float("nan")

    def summary(self) -> dict:
        return {"K": self.K, "n_samples": len(self.ade), "minADE": self.mean_ade,
                "minFDE": self.mean_fde}

    def write_json(self, path, extra: dict | None = None) -> None:
        doc = self.summary()
        if extra:
            doc.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "minADE", "minFDE"])
            for sid, a, f in zip(self.ids, self.ade, self.fde):
                w.writerow([sid, repr(float(a)), repr(float(f))])


def report(futures: np.ndarray, preds: np.ndarray, ids: list[str] | None = None) -> MetricReport:
    """Per-sample metrics for ``futures`` (B, t_f, 2) and ``preds`` (B, K, t_f, 2)."""
    futures = np.asarray(futures, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    if preds.shape[1] < 1:
        raise ValueError("minADE/minFDE need K >= 1 predictions")
    err = np.linalg.norm(preds - futures[:, None], axis=-1)
    ids = ids if ids is not None else [str(i) for i in range(len(futures))]
    return MetricReport(err.mean(axis=-1).min(axis=1), err[:, :, -1].min(axis=1),
                        preds.shape[1], ids)
