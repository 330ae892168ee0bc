"""Scenes, observation windows and dataset splits.

Plain-text scene format: UTF-8, one record per line, whitespace separated
``frame_id agent_id x y`` (integers, integers, meters, meters). Blank lines
and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CACHE_FORMAT = "revib-samples"
CACHE_VERSION = 1


class SceneParseError(ValueError):
    pass


class EmptySceneError(ValueError):
    pass


class DataConfigError(ValueError):
    pass


@dataclass
class Scene:
    frames: np.ndarray   # (n,) int
    agents: np.ndarray   # (n,) int
    xy: np.ndarray       # (n, 2) float
    frame_interval: float = 0.4
    name: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.agents = np.asarray(self.agents, dtype=np.int64)
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.frames)

    @classmethod
    def from_tracks(cls, tracks: dict[int, np.ndarray], start_frame: int = 0, frame_step: int = 1,
                    frame_interval: float = 0.4, name: str = "") -> "Scene":
        frames, agents, xy = [], [], []
        for agent in sorted(tracks):
            traj = np.asarray(tracks[agent], dtype=np.float64)
            frames.extend(start_frame + frame_step * np.arange(len(traj)))
            agents.extend([agent] * len(traj))
            xy.append(traj)
        xy_arr = np.concatenate(xy) if xy else np.zeros((0, 2))
        order = np.lexsort((np.asarray(agents), np.asarray(frames)))
        return cls(np.asarray(frames)[order], np.asarray(agents)[order], xy_arr[order],
                   frame_interval, name)

    def tracks(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """agent_id -> (sorted frames, positions)."""
        out = {}
        for agent in np.unique(self.agents):
            sel = self.agents == agent
            order = np.argsort(self.frames[sel], kind="stable")
            out[int(agent)] = (self.frames[sel][order], self.xy[sel][order])
        return out

    def frame_step(self) -> int:
        """Smallest positive gap between distinct frame ids (1 if single frame)."""
        u = np.unique(self.frames)
        return int(np.diff(u).min()) if len(u) > 1 else 1


@dataclass
class Sample:
    ego_obs: np.ndarray                # (t_h, 2)
    ego_future: np.ndarray             # (t_f, 2)
    neighbors: list[np.ndarray]        # each (t_h, 2)
    ego_id: int = -1
    start_frame: int = 0
    scene: str = ""
    neighbor_ids: list[int] = field(default_factory=list)
    category: str | None = None        # reserved for heterogeneous-agent labels

    def with_neighbors(self, neighbors: list[np.ndarray]) -> "Sample":
        return Sample(self.ego_obs, self.ego_future, list(neighbors), self.ego_id,
                      self.start_frame, self.scene, [-1] * len(neighbors), self.category)


@dataclass
class DatasetConfig:
    t_h: int = 8
    t_f: int = 12
    frame_interval: float = 0.4
    stride: int = 1
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def validate(self) -> None:
        if self.t_h < 2 or self.t_h % 2:
            raise DataConfigError(f"t_h must be even and >= 2, got {self.t_h}")
        if self.t_f < 1:
            raise DataConfigError(f"t_f must be >= 1, got {self.t_f}")
        if self.stride < 1:
            raise DataConfigError(f"stride must be >= 1, got {self.stride}")
        _check_ratios(self.split)


@dataclass
class SkipReport:
    agents_seen: int = 0
    agents_too_short: int = 0
    windows_with_gaps: int = 0
    neighbors_incomplete: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------- loading


def load_scene(path, frame_interval: float = 0.4) -> Scene:
    path = Path(path)
    frames, agents, xy = [], [], []
    seen: dict[tuple[int, int], int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise SceneParseError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            try:
                f, a = int(float(parts[0])), int(float(parts[1]))
                x, y = float(parts[2]), float(parts[3])
            except ValueError:
                raise SceneParseError(f"{path}:{lineno}: cannot parse {line!r}") from None
            if not (np.isfinite(x) and np.isfinite(y)):
                raise SceneParseError(f"{path}:{lineno}: non-finite coordinate")
            if (f, a) in seen:
                raise SceneParseError(f"{path}:{lineno}: duplicate record for frame {f}, "
                                      f"agent {a} (first at line {seen[(f, a)]})")
            seen[(f, a)] = lineno
            frames.append(f)
            agents.append(a)
            xy.append((x, y))
    if not frames:
        raise EmptySceneError(f"{path}: no records")
    return Scene(np.array(frames), np.array(agents), np.array(xy), frame_interval, path.stem)


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# frame_id agent_id x y\n")
        for f, a, (x, y) in zip(scene.frames, scene.agents, scene.xy):
            fh.write(f"{f} {a} {float(x)!r} {float(y)!r}\n")


# ---------------------------------------------------------------- windowing


def make_samples(scene: Scene, cfg: DatasetConfig,
                 report: SkipReport | None = None) -> list[Sample]:
    """One sample per (agent, window start) with t_h + t_f consecutive frames.

    Neighbors are the other agents present on all t_h observation frames.
    Output order: agent id, then start frame.
    """
    cfg.validate()
    report = report if report is not None else SkipReport()
    step = scene.frame_step()
    tracks = scene.tracks()
    lookup = {a: {int(f): i for i, f in enumerate(fr)} for a, (fr, _) in tracks.items()}
    span = cfg.t_h + cfg.t_f
    samples = []
    for agent, (frames, xy) in tracks.items():
        report.agents_seen += 1
        if len(frames) < span:
            report.agents_too_short += 1
            continue
        index = lookup[agent]
        for start in range(int(frames[0]), int(frames[-1]) - (span - 1) * step + 1,
                           cfg.stride * step):
            wanted = [start + k * step for k in range(span)]
            if any(f not in index for f in wanted):
                report.windows_with_gaps += 1
                continue
            rows = [index[f] for f in wanted]
            obs_frames = wanted[:cfg.t_h]
            neighbors, ids = [], []
            for other, (_, oxy) in tracks.items():
                if other == agent:
                    continue
                oidx = lookup[other]
                if all(f in oidx for f in obs_frames):
                    neighbors.append(oxy[[oidx[f] for f in obs_frames]])
                    ids.append(other)
                elif any(f in oidx for f in obs_frames):
                    report.neighbors_incomplete += 1
            samples.append(Sample(xy[rows[:cfg.t_h]], xy[rows[cfg.t_h:]], neighbors, agent,
                                  start, scene.name, ids))
    return samples


# ---------------------------------------------------------------- splits


def _check_ratios(ratios) -> None:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataConfigError(f"split ratios must be three non-negative numbers summing to 1, "
                              f"got {tuple(ratios)}")


def split_scenes(names: list[str], ratios, seed: int) -> tuple[list[str], list[str], list[str]]:
    """Shuffle scene names with ``seed`` and cut them by ``ratios``."""
    _check_ratios(ratios)
    names = sorted(set(names))
    order = np.random.default_rng(seed).permutation(len(names))
    n = len(names)
    n_train = int(round(ratios[0] * n))
    n_val = min(int(round(ratios[1] * n)), n - n_train)
    picked = [names[i] for i in order]
    return (sorted(picked[:n_train]), sorted(picked[n_train:n_train + n_val]),
            sorted(picked[n_train + n_val:]))


def split(samples: list[Sample], ratios, seed: int) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Disjoint, exhaustive split by scene, never by sample."""
    tr, va, te = (set(p) for p in split_scenes([s.scene for s in samples], ratios, seed))
    return ([s for s in samples if s.scene in tr], [s for s in samples if s.scene in va],
            [s for s in samples if s.scene in te])


# ---------------------------------------------------------------- sample cache


def _arr(a) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


def sample_to_dict(s: Sample) -> dict:
    return {"scene": s.scene, "ego_id": int(s.ego_id), "start_frame": int(s.start_frame),
            "ego_obs": _arr(s.ego_obs), "ego_future": _arr(s.ego_future),
            "neighbor_ids": [int(i) for i in s.neighbor_ids],
            "neighbors": [_arr(n) for n in s.neighbors], "category": s.category}


def sample_from_dict(d: dict) -> Sample:
    return Sample(np.asarray(d["ego_obs"], dtype=np.float64).reshape(-1, 2),
                  np.asarray(d["ego_future"], dtype=np.float64).reshape(-1, 2),
                  [np.asarray(n, dtype=np.float64).reshape(-1, 2) for n in d["neighbors"]],
                  d["ego_id"], d["start_frame"], d["scene"], list(d["neighbor_ids"]),
                  d.get("category"))


def dumps_cache(samples: list[Sample], cfg: DatasetConfig, extra: dict | None = None) -> bytes:
    doc = {"format": CACHE_FORMAT, "version": CACHE_VERSION,
           "config": {"t_h": cfg.t_h, "t_f": cfg.t_f, "frame_interval": cfg.frame_interval,
                      "stride": cfg.stride, "split": list(cfg.split)},
           "meta": extra or {}, "samples": [sample_to_dict(s) for s in samples]}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_cache(samples: list[Sample], cfg: DatasetConfig, path, extra: dict | None = None) -> str:
    data = dumps_cache(samples, cfg, extra)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_cache(path) -> tuple[list[Sample], DatasetConfig, dict]:
    doc = json.loads(Path(path).read_bytes())
    if doc.get("format") != CACHE_FORMAT:
        raise DataConfigError(f"{path}: not a {CACHE_FORMAT} file")
    if doc.get("version") != CACHE_VERSION:
        raise DataConfigError(f"{path}: unsupported cache version {doc.get('version')}")
    c = doc["config"]
    cfg = DatasetConfig(c["t_h"], c["t_f"], c["frame_interval"], c["stride"], tuple(c["split"]))
    return [sample_from_dict(d) for d in doc["samples"]], cfg, doc.get("meta", {})


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
