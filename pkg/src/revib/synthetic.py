"""Synthetic multi-agent scenes with a known social response rule.

Every agent observes a straight constant-velocity track. Its future is its
linear extrapolation plus, for each *converging* other agent, a smooth
sidestep perpendicular to its own heading. Agent j converges on agent i
when their linearly extrapolated futures come closer than ``radius`` at some
future step and are still closing at the present. The sidestep points away
from the side on which j passes (to the right for an exact head-on
approach), has amplitude ``amplitude * (1 - d_min / radius)`` and reaches it
at the step of closest approach. Without converging neighbors the future is
exactly linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import DataConfigError, Scene

KINDS = ("linear", "crossing", "follow", "group", "avoid")


@dataclass(frozen=True)
class SocialRule:
    radius: float = 1.5
    amplitude: float = 1.0


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def linear_track(p_now: np.ndarray, v: np.ndarray, t_h: int, t_f: int) -> tuple[np.ndarray, np.ndarray]:
    """Observation ending at ``p_now`` and its linear future, velocity per step."""
    k_obs = np.arange(-(t_h - 1), 1)[:, None]
    k_fut = np.arange(1, t_f + 1)[:, None]
    return p_now + k_obs * v, p_now + k_fut * v


def sidestep(obs_i: np.ndarray, obs_j: np.ndarray, t_f: int,
             rule: SocialRule = SocialRule()) -> np.ndarray:
    """Deviation (t_f, 2) that neighbor ``j`` induces on agent ``i``."""
    v_i, v_j = obs_i[-1] - obs_i[-2], obs_j[-1] - obs_j[-2]
    k = np.arange(0, t_f + 1)[:, None]
    rel = (obs_j[-1] + k * v_j) - (obs_i[-1] + k * v_i)
    dist = np.linalg.norm(rel, axis=1)
    k_star = int(np.argmin(dist))
    d_min = dist[k_star]
    speed = np.linalg.norm(v_i)
    if k_star == 0 or d_min >= rule.radius or speed == 0.0:
        return np.zeros((t_f, 2))
    left = np.array([-v_i[1], v_i[0]]) / speed
    side = float(rel[k_star] @ left)
    direction = -left if side >= 0.0 else left
    amp = rule.amplitude * (1.0 - d_min / rule.radius)
    prof = _smoothstep(np.arange(1, t_f + 1) / k_star)
    return amp * prof[:, None] * direction


def social_futures(observations: list[np.ndarray], t_f: int,
                   rule: SocialRule = SocialRule()) -> list[np.ndarray]:
    """Futures for every agent given all (linear) observations."""
    out = []
    for i, obs_i in enumerate(observations):
        v = obs_i[-1] - obs_i[-2]
        fut = obs_i[-1] + np.arange(1, t_f + 1)[:, None] * v
        for j, obs_j in enumerate(observations):
            if j != i:
                fut = fut + sidestep(obs_i, obs_j, t_f, rule)
        out.append(fut)
    return out


def converging(obs_i: np.ndarray, obs_j: np.ndarray, t_f: int,
               rule: SocialRule = SocialRule()) -> bool:
    return bool(np.any(sidestep(obs_i, obs_j, t_f, rule) != 0.0))


def _unit(angle: float) -> np.ndarray:
    return np.array([np.cos(angle), np.sin(angle)])


def _layout(kind: str, rng: np.random.Generator, t_h: int, t_f: int, dt: float):
    """Present positions and per-step velocities for one scene."""

    def speed():
        return rng.uniform(1.0, 1.6) * dt

    heading = rng.uniform(0.0, 2 * np.pi)
    p0 = rng.uniform(-5.0, 5.0, size=2)
    v0 = speed() * _unit(heading)
    left = _unit(heading + np.pi / 2)
    pos, vel = [p0], [v0]

    if kind == "linear":
        # well separated parallel-ish walkers never converge
        for n in range(1, rng.integers(2, 5)):
            pos.append(p0 + left * 8.0 * n + rng.uniform(-1, 1, 2))
            vel.append(speed() * _unit(heading + rng.uniform(-0.05, 0.05)))
    elif kind == "group":
        for n in range(1, rng.integers(2, 5)):
            pos.append(p0 + left * 1.0 * n)
            vel.append(v0.copy())
    elif kind in ("avoid", "crossing", "follow"):
        k_meet = int(rng.integers(1, t_f + 1))
        meet = p0 + k_meet * v0
        if kind == "avoid":
            ang = heading + np.pi + rng.uniform(-0.6, 0.6)
            vj = speed() * _unit(ang)
        elif kind == "crossing":
            vj = speed() * _unit(heading + rng.choice([-1.0, 1.0]) * np.pi / 2)
        else:
            vj = 0.5 * v0
        if rng.random() < 0.5:
            miss = rng.uniform(-0.6, 0.6)
        else:
            miss = rng.choice([-1.0, 1.0]) * rng.uniform(2.5, 5.0)
        pos.append(meet + miss * left - k_meet * vj)
        vel.append(vj)
        for _ in range(rng.integers(0, 3)):
            r, a = rng.uniform(15.0, 40.0), rng.uniform(0, 2 * np.pi)
            pos.append(p0 + r * _unit(a))
            vel.append(speed() * _unit(a + rng.uniform(-0.5, 0.5)))
    else:
        raise DataConfigError(f"unknown synthetic kind {kind!r}; expected one of {KINDS}")
    return pos, vel


def generate_scene_tracks(kind: str, rng: np.random.Generator, t_h: int = 8, t_f: int = 12,
                          dt: float = 0.4, rule: SocialRule = SocialRule()) -> dict[int, np.ndarray]:
    pos, vel = _layout(kind, rng, t_h, t_f, dt)
    obs = [linear_track(p, v, t_h, t_f)[0] for p, v in zip(pos, vel)]
    if kind == "linear":
        fut = [linear_track(p, v, t_h, t_f)[1] for p, v in zip(pos, vel)]
    else:
        fut = social_futures(obs, t_f, rule)
    return {i: np.vstack([o, f]) for i, (o, f) in enumerate(zip(obs, fut))}


def generate_synthetic(kind: str, n_scenes: int, seed: int, t_h: int = 8, t_f: int = 12,
                       dt: float = 0.4, rule: SocialRule = SocialRule()) -> list[Scene]:
    if kind not in KINDS:
        raise DataConfigError(f"unknown synthetic kind {kind!r}; expected one of {KINDS}")
    if n_scenes < 1:
        raise DataConfigError("n_scenes must be >= 1")
    rng = np.random.default_rng([seed, KINDS.index(kind)])
    scenes = []
    for s in range(n_scenes):
        tracks = generate_scene_tracks(kind, rng, t_h, t_f, dt, rule)
        scenes.append(Scene.from_tracks(tracks, frame_interval=dt, name=f"{kind}-{s:04d}"))
    return scenes


def generate_mixed(kinds: list[str], n_scenes: int, seed: int, **kw) -> list[Scene]:
    """``n_scenes`` of each kind in ``kinds``."""
    out = []
    for kind in kinds:
        out.extend(generate_synthetic(kind, n_scenes, seed, **kw))
    return out
