"""Toy fixed-horizon environments, scripted experts and the Sine transition data.

Environments are vectorised: ``reset`` returns a batch of states and
``step`` advances all of them at once. Every episode lasts exactly
``spec.horizon`` steps; reaching the goal never ends an episode early.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SINE_FREQ = 6.0 * np.pi
SINE_NOISE = 0.05


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_low: float
    action_high: float
    horizon: int
    action_noise_sigma: float = 0.0
    success: str = ""


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    s_next: np.ndarray


@dataclass
class ExpertDataset:
    s: np.ndarray  # (N, D)
    s_next: np.ndarray  # (N, D)
    ends: np.ndarray  # (n_trajectories,) exclusive end offset of each trajectory
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64)
        self.s_next = np.asarray(self.s_next, dtype=np.float64)
        self.ends = np.asarray(self.ends, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.s)

    @property
    def state_dim(self) -> int:
        return self.s.shape[1]

    @property
    def n_trajectories(self) -> int:
        return len(self.ends)

    def transitions(self) -> list[Transition]:
        return [Transition(a, b) for a, b in zip(self.s, self.s_next)]

    def subsample(self, k: int) -> "ExpertDataset":
        """First ``k`` trajectories; a prefix of the original, so nested across k."""
        if not 1 <= k <= self.n_trajectories:
            raise ValueError(f"cannot keep {k} of {self.n_trajectories} trajectories")
        end = int(self.ends[k - 1])
        meta = dict(self.meta, n_trajectories=k)
        if "successes" in meta:
            meta["successes"] = list(meta["successes"][:k])
        return ExpertDataset(self.s[:end], self.s_next[:end], self.ends[:k], meta)


# ------------------------------------------------------------------ Sine


def sine_mean(s):
    return np.sin(SINE_FREQ * np.asarray(s)) + np.asarray(s)


def sine_sample(n: int = 25000, rng: np.random.Generator | None = None, seed: int | None = None) -> ExpertDataset:
    """``s ~ U[0, 1]``, ``s' = sin(6 pi s) + s + N(0, 0.05^2)``, unclamped."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    s = rng.uniform(0.0, 1.0, size=n)
    s2 = sine_mean(s) + rng.normal(0.0, SINE_NOISE, size=n)
    meta = {"env": "sine", "seed": seed, "n_trajectories": n}
    # independent pairs: every transition is its own length-1 trajectory
    return ExpertDataset(s[:, None], s2[:, None], np.arange(1, n + 1), meta)


def sine_manifold_distance(s, s_next, n_grid: int = 20001) -> np.ndarray:
    """Euclidean distance from points ``(s, s')`` to the curve ``s' = sin(6 pi s) + s`` on [0, 1]."""
    s = np.ravel(s)
    s_next = np.ravel(s_next)
    xs = np.linspace(0.0, 1.0, n_grid)
    ys = sine_mean(xs)
    out = np.empty(len(s))
    for i0 in range(0, len(s), 256):
        a, b = s[i0:i0 + 256, None], s_next[i0:i0 + 256, None]
        out[i0:i0 + 256] = np.sqrt(((a - xs) ** 2 + (b - ys) ** 2).min(axis=1))
    return out


# ------------------------------------------------------------- PointReach


def point_reach_step(state, action, noise=None) -> np.ndarray:
    """Move the point by the clamped action (plus optional noise), clamp to [-1, 1]^2."""
    state = np.asarray(state, dtype=np.float64)
    a = np.clip(np.asarray(action, dtype=np.float64), -PointReach.MAX_STEP, PointReach.MAX_STEP)
    if noise is not None:
        a = a + noise
    nxt = state.copy()
    nxt[..., :2] = np.clip(state[..., :2] + a, -1.0, 1.0)
    return nxt


class PointReach:
    """Wall-free 2-D reaching: state ``(x, y, gx, gy)``, action ``(dx, dy)``."""

    MAX_STEP = 0.1
    GOAL_RADIUS = 0.1
    MIN_START_DIST = 0.4

    def __init__(self, action_noise_sigma: float = 0.0, horizon: int = 60, expert_noise: float = 0.01):
        self.spec = EnvSpec("point_reach", 4, 2, -self.MAX_STEP, self.MAX_STEP, horizon,
                            action_noise_sigma, f"final distance to goal < {self.GOAL_RADIUS}")
        self.expert_noise = expert_noise

    def reset(self, n: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((n, 4))
        todo = np.arange(n)
        while len(todo):
            cand = rng.uniform(-1.0, 1.0, size=(len(todo), 4))
            ok = np.linalg.norm(cand[:, :2] - cand[:, 2:], axis=1) >= self.MIN_START_DIST
            out[todo[ok]] = cand[ok]
            todo = todo[~ok]
        return out

    def step(self, states, actions, rng: np.random.Generator | None = None) -> np.ndarray:
        noise = None
        sigma = self.spec.action_noise_sigma
        if sigma > 0:
            noise = sigma * rng.standard_normal(np.shape(actions))
        return point_reach_step(states, actions, noise)

    def distance(self, states) -> np.ndarray:
        states = np.atleast_2d(states)
        return np.linalg.norm(states[:, :2] - states[:, 2:], axis=1)

    def success(self, states) -> np.ndarray:
        return self.distance(states) < self.GOAL_RADIUS

    def native_reward(self, states, next_states) -> np.ndarray:
        return -self.distance(next_states)

    def expert_action(self, states, rng: np.random.Generator) -> np.ndarray:
        states = np.atleast_2d(states)
        a = np.clip(states[:, 2:] - states[:, :2], -self.MAX_STEP, self.MAX_STEP)
        return a + self.expert_noise * rng.standard_normal(a.shape)


# -------------------------------------------------------------- SineTrack


def sine_track_step(state, action) -> np.ndarray:
    return np.clip(np.asarray(state, dtype=np.float64) + np.clip(action, -1.0, 1.0), 0.0, 1.0)


class SineTrack:
    """1-D state in [0, 1]; the scripted expert follows the Sine manifold."""

    def __init__(self, action_noise_sigma: float = 0.0, horizon: int = 32):
        self.spec = EnvSpec("sine_track", 1, 1, -1.0, 1.0, horizon, action_noise_sigma,
                            "mean distance of transitions to the Sine manifold")

    def reset(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=(n, 1))

    def step(self, states, actions, rng: np.random.Generator | None = None) -> np.ndarray:
        a = np.clip(actions, -1.0, 1.0)
        sigma = self.spec.action_noise_sigma
        if sigma > 0:
            a = a + sigma * rng.standard_normal(np.shape(a))
        return sine_track_step(states, a)

    def success(self, states) -> np.ndarray:
        # no goal: success is undefined, report all False
        return np.zeros(len(np.atleast_2d(states)), dtype=bool)

    def native_reward(self, states, next_states) -> np.ndarray:
        return -np.abs(np.ravel(next_states) - np.clip(sine_mean(np.ravel(states)), 0.0, 1.0))

    def expert_action(self, states, rng: np.random.Generator) -> np.ndarray:
        s = np.atleast_2d(states)
        return np.sin(SINE_FREQ * s) + SINE_NOISE * rng.standard_normal(s.shape)


ENVS = {"point_reach": PointReach, "sine_track": SineTrack}


def make_env(name: str, action_noise_sigma: float = 0.0):
    try:
        cls = ENVS[name]
    except KeyError:
        raise ValueError(f"unknown env {name!r}; known: {sorted(ENVS)}") from None
    return cls(action_noise_sigma=action_noise_sigma)


def run_episodes(env, act_fn, n: int, rng: np.random.Generator):
    """Roll ``n`` episodes in lockstep. Returns states of shape (horizon+1, n, D)."""
    states = [env.reset(n, rng)]
    for _ in range(env.spec.horizon):
        states.append(env.step(states[-1], act_fn(states[-1]), rng))
    return np.stack(states)


def generate_expert(env, n_trajectories: int, rng: np.random.Generator | None = None,
                    seed: int | None = None) -> ExpertDataset:
    """State-only demonstrations from the env's scripted expert (actions are dropped)."""
    if not hasattr(env, "expert_action"):
        raise ValueError(f"env {type(env).__name__} has no scripted expert")
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    traj = run_episodes(env, lambda s: env.expert_action(s, rng), n_trajectories, rng)
    H, D = env.spec.horizon, env.spec.state_dim
    s = traj[:-1].transpose(1, 0, 2).reshape(-1, D)
    s2 = traj[1:].transpose(1, 0, 2).reshape(-1, D)
    meta = {"env": env.spec.name, "seed": seed, "n_trajectories": n_trajectories,
            "successes": [bool(x) for x in env.success(traj[-1])]}
    return ExpertDataset(s, s2, H * np.arange(1, n_trajectories + 1), meta)


# ------------------------------------------------------------- file format

DATASET_MAGIC = b"DIFO"
DATASET_VERSION = 1


class DatasetFormatError(ValueError):
    pass


def write_dataset(path, ds: ExpertDataset) -> None:
    header = {
        "env": ds.meta.get("env"),
        "state_dim": ds.state_dim,
        "n_transitions": len(ds),
        "n_trajectories": ds.n_trajectories,
        "seed": ds.meta.get("seed"),
    }
    if "successes" in ds.meta:
        header["successes"] = list(ds.meta["successes"])
    rec = np.concatenate([ds.s, ds.s_next], axis=1).astype("<f4")
    blob = (DATASET_MAGIC + bytes([DATASET_VERSION])
            + json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
            + rec.tobytes() + ds.ends.astype("<u4").tobytes())
    try:
        Path(path).write_bytes(blob)
    except OSError as e:
        raise OSError(f"cannot write dataset to {path}: {e.strerror}") from e


def read_dataset(path) -> ExpertDataset:
    raw = Path(path).read_bytes()
    if len(raw) < 5 or raw[:4] != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic")
    if raw[4] != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {raw[4]}")
    nl = raw.find(b"\n", 5)
    if nl < 0:
        raise DatasetFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[5:nl].decode("utf-8"))
        n, d, k = int(header["n_transitions"]), int(header["state_dim"]), int(header["n_trajectories"])
    except (ValueError, KeyError) as e:
        raise DatasetFormatError(f"{path}: corrupt header ({e})") from None
    body = raw[nl + 1:]
    need = 4 * (n * 2 * d + k)
    if len(body) != need:
        raise DatasetFormatError(f"{path}: expected {need} payload bytes, found {len(body)}")
    rec = np.frombuffer(body[:4 * n * 2 * d], dtype="<f4").reshape(n, 2 * d)
    ends = np.frombuffer(body[4 * n * 2 * d:], dtype="<u4").astype(np.int64)
    if k and (np.any(np.diff(ends) <= 0) or ends[-1] != n):
        raise DatasetFormatError(f"{path}: invalid trajectory boundaries")
    meta = {"env": header.get("env"), "seed": header.get("seed"), "n_trajectories": k}
    if "successes" in header:
        meta["successes"] = header["successes"]
    return ExpertDataset(rec[:, :d].astype(np.float64), rec[:, d:].astype(np.float64), ends, meta)


def quantize(ds: ExpertDataset) -> ExpertDataset:
    """Round states through float32, matching what a write/read cycle yields."""
    return replace(ds, s=ds.s.astype(np.float32).astype(np.float64),
                   s_next=ds.s_next.astype(np.float32).astype(np.float64))
