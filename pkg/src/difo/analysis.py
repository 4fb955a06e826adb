"""Reward grids, generated trajectories, ablation studies and plots."""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .discriminators import DiffusionDiscriminator, Variant
from .envs import ExpertDataset, make_env, sine_mean
from .nets import C_E
from .trainer import TrainConfig, metrics_csv, train

GRID_COLUMNS = ("s", "s_next", "reward")
TRAJ_COLUMNS = ("step",)
ABLATION_COLUMNS = ("study", "member", "seed", "round", "env_steps", "eval_success", "eval_return")
# Bumped whenever a column list above changes.
CSV_SCHEMA_VERSION = 1


class AnalysisError(ValueError):
    pass


# ------------------------------------------------------------------ reward grids


@dataclass
class RewardGrid:
    s_axis: np.ndarray
    s_next_axis: np.ndarray
    values: np.ndarray  # values[i, j] = reward(s_axis[i], s_next_axis[j])

    @property
    def resolution(self) -> int:
        return len(self.s_axis)

    def cells(self):
        S, S2 = np.meshgrid(self.s_axis, self.s_next_axis, indexing="ij")
        return S.ravel(), S2.ravel(), self.values.ravel()


def reward_grid(disc, resolution: int = 101, s_range=(0.0, 1.0), s_next_range=(-1.0, 2.0),
                seed: int = 0) -> RewardGrid:
    """Evaluate ``disc.reward`` on a regular grid over a 1-D state space with a fixed seed."""
    if disc.state_dim != 1:
        raise AnalysisError(f"reward grids need a 1-D state space, got state_dim={disc.state_dim}")
    if resolution < 2:
        raise AnalysisError("resolution must be >= 2")
    a = np.linspace(*s_range, resolution)
    b = np.linspace(*s_next_range, resolution)
    S, S2 = np.meshgrid(a, b, indexing="ij")
    r = disc.reward(S.reshape(-1, 1), S2.reshape(-1, 1), np.random.default_rng(seed))
    vals = np.asarray(r, dtype=np.float64).reshape(resolution, resolution)
    if not np.all(np.isfinite(vals)):
        raise AnalysisError("reward grid contains non-finite values")
    return RewardGrid(a, b, vals)


def grid_csv(grid: RewardGrid) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_COLUMNS)
    for s, s2, r in zip(*grid.cells()):
        w.writerow([repr(float(s)), repr(float(s2)), repr(float(r))])
    return buf.getvalue()


def read_grid_csv(path) -> RewardGrid:
    rows = _read_rows(path, GRID_COLUMNS)
    arr = np.array([[float(x) for x in r] for r in rows])
    a, b = np.unique(arr[:, 0]), np.unique(arr[:, 1])
    if len(a) * len(b) != len(arr):
        raise AnalysisError(f"{path}: rows do not form a full grid")
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    return RewardGrid(a, b, arr[order, 2].reshape(len(a), len(b)))


def manifold_residual(s, s_next) -> np.ndarray:
    """Vertical distance of ``s'`` from the Sine mean curve."""
    return np.abs(np.asarray(s_next) - sine_mean(np.asarray(s)))


def grid_stats(grid: RewardGrid, on_manifold: float = 0.1, bands=((0.1, 0.2), (0.3, 0.4))) -> dict:
    """On/off-manifold means and the far/near band ratio of a Sine reward grid."""
    s, s2, r = grid.cells()
    d = manifold_residual(s, s2)
    on, off = d < on_manifold, d >= on_manifold
    out = {"on_mean": float(r[on].mean()), "off_mean": float(r[off].mean())}
    means = []
    for lo, hi in bands:
        m = (d >= lo) & (d < hi)
        if not m.any():
            raise AnalysisError(f"no grid cells in band [{lo}, {hi})")
        means.append(float(r[m].mean()))
    out["near_band_mean"], out["far_band_mean"] = means
    out["band_ratio"] = means[1] / means[0] if means[0] != 0 else float("nan")
    return out


# ------------------------------------------------------------------ generation


@dataclass
class GeneratedTrajectory:
    states: np.ndarray  # (length + 1, D); row 0 is the source state
    source_index: int
    label: int = C_E


def generate_trajectories(disc: DiffusionDiscriminator, starts: np.ndarray, max_len: int,
                          rng: np.random.Generator, source_indices=None) -> list[GeneratedTrajectory]:
    """Chain expert-labelled next-state samples from each start; all starts advance in one batch."""
    if not isinstance(disc, DiffusionDiscriminator) or disc.cfg.variant == Variant.DIFO_UNCOND:
        raise AnalysisError("trajectory generation needs a conditional diffusion discriminator")
    if max_len < 1:
        raise AnalysisError("max_len must be >= 1")
    x = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    path = [x]
    for _ in range(max_len):
        x = disc.sample_next(x, rng, C_E)
        path.append(x)
    states = np.stack(path, axis=1)
    idx = range(len(x)) if source_indices is None else source_indices
    return [GeneratedTrajectory(states[i], int(j)) for i, j in zip(range(len(x)), idx)]


def expert_starts(expert: ExpertDataset, n: int, rng: np.random.Generator):
    """First states of ``n`` expert trajectories drawn without replacement (with it if too few)."""
    begins = np.concatenate([[0], expert.ends[:-1]])
    pick = rng.choice(len(begins), size=n, replace=n > len(begins))
    return expert.s[begins[pick]], pick


def trajectory_csv(traj: GeneratedTrajectory) -> str:
    D = traj.states.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJ_COLUMNS + tuple(f"x{i}" for i in range(D)))
    for k, row in enumerate(traj.states):
        w.writerow([k] + [repr(float(v)) for v in row])
    return buf.getvalue()


def read_trajectory_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if len(rows) < 2 or rows[0][0] != "step":
        raise AnalysisError(f"{path}: not a trajectory CSV")
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])


# ------------------------------------------------------------------ ablations

STUDIES = ("lambda_ratio", "n_samples", "data_efficiency", "agent_mse", "stochastic_env")


def study_members(study: str, base: TrainConfig, n_expert_trajectories: int) -> list[tuple[str, TrainConfig]]:
    """Named configurations compared by one ablation study; all share ``base.seed``."""
    def with_disc(**kw):
        return dataclasses.replace(base, disc=dataclasses.replace(base.disc, **kw))

    if study == "lambda_ratio":
        weights = [(1.0, 0.0), (1.0, 0.01), (1.0, 0.1), (1.0, 1.0), (0.0, 1.0)]
        return [(f"mse{m:g}_bce{b:g}", with_disc(lambda_mse=m, lambda_bce=b)) for m, b in weights]
    if study == "n_samples":
        return [(f"n{k}", with_disc(n_reward_samples=k)) for k in (1, 2, 5, 10)]
    if study == "data_efficiency":
        out = []
        for f in (1, 2, 4, 8):
            k = max(1, n_expert_trajectories // f)
            out.append((f"traj{k}", dataclasses.replace(base, expert_trajectories=k)))
        return out
    if study == "agent_mse":
        return [(f"agent_mse_{v}".lower(), with_disc(mse_on_agent=v)) for v in (False, True)]
    if study == "stochastic_env":
        # noise at half the action range, scaled from a unit action box
        high = make_env(base.env).spec.action_high
        return [("sigma0", dataclasses.replace(base, action_noise_sigma=0.0)),
                (f"sigma{0.5 * high:g}", dataclasses.replace(base, action_noise_sigma=0.5 * high))]
    raise AnalysisError(f"unknown study {study!r}; expected one of {', '.join(STUDIES)}")


def run_ablation(study: str, base: TrainConfig, expert: ExpertDataset, seeds, out_dir=None) -> list[dict]:
    """Train every member for every seed; returns eval rows aligned on env steps."""
    rows = []
    for name, cfg in study_members(study, base, expert.n_trajectories):
        for seed in seeds:
            sub = Path(out_dir) / name / f"seed{seed}" if out_dir else None
            run_cfg = dataclasses.replace(cfg, seed=seed, out_dir=str(sub) if sub else "")
            _, metrics = train(run_cfg, expert=expert)
            for m in metrics:
                if m.get("eval_success") is not None:
                    rows.append({"study": study, "member": name, "seed": seed, "round": m["round"],
                                 "env_steps": m["env_steps"], "eval_success": m["eval_success"],
                                 "eval_return": m["eval_return"]})
    return rows


def ablation_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in ABLATION_COLUMNS])
    return buf.getvalue()


# ------------------------------------------------------------------ plots


def _read_rows(path, expect_header=None) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = [r for r in csv.reader(f) if r]
    if len(rows) < 2:
        raise AnalysisError(f"{path}: empty CSV")
    if expect_header is not None and tuple(rows[0]) != tuple(expect_header):
        raise AnalysisError(f"{path}: unexpected header {rows[0]}")
    return rows[1:]


def _columns(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = [r for r in csv.reader(f) if r]
    if len(rows) < 2:
        raise AnalysisError(f"{path}: empty CSV")
    head = rows[0]
    cols = {}
    for j, name in enumerate(head):
        vals = [r[j] if j < len(r) else "" for r in rows[1:]]
        try:
            cols[name] = np.array([float(v) if v != "" else np.nan for v in vals])
        except ValueError:
            cols[name] = np.array(vals, dtype=object)
    return cols


def _figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_curves(csv_paths, out_path, x="env_steps", y="eval_success") -> Path:
    """Mean ± std of ``y`` across run CSVs, evaluated at the x values they share."""
    if not csv_paths:
        raise AnalysisError("no CSV files given")
    series = []
    for p in csv_paths:
        c = _columns(p)
        if x not in c or y not in c:
            raise AnalysisError(f"{p}: missing column {x!r} or {y!r}")
        m = ~np.isnan(c[y])
        if not m.any():
            raise AnalysisError(f"{p}: column {y!r} has no values")
        series.append(dict(zip(c[x][m], c[y][m])))
    xs = sorted(set.intersection(*(set(s) for s in series)))
    if not xs:
        raise AnalysisError("runs share no x values")
    Y = np.array([[s[v] for v in xs] for s in series])
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    mu, sd = Y.mean(axis=0), Y.std(axis=0)
    ax.plot(xs, mu, label=f"mean of {len(series)} runs")
    if len(series) > 1:
        ax.fill_between(xs, mu - sd, mu + sd, alpha=0.25)
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.legend()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return out_path


def plot_heatmap(grid_csv_path, out_path) -> Path:
    grid = read_grid_csv(grid_csv_path)
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 4))
    mesh = ax.pcolormesh(grid.s_axis, grid.s_next_axis, grid.values.T, shading="nearest")
    fig.colorbar(mesh, ax=ax, label="reward")
    ax.set_xlabel("s")
    ax.set_ylabel("s'")
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return out_path


def plot_scatter(csv_paths, out_path) -> Path:
    """Overlay trajectory CSVs in the plane of their first two coordinates."""
    if not csv_paths:
        raise AnalysisError("no CSV files given")
    trajs = [read_trajectory_csv(p) for p in csv_paths]
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 5))
    for t in trajs:
        if t.shape[1] >= 2:
            ax.plot(t[:, 0], t[:, 1], marker=".", ms=3, lw=0.8)
        else:
            ax.plot(t[:-1, 0], t[1:, 0], ".", ms=3)
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return out_path


__all__ = [
    "RewardGrid", "reward_grid", "grid_csv", "read_grid_csv", "grid_stats", "manifold_residual",
    "GeneratedTrajectory", "generate_trajectories", "expert_starts", "trajectory_csv",
    "STUDIES", "study_members", "run_ablation", "ablation_csv", "plot_curves", "plot_heatmap",
    "plot_scatter", "metrics_csv",
]
