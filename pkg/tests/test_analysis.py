import csv
import math

import numpy as np
import pytest

from difo import analysis
from difo.analysis import (ABLATION_COLUMNS, AnalysisError, RewardGrid, ablation_csv, expert_starts,
                           generate_trajectories, grid_csv, grid_stats, read_grid_csv,
                           read_trajectory_csv, reward_grid, study_members, trajectory_csv)
from difo.discriminators import DiscriminatorConfig, make_discriminator
from difo.envs import generate_expert, make_env, sine_mean
from difo.trainer import TrainConfig, metrics_csv

TINY = dict(widths=(8, 8), emb_dim=4, mlp_hidden=8, mlp_layers=2, T=20, sample_range=(5, 15))


def disc(variant="DIFO", state_dim=1, seed=0):
    return make_discriminator(state_dim, DiscriminatorConfig(variant=variant, **TINY), np.random.default_rng(seed))


def test_untrained_grid_is_ln2_everywhere():
    g = reward_grid(disc(), resolution=101)
    assert g.values.shape == (101, 101)
    np.testing.assert_allclose(g.values, math.log(2), rtol=0, atol=1e-15)


def test_grid_csv_row_count_and_round_trip(tmp_path):
    d = disc()
    d.net.params["out.w"] = np.random.default_rng(1).normal(size=d.net.params["out.w"].shape)
    g = reward_grid(d, resolution=101)
    text = grid_csv(g)
    lines = text.splitlines()
    assert lines[0] == "s,s_next,reward" and len(lines) == 1 + 10201
    p = tmp_path / "g.csv"
    p.write_text(text)
    back = read_grid_csv(p)
    assert back.values.tobytes() == g.values.tobytes()


def test_grid_is_reproducible_and_cell_aligned_across_models():
    a = reward_grid(disc("DIFO"), 11, seed=4)
    b = reward_grid(disc("GAIFO"), 11, seed=4)
    assert np.array_equal(a.s_axis, b.s_axis) and np.array_equal(a.s_next_axis, b.s_next_axis)
    d = disc()
    d.net.params["out.w"] = np.ones_like(d.net.params["out.w"])
    assert reward_grid(d, 11, seed=4).values.tobytes() == reward_grid(d, 11, seed=4).values.tobytes()


def test_grid_needs_one_dimensional_state():
    with pytest.raises(AnalysisError, match="1-D"):
        reward_grid(disc(state_dim=4), 5)


def test_grid_stats_on_synthetic_grid():
    a = np.linspace(0, 1, 201)
    S, S2 = np.meshgrid(a, a, indexing="ij")
    resid = np.abs(S2 - sine_mean(S))
    g = RewardGrid(a, a, np.exp(-resid))
    st = grid_stats(g)
    assert st["on_mean"] > st["off_mean"]
    assert 0 < st["band_ratio"] < 1
    flat = grid_stats(RewardGrid(a, a, np.ones_like(S)))
    assert flat["band_ratio"] == 1.0


def test_generated_trajectory_lengths_and_csv(tmp_path):
    d = disc(state_dim=4)
    ds = generate_expert(make_env("point_reach"), 5, seed=0)
    starts, idx = expert_starts(ds, 3, np.random.default_rng(0))
    trajs = generate_trajectories(d, starts, 1, np.random.default_rng(0), idx)
    assert len(trajs) == 3 and all(t.states.shape == (2, 4) for t in trajs)
    assert all(np.all(np.isfinite(t.states)) for t in trajs)
    p = tmp_path / "t.csv"
    p.write_text(trajectory_csv(trajs[0]))
    assert read_trajectory_csv(p).tobytes() == trajs[0].states.tobytes()
    with pytest.raises(AnalysisError):
        generate_trajectories(d, starts, 0, np.random.default_rng(0))
    with pytest.raises(AnalysisError, match="conditional"):
        generate_trajectories(disc("DIFO_UNCOND"), starts[:, :1], 1, np.random.default_rng(0))


def test_generation_respects_the_transition_scaler():
    d = disc()
    s = np.full((400, 1), 0.3)
    d.fit_scaler(s, s + 5.0)  # zero-output denoiser => residual mean decoded back
    out = generate_trajectories(d, s[:400], 1, np.random.default_rng(0))
    ends = np.array([t.states[-1, 0] for t in out])
    assert abs(ends.mean() - 5.3) < 0.01


def test_study_members():
    base = TrainConfig(env="point_reach")
    lam = dict(study_members("lambda_ratio", base, 100))
    weights = {(c.disc.lambda_mse, c.disc.lambda_bce) for c in lam.values()}
    assert (0.0, 1.0) in weights and (1.0, 0.0) in weights
    assert [c.disc.n_reward_samples for _, c in study_members("n_samples", base, 100)] == [1, 2, 5, 10]
    assert [c.expert_trajectories for _, c in study_members("data_efficiency", base, 200)] == [200, 100, 50, 25]
    assert [c.disc.mse_on_agent for _, c in study_members("agent_mse", base, 1)] == [False, True]
    sig = [c.action_noise_sigma for _, c in study_members("stochastic_env", base, 1)]
    assert sig[0] == 0 and sig[1] > 0
    assert all(c.seed == base.seed for _, c in lam.items())
    with pytest.raises(AnalysisError, match="unknown study"):
        study_members("dropout", base, 1)


def test_ablation_csv_header():
    rows = [{"study": "n_samples", "member": "n1", "seed": 0, "round": 3, "env_steps": 64,
             "eval_success": 0.5, "eval_return": -3.0}]
    parsed = list(csv.reader(ablation_csv(rows).splitlines()))
    assert tuple(parsed[0]) == ABLATION_COLUMNS and parsed[1][-1] == "-3.0"


def test_plots(tmp_path):
    runs = []
    for k in range(3):
        p = tmp_path / f"m{k}.csv"
        rows = [{"round": i, "env_steps": 100 * (i + 1), "eval_success": 0.1 * i + 0.01 * k} for i in range(4)]
        p.write_text(metrics_csv(rows))
        runs.append(p)
    out = analysis.plot_curves(runs, tmp_path / "c.png")
    assert out.stat().st_size > 0

    g = tmp_path / "g.csv"
    g.write_text(grid_csv(reward_grid(disc(), 7)))
    assert read_grid_csv(g).values.shape == (7, 7)
    assert analysis.plot_heatmap(g, tmp_path / "h.png").stat().st_size > 0

    t = tmp_path / "t.csv"
    t.write_text("step,x0,x1\n0,0.0,0.0\n1,0.1,0.2\n")
    assert analysis.plot_scatter([t], tmp_path / "s.png").stat().st_size > 0


def test_empty_csv_plot_writes_nothing(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("s,s_next,reward\n")
    for fn in (lambda: analysis.plot_heatmap(empty, tmp_path / "x.png"),
               lambda: analysis.plot_curves([empty], tmp_path / "x.png")):
        with pytest.raises(AnalysisError, match="empty"):
            fn()
    assert not (tmp_path / "x.png").exists()
