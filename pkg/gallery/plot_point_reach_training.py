"""
Imitating a reaching expert from states alone
=============================================

PointReach is a 2-D point that must end each 60-step episode within 0.1 of a
goal. The expert dataset holds only states, never actions. The agent's reward
comes entirely from the diffusion discriminator, and the environment's own
distance-based return is used only for reporting.

This uses ``configs/point_reach.ini``; a full 200k-step run takes a few
minutes. Pass a smaller budget on the command line to try it faster, e.g.
``python3 gallery/plot_point_reach_training.py 60000``.
"""

import logging
import sys
from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from difo.envs import generate_expert, make_env, run_episodes
from difo.trainer import load_config, train

logging.basicConfig(level=logging.INFO, format="%(message)s")
ROOT = Path(__file__).resolve().parent.parent
budget = int(sys.argv[1]) if len(sys.argv) > 1 else 200_000

# %%
# One hundred scripted-expert trajectories. The expert steps straight at the
# goal with a little action noise, so its transitions carry the task.

env = make_env("point_reach")
expert = generate_expert(env, 100, seed=0)

# %%
# Overrides use the same ``section.key=value`` syntax as the CLI's
# ``--override`` flag. ``progress=True`` logs each evaluation.

cfg = load_config(ROOT / "configs" / "point_reach.ini", [f"total_env_steps={budget}", "eval_every=10000"])
state, rows = train(cfg, expert=expert, progress=True)

evals = [r for r in rows if r.get("eval_success") is not None]
steps = [r["env_steps"] for r in evals]

# %%
# Left: evaluated success. Middle: how well the discriminator tells the two
# sources apart. Right: a few episodes of the final policy with mean actions.

fig, axes = plt.subplots(1, 3, figsize=(13, 4))
axes[0].plot(steps, [r["eval_success"] for r in evals], marker="o")
axes[0].set_xlabel("env steps")
axes[0].set_ylabel("success rate")
axes[0].set_ylim(-0.02, 1.02)

acc_rows = [r for r in rows if r.get("accuracy") is not None]
axes[1].plot([r["env_steps"] for r in acc_rows], [r["accuracy"] for r in acc_rows], lw=0.8, label="accuracy")
axes[1].plot([r["env_steps"] for r in rows], [r["mean_reward_expert"] for r in rows], lw=0.8, label="reward, expert")
axes[1].plot([r["env_steps"] for r in rows], [r["mean_reward_agent"] for r in rows], lw=0.8, label="reward, agent")
axes[1].set_xlabel("env steps")
axes[1].legend(fontsize=8)

traj = run_episodes(env, state.policy.mean_action, 6, np.random.default_rng(5))
for k in range(traj.shape[1]):
    line, = axes[2].plot(traj[:, k, 0], traj[:, k, 1], lw=1)
    axes[2].plot(*traj[0, k, 2:], "*", color=line.get_color(), ms=10)
    axes[2].add_patch(plt.Circle(traj[0, k, 2:], 0.1, fill=False, color=line.get_color(), lw=0.5))
axes[2].set_xlim(-1, 1)
axes[2].set_ylim(-1, 1)
axes[2].set_aspect("equal")
axes[2].set_title("final policy (stars: goals)", fontsize=9)
fig.savefig("point_reach_training.png", dpi=110, bbox_inches="tight")
print(f"final success {evals[-1]['eval_success']:.2f}; wrote point_reach_training.png")
