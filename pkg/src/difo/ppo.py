"""PPO with GAE, driven entirely by discriminator rewards."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, stable_softplus
from .nets import Mlp, MlpConfig

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class PpoConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    gamma: float = 0.99
    clip: float = 0.2  # the printed hyperparameter table lists 0.001; set it here to reproduce that
    gae_lambda: float = 0.95
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    max_grad_norm: float = 0.6
    epochs: int = 5
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = 0.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not (0 < self.gamma <= 1 and 0 < self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if self.clip <= 0:
            raise ValueError("clip must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def _tanh_log_det(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2), stable for large |u|
    return 2.0 * (math.log(2.0) - u - stable_softplus(-2.0 * u))


class GaussianPolicy:
    """Diagonal Gaussian over pre-squash actions ``u``; the env sees ``scale * tanh(u)``.

    The mean comes from an MLP trunk and the log-std is a state-independent
    learned vector clamped to [-5, 2].
    """

    def __init__(self, obs_dim: int, act_dim: int, action_scale: float = 1.0,
                 hidden=(64, 64), init_log_std: float = 0.0, rng: np.random.Generator | None = None,
                 params: dict | None = None):
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.action_scale = float(action_scale)
        self.trunk = Mlp(MlpConfig((obs_dim, *hidden, act_dim), activation="tanh"), rng=rng)
        if params is None:
            params = {f"trunk/{k}": v for k, v in self.trunk.params.items()}
            params["log_std"] = np.full(act_dim, float(init_log_std))
        self.params = params

    def _trunk_params(self, p):
        return {k[len("trunk/"):]: v for k, v in p.items() if k.startswith("trunk/")}

    def mean_pre(self, g: Graph, p, obs):
        return self.trunk.forward(g, self._trunk_params(p), obs)

    def log_std(self, g: Graph, p):
        return ad.clip(p["log_std"], LOG_STD_MIN, LOG_STD_MAX)

    def log_prob_graph(self, g: Graph, p, obs, u: np.ndarray):
        """Log-density of actions given their stored pre-squash values ``u``; shape (n,)."""
        mu = self.mean_pre(g, p, obs)
        ls = self.log_std(g, p)
        n = u.shape[0]
        ls_b = ad.broadcast(ls, (n, self.act_dim))
        z = (g.const(u) - mu) * ad.exp(-ls_b)
        gauss = ad.sum_(-0.5 * ad.square(z) - ls_b, axis=1) - self.act_dim * _HALF_LOG_2PI
        jac = np.sum(_tanh_log_det(u), axis=1) + self.act_dim * math.log(self.action_scale)
        return gauss - jac

    def entropy_graph(self, g: Graph, p):
        """Entropy of the pre-squash Gaussian (the squashed one has no closed form)."""
        return ad.sum_(self.log_std(g, p)) + self.act_dim * (0.5 + _HALF_LOG_2PI)

    def sample(self, obs, rng: np.random.Generator):
        """Returns ``(action, u, log_prob)`` for a batch of observations."""
        obs = np.atleast_2d(obs)
        g = Graph(record=False)
        p = ad.bind(g, self.params)
        mu = self.mean_pre(g, p, obs).data
        ls = np.clip(self.params["log_std"], LOG_STD_MIN, LOG_STD_MAX)
        z = rng.standard_normal(mu.shape)
        u = mu + np.exp(ls) * z
        logp = (np.sum(-0.5 * z * z - ls, axis=1) - self.act_dim * _HALF_LOG_2PI
                - np.sum(_tanh_log_det(u), axis=1) - self.act_dim * math.log(self.action_scale))
        return self.action_scale * np.tanh(u), u, logp

    def log_prob(self, obs, u) -> np.ndarray:
        g = Graph(record=False)
        return self.log_prob_graph(g, ad.bind(g, self.params), np.atleast_2d(obs), np.atleast_2d(u)).data

    def mean_action(self, obs) -> np.ndarray:
        g = Graph(record=False)
        return self.action_scale * np.tanh(self.mean_pre(g, ad.bind(g, self.params), np.atleast_2d(obs)).data)


class ValueNet:
    def __init__(self, obs_dim: int, hidden=(64, 64), rng: np.random.Generator | None = None):
        self.mlp = Mlp(MlpConfig((obs_dim, *hidden, 1), activation="tanh"), rng=rng)

    @property
    def params(self):
        return self.mlp.params

    @params.setter
    def params(self, value):
        self.mlp.params = value

    def graph(self, g: Graph, p, obs):
        return self.mlp.forward(g, p, obs)[:, 0]

    def __call__(self, obs) -> np.ndarray:
        return self.mlp(np.atleast_2d(obs))[:, 0]


@dataclass
class RolloutBatch:
    """Time-major arrays of shape (steps_per_env, n_envs, ...)."""

    states: np.ndarray
    next_states: np.ndarray
    actions: np.ndarray
    raw_actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    last_values: np.ndarray  # bootstrap value of the final next state, per env
    rewards: np.ndarray
    dones: np.ndarray
    snapshot_id: int = 0
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return int(np.prod(self.rewards.shape))

    def flat(self, name: str) -> np.ndarray:
        a = getattr(self, name)
        return a.reshape(len(self), *a.shape[2:])


def collect_rollout(policy: GaussianPolicy, value: ValueNet, env, reward_fn, horizon_steps: int,
                    rng: np.random.Generator, snapshot_id: int = 0) -> RolloutBatch:
    """Run whole fixed-horizon episodes in lockstep and relabel them with ``reward_fn(s, s')``.

    ``horizon_steps`` must be a multiple of the env horizon. The env's native
    reward is never consulted.
    """
    H, D, A = env.spec.horizon, env.spec.state_dim, env.spec.action_dim
    if horizon_steps % H:
        raise ValueError(f"rollout length {horizon_steps} is not a multiple of the horizon {H}")
    n_envs = horizon_steps // H
    if n_envs == 0:
        z = np.zeros((0, 0))
        return RolloutBatch(np.zeros((0, 0, D)), np.zeros((0, 0, D)), np.zeros((0, 0, A)),
                            np.zeros((0, 0, A)), z, z, np.zeros(0), z, z, snapshot_id)
    S = np.empty((H, n_envs, D))
    S2 = np.empty((H, n_envs, D))
    act = np.empty((H, n_envs, A))
    raw = np.empty((H, n_envs, A))
    logp = np.empty((H, n_envs))
    vals = np.empty((H, n_envs))
    s = env.reset(n_envs, rng)
    for k in range(H):
        a, u, lp = policy.sample(s, rng)
        S[k], act[k], raw[k], logp[k] = s, a, u, lp
        vals[k] = value(s)
        s = env.step(s, a, rng)
        S2[k] = s
    dones = np.zeros((H, n_envs))
    dones[-1] = 1.0
    rewards = np.asarray(reward_fn(S.reshape(-1, D), S2.reshape(-1, D)), dtype=np.float64).reshape(H, n_envs)
    return RolloutBatch(S, S2, act, raw, logp, vals, value(s), rewards, dones, snapshot_id)


def gae(rewards, values, dones, gamma: float, lam: float) -> np.ndarray:
    """GAE for one stream. ``values`` has one more entry than ``rewards`` (the bootstrap)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    n = len(rewards)
    if values.shape[0] != n + 1 or dones.shape[0] != n:
        raise ValueError(f"length mismatch: {n} rewards, {values.shape[0]} values, {dones.shape[0]} dones")
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0]) if n else 0.0
    for t in range(n - 1, -1, -1):
        nonterm = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterm - values[t]
        last = delta + gamma * lam * nonterm * last
        adv[t] = last
    return adv


def compute_gae(batch: RolloutBatch, gamma: float, lam: float, normalize: bool = True) -> RolloutBatch:
    values = np.concatenate([batch.values, batch.last_values[None]], axis=0)
    adv = gae(batch.rewards, values, batch.dones, gamma, lam)
    batch.returns = adv + batch.values
    if normalize and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-12)
    batch.advantages = adv
    return batch


def surrogate_terms(g: Graph, policy: GaussianPolicy, p, obs, raw, old_logp, adv, clip: float):
    logp = policy.log_prob_graph(g, p, obs, raw)
    ratio = ad.exp(logp - old_logp)
    A = g.const(adv)
    lo, hi = 1.0 - clip, 1.0 + clip
    unclipped = ratio * A
    clipped = ad.clip(ratio, lo, hi) * A
    obj = ad.minimum(unclipped, clipped)
    return -ad.mean(obj), ratio.data


class PpoTrainer:
    """Holds the joint Adam state for policy and value parameters."""

    def __init__(self, policy: GaussianPolicy, value: ValueNet, cfg: PpoConfig):
        self.policy, self.value, self.cfg = policy, value, cfg
        self.opt = ad.Adam(cfg.learning_rate)

    def _joint(self):
        p = {f"pi/{k}": v for k, v in self.policy.params.items()}
        p.update({f"vf/{k}": v for k, v in self.value.params.items()})
        return p

    def _split(self, joint):
        self.policy.params = {k[3:]: v for k, v in joint.items() if k.startswith("pi/")}
        self.value.params = {k[3:]: v for k, v in joint.items() if k.startswith("vf/")}

    def update(self, batch: RolloutBatch, rng: np.random.Generator) -> dict:
        if batch.advantages is None:
            raise ValueError("ppo_update needs advantages; run compute_gae first")
        cfg = self.cfg
        obs, raw = batch.flat("states"), batch.flat("raw_actions")
        old_logp, adv, ret = batch.flat("log_probs"), batch.flat("advantages"), batch.flat("returns")
        n = len(batch)
        stats = {"policy_loss": [], "value_loss": [], "entropy": [], "clip_fraction": []}
        for epoch in range(cfg.epochs):
            perm = rng.permutation(n)
            for mb, i0 in enumerate(range(0, n, cfg.batch_size)):
                idx = perm[i0:i0 + cfg.batch_size]
                g = Graph()
                joint = ad.bind(g, self._joint())
                pp = {k[3:]: v for k, v in joint.items() if k.startswith("pi/")}
                vp = {k[3:]: v for k, v in joint.items() if k.startswith("vf/")}
                pl, ratio = surrogate_terms(g, self.policy, pp, obs[idx], raw[idx], old_logp[idx],
                                            adv[idx], cfg.clip)
                vl = ad.mean(ad.square(self.value.graph(g, vp, obs[idx]) - ret[idx]))
                ent = self.policy.entropy_graph(g, pp)
                loss = pl + cfg.vf_coef * vl - cfg.ent_coef * ent
                if not np.isfinite(loss.data):
                    raise FloatingPointError(f"non-finite PPO loss in epoch {epoch}, minibatch {mb}")
                grads = ad.collect(g.backward(loss), joint)
                # clip each network on its own so large value errors cannot starve the policy step
                gp, _ = ad.clip_by_global_norm({k: v for k, v in grads.items() if k.startswith("pi/")},
                                               cfg.max_grad_norm)
                gv, _ = ad.clip_by_global_norm({k: v for k, v in grads.items() if k.startswith("vf/")},
                                               cfg.max_grad_norm)
                grads = {**gp, **gv}
                self._split(self.opt.step(self._joint(), grads))
                stats["policy_loss"].append(float(pl.data))
                stats["value_loss"].append(float(vl.data))
                stats["entropy"].append(float(ent.data))
                stats["clip_fraction"].append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip)))
        return {k: float(np.mean(v)) if v else 0.0 for k, v in stats.items()}


def ppo_update(trainer: PpoTrainer, batch: RolloutBatch, rng: np.random.Generator) -> dict:
    return trainer.update(batch, rng)
