"""Diffusion discriminator, its training losses and rewards, plus the MLP baseline.

All four variants expose the same trainer-facing surface:

* ``reward(s, s_next, rng)`` -> per-transition rewards (read-only on params)
* ``step(expert, agent, rng)`` -> metrics dict, one optimizer step
* ``updates_enabled`` -> False once a reward model is frozen

Transition batches are passed as ``(s, s_next)`` pairs of ``(n, state_dim)`` arrays.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor, stable_softplus
from .diffusion import denoising_loss_graph, make_schedule, sample_next_state
from .nets import (C_A, C_E, CheckpointError, Mlp, MlpConfig, MlpUnet, UnetConfig, load_checkpoint,
                   mlp_arch, save_checkpoint, unet_arch)


class Variant(str, Enum):
    DIFO = "DIFO"
    DIFO_NA = "DIFO_NA"
    DIFO_UNCOND = "DIFO_UNCOND"
    GAIFO = "GAIFO"


@dataclass
class DiscriminatorConfig:
    variant: Variant = Variant.DIFO
    lambda_sigma: float = 10.0
    lambda_mse: float = 1.0
    lambda_bce: float = 0.1
    mse_on_agent: bool = False
    mse_full_range: bool = True  # L_MSE timesteps over [1, T]; False restricts to sample_range
    n_reward_samples: int = 1
    learning_rate: float = 1e-4
    pretrain_lr_decay: float = 1.0  # final / initial lr of the cosine schedule in expert-only pretraining
    batch_size: int = 64
    buffer_capacity: int = 100_000
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sample_range: tuple[int, int] = (250, 750)
    widths: tuple[int, ...] = (256, 256, 256)
    emb_dim: int = 128
    mlp_hidden: int = 128
    mlp_layers: int = 5
    logit_clamp: float = 20.0
    bce_form: str = "standard"  # or "literal": mean log(1-d_E) + mean log(d_A), minimized
    normalize: bool = True  # standardize condition and target with expert statistics
    residual_target: bool = True  # denoise s' - s instead of s'

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.sample_range = tuple(int(x) for x in self.sample_range)
        self.widths = tuple(int(x) for x in self.widths)
        if self.lambda_sigma <= 0:
            raise ValueError("lambda_sigma must be > 0")
        if self.lambda_mse < 0 or self.lambda_bce < 0:
            raise ValueError("loss weights must be >= 0")
        if self.bce_form not in ("standard", "literal"):
            raise ValueError(f"bce_form must be 'standard' or 'literal', got {self.bce_form!r}")
        if not 0 < self.pretrain_lr_decay <= 1:
            raise ValueError("pretrain_lr_decay must be in (0, 1]")
        if self.n_reward_samples < 1:
            raise ValueError("n_reward_samples must be >= 1")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch_size and buffer_capacity must be >= 1")


@dataclass(frozen=True)
class DiscriminatorOutput:
    logit: np.ndarray
    d: np.ndarray
    loss_e: np.ndarray
    loss_a: np.ndarray


def sym_sigmoid(x) -> np.ndarray:
    """Sigmoid evaluated so that ``sym_sigmoid(-x) == 1 - sym_sigmoid(x)`` bit for bit."""
    x = np.asarray(x, dtype=np.float64)
    s = 1.0 / (1.0 + np.exp(-np.abs(x)))
    return np.where(x >= 0, s, 1.0 - s)


def _pair(batch):
    s, s2 = batch
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    s2 = np.atleast_2d(np.asarray(s2, dtype=np.float64))
    if len(s) == 0:
        raise ValueError("empty transition batch")
    if s.shape != s2.shape:
        raise ValueError(f"s and s_next shapes differ: {s.shape} vs {s2.shape}")
    return s, s2


class ReplayBuffer:
    """FIFO ring buffer of agent transitions."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, state_dim))
        self.s_next = np.zeros((self.capacity, state_dim))
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def add(self, s, s_next) -> None:
        s, s_next = np.atleast_2d(s), np.atleast_2d(s_next)
        if len(s) > self.capacity:
            self.inserted += len(s) - self.capacity
            s, s_next = s[-self.capacity:], s_next[-self.capacity:]
        idx = (self.inserted + np.arange(len(s))) % self.capacity
        self.s[idx] = s
        self.s_next[idx] = s_next
        self.inserted += len(s)

    def contents(self):
        """All stored transitions, oldest first."""
        n = len(self)
        idx = (self.inserted - n + np.arange(n)) % self.capacity
        return self.s[idx], self.s_next[idx]

    def sample(self, n: int, rng: np.random.Generator):
        if len(self) == 0:
            raise ValueError("sampling from an empty replay buffer")
        idx = rng.integers(0, len(self), size=n)
        idx = (self.inserted - len(self) + idx) % self.capacity
        return self.s[idx], self.s_next[idx]


@dataclass
class TransitionScaler:
    """Affine map from raw ``(s, s')`` to the coordinates the denoiser works in.

    The condition becomes ``(s - s_mean) / s_std`` and the target becomes
    ``(s' - s - d_mean) / d_std`` (or ``s'`` in place of ``s' - s`` when
    ``residual`` is off). It is invertible given ``s``.
    """

    s_mean: np.ndarray
    s_std: np.ndarray
    d_mean: np.ndarray
    d_std: np.ndarray
    residual: bool = True

    STD_FLOOR = 1e-3

    @classmethod
    def identity(cls, dim: int, residual: bool = True) -> "TransitionScaler":
        z, o = np.zeros(dim), np.ones(dim)
        return cls(z, o, z.copy(), o.copy(), residual)

    @classmethod
    def fit(cls, s, s_next, residual: bool = True) -> "TransitionScaler":
        s, s2 = _pair((s, s_next))
        d = s2 - s if residual else s2
        fl = cls.STD_FLOOR
        return cls(s.mean(0), np.maximum(s.std(0), fl), d.mean(0), np.maximum(d.std(0), fl), residual)

    def encode(self, s, s_next):
        d = s_next - s if self.residual else s_next
        return (s - self.s_mean) / self.s_std, (d - self.d_mean) / self.d_std

    def decode_next(self, s, x):
        d = x * self.d_std + self.d_mean
        return s + d if self.residual else d

    def to_json(self) -> dict:
        return {k: [float(v) for v in getattr(self, k)] for k in ("s_mean", "s_std", "d_mean", "d_std")}

    @classmethod
    def from_json(cls, d: dict, residual: bool) -> "TransitionScaler":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("s_mean", "s_std", "d_mean", "d_std")),
                   residual)


def _bce(form: str, logit_e: Tensor, logit_a: Tensor) -> Tensor:
    if len(logit_e.data) == 0 or len(logit_a.data) == 0:
        raise ValueError("BCE needs nonempty expert and agent batches")
    if form == "literal":
        # log(1 - d) = -softplus(logit), log(d) = -softplus(-logit)
        return -ad.mean(ad.softplus(logit_e)) - ad.mean(ad.softplus(-logit_a))
    # standard cross-entropy with expert as the positive class
    return ad.mean(ad.softplus(-logit_e)) + ad.mean(ad.softplus(logit_a))


def bce_from_logits(logit_e, logit_a, form: str = "standard") -> float:
    """The discriminator BCE for given expert and agent logits."""
    g = Graph(record=False)
    return float(_bce(form, g.const(np.atleast_1d(logit_e)), g.const(np.atleast_1d(logit_a))).data)


def _accuracy(d_e: np.ndarray, d_a: np.ndarray) -> dict:
    acc_e = float(np.mean(d_e > 0.5))
    acc_a = float(np.mean(d_a < 0.5))
    n_e, n_a = len(d_e), len(d_a)
    return {"accuracy": (acc_e * n_e + acc_a * n_a) / (n_e + n_a),
            "expert_accuracy": acc_e, "agent_accuracy": acc_a}


# ---------------------------------------------------------------- diffusion


class DiffusionDiscriminator:
    """Conditional denoiser used as a classifier through its label-conditioned losses."""

    def __init__(self, state_dim: int, cfg: DiscriminatorConfig | None = None,
                 rng: np.random.Generator | None = None, params=None):
        cfg = cfg or DiscriminatorConfig()
        if cfg.variant == Variant.GAIFO:
            raise ValueError("use MlpDiscriminator for the GAIFO variant")
        self.cfg = cfg
        self.state_dim = state_dim
        uncond = cfg.variant == Variant.DIFO_UNCOND
        self.unet_config = UnetConfig(
            x_dim=2 * state_dim if uncond else state_dim,
            cond_dim=0 if uncond else state_dim,
            widths=cfg.widths, emb_dim=cfg.emb_dim, use_labels=True,
        )
        self.net = MlpUnet(self.unet_config, rng=rng, params=params)
        self.scaler = TransitionScaler.identity(state_dim, cfg.residual_target)
        self.sched = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end, cfg.sample_range)
        self.opt = ad.Adam(cfg.learning_rate)
        self.frozen = False

    @property
    def params(self):
        return self.net.params

    @property
    def updates_enabled(self) -> bool:
        return not self.frozen and self.cfg.variant != Variant.DIFO_NA

    def arch(self) -> dict:
        return _disc_arch(self, unet_arch(self.unet_config))

    def save(self, path) -> None:
        save_checkpoint(path, self.arch(), self.params)

    @property
    def target_dim(self) -> int:
        return self.unet_config.x_dim

    def fit_scaler(self, s, s_next) -> None:
        """Fit the target standardization on expert transitions (no-op unless ``normalize``)."""
        if self.cfg.normalize:
            self.scaler = TransitionScaler.fit(s, s_next, self.cfg.residual_target)

    def draw_noise(self, n: int, rng: np.random.Generator, n_samples: int = 1, full_range: bool = False):
        t = self.sched.sample_t(rng, (n, n_samples), full_range=full_range)
        eps = rng.standard_normal((n, n_samples, self.target_dim))
        return t, eps

    def _losses(self, g: Graph, p, s, s2, label, t, eps) -> Tensor:
        """Per-transition loss averaged over the ``n_samples`` shared draws; shape (n,)."""
        n, k = t.shape
        s, s2 = self.scaler.encode(s, s2)
        rs = np.repeat(s, k, axis=0)
        rs2 = np.repeat(s2, k, axis=0)
        per = denoising_loss_graph(g, p, self.net, self.sched, rs, rs2, label,
                                   t.reshape(-1), eps.reshape(n * k, -1))
        if k == 1:
            return per
        return ad.mean(ad.reshape(per, (n, k)), axis=1)

    def _logits(self, g: Graph, p, s, s2, t, eps, swap_labels=False):
        le, la = (C_A, C_E) if swap_labels else (C_E, C_A)
        loss_e = self._losses(g, p, s, s2, le, t, eps)
        loss_a = self._losses(g, p, s, s2, la, t, eps)
        logit = self.cfg.lambda_sigma * (loss_a - loss_e)
        return logit, loss_e, loss_a

    def discriminate(self, s, s_next, rng: np.random.Generator | None = None, n_samples: int | None = None,
                     noise=None, swap_labels: bool = False) -> DiscriminatorOutput:
        s, s2 = _pair((s, s_next))
        k = n_samples or self.cfg.n_reward_samples
        t, eps = noise if noise is not None else self.draw_noise(len(s), rng, k)
        t = np.asarray(t).reshape(len(s), -1)
        eps = np.asarray(eps).reshape(len(s), t.shape[1], -1)
        g = Graph(record=False)
        logit, le, la = self._logits(g, ad.bind(g, self.params), s, s2, t, eps, swap_labels)
        return DiscriminatorOutput(logit.data, sym_sigmoid(logit.data), le.data, la.data)

    def reward(self, s, s_next, rng: np.random.Generator | None = None, n_samples: int | None = None,
               noise=None) -> np.ndarray:
        if self.cfg.variant == Variant.DIFO_NA:
            s, s2 = _pair((s, s_next))
            k = n_samples or self.cfg.n_reward_samples
            t, eps = noise if noise is not None else self.draw_noise(len(s), rng, k)
            t = np.asarray(t).reshape(len(s), -1)
            eps = np.asarray(eps).reshape(len(s), t.shape[1], -1)
            g = Graph(record=False)
            return -self._losses(g, ad.bind(g, self.params), s, s2, C_E, t, eps).data
        out = self.discriminate(s, s_next, rng, n_samples, noise)
        c = self.cfg.logit_clamp
        return stable_softplus(np.clip(out.logit, -c, c))

    # ------------------------------------------------------------ losses

    def bce_graph(self, g: Graph, p, expert, agent, rng):
        se, se2 = _pair(expert)
        sa, sa2 = _pair(agent)
        te, ee = self.draw_noise(len(se), rng)
        ta, ea = self.draw_noise(len(sa), rng)
        logit_e, _, _ = self._logits(g, p, se, se2, te, ee)
        logit_a, _, _ = self._logits(g, p, sa, sa2, ta, ea)
        return _bce(self.cfg.bce_form, logit_e, logit_a), logit_e.data, logit_a.data

    def mse_graph(self, g: Graph, p, expert, rng, agent=None):
        se, se2 = _pair(expert)
        if len(se) == 0:
            raise ValueError("L_MSE needs a nonempty expert batch")
        full = self.cfg.mse_full_range
        t, eps = self.draw_noise(len(se), rng, full_range=full)
        loss = self._losses(g, p, se, se2, C_E, t, eps)
        if self.cfg.mse_on_agent and agent is not None:
            sa, sa2 = _pair(agent)
            t, eps = self.draw_noise(len(sa), rng, full_range=full)
            loss = ad.concat([loss, self._losses(g, p, sa, sa2, C_A, t, eps)], axis=0)
        return ad.mean(loss)

    def bce_loss(self, expert, agent, rng) -> float:
        g = Graph(record=False)
        return float(self.bce_graph(g, ad.bind(g, self.params), expert, agent, rng)[0].data)

    def mse_loss(self, expert, rng, agent=None) -> float:
        g = Graph(record=False)
        return float(self.mse_graph(g, ad.bind(g, self.params), expert, rng, agent).data)

    def step(self, expert, agent, rng: np.random.Generator) -> dict:
        """One Adam step on ``lambda_mse * L_MSE + lambda_bce * L_BCE``."""
        cfg = self.cfg
        if not self.updates_enabled:
            return {}
        g = Graph()
        p = ad.bind(g, self.params)
        bce, logit_e, logit_a = self.bce_graph(g, p, expert, agent, rng)
        mse = self.mse_graph(g, p, expert, rng, agent)
        total = cfg.lambda_mse * mse + cfg.lambda_bce * bce
        if cfg.lambda_mse > 0 or cfg.lambda_bce > 0:
            grads = ad.collect(g.backward(total), p)
            self.net.params = self.opt.step(self.params, grads)
        m = {"L_D": float(total.data), "L_BCE": float(bce.data), "L_MSE": float(mse.data)}
        m.update(_accuracy(sym_sigmoid(logit_e), sym_sigmoid(logit_a)))
        return m

    def pretrain(self, expert_ds, steps: int, rng: np.random.Generator, batch_size: int | None = None) -> list[float]:
        """Expert-only denoising training (label c_E); used by the non-adversarial variant."""
        bs = batch_size or self.cfg.batch_size
        lr0, ratio = self.cfg.learning_rate, self.cfg.pretrain_lr_decay
        losses = []
        for i in range(steps):
            if ratio < 1:
                self.opt.lr = lr0 * (ratio + (1 - ratio) * 0.5 * (1 + np.cos(np.pi * i / max(steps - 1, 1))))
            idx = rng.integers(0, len(expert_ds.s), size=bs)
            g = Graph()
            p = ad.bind(g, self.params)
            loss = self.mse_graph(g, p, (expert_ds.s[idx], expert_ds.s_next[idx]), rng)
            self.net.params = self.opt.step(self.params, ad.collect(g.backward(loss), p))
            losses.append(float(loss.data))
        self.opt.lr = lr0
        return losses

    def sample_next(self, s, rng: np.random.Generator, label: int = C_E) -> np.ndarray:
        """Draw ``s'`` for each row of ``s`` by running the full reverse chain."""
        if self.cfg.variant == Variant.DIFO_UNCOND:
            raise ValueError("the unconditioned variant has no state to condition on")
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        cond = (s - self.scaler.s_mean) / self.scaler.s_std
        return self.scaler.decode_next(s, sample_next_state(self.net, self.sched, cond, label, rng))

    def freeze(self) -> None:
        self.frozen = True


# ---------------------------------------------------------------- MLP (GAIfO)


class MlpDiscriminator:
    """GAIfO baseline: MLP logit over the concatenated transition ``[s, s']``."""

    def __init__(self, state_dim: int, cfg: DiscriminatorConfig | None = None,
                 rng: np.random.Generator | None = None, params=None):
        cfg = cfg or DiscriminatorConfig(variant=Variant.GAIFO)
        self.cfg = cfg
        self.state_dim = state_dim
        sizes = (2 * state_dim,) + (cfg.mlp_hidden,) * cfg.mlp_layers + (1,)
        self.mlp_config = MlpConfig(sizes, activation="relu")
        self.net = Mlp(self.mlp_config, rng=rng, params=params)
        self.opt = ad.Adam(cfg.learning_rate)
        self.frozen = False

    @property
    def params(self):
        return self.net.params

    @property
    def updates_enabled(self) -> bool:
        return not self.frozen

    def arch(self) -> dict:
        return _disc_arch(self, mlp_arch(self.mlp_config))

    def save(self, path) -> None:
        save_checkpoint(path, self.arch(), self.params)

    def _logit(self, g, p, s, s2) -> Tensor:
        x = g.const(np.concatenate([s, s2], axis=1))
        return self.net.forward(g, p, x)[:, 0]

    def logits(self, s, s_next) -> np.ndarray:
        s, s2 = _pair((s, s_next))
        g = Graph(record=False)
        return self._logit(g, ad.bind(g, self.params), s, s2).data

    def reward(self, s, s_next, rng=None, n_samples=None, noise=None) -> np.ndarray:
        c = self.cfg.logit_clamp
        return stable_softplus(np.clip(self.logits(s, s_next), -c, c))

    def step(self, expert, agent, rng=None) -> dict:
        se, se2 = _pair(expert)
        sa, sa2 = _pair(agent)
        g = Graph()
        p = ad.bind(g, self.params)
        le = self._logit(g, p, se, se2)
        la = self._logit(g, p, sa, sa2)
        loss = ad.mean(ad.softplus(-le)) + ad.mean(ad.softplus(la))
        self.net.params = self.opt.step(self.params, ad.collect(g.backward(loss), p))
        m = {"L_D": float(loss.data), "L_BCE": float(loss.data), "L_MSE": 0.0}
        m.update(_accuracy(sym_sigmoid(le.data), sym_sigmoid(la.data)))
        return m


def _disc_arch(disc, net_arch: dict) -> dict:
    cfg = {k: (list(v) if isinstance(v, tuple) else v.value if isinstance(v, Variant) else v)
           for k, v in asdict(disc.cfg).items()}
    out = {"kind": "discriminator", "state_dim": disc.state_dim, "config": cfg, "net": net_arch}
    if hasattr(disc, "scaler"):
        out["scaler"] = disc.scaler.to_json()
    return out


def load_discriminator(path):
    """Rebuild a discriminator (either family) from a checkpoint written by ``save``."""
    arch, params = load_checkpoint(path)
    if arch.get("kind") != "discriminator":
        raise CheckpointError(f"{path}: not a discriminator checkpoint (kind={arch.get('kind')!r})")
    c = dict(arch["config"])
    for k in ("sample_range", "widths"):
        c[k] = tuple(c[k])
    cfg = DiscriminatorConfig(**c)
    cls = MlpDiscriminator if cfg.variant == Variant.GAIFO else DiffusionDiscriminator
    disc = cls(int(arch["state_dim"]), cfg)
    if "scaler" in arch and hasattr(disc, "scaler"):
        try:
            disc.scaler = TransitionScaler.from_json(arch["scaler"], cfg.residual_target)
        except (KeyError, TypeError, ValueError):
            raise CheckpointError(f"{path}: corrupt scaler statistics") from None
    if disc.arch() != arch:
        raise CheckpointError(f"{path}: header does not describe a consistent discriminator")
    for k, v in disc.params.items():
        if k not in params or params[k].shape != v.shape:
            raise CheckpointError(f"{path}: parameter {k} missing or misshapen")
    if set(params) != set(disc.params):
        raise CheckpointError(f"{path}: unexpected parameters {sorted(set(params) - set(disc.params))}")
    disc.net.params = params
    return disc


def make_discriminator(state_dim: int, cfg: DiscriminatorConfig, rng: np.random.Generator | None = None):
    if cfg.variant == Variant.GAIFO:
        return MlpDiscriminator(state_dim, cfg, rng)
    return DiffusionDiscriminator(state_dim, cfg, rng)


def variant_defaults(variant) -> dict:
    """Per-variant overrides of the loss weights."""
    v = Variant(variant)
    if v == Variant.DIFO_UNCOND:
        return {"lambda_mse": 0.0, "lambda_bce": 1.0}
    if v == Variant.DIFO_NA:
        return {"lambda_bce": 0.0}
    return {}


# ------------------------------------------------------- functional surface


def discriminate(disc: DiffusionDiscriminator, s, s_next, rng=None, **kw) -> DiscriminatorOutput:
    if disc.cfg.variant not in (Variant.DIFO, Variant.DIFO_UNCOND):
        raise ValueError(f"discriminate is defined for DIFO and DIFO_UNCOND, not {disc.cfg.variant.value}")
    return disc.discriminate(s, s_next, rng, **kw)


def bce_loss(disc, expert, agent, rng) -> float:
    return disc.bce_loss(expert, agent, rng)


def mse_loss(disc, expert, rng, agent=None) -> float:
    return disc.mse_loss(expert, rng, agent)


def discriminator_step(disc, expert, agent, rng) -> dict:
    return disc.step(expert, agent, rng)


def reward(disc, s, s_next, rng=None, **kw) -> np.ndarray:
    return disc.reward(s, s_next, rng, **kw)


@dataclass
class StabilityRow:
    n_samples: int
    ratio: float
    excluded: int
    per_transition: np.ndarray = field(repr=False, default=None)


def reward_stability(disc, s, s_next, n_repeats: int, n_samples_list, rng: np.random.Generator,
                     noise=None) -> list[StabilityRow]:
    """Mean over transitions of std/mean of rewards recomputed ``n_repeats`` times per n."""
    if n_repeats < 2:
        raise ValueError("n_repeats must be >= 2 (std is undefined for a single draw)")
    rows = []
    for n in n_samples_list:
        r = np.stack([disc.reward(s, s_next, rng, n_samples=n, noise=noise) for _ in range(n_repeats)])
        mu = r.mean(axis=0)
        sd = r.std(axis=0, ddof=1)
        ok = mu != 0
        ratio = np.abs(sd[ok] / mu[ok])
        rows.append(StabilityRow(int(n), float(ratio.mean()) if ok.any() else float("nan"),
                                 int((~ok).sum()), ratio))
    return rows
