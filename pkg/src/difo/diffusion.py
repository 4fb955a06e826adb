"""DDPM schedule, forward noising, single-step denoising losses and ancestral sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .nets import MlpUnet


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule. Arrays are indexed by timestep: index 0 is the clean data."""

    T: int
    beta: np.ndarray  # shape (T+1,), beta[0] = 0
    alpha_bar: np.ndarray  # shape (T+1,), alpha_bar[0] = 1
    sample_range: tuple[int, int] = (250, 750)

    def __post_init__(self):
        lo, hi = self.sample_range
        if not 1 <= lo <= hi <= self.T:
            raise ValueError(f"sample_range {self.sample_range} not inside [1, {self.T}]")

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [1, {self.T}]: {t}")
        return t

    def sample_t(self, rng: np.random.Generator, size, full_range: bool = False) -> np.ndarray:
        lo, hi = (1, self.T) if full_range else self.sample_range
        return rng.integers(lo, hi + 1, size=size)


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
                  sample_range: tuple[int, int] | None = None) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
    alpha_bar = np.cumprod(1.0 - beta)
    if sample_range is None:
        sample_range = (250, 750) if T >= 750 else (1, T)
    return NoiseSchedule(T, beta, alpha_bar, tuple(sample_range))


@dataclass(frozen=True)
class NoisedSample:
    x_t: np.ndarray
    t: np.ndarray
    eps: np.ndarray


def forward_noise(sched: NoiseSchedule, x0, t, rng: np.random.Generator | None = None,
                  eps=None) -> NoisedSample:
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``; ``t`` may be per-row."""
    x0 = np.asarray(x0, dtype=np.float64)
    t = sched.check_t(t)
    if eps is None:
        eps = rng.standard_normal(x0.shape)
    eps = np.asarray(eps, dtype=np.float64)
    ab = sched.alpha_bar[t]
    if x0.ndim == 2:
        ab = np.broadcast_to(ab, (x0.shape[0],))[:, None]
    return NoisedSample(np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps, t, eps)


def denoising_target(s, s_next, unconditioned: bool):
    """What the network denoises and what it is conditioned on."""
    if unconditioned:
        return np.concatenate([s, s_next], axis=-1), None
    return s_next, s


def denoising_loss_graph(g: Graph, p: dict[str, Tensor], net: MlpUnet, sched: NoiseSchedule,
                         s, s_next, label, t, eps) -> Tensor:
    """Per-row squared error ``||eps - eps_hat||^2`` as a graph tensor of shape (n,)."""
    s = np.atleast_2d(s)
    s_next = np.atleast_2d(s_next)
    x0, cond = denoising_target(s, s_next, net.config.cond_dim == 0)
    eps = np.asarray(eps, dtype=np.float64).reshape(x0.shape)
    x_t = forward_noise(sched, x0, t, eps=eps).x_t
    pred = net.forward(g, p, x_t, t, cond, label)
    return ad.sum_(ad.square(g.const(eps) - pred), axis=1)


def denoising_loss(net: MlpUnet, sched: NoiseSchedule, s, s_next, label, t, eps):
    """Single-(t, eps) denoising loss; scalar for one transition, array for a batch."""
    g = Graph(record=False)
    out = denoising_loss_graph(g, ad.bind(g, net.params), net, sched, s, s_next, label, t, eps).data
    return float(out[0]) if np.ndim(s) == 1 else out


class SamplingError(RuntimeError):
    pass


def sample_next_state(net: MlpUnet, sched: NoiseSchedule, cond_state, label,
                      rng: np.random.Generator) -> np.ndarray:
    """Full T-step ancestral sampling with posterior variance ``beta_tilde``.

    ``cond_state`` may be a single state or a batch; one sample is drawn per row.
    """
    cond = np.asarray(cond_state, dtype=np.float64)
    single = cond.ndim == 1
    cond = np.atleast_2d(cond)
    n = cond.shape[0]
    x = rng.standard_normal((n, net.config.x_dim))
    ab, beta = sched.alpha_bar, sched.beta
    c = cond if net.config.cond_dim else None
    for t in range(sched.T, 0, -1):
        eps_hat = net.predict(x, t, c, label)
        mean = (x - beta[t] / np.sqrt(1.0 - ab[t]) * eps_hat) / np.sqrt(1.0 - beta[t])
        if t > 1:
            var = beta[t] * (1.0 - ab[t - 1]) / (1.0 - ab[t])
            x = mean + np.sqrt(var) * rng.standard_normal(x.shape)
        else:
            x = mean
        if not np.all(np.isfinite(x)):
            raise SamplingError(f"non-finite value in reverse chain at step t={t}")
    return x[0] if single else x
