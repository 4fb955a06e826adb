"""Alternating discriminator / policy training loop with evaluation and checkpoints."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .discriminators import (DiscriminatorConfig, ReplayBuffer, Variant, make_discriminator,
                             variant_defaults)
from .envs import ExpertDataset, make_env, read_dataset
from .nets import CheckpointError, load_checkpoint, mlp_arch, save_checkpoint
from .ppo import GaussianPolicy, PpoConfig, PpoTrainer, ValueNet, collect_rollout, compute_gae

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "round", "env_steps", "L_D", "L_BCE", "L_MSE", "accuracy", "expert_accuracy",
    "agent_accuracy", "mean_reward_agent", "mean_reward_expert", "policy_loss", "value_loss",
    "entropy", "clip_fraction", "eval_success", "eval_return",
)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    env: str = "point_reach"
    variant: Variant = Variant.DIFO
    total_env_steps: int = 200_000
    rollout_steps: int = 1920
    disc_updates_per_round: int = 4
    warmup_rounds: int = 10
    na_pretrain_steps: int = 5000
    eval_every: int = 20_000
    eval_episodes: int = 50
    seed: int = 0
    expert_path: str = ""
    expert_trajectories: int = 0  # 0 keeps the whole dataset
    expert_batch_reward: int = 256
    action_noise_sigma: float = 0.0
    out_dir: str = ""
    write_checkpoints: bool = True
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.disc.variant != self.variant:
            self.disc = dataclasses.replace(self.disc, variant=self.variant)
        for name in ("rollout_steps", "disc_updates_per_round", "eval_every", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.total_env_steps < 0 or self.warmup_rounds < 0 or self.na_pretrain_steps < 0:
            raise ConfigError("total_env_steps, warmup_rounds and na_pretrain_steps must be >= 0")


# ------------------------------------------------------------------ config IO

_SECTIONS = {"train": None, "discriminator": "disc", "ppo": "ppo"}
REQUIRED_KEYS = ("train.env", "train.variant", "train.total_env_steps", "train.seed")


def _convert(raw: str, typ, key: str):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if typ in (int, "int"):
            return int(raw.replace("_", ""))
        if typ in (float, "float"):
            return float(raw)
        if isinstance(typ, str) and typ.startswith("tuple"):
            parts = [x for x in raw.strip("()[] ").replace(",", " ").split() if x]
            return tuple(int(x) for x in parts)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from None


def _field_types(cls) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        if t.startswith("Variant"):
            t = "str"
        out[f.name] = t
    return out


def _set(cfg: TrainConfig, section: str, key: str, raw: str) -> None:
    target = cfg if _SECTIONS[section] is None else getattr(cfg, _SECTIONS[section])
    types = _field_types(type(target))
    if key not in types or key in ("disc", "ppo"):
        raise ConfigError(f"unknown config key {section}.{key}")
    setattr(target, key, _convert(raw, types[key], f"{section}.{key}"))


def parse_config(text: str, overrides: list[str] | tuple = ()) -> TrainConfig:
    """Parse ``[section]`` / ``key = value`` text into a validated :class:`TrainConfig`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                   interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown config section [{sec}]")
    for req in REQUIRED_KEYS:
        sec, key = req.split(".")
        if not cp.has_option(sec, key):
            raise ConfigError(f"missing config key {req}")

    cfg = TrainConfig()
    variant = cp.get("train", "variant").strip()
    for ov in overrides:  # a variant override must pick that variant's default weights
        k, _, v = ov.partition("=")
        if k.strip() in ("train.variant", "variant"):
            variant = v.strip()
    try:
        cfg.disc = DiscriminatorConfig(variant=variant, **variant_defaults(variant))
    except ValueError:
        raise ConfigError(f"train.variant: unknown variant {variant!r}") from None
    for sec in cp.sections():
        for key, raw in cp.items(sec):
            _set(cfg, sec, key, raw)
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not key=value")
        k, v = ov.split("=", 1)
        k = k.strip()
        if "." in k:
            sec, key = k.split(".", 1)
            if sec not in _SECTIONS:
                raise ConfigError(f"unknown config section in override {k!r}")
        else:
            hits = [s for s in _SECTIONS
                    if k in _field_types(TrainConfig if _SECTIONS[s] is None else
                                         type(getattr(cfg, _SECTIONS[s])))]
            if len(hits) != 1:
                raise ConfigError(f"override key {k!r} is {'ambiguous' if hits else 'unknown'}")
            sec, key = hits[0], k
        _set(cfg, sec, key, v)
    try:
        cfg.disc = DiscriminatorConfig(**dataclasses.asdict(cfg.disc))
        cfg.ppo = PpoConfig(**dataclasses.asdict(cfg.ppo))
        return TrainConfig(**{f.name: getattr(cfg, f.name) for f in dataclasses.fields(TrainConfig)})
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_config(path, overrides=()) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), overrides)


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for sec, attr in _SECTIONS.items():
        obj = cfg if attr is None else getattr(cfg, attr)
        lines.append(f"[{sec}]")
        for f in dataclasses.fields(obj):
            if f.name in ("disc", "ppo"):
                continue
            v = getattr(obj, f.name)
            if isinstance(v, Variant):
                v = v.value
            elif isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        lines.append("")
    return "\n".join(lines)


# ------------------------------------------------------------------ training


@dataclass
class RunState:
    round: int
    env_steps: int
    disc: Any
    policy: GaussianPolicy
    value: ValueNet
    ppo: PpoTrainer
    buffer: ReplayBuffer
    rngs: dict[str, np.random.Generator]
    snapshot_id: int = 0


def make_rngs(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "rollout", "disc", "ppo", "eval")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}


def evaluate(policy, env, n_episodes: int, rng: np.random.Generator | None = None, seed: int | None = None) -> dict:
    """Deterministic-action rollouts; returns success rate and mean native return."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    act = policy.mean_action if hasattr(policy, "mean_action") else policy
    s = env.reset(n_episodes, rng)
    ret = np.zeros(n_episodes)
    for _ in range(env.spec.horizon):
        s2 = env.step(s, act(s), rng)
        ret += env.native_reward(s, s2)
        s = s2
    return {"success": float(np.mean(env.success(s))), "return": float(np.mean(ret))}


def load_expert(cfg: TrainConfig, env) -> ExpertDataset:
    if not cfg.expert_path:
        raise ConfigError("missing config key train.expert_path")
    path = Path(cfg.expert_path)
    if not path.exists():
        raise FileNotFoundError(f"expert dataset not found: {path}")
    return read_dataset(path)


def pretrain_na(cfg: TrainConfig, expert: ExpertDataset, state_dim: int | None = None,
                rng: np.random.Generator | None = None):
    """Expert-only denoiser for the non-adversarial variant, returned frozen."""
    rngs = make_rngs(cfg.seed)
    disc = make_discriminator(state_dim or expert.state_dim, cfg.disc, rngs["init"])
    disc.fit_scaler(expert.s, expert.s_next)
    disc.pretrain(expert, cfg.na_pretrain_steps, rng or rngs["disc"])
    disc.freeze()
    return disc


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def train(cfg: TrainConfig, expert: ExpertDataset | None = None, progress: bool = False):
    """Run the adversarial loop. Returns ``(RunState, rows)`` where rows are metric dicts."""
    env = make_env(cfg.env, cfg.action_noise_sigma)
    if expert is None:
        expert = load_expert(cfg, env)
    if cfg.expert_trajectories:
        expert = expert.subsample(cfg.expert_trajectories)
    D = env.spec.state_dim
    if expert.state_dim != D:
        raise ValueError(f"expert dataset has state_dim {expert.state_dim}, env {cfg.env} needs {D}")
    if cfg.total_env_steps and cfg.total_env_steps < cfg.rollout_steps:
        raise ConfigError("total_env_steps must be >= rollout_steps")

    rngs = make_rngs(cfg.seed)
    disc = make_discriminator(D, cfg.disc, rngs["init"])
    if hasattr(disc, "fit_scaler"):
        disc.fit_scaler(expert.s, expert.s_next)
    policy = GaussianPolicy(D, env.spec.action_dim, env.spec.action_high, cfg.ppo.hidden,
                            cfg.ppo.init_log_std, rngs["init"])
    value = ValueNet(D, cfg.ppo.hidden, rngs["init"])
    state = RunState(0, 0, disc, policy, value, PpoTrainer(policy, value, cfg.ppo),
                     ReplayBuffer(cfg.disc.buffer_capacity, D), rngs)
    if cfg.variant == Variant.DIFO_NA and cfg.total_env_steps:
        disc.pretrain(expert, cfg.na_pretrain_steps, rngs["disc"])
        disc.freeze()

    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
    rows: list[dict] = []
    n_rounds = cfg.total_env_steps // cfg.rollout_steps
    next_eval = cfg.eval_every
    bs = cfg.disc.batch_size
    for r in range(n_rounds):
        rd = rngs["disc"]
        batch = collect_rollout(policy, value, env, lambda s, s2: disc.reward(s, s2, rd),
                                cfg.rollout_steps, rngs["rollout"], state.snapshot_id)
        state.env_steps += len(batch)
        state.buffer.add(batch.flat("states"), batch.flat("next_states"))

        row = {"round": r, "env_steps": state.env_steps}
        dm = []
        if disc.updates_enabled:
            for _ in range(cfg.disc_updates_per_round):
                idx = rd.integers(0, len(expert), size=bs)
                dm.append(disc.step((expert.s[idx], expert.s_next[idx]), state.buffer.sample(bs, rd), rd))
            state.snapshot_id += 1
        for k in ("L_D", "L_BCE", "L_MSE", "accuracy", "expert_accuracy", "agent_accuracy"):
            row[k] = float(np.mean([m[k] for m in dm])) if dm else None
        idx = rd.integers(0, len(expert), size=min(cfg.expert_batch_reward, len(expert)))
        row["mean_reward_agent"] = float(batch.rewards.mean())
        row["mean_reward_expert"] = float(disc.reward(expert.s[idx], expert.s_next[idx], rd).mean())

        if r >= cfg.warmup_rounds:
            compute_gae(batch, cfg.ppo.gamma, cfg.ppo.gae_lambda)
            row.update(state.ppo.update(batch, rngs["ppo"]))
        state.round = r + 1

        if state.env_steps >= next_eval or r == n_rounds - 1:
            while next_eval <= state.env_steps:
                next_eval += cfg.eval_every
            ev = evaluate(policy, env, cfg.eval_episodes, rngs["eval"])
            row["eval_success"], row["eval_return"] = ev["success"], ev["return"]
            if out and cfg.write_checkpoints:
                save_run_checkpoints(state, out / "checkpoints", state.env_steps)
            if progress:
                log.info("round %d steps %d success %.3f return %.3f acc %s", r, state.env_steps,
                         ev["success"], ev["return"], row.get("accuracy"))
        rows.append(row)
        if out:
            write_metrics(rows, out / "metrics.csv")
    if out and not rows:
        write_metrics(rows, out / "metrics.csv")
    return state, rows


def save_run_checkpoints(state: RunState, directory: Path, step: int) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    state.disc.save(directory / f"disc_{step:08d}.ckpt")
    pol = state.policy
    arch = {"kind": "gaussian_policy", "obs_dim": pol.obs_dim, "act_dim": pol.act_dim,
            "action_scale": pol.action_scale, "trunk": mlp_arch(pol.trunk.config)}
    save_checkpoint(directory / f"policy_{step:08d}.ckpt", arch, pol.params)
    save_checkpoint(directory / f"value_{step:08d}.ckpt", mlp_arch(state.value.mlp.config), state.value.params)


def load_policy(path) -> GaussianPolicy:
    arch, params = load_checkpoint(path)
    if arch.get("kind") != "gaussian_policy":
        raise CheckpointError(f"{path}: not a policy checkpoint (kind={arch.get('kind')!r})")
    sizes = arch["trunk"]["sizes"]
    pol = GaussianPolicy(arch["obs_dim"], arch["act_dim"], arch["action_scale"], tuple(sizes[1:-1]))
    if set(params) != set(pol.params) or any(params[k].shape != v.shape for k, v in pol.params.items()):
        raise CheckpointError(f"{path}: parameters do not match the header")
    pol.params = params
    return pol


def metrics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in METRIC_COLUMNS])
    return buf.getvalue()


def write_metrics(rows: list[dict], path) -> None:
    Path(path).write_text(metrics_csv(rows), encoding="utf-8")
