"""Network architectures: conditional MLP U-Net denoiser and plain MLPs.

Parameters live in ordinary ``dict[str, np.ndarray]`` objects. Forward
passes take a :class:`~difo.autodiff.Graph` plus a bound copy of the
parameters so the same code serves training (recording graph) and
inference (``Graph(record=False)``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor

C_E = 0  # expert label
C_A = 1  # agent label

_ACTS = {"relu": ad.relu, "silu": ad.silu, "tanh": ad.tanh, "sigmoid": ad.sigmoid,
         "identity": lambda x: x}
def _silu_(x: np.ndarray) -> np.ndarray:
    s = np.multiply(x, 0.5)
    np.tanh(s, out=s)
    s *= 0.5
    s += 0.5
    x *= s
    return x


# in-place numpy activations for the graph-free inference path
_NP_ACTS = {"relu": lambda x: np.maximum(x, 0.0, out=x), "silu": _silu_, "tanh": lambda x: np.tanh(x, out=x),
            "sigmoid": ad.stable_sigmoid, "identity": lambda x: x}


def _linear_init(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=(fan_out,))
    return w, b


def _dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return x @ w + b


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding with geometric frequencies ``10000**(-k/(dim/2))``.

    Returns shape ``(len(t), dim)``: sines in the first half, cosines in the second.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


# ------------------------------------------------------------------ U-Net


@dataclass(frozen=True)
class UnetConfig:
    x_dim: int
    cond_dim: int  # 0 for the unconditioned variant
    widths: tuple[int, ...] = (256, 256, 256)
    emb_dim: int = 128
    use_labels: bool = True
    activation: str = "silu"

    @property
    def context_dim(self) -> int:
        return self.emb_dim * (2 if self.use_labels else 1) + self.cond_dim


class MlpUnet:
    """Noise predictor ``eps(x_t, t | cond, label)``.

    Encoder layers ``h_i = act(W_i [h_{i-1}, ctx])``; decoder layers mirror
    them, each taking ``[d, h_skip, ctx]`` (skips are concatenated). The
    context ``ctx`` = time embedding, label embedding, conditioning state is
    fed to every layer including the zero-initialised output layer.
    """

    def __init__(self, config: UnetConfig, rng: np.random.Generator | None = None,
                 params: dict[str, np.ndarray] | None = None):
        self.config = config
        if params is None:
            params = self.init_params(config, rng or np.random.default_rng(0))
        self.params = params

    @staticmethod
    def layer_inputs(c: UnetConfig) -> list[tuple[str, tuple[int, ...], int]]:
        """Per layer: name, widths of the concatenated input groups in order, output width."""
        ctx = (c.emb_dim,) + ((c.emb_dim,) if c.use_labels else ()) + ((c.cond_dim,) if c.cond_dim else ())
        layers = []
        prev = c.x_dim
        for i, w in enumerate(c.widths):
            layers.append((f"enc{i}", (prev,) + ctx, w))
            prev = w
        for i in range(len(c.widths) - 2, -1, -1):
            w = c.widths[i]
            layers.append((f"dec{i}", (prev, c.widths[i]) + ctx, w))
            prev = w
        layers.append(("out", (prev,) + ctx, c.x_dim))
        return layers

    @classmethod
    def layer_shapes(cls, c: UnetConfig) -> list[tuple[str, int, int]]:
        return [(name, sum(groups), fo) for name, groups, fo in cls.layer_inputs(c)]

    @classmethod
    def param_count(cls, c: UnetConfig) -> int:
        n = sum(fi * fo + fo for _, fi, fo in cls.layer_shapes(c))
        if c.use_labels:
            n += 2 * c.emb_dim
        return n

    @classmethod
    def init_params(cls, c: UnetConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
        p = {}
        if c.use_labels:
            p["label_emb"] = rng.normal(0.0, 1.0, size=(2, c.emb_dim))
        for name, groups, fo in cls.layer_inputs(c):
            # Fan-in scaling per input group, so a 1-D state is not drowned out by the embeddings.
            w = np.concatenate([rng.uniform(-1, 1, size=(k, fo)) / np.sqrt(len(groups) * k) for k in groups])
            b = rng.uniform(-1, 1, size=(fo,)) / np.sqrt(sum(groups))
            if name == "out":
                w, b = np.zeros_like(w), np.zeros_like(b)
            p[f"{name}.w"], p[f"{name}.b"] = w, b
        return p

    def forward(self, g: Graph, p: dict[str, Tensor], x_t, t, cond=None, label=None) -> Tensor:
        c = self.config
        x_t = x_t if isinstance(x_t, Tensor) else g.const(x_t)
        n = x_t.shape[0]
        if x_t.data.ndim != 2 or x_t.shape[1] != c.x_dim:
            raise ValueError(f"denoise: expected noised input of width {c.x_dim}, got shape {x_t.shape}")
        t = np.broadcast_to(np.asarray(t), (n,))
        if np.any(t < 1):
            raise ValueError("denoise: timestep must be >= 1")
        parts = [g.const(time_embedding(t, c.emb_dim))]
        if c.use_labels:
            if label is None:
                raise ValueError("denoise: this network requires a label")
            lab = np.broadcast_to(np.asarray(label), (n,))
            parts.append(g.const(np.eye(2)[lab]) @ p["label_emb"])
        elif label is not None:
            raise ValueError("denoise: network was built without label conditioning")
        if c.cond_dim:
            if cond is None:
                raise ValueError("denoise: conditioning state required")
            cond = np.asarray(cond, dtype=np.float64).reshape(n, -1)
            if cond.shape[1] != c.cond_dim:
                raise ValueError(f"denoise: expected conditioning width {c.cond_dim}, got {cond.shape[1]}")
            parts.append(g.const(cond))
        elif cond is not None:
            raise ValueError("denoise: network was built without a conditioning state")
        ctx = ad.concat(parts, axis=1)
        act = _ACTS[c.activation]

        h = x_t
        skips = []
        for i in range(len(c.widths)):
            h = act(_dense(ad.concat([h, ctx], axis=1), p[f"enc{i}.w"], p[f"enc{i}.b"]))
            skips.append(h)
        for i in range(len(c.widths) - 2, -1, -1):
            h = act(_dense(ad.concat([h, skips[i], ctx], axis=1), p[f"dec{i}.w"], p[f"dec{i}.b"]))
        return _dense(ad.concat([h, ctx], axis=1), p["out.w"], p["out.b"])

    def predict(self, x_t: np.ndarray, t: int, cond=None, label=None) -> np.ndarray:
        """Inference for a batch that shares one timestep and one label.

        The time and label embeddings then add the same row to every
        pre-activation, so their product with the weights is formed once per
        layer instead of once per row. Matches :meth:`forward` up to rounding.
        """
        c = self.config
        p = self.params
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
        n = x_t.shape[0]
        shared = [time_embedding([t], c.emb_dim)]
        if c.use_labels:
            shared.append(p["label_emb"][[label]])
        shared = np.concatenate(shared, axis=1)
        cond = np.asarray(cond, dtype=np.float64).reshape(n, -1) if c.cond_dim else None
        act = _NP_ACTS[c.activation]

        def layer(name, inputs):
            w = p[f"{name}.w"]
            out = inputs[0] @ w[:inputs[0].shape[1]]
            row = inputs[0].shape[1]
            for a in inputs[1:]:
                out += a @ w[row:row + a.shape[1]]
                row += a.shape[1]
            out += shared @ w[row:row + shared.shape[1]] + p[f"{name}.b"]
            if cond is not None:
                out += cond @ w[row + shared.shape[1]:]
            return out

        h = x_t
        skips = []
        for i in range(len(c.widths)):
            h = act(layer(f"enc{i}", [h]))
            skips.append(h)
        for i in range(len(c.widths) - 2, -1, -1):
            h = act(layer(f"dec{i}", [h, skips[i]]))
        return layer("out", [h])

    def __call__(self, x_t, t, cond=None, label=None) -> np.ndarray:
        g = Graph(record=False)
        return self.forward(g, ad.bind(g, self.params), np.atleast_2d(x_t), t, cond, label).data


def denoise(net: MlpUnet, noised_next_state, t, cond_state=None, label=None) -> np.ndarray:
    """Predicted noise for one or many inputs (no graph recorded)."""
    x = np.asarray(noised_next_state, dtype=np.float64)
    single = x.ndim == 1
    out = net(np.atleast_2d(x), t, None if cond_state is None else np.atleast_2d(cond_state), label)
    return out[0] if single else out


# -------------------------------------------------------------------- MLP


@dataclass(frozen=True)
class MlpConfig:
    sizes: tuple[int, ...]  # input, hidden..., output
    activation: str = "tanh"
    out_activation: str = "identity"


class Mlp:
    def __init__(self, config: MlpConfig, rng: np.random.Generator | None = None,
                 params: dict[str, np.ndarray] | None = None):
        self.config = config
        if params is None:
            rng = rng or np.random.default_rng(0)
            params = {}
            for i, (fi, fo) in enumerate(zip(config.sizes[:-1], config.sizes[1:])):
                params[f"l{i}.w"], params[f"l{i}.b"] = _linear_init(rng, fi, fo)
        self.params = params

    @property
    def n_layers(self) -> int:
        return len(self.config.sizes) - 1

    def forward(self, g: Graph, p: dict[str, Tensor], x) -> Tensor:
        x = x if isinstance(x, Tensor) else g.const(np.atleast_2d(x))
        if x.shape[-1] != self.config.sizes[0]:
            raise ValueError(f"mlp: expected input width {self.config.sizes[0]}, got {x.shape[-1]}")
        act = _ACTS[self.config.activation]
        for i in range(self.n_layers):
            x = _dense(x, p[f"l{i}.w"], p[f"l{i}.b"])
            x = act(x) if i < self.n_layers - 1 else _ACTS[self.config.out_activation](x)
        return x

    def __call__(self, x) -> np.ndarray:
        g = Graph(record=False)
        return self.forward(g, ad.bind(g, self.params), np.atleast_2d(np.asarray(x, dtype=np.float64))).data


def mlp_forward(net: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = net(x)
    return out[0] if x.ndim == 1 else out


# ------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"DIFOCKPT\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arch: dict, params: dict[str, np.ndarray]) -> None:
    """Text header (magic line + one JSON line) followed by little-endian float64 parameters."""
    names = list(params)
    header = {"arch": arch, "params": [[k, list(params[k].shape)] for k in names]}
    blob = b"".join(np.ascontiguousarray(params[k], dtype="<f8").tobytes() for k in names)
    Path(path).write_bytes(CKPT_MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + blob)


def load_checkpoint(path, expect_arch: dict | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    nl = raw.find(b"\n", len(CKPT_MAGIC))
    if nl < 0:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[len(CKPT_MAGIC):nl].decode())
        arch, layout = header["arch"], header["params"]
    except (ValueError, KeyError, TypeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    if expect_arch is not None and _norm(expect_arch) != _norm(arch):
        raise CheckpointError(f"{path}: architecture mismatch: file has {arch}, config wants {expect_arch}")
    params, off = {}, nl + 1
    for name, shape in layout:
        n = int(np.prod(shape)) if shape else 1
        end = off + 8 * n
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated parameter data at {name}")
        params[name] = np.frombuffer(raw[off:end], dtype="<f8").astype(np.float64).reshape(shape)
        off = end
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return arch, params


def _norm(d: dict) -> str:
    return json.dumps(d, sort_keys=True)


def unet_arch(c: UnetConfig) -> dict:
    d = asdict(c)
    d["widths"] = list(c.widths)
    d["kind"] = "mlp_unet"
    return d


def unet_from_arch(arch: dict, params) -> MlpUnet:
    a = {k: v for k, v in arch.items() if k != "kind"}
    a["widths"] = tuple(a["widths"])
    return MlpUnet(UnetConfig(**a), params=params)


def mlp_arch(c: MlpConfig) -> dict:
    return {"kind": "mlp", "sizes": list(c.sizes), "activation": c.activation,
            "out_activation": c.out_activation}


def mlp_from_arch(arch: dict, params) -> Mlp:
    return Mlp(MlpConfig(tuple(arch["sizes"]), arch["activation"], arch["out_activation"]), params=params)
