"""Parameter storage and the layer primitives the network heads are built from."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DTYPE, DimensionError, Tensor


class ConfigError(ValueError):
    pass


class ParamStore:
    """Named parameter tensors; every tensor's initial value depends only on
    ``(seed, name, shape)``."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.params: dict[str, Tensor] = {}

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode("utf-8"))])

    def create(self, name: str, shape: tuple[int, ...], init: str = "uniform",
               fan_in: int | None = None) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        shape = tuple(int(s) for s in shape)
        if init == "uniform":
            bound = 1.0 / np.sqrt(fan_in if fan_in is not None else shape[0])
            data = self._rng(name).uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ConfigError(f"unknown init {init!r}")
        p = Tensor(data.astype(DTYPE), requires_grad=True, name=name)
        self.params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for n, p in self.params.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for n, p in self.params.items():
            arr = np.asarray(state[n], dtype=DTYPE)
            if arr.shape != p.shape:
                raise DimensionError(f"{n}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()

    def n_values(self) -> int:
        return sum(p.data.size for p in self.params.values())


@dataclass
class TransformerConfig:
    d: int = 128
    n_heads: int = 8
    n_layers: int = 2
    d_ff: int | None = None

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 2 * self.d
        self.validate()

    def validate(self) -> None:
        for key in ("d", "n_heads", "n_layers", "d_ff"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} is not divisible by n_heads={self.n_heads}")


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` broadcast over leading dimensions."""
    x, w, b = T.as_tensor(x), T.as_tensor(w), T.as_tensor(b)
    if w.ndim != 2 or b.shape != (w.shape[1],) or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"affine: x {x.shape}, w {w.shape}, b {b.shape}")
    return T.add(T.matmul(x, w), b)


class Linear:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, init: str = "uniform"):
        self.w = store.create(f"{name}.w", (n_in, n_out), init, fan_in=n_in)
        self.b = store.create(f"{name}.b", (n_out,), init, fan_in=n_in)

    def __call__(self, x) -> Tensor:
        return affine(x, self.w, self.b)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, d: int):
        self.gain = store.create(f"{name}.gain", (d,), "ones")
        self.bias = store.create(f"{name}.bias", (d,), "zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class MLP:
    """Affine layers with ``act`` between them and ``out_act`` (or nothing) at the end."""

    def __init__(self, store, name, sizes, act="relu", out_act=None, last_init="uniform"):
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            init = last_init if i == len(sizes) - 2 else "uniform"
            self.layers.append(Linear(store, f"{name}.{i}", a, b, init))
        self.act = _ACT[act]
        self.out_act = _ACT[out_act] if out_act else None

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.act(x)
        return self.out_act(x) if self.out_act else x


_ACT = {"relu": T.relu, "tanh": T.tanh}


def sinusoidal_encoding(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class MultiHeadAttention:
    def __init__(self, store: ParamStore, name: str, cfg: TransformerConfig):
        cfg.validate()
        self.cfg = cfg
        d = cfg.d
        self.q = Linear(store, f"{name}.q", d, d)
        self.k = Linear(store, f"{name}.k", d, d)
        self.v = Linear(store, f"{name}.v", d, d)
        self.o = Linear(store, f"{name}.o", d, d)
        self.last_weights: np.ndarray | None = None

    def __call__(self, q, k, v) -> Tensor:
        q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
        squeeze = q.ndim == 2
        if squeeze:
            q, k, v = (T.reshape(t, (1,) + t.shape) for t in (q, k, v))
        d, h = self.cfg.d, self.cfg.n_heads
        for t in (q, k, v):
            if t.shape[-1] != d:
                raise DimensionError(f"attention input width {t.shape[-1]} != d={d}")
        n, tq, tk, dh = q.shape[0], q.shape[1], k.shape[1], d // h

        def heads(x, length):
            return T.transpose(T.reshape(x, (n, length, h, dh)), (0, 2, 1, 3))

        qh, kh, vh = heads(self.q(q), tq), heads(self.k(k), tk), heads(self.v(v), tk)
        scores = T.mul(T.matmul(qh, T.swapaxes(kh, -1, -2)), 1.0 / np.sqrt(dh))
        weights = T.softmax(scores, axis=-1)
        self.last_weights = weights.data
        ctx = T.reshape(T.transpose(T.matmul(weights, vh), (0, 2, 1, 3)), (n, tq, d))
        out = self.o(ctx)
        return T.reshape(out, (tq, d)) if squeeze else out


def multi_head_attention(q, k, v, mha: MultiHeadAttention) -> Tensor:
    return mha(q, k, v)


class _EncoderLayer:
    def __init__(self, store, name, cfg):
        self.ln1 = LayerNorm(store, f"{name}.ln1", cfg.d)
        self.attn = MultiHeadAttention(store, f"{name}.attn", cfg)
        self.ln2 = LayerNorm(store, f"{name}.ln2", cfg.d)
        self.ff = MLP(store, f"{name}.ff", [cfg.d, cfg.d_ff, cfg.d])

    def __call__(self, x):
        y = self.ln1(x)
        x = x + self.attn(y, y, y)
        return x + self.ff(self.ln2(x))


class _DecoderLayer:
    def __init__(self, store, name, cfg):
        self.ln1 = LayerNorm(store, f"{name}.ln1", cfg.d)
        self.self_attn = MultiHeadAttention(store, f"{name}.self_attn", cfg)
        self.ln2 = LayerNorm(store, f"{name}.ln2", cfg.d)
        self.cross_attn = MultiHeadAttention(store, f"{name}.cross_attn", cfg)
        self.ln3 = LayerNorm(store, f"{name}.ln3", cfg.d)
        self.ff = MLP(store, f"{name}.ff", [cfg.d, cfg.d_ff, cfg.d])

    def __call__(self, x, memory):
        y = self.ln1(x)
        x = x + self.self_attn(y, y, y)
        x = x + self.cross_attn(self.ln2(x), memory, memory)
        return x + self.ff(self.ln3(x))


class Transformer:
    """Pre-norm encoder-decoder Transformer.

    ``src`` (N, Ts, d) is projected by ``enc_in`` and self-attended by the
    encoder; ``tgt`` (N, Tt, d_tgt) is projected to width d and queries the
    encoder memory in the decoder. Output is (N, Tt, d).
    """

    def __init__(self, store: ParamStore, name: str, cfg: TransformerConfig, d_tgt: int):
        cfg.validate()
        self.cfg = cfg
        self.enc_in = Linear(store, f"{name}.enc_in", cfg.d, cfg.d)
        self.dec_in = Linear(store, f"{name}.dec_in", d_tgt, cfg.d)
        self.encoder = [_EncoderLayer(store, f"{name}.enc{i}", cfg) for i in range(cfg.n_layers)]
        self.decoder = [_DecoderLayer(store, f"{name}.dec{i}", cfg) for i in range(cfg.n_layers)]
        self.enc_norm = LayerNorm(store, f"{name}.enc_norm", cfg.d)
        self.dec_norm = LayerNorm(store, f"{name}.dec_norm", cfg.d)
        self.out = Linear(store, f"{name}.out", cfg.d, cfg.d)

    def __call__(self, src, tgt) -> Tensor:
        src, tgt = T.as_tensor(src), T.as_tensor(tgt)
        T.check_finite(src, "transformer source")
        T.check_finite(tgt, "transformer target")
        squeeze = src.ndim == 2
        if squeeze:
            src = T.reshape(src, (1,) + src.shape)
            tgt = T.reshape(tgt, (1,) + tgt.shape)
        if src.shape[-1] != self.cfg.d:
            raise DimensionError(f"source width {src.shape[-1]} != d={self.cfg.d}")
        d = self.cfg.d
        x = self.enc_in(src) + sinusoidal_encoding(src.shape[1], d)
        for layer in self.encoder:
            x = layer(x)
        memory = self.enc_norm(x)
        y = self.dec_in(tgt) + sinusoidal_encoding(tgt.shape[1], d)
        for layer in self.decoder:
            y = layer(y, memory)
        out = self.out(self.dec_norm(y))
        return T.reshape(out, out.shape[1:]) if squeeze else out


def transformer_forward(src, tgt, model: Transformer) -> Tensor:
    return model(src, tgt)
