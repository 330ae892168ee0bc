"""The full predictor: linear base + self-bias + re-bias, sampling and training."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linear, spectrum
from .dataio import Sample
from .nn import tensor as T
from .nn.layers import ConfigError, ParamStore, TransformerConfig
from .nn.optim import Adam
from .resonance import ReBias, ResonanceEncoder, polar_offsets, relative_spectrum
from .self_vibration import INTERP_MODES, DifferentialEncoder, SelfVibration

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    t_h: int = 8
    t_f: int = 12
    transform: str = "haar"
    n_way: int = 4
    n_theta: int = 8
    d: int = 128
    n_heads: int = 8
    n_layers: int = 2
    d_ff: int | None = None
    interp: str = "hermite"
    zero_init_decoders: bool = False
    use_linear: bool = True
    use_self: bool = True
    use_re: bool = True

    def transformer(self) -> TransformerConfig:
        return TransformerConfig(self.d, self.n_heads, self.n_layers, self.d_ff)

    def validate(self) -> None:
        if self.transform not in spectrum.KINDS:
            raise ConfigError(f"unknown transform {self.transform!r}")
        if self.interp not in INTERP_MODES:
            raise ConfigError(f"unknown interpolation mode {self.interp!r}")
        if self.d % 2:
            raise ConfigError(f"d must be even, got {self.d}")
        if self.n_theta < 1:
            raise ConfigError("n_theta must be >= 1")
        spectrum.spectral_shape(self.transform, self.t_h)
        spectrum.spectral_shape(self.transform, self.t_f)
        self.transformer().validate()


@dataclass
class TrainConfig:
    k_train: int = 20
    k_eval: int = 20
    epochs: int = 50
    batch_size: int = 500
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.k_train < 1 or self.k_eval < 1:
            raise ConfigError("K must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class BiasSet:
    base: np.ndarray
    self_bias: np.ndarray
    re_bias: np.ndarray
    total: np.ndarray


class Batch:
    """Numpy inputs for a list of samples, including the flattened neighbor pairs."""

    def __init__(self, samples: list[Sample], cfg: ModelConfig):
        kind = cfg.transform
        self.size = len(samples)
        self.obs = np.stack([s.ego_obs for s in samples]).astype(np.float64)
        futs = [s.ego_future for s in samples]
        self.future = None if any(f is None for f in futs) else np.stack(futs).astype(np.float64)
        if self.obs.shape[1] != cfg.t_h:
            raise ConfigError(f"samples carry t_h={self.obs.shape[1]}, model expects {cfg.t_h}")
        self.fit, self.base = linear.linear_pairs_batch(self.obs, cfg.t_f)
        self.spec_obs = spectrum.forward_batch(self.obs, kind)
        self.spec_fit = spectrum.forward_batch(self.fit, kind)
        self.spec_diff = spectrum.forward_batch(self.obs - self.fit, kind)
        self.spec_rel_ego = relative_spectrum(self.obs, kind)
        owner = [i for i, s in enumerate(samples) for _ in s.neighbors]
        self.owner = np.asarray(owner, dtype=np.int64)
        if owner:
            nb = np.stack([n for s in samples for n in s.neighbors]).astype(np.float64)
            self.spec_rel_nb = relative_spectrum(nb, kind)
            self.polar = polar_offsets(self.obs[self.owner, -1], nb[:, -1])
        else:
            T_h, M = spectrum.spectral_shape(kind, cfg.t_h)
            self.spec_rel_nb = np.zeros((0, T_h, M))
            self.polar = np.zeros((0, 2))


@dataclass
class Forward:
    base: np.ndarray        # (N, t_f, 2)
    self_bias: T.Tensor
    re_bias: T.Tensor
    total: T.Tensor
    extras: dict = field(default_factory=dict)


class ReModel:
    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        self.cfg = cfg or ModelConfig()
        self.cfg.validate()
        c = self.cfg
        tcfg = c.transformer()
        self.store = ParamStore(seed)
        self.T_h, self.M = spectrum.spectral_shape(c.transform, c.t_h)
        self.encoder = DifferentialEncoder(self.store, self.M, c.d)
        self.self_vib = SelfVibration(self.store, tcfg, kind=c.transform, t_h=c.t_h, t_f=c.t_f,
                                      n_way=c.n_way, interp=c.interp,
                                      zero_init_decoder=c.zero_init_decoders)
        self.resonance = ResonanceEncoder(self.store, self.M, self.T_h, c.d, c.n_theta)
        self.re_bias = ReBias(self.store, tcfg, kind=c.transform, t_h=c.t_h, t_f=c.t_f,
                              n_theta=c.n_theta, zero_init_decoder=c.zero_init_decoders)

    @property
    def noise_shape(self) -> tuple[int, int]:
        return self.T_h, self.cfg.d // 2

    def sample_noise(self, rng: np.random.Generator, n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
        shape = (n, k) + self.noise_shape
        return rng.standard_normal(shape), rng.standard_normal(shape)

    def forward(self, batch: Batch, z_s: np.ndarray, z_r: np.ndarray) -> Forward:
        """Predictions for every (sample, k); z arrays are (B, K, T_h, d/2)."""
        c = self.cfg
        B, K = z_s.shape[:2]
        if B != batch.size or z_s.shape[2:] != self.noise_shape or z_r.shape != z_s.shape:
            raise T.DimensionError(f"noise shapes {z_s.shape}/{z_r.shape} do not fit batch "
                                   f"of {batch.size} with {self.noise_shape}")
        rep = np.repeat(np.arange(B), K)
        N = B * K
        base = batch.base[rep] if c.use_linear else np.zeros((N, c.t_f, 2))
        zeros = T.Tensor(np.zeros((N, c.t_f, 2)))
        extras: dict = {}
        dfe = None
        if c.use_self or c.use_re:
            dfe = T.take(self.encoder(batch.spec_obs, batch.spec_fit), rep)
        if c.use_self:
            f_s = self.self_vib.feature(dfe, batch.spec_fit[rep], z_s.reshape((N,) + self.noise_shape))
            self_bias = self.self_vib.bias(f_s)
        else:
            self_bias = zeros
        if c.use_re:
            R = self.resonance(batch.spec_rel_ego, batch.spec_rel_nb, batch.polar, batch.owner)
            extras["resonance"] = R
            f_r = self.re_bias.feature(dfe, T.take(R.rows, rep), batch.spec_diff[rep],
                                       z_r.reshape((N,) + self.noise_shape))
            re = self.re_bias.bias(f_r)
        else:
            re = zeros
        total = T.add(T.add(self_bias, re), base)
        return Forward(base, self_bias, re, total, extras)

    # ------------------------------------------------------------ inference

    def predict_arrays(self, samples: list[Sample], K: int, seed: int | None = None,
                       deterministic: bool = False, chunk: int = 256) -> dict[str, np.ndarray]:
        """(B, K, t_f, 2) arrays for base, self, re and total.

        Noise is drawn per chunk from one generator seeded with ``seed``, so a
        given seed always yields the same predictions. ``deterministic``
        uses z = 0 (the equilibrium state).
        """
        rng = np.random.default_rng(seed)
        parts: dict[str, list] = {"base": [], "self": [], "re": [], "total": []}
        for lo in range(0, len(samples), chunk):
            part = samples[lo:lo + chunk]
            batch = Batch(part, self.cfg)
            if deterministic:
                z_s = np.zeros((len(part), K) + self.noise_shape)
                z_r = np.zeros_like(z_s)
            else:
                z_s, z_r = self.sample_noise(rng, len(part), K)
            out = self.forward(batch, z_s, z_r)
            shape = (len(part), K, self.cfg.t_f, 2)
            parts["base"].append(out.base.reshape(shape))
            parts["self"].append(out.self_bias.data.reshape(shape))
            parts["re"].append(out.re_bias.data.reshape(shape))
            parts["total"].append(out.total.data.reshape(shape))
        return {k: np.concatenate(v) if v else np.zeros((0, K, self.cfg.t_f, 2))
                for k, v in parts.items()}

    def predict(self, sample: Sample, K: int, seed: int | None = None,
                deterministic: bool = False) -> list[BiasSet]:
        arr = self.predict_arrays([sample], K, seed, deterministic)
        return [BiasSet(arr["base"][0, k], arr["self"][0, k], arr["re"][0, k], arr["total"][0, k])
                for k in range(K)]


# ---------------------------------------------------------------- objective


def best_of_k_loss(Y: np.ndarray, preds: np.ndarray) -> float:
    """min_k ||Y - Y_k||_F for one sample; ``preds`` is (K, t_f, 2)."""
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 3 or len(preds) < 1:
        raise ValueError("best-of-K loss needs K >= 1 predictions")
    return float(np.sqrt(((preds - Y[None]) ** 2).sum(axis=(1, 2))).min())


def best_of_k_tensor(total: T.Tensor, future: np.ndarray, K: int) -> tuple[T.Tensor, np.ndarray]:
    """Batch-mean best-of-K loss; the gradient flows through the selected k only
    (ties go to the lowest k). Returns (loss, per-sample minima)."""
    B = future.shape[0]
    resid = T.sub(total, np.repeat(future, K, axis=0))
    norms = T.reshape(T.norm(T.reshape(resid, (B * K, -1)), axis=-1), (B, K))
    best = np.argmin(norms.data, axis=1)
    chosen = T.take(norms, (np.arange(B), best))
    return T.mean(chosen), chosen.data.copy()


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    init_loss: float
    curve: list[float]
    steps: int


def evaluate_loss(model: ReModel, samples: list[Sample], K: int, seed: int, chunk: int = 256) -> float:
    arr = model.predict_arrays(samples, K, seed, chunk=chunk)
    Y = np.stack([s.ego_future for s in samples])
    d = np.sqrt(((arr["total"] - Y[:, None]) ** 2).sum(axis=(2, 3)))
    return float(d.min(axis=1).mean())


def _provenance(s: Sample) -> str:
    return f"{s.scene}/agent{s.ego_id}@{s.start_frame}"


def _finite_sample(s: Sample) -> bool:
    arrays = [s.ego_obs, s.ego_future] + list(s.neighbors)
    return all(np.all(np.isfinite(a)) for a in arrays)


def train(model: ReModel, samples: list[Sample], tcfg: TrainConfig, progress=None) -> TrainResult:
    """End-to-end best-of-K training with Adam. ``progress(epoch, loss)`` is
    called after every epoch when given."""
    tcfg.validate()
    if not samples:
        raise TrainingError("training split is empty")
    bad_in = [_provenance(x) for x in samples if not _finite_sample(x)]
    if bad_in:
        raise TrainingError(f"non-finite coordinates in {len(bad_in)} training samples, "
                            f"e.g. {bad_in[:5]}")
    opt = Adam(model.store, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps)
    init_loss = evaluate_loss(model, samples, tcfg.k_train, seed=tcfg.seed)
    noise_rng = np.random.default_rng([tcfg.seed, 1])
    order_rng = np.random.default_rng([tcfg.seed, 2])
    curve: list[float] = []
    steps = 0
    for epoch in range(tcfg.epochs):
        order = order_rng.permutation(len(samples))
        total, count = 0.0, 0
        for lo in range(0, len(samples), tcfg.batch_size):
            idx = order[lo:lo + tcfg.batch_size]
            part = [samples[i] for i in idx]
            batch = Batch(part, model.cfg)
            z_s, z_r = model.sample_noise(noise_rng, len(part), tcfg.k_train)
            out = model.forward(batch, z_s, z_r)
            loss, per_sample = best_of_k_tensor(out.total, batch.future, tcfg.k_train)
            if not np.isfinite(loss.data):
                bad = [_provenance(part[i]) for i in np.flatnonzero(~np.isfinite(per_sample))[:5]]
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, step {steps + 1}; "
                                    f"offending samples: {bad or 'all finite, check params'}")
            model.store.zero_grad()
            T.backward(loss)
            opt.step()
            steps += 1
            total += float(per_sample.sum())
            count += len(part)
        curve.append(total / count)
        log.info("epoch %d loss %.6f", epoch + 1, curve[-1])
        if progress:
            progress(epoch + 1, curve[-1])
    return TrainResult(init_loss, curve, steps)


def config_dict(cfg) -> dict:
    return asdict(cfg)
