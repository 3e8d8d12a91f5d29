"""Denoisers predicting ``p(x0 | xk)`` per tensor entry.

Two implementations share the call signature ``denoiser(xk, k) -> field``:

* :class:`BayesDenoiser` -- exact posterior over a finite dataset; used as a
  verification oracle for the sampler.
* :class:`NetDenoiser` -- a small residual MLP with additive sinusoidal step
  features, trained by :func:`train` with hand-derived gradients and Adam.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .diffusion import DEFAULT_LAMBDA, NoiseSchedule, forward_sample, make_rng, vlb_loss_and_grad

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


def _as_array(t) -> np.ndarray:
    return np.asarray(getattr(t, "data", t), dtype=np.uint8)


class BayesDenoiser:
    """Exact ``p(x0 | xk)`` with the empirical distribution of ``dataset`` as prior.

    The field entry ``e`` is the posterior-weighted share of dataset patterns
    with a one at ``e``.
    """

    def __init__(self, dataset, sched: NoiseSchedule):
        arrays = [_as_array(t) for t in dataset]
        if not arrays:
            raise ValueError("dataset is empty")
        self.shape = arrays[0].shape
        if any(a.shape != self.shape for a in arrays):
            raise ValueError("dataset tensors differ in shape")
        flat = np.stack([a.reshape(-1) for a in arrays])
        self.patterns, counts = np.unique(flat, axis=0, return_counts=True)
        self.log_prior = np.log(counts / counts.sum())
        self.sched = sched

    def posterior_weights(self, xk, k: int) -> np.ndarray:
        x = np.asarray(xk, dtype=np.uint8).reshape(-1, self.patterns.shape[1])
        n = x.shape[1]
        d = kernels.hamming(x, self.patterns)
        ab = self.sched.alpha_bar[k]
        flip, keep = (1 - ab) / 2, (1 + ab) / 2
        with np.errstate(divide="ignore"):
            lf, lk = np.log(flip), np.log(keep)
        logw = self.log_prior + np.where(d > 0, d * lf, 0.0) + np.where(n - d > 0, (n - d) * lk, 0.0)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        return w / w.sum(axis=1, keepdims=True)

    def __call__(self, xk, k: int) -> np.ndarray:
        xk = np.asarray(xk, dtype=np.uint8)
        if xk.shape[-len(self.shape):] != self.shape:
            raise ValueError(f"expected trailing shape {self.shape}, got {xk.shape}")
        p1 = self.posterior_weights(xk, k) @ self.patterns
        p1 = np.clip(p1, 0.0, 1.0).reshape(xk.shape)
        return np.stack([1.0 - p1, p1], axis=-1)


# -- residual MLP --------------------------------------------------------------------


@dataclass(frozen=True)
class NetConfig:
    channels: int
    size: int
    width: int = 64
    depth: int = 2

    @property
    def n_in(self) -> int:
        return self.channels * self.size * self.size


@dataclass
class NetParams:
    config: NetConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "NetParams":
        return NetParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def time_features(k, dim: int) -> np.ndarray:
    """Sinusoidal step encoding, shape ``(len(k), dim)``."""
    k = np.atleast_1d(np.asarray(k, dtype=np.float64))
    half = dim // 2
    freq = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = k[:, None] * freq[None, :]
    out = np.zeros((k.size, dim))
    out[:, :half] = np.sin(ang)
    out[:, half : 2 * half] = np.cos(ang)
    return out


def init_params(config: NetConfig, rng) -> NetParams:
    n, H = config.n_in, config.width
    t = {
        "W_in": rng.normal(0.0, 1.0 / math.sqrt(n), (n, H)),
        "b_in": np.zeros(H),
    }
    for l in range(config.depth):
        t[f"Wt_{l}"] = rng.normal(0.0, 1.0 / math.sqrt(H), (H, H))
        t[f"W_{l}"] = rng.normal(0.0, 1.0 / math.sqrt(H), (H, H))
        t[f"b_{l}"] = np.zeros(H)
    t["W_out"] = np.zeros((H, 2 * n))
    t["b_out"] = np.zeros(2 * n)
    return NetParams(config, t)


def _forward(params: NetParams, x, k, dropout: float = 0.0, rng=None):
    cfg = params.config
    p = params.tensors
    x = np.asarray(x, dtype=np.float64).reshape(-1, cfg.n_in)
    B = x.shape[0]
    u = 2.0 * x - 1.0
    temb = time_features(np.broadcast_to(np.asarray(k), (B,)), cfg.width)
    h = u @ p["W_in"] + p["b_in"]
    cache = {"u": u, "temb": temb, "blocks": []}
    for l in range(cfg.depth):
        z = h + temb @ p[f"Wt_{l}"]
        pre = z @ p[f"W_{l}"] + p[f"b_{l}"]
        a = np.maximum(pre, 0.0)
        if dropout > 0 and rng is not None:
            mask = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
        else:
            mask = None
        d = a * mask if mask is not None else a
        cache["blocks"].append((z, pre, mask))
        h = h + d
    cache["h"] = h
    logits = (h @ p["W_out"] + p["b_out"]).reshape(B, cfg.n_in, 2)
    return logits, cache


def net_forward(params: NetParams, xk, k) -> np.ndarray:
    """Eval-mode logits of shape ``xk.shape + (2,)``; ``xk`` may carry a batch axis."""
    xk = np.asarray(xk)
    logits, _ = _forward(params, xk, k)
    return logits.reshape(xk.shape + (2,))


def _backward(params: NetParams, cache, dlogits) -> dict[str, np.ndarray]:
    cfg = params.config
    p = params.tensors
    B = dlogits.shape[0]
    G = dlogits.reshape(B, 2 * cfg.n_in)
    grads = {"W_out": cache["h"].T @ G, "b_out": G.sum(axis=0)}
    dh = G @ p["W_out"].T
    for l in reversed(range(cfg.depth)):
        z, pre, mask = cache["blocks"][l]
        da = dh * mask if mask is not None else dh
        dpre = da * (pre > 0)
        grads[f"W_{l}"] = z.T @ dpre
        grads[f"b_{l}"] = dpre.sum(axis=0)
        dz = dpre @ p[f"W_{l}"].T
        grads[f"Wt_{l}"] = cache["temb"].T @ dz
        dh = dh + dz
    grads["W_in"] = cache["u"].T @ dh
    grads["b_in"] = dh.sum(axis=0)
    return grads


def net_loss_and_gradient(params: NetParams, x0, xk, k, lam: float, sched: NoiseSchedule,
                          dropout: float = 0.0, rng=None):
    """Mean diffusion loss over a batch and its exact gradient for every parameter tensor.

    ``x0`` and ``xk`` have shape ``(B, C, M, M)``; ``k`` is an int or one step per item.
    """
    cfg = params.config
    x0 = np.asarray(x0, dtype=np.uint8).reshape(-1, cfg.n_in)
    xk = np.asarray(xk, dtype=np.uint8).reshape(-1, cfg.n_in)
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    ks = np.broadcast_to(np.asarray(k), (x0.shape[0],))
    logits, cache = _forward(params, xk, ks, dropout, rng)
    loss, dlogits = vlb_loss_and_grad(logits, x0, xk, ks[:, None], lam, sched)
    grads = _backward(params, cache, dlogits)
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise FloatingPointError("non-finite gradient")
    return loss, grads


def net_gradient(params, x0, xk, k, lam, sched, dropout=0.0, rng=None) -> dict[str, np.ndarray]:
    return net_loss_and_gradient(params, x0, xk, k, lam, sched, dropout, rng)[1]


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        s = max_norm / norm
        return {k: g * s for k, g in grads.items()}, norm
    return grads, norm


class NetDenoiser:
    def __init__(self, params: NetParams):
        self.params = params

    def __call__(self, xk, k: int) -> np.ndarray:
        logits = net_forward(self.params, xk, k)
        z = logits[..., 1] - logits[..., 0]
        p1 = 0.5 * (1.0 + np.tanh(0.5 * z))
        return np.stack([1.0 - p1, p1], axis=-1)


# -- training ------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 128
    lr: float = 2e-4
    grad_clip: float = 1.0
    dropout: float = 0.1
    lam: float = DEFAULT_LAMBDA
    seed: int = 0
    width: int = 64
    depth: int = 2
    log_every: int = 100

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be positive")
        if not (self.lr > 0 and self.grad_clip >= 0 and 0 <= self.dropout < 1 and self.lam >= 0):
            raise ValueError("invalid optimizer settings")


@dataclass
class TrainResult:
    params: NetParams
    losses: list[float] = field(default_factory=list)


def train(dataset, cfg: TrainConfig, sched: NoiseSchedule, params: NetParams | None = None) -> TrainResult:
    """Adam on the diffusion loss with a uniformly drawn step per batch item.

    ``dataset`` is the (already augmented) list of topology tensors.
    """
    data = np.stack([_as_array(t) for t in dataset])
    C, M = data.shape[1], data.shape[2]
    rng = make_rng(cfg.seed)
    if params is None:
        params = init_params(NetConfig(C, M, cfg.width, cfg.depth), rng)
    params = params.copy()
    m1 = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    m2 = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    losses = []
    for it in range(1, cfg.iterations + 1):
        idx = rng.integers(0, len(data), cfg.batch_size)
        x0 = data[idx]
        ks = rng.integers(1, sched.K + 1, cfg.batch_size)
        xk = np.stack([forward_sample(x0[b], int(ks[b]), sched, rng) for b in range(cfg.batch_size)])
        try:
            loss, grads = net_loss_and_gradient(params, x0, xk, ks, cfg.lam, sched, cfg.dropout, rng)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"iteration {it}: {exc}") from exc
        grads, _ = clip_by_global_norm(grads, cfg.grad_clip)
        for name, g in grads.items():
            m1[name] = b1 * m1[name] + (1 - b1) * g
            m2[name] = b2 * m2[name] + (1 - b2) * g * g
            mh = m1[name] / (1 - b1**it)
            vh = m2[name] / (1 - b2**it)
            params.tensors[name] -= cfg.lr * mh / (np.sqrt(vh) + eps)
        losses.append(loss)
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %d loss %.5f", it, float(np.mean(losses[-cfg.log_every:])))
    return TrainResult(params, losses)


# -- checkpoint file -----------------------------------------------------------------

CKPT_MAGIC = b"PGCK"
CKPT_VERSION = 1


def checkpoint_bytes(params: NetParams, extra: dict | None = None) -> bytes:
    cfg = {"net": asdict(params.config)}
    if extra:
        cfg.update(extra)
    blob = json.dumps(cfg, sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(blob)), blob]
    names = sorted(params.tensors)
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(params.tensors[name], dtype="<f8")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes) -> tuple[NetParams, dict]:
    if data[:4] != CKPT_MAGIC:
        raise ValueError("not a checkpoint file")
    off = 4
    version, n = struct.unpack_from("<HI", data, off)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off += 6
    cfg = json.loads(data[off : off + n])
    off += n
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + ln].decode()
        off += ln
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape)) * 8
        tensors[name] = np.frombuffer(data[off : off + size], dtype="<f8").reshape(shape).astype(np.float64)
        off += size
    if off != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return NetParams(NetConfig(**cfg["net"]), tensors), cfg
