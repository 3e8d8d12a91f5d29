"""Two-state discrete diffusion: schedule, kernels, posteriors, sampling, loss.

Every entry of a topology tensor is an independent two-state chain with the
symmetric kernel ``Q = [[1 - b, b], [b, 1 - b]]``.  Products of such kernels
keep the same form, so any product is fully described by one number
``a = prod(1 - 2 b_i)``:  ``[[(1 + a) / 2, (1 - a) / 2], [(1 - a) / 2, (1 + a) / 2]]``.
All probabilities are plain float64; the two-state case never needs log space.

Random numbers come from numpy's PCG64 bit generator (``make_rng``), whose
output stream is specified and identical across platforms for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

Denoiser = Callable[[np.ndarray, int], np.ndarray]
"""``denoiser(xk, k)`` maps a (batch of) noisy tensors to a field of shape ``xk.shape + (2,)``
holding ``p(x0 = 0 | xk)`` and ``p(x0 = 1 | xk)`` per entry."""

DEFAULT_LAMBDA = 0.001


class DenoiserOutputError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """``betas[k - 1]`` is the flip probability of step ``k``."""

    betas: np.ndarray

    def __post_init__(self):
        betas = np.array(self.betas, dtype=np.float64, copy=True).reshape(-1)
        if betas.size < 1:
            raise ValueError("schedule needs at least one step")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("every beta must lie strictly inside (0, 1)")
        betas.setflags(write=False)
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - 2.0 * betas)])
        alpha_bar.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @property
    def K(self) -> int:
        return self.betas.size

    def span_alpha(self, lo: int, hi: int) -> float:
        """``prod(1 - 2 b_i)`` for ``lo < i <= hi``; covers ``Q_{lo+1} ... Q_hi``."""
        if not 0 <= lo <= hi <= self.K:
            raise ValueError(f"bad step span ({lo}, {hi}] for K={self.K}")
        return float(np.prod(1.0 - 2.0 * self.betas[lo:hi]))


def linear_beta_schedule(K: int, beta1: float, betaK: float) -> NoiseSchedule:
    if K < 2:
        raise ValueError("K must be at least 2")
    if not 0 < beta1 <= betaK < 1:
        raise ValueError("need 0 < beta1 <= betaK < 1")
    k = np.arange(1, K + 1, dtype=np.float64)
    betas = (k - 1) * (betaK - beta1) / (K - 1) + beta1
    betas[-1] = betaK
    return NoiseSchedule(betas)


def kernel_from_alpha(a: float) -> np.ndarray:
    return np.array([[(1 + a) / 2, (1 - a) / 2], [(1 - a) / 2, (1 + a) / 2]])


def transition(beta: float) -> np.ndarray:
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    return np.array([[1.0 - beta, beta], [beta, 1.0 - beta]])


def cumulative_transition(sched: NoiseSchedule, k: int) -> np.ndarray:
    if not 1 <= k <= sched.K:
        raise ValueError(f"k={k} outside 1..{sched.K}")
    return kernel_from_alpha(sched.alpha_bar[k])


def flip_probability(sched: NoiseSchedule, k: int) -> float:
    return (1.0 - sched.alpha_bar[k]) / 2.0


def forward_sample(x0, k: int, sched: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Draw ``x_k ~ q(x_k | x_0)``: flip each entry with probability ``(1 - abar_k) / 2``."""
    x0 = np.asarray(x0, dtype=np.uint8)
    flips = rng.random(x0.shape) < flip_probability(sched, k)
    return x0 ^ flips.astype(np.uint8)


def _agree(a, b):
    return np.where(np.asarray(a) == np.asarray(b), 1.0, -1.0)


def _posterior_p1(xk, x0, a_step, a_prev, a_all):
    """``q(x_{k-m} = 1 | x_k, x_0)`` from the three kernel coefficients (arrays allowed)."""
    den = (1.0 + a_all * _agree(x0, xk)) / 2.0
    if np.any(den <= 0):
        raise ArithmeticError("degenerate posterior normalizer")
    num1 = (1.0 + a_step * _agree(1, xk)) / 2.0 * (1.0 + a_prev * _agree(x0, 1)) / 2.0
    return num1 / den


def posterior(xk, x0, k: int, m: int, sched: NoiseSchedule) -> np.ndarray:
    """``q(x_{k-m} | x_k, x_0)`` as an array of shape ``broadcast(xk, x0).shape + (2,)``.

    Numerator ``(x_k Q_{k-m+1..k}^T) * (x_0 Qbar_{k-m})``, normalizer ``x_0 Qbar_k x_k^T``.
    """
    if not 1 <= m <= k <= sched.K:
        raise ValueError(f"need 1 <= m <= k <= K, got m={m}, k={k}, K={sched.K}")
    a_step = sched.span_alpha(k - m, k)
    a_prev = sched.alpha_bar[k - m]
    a_all = sched.alpha_bar[k]
    xk = np.asarray(xk)
    x0 = np.asarray(x0)
    den = (1.0 + a_all * _agree(x0, xk)) / 2.0
    if np.any(den <= 0):
        raise ArithmeticError("degenerate posterior normalizer")
    num = [
        (1.0 + a_step * _agree(s, xk)) / 2.0 * (1.0 + a_prev * _agree(x0, s)) / 2.0 for s in (0, 1)
    ]
    return np.stack([num[0] / den, num[1] / den], axis=-1)


def _check_field(field: np.ndarray, shape) -> np.ndarray:
    field = np.asarray(field, dtype=np.float64)
    if field.shape != tuple(shape) + (2,):
        raise DenoiserOutputError(f"denoiser returned shape {field.shape}, expected {tuple(shape) + (2,)}")
    if not np.all(np.isfinite(field)) or np.any(field < 0):
        raise DenoiserOutputError("denoiser returned negative or non-finite probabilities")
    if np.max(np.abs(field.sum(axis=-1) - 1.0), initial=0.0) > 1e-9:
        raise DenoiserOutputError("denoiser output is not normalized")
    return field


def reverse_probs(x0_field: np.ndarray, xk, k: int, m: int, sched: NoiseSchedule) -> np.ndarray:
    """``p(x_{k-m} = 1 | x_k)`` mixing the posterior over both values of ``x0``."""
    post0 = posterior(xk, 0, k, m, sched)[..., 1]
    post1 = posterior(xk, 1, k, m, sched)[..., 1]
    return post0 * x0_field[..., 0] + post1 * x0_field[..., 1]


def reverse_step(denoiser: Denoiser, xk, k: int, m: int, sched: NoiseSchedule, rng) -> np.ndarray:
    xk = np.asarray(xk, dtype=np.uint8)
    field = _check_field(denoiser(xk, k), xk.shape)
    p1 = reverse_probs(field, xk, k, m, sched)
    return (rng.random(xk.shape) < p1).astype(np.uint8)


def ladder(K: int, m: int) -> list[tuple[int, int]]:
    """``(k, step)`` pairs K, K-m, ...; the last step takes whatever remains."""
    if m < 1:
        raise ValueError("m must be at least 1")
    out = []
    k = K
    while k > 0:
        step = min(m, k)
        out.append((k, step))
        k -= step
    return out


def sample(denoiser: Denoiser, C: int, M: int, sched: NoiseSchedule, m: int, rng) -> np.ndarray:
    """Generate one ``(C, M, M)`` binary tensor from uniform noise in ``ceil(K / m)`` denoiser calls."""
    x = rng.integers(0, 2, size=(C, M, M), dtype=np.uint8)
    for k, step in ladder(sched.K, m):
        x = reverse_step(denoiser, x, k, step, sched, rng)
    return x


def sample_batch(
    denoiser: Denoiser, C: int, M: int, sched: NoiseSchedule, m: int, seed: int, count: int
) -> np.ndarray:
    """Batched :func:`sample`; tensor ``i`` uses its own stream ``make_rng(seed + i)``.

    Output ``i`` is identical to ``sample(..., make_rng(seed + i))``.
    """
    shape = (C, M, M)
    if count == 0:
        return np.zeros((0,) + shape, dtype=np.uint8)
    gens = [make_rng(seed + i) for i in range(count)]
    x = np.stack([g.integers(0, 2, size=shape, dtype=np.uint8) for g in gens])
    for k, step in ladder(sched.K, m):
        field = _check_field(denoiser(x, k), x.shape)
        p1 = reverse_probs(field, x, k, step, sched)
        u = np.stack([g.random(shape) for g in gens])
        x = (u < p1).astype(np.uint8)
    return x


def denoiser_calls(K: int, m: int) -> int:
    return math.ceil(K / m)


# -- training objective ---------------------------------------------------------


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _xlogy_ratio(q, p):
    return np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0) / p), 0.0)


def vlb_loss_and_grad(logits, x0, xk, k: int, lam: float, sched: NoiseSchedule):
    """Mean per-entry ``KL(q(x_{k-1}|x_k,x_0) || p(x_{k-1}|x_k)) - lam * log p(x_0|x_k)``.

    ``logits[..., s]`` scores ``x0 = s``.  ``k`` may be an int or an array
    broadcasting against ``x0`` (one step per batch item).  Returns the loss and
    its gradient with respect to ``logits``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    x0 = np.asarray(x0)
    xk = np.asarray(xk)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    ks = np.broadcast_to(np.asarray(k), x0.shape)
    if np.any(ks < 1) or np.any(ks > sched.K):
        raise ValueError("step outside 1..K")
    a_step = 1.0 - 2.0 * sched.betas[ks - 1]
    a_prev = sched.alpha_bar[ks - 1]
    a_all = sched.alpha_bar[ks]
    q1 = _posterior_p1(xk, x0, a_step, a_prev, a_all)
    A = _posterior_p1(xk, 0, a_step, a_prev, a_all)
    B = _posterior_p1(xk, 1, a_step, a_prev, a_all) - A
    z = logits[..., 1] - logits[..., 0]
    pi1 = _sigmoid(z)
    pi0 = _sigmoid(-z)
    p1 = A + B * pi1
    p0 = (1.0 - A) - B * pi1
    q0 = 1.0 - q1
    kl = _xlogy_ratio(q1, p1) + _xlogy_ratio(q0, p0)
    # -log softmax(logits)[x0], written as a stable softplus
    signed = np.where(x0 == 1, z, -z)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite logits")
    ce = np.logaddexp(0.0, -signed)
    n = kl.size
    loss = float(np.sum(kl + lam * ce) / n)
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite diffusion loss")
    dkl_dpi1 = B * (np.where(q0 > 0, q0 / p0, 0.0) - np.where(q1 > 0, q1 / p1, 0.0))
    dz = (dkl_dpi1 * pi1 * pi0 + lam * (pi1 - (x0 == 1))) / n
    grad = np.stack([-dz, dz], axis=-1)
    return loss, grad


def vlb_loss(logits, x0, xk, k, lam: float, sched: NoiseSchedule) -> float:
    return vlb_loss_and_grad(logits, x0, xk, k, lam, sched)[0]


def kl_term(logits, x0, xk, k, sched: NoiseSchedule) -> float:
    return vlb_loss_and_grad(logits, x0, xk, k, 0.0, sched)[0]
