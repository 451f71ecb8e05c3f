"""Noise schedules and the per-step coefficients derived from them.

Every array on :class:`NoiseSchedule` has length ``T + 1`` and is indexed by
the diffusion step directly, so ``sch.beta[t]`` is the value at step ``t``.
Index 0 holds the boundary values of the chain before any noise is added
(``alpha_bar[0] = 1``, ``phi[0] = 0``, ``beta[0] = 0``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TextIO

import numpy as np

COSINE_OFFSET = 0.008
MAX_BETA = 0.999
LINEAR_BETA_RANGE = (1e-4, 0.02)

KINDS = ("cosine", "linear")


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    kind: str
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    phi: np.ndarray
    posterior_beta_tilde: np.ndarray

    def __post_init__(self):
        for name in ("beta", "alpha", "alpha_bar", "phi", "posterior_beta_tilde"):
            arr = getattr(self, name)
            if arr.shape != (self.T + 1,):
                raise ValueError(f"{name} must have shape ({self.T + 1},), got {arr.shape}")
            arr.setflags(write=False)

    def loss_coef(self, t):
        """Weight of the mask in the training target, sqrt(1 - abar_t) / sqrt(beta_t)."""
        return np.sqrt(1.0 - self.alpha_bar[t]) / np.sqrt(self.beta[t])

    def check_step(self, t) -> None:
        t = np.asarray(t)
        if t.size == 0 or np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"step out of range 1..{self.T}: {t}")


def cosine_betas(T: int, s: float = COSINE_OFFSET) -> np.ndarray:
    """Betas of the improved-DDPM cosine schedule, clipped to ``MAX_BETA``."""
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos((steps / T + s) / (1.0 + s) * math.pi / 2.0) ** 2
    abar = f / f[0]
    return np.minimum(1.0 - abar[1:] / abar[:-1], MAX_BETA)


def linear_betas(T: int, lo: float = LINEAR_BETA_RANGE[0], hi: float = LINEAR_BETA_RANGE[1]) -> np.ndarray:
    if T == 1:
        return np.array([lo], dtype=np.float64)
    return np.linspace(lo, hi, T, dtype=np.float64)


def schedule_from_betas(betas, kind: str = "custom") -> NoiseSchedule:
    """Fill every derived coefficient from a sequence of ``T`` betas."""
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size == 0:
        raise ValueError("betas must be a non-empty 1-D sequence")
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ValueError("every beta must lie in (0, 1)")
    T = betas.size

    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.ones(T + 1)
    phi = np.zeros(T + 1)
    beta_tilde = np.zeros(T + 1)
    for t in range(1, T + 1):
        alpha_bar[t] = alpha[t] * alpha_bar[t - 1]
        phi[t] = math.sqrt(alpha[t]) * phi[t - 1] + math.sqrt(beta[t])
        beta_tilde[t] = (1.0 - alpha_bar[t - 1]) * beta[t] / (1.0 - alpha_bar[t])

    return NoiseSchedule(
        T=T,
        kind=kind,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        phi=phi,
        posterior_beta_tilde=beta_tilde,
    )


def build_schedule(T: int, kind: str = "cosine", s: float = COSINE_OFFSET) -> NoiseSchedule:
    """Build a ``T``-step schedule of the given kind.

    ``s`` is the offset of the cosine schedule and is ignored for ``linear``.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if s < 0:
        raise ValueError(f"offset s must be non-negative, got {s}")
    if kind == "cosine":
        betas = cosine_betas(int(T), s)
    elif kind == "linear":
        betas = linear_betas(int(T))
    else:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {KINDS}")
    return schedule_from_betas(betas, kind=kind)


def phi_direct(sch: NoiseSchedule, t: int) -> float:
    """Mask coefficient at step ``t`` evaluated as the explicit sum over steps.

    O(t) per call; only used to cross-check the recurrence stored in ``sch.phi``.
    """
    if not 1 <= t <= sch.T:
        raise ValueError(f"step out of range 1..{sch.T}: {t}")
    i = np.arange(1, t + 1)
    return float(np.sum(np.sqrt(sch.alpha_bar[t] * sch.beta[i] / sch.alpha_bar[i])))


def dump_table(sch: NoiseSchedule, out: TextIO) -> None:
    out.write("t beta alpha_bar phi beta_tilde\n")
    out.writelines(
        f"{t} {sch.beta[t]:.17g} {sch.alpha_bar[t]:.17g} {sch.phi[t]:.17g} {sch.posterior_beta_tilde[t]:.17g}\n"
        for t in range(1, sch.T + 1)
    )


def read_table(text: str) -> dict[str, np.ndarray]:
    """Parse a table written by :func:`dump_table` into column arrays."""
    lines = [ln.split() for ln in text.strip().splitlines()]
    header, rows = lines[0], np.array(lines[1:], dtype=np.float64)
    return {name: rows[:, j] for j, name in enumerate(header)}
