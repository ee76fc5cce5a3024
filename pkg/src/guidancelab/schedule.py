"""Discrete forward-diffusion coefficients and the forward noising map.

Timestep convention: t = 0 is the clean-data index with cumulative retention
abar(0) = 1; model-facing timesteps are 1..T. The stored arrays are 0-indexed
by timestep-1, i.e. ``betas[i]`` belongs to timestep ``i + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["NoiseSchedule", "Sample", "make_schedule", "forward_diffuse"]


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step noising coefficients shared by every predictor and sampler."""

    num_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        for name in ("betas", "alphas", "alpha_bars"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        T = self.num_steps
        if T < 1:
            raise ValueError(f"num_steps must be >= 1, got {T}")
        if self.betas.shape != (T,) or self.alphas.shape != (T,) or self.alpha_bars.shape != (T,):
            raise ValueError("coefficient arrays must all have length num_steps")
        if not (np.all(self.betas > 0.0) and np.all(self.betas < 1.0)):
            raise ValueError("betas must lie strictly in (0, 1)")
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise ValueError("alpha_bars must be strictly decreasing")
        running = np.cumprod(self.alphas)
        if not np.allclose(self.alpha_bars, running, rtol=1e-12, atol=0.0):
            raise ValueError("alpha_bars must equal the running product of alphas")

    def abar(self, t: int) -> float:
        """Cumulative retention at timestep t, with the abar(0) = 1 convention."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.num_steps:
            raise ValueError(f"timestep {t} outside [0, {self.num_steps}]")
        return float(self.alpha_bars[t - 1])

    def __eq__(self, other):
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return self.num_steps == other.num_steps and np.array_equal(self.betas, other.betas)

    __hash__ = object.__hash__


@dataclass(frozen=True)
class Sample:
    """A point in data/latent space tagged with its timestep."""

    point: np.ndarray
    time_index: int

    def __post_init__(self):
        pt = np.asarray(self.point, dtype=np.float64)
        if pt.ndim != 1:
            raise ValueError("point must be a 1-D vector")
        pt.setflags(write=False)
        object.__setattr__(self, "point", pt)
        if self.time_index < 0:
            raise ValueError("time_index must be >= 0")

    @property
    def dimension(self) -> int:
        return self.point.shape[0]


def make_schedule(kind: str = "linear", T: int = 1000,
                  beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Build a noise schedule.

    ``linear`` spaces betas from beta_start to beta_end; ``cosine`` uses the
    squared-cosine cumulative-retention curve (beta bounds are ignored, betas
    are capped at 0.999).
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if kind == "linear":
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise ValueError(
                f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
        betas = np.linspace(beta_start, beta_end, T)
    elif kind == "cosine":
        s = 0.008
        grid = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((grid + s) / (1.0 + s) * np.pi / 2.0) ** 2
        abars = f / f[0]
        betas = np.clip(1.0 - abars[1:] / abars[:-1], 1e-8, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(num_steps=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def forward_diffuse(z0: np.ndarray, t: int, noise: np.ndarray,
                    schedule: NoiseSchedule) -> np.ndarray:
    """Noise clean data to timestep t: sqrt(abar_t) z0 + sqrt(1 - abar_t) noise.

    Accepts single vectors or batches (leading axes broadcast); t = 0 is the
    identity by the abar(0) = 1 convention.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if z0.shape != noise.shape:
        raise ValueError(f"shape mismatch: z0 {z0.shape} vs noise {noise.shape}")
    abar = schedule.abar(t)
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * noise
