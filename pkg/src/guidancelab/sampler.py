"""Reverse-process generation: stochastic ancestral and DDIM samplers.

Both samplers consume any fused prediction function. Noise is drawn from
per-chain counter-based streams keyed by (seed, chain), with the step index
addressing into each stream, so batched and chain-at-a-time execution produce
bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .guidance import GuidanceStack, compose
from .schedule import NoiseSchedule

__all__ = ["SamplerConfig", "inference_grid", "ancestral_step", "ddim_step", "generate"]


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "ancestral"
    num_inference_steps: int = 50
    eta: float = 0.0
    seed: int = 0
    batch: int = 1

    def __post_init__(self):
        if self.kind not in ("ancestral", "ddim"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.num_inference_steps < 1:
            raise ValueError("num_inference_steps must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


def inference_grid(T: int, num_steps: int) -> np.ndarray:
    """Strictly decreasing timesteps: floor(T k / S) for k = S..1, always including T."""
    if not 1 <= num_steps <= T:
        raise ValueError(f"num_inference_steps must lie in [1, {T}]")
    ks = np.arange(num_steps, 0, -1)
    grid = (T * ks) // num_steps
    if np.any(np.diff(grid) >= 0) or grid[0] != T or grid[-1] < 1:
        raise AssertionError("inference grid violated its invariants")
    return grid.astype(int)


def _check_step_pair(t: int, t_prev: int, schedule: NoiseSchedule):
    if not t > t_prev >= 0:
        raise ValueError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    abar_t = schedule.abar(t)
    if abar_t <= 0.0:
        raise ValueError(f"abar({t}) must be positive")
    return abar_t, schedule.abar(t_prev)


def ancestral_step(z, t: int, t_prev: int, eps, noise, schedule: NoiseSchedule):
    """One stochastic posterior step from timestep t to t_prev.

    Reconstructs z0_hat from the noise prediction, then samples the forward
    posterior toward t_prev; no noise is injected when t_prev = 0.
    """
    abar_t, abar_prev = _check_step_pair(t, t_prev, schedule)
    z = np.asarray(z, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    z0_hat = (z - np.sqrt(1.0 - abar_t) * eps) / np.sqrt(abar_t)
    alpha_eff = abar_t / abar_prev
    beta_eff = 1.0 - alpha_eff
    mean = (np.sqrt(abar_prev) * beta_eff / (1.0 - abar_t)) * z0_hat \
        + (np.sqrt(alpha_eff) * (1.0 - abar_prev) / (1.0 - abar_t)) * z
    if t_prev == 0:
        return mean
    var = beta_eff * (1.0 - abar_prev) / (1.0 - abar_t)
    return mean + np.sqrt(var) * np.asarray(noise, dtype=np.float64)


def ddim_step(z, t: int, t_prev: int, eps, eta: float, noise, schedule: NoiseSchedule):
    """One DDIM step; eta = 0 is deterministic, eta = 1 matches the ancestral variance."""
    abar_t, abar_prev = _check_step_pair(t, t_prev, schedule)
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    z = np.asarray(z, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    z0_hat = (z - np.sqrt(1.0 - abar_t) * eps) / np.sqrt(abar_t)
    sigma = eta * np.sqrt((1.0 - abar_prev) / (1.0 - abar_t)) \
        * np.sqrt(1.0 - abar_t / abar_prev)
    # radicand is algebraically >= 0 but can round below zero at eta = 1
    direction = np.sqrt(max(1.0 - abar_prev - sigma**2, 0.0)) * eps
    out = np.sqrt(abar_prev) * z0_hat + direction
    if sigma > 0.0:
        out = out + sigma * np.asarray(noise, dtype=np.float64)
    return out


def _chain_noise(seed: int, chain: int, num_steps: int, dimension: int) -> np.ndarray:
    """Counter-based noise block for one chain: row 0 is the initial draw,
    row 1 + s belongs to step index s."""
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, chain])))
    return gen.standard_normal((num_steps + 1, dimension))


def generate(predictor, config: SamplerConfig, dimension: int,
             schedule: NoiseSchedule | None = None) -> np.ndarray:
    """Run the reverse process for a batch of chains; returns (batch, dimension).

    ``predictor`` may be a GuidanceStack, a predictor object, or a plain
    function f(z, t); a bare function needs an explicit schedule.
    """
    if isinstance(predictor, GuidanceStack):
        schedule = predictor.schedule
        fn = lambda z, t: compose(predictor, z, t)
    elif hasattr(predictor, "predict"):
        schedule = predictor.schedule
        fn = lambda z, t: predictor.predict(z, t)
    else:
        if schedule is None:
            raise ValueError("a bare prediction function needs an explicit schedule")
        fn = predictor
    grid = inference_grid(schedule.num_steps, config.num_inference_steps)
    steps = list(zip(grid, list(grid[1:]) + [0]))
    noise = np.stack([
        _chain_noise(config.seed, c, len(steps), dimension)
        for c in range(config.batch)
    ])  # (batch, steps + 1, d)
    z = noise[:, 0, :].copy()
    for s, (t, t_prev) in enumerate(steps):
        try:
            eps = np.asarray(fn(z, int(t)), dtype=np.float64)
        except Exception as e:
            raise RuntimeError(f"prediction failed at step {s} (t={t}), all chains: {e}") from e
        if eps.shape != z.shape:
            raise RuntimeError(f"prediction at step {s} returned shape {eps.shape}, "
                               f"expected {z.shape}")
        bad = ~np.all(np.isfinite(eps), axis=-1)
        if np.any(bad):
            chain = int(np.argmax(bad))
            raise RuntimeError(f"non-finite prediction at step {s} (t={t}), chain {chain}")
        if config.kind == "ancestral":
            z = ancestral_step(z, int(t), int(t_prev), eps, noise[:, 1 + s, :], schedule)
        else:
            z = ddim_step(z, int(t), int(t_prev), eps, config.eta, noise[:, 1 + s, :], schedule)
    return z
