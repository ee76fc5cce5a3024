"""Fusion of weighted conditional noise predictions around one unconditional base.

A stack holds a base predictor plus K (predictor, condition, weight) terms and
composes them as base + sum_i w_i * (term_i - base). Classic single-condition
guidance, negative prompting, and the concept/control recipe are special cases
of the same reduction; reference implementations of those closed forms live
here for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from .schedule import NoiseSchedule

__all__ = [
    "NoisePredictor",
    "FunctionPredictor",
    "GuidanceTerm",
    "GuidanceStack",
    "compose",
    "cfg_reference",
    "negative_prompt_reference",
    "concept_stack",
]


@runtime_checkable
class NoisePredictor(Protocol):
    """Anything that maps (z, t, optional condition) to predicted noise."""

    schedule: NoiseSchedule

    def predict(self, z, t, condition=None): ...


class FunctionPredictor:
    """Wraps a plain function f(z, t) as a predictor; ignores the condition slot."""

    requires_condition = False

    def __init__(self, fn, schedule: NoiseSchedule):
        self._fn = fn
        self.schedule = schedule

    def predict(self, z, t, condition=None):
        return self._fn(np.asarray(z, dtype=np.float64), t)


@dataclass(frozen=True)
class GuidanceTerm:
    predictor: object
    condition: str | None
    weight: float

    def __post_init__(self):
        if self.predictor is None:
            raise ValueError("term predictor must not be None")
        if not np.isfinite(self.weight):
            raise ValueError(f"term weight must be finite, got {self.weight}")


@dataclass(frozen=True)
class GuidanceStack:
    """Unconditional base plus K weighted conditional terms over one schedule."""

    base: object
    terms: tuple
    schedule: NoiseSchedule

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.base.schedule != self.schedule:
            raise ValueError("base predictor does not share the stack schedule")
        for i, term in enumerate(self.terms):
            if term.predictor.schedule != self.schedule:
                raise ValueError(f"term {i} predictor does not share the stack schedule")

    @property
    def num_terms(self) -> int:
        return len(self.terms)


def compose(stack: GuidanceStack, z, t: int):
    """Fused prediction base + sum_i w_i (term_i - base); base evaluated once.

    Terms are reduced in index order so results are bit-stable.
    """
    z = np.asarray(z, dtype=np.float64)
    if not 1 <= t <= stack.schedule.num_steps:
        raise ValueError(f"timestep {t} outside [1, {stack.schedule.num_steps}]")
    try:
        base = np.asarray(stack.base.predict(z, t), dtype=np.float64)
    except Exception as e:
        raise RuntimeError(f"base predictor failed at t={t}: {e}") from e
    out = base
    for i, term in enumerate(stack.terms):
        try:
            eps_i = np.asarray(term.predictor.predict(z, t, term.condition), dtype=np.float64)
        except Exception as e:
            raise RuntimeError(f"guidance term {i} (condition={term.condition!r}) "
                               f"failed at t={t}: {e}") from e
        out = out + term.weight * (eps_i - base)
    return out


def cfg_reference(uncond, cond, w: float):
    """Single-condition guidance closed form: (1 + w) cond - w uncond."""
    uncond = np.asarray(uncond, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    if uncond.shape != cond.shape:
        raise ValueError(f"shape mismatch: {uncond.shape} vs {cond.shape}")
    return (1.0 + w) * cond - w * uncond


def negative_prompt_reference(pos, neg, w: float):
    """Negative-prompt closed form: (1 - w) neg + w pos."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if pos.shape != neg.shape:
        raise ValueError(f"shape mismatch: {pos.shape} vs {neg.shape}")
    return (1.0 - w) * neg + w * pos


def concept_stack(prior, concept, control, control_condition: str,
                  w1: float, w2: float) -> GuidanceStack:
    """Three-model recipe: unconditional prior, condition-free concept model,
    conditional control model.

    Composing the returned stack equals
    (1 - w1 - w2) prior + w1 concept + w2 control(condition) identically.
    """
    if getattr(concept, "requires_condition", False):
        raise ValueError("concept predictor must be condition-free")
    stack = GuidanceStack(
        base=prior,
        terms=(
            GuidanceTerm(predictor=concept, condition=None, weight=w1),
            GuidanceTerm(predictor=control, condition=control_condition, weight=w2),
        ),
        schedule=prior.schedule,
    )
    return stack
