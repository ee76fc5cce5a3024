"""Labeled Gaussian-mixture data worlds with closed-form diffused scores.

A condition is a named subset of mixture components, so conditional densities,
posteriors p(condition | z), and the conditional noise-prediction oracle are
all exactly computable. Every sampling experiment in this lab is checked
against these closed forms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule

__all__ = [
    "MixtureWorld",
    "DiffusedMixture",
    "quadrant_world",
    "std_normal_world",
    "single_gaussian_world",
    "restrict",
    "diffuse_mixture",
    "log_density",
    "score",
    "analytic_noise_prediction",
    "sample_data",
    "posterior_log_mass",
    "weighted_product_log_density",
    "rejection_sample_product",
    "AnalyticPredictor",
]

_LOG_2PI = np.log(2.0 * np.pi)


def _component_arrays(components):
    weights = np.array([w for w, _, _ in components], dtype=np.float64)
    means = np.array([np.asarray(m, dtype=np.float64) for _, m, _ in components])
    covs = np.array([np.asarray(c, dtype=np.float64) for _, _, c in components])
    return weights, means, covs


@dataclass(frozen=True, eq=False)
class MixtureWorld:
    """Gaussian mixture with named component subsets acting as conditions."""

    weights: np.ndarray      # (k,)
    means: np.ndarray        # (k, d)
    covariances: np.ndarray  # (k, d, d)
    labels: dict             # condition name -> frozenset of component indices

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        cov = np.asarray(self.covariances, dtype=np.float64)
        if w.ndim != 1 or mu.ndim != 2 or cov.ndim != 3:
            raise ValueError("expected weights (k,), means (k,d), covariances (k,d,d)")
        k, d = mu.shape
        if w.shape[0] != k or cov.shape != (k, d, d):
            raise ValueError("component array shapes disagree")
        if np.any(w <= 0.0):
            raise ValueError("component weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        if not np.allclose(cov, np.swapaxes(cov, -1, -2)):
            raise ValueError("covariances must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as e:
            raise ValueError("every covariance must be positive-definite") from e
        labels = {}
        for name, idx in self.labels.items():
            idx = frozenset(int(i) for i in idx)
            if not idx:
                raise ValueError(f"label {name!r} selects no components")
            if not all(0 <= i < k for i in idx):
                raise ValueError(f"label {name!r} has out-of-range component indices")
            labels[name] = idx
        for name, arr in (("weights", w), ("means", mu), ("covariances", cov)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        chol.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_chol", chol)

    @property
    def num_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    @classmethod
    def from_components(cls, components, labels=None) -> "MixtureWorld":
        """Build from an iterable of (weight, mean, covariance) triples."""
        w, mu, cov = _component_arrays(list(components))
        return cls(weights=w, means=mu, covariances=cov, labels=dict(labels or {}))

    def sample(self, n: int, rng: np.random.Generator):
        """Draw n points; returns (points (n,d), component indices (n,))."""
        if n < 1:
            raise ValueError("n must be >= 1")
        comp = rng.choice(self.num_components, size=n, p=self.weights)
        normals = rng.standard_normal((n, self.dimension))
        points = self.means[comp] + np.einsum("nij,nj->ni", self._chol[comp], normals)
        return points, comp

    def mean_and_cov(self):
        """Exact first and second moments of the mixture."""
        mean = self.weights @ self.means
        centered = self.means - mean
        cov = np.einsum("k,kij->ij", self.weights, self.covariances)
        cov = cov + np.einsum("k,ki,kj->ij", self.weights, centered, centered)
        return mean, cov

    def to_json(self) -> str:
        doc = {
            "components": [
                {"weight": float(w), "mean": m.tolist(), "covariance": c.tolist()}
                for w, m, c in zip(self.weights, self.means, self.covariances)
            ],
            "labels": {name: sorted(idx) for name, idx in sorted(self.labels.items())},
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MixtureWorld":
        doc = json.loads(text)
        comps = [(c["weight"], c["mean"], c["covariance"]) for c in doc["components"]]
        return cls.from_components(comps, doc.get("labels", {}))


@dataclass(frozen=True, eq=False)
class DiffusedMixture:
    """The exact marginal of a MixtureWorld pushed through the forward process."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    time_index: int

    def __post_init__(self):
        chol = np.linalg.cholesky(self.covariances)
        # per-component log normalizer: -0.5 (d log 2pi + log det)
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
        d = self.means.shape[1]
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_lognorm", -0.5 * (d * _LOG_2PI + logdet))

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    def component_log_densities(self, z: np.ndarray) -> np.ndarray:
        """log w_k + log N(z; mu_k, Sigma_k), shape (..., k)."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.dimension:
            raise ValueError(f"dimension mismatch: z has {z.shape[-1]}, mixture has {self.dimension}")
        diff = z[..., None, :] - self.means  # (..., k, d)
        # solve L y = diff per component; the quadratic form is |y|^2
        sol = np.linalg.solve(self._chol, diff[..., None])[..., 0]
        quad = np.sum(sol * sol, axis=-1)
        return np.log(self.weights) + self._lognorm - 0.5 * quad


def restrict(world: MixtureWorld, condition: str) -> MixtureWorld:
    """Sub-mixture selected by a condition, with renormalized weights."""
    if condition not in world.labels:
        raise KeyError(f"unknown condition {condition!r}; have {sorted(world.labels)}")
    keep = sorted(world.labels[condition])
    w = world.weights[keep]
    w = w / w.sum()
    remap = {old: new for new, old in enumerate(keep)}
    labels = {}
    for name, idx in world.labels.items():
        inter = idx.intersection(keep)
        if inter:
            labels[name] = frozenset(remap[i] for i in inter)
    return MixtureWorld(weights=w, means=world.means[keep],
                        covariances=world.covariances[keep], labels=labels)


def diffuse_mixture(world: MixtureWorld, t: int, schedule: NoiseSchedule) -> DiffusedMixture:
    """Forward-process marginal at timestep t: mu -> sqrt(abar) mu, Sigma -> abar Sigma + (1-abar) I."""
    abar = schedule.abar(t)
    eye = np.eye(world.dimension)
    return DiffusedMixture(
        weights=world.weights,
        means=np.sqrt(abar) * world.means,
        covariances=abar * world.covariances + (1.0 - abar) * eye,
        time_index=t,
    )


def log_density(mix: DiffusedMixture, z: np.ndarray) -> np.ndarray:
    """log-sum-exp stabilized mixture log density; batched over leading axes of z."""
    comp = mix.component_log_densities(z)
    m = np.max(comp, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(comp - m), axis=-1, keepdims=True)))[..., 0]


def score(mix: DiffusedMixture, z: np.ndarray) -> np.ndarray:
    """Gradient of log_density at z: responsibility-weighted sum of Sigma^-1 (mu - z)."""
    z = np.asarray(z, dtype=np.float64)
    comp = mix.component_log_densities(z)
    m = np.max(comp, axis=-1, keepdims=True)
    resp = np.exp(comp - m)
    resp = resp / np.sum(resp, axis=-1, keepdims=True)
    diff = mix.means - z[..., None, :]  # (..., k, d)
    sol = np.linalg.solve(mix._chol, diff[..., None])[..., 0]
    grad_k = np.linalg.solve(np.swapaxes(mix._chol, -1, -2), sol[..., None])[..., 0]
    return np.sum(resp[..., None] * grad_k, axis=-2)


def analytic_noise_prediction(world: MixtureWorld, condition, z: np.ndarray,
                              t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Exact noise prediction: -sqrt(1 - abar_t) times the diffused conditional score.

    With condition None the full mixture (unconditional marginal) is used.
    """
    if not 1 <= t <= schedule.num_steps:
        raise ValueError(f"timestep {t} outside [1, {schedule.num_steps}]")
    sub = world if condition is None else restrict(world, condition)
    mix = diffuse_mixture(sub, t, schedule)
    abar = schedule.abar(t)
    return -np.sqrt(1.0 - abar) * score(mix, z)


def sample_data(world: MixtureWorld, condition, n: int, seed: int) -> np.ndarray:
    """n independent draws from the (restricted) mixture; deterministic in seed."""
    sub = world if condition is None else restrict(world, condition)
    rng = np.random.default_rng(seed)
    points, _ = sub.sample(n, rng)
    return points


def posterior_log_mass(world: MixtureWorld, condition: str, z: np.ndarray,
                       t: int = 0, schedule: NoiseSchedule | None = None) -> np.ndarray:
    """log p(condition | z) under the (diffused) mixture posterior over components."""
    if condition not in world.labels:
        raise KeyError(f"unknown condition {condition!r}")
    if t == 0:
        mix = DiffusedMixture(weights=world.weights, means=world.means,
                              covariances=world.covariances, time_index=0)
    else:
        mix = diffuse_mixture(world, t, schedule)
    comp = mix.component_log_densities(z)
    m = np.max(comp, axis=-1, keepdims=True)
    total = m[..., 0] + np.log(np.sum(np.exp(comp - m), axis=-1))
    keep = sorted(world.labels[condition])
    sel = comp[..., keep]
    ms = np.max(sel, axis=-1, keepdims=True)
    selected = ms[..., 0] + np.log(np.sum(np.exp(sel - ms), axis=-1))
    return selected - total


def weighted_product_log_density(world: MixtureWorld, condition_weights: dict):
    """Unnormalized log of p(z) * prod_c p(c|z)^w_c at t = 0, as a callable on points."""
    for name in condition_weights:
        if name not in world.labels:
            raise KeyError(f"unknown condition {name!r}")
    base = DiffusedMixture(weights=world.weights, means=world.means,
                           covariances=world.covariances, time_index=0)

    def logdens(z):
        out = log_density(base, z)
        for name, w in condition_weights.items():
            out = out + w * posterior_log_mass(world, name, z)
        return out

    return logdens


def rejection_sample_product(world: MixtureWorld, condition_weights: dict,
                             n: int, seed: int) -> np.ndarray:
    """Exact draws from the normalized p(z) * prod_c p(c|z)^w_c density.

    Proposes from the mixture itself and accepts with probability
    prod p(c|z)^w, which is a valid envelope whenever all weights are >= 0.
    """
    if any(w < 0 for w in condition_weights.values()):
        raise ValueError("rejection sampling requires non-negative condition weights")
    rng = np.random.default_rng(seed)
    out = []
    got = 0
    while got < n:
        block = max(n, 4096)
        points, _ = world.sample(block, rng)
        log_acc = np.zeros(block)
        for name, w in condition_weights.items():
            log_acc += w * posterior_log_mass(world, name, points)
        accept = np.log(rng.uniform(size=block)) < log_acc
        kept = points[accept]
        out.append(kept)
        got += kept.shape[0]
    return np.concatenate(out, axis=0)[:n]


class AnalyticPredictor:
    """Noise predictor backed by the closed-form mixture oracle."""

    requires_condition = False

    def __init__(self, world: MixtureWorld, schedule: NoiseSchedule):
        self.world = world
        self.schedule = schedule

    def predict(self, z, t, condition=None):
        return analytic_noise_prediction(self.world, condition, z, t, self.schedule)


def quadrant_world(dimension: int = 2) -> MixtureWorld:
    """Default benchmark world: four isotropic components at (+-3, +-3).

    Labels pick half-planes ("left", "right", "top", "bottom"), single corners,
    and "concept" as the left pair. Extra dimensions beyond the first two are
    zero-mean.
    """
    if dimension < 2:
        raise ValueError("quadrant world needs dimension >= 2")
    corners = [(-3.0, -3.0), (-3.0, 3.0), (3.0, -3.0), (3.0, 3.0)]
    means = []
    for x, y in corners:
        m = np.zeros(dimension)
        m[0], m[1] = x, y
        means.append(m)
    cov = 0.5 * np.eye(dimension)
    comps = [(0.25, m, cov) for m in means]
    labels = {
        "left": {0, 1},
        "right": {2, 3},
        "bottom": {0, 2},
        "top": {1, 3},
        "concept": {0, 1},
        "bottom-left": {0},
        "top-left": {1},
        "bottom-right": {2},
        "top-right": {3},
    }
    return MixtureWorld.from_components(comps, labels)


def std_normal_world(dimension: int = 2) -> MixtureWorld:
    """Single standard-normal component."""
    return MixtureWorld.from_components(
        [(1.0, np.zeros(dimension), np.eye(dimension))], {"all": {0}})


def single_gaussian_world(mean, covariance) -> MixtureWorld:
    """Single-component world at the given moments."""
    return MixtureWorld.from_components([(1.0, mean, covariance)], {"all": {0}})
