"""Small trainable conditional denoiser: sinusoidal time embedding, condition
embedding table with a reserved null row, and a tanh MLP trained by
noise-prediction regression with hand-rolled backprop.

Everything is float64 numpy so gradient checks against finite differences and
bit-identical retraining are cheap to guarantee.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .schedule import NoiseSchedule, forward_diffuse
from .world import MixtureWorld, restrict

__all__ = [
    "Architecture",
    "Denoiser",
    "TrainConfig",
    "TrainingDiverged",
    "train",
    "gradient_check",
    "make_probe_batch",
    "save_checkpoint",
    "load_checkpoint",
    "world_hash",
]

CHECKPOINT_SCHEMA_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class Architecture:
    dimension: int = 2
    hidden_widths: tuple = (128, 128, 128)
    time_embedding_width: int = 32
    condition_embedding_width: int = 16
    vocabulary: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        if self.time_embedding_width % 2 != 0:
            raise ValueError("time_embedding_width must be even")

    @property
    def input_width(self) -> int:
        return self.dimension + self.time_embedding_width + self.condition_embedding_width

    def layer_shapes(self) -> dict:
        widths = [self.input_width, *self.hidden_widths, self.dimension]
        shapes = {}
        for i in range(len(widths) - 1):
            shapes[f"W{i + 1}"] = (widths[i], widths[i + 1])
            shapes[f"b{i + 1}"] = (widths[i + 1],)
        # row 0 is the reserved null condition
        shapes["cemb"] = (len(self.vocabulary) + 1, self.condition_embedding_width)
        return shapes


def _sinusoidal_table(T: int, width: int) -> np.ndarray:
    half = width // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ts = np.arange(T + 1, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ts), np.cos(ts)], axis=1)


class Denoiser:
    """Noise-prediction MLP; usable directly as a guidance predictor."""

    requires_condition = False

    def __init__(self, arch: Architecture, schedule: NoiseSchedule, params: dict):
        self.arch = arch
        self.schedule = schedule
        self.params = params
        shapes = arch.layer_shapes()
        if set(params) != set(shapes):
            raise ValueError(f"parameter names {sorted(params)} do not match "
                             f"architecture {sorted(shapes)}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {params[name].shape}, "
                                 f"architecture wants {shape}")
        self._temb = _sinusoidal_table(schedule.num_steps, arch.time_embedding_width)
        self._num_layers = len(arch.hidden_widths) + 1

    @classmethod
    def initialize(cls, schedule: NoiseSchedule, dimension: int = 2, vocabulary=(),
                   hidden_widths=(128, 128, 128), time_embedding_width: int = 32,
                   condition_embedding_width: int = 16, seed: int = 0) -> "Denoiser":
        arch = Architecture(dimension=dimension, hidden_widths=tuple(hidden_widths),
                            time_embedding_width=time_embedding_width,
                            condition_embedding_width=condition_embedding_width,
                            vocabulary=tuple(vocabulary))
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in arch.layer_shapes().items():
            if name.startswith("W"):
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                params[name] = rng.uniform(-limit, limit, size=shape)
            elif name.startswith("b"):
                params[name] = np.zeros(shape)
            else:  # cemb
                params[name] = 0.1 * rng.standard_normal(shape)
        return cls(arch, schedule, params)

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def summary(self) -> str:
        return (f"Denoiser(d={self.arch.dimension}, hidden={self.arch.hidden_widths}, "
                f"vocab={len(self.arch.vocabulary)}, params={self.num_params})")

    def copy(self) -> "Denoiser":
        return Denoiser(self.arch, self.schedule,
                        {k: v.copy() for k, v in self.params.items()})

    def condition_index(self, condition) -> int:
        if condition is None:
            return 0
        try:
            return 1 + self.arch.vocabulary.index(condition)
        except ValueError:
            raise KeyError(f"condition {condition!r} not in vocabulary "
                           f"{self.arch.vocabulary}") from None

    def _inputs(self, z: np.ndarray, t_batch: np.ndarray, cond_rows: np.ndarray) -> np.ndarray:
        temb = self._temb[t_batch]
        cemb = self.params["cemb"][cond_rows]
        return np.concatenate([z, temb, cemb], axis=1)

    def _forward(self, x: np.ndarray):
        acts = [x]
        h = x
        for i in range(1, self._num_layers):
            h = np.tanh(h @ self.params[f"W{i}"] + self.params[f"b{i}"])
            acts.append(h)
        out = h @ self.params[f"W{self._num_layers}"] + self.params[f"b{self._num_layers}"]
        return out, acts

    def predict(self, z, t: int, condition=None) -> np.ndarray:
        """Deterministic forward pass; z may be a single vector or a batch."""
        if not 1 <= t <= self.schedule.num_steps:
            raise ValueError(f"timestep {t} outside [1, {self.schedule.num_steps}]")
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        zb = z[None, :] if single else z
        if zb.shape[-1] != self.arch.dimension:
            raise ValueError(f"z has dimension {zb.shape[-1]}, model wants {self.arch.dimension}")
        rows = np.full(zb.shape[0], self.condition_index(condition), dtype=int)
        x = self._inputs(zb, np.full(zb.shape[0], t, dtype=int), rows)
        out, _ = self._forward(x)
        return out[0] if single else out

    def loss_and_grads(self, z: np.ndarray, t_batch: np.ndarray, target: np.ndarray,
                       cond_rows: np.ndarray):
        """MSE over all entries plus gradients for every parameter."""
        x = self._inputs(z, t_batch, cond_rows)
        out, acts = self._forward(x)
        resid = out - target
        n_entries = resid.size
        loss = float(np.sum(resid * resid) / n_entries)
        grads = {}
        g = 2.0 * resid / n_entries
        L = self._num_layers
        for i in range(L, 0, -1):
            h_prev = acts[i - 1]
            grads[f"W{i}"] = h_prev.T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            if i > 1:
                g = (g @ self.params[f"W{i}"].T) * (1.0 - acts[i - 1] ** 2)
            else:
                g = g @ self.params["W1"].T
        dcemb = np.zeros_like(self.params["cemb"])
        np.add.at(dcemb, cond_rows, g[:, self.arch.dimension + self.arch.time_embedding_width:])
        grads["cemb"] = dcemb
        return loss, grads

    # flat-vector views, used by checkpoints and the finite-difference check
    def parameter_order(self):
        return sorted(self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.parameter_order()])

    def set_flat(self, flat: np.ndarray):
        pos = 0
        for k in self.parameter_order():
            size = self.params[k].size
            self.params[k] = flat[pos:pos + size].reshape(self.params[k].shape).copy()
            pos += size
        if pos != flat.size:
            raise ValueError("flat vector length does not match parameter count")


@dataclass(frozen=True)
class TrainConfig:
    world: MixtureWorld
    condition: str | None = None
    learning_rate: float = 1e-3
    batch_size: int = 256
    iterations: int = 20000
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("batch_size and iterations must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def train(model: Denoiser, config: TrainConfig):
    """Noise-prediction regression on forward-diffused world samples.

    The dataset condition restricts the sampling distribution and selects the
    embedding row fed to the model; with no condition the full world is used
    through the null row. Returns (model, per-iteration losses); the model is
    updated in place and the run is bit-deterministic in config.seed.
    """
    sched = model.schedule
    world = config.world if config.condition is None else restrict(config.world, config.condition)
    if world.dimension != model.arch.dimension:
        raise ValueError("world dimension does not match the model")
    row = model.condition_index(config.condition)
    rng = np.random.default_rng(config.seed)
    abars = np.concatenate([[1.0], sched.alpha_bars])
    order = model.parameter_order()
    if config.optimizer == "adam":
        m = {k: np.zeros_like(model.params[k]) for k in order}
        v = {k: np.zeros_like(model.params[k]) for k in order}
    losses = np.empty(config.iterations)
    rows = np.full(config.batch_size, row, dtype=int)
    for it in range(config.iterations):
        z0, _ = world.sample(config.batch_size, rng)
        t = rng.integers(1, sched.num_steps + 1, size=config.batch_size)
        noise = rng.standard_normal(z0.shape)
        a = abars[t][:, None]
        zt = np.sqrt(a) * z0 + np.sqrt(1.0 - a) * noise
        loss, grads = model.loss_and_grads(zt, t, noise, rows)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at iteration {it}")
        losses[it] = loss
        if config.optimizer == "sgd":
            for k in order:
                model.params[k] -= config.learning_rate * grads[k]
        else:
            step = it + 1
            bc1 = 1.0 - config.beta1 ** step
            bc2 = 1.0 - config.beta2 ** step
            for k in order:
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * grads[k]
                v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * grads[k] ** 2
                model.params[k] -= config.learning_rate * (m[k] / bc1) \
                    / (np.sqrt(v[k] / bc2) + config.eps)
    return model, losses


def make_probe_batch(world: MixtureWorld, schedule: NoiseSchedule, n: int, seed: int,
                     condition=None):
    """Diffused inputs, timesteps, and regression targets for gradient checking."""
    sub = world if condition is None else restrict(world, condition)
    rng = np.random.default_rng(seed)
    z0, _ = sub.sample(n, rng)
    t = rng.integers(1, schedule.num_steps + 1, size=n)
    noise = rng.standard_normal(z0.shape)
    abars = np.concatenate([[1.0], schedule.alpha_bars])
    a = abars[t][:, None]
    zt = np.sqrt(a) * z0 + np.sqrt(1.0 - a) * noise
    return zt, t, noise


def gradient_check(model: Denoiser, probe, condition=None, num_coords: int = 100,
                   step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error of backprop gradients vs central finite differences
    on a random subset of parameter coordinates."""
    zt, t, target = probe
    rows = np.full(zt.shape[0], model.condition_index(condition), dtype=int)
    _, grads = model.loss_and_grads(zt, t, target, rows)
    analytic = np.concatenate([grads[k].ravel() for k in model.parameter_order()])
    flat = model.get_flat()
    rng = np.random.default_rng(seed)
    coords = rng.choice(flat.size, size=min(num_coords, flat.size), replace=False)

    def loss_at(vec):
        model.set_flat(vec)
        x = model._inputs(zt, t, rows)
        out, _ = model._forward(x)
        return float(np.mean((out - target) ** 2))

    worst = 0.0
    try:
        for c in coords:
            bump = np.zeros_like(flat)
            bump[c] = step
            numeric = (loss_at(flat + bump) - loss_at(flat - bump)) / (2.0 * step)
            a = analytic[c]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, rel)
    finally:
        model.set_flat(flat)
    return worst


def world_hash(world: MixtureWorld) -> str:
    return hashlib.sha256(world.to_json().encode()).hexdigest()


def save_checkpoint(model: Denoiser, metadata: dict | None = None) -> str:
    """Serialize to a JSON document; identical models produce identical bytes."""
    arch = model.arch
    doc = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "architecture": {
            "dimension": arch.dimension,
            "hidden_widths": list(arch.hidden_widths),
            "time_embedding_width": arch.time_embedding_width,
            "condition_embedding_width": arch.condition_embedding_width,
            "vocabulary": list(arch.vocabulary),
            "num_params": model.num_params,
        },
        "parameters": {k: model.params[k].ravel().tolist() for k in model.parameter_order()},
        "metadata": dict(metadata or {}),
    }
    return json.dumps(doc, sort_keys=True)


def load_checkpoint(text: str, schedule: NoiseSchedule) -> Denoiser:
    """Parse and validate a checkpoint document against its own architecture."""
    doc = json.loads(text)
    if doc.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {doc.get('schema_version')!r}")
    a = doc["architecture"]
    arch = Architecture(dimension=a["dimension"], hidden_widths=tuple(a["hidden_widths"]),
                        time_embedding_width=a["time_embedding_width"],
                        condition_embedding_width=a["condition_embedding_width"],
                        vocabulary=tuple(a["vocabulary"]))
    shapes = arch.layer_shapes()
    params = {}
    raw = doc["parameters"]
    if set(raw) != set(shapes):
        raise ValueError("checkpoint parameter names do not match the architecture")
    for name, shape in shapes.items():
        flat = np.asarray(raw[name], dtype=np.float64)
        expected = int(np.prod(shape))
        if flat.size != expected:
            raise ValueError(f"parameter {name} has {flat.size} values, "
                             f"architecture wants {expected}")
        params[name] = flat.reshape(shape)
    return Denoiser(arch, schedule, params)
