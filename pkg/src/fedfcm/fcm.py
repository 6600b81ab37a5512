"""Fuzzy cognitive map representation, dynamics and two-class readout."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_TOL = 1e-5
DEFAULT_MAX_ITERS = 100


class Activation(str, enum.Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"

    @property
    def state_range(self) -> tuple[float, float]:
        return (0.0, 1.0) if self is Activation.SIGMOID else (-1.0, 1.0)


class ConceptRole(str, enum.Enum):
    INPUT = "input"
    OUTPUT = "output"


def activate(x, activation: Activation | str = Activation.SIGMOID, lam: float = 1.0):
    """Squash a weighted sum into the concept range.

    Works elementwise on arrays. ``lam`` is the steepness of the curve.
    """
    activation = Activation(activation)
    if not lam > 0 or not math.isfinite(lam):
        raise ValueError(f"lambda must be a positive finite real, got {lam!r}")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("activation input must be finite")
    out = _squash(x, activation, lam)
    return float(out) if out.ndim == 0 else out


def _squash(x: np.ndarray, activation: Activation, lam: float) -> np.ndarray:
    if activation is Activation.SIGMOID:
        # 1/(1+e^-z) written via tanh: no overflow for large |z|
        return 0.5 * (1.0 + np.tanh(0.5 * lam * x))
    return np.tanh(lam * x)


@dataclass(frozen=True, eq=False)
class FcmModel:
    """A map of ``n`` concepts with causal weights ``adjacency[j, i]`` from j to i."""

    concepts: tuple[tuple[str, ConceptRole], ...]
    adjacency: np.ndarray
    activation: Activation = Activation.SIGMOID
    lam: float = 1.0

    def __post_init__(self):
        concepts = tuple((str(name), ConceptRole(role)) for name, role in self.concepts)
        w = np.array(self.adjacency, dtype=float)
        n = len(concepts)
        if w.shape != (n, n):
            raise ValueError(f"adjacency shape {w.shape} does not match {n} concepts")
        if not np.all(np.isfinite(w)) or np.any(np.abs(w) > 1.0):
            raise ValueError("adjacency weights must lie in [-1, 1]")
        names = [name for name, _ in concepts]
        if len(set(names)) != n:
            raise ValueError("concept names must be unique")
        if not self.lam > 0 or not math.isfinite(self.lam):
            raise ValueError(f"lambda must be a positive finite real, got {self.lam!r}")
        w.setflags(write=False)
        object.__setattr__(self, "concepts", concepts)
        object.__setattr__(self, "adjacency", w)
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def n(self) -> int:
        return len(self.concepts)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.concepts]

    @property
    def state_range(self) -> tuple[float, float]:
        return self.activation.state_range

    @property
    def input_indices(self) -> list[int]:
        return [i for i, (_, role) in enumerate(self.concepts) if role is ConceptRole.INPUT]

    @property
    def output_indices(self) -> list[int]:
        return [i for i, (_, role) in enumerate(self.concepts) if role is ConceptRole.OUTPUT]

    @property
    def is_classifier(self) -> bool:
        return len(self.input_indices) >= 1 and len(self.output_indices) == 2


def _check_state(model: FcmModel, state) -> np.ndarray:
    c = np.asarray(state, dtype=float)
    if c.shape[-1:] != (model.n,):
        raise ValueError(f"state dimension {c.shape[-1:]} does not match {model.n} concepts")
    lo, hi = model.state_range
    if not np.all(np.isfinite(c)) or np.any(c < lo) or np.any(c > hi):
        raise ValueError(f"state values must lie in [{lo}, {hi}]")
    return c


def _clamp_mask(n: int, clamped: Iterable[int]) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    for i in clamped:
        if not 0 <= i < n:
            raise ValueError(f"clamped index {i} outside 0..{n - 1}")
        mask[i] = True
    return mask


def _raw_step(model: FcmModel, c: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # c_i(t) = f(sum_j w_ji c_j(t-1)), i.e. c @ W
    nxt = _squash(c @ model.adjacency, model.activation, model.lam)
    nxt[..., mask] = c[..., mask]
    return nxt


def step(model: FcmModel, state, clamped: Iterable[int] = ()) -> np.ndarray:
    """Advance the map by one synchronous update; clamped concepts keep their state."""
    c = _check_state(model, state)
    return _raw_step(model, c, _clamp_mask(model.n, clamped))


class OutcomeKind(str, enum.Enum):
    FIXED_POINT = "fixed_point"
    LIMIT_CYCLE = "limit_cycle"
    EXHAUSTED = "exhausted"


@dataclass(frozen=True, eq=False)
class DynamicsOutcome:
    kind: OutcomeKind
    final_state: np.ndarray
    iterations: int
    period: int | None = None

    def __eq__(self, other):
        if not isinstance(other, DynamicsOutcome):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.iterations == other.iterations
            and self.period == other.period
            and np.array_equal(self.final_state, other.final_state)
        )


def run_dynamics(
    model: FcmModel,
    initial,
    clamped: Iterable[int] = (),
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> DynamicsOutcome:
    """Iterate :func:`step` until a fixed point, a limit cycle or ``max_iters``.

    A fixed point is declared when the max-abs change between consecutive
    states drops below ``tol``. A limit cycle of period ``p >= 2`` is
    declared when the new state lies within ``tol`` of the state seen ``p``
    updates earlier.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be a positive integer")
    c = _check_state(model, initial)
    if c.ndim != 1:
        raise ValueError("run_dynamics takes a single state vector")
    mask = _clamp_mask(model.n, clamped)
    history = [c]
    for t in range(1, max_iters + 1):
        nxt = _raw_step(model, history[-1], mask)
        if np.max(np.abs(nxt - history[-1]), initial=0.0) < tol:
            return DynamicsOutcome(OutcomeKind.FIXED_POINT, nxt, t)
        for period in range(2, len(history) + 1):
            if np.max(np.abs(nxt - history[-period])) < tol:
                return DynamicsOutcome(OutcomeKind.LIMIT_CYCLE, nxt, t, period)
        history.append(nxt)
    return DynamicsOutcome(OutcomeKind.EXHAUSTED, history[-1], max_iters)


def run_dynamics_batch(
    model: FcmModel,
    initial: np.ndarray,
    clamped: Iterable[int] = (),
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> np.ndarray:
    """Final states for many initial states at once (one per row).

    Each row stops under the same rules as :func:`run_dynamics`, so the
    result matches running them one by one.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    c = np.array(_check_state(model, initial), dtype=float, ndmin=2)
    return _iterate_batch(model.adjacency, model.activation, model.lam, c, _clamp_mask(model.n, clamped), tol, max_iters)


def _iterate_batch(w, activation, lam, c, mask, tol, max_iters) -> np.ndarray:
    final = c.copy()
    active = np.arange(c.shape[0])
    history = [c]
    for _ in range(max_iters):
        if active.size == 0:
            break
        prev = history[-1]
        nxt = _squash(prev @ w, activation, lam)
        nxt[:, mask] = prev[:, mask]
        done = np.max(np.abs(nxt - prev), axis=1, initial=0.0) < tol
        for period in range(2, len(history) + 1):
            if done.all():
                break
            done |= np.max(np.abs(nxt - history[-period]), axis=1) < tol
        final[active] = nxt
        if done.any():
            keep = ~done
            active = active[keep]
            history = [h[keep] for h in history] + [nxt[keep]]
        else:
            history.append(nxt)
    return final


class ClassLabel(enum.IntEnum):
    CLASS_1 = 1
    CLASS_2 = 2


def readout(c1: float, c2: float) -> ClassLabel:
    """Class 1 iff the first output concept is the more active one; ties go to class 1."""
    return ClassLabel.CLASS_2 if c1 < c2 else ClassLabel.CLASS_1


def _classifier_state(model: FcmModel, features) -> np.ndarray:
    if not model.is_classifier:
        raise ValueError("model needs at least one input concept and exactly two output concepts")
    x = np.asarray(features, dtype=float)
    inputs = model.input_indices
    if x.shape[-1:] != (len(inputs),):
        raise ValueError(f"expected {len(inputs)} features, got {x.shape[-1:]}")
    state = np.zeros(x.shape[:-1] + (model.n,))
    state[..., inputs] = x
    return state


def classify(
    model: FcmModel, features, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS
) -> ClassLabel:
    """Clamp the features onto the input concepts, run the map and compare the outputs."""
    state = _classifier_state(model, features)
    outcome = run_dynamics(model, state, model.input_indices, tol, max_iters)
    o1, o2 = model.output_indices
    return readout(outcome.final_state[o1], outcome.final_state[o2])


def predict(model: FcmModel, features, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS) -> np.ndarray:
    """Vectorized :func:`classify` over the rows of ``features``; returns labels 1/2."""
    state = _classifier_state(model, np.atleast_2d(features))
    final = run_dynamics_batch(model, state, model.input_indices, tol, max_iters)
    o1, o2 = model.output_indices
    return np.where(final[:, o1] < final[:, o2], 2, 1)


def evaluate_accuracy(model: FcmModel, samples: Sequence[tuple[Sequence[float], int]], **kwargs) -> float:
    """Fraction of ``(features, label)`` pairs the model classifies correctly."""
    if len(samples) == 0:
        raise ValueError("evaluate_accuracy needs at least one sample")
    features = np.array([f for f, _ in samples], dtype=float)
    labels = np.array([int(label) for _, label in samples])
    return float(np.mean(predict(model, features, **kwargs) == labels))


@dataclass(frozen=True)
class ClassifierTopology:
    """Input concepts wired to two output concepts, which may also feed back.

    A position (the learnable weights) is the ``n_inputs x 2`` input-to-output
    block of the adjacency matrix flattened row-major, so entry ``2*i + k`` is
    the weight from input ``i`` to output ``k``. With ``output_feedback`` the
    ``2 x 2`` output-to-output block (self-loops included) follows, giving the
    outputs a learnable resting level. Every other entry is structurally zero.
    """

    input_names: tuple[str, ...]
    output_names: tuple[str, str] = ("class_1", "class_2")
    activation: Activation = Activation.SIGMOID
    lam: float = 1.0
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    output_feedback: bool = True
    _concepts: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_names", tuple(self.input_names))
        object.__setattr__(self, "output_names", tuple(self.output_names))
        object.__setattr__(self, "activation", Activation(self.activation))
        concepts = tuple((name, ConceptRole.INPUT) for name in self.input_names) + tuple(
            (name, ConceptRole.OUTPUT) for name in self.output_names
        )
        object.__setattr__(self, "_concepts", concepts)

    @property
    def n_inputs(self) -> int:
        return len(self.input_names)

    @property
    def concept_names(self) -> list[str]:
        return [name for name, _ in self._concepts]

    @property
    def dimension(self) -> int:
        return 2 * self.n_inputs + (4 if self.output_feedback else 0)

    def adjacency(self, position) -> np.ndarray:
        position = np.asarray(position, dtype=float)
        if position.shape != (self.dimension,):
            raise ValueError(f"position must have length {self.dimension}")
        k = self.n_inputs
        w = np.zeros((k + 2, k + 2))
        w[:k, k:] = position[: 2 * k].reshape(k, 2)
        if self.output_feedback:
            w[k:, k:] = position[2 * k :].reshape(2, 2)
        return w

    def position(self, adjacency) -> np.ndarray:
        w = np.asarray(adjacency, dtype=float)
        k = self.n_inputs
        parts = [w[:k, k:].reshape(-1)]
        if self.output_feedback:
            parts.append(w[k:, k:].reshape(-1))
        return np.concatenate(parts)

    def model(self, position) -> FcmModel:
        return self.model_from_adjacency(self.adjacency(position))

    def model_from_adjacency(self, adjacency) -> FcmModel:
        return FcmModel(self._concepts, adjacency, self.activation, self.lam)

    def predict(self, model: FcmModel, features) -> np.ndarray:
        return predict(model, features, self.tol, self.max_iters)

    def predict_position(self, position, features) -> np.ndarray:
        """Same labels as ``predict(self.model(position), features)`` without validation.

        Meant for hot loops whose positions and features are already known to
        lie in range.
        """
        x = np.asarray(features, dtype=float)
        k = self.n_inputs
        state = np.zeros((x.shape[0], k + 2))
        state[:, :k] = x
        mask = np.zeros(k + 2, dtype=bool)
        mask[:k] = True
        final = _iterate_batch(self.adjacency(position), self.activation, self.lam, state, mask, self.tol, self.max_iters)
        return np.where(final[:, k] < final[:, k + 1], 2, 1)

    def accuracy(self, model: FcmModel, features, labels) -> float:
        labels = np.asarray(labels)
        if labels.size == 0:
            raise ValueError("accuracy needs at least one sample")
        return float(np.mean(self.predict(model, features) == labels))
