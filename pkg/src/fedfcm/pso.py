"""Particle swarm learning of classifier weights.

Each particle's position is the flattened learnable weight blocks of a
candidate map (see :class:`~fedfcm.fcm.ClassifierTopology`). The swarm
minimizes one minus the Jaccard similarity between predicted and true labels
on a training shard.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fcm import ClassifierTopology


@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 30
    max_iterations: int = 100
    phi1: float = 2.0
    phi2: float = 2.0
    v_max: float = 0.5
    seed: int = 0
    inertia: float = 1.0
    jaccard_mode: str = "macro"

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ValueError("swarm_size must be at least 2")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.phi1 < 0 or self.phi2 < 0:
            raise ValueError("phi1 and phi2 must be non-negative")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")
        if self.jaccard_mode not in ("macro", "positive"):
            raise ValueError("jaccard_mode must be 'macro' or 'positive'")


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_fitness: float = np.inf


@dataclass
class Swarm:
    particles: list[Particle]
    best_position: np.ndarray | None = None
    best_fitness: float = np.inf
    history: list[float] = field(default_factory=list)


def jaccard_complement(labels, predictions, classes: Sequence[int] = (1, 2), mode: str = "macro") -> float:
    """One minus the Jaccard similarity of true and predicted label sets.

    For each class the sets are the sample indices carrying that label; a
    class absent from both counts as perfect agreement. ``macro`` averages
    over ``classes``; ``positive`` uses only ``classes[0]``.
    """
    y = np.asarray(labels)
    p = np.asarray(predictions)
    if y.shape != p.shape:
        raise ValueError("labels and predictions differ in length")
    if y.size == 0:
        raise ValueError("jaccard needs at least one sample")
    used = classes[:1] if mode == "positive" else classes
    scores = []
    for c in used:
        yc, pc = y == c, p == c
        union = np.count_nonzero(yc | pc)
        scores.append(1.0 if union == 0 else np.count_nonzero(yc & pc) / union)
    return 1.0 - float(np.mean(scores))


def fitness(position, features, labels, topology: ClassifierTopology, mode: str = "macro") -> float:
    features = np.asarray(features, dtype=float)
    if features.shape[0] == 0:
        raise ValueError("training set is empty")
    position = np.asarray(position, dtype=float)
    if position.shape != (topology.dimension,) or np.any(np.abs(position) > 1.0):
        raise ValueError(f"position must be a length-{topology.dimension} vector in [-1, 1]")
    return jaccard_complement(labels, topology.predict_position(position, features), mode=mode)


def update_particle(
    p: Particle,
    global_best,
    phi1: float,
    phi2: float,
    rng,
    v_max: float = 0.5,
    inertia: float = 1.0,
) -> Particle:
    """Move one particle: new velocity first, then position += velocity.

    Fresh ``U(0, phi)`` vectors are drawn per call, cognitive term first.
    Velocity is clamped to ``[-v_max, v_max]`` and position to ``[-1, 1]``.
    """
    x = np.asarray(p.position, dtype=float)
    g = np.asarray(global_best, dtype=float)
    if not (x.shape == g.shape == p.velocity.shape == p.best_position.shape):
        raise ValueError("particle and global best dimensions disagree")
    r1 = rng.uniform(0.0, phi1, x.shape)
    r2 = rng.uniform(0.0, phi2, x.shape)
    v = inertia * p.velocity + r1 * (p.best_position - x) + r2 * (g - x)
    v = np.clip(v, -v_max, v_max)
    x = np.clip(x + v, -1.0, 1.0)
    return Particle(x, v, p.best_position, p.best_fitness)


def init_swarm(dimension: int, config: PsoConfig, rng, initial_position=None) -> Swarm:
    positions = rng.uniform(-1.0, 1.0, (config.swarm_size, dimension))
    velocities = rng.uniform(-config.v_max, config.v_max, (config.swarm_size, dimension))
    if initial_position is not None:
        seed = np.asarray(initial_position, dtype=float)
        if seed.shape != (dimension,):
            raise ValueError(f"initial position must have length {dimension}")
        positions[0] = np.clip(seed, -1.0, 1.0)
    particles = [Particle(x, v, x.copy()) for x, v in zip(positions, velocities)]
    return Swarm(particles)


def train(
    features,
    labels,
    topology: ClassifierTopology,
    config: PsoConfig = PsoConfig(),
    initial_position=None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Run the swarm on a training shard.

    Parameters
    ----------
    features, labels
        Normalized training features (``m x n_inputs``) and class labels 1/2.
    topology
        Maps positions to classifier maps.
    config
        Swarm hyperparameters; ``config.seed`` seeds the generator unless
        ``rng`` is given.
    initial_position
        Optional starting point for particle 0 (used when retraining from a
        merged matrix).

    Returns
    -------
    best_position, history
        The global best position and the global best fitness after each
        iteration; the history never increases.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    if features.shape[0] == 0:
        raise ValueError("training set is empty")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    swarm = init_swarm(topology.dimension, config, rng, initial_position)

    for _ in range(config.max_iterations):
        if swarm.best_fitness == 0.0:
            # nothing can beat a perfect fit, so later iterations change nothing
            swarm.history.append(0.0)
            continue
        for p in swarm.particles:
            f = fitness(p.position, features, labels, topology, config.jaccard_mode)
            if f < p.best_fitness:
                p.best_fitness = f
                p.best_position = p.position.copy()
            if f < swarm.best_fitness:
                swarm.best_fitness = f
                swarm.best_position = p.position.copy()
        swarm.history.append(swarm.best_fitness)
        swarm.particles = [
            update_particle(p, swarm.best_position, config.phi1, config.phi2, rng, config.v_max, config.inertia)
            for p in swarm.particles
        ]
    return swarm.best_position.copy(), swarm.history
