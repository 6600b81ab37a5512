"""Combining adjacency matrices: direct sums, weighted means, federated merges.

Matrices are aligned by concept name, never by position, so two parties
that order their concepts differently still merge correctly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LabeledMatrix:
    concept_names: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.concept_names)
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape != (len(names), len(names)):
            raise ValueError(f"matrix shape {m.shape} inconsistent with {len(names)} concept names")
        if len(set(names)) != len(names):
            raise ValueError("concept names must be unique within a matrix")
        if not np.all(np.isfinite(m)) or np.any(np.abs(m) > 1.0):
            raise ValueError("matrix entries must lie in [-1, 1]")
        m.setflags(write=False)
        object.__setattr__(self, "concept_names", names)
        object.__setattr__(self, "matrix", m)

    def __eq__(self, other):
        if not isinstance(other, LabeledMatrix):
            return NotImplemented
        return self.concept_names == other.concept_names and np.array_equal(self.matrix, other.matrix)

    def reindex(self, names: Sequence[str]) -> "LabeledMatrix":
        """Same matrix with rows and columns permuted into ``names`` order."""
        if set(names) != set(self.concept_names) or len(names) != len(self.concept_names):
            raise ValueError("reindex needs exactly the same concept set")
        pos = {name: i for i, name in enumerate(self.concept_names)}
        idx = [pos[n] for n in names]
        return LabeledMatrix(tuple(names), self.matrix[np.ix_(idx, idx)])


def direct_sum(matrices: Sequence[LabeledMatrix]) -> LabeledMatrix:
    """Block-diagonal combination of maps that share no concept."""
    if not matrices:
        raise ValueError("direct_sum needs at least one matrix")
    names: list[str] = []
    for m in matrices:
        shared = set(names) & set(m.concept_names)
        if shared:
            raise ValueError(f"concepts {sorted(shared)} appear in more than one matrix; use merge_common")
        names.extend(m.concept_names)
    out = np.zeros((len(names), len(names)))
    offset = 0
    for m in matrices:
        k = len(m.concept_names)
        out[offset : offset + k, offset : offset + k] = m.matrix
        offset += k
    return LabeledMatrix(tuple(names), out)


def merge_common(matrices: Sequence[LabeledMatrix], weights: Sequence[float]) -> LabeledMatrix:
    """Weighted element-wise mean over the union of concepts.

    Each entry ``(i, j)`` averages only over the matrices holding both
    concepts ``i`` and ``j``, using their weights renormalized over that
    subset. Entries no matrix holds stay zero. Concept order in the result is
    first appearance across the inputs.
    """
    if len(matrices) != len(weights):
        raise ValueError("need exactly one weight per matrix")
    if not matrices:
        raise ValueError("merge_common needs at least one matrix")
    w = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be non-negative reals")
    if not w.sum() > 0:
        raise ValueError("weights must not all be zero")
    if len(matrices) == 1:
        # w*x/w is not always x in floating point
        return matrices[0]

    names: list[str] = []
    for m in matrices:
        names.extend(n for n in m.concept_names if n not in names)
    pos = {name: i for i, name in enumerate(names)}
    n = len(names)
    total = np.zeros((n, n))
    weight_sum = np.zeros((n, n))
    for m, wk in zip(matrices, w):
        idx = [pos[name] for name in m.concept_names]
        block = np.ix_(idx, idx)
        total[block] += wk * m.matrix
        weight_sum[block] += wk
    out = np.divide(total, weight_sum, out=np.zeros((n, n)), where=weight_sum > 0)
    # rounding can nudge a mean of +-1 entries just past the bound
    return LabeledMatrix(tuple(names), np.clip(out, -1.0, 1.0))


def server_aggregate(reports: Iterable) -> LabeledMatrix:
    """Accuracy-weighted mean of the participants' matrices.

    ``reports`` are objects with ``matrix`` (a :class:`LabeledMatrix`) and
    ``accuracy`` attributes. If every accuracy is zero the reports are
    weighted uniformly instead.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("server_aggregate needs at least one report")
    names = reports[0].matrix.concept_names
    for r in reports[1:]:
        if set(r.matrix.concept_names) != set(names):
            raise ValueError("all reports must share the same concept set")
    accuracies = [float(r.accuracy) for r in reports]
    if any(not 0.0 <= a <= 1.0 for a in accuracies):
        raise ValueError("accuracies must lie in [0, 1]")
    if sum(accuracies) == 0:
        logger.warning("all reported accuracies are zero; aggregating with uniform weights")
        accuracies = [1.0] * len(reports)
    aligned = [r.matrix.reindex(names) for r in reports]
    return merge_common(aligned, accuracies)


def local_merge(federated: LabeledMatrix, local: LabeledMatrix, alpha: float = 0.5) -> LabeledMatrix:
    """Blend the federated matrix into a participant's own: ``alpha*F + (1-alpha)*L``.

    The result keeps the local concept order.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if set(federated.concept_names) != set(local.concept_names) or len(federated.concept_names) != len(
        local.concept_names
    ):
        raise ValueError("federated and local matrices must share the same concept set")
    fed = federated.reindex(local.concept_names).matrix
    merged = alpha * fed + (1.0 - alpha) * local.matrix
    # halving a subnormal can underflow; agreeing entries stay put
    merged = np.where(fed == local.matrix, local.matrix, merged)
    return LabeledMatrix(local.concept_names, np.clip(merged, -1.0, 1.0))
