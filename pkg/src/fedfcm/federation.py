"""Server and participant state machines for federated FCM learning.

Round 0 is local training: every participant fits its own map with PSO and
reports it with its test accuracy. In each later round the server
aggregates the latest reports weighted by accuracy and broadcasts the
result; participants blend it into their local map and report again. Once
``max_rounds`` such rounds are done, the server aggregates the final
reports and terminates with that matrix.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _jsonline
from .aggregation import LabeledMatrix, local_merge, server_aggregate
from .data import FEATURE_NAMES, DatasetPartition
from .errors import ProtocolError
from .fcm import DEFAULT_MAX_ITERS, DEFAULT_TOL, Activation, ClassifierTopology
from .pso import PsoConfig, train

logger = logging.getLogger(__name__)

OUTPUT_NAMES = ("malignant", "benign")


@dataclass(frozen=True)
class FederationConfig:
    max_rounds: int = 20
    alpha: float = 0.5
    retrain_per_round: bool = False
    pso: PsoConfig = PsoConfig()
    seed: int = 0
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    activation: Activation = Activation.SIGMOID
    lam: float = 1.0
    # off: every participant draws the same stream for a given round
    independent_streams: bool = True

    def __post_init__(self):
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    def topology(self, input_names: Sequence[str] = FEATURE_NAMES) -> ClassifierTopology:
        return ClassifierTopology(
            tuple(input_names), OUTPUT_NAMES, self.activation, self.lam, self.tol, self.max_iters
        )

    def participant_rng(self, participant_id: int, round_: int = 0) -> np.random.Generator:
        # independent stream per (run seed, participant, round)
        if not self.independent_streams:
            return np.random.default_rng([self.seed, round_])
        return np.random.default_rng([self.seed, participant_id, round_])

    def to_dict(self) -> dict:
        return {
            "max_rounds": self.max_rounds,
            "alpha": self.alpha,
            "retrain_per_round": self.retrain_per_round,
            "seed": self.seed,
            "tol": self.tol,
            "max_iters": self.max_iters,
            "activation": self.activation.value,
            "lam": self.lam,
            "independent_streams": self.independent_streams,
            "pso": {
                "swarm_size": self.pso.swarm_size,
                "max_iterations": self.pso.max_iterations,
                "phi1": self.pso.phi1,
                "phi2": self.pso.phi2,
                "v_max": self.pso.v_max,
                "inertia": self.pso.inertia,
                "jaccard_mode": self.pso.jaccard_mode,
            },
        }


@dataclass(frozen=True)
class ParticipantReport:
    participant_id: int
    round: int
    matrix: LabeledMatrix
    accuracy: float
    # accuracy of the received federated matrix itself, before blending
    federated_accuracy: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")
        if self.round < 0:
            raise ValueError("round must be non-negative")


@dataclass
class ParticipantState:
    id: int
    partition: DatasetPartition
    config: FederationConfig
    topology: ClassifierTopology
    local_matrix: LabeledMatrix | None = None
    pre_federation_accuracy: float | None = None
    current_accuracy: float | None = None
    round: int = 0
    federated_matrix: LabeledMatrix | None = None

    @classmethod
    def create(cls, partition: DatasetPartition, config: FederationConfig) -> "ParticipantState":
        return cls(partition.participant_id, partition, config, config.topology())

    def accuracy_of(self, matrix: LabeledMatrix) -> float:
        names = self.topology.concept_names
        model = self.topology.model_from_adjacency(matrix.reindex(names).matrix)
        x, y = self.partition.test_arrays
        return self.topology.accuracy(model, x, y)

    def _train(self, rng, initial_position=None) -> LabeledMatrix:
        x, y = self.partition.train_arrays
        position, _ = train(x, y, self.topology, self.config.pso, initial_position, rng=rng)
        return LabeledMatrix(tuple(self.topology.concept_names), self.topology.adjacency(position))


def participant_initial_train(state: ParticipantState) -> ParticipantReport:
    """Local PSO training on the participant's own shard (round 0)."""
    state.local_matrix = state._train(state.config.participant_rng(state.id, 0))
    state.pre_federation_accuracy = state.current_accuracy = state.accuracy_of(state.local_matrix)
    state.round = 0
    return ParticipantReport(state.id, 0, state.local_matrix, state.current_accuracy)


def participant_step(state: ParticipantState, federated: LabeledMatrix, round_: int | None = None) -> ParticipantReport:
    """Blend a broadcast federated matrix into the local map and report the new accuracy."""
    if state.local_matrix is None:
        raise ProtocolError(f"participant {state.id} received a model before initial training")
    if set(federated.concept_names) != set(state.local_matrix.concept_names):
        raise ProtocolError(f"participant {state.id}: federated matrix concepts do not match the local map")
    round_ = state.round + 1 if round_ is None else round_
    federated_accuracy = state.accuracy_of(federated)
    merged = local_merge(federated, state.local_matrix, state.config.alpha)
    if state.config.retrain_per_round:
        seed_position = state.topology.position(merged.reindex(state.topology.concept_names).matrix)
        merged = state._train(state.config.participant_rng(state.id, round_), seed_position)
    state.local_matrix = merged
    state.current_accuracy = state.accuracy_of(merged)
    state.round = round_
    return ParticipantReport(state.id, round_, merged, state.current_accuracy, federated_accuracy)


def participant_finish(state: ParticipantState, federated: LabeledMatrix) -> None:
    """Keep the terminal federated matrix; the blended local map stays as it is."""
    if set(federated.concept_names) != set(state.topology.concept_names):
        raise ProtocolError(f"participant {state.id}: final matrix concepts do not match the local map")
    state.federated_matrix = federated


@dataclass
class ServerState:
    expected_participants: frozenset[int]
    max_rounds: int = 20
    round: int = 0
    received: dict[int, ParticipantReport] = field(default_factory=dict)
    federated_matrix: LabeledMatrix | None = None

    def __post_init__(self):
        self.expected_participants = frozenset(self.expected_participants)
        if not self.expected_participants:
            raise ValueError("server needs at least one participant")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be non-negative")


@dataclass(frozen=True)
class Broadcast:
    round: int
    matrix: LabeledMatrix


@dataclass(frozen=True)
class Terminate:
    matrix: LabeledMatrix


def server_step(state: ServerState, reports: Sequence[ParticipantReport]) -> Broadcast | Terminate:
    """Aggregate one round of reports; broadcast the next round or terminate."""
    state.received = {}
    for r in reports:
        if r.participant_id not in state.expected_participants:
            raise ProtocolError(f"report from unexpected participant {r.participant_id}")
        if r.round != state.round:
            raise ProtocolError(
                f"participant {r.participant_id} reported round {r.round} while the server is in round {state.round}"
            )
        if r.participant_id in state.received:
            logger.warning("duplicate report from participant %s in round %s; keeping the latest", r.participant_id, r.round)
        state.received[r.participant_id] = r
    missing = state.expected_participants - state.received.keys()
    if missing:
        raise ProtocolError(f"round {state.round} is missing reports from participants {sorted(missing)}", "straggler")
    ordered = [state.received[pid] for pid in sorted(state.received)]
    state.federated_matrix = server_aggregate(ordered)
    if state.round >= state.max_rounds:
        return Terminate(state.federated_matrix)
    state.round += 1
    return Broadcast(state.round, state.federated_matrix)


def matrix_checksum(matrix: LabeledMatrix) -> str:
    payload = _jsonline.dumps({"concepts": list(matrix.concept_names), "rows": matrix.matrix})
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RoundRecord:
    round: int
    accuracy: dict[int, float]
    federated_accuracy: dict[int, float | None]
    federated_checksum: str


@dataclass
class FederationLog:
    pre: dict[int, float]
    rounds: list[RoundRecord] = field(default_factory=list)
    final_matrix: LabeledMatrix | None = None
    config: dict = field(default_factory=dict)

    @property
    def post(self) -> dict[int, float]:
        return dict(self.rounds[-1].accuracy) if self.rounds else {}

    def pairs(self) -> list[tuple[int, float, float | None]]:
        post = self.post
        return [(pid, self.pre[pid], post.get(pid)) for pid in sorted(self.pre)]

    def mean_pre(self) -> float:
        return float(np.mean(list(self.pre.values())))

    def mean_post(self) -> float | None:
        return float(np.mean(list(self.post.values()))) if self.rounds else None

    def record(self, round_: int, reports: Sequence[ParticipantReport], federated: LabeledMatrix) -> None:
        ordered = sorted(reports, key=lambda r: r.participant_id)
        self.rounds.append(
            RoundRecord(
                round_,
                {r.participant_id: r.accuracy for r in ordered},
                {r.participant_id: r.federated_accuracy for r in ordered},
                matrix_checksum(federated),
            )
        )

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "rounds": [
                {
                    "round": rec.round,
                    "federated_checksum": rec.federated_checksum,
                    "accuracy": [{"participant_id": pid, "local": acc, "federated": rec.federated_accuracy[pid]}
                                 for pid, acc in rec.accuracy.items()],
                }
                for rec in self.rounds
            ],
            "participants": [{"participant_id": pid, "pre": pre, "post": post} for pid, pre, post in self.pairs()],
            "final_matrix": None
            if self.final_matrix is None
            else {"concepts": list(self.final_matrix.concept_names), "rows": self.final_matrix.matrix},
        }

    def to_json(self) -> str:
        return _jsonline.dumps(self.to_dict()) + "\n"


def drive_server(
    state: ServerState,
    initial_reports: Sequence[ParticipantReport],
    exchange: Callable[[Broadcast], Sequence[ParticipantReport]],
    config: dict | None = None,
) -> FederationLog:
    """Run the server side of the protocol given a way to reach participants.

    ``exchange`` delivers one broadcast to every participant and returns
    their reports; the transport decides how.
    """
    log = FederationLog({r.participant_id: r.accuracy for r in initial_reports}, config=config or {})
    reports = list(initial_reports)
    while True:
        action = server_step(state, reports)
        if isinstance(action, Terminate):
            log.final_matrix = action.matrix
            return log
        reports = list(exchange(action))
        log.record(action.round, reports, action.matrix)


def run_simulation(config: FederationConfig, partitions: Sequence[DatasetPartition]) -> FederationLog:
    """Everything in one process: local training, then ``config.max_rounds`` rounds."""
    if not partitions:
        raise ValueError("run_simulation needs at least one partition")
    participants = {p.participant_id: ParticipantState.create(p, config) for p in partitions}
    initial = [participant_initial_train(s) for s in participants.values()]
    server = ServerState(frozenset(participants), config.max_rounds)
    log = drive_server(
        server,
        initial,
        lambda action: [participant_step(s, action.matrix, action.round) for s in participants.values()],
        config.to_dict(),
    )
    for s in participants.values():
        participant_finish(s, log.final_matrix)
    return log
