"""Federated learning of fuzzy cognitive map classifiers.

Participants train FCM classifiers on private data with particle swarm
optimization; a server merges their adjacency matrices weighted by local
test accuracy, and participants blend the result back into their own maps.
"""

__version__ = "0.1.0"

from .aggregation import LabeledMatrix, direct_sum, local_merge, merge_common, server_aggregate
from .data import Diagnosis, Sample, Scaler, DatasetPartition, load_bundled_wdbc, load_wdbc, parse_wdbc, partition
from .fcm import (
    Activation,
    ClassifierTopology,
    ClassLabel,
    ConceptRole,
    DynamicsOutcome,
    FcmModel,
    OutcomeKind,
    activate,
    classify,
    evaluate_accuracy,
    run_dynamics,
    step,
)
from .federation import FederationConfig, FederationLog, ParticipantReport, run_simulation
from .pso import PsoConfig, fitness, jaccard_complement, train

__all__ = [
    "Activation", "ClassLabel", "ClassifierTopology", "ConceptRole", "DatasetPartition", "Diagnosis",
    "DynamicsOutcome", "FcmModel", "FederationConfig", "FederationLog", "LabeledMatrix", "OutcomeKind",
    "ParticipantReport", "PsoConfig", "Sample", "Scaler", "activate", "classify", "direct_sum",
    "evaluate_accuracy", "fitness", "jaccard_complement", "load_bundled_wdbc", "load_wdbc", "local_merge",
    "merge_common", "parse_wdbc", "partition", "run_dynamics", "run_simulation", "server_aggregate", "step",
    "train",
]
