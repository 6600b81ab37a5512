"""Command-line driver: split, train, federate, serve, join, evaluate.

Settings come from built-in defaults, then an optional ``key = value`` config
file (``--config``), then command-line flags. The default output directory
can be set with ``FEDFCM_OUTPUT_DIR``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 protocol error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from . import _jsonline
from .aggregation import LabeledMatrix
from .data import (
    DatasetPartition,
    content_hash,
    load_bundled_wdbc,
    load_wdbc,
    partition,
    partition_from_manifest,
    read_manifest,
    write_manifest,
)
from .errors import DataError, ProtocolError
from .fcm import Activation
from .federation import FederationConfig, FederationLog, ParticipantState, participant_initial_train, run_simulation
from .pso import PsoConfig
from .transport import DEFAULT_ROUND_TIMEOUT, Coordinator, join, run_tcp, serve

logger = logging.getLogger("fedfcm")

EXIT_CONFIG, EXIT_DATA, EXIT_PROTOCOL = 2, 3, 4
OUTPUT_ENV = "FEDFCM_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data: str = "bundled"
    n_participants: int = 5
    train_fraction: float = 0.8
    rounds: int = 20
    tol: float = 1e-5
    max_dynamics_iters: int = 100
    swarm_size: int = 30
    max_iterations: int = 100
    phi1: float = 2.0
    phi2: float = 2.0
    v_max: float = 0.5
    inertia: float = 1.0
    jaccard_mode: str = "macro"
    activation: str = "sigmoid"
    lam: float = 1.0
    retrain_per_round: bool = False
    alpha: float = 0.5
    seed: int = 0
    transport: str = "sim"
    round_timeout: float = DEFAULT_ROUND_TIMEOUT
    output_dir: str = ""

    def validate(self) -> None:
        if self.n_participants < 1:
            raise ConfigError("n_participants must be at least 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie strictly between 0 and 1")
        if self.rounds < 0:
            raise ConfigError("rounds must be non-negative")
        if self.transport not in ("sim", "tcp"):
            raise ConfigError("transport must be 'sim' or 'tcp'")
        try:
            self.federation_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def federation_config(self) -> FederationConfig:
        pso = PsoConfig(
            self.swarm_size, self.max_iterations, self.phi1, self.phi2, self.v_max, self.seed,
            self.inertia, self.jaccard_mode,
        )
        return FederationConfig(
            self.rounds, self.alpha, self.retrain_per_round, pso, self.seed, self.tol,
            self.max_dynamics_iters, Activation(self.activation), self.lam,
        )

    @property
    def out(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV) or "fedfcm-out")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw):
    kind = type(getattr(RunConfig, name))
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        value = str(raw).strip().lower()
        if value in ("1", "true", "yes", "on"):
            return True
        if value in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot read {raw!r} as {kind.__name__}") from None


def read_config_file(path: str | Path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _FIELDS:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value' with a known key, got {line!r}")
        values[key] = _coerce(key, value.strip())
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for name in _FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = _coerce(name, flag)
    config = RunConfig(**values)
    config.validate()
    return config


def _load_samples(config: RunConfig):
    if config.data == "bundled":
        return load_bundled_wdbc()
    return load_wdbc(config.data)


def _partitions(config: RunConfig, samples) -> list[DatasetPartition]:
    try:
        return partition(samples, config.n_participants, config.train_fraction, config.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _manifest_dir(config: RunConfig) -> Path:
    return config.out / "manifests"


def write_manifests(config: RunConfig, samples, parts) -> list[Path]:
    directory = _manifest_dir(config)
    directory.mkdir(parents=True, exist_ok=True)
    digest = content_hash(samples)
    paths = []
    for p in parts:
        path = directory / f"participant_{p.participant_id}.json"
        write_manifest(
            path, p, seed=config.seed, n_participants=config.n_participants,
            train_fraction=config.train_fraction, dataset_sha256=digest,
        )
        paths.append(path)
    return paths


def format_matrix_csv(matrix: LabeledMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["concept", *matrix.concept_names])
    for name, row in zip(matrix.concept_names, matrix.matrix):
        writer.writerow([name, *(_jsonline.format_real(v) for v in row)])
    return buf.getvalue()


def read_matrix_csv(path: str | Path, expected_names=None) -> LabeledMatrix:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"model file not found: {path}")
    rows = list(csv.reader(path.read_text().splitlines()))
    if not rows or rows[0][:1] != ["concept"]:
        raise DataError(f"{path}: first row must start with 'concept'")
    names = rows[0][1:]
    body = rows[1:]
    if len(body) != len(names):
        raise DataError(f"{path}: {len(names)} concepts in the header but {len(body)} matrix rows")
    values = []
    for i, (row, name) in enumerate(zip(body, names), start=2):
        if len(row) != len(names) + 1:
            raise DataError(f"{path}:{i}: expected {len(names) + 1} fields, found {len(row)}")
        if row[0] != name:
            raise DataError(f"{path}:{i}: row label {row[0]!r} does not match header concept {name!r}")
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError:
            raise DataError(f"{path}:{i}: non-numeric weight") from None
    if expected_names is not None and set(names) != set(expected_names):
        missing = sorted(set(expected_names) - set(names))
        extra = sorted(set(names) - set(expected_names))
        raise DataError(f"{path}: concept header mismatch (missing {missing}, unexpected {extra})")
    try:
        return LabeledMatrix(tuple(names), values)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_reports(config: RunConfig, log: FederationLog, samples) -> Path:
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "federation_log.json").write_text(log.to_json())

    with open(out / "rounds.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "participant_id", "local_accuracy", "federated_accuracy", "federated_checksum"])
        for pid, acc in sorted(log.pre.items()):
            writer.writerow([0, pid, f"{acc:.6f}", "", ""])
        for rec in log.rounds:
            for pid, acc in sorted(rec.accuracy.items()):
                fa = rec.federated_accuracy[pid]
                writer.writerow([rec.round, pid, f"{acc:.6f}", "" if fa is None else f"{fa:.6f}", rec.federated_checksum])

    federated = bool(log.rounds)
    with open(out / "table1.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["participant", "pre_federation"] + (["post_federation"] if federated else []))
        for pid, pre, post in log.pairs():
            writer.writerow([pid + 1, f"{pre:.4f}"] + ([f"{post:.4f}"] if federated else []))
        writer.writerow(["mean", f"{log.mean_pre():.4f}"] + ([f"{log.mean_post():.4f}"] if federated else []))

    (out / "federated_matrix.csv").write_text(format_matrix_csv(log.final_matrix))

    fed_cfg = config.federation_config()
    repro = {
        "package_version": __version__,
        "run_config": {k: v for k, v in dataclasses.asdict(config).items() if k != "output_dir"},
        "participant_seeds": {str(pid): [config.seed, pid] for pid in sorted(log.pre)},
        "dataset_sha256": content_hash(samples),
        "dataset_samples": len(samples),
        "federation_config": fed_cfg.to_dict(),
    }
    (out / "reproducibility.json").write_text(json.dumps(repro, indent=1, sort_keys=True) + "\n")

    lines = ["participant  pre-federation  " + ("post-federation" if federated else "")]
    for pid, pre, post in log.pairs():
        lines.append(f"{pid + 1:>11}  {pre:>14.4f}  " + (f"{post:>15.4f}" if federated else ""))
    lines.append(f"{'mean':>11}  {log.mean_pre():>14.4f}  " + (f"{log.mean_post():>15.4f}" if federated else ""))
    summary = "\n".join(line.rstrip() for line in lines) + "\n"
    (out / "summary.txt").write_text(summary)
    return out


def cmd_split(config: RunConfig) -> int:
    samples = _load_samples(config)
    parts = _partitions(config, samples)
    paths = write_manifests(config, samples, parts)
    for p, path in zip(parts, paths):
        print(f"participant {p.participant_id}: {len(p.train)} train / {len(p.test)} test -> {path}")
    return 0


def _participant_from_manifest(config: RunConfig, samples, participant_id: int, manifest_path=None):
    path = Path(manifest_path) if manifest_path else _manifest_dir(config) / f"participant_{participant_id}.json"
    return partition_from_manifest(samples, read_manifest(path))


def cmd_train(config: RunConfig, participant_id: int, manifest=None) -> int:
    samples = _load_samples(config)
    part = _participant_from_manifest(config, samples, participant_id, manifest)
    state = ParticipantState.create(part, config.federation_config())
    report = participant_initial_train(state)
    models = config.out / "models"
    models.mkdir(parents=True, exist_ok=True)
    path = models / f"participant_{part.participant_id}.csv"
    path.write_text(format_matrix_csv(report.matrix))
    print(f"participant {part.participant_id}: local test accuracy {report.accuracy:.4f} -> {path}")
    return 0


def cmd_federate(config: RunConfig) -> int:
    samples = _load_samples(config)
    parts = _partitions(config, samples)
    write_manifests(config, samples, parts)
    fed_cfg = config.federation_config()
    if config.transport == "tcp":
        log = run_tcp(fed_cfg, parts, round_timeout=config.round_timeout)
    else:
        log = run_simulation(fed_cfg, parts)
    out = write_reports(config, log, samples)
    print((out / "summary.txt").read_text(), end="")
    return 0


def cmd_serve(config: RunConfig, bind: str) -> int:
    samples = _load_samples(config)
    fed_cfg = config.federation_config()
    coordinator = Coordinator(
        range(config.n_participants), fed_cfg.topology().concept_names, config.rounds,
        config.round_timeout, fed_cfg.to_dict(),
    )
    log = serve(bind, coordinator)
    out = write_reports(config, log, samples)
    print((out / "summary.txt").read_text(), end="")
    return 0


def cmd_join(config: RunConfig, server: str, participant_id: int, manifest=None) -> int:
    samples = _load_samples(config)
    part = _participant_from_manifest(config, samples, participant_id, manifest)
    state = join(server, ParticipantState.create(part, config.federation_config()))
    models = config.out / "models"
    models.mkdir(parents=True, exist_ok=True)
    (models / f"participant_{state.id}_local.csv").write_text(format_matrix_csv(state.local_matrix))
    (models / f"participant_{state.id}_federated.csv").write_text(format_matrix_csv(state.federated_matrix))
    print(f"participant {state.id}: pre {state.pre_federation_accuracy:.4f} post {state.current_accuracy:.4f}")
    return 0


def cmd_evaluate(config: RunConfig, model_path, manifest_path) -> int:
    samples = _load_samples(config)
    part = partition_from_manifest(samples, read_manifest(manifest_path))
    state = ParticipantState.create(part, config.federation_config())
    matrix = read_matrix_csv(model_path, state.topology.concept_names)
    print(f"{state.accuracy_of(matrix):.4f}")
    return 0


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--data", help="WDBC file (id, diagnosis, 30 features); 'bundled' uses the scikit-learn copy")
    p.add_argument("--output-dir", dest="output_dir", help=f"output directory (default ${OUTPUT_ENV} or ./fedfcm-out)")
    p.add_argument("--participants", dest="n_participants", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--rounds", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-dynamics-iters", dest="max_dynamics_iters", type=int)
    p.add_argument("--swarm-size", dest="swarm_size", type=int)
    p.add_argument("--iterations", dest="max_iterations", type=int)
    p.add_argument("--phi1", type=float)
    p.add_argument("--phi2", type=float)
    p.add_argument("--v-max", dest="v_max", type=float)
    p.add_argument("--inertia", type=float)
    p.add_argument("--jaccard-mode", dest="jaccard_mode", choices=["macro", "positive"])
    p.add_argument("--activation", choices=["sigmoid", "tanh"])
    p.add_argument("--lam", type=float)
    p.add_argument("--retrain-per-round", dest="retrain_per_round", action="store_const", const=True)
    p.add_argument("--alpha", type=float, help="weight of the federated matrix in the local merge")
    p.add_argument("--seed", type=int)
    p.add_argument("--transport", choices=["sim", "tcp"])
    p.add_argument("--round-timeout", dest="round_timeout", type=float)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedfcm", description="Federated FCM learning on WDBC.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _add_run_flags(sub.add_parser("split", help="write per-participant partition manifests"))
    p = sub.add_parser("train", help="train one participant locally")
    _add_run_flags(p)
    p.add_argument("--participant", type=int, default=0)
    p.add_argument("--manifest")
    _add_run_flags(sub.add_parser("federate", help="run the whole federation and write reports"))
    p = sub.add_parser("serve", help="run the federation server over TCP")
    _add_run_flags(p)
    p.add_argument("--bind", default="127.0.0.1:7420")
    p = sub.add_parser("join", help="join a federation server as one participant")
    _add_run_flags(p)
    p.add_argument("--server", default="127.0.0.1:7420")
    p.add_argument("--participant", type=int, required=True)
    p.add_argument("--manifest")
    p = sub.add_parser("evaluate", help="accuracy of a model file on a manifest's test split")
    _add_run_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = build_config(args)
        if args.command == "split":
            return cmd_split(config)
        if args.command == "train":
            return cmd_train(config, args.participant, args.manifest)
        if args.command == "federate":
            return cmd_federate(config)
        if args.command == "serve":
            return cmd_serve(config, args.bind)
        if args.command == "join":
            return cmd_join(config, args.server, args.participant, args.manifest)
        return cmd_evaluate(config, args.model, args.manifest)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConnectionError, TimeoutError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
