"""Newline-delimited JSON messages carrying the federation protocol.

A session between the server and one participant runs::

    participant -> Hello(id, concept names)
    server      -> ModelPush(0, no matrix)         # train locally
    participant -> TrainResult(round-0 report)
    server      -> ModelPush(r, federated)          # r = 1 .. max_rounds
    participant -> TrainResult(round-r report)
    server      -> Terminate(final federated)       # or Error(code, text)

Every line is one UTF-8 JSON object with ``"v": 1`` first and a ``"type"``
tag second. Reals are written with 17 significant digits so they decode to
the same binary64 value. Messages only ever hold ids, round numbers,
concept names, matrices and accuracies.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass
from typing import Callable, Sequence

from . import _jsonline
from . import federation as fed
from .aggregation import LabeledMatrix
from .data import DatasetPartition
from .errors import ProtocolError, RoundTimeoutError

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_ROUND_TIMEOUT = 300.0


@dataclass(frozen=True)
class Hello:
    participant_id: int
    concept_names: tuple[str, ...]


@dataclass(frozen=True)
class ModelPush:
    round: int
    matrix: LabeledMatrix | None


@dataclass(frozen=True)
class TrainResult:
    report: fed.ParticipantReport


@dataclass(frozen=True)
class Terminate:
    matrix: LabeledMatrix


@dataclass(frozen=True)
class Error:
    code: str
    text: str


Message = Hello | ModelPush | TrainResult | Terminate | Error


def _matrix_obj(m: LabeledMatrix | None):
    if m is None:
        return None
    return {"concepts": list(m.concept_names), "rows": m.matrix}


def encode(message: Message) -> bytes:
    if isinstance(message, Hello):
        body = {"type": "hello", "participant_id": message.participant_id, "concepts": list(message.concept_names)}
    elif isinstance(message, ModelPush):
        body = {"type": "model_push", "round": message.round, "matrix": _matrix_obj(message.matrix)}
    elif isinstance(message, TrainResult):
        r = message.report
        body = {
            "type": "train_result",
            "participant_id": r.participant_id,
            "round": r.round,
            "accuracy": float(r.accuracy),
            "federated_accuracy": None if r.federated_accuracy is None else float(r.federated_accuracy),
            "matrix": _matrix_obj(r.matrix),
        }
    elif isinstance(message, Terminate):
        body = {"type": "terminate", "matrix": _matrix_obj(message.matrix)}
    elif isinstance(message, Error):
        body = {"type": "error", "code": message.code, "text": message.text}
    else:
        raise TypeError(f"not a protocol message: {message!r}")
    return (_jsonline.dumps({"v": PROTOCOL_VERSION, **body}) + "\n").encode("utf-8")


def _field(obj: dict, key: str, kind):
    if key not in obj:
        raise ProtocolError(f"message lacks field {key!r}", "schema")
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ProtocolError(f"field {key!r} must be a real", "schema")
        return float(value)
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ProtocolError(f"field {key!r} must be an integer", "schema")
    if kind is str and not isinstance(value, str):
        raise ProtocolError(f"field {key!r} must be a string", "schema")
    return value


def _decode_matrix(obj) -> LabeledMatrix:
    if not isinstance(obj, dict):
        raise ProtocolError("matrix must be an object", "schema")
    names = _field(obj, "concepts", list)
    rows = _field(obj, "rows", list)
    if not all(isinstance(n, str) for n in names):
        raise ProtocolError("concept names must be strings", "schema")
    if len(rows) != len(names) or any(not isinstance(row, list) or len(row) != len(names) for row in rows):
        raise ProtocolError(f"matrix dimensions do not match {len(names)} concept names", "dimension")
    try:
        values = [[_field({"x": v}, "x", float) for v in row] for row in rows]
        return LabeledMatrix(tuple(names), values)
    except ValueError as exc:
        raise ProtocolError(f"invalid matrix: {exc}", "schema") from None


def decode(line: bytes | str) -> Message:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError("message is not valid UTF-8", "schema") from None
    try:
        obj = _jsonline.loads(line)
    except ValueError as exc:
        raise ProtocolError(f"message is not valid JSON: {exc}", "schema") from None
    if not isinstance(obj, dict):
        raise ProtocolError("message must be a JSON object", "schema")
    if obj.get("v") != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {obj.get('v')!r}", "version")
    kind = obj.get("type")
    if kind == "hello":
        names = _field(obj, "concepts", list)
        if not all(isinstance(n, str) for n in names):
            raise ProtocolError("concept names must be strings", "schema")
        return Hello(_field(obj, "participant_id", int), tuple(names))
    if kind == "model_push":
        round_ = _field(obj, "round", int)
        matrix = _field(obj, "matrix", object)
        if matrix is None and round_ != 0:
            raise ProtocolError("only the round-0 push may omit the matrix", "schema")
        return ModelPush(round_, None if matrix is None else _decode_matrix(matrix))
    if kind == "train_result":
        fa = _field(obj, "federated_accuracy", object)
        try:
            report = fed.ParticipantReport(
                _field(obj, "participant_id", int),
                _field(obj, "round", int),
                _decode_matrix(_field(obj, "matrix", dict)),
                _field(obj, "accuracy", float),
                None if fa is None else _field(obj, "federated_accuracy", float),
            )
        except ValueError as exc:
            raise ProtocolError(f"invalid report: {exc}", "schema") from None
        return TrainResult(report)
    if kind == "terminate":
        return Terminate(_decode_matrix(_field(obj, "matrix", dict)))
    if kind == "error":
        return Error(_field(obj, "code", str), _field(obj, "text", str))
    raise ProtocolError(f"unknown message type {kind!r}", "unknown_variant")


class ConnectionClosed(ProtocolError):
    def __init__(self):
        super().__init__("connection closed by peer", "disconnected")


class Connection:
    """One end of a line-oriented channel. ``tap`` sees every line sent."""

    def __init__(self, tap: Callable[[bytes], None] | None = None):
        self.tap = tap

    def send(self, message: Message) -> None:
        line = encode(message)
        if self.tap is not None:
            self.tap(line)
        self._send_line(line)

    def recv(self, timeout: float | None = None) -> Message:
        """Next message; ``TimeoutError`` after ``timeout`` seconds, ``ConnectionClosed`` on EOF."""
        return decode(self._recv_line(timeout))

    def _send_line(self, line: bytes) -> None:
        raise NotImplementedError

    def _recv_line(self, timeout: float | None) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass


class SocketConnection(Connection):
    def __init__(self, sock: socket.socket, tap=None):
        super().__init__(tap)
        self.sock = sock
        self._reader = sock.makefile("rb")

    def _send_line(self, line: bytes) -> None:
        try:
            self.sock.sendall(line)
        except OSError:
            raise ConnectionClosed() from None

    def _recv_line(self, timeout):
        self.sock.settimeout(timeout)
        try:
            line = self._reader.readline()
        except socket.timeout:
            raise TimeoutError from None
        except OSError:
            raise ConnectionClosed() from None
        if not line.endswith(b"\n"):
            raise ConnectionClosed()
        return line

    def close(self) -> None:
        try:
            self._reader.close()
            self.sock.close()
        except OSError:
            pass


class QueueConnection(Connection):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, tap=None):
        super().__init__(tap)
        self.inbox, self.outbox = inbox, outbox
        self._closed = False

    def _send_line(self, line):
        if self._closed:
            raise ConnectionClosed()
        self.outbox.put(line)

    def _recv_line(self, timeout):
        try:
            line = self.inbox.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError from None
        if line is None:
            raise ConnectionClosed()
        return line

    def close(self):
        if not self._closed:
            self._closed = True
            self.outbox.put(None)


def loopback_pair(tap=None) -> tuple[QueueConnection, QueueConnection]:
    a, b = queue.Queue(), queue.Queue()
    return QueueConnection(a, b, tap), QueueConnection(b, a, tap)


class Coordinator:
    """Server side of the protocol over any kind of connection.

    ``accept(timeout)`` must return the next incoming :class:`Connection`
    or raise ``TimeoutError``.
    """

    def __init__(
        self,
        participant_ids: Sequence[int],
        concept_names: Sequence[str],
        max_rounds: int = 20,
        round_timeout: float = DEFAULT_ROUND_TIMEOUT,
        config: dict | None = None,
    ):
        self.state = fed.ServerState(frozenset(participant_ids), max_rounds)
        self.concept_names = tuple(concept_names)
        self.round_timeout = round_timeout
        self.config = config or {}
        self.sessions: dict[int, Connection] = {}

    def _reject(self, conn: Connection, code: str, text: str) -> None:
        logger.warning("rejecting connection: %s", text)
        try:
            conn.send(Error(code, text))
        except ProtocolError:
            pass
        conn.close()

    def _admit(self, accept) -> None:
        deadline = time.monotonic() + self.round_timeout
        while len(self.sessions) < len(self.state.expected_participants):
            remaining = deadline - time.monotonic()
            waiting = sorted(self.state.expected_participants - self.sessions.keys())
            try:
                conn = accept(max(remaining, 0.0))
                hello = conn.recv(max(deadline - time.monotonic(), 0.0))
            except TimeoutError:
                raise RoundTimeoutError(
                    waiting[0], f"participants {waiting} did not join before the deadline"
                ) from None
            except ProtocolError as exc:
                self._reject(conn, exc.code, str(exc))
                continue
            if not isinstance(hello, Hello):
                self._reject(conn, "schema", "expected a hello message")
            elif hello.participant_id not in self.state.expected_participants:
                self._reject(conn, "unknown_id", f"participant id {hello.participant_id} is not expected")
            elif hello.participant_id in self.sessions:
                self._reject(conn, "duplicate_id", f"participant id {hello.participant_id} already joined")
            elif set(hello.concept_names) != set(self.concept_names) or len(hello.concept_names) != len(
                self.concept_names
            ):
                self._reject(conn, "concept_mismatch", f"participant {hello.participant_id} uses different concepts")
            else:
                self.sessions[hello.participant_id] = conn
                logger.info("participant %s joined", hello.participant_id)

    def _exchange(self, push: ModelPush) -> list[fed.ParticipantReport]:
        for pid in sorted(self.sessions):
            try:
                self.sessions[pid].send(push)
            except ConnectionClosed:
                raise RoundTimeoutError(pid, f"participant {pid} disconnected before round {push.round}") from None
        deadline = time.monotonic() + self.round_timeout
        reports = []
        for pid in sorted(self.sessions):
            try:
                msg = self.sessions[pid].recv(max(deadline - time.monotonic(), 0.0))
            except TimeoutError:
                raise RoundTimeoutError(pid, f"participant {pid} timed out in round {push.round}") from None
            except ConnectionClosed:
                raise RoundTimeoutError(pid, f"participant {pid} disconnected during round {push.round}") from None
            if isinstance(msg, Error):
                raise ProtocolError(f"participant {pid} failed: {msg.text}", msg.code)
            if not isinstance(msg, TrainResult) or msg.report.participant_id != pid:
                raise ProtocolError(f"participant {pid} sent an unexpected message in round {push.round}", "schema")
            reports.append(msg.report)
        return reports

    def run(self, accept) -> fed.FederationLog:
        try:
            self._admit(accept)
            initial = self._exchange(ModelPush(0, None))
            log = fed.drive_server(
                self.state, initial, lambda b: self._exchange(ModelPush(b.round, b.matrix)), self.config
            )
            for pid in sorted(self.sessions):
                self.sessions[pid].send(Terminate(log.final_matrix))
            return log
        except ProtocolError as exc:
            for conn in self.sessions.values():
                try:
                    conn.send(Error(exc.code, str(exc)))
                except ProtocolError:
                    pass
            raise
        finally:
            for conn in self.sessions.values():
                conn.close()


def participant_session(conn: Connection, state: fed.ParticipantState, timeout: float | None = None) -> fed.ParticipantState:
    """Participant side: join, answer every push, stop on Terminate."""
    try:
        conn.send(Hello(state.id, tuple(state.topology.concept_names)))
        while True:
            msg = conn.recv(timeout)
            if isinstance(msg, ModelPush):
                if msg.matrix is None:
                    report = fed.participant_initial_train(state)
                else:
                    report = fed.participant_step(state, msg.matrix, msg.round)
                conn.send(TrainResult(report))
            elif isinstance(msg, Terminate):
                fed.participant_finish(state, msg.matrix)
                return state
            elif isinstance(msg, Error):
                raise ProtocolError(f"server aborted: {msg.text}", msg.code)
            else:
                raise ProtocolError(f"unexpected message {type(msg).__name__}", "schema")
    except ProtocolError as exc:
        if not isinstance(exc, ConnectionClosed) and exc.code not in ("duplicate_id", "unknown_id"):
            try:
                conn.send(Error(exc.code, str(exc)))
            except ProtocolError:
                pass
        raise
    finally:
        conn.close()


def parse_address(address: str | tuple[str, int]) -> tuple[str, int]:
    if isinstance(address, tuple):
        return address
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {address!r}")
    return host, int(port)


class FederationServer:
    """TCP listener feeding accepted sockets to a :class:`Coordinator`."""

    def __init__(self, bind_address, coordinator: Coordinator, tap=None):
        self.coordinator = coordinator
        self.tap = tap
        self.sock = socket.create_server(parse_address(bind_address))

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()[:2]

    def _accept(self, timeout: float) -> Connection:
        self.sock.settimeout(timeout)
        try:
            client, _ = self.sock.accept()
        except socket.timeout:
            raise TimeoutError from None
        client.settimeout(None)
        return SocketConnection(client, self.tap)

    def run(self) -> fed.FederationLog:
        try:
            return self.coordinator.run(self._accept)
        finally:
            self.sock.close()


def serve(bind_address, coordinator: Coordinator, tap=None) -> fed.FederationLog:
    return FederationServer(bind_address, coordinator, tap).run()


def join(server_address, state: fed.ParticipantState, tap=None, connect_timeout: float = 30.0) -> fed.ParticipantState:
    sock = socket.create_connection(parse_address(server_address), timeout=connect_timeout)
    sock.settimeout(None)
    return participant_session(SocketConnection(sock, tap), state)


def _run_participants(
    states: Sequence[fed.ParticipantState], connect: Callable[[fed.ParticipantState], None]
) -> tuple[list[threading.Thread], list[BaseException]]:
    errors: list[BaseException] = []

    def target(s):
        try:
            connect(s)
        except BaseException as exc:  # surfaced by the caller after join
            errors.append(exc)

    threads = [threading.Thread(target=target, args=(s,), daemon=True) for s in states]
    for t in threads:
        t.start()
    return threads, errors


def run_loopback(
    config: fed.FederationConfig,
    partitions: Sequence[DatasetPartition],
    tap=None,
    round_timeout: float = DEFAULT_ROUND_TIMEOUT,
) -> fed.FederationLog:
    """Full federation with participants in threads talking over in-memory queues."""
    states = [fed.ParticipantState.create(p, config) for p in partitions]
    incoming: queue.Queue = queue.Queue()

    def connect(state):
        server_end, client_end = loopback_pair(tap)
        incoming.put(server_end)
        participant_session(client_end, state)

    def accept(timeout):
        try:
            return incoming.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError from None

    coordinator = Coordinator(
        [s.id for s in states], states[0].topology.concept_names, config.max_rounds, round_timeout, config.to_dict()
    )
    threads, _ = _run_participants(states, connect)
    log = coordinator.run(accept)
    for t in threads:
        t.join()
    return log


def run_tcp(
    config: fed.FederationConfig,
    partitions: Sequence[DatasetPartition],
    tap=None,
    bind_address=("127.0.0.1", 0),
    round_timeout: float = DEFAULT_ROUND_TIMEOUT,
) -> fed.FederationLog:
    """Full federation over localhost TCP with participants in threads."""
    states = [fed.ParticipantState.create(p, config) for p in partitions]
    coordinator = Coordinator(
        [s.id for s in states], states[0].topology.concept_names, config.max_rounds, round_timeout, config.to_dict()
    )
    server = FederationServer(bind_address, coordinator, tap)
    threads, _ = _run_participants(states, lambda s: join(server.address, s, tap))
    log = server.run()
    for t in threads:
        t.join()
    return log
