import dataclasses
import logging

import numpy as np
import pytest

from fedfcm.aggregation import LabeledMatrix
from fedfcm.data import DatasetPartition
from fedfcm.errors import ProtocolError
from fedfcm.federation import (
    Broadcast,
    FederationConfig,
    FederationLog,
    ParticipantReport,
    ParticipantState,
    ServerState,
    Terminate,
    drive_server,
    matrix_checksum,
    participant_initial_train,
    participant_step,
    run_simulation,
    server_step,
)
from fedfcm.pso import PsoConfig, fitness


def one(value, name="a"):
    return LabeledMatrix((name,), [[value]])


def rep(pid, value, acc, round_=0):
    return ParticipantReport(pid, round_, one(value), acc)


def random_local(state, rng):
    topo = state.topology
    return LabeledMatrix(topo.concept_names, topo.adjacency(rng.uniform(-1, 1, topo.dimension)))


def max_pairwise(matrices):
    return max(np.max(np.abs(a.matrix - b.matrix)) for i, a in enumerate(matrices) for b in matrices[i + 1 :])


class TestServerStep:
    def test_weighted_broadcast(self):
        state = ServerState({0, 1}, max_rounds=5)
        action = server_step(state, [rep(0, 0.2, 0.5), rep(1, 0.6, 1.0)])
        assert isinstance(action, Broadcast) and action.round == 1
        assert round(action.matrix.matrix[0, 0], 4) == 0.4667
        assert state.round == 1

    def test_identical_reports(self):
        action = server_step(ServerState({0, 1, 2}), [rep(i, -0.3, 0.1 * (i + 1)) for i in range(3)])
        assert isinstance(action, Broadcast)
        assert action.matrix.matrix[0, 0] == pytest.approx(-0.3, abs=1e-16)

    def test_zero_rounds_terminates_after_first_aggregation(self):
        action = server_step(ServerState({0}, max_rounds=0), [rep(0, 0.1, 1.0)])
        assert isinstance(action, Terminate)
        assert action.matrix == one(0.1)

    def test_round_count(self):
        # max_rounds merge rounds, then one last aggregation
        state = ServerState({0}, max_rounds=1)
        assert isinstance(server_step(state, [rep(0, 0.1, 1.0)]), Broadcast)
        assert isinstance(server_step(state, [rep(0, 0.1, 1.0, round_=1)]), Terminate)

    def test_duplicate_latest_wins(self, caplog):
        state = ServerState({0, 1})
        with caplog.at_level(logging.WARNING, logger="fedfcm.federation"):
            action = server_step(state, [rep(0, 0.9, 1.0), rep(1, 0.2, 1.0), rep(0, 0.2, 1.0)])
        assert action.matrix.matrix[0, 0] == pytest.approx(0.2)
        assert "duplicate" in caplog.text
        assert len(state.received) == 2

    def test_missing_participant(self):
        with pytest.raises(ProtocolError, match=r"\[1\]") as info:
            server_step(ServerState({0, 1}), [rep(0, 0.2, 1.0)])
        assert info.value.code == "straggler"

    def test_unexpected_participant(self):
        with pytest.raises(ProtocolError):
            server_step(ServerState({0}), [rep(0, 0.2, 1.0), rep(7, 0.2, 1.0)])

    def test_wrong_round(self):
        with pytest.raises(ProtocolError):
            server_step(ServerState({0}), [rep(0, 0.2, 1.0, round_=3)])

    def test_bad_state(self):
        with pytest.raises(ValueError):
            ServerState(set())
        with pytest.raises(ValueError):
            ServerState({0}, max_rounds=-1)


class TestParticipant:
    def test_initial_train_is_deterministic(self, wdbc_partitions, quick_config):
        a = participant_initial_train(ParticipantState.create(wdbc_partitions[2], quick_config))
        b = participant_initial_train(ParticipantState.create(wdbc_partitions[2], quick_config))
        assert a.matrix == b.matrix and a.accuracy == b.accuracy and a.round == 0
        assert 0.0 <= a.accuracy <= 1.0

    def test_accuracy_is_on_test_split(self, wdbc_partitions, quick_config):
        state = ParticipantState.create(wdbc_partitions[0], quick_config)
        report = participant_initial_train(state)
        x, y = wdbc_partitions[0].test_arrays
        model = state.topology.model_from_adjacency(report.matrix.matrix)
        assert report.accuracy == np.mean(state.topology.predict(model, x) == y)
        assert state.pre_federation_accuracy == report.accuracy

    def test_single_sample_test_split(self, wdbc_partitions, quick_config):
        p = wdbc_partitions[0]
        state = ParticipantState.create(p, quick_config)
        participant_initial_train(state)
        x, y = p.test_arrays
        model = state.topology.model_from_adjacency(state.local_matrix.matrix)
        pred = state.topology.predict(model, x)
        hit = p.test[int(np.flatnonzero(pred == y)[0])]
        state.partition = DatasetPartition(p.participant_id, p.train, [hit], p.scaler)
        assert state.accuracy_of(state.local_matrix) == 1.0

    def test_self_merge_is_identity(self, wdbc_partitions, quick_config):
        state = ParticipantState.create(wdbc_partitions[1], quick_config)
        first = participant_initial_train(state)
        report = participant_step(state, first.matrix)
        assert report.matrix == first.matrix
        assert report.accuracy == first.accuracy == report.federated_accuracy
        assert report.round == 1

    def test_blend(self, wdbc_partitions, quick_config, rng):
        state = ParticipantState.create(wdbc_partitions[1], quick_config)
        participant_initial_train(state)
        local = state.local_matrix
        fed = random_local(state, rng)
        report = participant_step(state, fed, 4)
        np.testing.assert_allclose(report.matrix.matrix, 0.5 * (fed.matrix + local.matrix), atol=1e-16)
        assert report.round == 4 and state.round == 4

    def test_halving_law(self, wdbc_partitions, quick_config, rng):
        """Blending the same federated matrix halves every pairwise gap."""
        states = [ParticipantState.create(p, quick_config) for p in wdbc_partitions[:3]]
        for s in states:
            s.local_matrix = random_local(s, rng)
        d0 = max_pairwise([s.local_matrix for s in states])
        for r in range(1, 21):
            fed = random_local(states[0], rng)
            for s in states:
                participant_step(s, fed, r)
            d = max_pairwise([s.local_matrix for s in states])
            assert d == pytest.approx(d0 / 2**r, rel=1e-9)

    def test_concept_mismatch(self, wdbc_partitions, quick_config):
        state = ParticipantState.create(wdbc_partitions[0], quick_config)
        participant_initial_train(state)
        with pytest.raises(ProtocolError):
            participant_step(state, one(0.1))

    def test_before_training(self, wdbc_partitions, quick_config, rng):
        state = ParticipantState.create(wdbc_partitions[0], quick_config)
        with pytest.raises(ProtocolError):
            participant_step(state, random_local(state, rng))

    def test_retrain_starts_from_merged(self, wdbc_partitions, quick_config, rng):
        cfg = dataclasses.replace(quick_config, retrain_per_round=True)
        state = ParticipantState.create(wdbc_partitions[0], cfg)
        participant_initial_train(state)
        fed = random_local(state, rng)
        merged = 0.5 * (fed.matrix + state.local_matrix.matrix)
        merged_acc = state.accuracy_of(LabeledMatrix(fed.concept_names, merged))
        report = participant_step(state, fed, 1)
        x, y = wdbc_partitions[0].train_arrays
        topo = state.topology
        # the merged matrix seeds particle 0, so the retrained map is at least as fit on training data
        assert fitness(topo.position(report.matrix.matrix), x, y, topo) <= fitness(topo.position(merged), x, y, topo)
        assert 0.0 <= report.accuracy <= 1.0 and 0.0 <= merged_acc <= 1.0


class TestSimulation:
    def test_log_shape(self, wdbc_partitions):
        cfg = FederationConfig(max_rounds=20, pso=PsoConfig(swarm_size=4, max_iterations=3))
        log = run_simulation(cfg, wdbc_partitions)
        assert [r.round for r in log.rounds] == list(range(1, 21))
        assert len(log.pairs()) == 5
        assert all(len(r.accuracy) == 5 for r in log.rounds)
        assert log.final_matrix is not None

    def test_zero_rounds(self, wdbc_partitions, quick_config):
        log = run_simulation(dataclasses.replace(quick_config, max_rounds=0), wdbc_partitions)
        assert log.rounds == [] and len(log.pre) == 5
        assert log.post == {} and log.mean_post() is None
        assert all(post is None for _, _, post in log.pairs())

    def test_single_participant(self, wdbc_partitions, quick_config):
        log = run_simulation(quick_config, wdbc_partitions[:1])
        assert log.post == log.pre

    def test_identical_shards_shared_stream(self, wdbc_partitions, quick_config):
        base = wdbc_partitions[3]
        clones = [DatasetPartition(i, base.train, base.test, base.scaler) for i in range(4)]
        cfg = dataclasses.replace(quick_config, independent_streams=False)
        log = run_simulation(cfg, clones)
        assert log.post == log.pre
        assert len(set(log.pre.values())) == 1

    def test_deterministic(self, wdbc_partitions, quick_config):
        a = run_simulation(quick_config, wdbc_partitions).to_json()
        b = run_simulation(quick_config, wdbc_partitions).to_json()
        assert a == b

    def test_empty(self, quick_config):
        with pytest.raises(ValueError):
            run_simulation(quick_config, [])

    def test_consensus_non_increasing_and_range_valid(self, wdbc_partitions, quick_config):
        states = {p.participant_id: ParticipantState.create(p, quick_config) for p in wdbc_partitions[:3]}
        initial = [participant_initial_train(s) for s in states.values()]
        gaps = [max_pairwise([s.local_matrix for s in states.values()])]
        broadcasts = []

        def exchange(action):
            broadcasts.append(action.matrix)
            reports = [participant_step(s, action.matrix, action.round) for s in states.values()]
            gaps.append(max_pairwise([s.local_matrix for s in states.values()]))
            return reports

        log = drive_server(ServerState(frozenset(states), quick_config.max_rounds), initial, exchange)
        assert len(log.rounds) == len(broadcasts) == quick_config.max_rounds
        assert all(b <= a for a, b in zip(gaps, gaps[1:]))
        assert all(np.all(np.abs(m.matrix) <= 1.0) for m in broadcasts)
        assert [r.federated_checksum for r in log.rounds] == [matrix_checksum(m) for m in broadcasts]


class TestLog:
    def test_json_shape(self):
        log = FederationLog({0: 0.5, 1: 0.75})
        log.record(1, [ParticipantReport(1, 1, one(0.1), 1.0, 0.5), ParticipantReport(0, 1, one(0.1), 0.5, 0.5)], one(0.1))
        log.final_matrix = one(0.1)
        d = log.to_dict()
        assert d["participants"] == [
            {"participant_id": 0, "pre": 0.5, "post": 0.5},
            {"participant_id": 1, "pre": 0.75, "post": 1.0},
        ]
        assert d["rounds"][0]["accuracy"][0] == {"participant_id": 0, "local": 0.5, "federated": 0.5}
        assert log.mean_pre() == 0.625 and log.mean_post() == 0.75
        assert log.to_json().endswith("\n")

    def test_checksum_depends_on_entries(self):
        assert matrix_checksum(one(0.1)) != matrix_checksum(one(np.nextafter(0.1, 1.0)))
        assert matrix_checksum(one(0.1)) == matrix_checksum(one(0.1))


def test_config_validation():
    with pytest.raises(ValueError):
        FederationConfig(max_rounds=-1)
    with pytest.raises(ValueError):
        FederationConfig(alpha=2.0)
