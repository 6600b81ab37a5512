import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedfcm.data import (
    FEATURE_NAMES,
    N_FEATURES,
    Diagnosis,
    Sample,
    Scaler,
    apply_scaler,
    content_hash,
    fit_normalize,
    format_wdbc,
    load_wdbc,
    parse_wdbc,
    partition,
    partition_from_manifest,
    read_manifest,
    write_manifest,
)
from fedfcm.errors import DataError, ParseError


def row(sample_id="842302", diagnosis="M", values=None):
    values = [float(i) for i in range(N_FEATURES)] if values is None else values
    return ",".join([sample_id, diagnosis] + [str(v) for v in values])


def column_samples(column):
    """Samples whose first feature is ``column`` and the rest zero."""
    out = []
    for i, v in enumerate(column):
        x = np.zeros(N_FEATURES)
        x[0] = v
        out.append(Sample(str(i), x, Diagnosis.BENIGN))
    return out


class TestParse:
    def test_empty(self):
        assert parse_wdbc(b"") == []

    def test_one_row(self):
        (s,) = parse_wdbc(row() + "\n")
        assert s.id == "842302" and s.label is Diagnosis.MALIGNANT
        np.testing.assert_array_equal(s.features, np.arange(30.0))

    def test_blank_lines_skipped(self):
        assert len(parse_wdbc(f"\n{row()}\n\n{row('2', 'B')}\n")) == 2

    def test_bad_diagnosis_names_line(self):
        text = "\n".join([row(), row("9", "X")])
        with pytest.raises(ParseError, match="line 2") as info:
            parse_wdbc(text)
        assert info.value.line == 2

    def test_wrong_field_count(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_wdbc(row(values=[1.0] * 29))

    def test_non_numeric(self):
        values = [1.0] * 30
        values[4] = "abc"
        with pytest.raises(ParseError, match="line 3"):
            parse_wdbc("\n".join([row(), row(), row(values=values)]))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_wdbc(tmp_path / "nope.data")

    def test_bundled_counts(self, wdbc):
        assert len(wdbc) == 569
        assert sum(s.label is Diagnosis.MALIGNANT for s in wdbc) == 212
        assert sum(s.label is Diagnosis.BENIGN for s in wdbc) == 357

    def test_bundled_first_row_matches_uci(self, wdbc):
        # first record of the UCI file, id 842302
        assert wdbc[0].label is Diagnosis.MALIGNANT
        assert wdbc[0].features[0] == 17.99 and wdbc[0].features[1] == 10.38
        assert wdbc[0].features[-1] == 0.1189

    def test_format_round_trip(self, wdbc, tmp_path):
        path = tmp_path / "wdbc.data"
        path.write_text(format_wdbc(wdbc))
        again = load_wdbc(path)
        assert again == wdbc
        assert content_hash(again) == content_hash(wdbc)

    def test_feature_names(self):
        assert len(FEATURE_NAMES) == 30 and len(set(FEATURE_NAMES)) == 30
        assert FEATURE_NAMES[0] == "radius_mean" and FEATURE_NAMES[-1] == "fractal_dimension_worst"


class TestNormalize:
    def test_affine(self):
        _, out = fit_normalize(column_samples([2.0, 4.0, 6.0]))
        assert [s.features[0] for s in out] == [0.0, 0.5, 1.0]

    def test_constant_column(self):
        _, out = fit_normalize(column_samples([5.0, 5.0, 5.0]))
        assert all(s.features[0] == 0.0 for s in out)

    def test_single_sample(self):
        _, (s,) = fit_normalize([Sample("a", np.arange(30.0) + 1, Diagnosis.BENIGN)])
        np.testing.assert_array_equal(s.features, 0.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            fit_normalize([])

    def test_apply(self):
        scaler, _ = fit_normalize(column_samples([2.0, 6.0]))
        out = apply_scaler(scaler, column_samples([2.0, 9.0, 4.0, -3.0]))
        assert [s.features[0] for s in out] == [0.0, 1.0, 0.5, 0.0]

    def test_rejects_inverted_scaler(self):
        with pytest.raises(ValueError):
            Scaler([1.0], [0.0])

    def test_scaler_dict_round_trip(self, wdbc_partitions):
        s = wdbc_partitions[0].scaler
        again = Scaler.from_dict(s.to_dict())
        assert np.array_equal(again.minimum, s.minimum) and np.array_equal(again.maximum, s.maximum)

    @settings(max_examples=100)
    @given(arrays(float, st.tuples(st.integers(1, 12), st.just(N_FEATURES)), elements=st.floats(-1e6, 1e6)))
    def test_refit_is_identity(self, x):
        samples = [Sample(str(i), r, Diagnosis.BENIGN) for i, r in enumerate(x)]
        _, once = fit_normalize(samples)
        _, twice = fit_normalize(once)
        for a, b in zip(once, twice):
            assert np.all((a.features >= 0) & (a.features <= 1))
            np.testing.assert_allclose(b.features, a.features, rtol=0, atol=1e-12)


class TestPartition:
    def test_sizes(self, wdbc, wdbc_partitions):
        sizes = sorted(len(p.train) + len(p.test) for p in wdbc_partitions)
        assert sizes == [113, 114, 114, 114, 114]
        assert all(22 <= len(p.test) <= 23 for p in wdbc_partitions)

    def test_exhaustive_and_disjoint(self, wdbc, wdbc_partitions):
        ids = [s.id for p in wdbc_partitions for s in p.train + p.test]
        assert len(ids) == len(set(ids)) == len(wdbc)
        for p in wdbc_partitions:
            assert not {s.id for s in p.train} & {s.id for s in p.test}

    def test_stratified(self, wdbc_partitions):
        for p in wdbc_partitions:
            shard = p.train + p.test
            m_shard = sum(s.label is Diagnosis.MALIGNANT for s in shard)
            m_train = sum(s.label is Diagnosis.MALIGNANT for s in p.train)
            assert abs(m_train - m_shard * len(p.train) / len(shard)) <= 1.0

    def test_train_in_unit_cube(self, wdbc_partitions):
        for p in wdbc_partitions:
            x, _ = p.train_arrays
            assert x.min() == 0.0 and x.max() == 1.0
            xt, _ = p.test_arrays
            assert np.all((xt >= 0) & (xt <= 1))

    def test_scaler_from_own_train_split(self, wdbc, wdbc_partitions):
        raw = {s.id: s.features for s in wdbc}
        for p in wdbc_partitions:
            x = np.stack([raw[s.id] for s in p.train])
            np.testing.assert_array_equal(p.scaler.minimum, x.min(axis=0))
            np.testing.assert_array_equal(p.scaler.maximum, x.max(axis=0))

    def test_single_participant(self, wdbc):
        (p,) = partition(wdbc, 1)
        assert len(p.train) + len(p.test) == 569

    def test_deterministic(self, wdbc):
        a = partition(wdbc, 5, seed=11)
        b = partition(wdbc, 5, seed=11)
        c = partition(wdbc, 5, seed=12)
        assert [p.manifest() for p in a] == [p.manifest() for p in b]
        assert [p.manifest() for p in a] != [p.manifest() for p in c]

    def test_empty_class_rejected(self):
        samples = column_samples(range(10))
        with pytest.raises(ValueError, match="malignant"):
            partition(samples, 2)

    @pytest.mark.parametrize("kwargs", [{"n_participants": 0}, {"n_participants": 2, "train_fraction": 1.0}])
    def test_bad_arguments(self, wdbc, kwargs):
        with pytest.raises(ValueError):
            partition(wdbc, **kwargs)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 2**31))
    def test_near_equal_shards(self, wdbc, n, seed):
        parts = partition(wdbc, n, seed=seed)
        sizes = [len(p.train) + len(p.test) for p in parts]
        assert sum(sizes) == 569 and max(sizes) - min(sizes) <= 1

    def test_manifest_round_trip(self, wdbc, wdbc_partitions, tmp_path):
        for p in wdbc_partitions:
            path = tmp_path / f"p{p.participant_id}.json"
            write_manifest(path, p, seed=0)
            again = partition_from_manifest(wdbc, read_manifest(path))
            assert again.participant_id == p.participant_id
            assert again.train == p.train and again.test == p.test

    def test_manifest_errors(self, wdbc, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(DataError):
            read_manifest(bad)
        bad.write_text('{"participant_id": 0}')
        with pytest.raises(DataError):
            read_manifest(bad)
        with pytest.raises(DataError):
            read_manifest(tmp_path / "absent.json")
        with pytest.raises(DataError):
            partition_from_manifest(
                wdbc, {"participant_id": 0, "train_ids": ["nope"], "test_ids": [], "scaler": {"min": [], "max": []}}
            )
