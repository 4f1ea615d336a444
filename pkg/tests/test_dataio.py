import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scne import dataio
from scne.dataio import Dataset, FeatureGroupSpec, SplitSpec
from scne.errors import DataError, ParameterError, ShapeError, SpecError


@pytest.fixture
def abt_csv(tmp_path):
    p = tmp_path / "abt.csv"
    p.write_text("a,b,t\n1,2,9\n3,4,8\n5,6,7\n")
    return p


class TestDataset:
    def test_rejects_mismatch(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros((3, 2)), np.zeros(2))

    def test_arrays_read_only(self):
        ds = Dataset(np.zeros((2, 2)), np.zeros(2))
        with pytest.raises(ValueError):
            ds.X[0, 0] = 1.0

    def test_concat_and_take(self):
        ds = Dataset(np.arange(6.0).reshape(3, 2), np.arange(3.0))
        both = Dataset.concat([ds.take([0]), ds.take([1, 2])])
        np.testing.assert_array_equal(both.X, ds.X)
        np.testing.assert_array_equal(both.y, ds.y)


class TestLoadCsv:
    def test_named_target(self, abt_csv):
        ds = dataio.load_csv(abt_csv, "t")
        np.testing.assert_array_equal(ds.X, [[1, 2], [3, 4], [5, 6]])
        np.testing.assert_array_equal(ds.y, [9, 8, 7])
        assert ds.column_names == ("a", "b")

    def test_index_target(self, abt_csv):
        ds = dataio.load_csv(abt_csv, 1)
        assert ds.column_names == ("b", "t")
        np.testing.assert_array_equal(ds.X, [[2, 9], [4, 8], [6, 7]])
        np.testing.assert_array_equal(ds.y, [1, 3, 5])

    def test_parse_error_location(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b,t\n1,x,9\n")
        with pytest.raises(DataError, match="row 2, column 2"):
            dataio.load_csv(p, "t")

    def test_ragged(self, tmp_path):
        p = tmp_path / "ragged.csv"
        p.write_text("1,2,3\n4,5\n")
        with pytest.raises(DataError, match="row 2"):
            dataio.load_csv(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            dataio.load_csv(tmp_path / "nope.csv")

    def test_missing_target(self, abt_csv):
        with pytest.raises(DataError):
            dataio.load_csv(abt_csv, "zzz")

    def test_headerless_autodetect(self, tmp_path):
        p = tmp_path / "plain.csv"
        p.write_text("1;2\n3;4\n")
        ds = dataio.load_csv(p, delimiter=";")
        np.testing.assert_array_equal(ds.y, [2, 4])

    def test_write_round_trip(self, tmp_path, rng):
        ds = Dataset(rng.normal(size=(5, 3)), rng.normal(size=5), ("p", "q", "r"))
        p = tmp_path / "rt.csv"
        dataio.write_csv(p, ds, "target")
        back = dataio.load_csv(p, "target")
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.y, ds.y)
        assert back.column_names == ds.column_names


class TestMinmax:
    def test_column_scaling(self):
        ds = Dataset(np.array([[0.0, 7.0], [5.0, 7.0], [10.0, 7.0]]), np.zeros(3))
        (out,), xp, yp = dataio.minmax_fit_apply(ds)
        np.testing.assert_array_equal(out.X[:, 0], [0, 0.5, 1])
        np.testing.assert_array_equal(out.X[:, 1], [0, 0, 0])
        assert yp is None

    def test_held_out_not_clipped(self):
        train = Dataset(np.array([[0.0], [10.0]]), np.zeros(2))
        test = Dataset(np.array([[12.0]]), np.zeros(1))
        (_, t), _, _ = dataio.minmax_fit_apply(train, [test])
        assert t.X[0, 0] == pytest.approx(1.2)

    def test_target_left_alone_by_default(self, rng):
        ds = Dataset(rng.normal(size=(4, 2)), np.array([3.0, 5.0, 4.0, 9.0]))
        (out,), _, _ = dataio.minmax_fit_apply(ds)
        np.testing.assert_array_equal(out.y, ds.y)
        (out,), _, yp = dataio.minmax_fit_apply(ds, normalize_target=True)
        np.testing.assert_allclose(out.y, [0, 1 / 3, 1 / 6, 1])
        np.testing.assert_allclose(yp.invert(out.y[:, None])[:, 0], ds.y)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 30), d=st.integers(1, 5))
    def test_idempotent_and_round_trip(self, seed, n, d):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, d)) * 10.0 ** rng.uniform(-3, 3, size=d)
        ds = Dataset(X, np.zeros(n))
        (once,), xp, _ = dataio.minmax_fit_apply(ds)
        (twice,), _, _ = dataio.minmax_fit_apply(once)
        np.testing.assert_allclose(twice.X, once.X, atol=1e-15)
        np.testing.assert_allclose(xp.invert(once.X), X, rtol=1e-12, atol=1e-12 * np.abs(X).max())

    def test_params_json(self):
        p = dataio.NormParams([0.0, 1.0], [2.0, 3.0])
        q = dataio.NormParams.from_json(json.loads(json.dumps(p.to_json())))
        np.testing.assert_array_equal(q.lo, p.lo)
        np.testing.assert_array_equal(q.hi, p.hi)

    def test_min_above_max_rejected(self):
        with pytest.raises(ParameterError):
            dataio.NormParams([1.0], [0.0])


class TestSplit:
    def _ds(self, n):
        return Dataset(np.arange(n, dtype=float)[:, None], np.arange(n, dtype=float))

    def test_small_remainder_to_train(self):
        tr, va, te = dataio.split(self._ds(10), SplitSpec())
        assert (tr.n, va.n, te.n) == (8, 1, 1)

    def test_hundred(self):
        assert dataio.split_sizes(100, SplitSpec()) == (70, 15, 15)

    def test_deterministic(self):
        a = dataio.split(self._ds(50), SplitSpec(seed=3))
        b = dataio.split(self._ds(50), SplitSpec(seed=3))
        for p, q in zip(a, b):
            np.testing.assert_array_equal(p.y, q.y)

    @pytest.mark.parametrize("fr", [(0.7, 0.2, 0.2), (0.5, 0.5, 0.0), (1.0, -0.5, 0.5)])
    def test_bad_fractions(self, fr):
        with pytest.raises(ParameterError):
            SplitSpec(*fr)

    def test_too_few_rows(self):
        with pytest.raises(ShapeError):
            dataio.split(self._ds(2), SplitSpec())

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(3, 300), seed=st.integers(0, 10**6))
    def test_disjoint_exhaustive(self, n, seed):
        parts = dataio.split_indices(n, SplitSpec(seed=seed))
        allidx = np.concatenate(parts)
        assert sorted(allidx.tolist()) == list(range(n))


class TestFeatureGroups:
    def test_twitter_widths(self):
        spec = dataio.TWITTER_GROUPS
        parts = dataio.partition_features(Dataset(np.zeros((2, 77)), np.zeros(2)), spec)
        assert len(parts) == 11
        assert all(p.d == 7 for p in parts)
        assert spec.groups[8] == tuple(range(57, 64))

    def test_year_widths(self):
        parts = dataio.partition_features(Dataset(np.zeros((2, 90)), np.zeros(2)), dataio.YEAR_GROUPS)
        assert tuple(p.d for p in parts) == (12, 13, 13, 13, 13, 13, 13)

    def test_singletons(self):
        ds = Dataset(np.array([[1.0, 2.0]]), np.array([0.0]))
        a, b = dataio.partition_features(ds, FeatureGroupSpec(((1,), (2,))))
        assert a.X[0, 0] == 1.0 and b.X[0, 0] == 2.0

    @pytest.mark.parametrize(
        "groups, d",
        [(((1, 2), (2, 3)), 3), (((1,), (4,)), 3), (((1,),), 2), (((0, 1),), 1)],
    )
    def test_invalid(self, groups, d):
        with pytest.raises(SpecError):
            FeatureGroupSpec(groups).validate(d)

    def test_json_round_trip(self, tmp_path):
        spec = FeatureGroupSpec(((3, 1), (2,)), ("odd", "even"))
        p = tmp_path / "g.json"
        p.write_text(json.dumps(spec.to_json()))
        assert FeatureGroupSpec.from_json(str(p)) == spec

    @settings(max_examples=40, deadline=None)
    @given(st.data())
    def test_reassembly(self, data):
        d = data.draw(st.integers(1, 12))
        perm = data.draw(st.permutations(range(1, d + 1)))
        cuts = sorted(data.draw(st.sets(st.integers(1, d - 1), max_size=d - 1))) if d > 1 else []
        bounds = [0, *cuts, d]
        groups = tuple(tuple(perm[a:b]) for a, b in zip(bounds, bounds[1:]))
        spec = FeatureGroupSpec(groups)
        X = np.arange(3 * d, dtype=float).reshape(3, d)
        parts = dataio.partition_features(Dataset(X, np.zeros(3)), spec)
        back = np.empty_like(X)
        for p, cols in zip(parts, spec.column_slices()):
            back[:, cols] = p.X
        np.testing.assert_array_equal(back, X)


class TestSynth:
    def test_origin(self):
        ds = dataio.synth_dataset([0.0])
        assert ds.X[0, 1] == 0.0 and ds.y[0] == 1.0

    def test_half_pi(self):
        ds = dataio.synth_dataset([np.pi / 2])
        assert ds.X[0, 1] == pytest.approx(1.0)
        assert ds.y[0] == pytest.approx(np.cos(2.0) / np.exp(np.pi / 2))
        assert ds.y[0] == pytest.approx(-0.08651, abs=5e-6)

    def test_generate(self):
        ds = dataio.synth_generate(5000, seed=1)
        assert ds.n == 5000 and ds.column_names == ("x1", "x2")
        assert ds.X[:, 0].min() >= -5 and ds.X[:, 0].max() <= 5
        np.testing.assert_allclose(ds.X[:, 1], np.sin(ds.X[:, 0]))

    def test_bad_range(self):
        with pytest.raises(ParameterError):
            dataio.synth_generate(3, 1.0, 1.0)

    def test_surrogate_shape(self):
        ds = dataio.grouped_surrogate(dataio.YEAR_GROUPS, 40, seed=2)
        assert ds.X.shape == (40, 90)
        again = dataio.grouped_surrogate(dataio.YEAR_GROUPS, 40, seed=2)
        np.testing.assert_array_equal(ds.X, again.X)
