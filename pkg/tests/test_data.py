import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from neurallinear import data as D
from neurallinear.errors import ConfigError, MissingValue, ParseError


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadCsv:
    def test_three_rows(self, tmp_path):
        ds = D.load_csv(write(tmp_path, "1,2\n3,4\n5,6\n"), {"target_col": 1})
        np.testing.assert_array_equal(ds.x, [[1], [3], [5]])
        np.testing.assert_array_equal(ds.y, [2, 4, 6])

    def test_header_and_target_in_middle(self, tmp_path):
        ds = D.load_csv(write(tmp_path, "a,t,b\n1,9,2\n3,8,4\n"), {"target_col": 1, "has_header": True})
        assert ds.feature_names == ("a", "b")
        np.testing.assert_array_equal(ds.x, [[1, 2], [3, 4]])
        np.testing.assert_array_equal(ds.y, [9, 8])

    def test_non_numeric_cell_located(self, tmp_path):
        with pytest.raises(ParseError) as info:
            D.load_csv(write(tmp_path, "1,2\n3,x\n"), {"target_col": 1})
        assert (info.value.row, info.value.col) == (2, 2)
        assert "row 2" in str(info.value)

    def test_missing_value(self, tmp_path):
        with pytest.raises(MissingValue):
            D.load_csv(write(tmp_path, "1,2\n,4\n"), {"target_col": 1})

    def test_ragged_row(self, tmp_path):
        with pytest.raises(ParseError):
            D.load_csv(write(tmp_path, "1,2\n3\n"), {"target_col": 1})

    def test_target_out_of_range(self, tmp_path):
        with pytest.raises(ConfigError):
            D.load_csv(write(tmp_path, "1,2\n3,4\n"), {"target_col": 2})

    def test_manifest_resolves_relative_path(self, tmp_path):
        write(tmp_path, "1,2\n3,4\n")
        (tmp_path / "m.json").write_text(json.dumps({"name": "m", "path": "d.csv", "target_col": 0}))
        ds, manifest = D.load_dataset(tmp_path / "m.json")
        assert manifest.n_splits == 20
        np.testing.assert_array_equal(ds.y, [1, 3])

    def test_manifest_lookup_through_env(self, tmp_path, monkeypatch):
        write(tmp_path, "1,2\n3,4\n")
        (tmp_path / "tiny.json").write_text(json.dumps({"name": "tiny", "path": "d.csv", "target_col": 1, "n_splits": 5}))
        monkeypatch.setenv("NLB_DATA_DIR", str(tmp_path))
        ds, manifest = D.load_dataset("tiny")
        assert manifest.n_splits == 5 and ds.n == 2

    def test_unknown_dataset(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NLB_DATA_DIR", str(tmp_path))
        with pytest.raises(ConfigError):
            D.load_dataset("yacht")

    def test_manifest_missing_fields(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"name": "m"}))
        with pytest.raises(ConfigError):
            D.Manifest.load(tmp_path / "m.json")


class TestStandardizer:
    def test_two_values(self):
        s = D.Standardizer.fit(np.array([[2.0], [4.0]]), np.array([0.0, 1.0]))
        assert s.x_mean[0] == 3.0 and s.x_std[0] == 1.0
        np.testing.assert_array_equal(s.apply_x([[2.0], [4.0]])[:, 0], [-1.0, 1.0])

    def test_constant_column_unchanged_scale(self):
        s = D.Standardizer.fit(np.array([[5.0, 1.0], [5.0, 2.0]]), np.array([1.0, 1.0]))
        assert s.x_std[0] == 1.0 and s.y_std == 1.0

    @given(st.integers(2, 30), st.integers(1, 4), st.integers(0, 10_000))
    def test_round_trip(self, n, d, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(3.0, 5.0, size=(n, d))
        y = rng.normal(-2.0, 7.0, size=n)
        s = D.Standardizer.fit(x, y)
        np.testing.assert_allclose(s.unapply_x(s.apply_x(x)), x, atol=1e-12, rtol=1e-12)
        np.testing.assert_allclose(s.unapply_y(s.apply_y(y)), y, atol=1e-12, rtol=1e-12)

    def test_train_only_statistics(self, rng):
        x = rng.normal(size=(30, 3))
        y = rng.normal(size=30)
        train, test = np.arange(20), np.arange(20, 30)
        s1 = D.Standardizer.fit(x[train], y[train])
        perm = np.r_[train, rng.permutation(test)]
        s2 = D.Standardizer.fit(x[perm][:20], y[perm][:20])
        np.testing.assert_array_equal(s1.x_mean, s2.x_mean)
        np.testing.assert_array_equal(s1.x_std, s2.x_std)
        assert (s1.y_mean, s1.y_std) == (s2.y_mean, s2.y_std)

    def test_log_density_correction(self):
        s = D.Standardizer(np.zeros(1), np.ones(1), 0.0, 2.0)
        assert s.log_density_to_original(0.0) == pytest.approx(-math.log(2.0))


class TestStandardSplits:
    def test_sizes(self):
        for sp in D.standard_splits(100):
            assert len(sp.test) == 10 and len(sp.train) == 90

    def test_replay_and_variation(self):
        a = D.standard_splits(50, 3, seed=4)
        b = D.standard_splits(50, 3, seed=4)
        for s, t in zip(a, b):
            np.testing.assert_array_equal(s.test, t.test)
        assert not np.array_equal(a[0].test, a[1].test)

    def test_rank_observation_count(self):
        assert sum(len(D.standard_splits(30)) for _ in range(9)) == 180

    @given(st.integers(10, 300), st.integers(1, 5), st.integers(0, 100))
    def test_disjoint_cover(self, n, k, seed):
        for sp in D.standard_splits(n, k, seed=seed):
            assert not set(sp.train) & set(sp.test)
            assert sorted(np.r_[sp.train, sp.test]) == list(range(n))
            assert len(sp.train) and len(sp.test)

    def test_too_small(self):
        with pytest.raises(ValueError):
            D.standard_splits(9)


class TestGapSplits:
    def test_one_dimension(self):
        x = np.arange(1.0, 10.0)
        (sp,) = D.gap_splits(x)
        assert sorted(x[sp.test]) == [4.0, 5.0, 6.0]

    def test_one_split_per_dimension(self, rng):
        assert len(D.gap_splits(rng.normal(size=(20, 4)))) == 4

    def test_deterministic(self, rng):
        x = rng.normal(size=(25, 2))
        for a, b in zip(D.gap_splits(x), D.gap_splits(x)):
            np.testing.assert_array_equal(a.test, b.test)

    @given(st.integers(3, 80), st.integers(1, 4), st.integers(0, 1000))
    def test_train_outside_test_interval(self, n, d, seed):
        x = np.random.default_rng(seed).normal(size=(n, d))
        for j, sp in enumerate(D.gap_splits(x)):
            assert sp.gap_dim == j
            assert not set(sp.train) & set(sp.test)
            assert sorted(np.r_[sp.train, sp.test]) == list(range(n))
            lo, hi = x[sp.test, j].min(), x[sp.test, j].max()
            inside = (x[sp.train, j] > lo) & (x[sp.train, j] < hi)
            assert not inside.any()


class TestToy:
    def test_shapes_and_support(self):
        train, test = D.toy_dataset(0)
        assert train.n == 100 and test.n == 100
        for ds in (train, test):
            assert np.all((np.abs(ds.x) >= 2) & (np.abs(ds.x) <= 4))

    def test_noise_level(self):
        train, _ = D.toy_dataset(0, n_train=10_000, n_test=1)
        resid = train.y - train.x[:, 0] ** 3
        assert abs(resid.mean()) <= 0.1
        assert resid.std() == pytest.approx(3.0, rel=0.03)

    def test_equal_mass_per_side(self):
        train, _ = D.toy_dataset(1, n_train=10_000, n_test=1)
        assert abs(np.mean(train.x > 0) - 0.5) < 0.02

    def test_grid(self):
        g = D.toy_grid()
        assert g.size == 241 and g[0] == -6.0 and g[-1] == 6.0
        np.testing.assert_allclose(np.diff(g), 0.05)


def test_vendored_boston_loads():
    ds, manifest = D.load_dataset("boston")
    assert ds.x.shape == (506, 13)
    assert manifest.n_splits == 20
