"""Grouped dataset bookkeeping, standardization, and CSV loading."""

import numpy as np
import pytest

from glmmfactor import (BINOMIAL, GAUSSIAN, DataValidationError,
                        GroupedDataset, ThetaState, destandardize_theta,
                        ensure_valid, load_csv, standardize, validate_dataset)


def _toy(seed=0, n=30, p=3, k=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = (rng.random(n) < 0.5).astype(float)
    group = rng.choice([f"g{i}" for i in range(k)], size=n)
    return GroupedDataset(y=y, X=X, group=group)


class TestGroupedDataset:
    def test_rows_sorted_by_group(self):
        data = _toy()
        assert np.all(np.diff(data.group_codes) >= 0)

    def test_group_slices_partition_rows(self):
        data = _toy()
        total = 0
        for k in range(data.n_groups):
            sl = data.group_slice(k)
            assert np.all(data.group_codes[sl] == k)
            total += sl.stop - sl.start
        assert total == data.n_obs

    def test_sorting_keeps_rows_paired(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(20, 2))
        y = np.arange(20.0)
        group = rng.integers(0, 3, 20)
        data = GroupedDataset(y=y, X=X, group=group)
        # each y value still sits next to its original X row
        order = np.argsort(np.argsort(group, kind="stable"), kind="stable")
        for i in range(20):
            j = int(data.y[i])
            np.testing.assert_array_equal(data.X[i], X[j])

    def test_default_z_columns_include_intercept(self):
        data = _toy(p=4)
        assert data.z_columns == (0, 1, 2, 3, 4)
        assert data.q == 5

    def test_z_matrix_layout(self):
        data = _toy(p=2)
        Z = data.z_matrix()
        np.testing.assert_array_equal(Z[:, 0], np.ones(data.n_obs))
        np.testing.assert_array_equal(Z[:, 1], data.X[:, 0])
        np.testing.assert_array_equal(Z[:, 2], data.X[:, 1])

    def test_with_z_columns(self):
        data = _toy(p=3).with_z_columns((0, 2))
        assert data.q == 2
        np.testing.assert_array_equal(data.z_matrix()[:, 1], data.X[:, 1])


class TestStandardize:
    def test_columns_centered_unit_rms(self):
        rng = np.random.default_rng(1)
        X = rng.normal(3.0, 2.5, size=(200, 4))
        Xs, info = standardize(X)
        np.testing.assert_allclose(Xs.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(np.mean(Xs**2, axis=0), 1.0, rtol=1e-12)

    def test_transform_invertible(self):
        rng = np.random.default_rng(2)
        X = rng.normal(-1.0, 0.5, size=(50, 3))
        Xs, info = standardize(X)
        np.testing.assert_allclose(Xs * info.scales + info.means, X,
                                   atol=1e-12)

    def test_constant_column_rejected(self):
        X = np.column_stack([np.ones(10), np.arange(10.0)])
        with pytest.raises(ValueError):
            standardize(X)


class TestDestandardize:
    def test_linear_predictor_preserved(self):
        """Back-transformed coefficients give the same eta on raw X."""
        rng = np.random.default_rng(4)
        n, p, r = 40, 5, 2
        X = rng.normal(2.0, 3.0, size=(n, p))
        Xs, info = standardize(X)
        z_columns = (0, 1, 3)
        beta = rng.normal(size=p + 1)
        B = rng.normal(size=(len(z_columns), r))
        theta = ThetaState(beta=beta, B=B, tau=1.0)
        raw = destandardize_theta(theta, info, z_columns)

        alpha = rng.normal(size=r)
        for i in range(n):
            xs1 = np.concatenate([[1.0], Xs[i]])
            x1 = np.concatenate([[1.0], X[i]])
            zs = np.array([1.0, Xs[i, 0], Xs[i, 2]])
            z = np.array([1.0, X[i, 0], X[i, 2]])
            eta_std = xs1 @ beta + zs @ (B @ alpha)
            eta_raw = x1 @ raw.beta + z @ (raw.B @ alpha)
            assert eta_raw == pytest.approx(eta_std, rel=1e-10, abs=1e-10)

    def test_exact_zeros_preserved(self):
        rng = np.random.default_rng(5)
        X = rng.normal(1.0, 2.0, size=(30, 4))
        _, info = standardize(X)
        beta = np.array([0.5, 1.0, 0.0, -2.0, 0.0])
        B = np.array([[1.0, 0.5], [0.0, 0.0], [0.3, 0.0]])
        theta = ThetaState(beta=beta, B=B, tau=1.0)
        raw = destandardize_theta(theta, info, (0, 1, 2))
        assert raw.beta[2] == 0.0 and raw.beta[4] == 0.0
        assert np.all(raw.B[1] == 0.0)


class TestValidation:
    def test_valid_dataset_passes(self):
        summary = validate_dataset(_toy(), BINOMIAL)
        assert summary.ok
        assert summary.n_groups == 3

    def test_collects_multiple_violations(self):
        data = GroupedDataset(y=np.array([0.0, 2.0]),
                              X=np.array([[1.0], [np.inf]]),
                              group=np.array([0, 1]))
        summary = validate_dataset(data, BINOMIAL)
        assert not summary.ok
        assert len(summary.violations) >= 2

    def test_ensure_valid_raises_with_details(self):
        data = GroupedDataset(y=np.array([0.0, 3.0]),
                              X=np.array([[1.0], [2.0]]),
                              group=np.array([0, 1]))
        with pytest.raises(DataValidationError) as err:
            ensure_valid(data, BINOMIAL)
        assert err.value.violations

    def test_gaussian_accepts_reals(self):
        data = GroupedDataset(y=np.array([-1.3, 2.2]),
                              X=np.array([[1.0], [2.0]]),
                              group=np.array([0, 1]))
        assert validate_dataset(data, GAUSSIAN).ok


class TestLoadCsv:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,group,a,b\n1,u,0.5,2.0\n0,v,-1.0,0.25\n"
                        "1,u,3.5,-2.0\n")
        data = load_csv(path, response="y", group="group")
        assert data.n_obs == 3
        assert data.n_predictors == 2
        assert set(data.group_labels) == {"u", "v"}

    def test_named_z_columns(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,group,a,b\n1,u,0.5,2.0\n0,v,-1.0,0.25\n")
        data = load_csv(path, response="y", group="group",
                        z_columns=["(intercept)", "b"])
        assert data.z_columns == (0, 2)

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,g\n1,u\n")
        with pytest.raises(ValueError):
            load_csv(path, response="y", group="group")
