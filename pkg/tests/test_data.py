import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simfed.data import (ClientDataset, FederatedDataset, LabeledPool,
                         gen_synthetic_classification, gen_toy_sine,
                         load_dataset_csv, partition_by_label, partition_iid,
                         save_dataset_csv, split_pool, toy_sine_truth)
from simfed.errors import ConfigError, ContractError, SchemaError


class TestToySine:
    def test_shapes_and_weights(self):
        fed = gen_toy_sine(50, 2, seed=0)
        assert fed.n_clients == 50
        assert fed.n_total == 100
        assert fed.d_in == 1
        assert all(c.n == 2 for c in fed.clients)
        # equal sizes -> equal weights summing to one
        assert np.allclose([c.weight for c in fed.clients], 1 / 50)

    def test_inputs_in_unit_interval(self):
        fed = gen_toy_sine(30, 4, seed=1)
        x, _ = fed.union_xy()
        assert np.all(np.abs(x) <= 1.0)

    def test_noiseless_matches_formula(self):
        # a_std = noise_std = 0 leaves y = a_mean * sin(2 pi x) exactly
        fed = gen_toy_sine(5, 3, a_mean=1.5, a_std=0.0, noise_std=0.0, seed=2)
        x, y = fed.union_xy()
        assert np.allclose(y, 1.5 * np.sin(2 * np.pi * x[:, 0]), atol=1e-12)

    def test_equispaced_design_is_the_grid(self):
        fed = gen_toy_sine(4, 2, x_design="equispaced", seed=7)
        x, _ = fed.union_xy()
        grid = -1.0 + 2.0 * (np.arange(8) + 0.5) / 8
        assert np.allclose(np.sort(x[:, 0]), grid)

    def test_seed_determinism(self):
        a = gen_toy_sine(10, 2, seed=5).union_xy()
        b = gen_toy_sine(10, 2, seed=5).union_xy()
        c = gen_toy_sine(10, 2, seed=6).union_xy()
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        assert not np.array_equal(a[1], c[1])

    def test_truth_known_points(self):
        assert toy_sine_truth(np.array([0.25]))[0] == pytest.approx(1.0)
        assert toy_sine_truth(np.array([0.0, 0.5, 1.0]), 2.0) == pytest.approx(
            [0.0, 0.0, 0.0], abs=1e-12)

    def test_rejects_bad_args(self):
        with pytest.raises(ConfigError):
            gen_toy_sine(0, 2)
        with pytest.raises(ConfigError):
            gen_toy_sine(5, 2, noise_std=-0.1)
        with pytest.raises(ConfigError):
            gen_toy_sine(5, 2, x_design="sobol")


class TestSyntheticClassification:
    def test_shapes_labels_norms(self):
        pool = gen_synthetic_classification(10, 20, 8, seed=0)
        assert pool.x.shape == (200, 8)
        assert pool.n == 200
        assert np.array_equal(np.unique(pool.y), np.arange(10))
        assert np.bincount(pool.y).tolist() == [20] * 10
        assert np.linalg.norm(pool.x, axis=1).max() <= 1.0 + 1e-12

    def test_determinism(self):
        a = gen_synthetic_classification(4, 10, 3, seed=9)
        b = gen_synthetic_classification(4, 10, 3, seed=9)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_rejects_bad_args(self):
        with pytest.raises(ConfigError):
            gen_synthetic_classification(1, 10, 3)
        with pytest.raises(ConfigError):
            gen_synthetic_classification(3, 10, 3, cluster_spread=0.0)


class TestSplitPool:
    def test_stratified_and_disjoint(self):
        pool = gen_synthetic_classification(5, 30, 4, seed=3)
        train, test = split_pool(pool, 0.2, seed=4)
        assert train.n + test.n == pool.n
        # every class contributes round(0.2 * 30) = 6 test points
        assert np.bincount(test.y, minlength=5).tolist() == [6] * 5
        joined = np.concatenate([train.x, test.x])
        assert np.array_equal(np.sort(joined, axis=0), np.sort(pool.x, axis=0))

    def test_every_class_on_both_sides(self):
        pool = gen_synthetic_classification(3, 4, 2, seed=5)
        train, test = split_pool(pool, 0.05, seed=6)
        assert set(np.unique(train.y)) == {0, 1, 2}
        assert set(np.unique(test.y)) == {0, 1, 2}

    def test_rejects_bad_fraction(self):
        pool = gen_synthetic_classification(3, 5, 2, seed=0)
        for bad in (0.0, 1.0, -0.2):
            with pytest.raises(ConfigError):
                split_pool(pool, bad)


class TestPartitionIid:
    def test_preserves_pool_and_balances(self):
        pool = gen_synthetic_classification(4, 25, 3, seed=1)
        fed = partition_iid(pool, 7, seed=2)
        assert fed.n_clients == 7
        assert fed.n_total == pool.n
        sizes = [c.n for c in fed.clients]
        assert max(sizes) - min(sizes) <= 1
        x, _ = fed.union_xy()
        assert np.array_equal(np.sort(x, axis=0), np.sort(pool.x, axis=0))

    def test_weights_proportional_to_size(self):
        pool = gen_synthetic_classification(3, 10, 2, seed=8)
        fed = partition_iid(pool, 4, seed=8)
        for c in fed.clients:
            assert c.weight == pytest.approx(c.n / pool.n)

    def test_rejects_too_many_clients(self):
        pool = gen_synthetic_classification(2, 3, 2, seed=0)
        with pytest.raises(ConfigError):
            partition_iid(pool, 7)


class TestPartitionByLabel:
    def test_label_support_bounded(self):
        pool = gen_synthetic_classification(10, 60, 5, seed=0)
        fed = partition_by_label(pool, 20, 2, seed=1)
        assert fed.n_clients == 20
        for c in fed.clients:
            assert np.unique(c.y).size <= 2

    def test_union_preserved(self):
        pool = gen_synthetic_classification(6, 40, 4, seed=2)
        fed = partition_by_label(pool, 10, 3, seed=3)
        assert fed.n_total == pool.n
        _, y = fed.union_xy()
        assert np.array_equal(np.sort(y), np.sort(pool.y))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 8), st.integers(1, 12), st.integers(1, 4), st.integers(0, 10))
    def test_support_property(self, n_classes, n_clients, noc, seed):
        noc = min(noc, n_classes)
        if n_clients * noc < n_classes:
            return  # infeasible by the documented precondition
        pool = gen_synthetic_classification(n_classes, 25, 3, seed=seed)
        fed = partition_by_label(pool, n_clients, noc, seed=seed)
        for c in fed.clients:
            assert np.unique(c.y).size <= noc

    def test_rejects_infeasible(self):
        pool = gen_synthetic_classification(10, 20, 3, seed=0)
        with pytest.raises(ConfigError):
            partition_by_label(pool, 4, 2, seed=0)  # 8 shards < 10 classes
        with pytest.raises(ConfigError):
            partition_by_label(pool, 5, 0, seed=0)
        with pytest.raises(ConfigError):
            partition_by_label(pool, 5, 11, seed=0)


class TestContracts:
    def test_client_dataset_validation(self):
        with pytest.raises(ContractError):
            ClientDataset(0, np.zeros((3, 1)), np.zeros(2), 1.0)
        with pytest.raises(ContractError):
            ClientDataset(0, np.zeros((0, 1)), np.zeros(0), 1.0)

    def test_federated_dataset_validation(self):
        good = ClientDataset(0, np.zeros((2, 1)), np.zeros(2), 1.0)
        with pytest.raises(ContractError):
            FederatedDataset(clients=())
        bad_id = ClientDataset(1, np.zeros((2, 1)), np.zeros(2), 1.0)
        with pytest.raises(ContractError):
            FederatedDataset(clients=(bad_id,))
        half = ClientDataset(0, np.zeros((2, 1)), np.zeros(2), 0.5)
        with pytest.raises(ContractError):
            FederatedDataset(clients=(half,))  # weights must sum to 1
        assert FederatedDataset(clients=(good,)).n_clients == 1

    def test_pool_validation(self):
        with pytest.raises(ContractError):
            LabeledPool(np.zeros((3, 2)), np.zeros(2, dtype=np.int64), 2)


class TestCsvRoundTrip:
    def test_regression_bit_for_bit(self, tmp_path, toy_small):
        path = tmp_path / "toy.csv"
        save_dataset_csv(toy_small, path)
        back = load_dataset_csv(path, task="regression")
        assert back.n_clients == toy_small.n_clients
        for a, b in zip(toy_small.clients, back.clients):
            assert np.array_equal(a.x, b.x)
            assert np.array_equal(a.y, b.y)
            assert a.weight == b.weight

    def test_classification_round_trip(self, tmp_path):
        pool = gen_synthetic_classification(3, 8, 2, seed=4)
        fed = partition_iid(pool, 4, seed=4)
        path = tmp_path / "cls.csv"
        save_dataset_csv(fed, path)
        back = load_dataset_csv(path, task="classification")
        assert back.n_classes == 3
        for a, b in zip(fed.clients, back.clients):
            assert np.array_equal(a.x, b.x)
            assert np.array_equal(a.y, b.y)

    def test_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("foo,bar\n1,2\n")
        with pytest.raises(SchemaError):
            load_dataset_csv(path)

    def test_rejects_ragged_row(self, tmp_path):
        path = tmp_path / "ragged.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["client_id", "y", "x_0"])
            w.writerow([0, 0.5, 0.1])
            w.writerow([0, 0.5])
        with pytest.raises(SchemaError):
            load_dataset_csv(path)

    def test_rejects_gap_in_client_ids(self, tmp_path):
        path = tmp_path / "gap.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["client_id", "y", "x_0"])
            w.writerow([0, 0.5, 0.1])
            w.writerow([2, 0.5, 0.2])
        with pytest.raises(SchemaError):
            load_dataset_csv(path)
