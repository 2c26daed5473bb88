import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msmpolicy import (
    clip_simplex,
    load_dataset_csv,
    make_folds,
    mix_seed,
    validate_dataset,
    write_dataset_csv,
)
from msmpolicy.errors import (
    ArmOutOfRangeError,
    BadFoldCountError,
    DataError,
    EmptyDataError,
    NonFiniteError,
    RaggedRowsError,
)


class TestValidateDataset:
    def test_passthrough(self):
        rows = [(1.0, 0, 0.5, -0.5), (2.0, 1, 1.0, 1.0), (0.0, 0, -1.0, 2.0)]
        ds = validate_dataset(rows, 2)
        assert (ds.n, ds.d, ds.n_arms) == (3, 2, 2)
        assert ds.y[1] == 2.0 and ds.a[1] == 1

    def test_nan_outcome_rejected(self):
        with pytest.raises(NonFiniteError):
            validate_dataset([(float("nan"), 0, 1.0)], 2)

    def test_inf_covariate_rejected(self):
        with pytest.raises(NonFiniteError):
            validate_dataset([(1.0, 0, float("inf"))], 2)

    def test_arm_out_of_range(self):
        with pytest.raises(ArmOutOfRangeError):
            validate_dataset([(1.0, 2, 0.0)], 2)

    def test_negative_arm(self):
        with pytest.raises(ArmOutOfRangeError):
            validate_dataset([(1.0, -1, 0.0)], 2)

    def test_empty(self):
        with pytest.raises(EmptyDataError):
            validate_dataset([], 2)

    def test_ragged(self):
        with pytest.raises(RaggedRowsError):
            validate_dataset([(1.0, 0, 1.0), (1.0, 1, 1.0, 2.0)], 2)

    def test_arrays_read_only(self):
        ds = validate_dataset([(1.0, 0, 0.0), (2.0, 1, 1.0)], 2)
        with pytest.raises(ValueError):
            ds.y[0] = 5.0


class TestFolds:
    def test_balanced_even(self):
        fa = make_folds(10, 5, seed=1)
        sizes = np.bincount(fa.fold_of)
        assert sizes.tolist() == [2, 2, 2, 2, 2]

    def test_balanced_uneven(self):
        fa = make_folds(7, 3, seed=1)
        assert sorted(np.bincount(fa.fold_of).tolist()) == [2, 2, 3]

    def test_deterministic(self):
        a = make_folds(101, 7, seed=9).fold_of
        b = make_folds(101, 7, seed=9).fold_of
        assert np.array_equal(a, b)

    def test_seed_changes_assignment(self):
        a = make_folds(101, 7, seed=9).fold_of
        b = make_folds(101, 7, seed=10).fold_of
        assert not np.array_equal(a, b)

    @pytest.mark.parametrize("n,k", [(5, 1), (5, 6), (3, 0)])
    def test_bad_fold_count(self, n, k):
        with pytest.raises(BadFoldCountError):
            make_folds(n, k, seed=0)

    @given(n=st.integers(2, 200), k=st.integers(2, 12), seed=st.integers(0, 2**32))
    @settings(max_examples=60, deadline=None)
    def test_partition_property(self, n, k, seed):
        if k > n:
            return
        fa = make_folds(n, k, seed)
        sizes = np.bincount(fa.fold_of, minlength=k)
        assert sizes.sum() == n
        assert sizes.max() - sizes.min() <= 1
        # every unit in exactly one fold is implicit: fold_of is total
        assert ((fa.fold_of >= 0) & (fa.fold_of < k)).all()


class TestClipSimplex:
    def test_binary_clip(self):
        out = clip_simplex(np.array([[0.999, 0.001]]), 0.01)
        assert np.allclose(out, [[0.99, 0.01]])

    def test_sum_and_box(self):
        rng = np.random.default_rng(0)
        p = rng.random((200, 4))
        out = clip_simplex(p, 0.05)
        assert np.all(out >= 0.05 - 1e-12) and np.all(out <= 0.95 + 1e-12)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_interior_untouched(self):
        p = np.array([[0.3, 0.7]])
        assert np.allclose(clip_simplex(p, 0.01), p, atol=1e-12)


class TestCsvRoundTrip:
    def test_round_trip(self, tmp_path, small_dataset):
        path = tmp_path / "d.csv"
        write_dataset_csv(path, small_dataset)
        back = load_dataset_csv(path, small_dataset.n_arms)
        assert np.array_equal(back.y, small_dataset.y)
        assert np.array_equal(back.a, small_dataset.a)
        assert np.array_equal(back.X, small_dataset.X)

    def test_rejects_nonschema_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,a,x1,foo\n1.0,0,2.0,3.0\n")
        with pytest.raises(DataError):
            load_dataset_csv(path, 2)

    def test_infers_arm_count(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,x1\n1.0,0,0.1\n2.0,2,0.2\n0.5,1,0.3\n")
        assert load_dataset_csv(path).n_arms == 3


def test_mix_seed_spreads():
    vals = {mix_seed(1, i) for i in range(1000)}
    assert len(vals) == 1000
    assert mix_seed(1, 2, 3) != mix_seed(1, 3, 2)
