import numpy as np
import pandas as pd
import pytest

from longmed.dataset import LongDataset, VariableSchema
from longmed.exceptions import WeightMissingError
from longmed.expand import (
    CANONICAL_COLUMNS,
    expand_end_of_study,
    expand_per_time,
    expanded_to_csv,
    interleaved_weights,
    interleaved_weights_final,
)
from longmed.weights import WeightTable, compute_weights

from conftest import small_frame, small_schema_dict


@pytest.fixture()
def small_ds():
    return LongDataset.from_frame(
        small_frame(), VariableSchema.from_dict(small_schema_dict())
    )


@pytest.fixture()
def hand_weights(small_ds):
    n = small_ds.n_subjects
    w_m = np.ones((n, 2, 2))
    rows = np.arange(n)
    swapped = 1 - small_ds.exposure
    w_m[rows, 0, swapped] = 1.0 + 0.1 * (rows + 1)
    w_m[rows, 1, swapped] = 1.0 + 0.2 * (rows + 1)
    return WeightTable(
        ids=small_ds.ids,
        exposure=small_ds.exposure,
        times=(0, 1),
        w_a=1.0 + 0.01 * rows,
        w_m=w_m,
    )


def test_per_time_layout(small_ds, hand_weights):
    frame = expand_per_time(small_ds, hand_weights)
    n = small_ds.n_subjects
    assert list(frame.columns) == list(CANONICAL_COLUMNS)
    assert len(frame) == 2 * n * 2
    np.testing.assert_array_equal(frame["id"], np.repeat(small_ds.ids, 4))
    np.testing.assert_array_equal(frame["a"], frame["A"])
    np.testing.assert_array_equal(frame["t"], np.tile([0, 0, 1, 1], n))
    own = frame.iloc[0::2]
    swapped = frame.iloc[1::2]
    np.testing.assert_array_equal(own["a_star"], own["A"])
    np.testing.assert_array_equal(swapped["a_star"], 1 - swapped["A"])


def test_per_time_values_align(small_ds, hand_weights):
    frame = expand_per_time(small_ds, hand_weights)
    total = hand_weights.w_total
    for i in range(small_ds.n_subjects):
        block = frame.iloc[4 * i : 4 * (i + 1)]
        A_i = small_ds.exposure[i]
        for r, (t, j) in enumerate([(0, A_i), (0, 1 - A_i), (1, A_i), (1, 1 - A_i)]):
            row = block.iloc[r]
            assert row["w"] == total[i, t, j]
            assert row["Y"] == small_ds.outcome(t)[i]
            assert row["a_star"] == j


def test_interleaved_weights_match_frame_order(small_ds, hand_weights):
    frame = expand_per_time(small_ds, hand_weights)
    w = interleaved_weights(hand_weights.final(), small_ds.exposure)
    np.testing.assert_array_equal(frame["w"].to_numpy(), w)
    final = expand_end_of_study(small_ds, hand_weights)
    wf = interleaved_weights_final(hand_weights.final(), small_ds.exposure)
    np.testing.assert_array_equal(final["w"].to_numpy(), wf)


def test_end_of_study_layout(small_ds, hand_weights):
    frame = expand_end_of_study(small_ds, hand_weights)
    n = small_ds.n_subjects
    assert len(frame) == 2 * n
    assert (frame["t"] == 1).all()
    np.testing.assert_array_equal(frame["Y"], np.repeat(small_ds.outcome(1), 2))
    total = hand_weights.w_total
    rows = np.arange(n)
    np.testing.assert_array_equal(
        frame["w"].to_numpy()[0::2], total[rows, 1, small_ds.exposure]
    )
    np.testing.assert_array_equal(
        frame["w"].to_numpy()[1::2], total[rows, 1, 1 - small_ds.exposure]
    )


def test_truncated_weights_flow_through(small_ds, hand_weights):
    trunc = hand_weights.truncate(0.8)
    frame = expand_per_time(small_ds, trunc)
    np.testing.assert_array_equal(
        frame["w"].to_numpy(),
        interleaved_weights(trunc.w_trunc, small_ds.exposure),
    )


def test_schema_time_codes(small_ds, hand_weights):
    spec = small_schema_dict()
    spec["times"] = [3, 7]
    ds = LongDataset.from_frame(small_frame(), VariableSchema.from_dict(spec))
    wt = WeightTable(
        ids=ds.ids,
        exposure=ds.exposure,
        times=(3, 7),
        w_a=hand_weights.w_a,
        w_m=hand_weights.w_m,
    )
    by_index = expand_per_time(ds, wt, time_codes="index")
    np.testing.assert_array_equal(np.unique(by_index["t"]), [0, 1])
    by_schema = expand_per_time(ds, wt, time_codes="schema")
    np.testing.assert_array_equal(np.unique(by_schema["t"]), [3, 7])
    with pytest.raises(ValueError):
        expand_per_time(ds, wt, time_codes="calendar")


def test_extra_columns_ride_along(small_ds, hand_weights):
    frame = expand_per_time(small_ds, hand_weights, extra_cols=("L0",))
    assert list(frame.columns) == list(CANONICAL_COLUMNS) + ["L0"]
    np.testing.assert_array_equal(
        frame["L0"], np.repeat(small_ds.frame["L0"].to_numpy(), 4)
    )


def test_weight_table_mismatches_raise(small_ds, hand_weights):
    short = WeightTable(
        ids=hand_weights.ids[:-1],
        exposure=hand_weights.exposure[:-1],
        times=(0, 1),
        w_a=hand_weights.w_a[:-1],
        w_m=hand_weights.w_m[:-1],
    )
    with pytest.raises(WeightMissingError):
        expand_per_time(small_ds, short)

    relabeled = WeightTable(
        ids=hand_weights.ids + 100,
        exposure=hand_weights.exposure,
        times=(0, 1),
        w_a=hand_weights.w_a,
        w_m=hand_weights.w_m,
    )
    with pytest.raises(WeightMissingError):
        expand_per_time(small_ds, relabeled)

    one_time = WeightTable(
        ids=hand_weights.ids,
        exposure=hand_weights.exposure,
        times=(0,),
        w_a=hand_weights.w_a,
        w_m=hand_weights.w_m[:, :1, :],
    )
    with pytest.raises(WeightMissingError):
        expand_per_time(small_ds, one_time)

    bad = hand_weights.w_m.copy()
    bad[0, 0, 0] = np.inf
    nonfinite = WeightTable(
        ids=hand_weights.ids,
        exposure=hand_weights.exposure,
        times=(0, 1),
        w_a=hand_weights.w_a,
        w_m=bad,
    )
    with pytest.raises(WeightMissingError):
        expand_end_of_study(small_ds, nonfinite)


def test_rows_group_contiguously_by_id(t2_fit):
    frame = t2_fit.records_
    ids = frame["id"].to_numpy()
    changes = np.flatnonzero(np.diff(ids) != 0) + 1
    assert len(np.unique(ids[np.concatenate([[0], changes])])) == len(
        np.unique(ids)
    )
    assert (np.diff(ids) >= 0).all()


def test_expanded_csv_roundtrip(tmp_path, small_ds, hand_weights):
    frame = expand_per_time(small_ds, hand_weights, extra_cols=("L0",))
    path = tmp_path / "records.csv"
    expanded_to_csv(frame, path)
    back = pd.read_csv(path)
    assert list(back.columns) == list(CANONICAL_COLUMNS)
    np.testing.assert_allclose(back["w"], frame["w"], rtol=1e-15)
