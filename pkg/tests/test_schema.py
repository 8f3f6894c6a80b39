import numpy as np
import pandas as pd
import pytest

from longmed.dataset import LongDataset, VariableSchema, load_dataset, validate_frame
from longmed.exceptions import (
    DataError,
    MissingColumnError,
    MissingValueError,
    NonBinaryExposureError,
    OutOfRangeCategoryError,
)

from conftest import small_frame, small_schema_dict


def schema():
    return VariableSchema.from_dict(small_schema_dict())


def test_schema_dict_roundtrip():
    s = schema()
    assert VariableSchema.from_dict(s.to_dict()) == s


def test_schema_missing_key_is_data_error():
    bad = small_schema_dict()
    del bad["mediators"]
    with pytest.raises(DataError):
        VariableSchema.from_dict(bad)


def test_schema_shape_validation():
    bad = small_schema_dict()
    bad["mediator_levels"] = [2]
    with pytest.raises(ValueError):
        VariableSchema.from_dict(bad)


def test_confounders_per_time():
    s = schema()
    assert s.confounders_at(0) == ()
    assert s.confounders_at(1) == ("L1",)


def test_declared_columns_cover_everything():
    cols = schema().declared_columns()
    for c in ("id", "A", "L0", "L1", "M0", "M1", "Y0", "Y1"):
        assert c in cols


def test_valid_frame_passes():
    report = validate_frame(small_frame(), schema())
    assert report.ok
    assert report.errors == []


def test_missing_column_reported():
    report = validate_frame(small_frame().drop(columns=["M1"]), schema())
    assert not report.ok
    assert report.errors[0][0] is MissingColumnError


def test_duplicate_ids_reported():
    frame = small_frame()
    frame.loc[1, "id"] = 1
    report = validate_frame(frame, schema())
    assert not report.ok


def test_missing_values_reported():
    frame = small_frame()
    frame.loc[2, "Y0"] = np.nan
    report = validate_frame(frame, schema())
    assert any(kind is MissingValueError for kind, _ in report.errors)


def test_nonbinary_exposure_reported():
    frame = small_frame()
    frame.loc[0, "A"] = 2
    report = validate_frame(frame, schema())
    assert any(kind is NonBinaryExposureError for kind, _ in report.errors)


def test_out_of_range_mediator_reported():
    frame = small_frame()
    frame.loc[0, "M0"] = 5
    report = validate_frame(frame, schema())
    assert any(kind is OutOfRangeCategoryError for kind, _ in report.errors)


def test_out_of_range_binary_outcome_reported():
    frame = small_frame()
    frame.loc[0, "Y1"] = 3
    report = validate_frame(frame, schema())
    assert any(kind is OutOfRangeCategoryError for kind, _ in report.errors)


def test_continuous_outcome_skips_binary_check():
    spec = small_schema_dict()
    spec["outcome_type"] = "continuous"
    frame = small_frame()
    frame["Y1"] = frame["Y1"] + 0.5
    report = validate_frame(frame, VariableSchema.from_dict(spec))
    assert report.ok


def test_empty_mediator_category_reported():
    spec = small_schema_dict()
    spec["mediator_levels"] = [3, 2]
    report = validate_frame(small_frame(), VariableSchema.from_dict(spec))
    assert not report.ok


def test_strict_dataset_raises_on_error():
    frame = small_frame()
    frame.loc[0, "A"] = 7
    with pytest.raises(NonBinaryExposureError):
        LongDataset.from_frame(frame, schema(), strict=True)


def test_lenient_dataset_keeps_report():
    frame = small_frame()
    frame.loc[0, "A"] = 7
    ds = LongDataset.from_frame(frame, schema(), strict=False)
    assert not ds.report.ok


def test_dataset_accessors():
    ds = LongDataset.from_frame(small_frame(), schema())
    assert ds.n_subjects == 6
    np.testing.assert_array_equal(ds.exposure, [0, 1, 0, 1, 1, 0])
    np.testing.assert_array_equal(ds.mediator(1), small_frame()["M1"])
    np.testing.assert_array_equal(ds.outcome(0), small_frame()["Y0"])


def test_csv_roundtrip(tmp_path):
    path = tmp_path / "d.csv"
    LongDataset.from_frame(small_frame(), schema()).to_csv(path)
    ds = load_dataset(path, schema())
    assert ds.n_subjects == 6
    np.testing.assert_array_equal(ds.exposure, [0, 1, 0, 1, 1, 0])


def test_positivity_screen_warns_on_degenerate_stratum():
    frame = small_frame()
    frame["A"] = frame["L0"]
    report = validate_frame(frame, schema())
    assert report.warnings
