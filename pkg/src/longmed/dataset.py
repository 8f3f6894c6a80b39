"""Wide-format longitudinal data and its declared schema.

Data arrives with one row per subject: an id column, a binary baseline
exposure, baseline covariates, and one mediator and one outcome column per
observation time. The schema names those columns, fixes the ordered time
codes, and declares how many levels each categorical mediator has (levels are
coded ``0..K-1``, with 0 the reference).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .exceptions import (
    DataError,
    EmptyCategoryError,
    MissingColumnError,
    MissingValueError,
    NonBinaryExposureError,
    OutOfRangeCategoryError,
)

_MAX_SCREEN_LEVELS = 10


@dataclass(frozen=True)
class VariableSchema:
    """Declared roles of the columns of a wide-format dataset.

    Attributes
    ----------
    id_col : str
        Subject identifier column.
    exposure : str
        Binary baseline exposure column, coded 0/1.
    times : tuple of int
        Ordered numeric time codes, one per measurement occasion.
    mediator_cols : tuple of str
        Mediator column for each time, aligned with ``times``.
    outcome_cols : tuple of str
        Outcome column for each time, aligned with ``times``.
    mediator_levels : tuple of int
        Number of levels of each mediator column; level codes are
        ``0..K-1``.
    baseline_cols : tuple of str
        Baseline covariate columns.
    confounder_cols : tuple of tuple of str
        Post-exposure confounder columns measured at each time, aligned
        with ``times``; may be empty.
    outcome_type : str
        ``"binary"`` or ``"continuous"``; decides which outcome checks run
        and the default link of the effect model.
    """

    id_col: str
    exposure: str
    times: tuple[int, ...]
    mediator_cols: tuple[str, ...]
    outcome_cols: tuple[str, ...]
    mediator_levels: tuple[int, ...]
    baseline_cols: tuple[str, ...] = ()
    confounder_cols: tuple[tuple[str, ...], ...] = ()
    outcome_type: str = "binary"

    def __post_init__(self):
        if len(self.mediator_cols) != len(self.times):
            raise ValueError("need one mediator column per time")
        if len(self.outcome_cols) != len(self.times):
            raise ValueError("need one outcome column per time")
        if len(self.mediator_levels) != len(self.mediator_cols):
            raise ValueError("need one level count per mediator column")
        if any(k < 2 for k in self.mediator_levels):
            raise ValueError("each mediator needs at least 2 levels")
        if self.confounder_cols and len(self.confounder_cols) != len(self.times):
            raise ValueError("need one confounder tuple per time when given")
        if self.outcome_type not in ("binary", "continuous"):
            raise ValueError(f"unknown outcome_type {self.outcome_type!r}")
        if len(set(self.times)) != len(self.times):
            raise ValueError("time codes must be distinct")

    def confounders_at(self, t_index: int) -> tuple[str, ...]:
        if not self.confounder_cols:
            return ()
        return tuple(self.confounder_cols[t_index])

    @property
    def n_times(self) -> int:
        return len(self.times)

    def declared_columns(self) -> tuple[str, ...]:
        confounders = tuple(c for block in self.confounder_cols for c in block)
        return (
            (self.id_col, self.exposure)
            + tuple(self.baseline_cols)
            + confounders
            + tuple(self.mediator_cols)
            + tuple(self.outcome_cols)
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id_col,
            "exposure": self.exposure,
            "times": list(self.times),
            "mediators": list(self.mediator_cols),
            "outcomes": list(self.outcome_cols),
            "mediator_levels": list(self.mediator_levels),
            "baseline": list(self.baseline_cols),
            "confounders": [list(block) for block in self.confounder_cols],
            "outcome_type": self.outcome_type,
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "VariableSchema":
        """Build a schema from a plain dict, e.g. parsed from YAML."""
        try:
            return cls(
                id_col=spec["id"],
                exposure=spec["exposure"],
                times=tuple(int(t) for t in spec["times"]),
                mediator_cols=tuple(spec["mediators"]),
                outcome_cols=tuple(spec["outcomes"]),
                mediator_levels=tuple(int(k) for k in spec["mediator_levels"]),
                baseline_cols=tuple(spec.get("baseline", ())),
                confounder_cols=tuple(
                    tuple(block) for block in spec.get("confounders", ())
                ),
                outcome_type=spec.get("outcome_type", "binary"),
            )
        except KeyError as err:
            raise DataError(f"schema is missing required key {err.args[0]!r}") from None


@dataclass
class ValidationReport:
    """Outcome of validating a frame against a schema."""

    n_subjects: int
    errors: list[tuple[type, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_errors(self) -> None:
        """Raise the first recorded error, if any."""
        if self.errors:
            exc_type, message = self.errors[0]
            raise exc_type(message)


def validate_frame(frame: pd.DataFrame, schema: VariableSchema) -> ValidationReport:
    """Check a wide frame against its schema.

    Records, in order of detection: missing columns, missing values,
    a non-binary exposure, out-of-range or non-integer mediator codes,
    declared mediator levels that never occur, and non-binary values in a
    binary outcome. A crude positivity screen over discrete baseline strata
    is reported as warnings only.

    Parameters
    ----------
    frame : pandas.DataFrame
        Wide data, one row per subject.
    schema : VariableSchema

    Returns
    -------
    ValidationReport
    """
    report = ValidationReport(n_subjects=len(frame))
    missing = [c for c in schema.declared_columns() if c not in frame.columns]
    if missing:
        report.errors.append(
            (MissingColumnError, f"missing columns: {missing}")
        )
        return report

    if frame[schema.id_col].duplicated().any():
        dupes = frame[schema.id_col][frame[schema.id_col].duplicated()].unique()
        report.errors.append(
            (DataError, f"duplicate subject ids: {dupes[:5].tolist()}")
        )

    for col in schema.declared_columns():
        if frame[col].isna().any():
            n_bad = int(frame[col].isna().sum())
            report.errors.append(
                (MissingValueError, f"column {col!r} has {n_bad} missing values")
            )

    if not report.errors:
        exposure = frame[schema.exposure].to_numpy()
        if not np.isin(exposure, (0, 1)).all():
            bad = np.unique(exposure[~np.isin(exposure, (0, 1))])
            report.errors.append(
                (
                    NonBinaryExposureError,
                    f"exposure {schema.exposure!r} has values {bad[:5].tolist()}",
                )
            )
        for col, k in zip(schema.mediator_cols, schema.mediator_levels):
            values = frame[col].to_numpy()
            if not np.all(np.equal(np.mod(values, 1), 0)):
                report.errors.append(
                    (OutOfRangeCategoryError, f"mediator {col!r} has non-integer codes")
                )
                continue
            values = values.astype(int)
            if values.min() < 0 or values.max() > k - 1:
                report.errors.append(
                    (
                        OutOfRangeCategoryError,
                        f"mediator {col!r} has codes outside 0..{k - 1}",
                    )
                )
                continue
            counts = np.bincount(values, minlength=k)
            empty = np.flatnonzero(counts == 0)
            if empty.size:
                report.errors.append(
                    (
                        EmptyCategoryError,
                        f"mediator {col!r} never takes levels {empty.tolist()}",
                    )
                )
        if schema.outcome_type == "binary":
            for col in schema.outcome_cols:
                values = frame[col].to_numpy()
                if not np.isin(values, (0, 1)).all():
                    report.errors.append(
                        (
                            OutOfRangeCategoryError,
                            f"outcome {col!r} declared binary but has other values",
                        )
                    )

    if not report.errors:
        report.warnings.extend(_positivity_screen(frame, schema))
    return report


def _positivity_screen(frame: pd.DataFrame, schema: VariableSchema) -> list[str]:
    # One-sided strata of discrete baselines suggest (but cannot prove) a
    # positivity problem, so these stay warnings.
    discrete = []
    for col in schema.baseline_cols:
        values = frame[col].to_numpy()
        if (
            np.all(np.equal(np.mod(values, 1), 0))
            and np.unique(values).size <= _MAX_SCREEN_LEVELS
        ):
            discrete.append(col)
    if not discrete:
        return []
    warnings = []
    grouped = frame.groupby(discrete, sort=True)[schema.exposure]
    for key, values in grouped:
        if len(values) >= 2 and values.nunique() == 1:
            warnings.append(
                f"baseline stratum {dict(zip(discrete, np.atleast_1d(key)))} has "
                f"{len(values)} subjects, all with exposure {values.iloc[0]}"
            )
    return warnings


@dataclass
class LongDataset:
    """A validated wide-format dataset bound to its schema."""

    frame: pd.DataFrame
    schema: VariableSchema
    report: ValidationReport

    @classmethod
    def from_frame(
        cls, frame: pd.DataFrame, schema: VariableSchema, strict: bool = True
    ) -> "LongDataset":
        """Validate ``frame`` against ``schema`` and wrap it.

        With ``strict`` (the default) the first validation error is raised;
        otherwise errors are only recorded on the attached report.
        """
        report = validate_frame(frame, schema)
        if strict:
            report.raise_errors()
        return cls(frame=frame.reset_index(drop=True), schema=schema, report=report)

    @property
    def n_subjects(self) -> int:
        return len(self.frame)

    @property
    def ids(self) -> np.ndarray:
        return self.frame[self.schema.id_col].to_numpy()

    @property
    def exposure(self) -> np.ndarray:
        return self.frame[self.schema.exposure].to_numpy().astype(int)

    def mediator(self, t_index: int) -> np.ndarray:
        return self.frame[self.schema.mediator_cols[t_index]].to_numpy().astype(int)

    def outcome(self, t_index: int) -> np.ndarray:
        return self.frame[self.schema.outcome_cols[t_index]].to_numpy().astype(float)

    def baseline(self) -> pd.DataFrame:
        return self.frame[list(self.schema.baseline_cols)]

    def to_csv(self, path) -> None:
        self.frame.to_csv(path, index=False)


def load_dataset(path, schema: VariableSchema, strict: bool = True) -> LongDataset:
    """Read a CSV of wide-format data and validate it against ``schema``."""
    frame = pd.read_csv(path)
    return LongDataset.from_frame(frame, schema, strict=strict)
