"""Counterfactual dataset expansion.

Every subject is replicated twice per analysis row: once with the mediator
branch it actually followed (``a_star = A``, carrying only the exposure
weight) and once with the opposite branch (``a_star = 1 - A``, carrying the
exposure weight times the cumulative mediator weight). The per-time layout
has two rows per subject per time; the end-of-study layout keeps only the
final outcome with the mediator weight accumulated through the last time.

Expanded frames use the canonical columns ``(id, A, a, a_star, t, Y, w)``,
with ``a = A`` always, rows grouped contiguously by id. Extra columns (for
covariate-adjusted effect models) may ride along after the canonical ones.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .dataset import LongDataset
from .exceptions import WeightMissingError
from .weights import WeightTable

CANONICAL_COLUMNS = ("id", "A", "a", "a_star", "t", "Y", "w")


def _check_weights(ds: LongDataset, weights: WeightTable, need_times: int) -> np.ndarray:
    if weights.n_subjects != ds.n_subjects:
        raise WeightMissingError(
            f"weight table covers {weights.n_subjects} subjects, data has {ds.n_subjects}"
        )
    if weights.n_times < need_times:
        raise WeightMissingError(
            f"weight table covers {weights.n_times} times, need {need_times}"
        )
    if not np.array_equal(weights.ids, ds.ids):
        raise WeightMissingError("weight table ids do not match the dataset")
    w = weights.final()
    if not np.all(np.isfinite(w)):
        raise WeightMissingError("weight table contains non-finite entries")
    return w


def _time_codes(ds: LongDataset, time_codes: str) -> np.ndarray:
    if time_codes == "index":
        return np.arange(ds.schema.n_times)
    if time_codes == "schema":
        return np.asarray(ds.schema.times)
    raise ValueError(f"time_codes must be 'index' or 'schema', got {time_codes!r}")


def interleaved_weights(w_final: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Flatten an (n, T, 2) weight cube into per-time expanded row order.

    Row order matches :func:`expand_per_time`: subjects in order, each
    subject's times in order, the own-branch row before the swapped one.
    The bootstrap uses this to swap in recomputed weights without
    rebuilding the record frame.
    """
    n, T, _ = w_final.shape
    rows = np.arange(n)[:, None]
    cols = np.arange(T)[None, :]
    own = w_final[rows, cols, A[:, None]]
    swapped = w_final[rows, cols, (1 - A)[:, None]]
    w = np.empty(2 * n * T)
    w[0::2] = own.ravel()
    w[1::2] = swapped.ravel()
    return w


def interleaved_weights_final(w_final: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Final-time weight pairs in :func:`expand_end_of_study` row order."""
    n, T, _ = w_final.shape
    own = w_final[np.arange(n), T - 1, A]
    swapped = w_final[np.arange(n), T - 1, 1 - A]
    return np.stack([own, swapped], axis=1).ravel()


def expand_per_time(
    ds: LongDataset,
    weights: WeightTable,
    time_codes: str = "index",
    extra_cols: tuple[str, ...] = (),
) -> pd.DataFrame:
    """Build the two-rows-per-subject-per-time analysis frame.

    Parameters
    ----------
    ds : LongDataset
    weights : WeightTable
        Weights computed on the same dataset; the final (possibly
        truncated) combined weights are attached.
    time_codes : str, default "index"
        ``"index"`` codes time 0,1,2,... regardless of schema labels;
        ``"schema"`` uses the schema's own time values.
    extra_cols : tuple of str, optional
        Baseline columns to carry along after the canonical ones.

    Returns
    -------
    DataFrame
        ``2 * n * T`` rows with columns ``(id, A, a, a_star, t, Y, w)``
        plus any extras, grouped contiguously by id.
    """
    T = ds.schema.n_times
    w_final = _check_weights(ds, weights, T)
    codes = _time_codes(ds, time_codes)
    A = ds.exposure
    n = ds.n_subjects
    outcomes = np.column_stack([ds.outcome(t) for t in range(T)])

    ids = np.repeat(ds.ids, 2 * T)
    A_rep = np.repeat(A, 2 * T)
    t_rep = np.tile(np.repeat(codes, 2), n)
    y_rep = np.repeat(outcomes, 2, axis=1).ravel()
    a_star = np.empty(2 * n * T, dtype=int)
    a_star[0::2] = np.repeat(A, T)
    a_star[1::2] = np.repeat(1 - A, T)
    w = interleaved_weights(w_final, A)

    frame = pd.DataFrame(
        {
            "id": ids,
            "A": A_rep,
            "a": A_rep,
            "a_star": a_star,
            "t": t_rep,
            "Y": y_rep,
            "w": w,
        }
    )
    for col in extra_cols:
        frame[col] = np.repeat(ds.frame[col].to_numpy(), 2 * T)
    return frame


def expand_end_of_study(
    ds: LongDataset,
    weights: WeightTable,
    time_codes: str = "index",
    extra_cols: tuple[str, ...] = (),
) -> pd.DataFrame:
    """Build the two-rows-per-subject frame for the final outcome only.

    The mediator weight is the cumulative product through the last time.

    Returns
    -------
    DataFrame
        ``2 * n`` rows with the canonical columns; ``t`` is the last time
        code for every row.
    """
    T = ds.schema.n_times
    w_final = _check_weights(ds, weights, T)
    codes = _time_codes(ds, time_codes)
    A = ds.exposure
    n = ds.n_subjects
    y_last = ds.outcome(T - 1)

    frame = pd.DataFrame(
        {
            "id": np.repeat(ds.ids, 2),
            "A": np.repeat(A, 2),
            "a": np.repeat(A, 2),
            "a_star": np.stack([A, 1 - A], axis=1).ravel(),
            "t": np.full(2 * n, codes[T - 1]),
            "Y": np.repeat(y_last, 2),
            "w": interleaved_weights_final(w_final, A),
        }
    )
    for col in extra_cols:
        frame[col] = np.repeat(ds.frame[col].to_numpy(), 2)
    return frame


def expanded_to_csv(frame: pd.DataFrame, path) -> None:
    """Write an expanded frame with exactly the canonical columns."""
    frame.loc[:, list(CANONICAL_COLUMNS)].to_csv(path, index=False)
