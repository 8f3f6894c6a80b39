"""Exposure weights, counterfactual mediator weights, truncation, diagnostics.

The estimation scheme weighs each subject twice per time: once for the
mediator path it actually followed and once for the path it would have
followed under the opposite exposure. The mediator weight for counterfactual
exposure ``a*`` at time ``t`` is the running product over ``s <= t`` of

    P(M_s = m_s | A = a*, history) / P(M_s = m_s | A = A_i, history),

which is exactly 1 on the branch ``a* = A_i`` because numerator and
denominator are then the same prediction. The exposure weight is the usual
unstabilized inverse probability of the observed exposure, or 1 when the
effect model itself adjusts for the baseline covariates.

Truncation resets weights above an empirical quantile to that quantile. The
threshold is the floor order statistic of the pooled weights (the largest
order statistic at or below the nominal position), chosen so that truncating
an already-truncated vector is a no-op. Summary quartiles, in contrast, use
ordinary linear interpolation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .dataset import LongDataset
from .exceptions import PositivityViolationError
from .glm import FittedGlm, probs_from_coef

DEFAULT_EPS = 1e-6


def _flag_positivity(bad: np.ndarray, what: str, on_violation: str) -> None:
    count = int(np.count_nonzero(bad))
    if not count:
        return
    where = np.flatnonzero(np.ravel(bad))[:5].tolist()
    msg = f"{what}: {count} probabilities outside tolerance (first rows {where})"
    if on_violation == "raise":
        raise PositivityViolationError(msg)
    warnings.warn(msg)


def exposure_weights(
    fit: FittedGlm,
    ds: LongDataset,
    eps: float = DEFAULT_EPS,
    on_violation: str = "raise",
) -> np.ndarray:
    """Unstabilized inverse-probability-of-exposure weights.

    Parameters
    ----------
    fit : FittedGlm
        The binary exposure model.
    ds : LongDataset
    eps : float, default 1e-6
        Positivity tolerance; fitted probabilities must lie in
        ``[eps, 1 - eps]``.
    on_violation : str, default "raise"
        ``"raise"`` or ``"warn"``.

    Returns
    -------
    ndarray of shape (n,)
        ``1 / p`` for exposed subjects and ``1 / (1 - p)`` for unexposed.
    """
    p1 = fit.probs(ds.frame)[:, 1]
    return _exposure_weights_from_p1(p1, ds.exposure, eps, on_violation)


def _exposure_weights_from_p1(p1, A, eps, on_violation):
    _flag_positivity(
        (p1 < eps) | (p1 > 1.0 - eps), "exposure probabilities", on_violation
    )
    return np.where(A == 1, 1.0 / p1, 1.0 / (1.0 - p1))


def unit_exposure_weights(ds: LongDataset) -> np.ndarray:
    """All-ones exposure weights, for a covariate-adjusted effect model."""
    return np.ones(ds.n_subjects)


def _counterfactual_frames(ds: LongDataset):
    frame = ds.frame
    name = ds.schema.exposure
    return frame, frame.assign(**{name: 0}), frame.assign(**{name: 1})


def mediator_ratio(
    fit_t: FittedGlm,
    ds: LongDataset,
    t_index: int,
    a_star: int,
    eps: float = DEFAULT_EPS,
    on_violation: str = "raise",
) -> np.ndarray:
    """Single-time mediator probability ratio for counterfactual ``a_star``.

    The numerator predicts the observed mediator level with the exposure
    column overwritten by ``a_star``; the denominator uses the exposure as
    observed. The ratio is exactly 1 for subjects whose exposure equals
    ``a_star``.

    Returns
    -------
    ndarray of shape (n,)
    """
    m_obs = ds.mediator(t_index)
    frame, frame0, frame1 = _counterfactual_frames(ds)
    den = fit_t.probs(frame)[np.arange(len(m_obs)), m_obs]
    num_frame = frame1 if a_star == 1 else frame0
    num = fit_t.probs(num_frame)[np.arange(len(m_obs)), m_obs]
    _flag_positivity(den < eps, f"mediator denominators at time {t_index}", on_violation)
    _flag_positivity(num < eps, f"mediator numerators at time {t_index}", on_violation)
    return num / den


def cumulative_mediator_weights(
    fits: list[FittedGlm],
    ds: LongDataset,
    a_star: int,
    eps: float = DEFAULT_EPS,
    on_violation: str = "raise",
) -> np.ndarray:
    """Running product of mediator ratios over time for one ``a_star``.

    Returns
    -------
    ndarray of shape (n, T)
        Column ``t`` holds the product of ratios for times ``0..t``.
    """
    ratios = np.column_stack(
        [
            mediator_ratio(fit, ds, t, a_star, eps=eps, on_violation=on_violation)
            for t, fit in enumerate(fits)
        ]
    )
    return np.cumprod(ratios, axis=1)


@dataclass
class WeightDesign:
    """Fixed design matrices for recomputing weights from new coefficients.

    Freezing these once lets a caller re-evaluate the whole weight pipeline
    for perturbed nuisance coefficients without touching the data again.
    """

    A: np.ndarray
    times: tuple[int, ...]
    ids: np.ndarray
    exposure_mode: str
    X_exposure: np.ndarray | None
    med_X_den: list[np.ndarray]
    med_X_num: list[tuple[np.ndarray, np.ndarray]]
    med_obs: list[np.ndarray]


def build_weight_design(
    ds: LongDataset,
    exposure_fit: FittedGlm | None,
    mediator_fits: list[FittedGlm],
    exposure_mode: str = "ipw",
) -> WeightDesign:
    """Evaluate every design matrix the weight pipeline needs, once."""
    if exposure_mode not in ("ipw", "unit"):
        raise ValueError(f"unknown exposure_mode {exposure_mode!r}")
    if exposure_mode == "ipw" and exposure_fit is None:
        raise ValueError("exposure_mode 'ipw' needs an exposure model")
    frame, frame0, frame1 = _counterfactual_frames(ds)
    X_exposure = (
        exposure_fit.matrix(frame) if exposure_mode == "ipw" else None
    )
    med_X_den, med_X_num, med_obs = [], [], []
    for t, fit in enumerate(mediator_fits):
        med_X_den.append(fit.matrix(frame))
        med_X_num.append((fit.matrix(frame0), fit.matrix(frame1)))
        med_obs.append(ds.mediator(t))
    return WeightDesign(
        A=ds.exposure,
        times=tuple(ds.schema.times),
        ids=ds.ids,
        exposure_mode=exposure_mode,
        X_exposure=X_exposure,
        med_X_den=med_X_den,
        med_X_num=med_X_num,
        med_obs=med_obs,
    )


def weights_from_coefs(
    wd: WeightDesign,
    exposure_coef: np.ndarray | None,
    mediator_coefs: list[np.ndarray],
    eps: float = DEFAULT_EPS,
    on_violation: str = "raise",
) -> "WeightTable":
    """Compute a full weight table from coefficients on frozen designs.

    This is a pure function of the coefficients; the bootstrap calls it
    with perturbed draws while the matrices stay fixed.
    """
    n = len(wd.A)
    if wd.exposure_mode == "unit":
        w_a = np.ones(n)
    else:
        p1 = probs_from_coef(wd.X_exposure, exposure_coef)[:, 1]
        w_a = _exposure_weights_from_p1(p1, wd.A, eps, on_violation)

    T = len(wd.med_X_den)
    ratios = np.ones((n, T, 2))
    rows = np.arange(n)
    for t in range(T):
        coef = mediator_coefs[t]
        m = wd.med_obs[t]
        den = probs_from_coef(wd.med_X_den[t], coef)[rows, m]
        _flag_positivity(den < eps, f"mediator denominators at time {t}", on_violation)
        for j in (0, 1):
            num = probs_from_coef(wd.med_X_num[t][j], coef)[rows, m]
            _flag_positivity(
                num < eps, f"mediator numerators at time {t}", on_violation
            )
            ratios[:, t, j] = num / den
    w_m = np.cumprod(ratios, axis=1)
    return WeightTable(ids=wd.ids, exposure=wd.A, times=wd.times, w_a=w_a, w_m=w_m)


def compute_weights(
    ds: LongDataset,
    exposure_fit: FittedGlm | None,
    mediator_fits: list[FittedGlm],
    exposure_mode: str = "ipw",
    eps: float = DEFAULT_EPS,
    on_violation: str = "raise",
) -> "WeightTable":
    """Compute exposure and cumulative mediator weights for a dataset.

    Parameters
    ----------
    ds : LongDataset
    exposure_fit : FittedGlm or None
        Binary exposure model; may be None with ``exposure_mode="unit"``.
    mediator_fits : list of FittedGlm
        One multinomial (or binary) mediator model per time, in time order.
    exposure_mode : str, default "ipw"
        ``"ipw"`` for inverse-probability exposure weights, ``"unit"`` for
        all-ones weights when the effect model adjusts for baseline
        covariates.
    eps : float, default 1e-6
        Positivity tolerance.
    on_violation : str, default "raise"

    Returns
    -------
    WeightTable
    """
    wd = build_weight_design(ds, exposure_fit, mediator_fits, exposure_mode)
    exp_coef = exposure_fit.coef if exposure_fit is not None else None
    med_coefs = [fit.coef for fit in mediator_fits]
    return weights_from_coefs(wd, exp_coef, med_coefs, eps=eps, on_violation=on_violation)


@dataclass
class WeightTable:
    """Per subject x time x counterfactual-exposure weights.

    Attributes
    ----------
    ids : ndarray of shape (n,)
    exposure : ndarray of shape (n,)
        Observed exposure of each subject.
    times : tuple of int
        Time codes, aligned with axis 1 of ``w_m``.
    w_a : ndarray of shape (n,)
        Exposure weight.
    w_m : ndarray of shape (n, T, 2)
        Cumulative mediator weight; the last axis indexes ``a*`` 0/1. On
        the branch ``a* = exposure`` the entry is exactly 1.
    w_trunc : ndarray or None
        Truncated combined weights, once :meth:`truncate` has run.
    truncation_threshold : float or ndarray or None
    """

    ids: np.ndarray
    exposure: np.ndarray
    times: tuple[int, ...]
    w_a: np.ndarray
    w_m: np.ndarray
    w_trunc: np.ndarray | None = None
    truncation_threshold: float | np.ndarray | None = None
    truncation_q: float | None = None
    truncation_per_time: bool = False

    @property
    def n_subjects(self) -> int:
        return len(self.w_a)

    @property
    def n_times(self) -> int:
        return self.w_m.shape[1]

    @property
    def w_total(self) -> np.ndarray:
        """Combined weights ``w_a * w_m``, shape (n, T, 2)."""
        return self.w_a[:, None, None] * self.w_m

    def final(self) -> np.ndarray:
        """Truncated combined weights if truncation ran, else ``w_total``."""
        return self.w_trunc if self.w_trunc is not None else self.w_total

    def truncate(self, q: float, per_time: bool = False) -> "WeightTable":
        """Return a copy whose combined weights are quantile-truncated.

        Parameters
        ----------
        q : float
            Quantile in ``(0, 1]``; 1.0 leaves the weights unchanged.
        per_time : bool, default False
            Truncate each time slice with its own threshold instead of
            pooling every expanded row.
        """
        total = self.w_total
        if per_time:
            thresholds = np.empty(self.n_times)
            trunc = np.empty_like(total)
            for t in range(self.n_times):
                trunc[:, t, :], thresholds[t] = truncate_weights(total[:, t, :], q)
            return replace(
                self,
                w_trunc=trunc,
                truncation_threshold=thresholds,
                truncation_q=q,
                truncation_per_time=True,
            )
        trunc, threshold = truncate_weights(total, q)
        return replace(
            self,
            w_trunc=trunc,
            truncation_threshold=threshold,
            truncation_q=q,
            truncation_per_time=False,
        )

    def summary_frame(self, bins: int = 20) -> tuple[pd.DataFrame, pd.DataFrame]:
        """Diagnostics of the untruncated combined weights.

        Returns
        -------
        stats : DataFrame with columns (t, a_star, stat, value)
        hist : DataFrame with columns (t, bin_lo, bin_hi, count)
        """
        total = self.w_total
        stat_rows = []
        hist_rows = []
        for t_idx, t in enumerate(self.times):
            for j in (0, 1):
                for stat, value in weight_summary(total[:, t_idx, j]).items():
                    stat_rows.append((t, j, stat, value))
            counts, edges = np.histogram(total[:, t_idx, :].ravel(), bins=bins)
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                hist_rows.append((t, lo, hi, int(c)))
        stats = pd.DataFrame(stat_rows, columns=["t", "a_star", "stat", "value"])
        hist = pd.DataFrame(hist_rows, columns=["t", "bin_lo", "bin_hi", "count"])
        return stats, hist


def truncate_weights(w: np.ndarray, q: float) -> tuple[np.ndarray, float]:
    """Reset weights above the empirical ``q``-quantile to that quantile.

    The threshold is the floor order statistic (``numpy`` quantile method
    ``"lower"``) of all pooled entries. That choice makes the operation
    idempotent: re-truncating the result with the same ``q`` changes
    nothing, and ``q = 1.0`` is an exact identity.

    Parameters
    ----------
    w : ndarray
        Any shape; entries are pooled for the threshold.
    q : float
        Quantile in ``(0, 1]``.

    Returns
    -------
    truncated : ndarray, same shape as ``w``
    threshold : float
    """
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        raise ValueError("cannot truncate an empty weight array")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must be in (0, 1], got {q}")
    threshold = float(np.quantile(w.ravel(), q, method="lower"))
    return np.minimum(w, threshold), threshold


def weight_summary(w: np.ndarray) -> dict:
    """Six-number summary in R's ``summary()`` order and naming.

    Quartiles use linear interpolation of order statistics.

    Returns
    -------
    dict
        Keys ``Min.``, ``1st Qu.``, ``Median``, ``Mean``, ``3rd Qu.``,
        ``Max.``, in that order.
    """
    w = np.ravel(np.asarray(w, dtype=float))
    q1, med, q3 = np.quantile(w, [0.25, 0.5, 0.75])
    return {
        "Min.": float(w.min()),
        "1st Qu.": float(q1),
        "Median": float(med),
        "Mean": float(w.mean()),
        "3rd Qu.": float(q3),
        "Max.": float(w.max()),
    }


def weight_histogram(w: np.ndarray, bins: int = 20) -> pd.DataFrame:
    """Histogram of pooled weights as a (bin_lo, bin_hi, count) frame."""
    counts, edges = np.histogram(np.ravel(w), bins=bins)
    return pd.DataFrame(
        {"bin_lo": edges[:-1], "bin_hi": edges[1:], "count": counts.astype(int)}
    )
