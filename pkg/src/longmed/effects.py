"""Effect summaries from a fitted natural effect model.

At each time the direct effect contrasts exposure values with the mediator
path held at the unexposed course, the indirect effect contrasts mediator
paths under exposure, and the total effect is their sum on the linear scale.
All three are linear combinations of the fitted coefficients, so their
standard errors come from the robust covariance via the usual quadratic
form. With a logit link the summaries are odds ratios; counterfactual
probabilities and the proportion mediated follow from the four fitted
``(a, a*)`` cells. Covariates in the formula, if any, are evaluated at
zero, so effects are reported at the covariate reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import expit

from .exceptions import DegenerateTotalEffectError, MissingTermError
from .nem import NaturalEffectFit

Z_95 = 1.96


@dataclass
class EffectSummary:
    """Direct/indirect/total summaries at one time.

    Log-scale estimates and standard errors are always present; the
    odds-ratio fields are NaN for an identity link. ``p_table`` maps the
    four ``(a, a_star)`` pairs to fitted counterfactual outcome values
    (probabilities under a logit link, means under identity).
    """

    t: float
    direct_log: float
    direct_se: float
    indirect_log: float
    indirect_se: float
    total_log: float
    total_se: float
    or_direct: float
    or_direct_lo: float
    or_direct_hi: float
    or_indirect: float
    or_indirect_lo: float
    or_indirect_hi: float
    or_total: float
    or_total_lo: float
    or_total_hi: float
    p_table: dict
    proportion_mediated: float


def _point_matrix(fit: NaturalEffectFit, combos, t: float) -> np.ndarray:
    if fit.design is None:
        raise MissingTermError("fit carries no design; build it with from_alpha or fit_nem")
    data = {
        "a": [float(a) for a, _ in combos],
        "a_star": [float(s) for _, s in combos],
        "t": [float(t)] * len(combos),
    }
    frame = pd.DataFrame(data)
    for name in fit.formula.covariate_names():
        frame[name] = 0.0
    return fit.design.matrix(frame)


_CELLS = ((0, 0), (1, 0), (0, 1), (1, 1))


def counterfactual_probs(fit: NaturalEffectFit, t: float) -> dict:
    """Fitted counterfactual outcome for the four ``(a, a*)`` cells at ``t``.

    Returns
    -------
    dict
        Keys ``(a, a_star)`` in {0,1}^2; values are probabilities under a
        logit link, linear-predictor means under identity.
    """
    rows = _point_matrix(fit, _CELLS, t)
    eta = rows @ fit.alpha
    values = expit(eta) if fit.link == "logit" else eta
    return {cell: float(v) for cell, v in zip(_CELLS, values)}


def proportion_mediated(fit: NaturalEffectFit, t: float) -> float:
    """Share of the total effect running through the mediators at ``t``.

    Computed as ``(P11 - P10) / (P11 - P00)`` from the counterfactual
    cells.

    Raises
    ------
    DegenerateTotalEffectError
        If ``|P11 - P00| < 1e-12``, where the share is undefined.
    """
    p = counterfactual_probs(fit, t)
    denom = p[(1, 1)] - p[(0, 0)]
    if abs(denom) < 1e-12:
        raise DegenerateTotalEffectError(
            f"total effect at t={t} is {denom:.3e}; proportion mediated undefined"
        )
    return (p[(1, 1)] - p[(1, 0)]) / denom


def decompose(fit: NaturalEffectFit, times, z: float = Z_95) -> list[EffectSummary]:
    """Per-time direct, indirect, and total effects with uncertainty.

    Parameters
    ----------
    fit : NaturalEffectFit
    times : iterable of float
        Time codes on the scale used in the fit.
    z : float, default 1.96
        Normal quantile for the confidence bounds.

    Returns
    -------
    list of EffectSummary
        One entry per time. The total log effect is the exact sum of the
        direct and indirect log effects, and the total odds ratio is the
        exact product of the two exponentiated parts.
    """
    alpha = fit.alpha
    cov = fit.robust_cov
    out = []
    for t in times:
        rows = _point_matrix(fit, _CELLS, t)
        r00, r10, _, r11 = rows
        c_direct = r10 - r00
        c_indirect = r11 - r10
        c_total = c_direct + c_indirect

        def lin(c):
            est = float(c @ alpha)
            se = float(np.sqrt(max(c @ cov @ c, 0.0)))
            return est, se

        direct, direct_se = lin(c_direct)
        indirect, indirect_se = lin(c_indirect)
        _, total_se = lin(c_total)
        total = direct + indirect

        if fit.link == "logit":
            or_d = float(np.exp(direct))
            or_i = float(np.exp(indirect))
            ors = (
                or_d,
                float(np.exp(direct - z * direct_se)),
                float(np.exp(direct + z * direct_se)),
                or_i,
                float(np.exp(indirect - z * indirect_se)),
                float(np.exp(indirect + z * indirect_se)),
                or_d * or_i,
                float(np.exp(total - z * total_se)),
                float(np.exp(total + z * total_se)),
            )
        else:
            ors = (np.nan,) * 9

        out.append(
            EffectSummary(
                t=float(t),
                direct_log=direct,
                direct_se=direct_se,
                indirect_log=indirect,
                indirect_se=indirect_se,
                total_log=total,
                total_se=total_se,
                or_direct=ors[0],
                or_direct_lo=ors[1],
                or_direct_hi=ors[2],
                or_indirect=ors[3],
                or_indirect_lo=ors[4],
                or_indirect_hi=ors[5],
                or_total=ors[6],
                or_total_lo=ors[7],
                or_total_hi=ors[8],
                p_table=counterfactual_probs(fit, t),
                proportion_mediated=proportion_mediated(fit, t),
            )
        )
    return out


def effects_frame(summaries: list[EffectSummary]) -> pd.DataFrame:
    """Flatten summaries to rows of (t, effect, log_est, se, or, lo95, hi95)."""
    rows = []
    for s in summaries:
        rows.append((s.t, "direct", s.direct_log, s.direct_se, s.or_direct, s.or_direct_lo, s.or_direct_hi))
        rows.append((s.t, "indirect", s.indirect_log, s.indirect_se, s.or_indirect, s.or_indirect_lo, s.or_indirect_hi))
        rows.append((s.t, "total", s.total_log, s.total_se, s.or_total, s.or_total_lo, s.or_total_hi))
    return pd.DataFrame(
        rows, columns=["t", "effect", "log_est", "se", "or", "lo95", "hi95"]
    )


def probs_frame(summaries: list[EffectSummary]) -> pd.DataFrame:
    """Counterfactual cell values as rows of (t, a, a_star, p)."""
    rows = []
    for s in summaries:
        for (a, a_star), p in s.p_table.items():
            rows.append((s.t, a, a_star, p))
    return pd.DataFrame(rows, columns=["t", "a", "a_star", "p"])
