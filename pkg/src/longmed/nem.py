"""Weighted natural effect model fitting on expanded data.

The effect model regresses the outcome of the expanded frame on functions of
``a`` (the exposure copy), ``a_star`` (the counterfactual mediator
exposure), ``t``, and optionally baseline covariates, using the attached
weights. With an independence working correlation and the scale fixed at 1,
the estimating equations are those of an ordinary weighted GLM, so the point
estimates come from the same Newton core as the nuisance models. Uncertainty
that ignores weight estimation comes from the cluster-robust sandwich
``A^{-1} B A^{-1}``, clustered on subject id, where ``A`` is the weighted
information and ``B`` sums outer products of cluster-summed weighted scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit as _expit
from scipy.stats import chi2

from .design import DesignInfo, build_design, parse_term, parse_terms
from .exceptions import (
    NotConvergedError,
    UnsortedClustersError,
    WeightMissingError,
)
from .glm import _fit_core

_REQUIRED_SINGLETONS = ("a", "a_star")


@dataclass(frozen=True)
class NemFormula:
    """Link and terms of the natural effect model.

    The intercept is implicit. Terms must include plain ``a`` and
    ``a_star``; time trends, interactions such as ``t:a`` / ``t:a_star`` /
    ``a:a_star``, and baseline covariates (with their own interactions) are
    allowed. When baseline covariates appear, unit exposure weights become a
    valid choice.

    Attributes
    ----------
    link : str
        ``"logit"`` or ``"identity"``.
    terms : tuple of str
        Model terms beyond the intercept.
    """

    link: str = "logit"
    terms: tuple[str, ...] = ("a", "a_star", "t", "t:a", "t:a_star")

    def __post_init__(self):
        if self.link not in ("logit", "identity"):
            raise ValueError(f"link must be 'logit' or 'identity', got {self.link!r}")
        parsed = parse_terms(self.terms)
        labels = {term.label() for term in parsed}
        for required in _REQUIRED_SINGLETONS:
            if parse_term(required).label() not in labels:
                raise ValueError(f"the effect model must include the term {required!r}")

    def covariate_names(self) -> tuple[str, ...]:
        """Names referenced by the terms beyond a, a_star and t."""
        names = []
        for term in parse_terms(self.terms):
            for factor in term.factors:
                if factor.name not in ("a", "a_star", "t") and factor.name not in names:
                    names.append(factor.name)
        return tuple(names)


@dataclass
class NemSkeleton:
    """Fixed parts of an effect-model fit: everything except the weights."""

    X: np.ndarray
    y: np.ndarray
    starts: np.ndarray
    design: DesignInfo
    link: str
    n_clusters: int
    max_cluster_size: int


@dataclass
class NaturalEffectFit:
    """A fitted natural effect model.

    Attributes
    ----------
    alpha : ndarray of shape (p,)
        Coefficients, ordered as ``column_names``.
    robust_cov : ndarray of shape (p, p)
        Cluster-robust sandwich covariance.
    model_cov : ndarray of shape (p, p)
        Inverse weighted information (no clustering correction).
    column_names : tuple of str
    link : str
    formula : NemFormula
    scale : float
        Fixed at 1; no dispersion is estimated.
    """

    alpha: np.ndarray
    robust_cov: np.ndarray
    model_cov: np.ndarray
    column_names: tuple[str, ...]
    link: str
    formula: NemFormula
    n_clusters: int
    max_cluster_size: int
    n_records: int
    max_abs_score: float
    design: DesignInfo | None = None
    scale: float = field(default=1.0)

    @property
    def se(self) -> np.ndarray:
        """Robust standard errors."""
        return np.sqrt(np.diag(self.robust_cov))

    @classmethod
    def from_alpha(
        cls,
        alpha,
        formula: NemFormula | None = None,
        robust_cov=None,
    ) -> "NaturalEffectFit":
        """Wrap a known coefficient vector as a fit, e.g. for reporting.

        The covariance defaults to zero, so standard errors are zero
        unless one is supplied.
        """
        if formula is None:
            formula = NemFormula()
        point = pd.DataFrame({"a": [0.0], "a_star": [0.0], "t": [0.0]})
        for name in formula.covariate_names():
            point[name] = 0.0
        design, _ = build_design(point, list(formula.terms), check_rank=False)
        alpha = np.asarray(alpha, dtype=float)
        if len(alpha) != design.n_columns:
            raise ValueError(
                f"alpha has {len(alpha)} entries but the formula implies "
                f"{design.n_columns} columns {design.column_names}"
            )
        cov = (
            np.zeros((len(alpha), len(alpha)))
            if robust_cov is None
            else np.asarray(robust_cov, dtype=float)
        )
        return cls(
            alpha=alpha,
            robust_cov=cov,
            model_cov=cov,
            column_names=design.column_names,
            link=formula.link,
            formula=formula,
            n_clusters=0,
            max_cluster_size=0,
            n_records=0,
            max_abs_score=0.0,
            design=design,
        )

    def to_frame(self) -> pd.DataFrame:
        """Coefficient report: term, estimate, robust SE, Wald, p."""
        return wald_tests(self)

    def to_dict(self) -> dict:
        return {
            "link": self.link,
            "terms": list(self.formula.terms),
            "columns": list(self.column_names),
            "alpha": self.alpha.tolist(),
            "robust_se": self.se.tolist(),
            "robust_cov": self.robust_cov.tolist(),
            "scale": self.scale,
            "n_clusters": self.n_clusters,
            "max_cluster_size": self.max_cluster_size,
            "n_records": self.n_records,
        }


def _cluster_starts(ids: np.ndarray) -> np.ndarray:
    if len(ids) == 0:
        raise ValueError("no records")
    changes = np.flatnonzero(ids[1:] != ids[:-1]) + 1
    starts = np.concatenate([[0], changes])
    blocks = len(starts)
    if blocks != len(pd.unique(ids)):
        raise UnsortedClustersError(
            "cluster ids are not contiguous; sort the expanded records by id"
        )
    return starts


def nem_skeleton(
    records: pd.DataFrame,
    formula: NemFormula,
    cluster_col: str = "id",
    outcome_col: str = "Y",
) -> NemSkeleton:
    """Validate records once and freeze the fixed parts of the fit."""
    if cluster_col not in records.columns:
        raise UnsortedClustersError(f"no cluster column {cluster_col!r}")
    ids = records[cluster_col].to_numpy()
    starts = _cluster_starts(ids)
    sizes = np.diff(np.concatenate([starts, [len(ids)]]))
    y = records[outcome_col].to_numpy().astype(float)
    if formula.link == "logit" and not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("logit-link effect model needs a 0/1 outcome")
    design, X = build_design(records, list(formula.terms))
    return NemSkeleton(
        X=X,
        y=y,
        starts=starts,
        design=design,
        link=formula.link,
        n_clusters=len(starts),
        max_cluster_size=int(sizes.max()),
    )


def _weighted_identity_fit(X, y, w):
    A = X.T @ (w[:, None] * X)
    alpha = np.linalg.solve(A, X.T @ (w * y))
    # One refinement pass keeps the weighted score at machine precision.
    resid = y - X @ alpha
    alpha = alpha + np.linalg.solve(A, X.T @ (w * resid))
    mu = X @ alpha
    return alpha, mu, A


def fit_nem_skeleton(
    skel: NemSkeleton,
    w: np.ndarray,
    formula: NemFormula,
    start: np.ndarray | None = None,
    max_iter: int = 100,
    gtol: float = 1e-8,
    lltol: float = 1e-12,
) -> NaturalEffectFit:
    """Fit the effect model for one weight vector on a frozen skeleton."""
    w = np.asarray(w, dtype=float)
    if w.shape != skel.y.shape:
        raise WeightMissingError("weight vector does not match the records")
    if np.isnan(w).any():
        raise WeightMissingError("weights contain missing values")
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")

    X, y = skel.X, skel.y
    if skel.link == "identity":
        alpha, mu, A = _weighted_identity_fit(X, y, w)
        resid = w * (y - mu)
        score = X.T @ resid
        for _ in range(3):
            if np.max(np.abs(score)) < 1e-8:
                break
            alpha = alpha + np.linalg.solve(A, score)
            mu = X @ alpha
            resid = w * (y - mu)
            score = X.T @ resid
    else:
        result = _fit_core(
            X, y.astype(int), 2, w, max_iter, gtol, lltol, 0.0, start=start
        )
        alpha = result["coef"][0]
        mu = result["probs"][:, 1]
        resid = w * (y - mu)
        score = X.T @ resid
        # A relative log-likelihood stop can leave the absolute score above
        # tolerance on very large expansions; a few extra Newton steps fix
        # that without changing converged fits.
        for _ in range(5):
            if np.max(np.abs(score)) < 1e-8:
                break
            curvature = w * mu * (1.0 - mu)
            A = X.T @ (curvature[:, None] * X)
            alpha = alpha + np.linalg.solve(A, score)
            mu = _expit(X @ alpha)
            resid = w * (y - mu)
            score = X.T @ resid
        curvature = w * mu * (1.0 - mu)
        A = X.T @ (curvature[:, None] * X)

    max_abs_score = float(np.max(np.abs(score)))
    if max_abs_score >= 1e-8:
        raise NotConvergedError(
            f"effect-model score did not vanish: max |score| {max_abs_score:.3e}"
        )

    contrib = np.add.reduceat(X * resid[:, None], skel.starts, axis=0)
    B = contrib.T @ contrib
    A_inv = np.linalg.inv(A)
    robust = A_inv @ B @ A_inv
    robust = 0.5 * (robust + robust.T)
    model_cov = 0.5 * (A_inv + A_inv.T)
    return NaturalEffectFit(
        alpha=alpha,
        robust_cov=robust,
        model_cov=model_cov,
        column_names=skel.design.column_names,
        link=skel.link,
        formula=formula,
        n_clusters=skel.n_clusters,
        max_cluster_size=skel.max_cluster_size,
        n_records=len(y),
        max_abs_score=max_abs_score,
        design=skel.design,
    )


def fit_nem(
    records: pd.DataFrame,
    formula: NemFormula | None = None,
    weight_col: str = "w",
    cluster_col: str = "id",
    outcome_col: str = "Y",
    max_iter: int = 100,
    gtol: float = 1e-8,
    lltol: float = 1e-12,
) -> NaturalEffectFit:
    """Fit the natural effect model on an expanded frame.

    Parameters
    ----------
    records : DataFrame
        Expanded data with columns ``id``, ``a``, ``a_star``, ``t``,
        ``Y``, ``w`` (plus any covariates the formula needs), grouped
        contiguously by id.
    formula : NemFormula, optional
        Defaults to the five-term per-time formula
        ``a + a_star + t + t:a + t:a_star`` with a logit link.
    weight_col, cluster_col, outcome_col : str
        Column names in ``records``.

    Returns
    -------
    NaturalEffectFit

    Raises
    ------
    WeightMissingError
        If the weight column is absent or has missing entries.
    UnsortedClustersError
        If ids are not grouped contiguously.
    RankDeficientError
        If the design matrix is rank deficient.
    NotConvergedError
        If the weighted score equations cannot be solved.
    """
    if formula is None:
        formula = NemFormula()
    if weight_col not in records.columns:
        raise WeightMissingError(f"no weight column {weight_col!r} in the records")
    skel = nem_skeleton(records, formula, cluster_col=cluster_col, outcome_col=outcome_col)
    w = records[weight_col].to_numpy()
    return fit_nem_skeleton(
        skel, w, formula, max_iter=max_iter, gtol=gtol, lltol=lltol
    )


def wald_tests(fit: NaturalEffectFit) -> pd.DataFrame:
    """Per-term Wald statistics against zero.

    Returns
    -------
    DataFrame
        Columns ``term``, ``estimate``, ``robust_se``, ``wald``, ``p``;
        the statistic is ``(estimate / se)^2`` referred to chi-square(1).
    """
    se = fit.se
    wald = (fit.alpha / se) ** 2
    return pd.DataFrame(
        {
            "term": list(fit.column_names),
            "estimate": fit.alpha,
            "robust_se": se,
            "wald": wald,
            "p": chi2.sf(wald, 1),
        }
    )
