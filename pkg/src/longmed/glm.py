"""Maximum-likelihood logit models fit by Newton's method.

Two estimators live here: :class:`BinaryLogit` for a 0/1 response and
:class:`MultinomialLogit` for a categorical response coded ``0..K-1`` with
level 0 as the reference. Both run the same Newton core, so a two-level
multinomial fit reproduces the binary fit exactly. Fits are weighted
log-likelihood maximizations with step-halving, and stop when either the
largest score component falls below ``gtol`` or the relative change in
log-likelihood falls below ``lltol``.

The multinomial coefficient matrix has one row per non-reference level; its
covariance is reported for the level-major flattening (all coefficients of
level 1, then level 2, and so on).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .design import DesignInfo, build_design
from .exceptions import (
    EmptyCategoryError,
    NotConvergedError,
    RankDeficientError,
    SeparationError,
)

_PROB_EDGE = 1e-10
_MAX_HALVINGS = 30


def _prob_matrix(eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return class probabilities and log-denominators for logits ``eta``.

    ``eta`` has one column per non-reference level; the reference level has
    an implicit logit of zero. Computation is shifted by the rowwise maximum
    for stability.
    """
    shift = np.maximum(eta.max(axis=1), 0.0)
    expo = np.exp(eta - shift[:, None])
    ref = np.exp(-shift)
    denom = ref + expo.sum(axis=1)
    probs = expo / denom[:, None]
    full = np.column_stack([ref / denom, probs])
    log_denom = shift + np.log(denom)
    return full, log_denom


def multinomial_loglik(
    X: np.ndarray,
    y: np.ndarray,
    coef: np.ndarray,
    sample_weight: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Weighted log-likelihood and score of a baseline-category logit.

    Parameters
    ----------
    X : ndarray of shape (n, p)
    y : ndarray of shape (n,)
        Integer codes ``0..K-1``; 0 is the reference level.
    coef : ndarray of shape (K-1, p)
        One coefficient row per non-reference level.
    sample_weight : ndarray of shape (n,), optional

    Returns
    -------
    loglik : float
    score : ndarray of shape ((K-1) * p,)
        Gradient of the log-likelihood in level-major order.
    """
    coef = np.atleast_2d(np.asarray(coef, dtype=float))
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, float)
    indicators = np.column_stack([(y == k + 1) for k in range(coef.shape[0])]).astype(
        float
    )
    eta = X @ coef.T
    full, log_denom = _prob_matrix(eta)
    ll = float(np.sum(w * ((indicators * eta).sum(axis=1) - log_denom)))
    resid = w[:, None] * (indicators - full[:, 1:])
    score = (X.T @ resid).T.ravel()
    return ll, score


def _information(X: np.ndarray, full: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Expected = observed information for the canonical link, assembled in
    # (K*p, K*p) level-major blocks.
    n_levels = full.shape[1]
    K = n_levels - 1
    p = X.shape[1]
    info = np.empty((K * p, K * p))
    probs = full[:, 1:]
    for k in range(K):
        for l in range(k, K):
            if k == l:
                wkl = w * probs[:, k] * (1.0 - probs[:, k])
            else:
                wkl = -w * probs[:, k] * probs[:, l]
            block = X.T @ (wkl[:, None] * X)
            info[k * p : (k + 1) * p, l * p : (l + 1) * p] = block
            if l != k:
                info[l * p : (l + 1) * p, k * p : (k + 1) * p] = block.T
    return info


def _fit_core(X, y, n_levels, w, max_iter, gtol, lltol, ridge, start=None):
    n, p = X.shape
    K = n_levels - 1
    active = w > 0
    if np.linalg.matrix_rank(X[active]) < p:
        raise RankDeficientError(
            f"design matrix has fewer than {p} independent columns among weighted rows"
        )
    counts = np.bincount(y[active], minlength=n_levels)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptyCategoryError(
            f"response levels {empty.tolist()} have no weighted observations"
        )

    indicators = np.column_stack([(y == k + 1) for k in range(K)]).astype(float)
    coef = np.zeros((K, p)) if start is None else np.asarray(start, float).reshape(K, p)
    flat = coef.ravel().copy()
    eta = X @ coef.T
    full, log_denom = _prob_matrix(eta)

    def penalized_ll(flat_coef, full_probs, log_den):
        ll = float(np.sum(w * ((indicators * (X @ flat_coef.reshape(K, p).T)).sum(axis=1) - log_den)))
        if ridge:
            ll -= 0.5 * ridge * float(flat_coef @ flat_coef)
        return ll

    ll = penalized_ll(flat, full, log_denom)
    ll_path = [ll]
    converged = False
    by_score = False
    steps_taken = 0
    n_iter = 0

    for n_iter in range(1, max_iter + 1):
        resid = w[:, None] * (indicators - full[:, 1:])
        score = (X.T @ resid).T.ravel()
        if ridge:
            score = score - ridge * flat
        info = _information(X, full, w)
        if ridge:
            info = info + ridge * np.eye(K * p)
        if np.max(np.abs(score)) < gtol:
            converged = True
            by_score = True
            break
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        new_flat = flat + step
        new_eta = X @ new_flat.reshape(K, p).T
        new_full, new_log_denom = _prob_matrix(new_eta)
        new_ll = penalized_ll(new_flat, new_full, new_log_denom)
        halvings = 0
        while new_ll < ll - 1e-13 * (1.0 + abs(ll)) and halvings < _MAX_HALVINGS:
            step = 0.5 * step
            new_flat = flat + step
            new_eta = X @ new_flat.reshape(K, p).T
            new_full, new_log_denom = _prob_matrix(new_eta)
            new_ll = penalized_ll(new_flat, new_full, new_log_denom)
            halvings += 1
        improved = new_ll - ll
        flat, full, log_denom = new_flat, new_full, new_log_denom
        ll = new_ll
        ll_path.append(ll)
        steps_taken += 1
        if abs(improved) < lltol * (1.0 + abs(ll)):
            converged = True
            break

    resid = w[:, None] * (indicators - full[:, 1:])
    score = (X.T @ resid).T.ravel()
    if ridge:
        score = score - ridge * flat
    max_score = float(np.max(np.abs(score)))

    at_edge = bool(
        (full[active] < _PROB_EDGE).any() or (full[active] > 1.0 - _PROB_EDGE).any()
    )
    if not converged:
        if at_edge:
            raise SeparationError(
                f"fitted probabilities reached 0/1 with max |score| {max_score:.3e} "
                f"after {n_iter} iterations"
            )
        raise NotConvergedError(
            f"no convergence in {max_iter} iterations; max |score| {max_score:.3e}"
        )
    if at_edge:
        # Probabilities numerically 0 or 1 make the likelihood maximum lie
        # at infinity (or render ratio weights built from this fit unusable),
        # so a boundary fit is rejected even when the score test passed.
        raise SeparationError(
            "fitted probabilities are numerically 0 or 1 "
            f"(max |score| {max_score:.3e}); data are likely separated"
        )

    if by_score and steps_taken > 0:
        # One polishing Newton step: inside the quadratic basin this drives
        # coefficient error to machine precision. Skipped when the start
        # value already met the score tolerance, so refitting a converged
        # model with unchanged weights returns it bit for bit.
        info = _information(X, full, w)
        if ridge:
            info = info + ridge * np.eye(K * p)
        try:
            step = np.linalg.solve(info, score)
            cand = flat + step
            cand_eta = X @ cand.reshape(K, p).T
            cand_full, cand_log_denom = _prob_matrix(cand_eta)
            cand_ll = penalized_ll(cand, cand_full, cand_log_denom)
            if cand_ll >= ll - 1e-9 * (1.0 + abs(ll)):
                flat, full, log_denom, ll = cand, cand_full, cand_log_denom, cand_ll
                resid = w[:, None] * (indicators - full[:, 1:])
                score = (X.T @ resid).T.ravel()
                if ridge:
                    score = score - ridge * flat
                ll_path.append(ll)
        except np.linalg.LinAlgError:
            pass

    info = _information(X, full, w)
    if ridge:
        info = info + ridge * np.eye(K * p)
    cov = np.linalg.inv(info)
    return {
        "coef": flat.reshape(K, p),
        "cov": cov,
        "loglik": ll,
        "loglik_path": ll_path,
        "n_iter": n_iter,
        "probs": full,
        "info": info,
        "max_score": float(np.max(np.abs(score))),
    }


class MultinomialLogit(BaseEstimator):
    """Baseline-category multinomial logit fit by Newton's method.

    Parameters
    ----------
    n_levels : int or None, default None
        Number of response levels. ``None`` infers ``max(y) + 1``.
    max_iter : int, default 100
    gtol : float, default 1e-8
        Convergence threshold on the largest absolute score component.
    lltol : float, default 1e-12
        Convergence threshold on the relative log-likelihood change.
    ridge : float, default 0.0
        Optional tiny penalty (for example ``1e-8``) added to stabilize
        near-singular fits. Off by default; when on, the reported
        covariance inverts the penalized information.

    Attributes
    ----------
    coef_ : ndarray of shape (K-1, p)
        One row per non-reference level.
    cov_ : ndarray of shape ((K-1) * p, (K-1) * p)
        Inverse information for the level-major coefficient flattening.
    converged_ : bool
    n_iter_ : int
    loglik_ : float
    loglik_path_ : list of float
    n_levels_ : int
    """

    def __init__(self, n_levels=None, max_iter=100, gtol=1e-8, lltol=1e-12, ridge=0.0):
        self.n_levels = n_levels
        self.max_iter = max_iter
        self.gtol = gtol
        self.lltol = lltol
        self.ridge = ridge

    def fit(self, X, y, sample_weight=None, start=None):
        """Fit the model by weighted maximum likelihood.

        Parameters
        ----------
        X : ndarray of shape (n, p)
        y : ndarray of shape (n,)
            Integer codes ``0..K-1``.
        sample_weight : ndarray of shape (n,), optional
            Nonnegative weights; rows with zero weight are ignored.
        start : ndarray of shape (K-1, p), optional
            Warm-start coefficients. A start that already satisfies the
            score tolerance is returned unchanged.

        Returns
        -------
        self
        """
        X = np.asarray(X, dtype=float)
        y = np.asarray(y).astype(int)
        w = (
            np.ones(len(y))
            if sample_weight is None
            else np.asarray(sample_weight, dtype=float)
        )
        if w.shape != y.shape:
            raise ValueError("sample_weight must match y in length")
        if (w < 0).any():
            raise ValueError("sample_weight must be nonnegative")
        n_levels = self.n_levels if self.n_levels is not None else int(y.max()) + 1
        if y.min() < 0 or y.max() > n_levels - 1:
            raise ValueError(f"y codes must lie in 0..{n_levels - 1}")
        result = _fit_core(
            X,
            y,
            n_levels,
            w,
            self.max_iter,
            self.gtol,
            self.lltol,
            self.ridge,
            start=start,
        )
        self.n_levels_ = n_levels
        self.coef_ = result["coef"]
        self.cov_ = result["cov"]
        self.loglik_ = result["loglik"]
        self.loglik_path_ = result["loglik_path"]
        self.n_iter_ = result["n_iter"]
        self.converged_ = True
        self.info_ = result["info"]
        return self

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise NotFittedError(
                f"this {type(self).__name__} instance is not fitted yet"
            )

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities, one column per level (reference first)."""
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        full, _ = _prob_matrix(X @ self.coef_.T)
        return full

    def observed_prob(self, X, y) -> np.ndarray:
        """Probability each row assigns to its own observed level."""
        probs = self.predict_proba(X)
        return probs[np.arange(len(probs)), np.asarray(y).astype(int)]


class BinaryLogit(BaseEstimator):
    """Logistic regression for a 0/1 response, fit by Newton's method.

    Runs the same core as :class:`MultinomialLogit` with two levels, so the
    two agree exactly on binary data. See that class for the meaning of the
    parameters.

    Attributes
    ----------
    coef_ : ndarray of shape (p,)
    cov_ : ndarray of shape (p, p)
    converged_ : bool
    n_iter_ : int
    loglik_ : float
    loglik_path_ : list of float
    """

    def __init__(self, max_iter=100, gtol=1e-8, lltol=1e-12, ridge=0.0):
        self.max_iter = max_iter
        self.gtol = gtol
        self.lltol = lltol
        self.ridge = ridge

    def fit(self, X, y, sample_weight=None, start=None):
        """Fit the model; see :meth:`MultinomialLogit.fit`."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y).astype(int)
        if not np.isin(y, (0, 1)).all():
            raise ValueError("y must be coded 0/1")
        w = (
            np.ones(len(y))
            if sample_weight is None
            else np.asarray(sample_weight, dtype=float)
        )
        if (w < 0).any():
            raise ValueError("sample_weight must be nonnegative")
        result = _fit_core(
            X, y, 2, w, self.max_iter, self.gtol, self.lltol, self.ridge, start=start
        )
        self.coef_ = result["coef"][0]
        self.cov_ = result["cov"]
        self.loglik_ = result["loglik"]
        self.loglik_path_ = result["loglik_path"]
        self.n_iter_ = result["n_iter"]
        self.converged_ = True
        self.info_ = result["info"]
        return self

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise NotFittedError(
                f"this {type(self).__name__} instance is not fitted yet"
            )

    def predict_proba(self, X) -> np.ndarray:
        """Probabilities of the two classes, columns ``[P(0), P(1)]``."""
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        full, _ = _prob_matrix(X @ self.coef_[None, :].T)
        return full

    def predict_p1(self, X) -> np.ndarray:
        """Probability of response 1 for each row."""
        return self.predict_proba(X)[:, 1]


@dataclass
class FittedGlm:
    """A fitted logit model bundled with its frozen design.

    Attributes
    ----------
    family : str
        ``"binomial"`` or ``"multinomial"``.
    design : DesignInfo
        The design frozen on the fitting data; new data is expanded the
        same way, with the same categorical levels.
    model : BinaryLogit or MultinomialLogit
    """

    family: str
    design: DesignInfo
    model: BinaryLogit | MultinomialLogit

    @property
    def coef(self) -> np.ndarray:
        return self.model.coef_

    @property
    def cov(self) -> np.ndarray:
        return self.model.cov_

    @property
    def n_levels(self) -> int:
        return 2 if self.family == "binomial" else self.model.n_levels_

    def matrix(self, data) -> np.ndarray:
        return self.design.matrix(data)

    def probs(self, data) -> np.ndarray:
        """Class probabilities on ``data``, one column per level."""
        return self.model.predict_proba(self.design.matrix(data))


def probs_from_coef(X: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Class probabilities for a coefficient matrix on a fixed design matrix.

    ``coef`` is ``(p,)`` for a binary model or ``(K-1, p)`` for a
    multinomial one; the result always has one column per level, the
    reference level first.
    """
    coef = np.atleast_2d(np.asarray(coef, dtype=float))
    full, _ = _prob_matrix(np.asarray(X, dtype=float) @ coef.T)
    return full


def fit_glm(
    data,
    response,
    terms,
    family: str = "binomial",
    n_levels: int | None = None,
    sample_weight=None,
    levels: dict | None = None,
    **options,
) -> FittedGlm:
    """Freeze a design on ``data`` and fit a logit model to ``response``.

    Parameters
    ----------
    data : mapping of str to array-like
        Column store, e.g. a :class:`pandas.DataFrame`.
    response : str or array-like
        Response column name, or the response values themselves.
    terms : sequence of str
        Model terms; the intercept is automatic.
    family : str, default "binomial"
        ``"binomial"`` or ``"multinomial"``.
    n_levels : int, optional
        Level count for a multinomial response; inferred if omitted.
    sample_weight : array-like, optional
    levels : dict, optional
        Pre-declared levels for categorical design factors.
    **options
        Forwarded to the estimator (``max_iter``, ``gtol``, ``lltol``,
        ``ridge``).

    Returns
    -------
    FittedGlm
    """
    if isinstance(response, str):
        y = np.asarray(data[response])
    else:
        y = np.asarray(response)
    info, X = build_design(data, terms, levels=levels)
    if family == "binomial":
        model = BinaryLogit(**options).fit(X, y, sample_weight=sample_weight)
    elif family == "multinomial":
        model = MultinomialLogit(n_levels=n_levels, **options).fit(
            X, y, sample_weight=sample_weight
        )
    else:
        raise ValueError(f"unknown family {family!r}")
    return FittedGlm(family=family, design=info, model=model)
