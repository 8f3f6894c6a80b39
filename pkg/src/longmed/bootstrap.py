"""Weight-estimation-aware variance via a perturbed parametric bootstrap.

The fixed-weight sandwich covariance treats the inverse-probability weights
as known. This module propagates nuisance-model uncertainty instead:
replicate ``j`` draws every exposure- and mediator-model coefficient vector
from a normal centered at its estimate with the fitted covariance,
recomputes the weights on frozen design matrices (no nuisance refitting, so
no replicate can die on an empty response category), refits the effect
model warm-started at the original solution, and stores both the coefficient
draw and its fixed-weight sandwich covariance. By the law of iterated
variance the two stacks combine as

    total_cov = mean_j Var(alpha | w_j) + (1 / (B - 1)) * sum_j
                (alpha_j - alpha_bar)(alpha_j - alpha_bar)'

and confidence intervals are centered on the original point estimate.

Replicates use independent child streams spawned from the master seed, so
serial and threaded runs produce bit-identical results.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import LongDataset
from .design import parse_term
from .exceptions import (
    LongmedError,
    MissingTermError,
    NonPsdCovarianceError,
    NotConvergedError,
)
from .expand import (
    expand_end_of_study,
    expand_per_time,
    interleaved_weights,
    interleaved_weights_final,
)
from .glm import FittedGlm
from .nem import NaturalEffectFit, NemFormula, fit_nem_skeleton, nem_skeleton
from .weights import DEFAULT_EPS, WeightTable, build_weight_design, weights_from_coefs

Z_95 = 1.96
_PSD_TOL = 1e-10


@dataclass(frozen=True)
class BootstrapConfig:
    """Settings for one perturbed-bootstrap run.

    Attributes
    ----------
    n_replicates : int
        Replication count B; at least 2.
    seed : int
        Master seed; fixes the entire replicate stream.
    target_terms : tuple of str
        Effect-model terms reported in :meth:`BootstrapResult.to_dict`.
    truncate_q : float or None
        Weight-truncation quantile re-applied inside each replicate
        (None disables truncation).
    truncate_per_time : bool
        Per-time-slice thresholds instead of one pooled threshold.
    freeze_threshold : bool
        Clip each replicate at the original fit's threshold instead of
        re-deriving the quantile from the replicate's own weights.
    blockwise : bool
        Compatibility mode: perturb each non-reference level of a
        multinomial model from its own diagonal covariance block,
        ignoring cross-level covariance, instead of one joint draw.
    threads : int
        Worker threads; results are identical for any value.
    """

    n_replicates: int = 200
    seed: int = 0
    target_terms: tuple[str, ...] = ("a", "a_star", "t:a", "t:a_star")
    truncate_q: float | None = None
    truncate_per_time: bool = False
    freeze_threshold: bool = False
    blockwise: bool = False
    threads: int = 1
    eps: float = DEFAULT_EPS
    on_violation: str = "raise"

    def __post_init__(self):
        if self.n_replicates < 2:
            raise ValueError("n_replicates must be at least 2")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.truncate_q is not None and not 0.0 < self.truncate_q <= 1.0:
            raise ValueError(f"truncate_q must be in (0, 1], got {self.truncate_q}")


def _symmetric_root(cov: np.ndarray, tol: float) -> np.ndarray:
    """Symmetric PSD square root with tolerance clipping of eigenvalues."""
    sym = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(sym)
    top = max(float(vals[-1]), 0.0)
    if float(vals[0]) < -tol * max(1.0, top):
        raise NonPsdCovarianceError(
            f"covariance eigenvalue {float(vals[0]):.3e} is negative beyond tolerance"
        )
    root = np.sqrt(np.clip(vals, 0.0, None))
    return (vecs * root) @ vecs.T


def perturb_coefficients(
    fit: FittedGlm,
    rng: np.random.Generator,
    tol: float = _PSD_TOL,
    blockwise: bool = False,
) -> np.ndarray:
    """One multivariate-normal draw centered at the fitted coefficients.

    Parameters
    ----------
    fit : FittedGlm
        Provides the coefficient point estimate and its covariance.
    rng : numpy Generator
        Consumes exactly one standard normal per coefficient, so the
        stream position after the call is independent of the covariance.
    tol : float
        Relative eigenvalue tolerance; covariances whose smallest
        eigenvalue is below ``-tol * max(1, largest)`` are rejected.
    blockwise : bool
        Draw each multinomial level's block separately (compatibility
        mode ignoring cross-level covariance).

    Returns
    -------
    ndarray with the same shape as ``fit.coef``. A zero covariance
    returns the point estimate bit for bit.

    Raises
    ------
    NonPsdCovarianceError
    """
    coef = np.asarray(fit.coef, dtype=float)
    cov = np.asarray(fit.cov, dtype=float)
    flat = coef.ravel()
    z = rng.standard_normal(flat.size)
    if blockwise and coef.ndim == 2 and coef.shape[0] > 1:
        p = coef.shape[1]
        shift = np.empty(flat.size)
        for level in range(coef.shape[0]):
            sl = slice(level * p, (level + 1) * p)
            shift[sl] = _symmetric_root(cov[sl, sl], tol) @ z[sl]
    else:
        shift = _symmetric_root(cov, tol) @ z
    return (flat + shift).reshape(coef.shape)


@dataclass
class BootstrapResult:
    """Combined output of a perturbed-bootstrap run.

    Attributes
    ----------
    alpha : ndarray of shape (p,)
        Original (unperturbed) effect-model coefficients; intervals are
        centered here, not at the draw mean.
    alpha_draws : ndarray of shape (B_ok, p)
        One row per successful replicate.
    fixed_weight_covs : ndarray of shape (B_ok, p, p)
        Fixed-weight sandwich covariance of each replicate.
    total_cov : ndarray of shape (p, p)
        Mean fixed-weight covariance plus the empirical covariance of
        the draws (divisor B_ok - 1).
    n_requested, n_failed : int
        Replicates asked for and excluded; failures are never silent.
    failures : tuple of (replicate index, message)
    """

    alpha: np.ndarray
    column_names: tuple[str, ...]
    alpha_draws: np.ndarray
    fixed_weight_covs: np.ndarray
    mean_fixed_cov: np.ndarray
    between_cov: np.ndarray
    total_cov: np.ndarray
    n_requested: int
    n_failed: int
    failures: tuple[tuple[int, str], ...]
    target_terms: tuple[str, ...]
    seed: int

    @property
    def n_used(self) -> int:
        return self.alpha_draws.shape[0]

    @property
    def se(self) -> np.ndarray:
        """Total (weight-estimation-aware) standard errors."""
        return np.sqrt(np.diag(self.total_cov))

    @property
    def se_fixed(self) -> np.ndarray:
        """Average fixed-weight sandwich standard errors."""
        return np.sqrt(np.diag(self.mean_fixed_cov))

    def term_index(self, term: str) -> int:
        # Interaction labels normalize to sorted factor order, so "t:a"
        # and "a:t" address the same column.
        label = parse_term(term).label() if ":" in term or "(" in term else term
        try:
            return self.column_names.index(label)
        except ValueError:
            raise MissingTermError(
                f"term {term!r} not in the effect model ({', '.join(self.column_names)})"
            ) from None

    def to_dict(self) -> dict:
        terms = {}
        for term in self.target_terms:
            try:
                k = self.term_index(term)
            except MissingTermError:
                continue
            lo, hi = bootstrap_ci(self, term)
            terms[term] = {
                "estimate": float(self.alpha[k]),
                "se_fixed": float(self.se_fixed[k]),
                "se_total": float(self.se[k]),
                "ci": [lo, hi],
            }
        return {
            "n_replicates": self.n_requested,
            "n_used": self.n_used,
            "n_failed": self.n_failed,
            "failures": [list(f) for f in self.failures],
            "seed": self.seed,
            "terms": terms,
        }


def bootstrap_ci(
    result: BootstrapResult, term: str, z: float = Z_95
) -> tuple[float, float]:
    """Normal-theory interval for one term, centered at the estimate.

    Returns
    -------
    (lo, hi) : tuple of float
        ``estimate -/+ z * total se``; degenerate when the se is 0.
    """
    k = result.term_index(term)
    est = float(result.alpha[k])
    half = z * float(result.se[k])
    return est - half, est + half


def _anchored_mean(stack: np.ndarray) -> np.ndarray:
    # Exact when every slice is identical (the zero-covariance case):
    # deviations from the first slice are then exactly zero.
    return stack[0] + (stack - stack[0]).mean(axis=0)


def run_perturbed_bootstrap(
    ds: LongDataset,
    exposure_fit: FittedGlm | None,
    mediator_fits,
    config: BootstrapConfig,
    formula: NemFormula | None = None,
    exposure_mode: str = "ipw",
    expansion: str = "per_time",
    time_codes: str = "index",
) -> BootstrapResult:
    """Run the full perturbed bootstrap for a fitted weight pipeline.

    Parameters
    ----------
    ds : LongDataset
        The analysis data (also used for the baseline fit).
    exposure_fit : FittedGlm or None
        Fitted exposure model; None only with ``exposure_mode="unit"``.
    mediator_fits : sequence of FittedGlm
        Per-time mediator models in time order.
    config : BootstrapConfig
    formula : NemFormula, optional
        Defaults to the five-term per-time formula.
    exposure_mode : str
        ``"ipw"`` or ``"unit"``.
    expansion : str
        ``"per_time"`` (all outcomes) or ``"end_of_study"``.
    time_codes : str
        Passed through to the expansion.

    Returns
    -------
    BootstrapResult

    Raises
    ------
    NotConvergedError
        If fewer than 2 replicates survive.
    """
    if formula is None:
        formula = NemFormula()
    if expansion not in ("per_time", "end_of_study"):
        raise ValueError(f"unknown expansion {expansion!r}")
    mediator_fits = list(mediator_fits)

    wd = build_weight_design(ds, exposure_fit, mediator_fits, exposure_mode)
    exp_coef = exposure_fit.coef if exposure_fit is not None else None
    med_coefs = [fit.coef for fit in mediator_fits]

    def truncate(wt: WeightTable, frozen) -> np.ndarray:
        if config.truncate_q is None:
            return wt.w_total
        if frozen is None:
            return wt.truncate(config.truncate_q, config.truncate_per_time).final()
        if config.truncate_per_time:
            return np.minimum(wt.w_total, np.asarray(frozen)[None, :, None])
        return np.minimum(wt.w_total, frozen)

    def to_vector(cube: np.ndarray) -> np.ndarray:
        if expansion == "per_time":
            return interleaved_weights(cube, wd.A)
        return interleaved_weights_final(cube, wd.A)

    # Baseline pass: original coefficients, fresh truncation threshold.
    base_wt = weights_from_coefs(
        wd, exp_coef, med_coefs, eps=config.eps, on_violation=config.on_violation
    )
    frozen_threshold = None
    if config.truncate_q is not None:
        base_trunc = base_wt.truncate(config.truncate_q, config.truncate_per_time)
        base_cube = base_trunc.final()
        if config.freeze_threshold:
            frozen_threshold = base_trunc.truncation_threshold
        expand = expand_per_time if expansion == "per_time" else expand_end_of_study
        records = expand(ds, base_trunc, time_codes=time_codes)
    else:
        base_cube = base_wt.w_total
        expand = expand_per_time if expansion == "per_time" else expand_end_of_study
        records = expand(ds, base_wt, time_codes=time_codes)
    skel = nem_skeleton(records, formula)
    base_fit = fit_nem_skeleton(skel, to_vector(base_cube), formula)
    alpha0 = base_fit.alpha

    children = np.random.SeedSequence(config.seed).spawn(config.n_replicates)

    def one_replicate(j: int):
        rng = np.random.default_rng(children[j])
        try:
            if exposure_fit is not None:
                exp_draw = perturb_coefficients(
                    exposure_fit, rng, blockwise=config.blockwise
                )
            else:
                exp_draw = None
            med_draws = [
                perturb_coefficients(fit, rng, blockwise=config.blockwise)
                for fit in mediator_fits
            ]
            wt = weights_from_coefs(
                wd, exp_draw, med_draws, eps=config.eps, on_violation=config.on_violation
            )
            cube = truncate(wt, frozen_threshold)
            fit = fit_nem_skeleton(skel, to_vector(cube), formula, start=alpha0)
            return j, fit.alpha, fit.robust_cov, None
        except (LongmedError, np.linalg.LinAlgError, ValueError) as err:
            return j, None, None, f"{type(err).__name__}: {err}"

    indices = range(config.n_replicates)
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(one_replicate, indices))
    else:
        outcomes = [one_replicate(j) for j in indices]

    alphas, covs, failures = [], [], []
    for j, alpha_j, cov_j, err in outcomes:
        if err is None:
            alphas.append(alpha_j)
            covs.append(cov_j)
        else:
            failures.append((j, err))
    if len(alphas) < 2:
        raise NotConvergedError(
            f"perturbed bootstrap: only {len(alphas)} of {config.n_replicates} "
            "replicates succeeded"
        )
    if failures:
        warnings.warn(
            f"perturbed bootstrap: {len(failures)} of {config.n_replicates} "
            "replicates failed and were excluded"
        )

    draws = np.stack(alphas)
    cov_stack = np.stack(covs)
    mean_fixed = _anchored_mean(cov_stack)
    center = _anchored_mean(draws)
    dev = draws - center
    between = (dev.T @ dev) / (len(alphas) - 1)
    total = mean_fixed + between
    return BootstrapResult(
        alpha=alpha0,
        column_names=tuple(base_fit.column_names),
        alpha_draws=draws,
        fixed_weight_covs=cov_stack,
        mean_fixed_cov=mean_fixed,
        between_cov=between,
        total_cov=total,
        n_requested=config.n_replicates,
        n_failed=len(failures),
        failures=tuple(failures),
        target_terms=tuple(config.target_terms),
        seed=config.seed,
    )
