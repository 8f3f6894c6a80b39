"""One-stop estimator wiring the whole weighting pipeline together.

:class:`NaturalEffectsIPW` follows the usual estimator conventions:
construction stores configuration, :meth:`fit` runs validation, nuisance
models, weights, record expansion, and the weighted effect model, leaving
trailing-underscore attributes behind; inspection methods then report
effect decompositions, counterfactual cells, weight diagnostics, and the
perturbed-bootstrap variance.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from .bootstrap import BootstrapConfig, BootstrapResult, run_perturbed_bootstrap
from .dataset import LongDataset, VariableSchema
from .effects import EffectSummary, decompose, effects_frame, probs_frame
from .expand import expand_end_of_study, expand_per_time
from .glm import fit_glm
from .nem import NaturalEffectFit, NemFormula, fit_nem, wald_tests
from .weights import DEFAULT_EPS, compute_weights


class NaturalEffectsIPW(BaseEstimator):
    """Natural direct/indirect effects of a baseline binary exposure.

    The pipeline: fit a logistic exposure model and one (multinomial)
    logistic mediator model per time; convert them to inverse-probability
    exposure weights and cumulative counterfactual mediator weights;
    duplicate every subject-time record for ``a* = A`` and ``a* = 1 - A``;
    fit the natural effect model by weighted estimating equations with a
    cluster-robust sandwich covariance.

    Parameters
    ----------
    schema : VariableSchema or dict, optional
        Variable layout; may instead be passed to :meth:`fit`.
    exposure_terms : sequence of str, optional
        Terms of the exposure model. Default: the baseline columns.
    mediator_terms : sequence of sequences of str, optional
        Terms per time for the mediator models. Default at time t: the
        exposure, baseline columns, confounders up to t, earlier
        mediators as categorical factors, and earlier outcomes.
    formula : NemFormula, optional
        Effect model. Default: ``a + a_star + t + t:a + t:a_star`` with
        more than one time point, ``a + a_star`` with a single one.
    exposure_mode : str, default "ipw"
        ``"ipw"`` weights by inverse exposure probabilities; ``"unit"``
        uses all-ones exposure weights for an effect model that adjusts
        for baseline covariates itself.
    truncate_q : float or None, default None
        Optional weight-truncation quantile in (0, 1].
    truncate_per_time : bool, default False
    expansion : str, default "per_time"
        ``"per_time"`` or ``"end_of_study"``.
    time_codes : str, default "index"
        ``"index"`` codes times 0,1,...; ``"schema"`` keeps schema codes.
    eps : float, default 1e-6
        Positivity tolerance for every probability entering a weight.
    on_violation : str, default "raise"
        ``"raise"`` or ``"warn"`` on positivity violations.
    strict : bool, default True
        Whether dataset validation errors raise immediately.

    Attributes
    ----------
    dataset_ : LongDataset
    exposure_fit_ : FittedGlm or None
    mediator_fits_ : list of FittedGlm
    weights_ : WeightTable
    records_ : DataFrame
        The expanded analysis records.
    nem_ : NaturalEffectFit
    times_ : tuple of float
        Time codes on the effect-model scale.

    Examples
    --------
    >>> est = NaturalEffectsIPW(schema=schema).fit(frame)   # doctest: +SKIP
    >>> est.effects()                                       # doctest: +SKIP
    """

    def __init__(
        self,
        schema=None,
        exposure_terms=None,
        mediator_terms=None,
        formula=None,
        exposure_mode: str = "ipw",
        truncate_q: float | None = None,
        truncate_per_time: bool = False,
        expansion: str = "per_time",
        time_codes: str = "index",
        eps: float = DEFAULT_EPS,
        on_violation: str = "raise",
        strict: bool = True,
    ):
        self.schema = schema
        self.exposure_terms = exposure_terms
        self.mediator_terms = mediator_terms
        self.formula = formula
        self.exposure_mode = exposure_mode
        self.truncate_q = truncate_q
        self.truncate_per_time = truncate_per_time
        self.expansion = expansion
        self.time_codes = time_codes
        self.eps = eps
        self.on_violation = on_violation
        self.strict = strict

    # -- configuration resolution ------------------------------------------

    def _resolve_schema(self, schema) -> VariableSchema:
        s = schema if schema is not None else self.schema
        if s is None:
            raise ValueError("a variable schema is required, in __init__ or fit")
        if isinstance(s, VariableSchema):
            return s
        return VariableSchema.from_dict(dict(s))

    def _default_mediator_terms(self, schema: VariableSchema, t: int) -> tuple[str, ...]:
        terms = [schema.exposure]
        terms += list(schema.baseline_cols)
        for s in range(t + 1):
            terms += list(schema.confounders_at(s))
        for s in range(t):
            m = schema.mediator_cols[s]
            terms.append(f"C({m})" if schema.mediator_levels[s] > 2 else m)
            terms.append(schema.outcome_cols[s])
        return tuple(terms)

    def _resolve_terms(self, schema: VariableSchema):
        exposure_terms = (
            tuple(self.exposure_terms)
            if self.exposure_terms is not None
            else tuple(schema.baseline_cols)
        )
        if self.mediator_terms is not None:
            mediator_terms = [tuple(block) for block in self.mediator_terms]
            if len(mediator_terms) != schema.n_times:
                raise ValueError(
                    f"mediator_terms has {len(mediator_terms)} blocks, "
                    f"schema has {schema.n_times} times"
                )
        else:
            mediator_terms = [
                self._default_mediator_terms(schema, t) for t in range(schema.n_times)
            ]
        return exposure_terms, mediator_terms

    def _resolve_formula(self, schema: VariableSchema) -> NemFormula:
        if self.formula is not None:
            return self.formula
        link = "logit" if schema.outcome_type == "binary" else "identity"
        if schema.n_times > 1 and self.expansion == "per_time":
            return NemFormula(link=link)
        return NemFormula(link=link, terms=("a", "a_star"))

    # -- fitting -----------------------------------------------------------

    def fit(self, data, schema=None) -> "NaturalEffectsIPW":
        """Run the whole pipeline on one dataset.

        Parameters
        ----------
        data : DataFrame or LongDataset
        schema : VariableSchema or dict, optional
            Overrides the constructor schema.

        Returns
        -------
        self
        """
        if isinstance(data, LongDataset):
            ds = data
        else:
            ds = LongDataset.from_frame(
                data, self._resolve_schema(schema), strict=self.strict
            )
        sch = ds.schema
        if self.expansion not in ("per_time", "end_of_study"):
            raise ValueError(f"unknown expansion {self.expansion!r}")
        exposure_terms, mediator_terms = self._resolve_terms(sch)

        if self.exposure_mode == "ipw":
            exposure_fit = fit_glm(
                ds.frame, sch.exposure, exposure_terms, family="binomial"
            )
        elif self.exposure_mode == "unit":
            exposure_fit = None
        else:
            raise ValueError(f"unknown exposure_mode {self.exposure_mode!r}")

        mediator_fits = []
        for t in range(sch.n_times):
            mediator_fits.append(
                fit_glm(
                    ds.frame,
                    sch.mediator_cols[t],
                    mediator_terms[t],
                    family="multinomial",
                    n_levels=sch.mediator_levels[t],
                )
            )

        weights = compute_weights(
            ds,
            exposure_fit,
            mediator_fits,
            exposure_mode=self.exposure_mode,
            eps=self.eps,
            on_violation=self.on_violation,
        )
        if self.truncate_q is not None:
            weights = weights.truncate(self.truncate_q, self.truncate_per_time)

        formula = self._resolve_formula(sch)
        expand = expand_per_time if self.expansion == "per_time" else expand_end_of_study
        records = expand(ds, weights, time_codes=self.time_codes)
        nem = fit_nem(records, formula)

        codes = (
            tuple(range(sch.n_times))
            if self.time_codes == "index"
            else tuple(sch.times)
        )
        self.dataset_ = ds
        self.exposure_terms_ = exposure_terms
        self.mediator_terms_ = [tuple(b) for b in mediator_terms]
        self.exposure_fit_ = exposure_fit
        self.mediator_fits_ = mediator_fits
        self.weights_ = weights
        self.records_ = records
        self.formula_ = formula
        self.nem_ = nem
        self.times_ = codes if self.expansion == "per_time" else (codes[-1],)
        return self

    def _check_fitted(self):
        if not hasattr(self, "nem_"):
            raise AttributeError("this estimator is not fitted yet; call fit first")

    # -- inspection --------------------------------------------------------

    @property
    def alpha_(self) -> np.ndarray:
        self._check_fitted()
        return self.nem_.alpha

    def decompose(self, times=None) -> list[EffectSummary]:
        """Direct/indirect/total decomposition per time."""
        self._check_fitted()
        return decompose(self.nem_, self.times_ if times is None else times)

    def effects(self, times=None) -> pd.DataFrame:
        """Effect decomposition as a flat frame."""
        return effects_frame(self.decompose(times))

    def counterfactuals(self, times=None) -> pd.DataFrame:
        """Fitted counterfactual cells as a (t, a, a_star, p) frame."""
        return probs_frame(self.decompose(times))

    def coefficients(self) -> pd.DataFrame:
        """Effect-model coefficients with robust Wald tests."""
        self._check_fitted()
        return wald_tests(self.nem_)

    def weight_summary(self, bins: int = 20):
        """Stats and histogram frames for the combined weights."""
        self._check_fitted()
        return self.weights_.summary_frame(bins=bins)

    def bootstrap(self, config: BootstrapConfig) -> BootstrapResult:
        """Perturbed-bootstrap covariance for the fitted pipeline.

        A config without its own truncation inherits the estimator's.
        """
        self._check_fitted()
        if config.truncate_q is None and self.truncate_q is not None:
            config = dataclasses.replace(
                config,
                truncate_q=self.truncate_q,
                truncate_per_time=self.truncate_per_time,
            )
        return run_perturbed_bootstrap(
            self.dataset_,
            self.exposure_fit_,
            self.mediator_fits_,
            config,
            formula=self.formula_,
            exposure_mode=self.exposure_mode,
            expansion=self.expansion,
            time_codes=self.time_codes,
        )
