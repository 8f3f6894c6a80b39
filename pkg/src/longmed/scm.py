"""Structural models: simulation and exact counterfactual oracles.

A :class:`StructuralModel` lists variables in causal order with explicit
conditional distributions: normal roots, Bernoulli or categorical nodes with
logit-linear parameters, or explicit probability tables. Roles tie variables
to the longitudinal layout (baseline block, exposure, then per-time
confounder / mediator / outcome blocks), so simulated draws come back as a
ready-to-validate :class:`~longmed.dataset.LongDataset`.

Two independent oracle routes compute nested-counterfactual means on fully
discrete models. ``gformula_value`` enumerates every history, conditioning
mediators on the counterfactual exposure ``a*`` and everything else on
``a``. ``ipw_population_value`` takes the entirely different route of
weighting the observational joint by true inverse-probability weights; the
two agreeing is the identification identity the estimator rests on, so the
implementations deliberately share no intermediate algebra. Normal root
variables are handled in oracle mode by 64-node Gauss-Hermite quadrature,
accurate far beyond the oracle comparison tolerances used in the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import logit as _logit

from .dataset import LongDataset, VariableSchema
from .exceptions import (
    InvalidModelError,
    NonDiscreteError,
    PositivityViolationError,
    StateSpaceTooLargeError,
)
from .glm import probs_from_coef

_GH_NODES = 64
DEFAULT_MAX_STATES = 1_000_000


def _gh_points(mean: float, sd: float) -> tuple[np.ndarray, np.ndarray]:
    # Gauss-Hermite abscissas rescaled for a N(mean, sd^2) integrand.
    x, w = np.polynomial.hermite.hermgauss(_GH_NODES)
    points = mean + sd * math.sqrt(2.0) * x
    probs = w / math.sqrt(math.pi)
    return points, probs / probs.sum()


@dataclass(frozen=True)
class Variable:
    """One node of the structural model.

    Exactly one parameterization applies per distribution:

    * ``dist="normal"``: a root (no parents) with ``mean`` and ``sd``;
    * ``dist="bernoulli"``: logit-linear ``intercept`` + ``coef`` over the
      parents, or an explicit ``table``;
    * ``dist="categorical"``: ``n_levels`` levels coded ``0..K-1`` with
      baseline-category logits (``intercept`` length K-1, ``coef`` shape
      (K-1, n_parents)), or an explicit ``table``.

    Tables have one row per parent combination in C order (first parent
    slowest) and one column per level; rows sum to 1.
    """

    name: str
    dist: str
    parents: tuple[str, ...] = ()
    n_levels: int = 2
    intercept: tuple[float, ...] | float | None = None
    coef: tuple = ()
    table: tuple[tuple[float, ...], ...] | None = None
    mean: float = 0.0
    sd: float = 1.0

    @property
    def discrete(self) -> bool:
        return self.dist in ("bernoulli", "categorical")

    def coef_matrix(self) -> np.ndarray:
        """Logit-linear parameters as a (K-1, 1 + n_parents) matrix."""
        K = self.n_levels
        intercept = np.atleast_1d(np.asarray(self.intercept, dtype=float))
        coef = np.asarray(self.coef, dtype=float).reshape(K - 1, len(self.parents))
        return np.column_stack([intercept, coef])


@dataclass(frozen=True)
class OracleValue:
    """Exact nested-counterfactual mean E[Y at time t under (a, a*)]."""

    t: int
    a: int
    a_star: int
    value: float


@dataclass
class TrueEffects:
    """Oracle counterfactual cells and log-odds contrasts per time."""

    times: tuple[int, ...]
    p: dict
    direct_log: dict
    indirect_log: dict

    def total_log(self, t: int) -> float:
        return self.direct_log[t] + self.indirect_log[t]

    def frame(self) -> pd.DataFrame:
        rows = []
        for t in self.times:
            for (a, a_star) in ((0, 0), (1, 0), (0, 1), (1, 1)):
                rows.append((t, a, a_star, self.p[(t, a, a_star)]))
        return pd.DataFrame(rows, columns=["t", "a", "a_star", "p"])


class StructuralModel:
    """An explicit discrete-or-normal-root structural equation model.

    Parameters
    ----------
    variables : sequence of Variable
        In causal (topological) order; every parent must be declared
        before its child.
    roles : dict
        Keys ``exposure`` (str), ``mediators``, ``outcomes`` (lists, one
        per time), ``baseline`` (list), ``confounders`` (list of per-time
        lists, optional), ``times`` (list of time codes), and optional
        ``id`` (default ``"id"``).

    Raises
    ------
    InvalidModelError
        If the description is malformed or inconsistent.
    """

    def __init__(self, variables, roles: dict):
        self.variables = tuple(variables)
        self.roles = dict(roles)
        self._by_name = {v.name: v for v in self.variables}
        self._index = {v.name: i for i, v in enumerate(self.variables)}
        self._validate()

    def _problem(self, problems: list, text: str) -> None:
        problems.append(text)

    def _validate(self) -> None:
        problems: list[str] = []
        if len(self._by_name) != len(self.variables):
            problems.append("duplicate variable names")
        for i, v in enumerate(self.variables):
            for p in v.parents:
                if p not in self._index:
                    problems.append(f"{v.name}: unknown parent {p!r}")
                elif self._index[p] >= i:
                    problems.append(f"{v.name}: parent {p!r} not declared before it")
            if v.dist == "normal":
                if v.parents:
                    problems.append(f"{v.name}: normal variables must be roots")
                if v.sd <= 0:
                    problems.append(f"{v.name}: sd must be positive")
            elif v.dist in ("bernoulli", "categorical"):
                K = v.n_levels
                if v.dist == "bernoulli" and K != 2:
                    problems.append(f"{v.name}: bernoulli has 2 levels")
                if K < 2:
                    problems.append(f"{v.name}: needs at least 2 levels")
                if (v.table is None) == (v.intercept is None):
                    problems.append(
                        f"{v.name}: give either logit-linear parameters or a table"
                    )
                elif v.table is not None:
                    table = np.asarray(v.table, dtype=float)
                    dims = []
                    for p in v.parents:
                        parent = self._by_name.get(p)
                        if parent is not None and not parent.discrete:
                            problems.append(
                                f"{v.name}: table parent {p!r} is not discrete"
                            )
                        elif parent is not None:
                            dims.append(parent.n_levels)
                    expected = int(np.prod(dims)) if dims else 1
                    if table.shape != (expected, K):
                        problems.append(
                            f"{v.name}: table shape {table.shape} != ({expected}, {K})"
                        )
                    elif (table < 0).any() or np.abs(table.sum(axis=1) - 1).max() > 1e-9:
                        problems.append(f"{v.name}: table rows must be probabilities")
                else:
                    try:
                        v.coef_matrix()
                    except (ValueError, TypeError):
                        problems.append(f"{v.name}: malformed logit-linear parameters")
            else:
                problems.append(f"{v.name}: unknown distribution {v.dist!r}")

        r = self.roles
        try:
            exposure = r["exposure"]
            mediators = list(r["mediators"])
            outcomes = list(r["outcomes"])
            times = list(r["times"])
        except KeyError as err:
            raise InvalidModelError(f"roles missing key {err.args[0]!r}") from None
        baseline = list(r.get("baseline", ()))
        confounders = [list(b) for b in r.get("confounders", ())]
        named = (
            [exposure]
            + mediators
            + outcomes
            + baseline
            + [c for b in confounders for c in b]
        )
        for name in named:
            if name not in self._index:
                problems.append(f"roles reference unknown variable {name!r}")
        if problems:
            raise InvalidModelError("; ".join(problems))
        if len(mediators) != len(times) or len(outcomes) != len(times):
            problems.append("need one mediator and one outcome per time")
        if confounders and len(confounders) != len(times):
            problems.append("need one confounder block per time when given")
        if problems:
            # The per-time order checks below index into these lists, so a
            # count mismatch must stop here.
            raise InvalidModelError("; ".join(problems))
        exp_var = self._by_name[exposure]
        if exp_var.dist != "bernoulli":
            problems.append("exposure must be bernoulli")
        for m in mediators:
            if not self._by_name[m].discrete:
                problems.append(f"mediator {m!r} must be discrete")
        # Declaration order must follow the longitudinal layout: baseline,
        # exposure, then per-time confounders, mediator, outcome.
        pos = self._index
        for b in baseline:
            if pos[b] >= pos[exposure]:
                problems.append(f"baseline {b!r} must precede the exposure")
        previous = pos[exposure]
        for t_idx in range(len(times)):
            block = (confounders[t_idx] if confounders else []) + [
                mediators[t_idx],
                outcomes[t_idx],
            ]
            for name in block:
                if pos[name] <= previous:
                    problems.append(
                        f"{name!r} out of order for time index {t_idx}"
                    )
                previous = max(previous, pos[name])
        if problems:
            raise InvalidModelError("; ".join(problems))

    # -- bookkeeping -------------------------------------------------------

    @property
    def exposure(self) -> str:
        return self.roles["exposure"]

    @property
    def mediators(self) -> list:
        return list(self.roles["mediators"])

    @property
    def outcomes(self) -> list:
        return list(self.roles["outcomes"])

    @property
    def times(self) -> list:
        return list(self.roles["times"])

    def schema(self) -> VariableSchema:
        """The variable schema simulated datasets conform to."""
        outcome_vars = [self._by_name[o] for o in self.outcomes]
        outcome_type = (
            "binary" if all(v.dist == "bernoulli" for v in outcome_vars) else "continuous"
        )
        confounders = tuple(
            tuple(block) for block in self.roles.get("confounders", ())
        )
        return VariableSchema(
            id_col=self.roles.get("id", "id"),
            exposure=self.exposure,
            times=tuple(int(t) for t in self.times),
            mediator_cols=tuple(self.mediators),
            outcome_cols=tuple(self.outcomes),
            mediator_levels=tuple(self._by_name[m].n_levels for m in self.mediators),
            baseline_cols=tuple(self.roles.get("baseline", ())),
            confounder_cols=confounders,
            outcome_type=outcome_type,
        )

    def _parent_dims(self, v: Variable) -> tuple[int, ...]:
        return tuple(self._by_name[p].n_levels for p in v.parents)

    def _cond_probs(self, v: Variable, parent_columns: dict) -> np.ndarray:
        """Vectorized level probabilities, shape (n, K)."""
        if v.table is not None:
            table = np.asarray(v.table, dtype=float)
            if not v.parents:
                n = 1
                for values in parent_columns.values():
                    n = len(np.atleast_1d(values))
                    break
                if parent_columns:
                    return np.broadcast_to(table[0], (n, v.n_levels)).copy()
                return table[0][None, :]
            codes = tuple(
                np.atleast_1d(np.asarray(parent_columns[p])).astype(int)
                for p in v.parents
            )
            rows = np.ravel_multi_index(codes, self._parent_dims(v))
            return table[rows]
        n = 1
        for p in v.parents:
            n = len(np.atleast_1d(np.asarray(parent_columns[p])))
            break
        X = np.column_stack(
            [np.ones(n)]
            + [
                np.atleast_1d(np.asarray(parent_columns[p], dtype=float))
                for p in v.parents
            ]
        )
        return probs_from_coef(X, v.coef_matrix())

    # -- simulation --------------------------------------------------------

    def simulate(self, n: int, seed, strict: bool = True) -> LongDataset:
        """Draw ``n`` independent subjects in declaration order.

        Parameters
        ----------
        n : int
        seed : int or numpy SeedSequence/Generator
        strict : bool, default True
            Whether the resulting frame is validated strictly.

        Returns
        -------
        LongDataset
        """
        rng = np.random.default_rng(seed)
        columns: dict[str, np.ndarray] = {}
        for v in self.variables:
            if v.dist == "normal":
                columns[v.name] = rng.normal(v.mean, v.sd, size=n)
                continue
            probs = self._cond_probs(v, {p: columns[p] for p in v.parents})
            if probs.shape[0] == 1 and n > 1:
                probs = np.broadcast_to(probs, (n, v.n_levels))
            u = rng.random(n)
            cum = np.cumsum(probs, axis=1)
            columns[v.name] = (u[:, None] < cum).argmax(axis=1)
        schema = self.schema()
        frame = pd.DataFrame({schema.id_col: np.arange(n)})
        for v in self.variables:
            frame[v.name] = columns[v.name]
        return LongDataset.from_frame(frame, schema, strict=strict)

    # -- exact oracles -----------------------------------------------------

    def _oracle_support(self, v: Variable):
        if v.discrete:
            return np.arange(v.n_levels), None
        if v.dist == "normal":
            return _gh_points(v.mean, v.sd)
        raise NonDiscreteError(f"{v.name}: no oracle support for {v.dist!r}")

    def _enumeration_plan(self, target: str, include_exposure: bool, max_states: int):
        limit = self._index[target]
        plan = []
        total_states = 1
        for v in self.variables[:limit]:
            if v.name == self.exposure and not include_exposure:
                continue
            support, root_probs = self._oracle_support(v)
            if v.dist == "normal" and v.parents:
                raise NonDiscreteError(f"{v.name}: normal non-root in oracle")
            plan.append((v, support, root_probs))
            total_states *= len(support)
            if total_states > max_states:
                raise StateSpaceTooLargeError(
                    f"enumeration needs more than {max_states} states"
                )
        return plan

    def _probs_at(self, v: Variable, assignment: dict, cache: dict):
        key = (v.name, tuple(assignment[p] for p in v.parents))
        hit = cache.get(key)
        if hit is None:
            hit = self._cond_probs(v, {p: np.array([assignment[p]]) for p in v.parents})[0]
            cache[key] = hit
        return hit

    def gformula_value(
        self,
        t_index: int,
        a: int,
        a_star: int,
        max_states: int = DEFAULT_MAX_STATES,
    ) -> OracleValue:
        """Exact mediation g-formula value of E[Y at ``t_index``].

        Mediator conditionals see exposure ``a_star``; every other
        conditional (confounders, prior outcomes, the target outcome) sees
        ``a``. Computed by exhaustive enumeration of all histories.

        Raises
        ------
        NonDiscreteError, StateSpaceTooLargeError
        """
        target_name = self.outcomes[t_index]
        target = self._by_name[target_name]
        mediator_names = set(self.mediators)
        plan = self._enumeration_plan(target_name, include_exposure=False, max_states=max_states)
        cache: dict = {}
        exposure = self.exposure
        target_support, _ = self._oracle_support(target)

        def exposure_value_for(v: Variable) -> float:
            return float(a_star if v.name in mediator_names else a)

        total = 0.0
        assignment: dict = {}

        def recurse(i: int, prob: float) -> None:
            nonlocal total
            if i == len(plan):
                assignment[exposure] = exposure_value_for(target)
                p_y = self._probs_at(target, assignment, cache)
                total += prob * float(p_y @ target_support)
                return
            v, support, root_probs = plan[i]
            if root_probs is not None:
                level_probs = root_probs
            else:
                assignment[exposure] = exposure_value_for(v)
                level_probs = self._probs_at(v, assignment, cache)
            for value, p in zip(support, level_probs):
                if p == 0.0:
                    continue
                assignment[v.name] = value
                recurse(i + 1, prob * p)

        recurse(0, 1.0)
        return OracleValue(t=t_index, a=a, a_star=a_star, value=total)

    def ipw_population_value(
        self,
        t_index: int,
        a: int,
        a_star: int,
        max_states: int = DEFAULT_MAX_STATES,
    ) -> float:
        """E[Y * I(A=a) * W] over the observational joint, exactly.

        ``W`` multiplies the true inverse exposure probability by the true
        cumulative mediator probability ratio for ``a_star``. No algebraic
        cancellation with the g-formula route is performed; the two
        agreeing is the identification identity.

        Raises
        ------
        PositivityViolationError
            If a weight denominator is zero on a positive-probability
            history.
        """
        target_name = self.outcomes[t_index]
        target = self._by_name[target_name]
        mediator_names = set(self.mediators)
        plan = self._enumeration_plan(target_name, include_exposure=True, max_states=max_states)
        cache: dict = {}
        exposure = self.exposure
        target_support, _ = self._oracle_support(target)

        total = 0.0
        assignment: dict = {}

        def recurse(i: int, prob: float, weight: float) -> None:
            nonlocal total
            if i == len(plan):
                p_y = self._probs_at(target, assignment, cache)
                total += prob * weight * float(p_y @ target_support)
                return
            v, support, root_probs = plan[i]
            if v.name == exposure:
                probs = self._probs_at(v, assignment, cache)
                p_arm = float(probs[a])
                if p_arm == 0.0:
                    raise PositivityViolationError(
                        f"P({exposure}={a}) is zero on a support point"
                    )
                assignment[v.name] = float(a)
                recurse(i + 1, prob * p_arm, weight / p_arm)
                return
            if root_probs is not None:
                for value, p in zip(support, root_probs):
                    if p == 0.0:
                        continue
                    assignment[v.name] = value
                    recurse(i + 1, prob * p, weight)
                return
            probs_obs = self._probs_at(v, assignment, cache)
            if v.name in mediator_names:
                held = assignment.get(exposure)
                assignment[exposure] = float(a_star)
                probs_cf = self._probs_at(v, assignment, cache)
                assignment[exposure] = held
                for value in support:
                    den = float(probs_obs[int(value)])
                    num = float(probs_cf[int(value)])
                    if den == 0.0:
                        if num > 0.0 and prob > 0.0:
                            raise PositivityViolationError(
                                f"P({v.name}={int(value)}|A={a}) is zero where the "
                                f"a*={a_star} path has mass"
                            )
                        continue
                    assignment[v.name] = value
                    recurse(i + 1, prob * den, weight * (num / den))
                return
            for value in support:
                p = float(probs_obs[int(value)])
                if p == 0.0:
                    continue
                assignment[v.name] = value
                recurse(i + 1, prob * p, weight)

        recurse(0, 1.0, 1.0)
        return total

    def true_effects(
        self, times=None, max_states: int = DEFAULT_MAX_STATES
    ) -> TrueEffects:
        """Oracle counterfactual cells and log-OR contrasts per time index.

        The direct contrast at ``t`` compares exposures with the mediator
        course held at its unexposed value; the indirect contrast shifts
        the mediator course under exposure.
        """
        if times is None:
            times = tuple(range(len(self.outcomes)))
        p = {}
        direct = {}
        indirect = {}
        for t in times:
            for a, a_star in ((0, 0), (1, 0), (0, 1), (1, 1)):
                p[(t, a, a_star)] = self.gformula_value(
                    t, a, a_star, max_states=max_states
                ).value
            direct[t] = float(_logit(p[(t, 1, 0)]) - _logit(p[(t, 0, 0)]))
            indirect[t] = float(_logit(p[(t, 1, 1)]) - _logit(p[(t, 1, 0)]))
        return TrueEffects(
            times=tuple(times), p=p, direct_log=direct, indirect_log=indirect
        )

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        out = []
        for v in self.variables:
            entry: dict = {"name": v.name, "dist": v.dist}
            if v.parents:
                entry["parents"] = list(v.parents)
            if v.dist == "normal":
                entry["mean"] = v.mean
                entry["sd"] = v.sd
            else:
                entry["n_levels"] = v.n_levels
                if v.table is not None:
                    entry["table"] = [list(row) for row in v.table]
                else:
                    entry["intercept"] = (
                        list(np.atleast_1d(np.asarray(v.intercept, dtype=float)))
                    )
                    entry["coef"] = [
                        list(row)
                        for row in np.asarray(v.coef, dtype=float).reshape(
                            v.n_levels - 1, len(v.parents)
                        )
                    ]
            out.append(entry)
        return {"variables": out, "roles": self.roles}

    @classmethod
    def from_dict(cls, spec: dict) -> "StructuralModel":
        """Build a model from a plain dict, e.g. parsed .json."""
        try:
            variables = []
            for entry in spec["variables"]:
                dist = entry["dist"]
                common = {
                    "name": entry["name"],
                    "dist": dist,
                    "parents": tuple(entry.get("parents", ())),
                }
                if dist == "normal":
                    variables.append(
                        Variable(**common, mean=float(entry.get("mean", 0.0)),
                                 sd=float(entry.get("sd", 1.0)))
                    )
                else:
                    table = entry.get("table")
                    variables.append(
                        Variable(
                            **common,
                            n_levels=int(entry.get("n_levels", 2)),
                            intercept=(
                                tuple(np.atleast_1d(entry["intercept"]).tolist())
                                if "intercept" in entry
                                else None
                            ),
                            coef=tuple(
                                tuple(row) for row in entry.get("coef", ())
                            ),
                            table=(
                                tuple(tuple(row) for row in table)
                                if table is not None
                                else None
                            ),
                        )
                    )
            return cls(variables, spec["roles"])
        except (KeyError, TypeError, ValueError) as err:
            raise InvalidModelError(f"malformed model description: {err}") from None

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def load_model(path) -> StructuralModel:
    """Read a model description from JSON."""
    with open(path) as fh:
        return StructuralModel.from_dict(json.load(fh))


def _bern(name, parents, intercept, coef) -> Variable:
    return Variable(
        name=name,
        dist="bernoulli",
        parents=tuple(parents),
        intercept=(float(intercept),),
        coef=((tuple(float(c) for c in coef)),),
    )


def preset_model(name: str) -> StructuralModel:
    """Shipped example models.

    ``single_mediator``
        One time point: normal and Bernoulli baseline covariates, binary
        exposure, one binary mediator, one binary outcome, with small
        logit-linear coefficients.
    ``longitudinal_t2_binary``
        Two time points, all binary, with an exposure-induced confounder
        and prior outcomes feeding later mediators.
    """
    if name == "single_mediator":
        variables = [
            Variable(name="C1", dist="normal", mean=0.0, sd=1.0),
            Variable(name="C2", dist="bernoulli", table=((0.6, 0.4),)),
            _bern("A", ("C1", "C2"), 0.05, (0.1, 0.2)),
            _bern("M", ("A", "C1", "C2"), 0.05, (0.1, -0.1, -0.2)),
            _bern("Y", ("A", "M", "C1", "C2"), 0.05, (0.1, 0.1, -0.1, -0.2)),
        ]
        roles = {
            "id": "id",
            "exposure": "A",
            "baseline": ["C1", "C2"],
            "mediators": ["M"],
            "outcomes": ["Y"],
            "times": [0],
        }
        return StructuralModel(variables, roles)
    if name == "longitudinal_t2_binary":
        variables = [
            Variable(name="L0", dist="bernoulli", table=((0.5, 0.5),)),
            _bern("A", ("L0",), -0.2, (0.4,)),
            _bern("M0", ("A", "L0"), -0.3, (0.8, 0.4)),
            _bern("Y0", ("A", "M0", "L0"), -0.5, (0.4, 0.6, 0.3)),
            _bern("L1", ("A", "M0", "Y0", "L0"), -0.2, (0.3, 0.4, 0.3, 0.2)),
            _bern("M1", ("A", "M0", "L1", "Y0", "L0"), -0.4, (0.7, 0.5, 0.4, 0.2, 0.2)),
            _bern(
                "Y1",
                ("A", "M1", "M0", "L1", "Y0", "L0"),
                -0.6,
                (0.5, 0.5, 0.3, 0.4, 0.3, 0.2),
            ),
        ]
        roles = {
            "id": "id",
            "exposure": "A",
            "baseline": ["L0"],
            "confounders": [[], ["L1"]],
            "mediators": ["M0", "M1"],
            "outcomes": ["Y0", "Y1"],
            "times": [0, 1],
        }
        return StructuralModel(variables, roles)
    raise InvalidModelError(
        f"unknown preset {name!r}; available: single_mediator, longitudinal_t2_binary"
    )
