"""Design matrices from a small term language.

A model is declared as a list of term strings. Each term is a ``:``-separated
product of factors, where a factor is either a bare numeric column name
(``"age"``) or a categorical wrapper (``"C(m1)"``). Categorical factors expand
into indicator columns against their first (reference) level; an interaction
term is the elementwise product of its factors' columns. The intercept is
always included and its column is named ``const``.

Terms are normalized so that factor order inside a term does not matter:
``"a:t"`` and ``"t:a"`` denote the same term.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    MissingTermError,
    RankDeficientError,
    SchemaMismatchError,
)

_FACTOR_RE = re.compile(r"^C\(\s*([A-Za-z_]\w*)\s*\)$|^([A-Za-z_]\w*)$")


@dataclass(frozen=True, order=True)
class Factor:
    """One multiplicand of a term: a column, possibly categorical."""

    name: str
    categorical: bool


@dataclass(frozen=True)
class Term:
    """A product of factors, stored in sorted normalized order."""

    factors: tuple[Factor, ...]

    def label(self) -> str:
        return ":".join(
            f"C({f.name})" if f.categorical else f.name for f in self.factors
        )


def parse_term(text: str) -> Term:
    """Parse one term string into its normalized :class:`Term`.

    Parameters
    ----------
    text : str
        A ``:``-separated product of factors, e.g. ``"a:t"`` or ``"C(m1)"``.

    Returns
    -------
    Term
        The parsed term with factors sorted by name.

    Raises
    ------
    ValueError
        If the string is not a valid term.
    """
    factors = []
    for piece in text.split(":"):
        piece = piece.strip()
        match = _FACTOR_RE.match(piece)
        if match is None:
            raise ValueError(f"cannot parse term factor {piece!r}")
        if match.group(1) is not None:
            factors.append(Factor(match.group(1), True))
        else:
            factors.append(Factor(match.group(2), False))
    if not factors:
        raise ValueError(f"empty term {text!r}")
    seen = set()
    for f in factors:
        if f in seen:
            raise ValueError(f"factor {f.name!r} repeated within term {text!r}")
        seen.add(f)
    return Term(tuple(sorted(factors)))


def parse_terms(texts: list[str] | tuple[str, ...]) -> tuple[Term, ...]:
    """Parse a term list, dropping duplicates while preserving order."""
    out: list[Term] = []
    for text in texts:
        term = parse_term(text)
        if term not in out:
            out.append(term)
    return tuple(out)


@dataclass
class DesignInfo:
    """A frozen design: terms plus the categorical levels seen at fit time.

    Attributes
    ----------
    terms : tuple of Term
        Normalized terms, intercept excluded.
    levels : dict
        For each categorical factor name, the tuple of levels frozen at
        build time. The first level is the reference.
    column_names : tuple of str
        Names of the design columns, ``const`` first.
    """

    terms: tuple[Term, ...]
    levels: dict[str, tuple[int, ...]]
    column_names: tuple[str, ...]

    @property
    def n_columns(self) -> int:
        return len(self.column_names)

    def matrix(self, data) -> np.ndarray:
        """Build the design matrix for ``data`` under this frozen design.

        Parameters
        ----------
        data : mapping of str to array-like
            Column store, e.g. a :class:`pandas.DataFrame`.

        Returns
        -------
        ndarray of shape (n, n_columns)

        Raises
        ------
        MissingTermError
            If a term references a column absent from ``data``.
        SchemaMismatchError
            If a categorical column contains a level not seen at build time.
        """
        names, cols = _build_columns(data, self.terms, self.levels)
        if tuple(names) != self.column_names:
            raise SchemaMismatchError(
                f"design columns changed: expected {self.column_names}, got {tuple(names)}"
            )
        return np.column_stack(cols) if cols else np.empty((_n_rows(data), 0))


def build_design(
    data,
    terms: tuple[Term, ...] | list[str],
    levels: dict[str, tuple[int, ...]] | None = None,
    check_rank: bool = True,
) -> tuple[DesignInfo, np.ndarray]:
    """Freeze a design on ``data`` and return it with its matrix.

    Parameters
    ----------
    data : mapping of str to array-like
        Column store, e.g. a :class:`pandas.DataFrame`.
    terms : sequence of Term or of str
        Model terms, intercept excluded (it is added automatically).
    levels : dict, optional
        Pre-declared levels for categorical factors. Factors not listed
        have their levels frozen from the sorted unique values observed.
    check_rank : bool, default True
        Whether to verify the matrix has full column rank.

    Returns
    -------
    info : DesignInfo
    X : ndarray of shape (n, p)

    Raises
    ------
    MissingTermError
        If a term references a column absent from ``data``.
    RankDeficientError
        If ``check_rank`` and the matrix is column rank deficient.
    """
    if terms and isinstance(terms[0], str):
        terms = parse_terms(terms)
    terms = tuple(terms)
    frozen: dict[str, tuple[int, ...]] = dict(levels or {})
    for term in terms:
        for factor in term.factors:
            if factor.categorical and factor.name not in frozen:
                if factor.name not in data:
                    raise MissingTermError(f"column {factor.name!r} not in data")
                observed = np.unique(np.asarray(data[factor.name]))
                frozen[factor.name] = tuple(int(v) for v in observed)
    names, cols = _build_columns(data, terms, frozen)
    X = np.column_stack(cols)
    info = DesignInfo(terms=terms, levels=frozen, column_names=tuple(names))
    if check_rank:
        rank = np.linalg.matrix_rank(X)
        if rank < X.shape[1]:
            raise RankDeficientError(
                f"design matrix has rank {rank} but {X.shape[1]} columns"
            )
    return info, X


def _n_rows(data) -> int:
    for name in data:
        return len(np.asarray(data[name]))
    return 0


def _factor_columns(data, factor: Factor, levels) -> list[tuple[str, np.ndarray]]:
    if factor.name not in data:
        raise MissingTermError(f"column {factor.name!r} not in data")
    values = np.asarray(data[factor.name])
    if not factor.categorical:
        return [(factor.name, values.astype(float))]
    frozen = levels.get(factor.name)
    if frozen is None:
        frozen = tuple(int(v) for v in np.unique(values))
    unseen = np.setdiff1d(np.unique(values), np.asarray(frozen))
    if unseen.size:
        raise SchemaMismatchError(
            f"column {factor.name!r} has unseen levels {unseen.tolist()}; "
            f"frozen levels are {list(frozen)}"
        )
    return [
        (f"C({factor.name})[{level}]", (values == level).astype(float))
        for level in frozen[1:]
    ]


def _build_columns(data, terms, levels):
    n = _n_rows(data)
    names: list[str] = ["const"]
    cols: list[np.ndarray] = [np.ones(n)]
    for term in terms:
        per_factor = [_factor_columns(data, f, levels) for f in term.factors]
        for combo in itertools.product(*per_factor):
            names.append(":".join(name for name, _ in combo))
            col = np.ones(n)
            for _, values in combo:
                col = col * values
            cols.append(col)
    return names, cols
