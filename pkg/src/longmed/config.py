"""Run configuration for the command-line pipeline.

A run is described by one YAML mapping; command-line flags override single
entries. The ``schema`` section uses the same keys as
:meth:`~longmed.dataset.VariableSchema.from_dict`, the optional ``formula``
section holds ``link`` and ``terms``, and the ``bootstrap`` section holds
``b``, ``seed``, and the perturbation knobs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import yaml

from .bootstrap import BootstrapConfig
from .dataset import VariableSchema
from .exceptions import DataError
from .nem import NemFormula
from .weights import DEFAULT_EPS

_KNOWN_KEYS = {
    "command",
    "data",
    "out",
    "schema",
    "exposure_terms",
    "mediator_terms",
    "formula",
    "exposure_mode",
    "expansion",
    "time_codes",
    "truncate",
    "truncate_per_time",
    "eps",
    "on_violation",
    "bootstrap",
    "model",
    "preset",
    "n",
    "seed",
    "threads",
}


@dataclass
class RunConfig:
    """Everything one command needs, with unset entries left None.

    Attributes
    ----------
    data, out : str or None
        Input CSV path and output directory.
    schema : dict or None
        Variable layout section.
    exposure_terms, mediator_terms : list or None
        Nuisance-model term lists (mediator terms: one list per time).
    formula : dict or None
        ``{"link": ..., "terms": [...]}`` for the effect model.
    truncate : float or None
        Weight-truncation quantile.
    bootstrap : dict or None
        ``{"b": ..., "seed": ..., ...}``.
    model, preset : str or None
        Structural-model JSON path, or shipped preset name.
    n, seed : int or None
        Simulation size and seed.
    source_text : str or None
        Verbatim text of the loaded config file, echoed to the output
        directory for provenance.
    """

    data: str | None = None
    out: str | None = None
    schema: dict | None = None
    exposure_terms: list | None = None
    mediator_terms: list | None = None
    formula: dict | None = None
    exposure_mode: str = "ipw"
    expansion: str = "per_time"
    time_codes: str = "index"
    truncate: float | None = None
    truncate_per_time: bool = False
    eps: float = DEFAULT_EPS
    on_violation: str = "raise"
    bootstrap: dict | None = None
    model: str | None = None
    preset: str | None = None
    n: int | None = None
    seed: int | None = None
    threads: int = 1
    source_text: str | None = field(default=None, repr=False)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        unknown = sorted(set(raw) - _KNOWN_KEYS)
        if unknown:
            raise DataError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {
            f.name: raw[f.name]
            for f in fields(cls)
            if f.name in raw and f.name != "source_text"
        }
        return cls(**kwargs)

    def apply_overrides(self, **overrides) -> "RunConfig":
        """Non-None overrides win over file values; returns a copy."""
        updates = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **updates)

    # -- typed views -------------------------------------------------------

    def variable_schema(self) -> VariableSchema:
        if self.schema is None:
            raise DataError("config has no schema section")
        return VariableSchema.from_dict(self.schema)

    def nem_formula(self) -> NemFormula | None:
        if self.formula is None:
            return None
        link = self.formula.get("link", "logit")
        terms = self.formula.get("terms")
        if terms is None:
            return NemFormula(link=link)
        return NemFormula(link=link, terms=tuple(terms))

    def bootstrap_config(self) -> BootstrapConfig:
        section = dict(self.bootstrap or {})
        if "b" not in section:
            raise DataError("bootstrap needs 'b' (replication count) in the config")
        if "seed" not in section:
            raise DataError("bootstrap needs 'seed' in the config")
        return BootstrapConfig(
            n_replicates=int(section["b"]),
            seed=int(section["seed"]),
            target_terms=tuple(
                section.get("target_terms", ("a", "a_star", "t:a", "t:a_star"))
            ),
            truncate_q=self.truncate,
            truncate_per_time=self.truncate_per_time,
            freeze_threshold=bool(section.get("freeze_threshold", False)),
            blockwise=bool(section.get("blockwise", False)),
            threads=int(section.get("threads", self.threads)),
            eps=self.eps,
            on_violation=self.on_violation,
        )


def load_config(path) -> RunConfig:
    """Parse a YAML config file, keeping its verbatim text for echoing."""
    with open(path) as fh:
        text = fh.read()
    raw = yaml.safe_load(text)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise DataError(f"config root must be a mapping, got {type(raw).__name__}")
    config = RunConfig.from_dict(raw)
    config.source_text = text
    return config
