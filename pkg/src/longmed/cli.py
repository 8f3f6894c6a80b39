"""Command-line entry point.

Four subcommands cover the pipeline end to end:

``longmed fit``
    Validate data, fit nuisance models, build weights, expand records,
    fit the effect model; writes ``fit.json``, ``effects.csv``,
    ``probs.csv``, ``weights_summary.csv``, ``weights_hist.csv``.
``longmed bootstrap``
    Everything ``fit`` does, then the perturbed bootstrap; adds
    ``bootstrap.json``.
``longmed simulate``
    Draw a dataset from a structural model; writes ``data.csv``.
``longmed oracle``
    Exact counterfactual cells and contrasts; writes ``oracle.json``.

Every command echoes the config into the output directory and is
deterministic given (config, seed). Exit codes: 0 on success, 2 for input
errors, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .dataset import load_dataset
from .estimator import NaturalEffectsIPW
from .exceptions import DataError, NumericalError
from .scm import StructuralModel, load_model, preset_model


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="longmed",
        description=(
            "Natural direct and indirect effects of a baseline exposure on "
            "longitudinal outcomes via inverse-probability-weighted natural "
            "effect models."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, bootstrap: bool = False, sim: bool = False):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--data", help="input CSV (overrides config)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--threads", type=int, help="worker threads")
        if bootstrap:
            p.add_argument("--b", type=int, help="bootstrap replicates")
            p.add_argument(
                "--seed", type=int, help="bootstrap master seed (overrides config)"
            )
            p.add_argument(
                "--truncate", type=float, help="weight-truncation quantile in (0, 1]"
            )
        elif sim:
            p.add_argument("--seed", type=int, help="simulation seed")
            p.add_argument("--model", help="structural model JSON file")
            p.add_argument("--preset", help="shipped preset model name")
            p.add_argument("--n", type=int, help="subjects to simulate")
        else:
            p.add_argument(
                "--truncate", type=float, help="weight-truncation quantile in (0, 1]"
            )

    common(sub.add_parser("fit", help="fit the weighted effect model"))
    common(sub.add_parser("bootstrap", help="perturbed-bootstrap variance"), bootstrap=True)
    common(sub.add_parser("simulate", help="simulate from a structural model"), sim=True)
    common(sub.add_parser("oracle", help="exact counterfactual oracle values"), sim=True)
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    config = config.apply_overrides(
        data=getattr(args, "data", None),
        out=getattr(args, "out", None),
        truncate=getattr(args, "truncate", None),
        threads=getattr(args, "threads", None),
        model=getattr(args, "model", None),
        preset=getattr(args, "preset", None),
        n=getattr(args, "n", None),
        seed=getattr(args, "seed", None),
    )
    if args.command == "bootstrap" and (
        getattr(args, "b", None) is not None or getattr(args, "seed", None) is not None
    ):
        section = dict(config.bootstrap or {})
        if args.b is not None:
            section["b"] = args.b
        if args.seed is not None:
            section["seed"] = args.seed
        config = dataclasses.replace(config, bootstrap=section)
    return config


def _out_dir(config: RunConfig) -> Path:
    if config.out is None:
        raise DataError("an output directory is required (--out or config 'out')")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(config: RunConfig, out: Path) -> None:
    if config.source_text is not None:
        text = config.source_text
    else:
        entries = {
            f.name: getattr(config, f.name)
            for f in dataclasses.fields(config)
            if f.name != "source_text" and getattr(config, f.name) is not None
        }
        text = json.dumps(entries, indent=2, sort_keys=True) + "\n"
    (out / "config.yaml").write_text(text)


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _build_estimator(config: RunConfig) -> NaturalEffectsIPW:
    return NaturalEffectsIPW(
        schema=config.variable_schema(),
        exposure_terms=config.exposure_terms,
        mediator_terms=config.mediator_terms,
        formula=config.nem_formula(),
        exposure_mode=config.exposure_mode,
        truncate_q=config.truncate,
        truncate_per_time=config.truncate_per_time,
        expansion=config.expansion,
        time_codes=config.time_codes,
        eps=config.eps,
        on_violation=config.on_violation,
    )


def _fit_pipeline(config: RunConfig) -> NaturalEffectsIPW:
    if config.data is None:
        raise DataError("an input CSV is required (--data or config 'data')")
    ds = load_dataset(config.data, config.variable_schema())
    return _build_estimator(config).fit(ds)


def _write_fit_artifacts(est: NaturalEffectsIPW, out: Path) -> None:
    weights = est.weights_
    payload = {
        "nem": est.nem_.to_dict(),
        "n_subjects": est.dataset_.n_subjects,
        "exposure_mode": est.exposure_mode,
        "exposure_terms": list(est.exposure_terms_),
        "mediator_terms": [list(b) for b in est.mediator_terms_],
        "truncation": {
            "q": weights.truncation_q,
            "per_time": weights.truncation_per_time,
            "threshold": (
                weights.truncation_threshold.tolist()
                if hasattr(weights.truncation_threshold, "tolist")
                else weights.truncation_threshold
            ),
        },
    }
    _write_json(payload, out / "fit.json")
    est.effects().to_csv(out / "effects.csv", index=False)
    est.counterfactuals().to_csv(out / "probs.csv", index=False)
    stats, hist = est.weight_summary()
    stats.to_csv(out / "weights_summary.csv", index=False)
    hist.to_csv(out / "weights_hist.csv", index=False)


def cmd_fit(config: RunConfig) -> int:
    out = _out_dir(config)
    est = _fit_pipeline(config)
    _write_fit_artifacts(est, out)
    _echo_config(config, out)
    return 0


def cmd_bootstrap(config: RunConfig) -> int:
    out = _out_dir(config)
    est = _fit_pipeline(config)
    _write_fit_artifacts(est, out)
    result = est.bootstrap(config.bootstrap_config())
    _write_json(result.to_dict(), out / "bootstrap.json")
    _echo_config(config, out)
    return 0


def _load_structural_model(config: RunConfig) -> StructuralModel:
    if config.model is not None:
        return load_model(config.model)
    if config.preset is not None:
        return preset_model(config.preset)
    raise DataError("a structural model is required (--model file or --preset name)")


def cmd_simulate(config: RunConfig) -> int:
    out = _out_dir(config)
    model = _load_structural_model(config)
    if config.n is None:
        raise DataError("simulate needs --n (or config 'n')")
    if config.seed is None:
        raise DataError("simulate needs --seed (or config 'seed')")
    ds = model.simulate(config.n, config.seed)
    ds.to_csv(out / "data.csv")
    _echo_config(config, out)
    return 0


def cmd_oracle(config: RunConfig) -> int:
    out = _out_dir(config)
    model = _load_structural_model(config)
    truth = model.true_effects()
    cells = [
        {"t": int(t), "a": int(a), "a_star": int(s), "value": value}
        for (t, a, s), value in sorted(truth.p.items())
    ]
    contrasts = [
        {
            "t": int(t),
            "direct_log": truth.direct_log[t],
            "indirect_log": truth.indirect_log[t],
            "total_log": truth.total_log(t),
        }
        for t in truth.times
    ]
    _write_json({"cells": cells, "contrasts": contrasts}, out / "oracle.json")
    _echo_config(config, out)
    return 0


_COMMANDS = {
    "fit": cmd_fit,
    "bootstrap": cmd_bootstrap,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
        return _COMMANDS[args.command](config)
    except (DataError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
