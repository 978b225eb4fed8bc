"""Command-line interface: ``gcorrespond {fit,select,correspond,verify,simulate}``.

Exit codes: 0 success, 1 a verification failed, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import correspondence as corr
from .inference.likelihood import ModeFindingError
from .inference.mcmc import MCMCSettings, SamplerError, fit_mcmc, write_chain_csv
from .inference.selection import GraphicalSpace, SelectionError, SelectionSettings, select_models
from .inference.summary import SummaryError
from .models import (FormulaError, ModelFormula, design_matrix, load_formula, logistic_to_loglinear_equivalent,
                     nonbijective_witness, parse_formula)
from .priors import (apply_flat_intercept, gprior_logistic, gprior_loglinear, prior_from_option)
from .tables import (SCENARIO_FACTORS, SCENARIO_GENERATORS, SCENARIO_SEED, ContingencyTable, FactorSpec, TableError,
                     collapse_to_binomial, emit_csv, load_table, scenario_lambda, simulate_table)

log = logging.getLogger("gcorrespond")


class ConfigError(Exception):
    pass


_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}

SCHEMAS = {
    "fit": {
        "type": "object",
        "required": ["command", "model", "role", "g_law", "summary", "seed"],
        "properties": {
            "command": {"const": "fit"},
            "model": {"type": "string"},
            "role": {"enum": ["loglinear", "logistic"]},
            "seed": {"type": "integer"},
            "g_law": {"type": "object"},
            "summary": {
                "type": "object",
                "required": ["level", "parameters"],
                "properties": {
                    "parameters": {
                        "type": "array",
                        "items": {"type": "object",
                                  "required": ["label", "mean", "sd", "mcse", "lower", "upper"]},
                    },
                    "deviance_at_mean": _NUM_OR_NULL,
                    "deviance_at_mle": _NUM_OR_NULL,
                },
            },
        },
    },
    "select": {
        "type": "object",
        "required": ["command", "role", "method", "top"],
        "properties": {
            "command": {"const": "select"},
            "top": {"type": "array",
                    "items": {"type": "object", "required": ["model", "probability"],
                              "properties": {"probability": _NUM}}},
        },
    },
    "correspond": {
        "type": "object",
        "required": ["command", "loglinear", "logistic", "pairs", "equivalent_loglinear"],
        "properties": {"command": {"const": "correspond"},
                       "pairs": {"type": "array"}},
    },
    "verify": {
        "type": "object",
        "required": ["command", "instances", "pass", "reports"],
        "properties": {
            "command": {"const": "verify"},
            "pass": {"type": "boolean"},
            "reports": {"type": "array",
                        "items": {"type": "object",
                                  "required": ["model", "dims", "max_abs_diff", "pass"]}},
        },
    },
    "simulate": {
        "type": "object",
        "required": ["command", "model", "N", "seed", "factors", "counts"],
        "properties": {"command": {"const": "simulate"},
                       "counts": {"type": "array", "items": {"type": "integer"}}},
    },
}


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        jsonschema.validate(payload, SCHEMAS[payload["command"]])
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text.rstrip("\n") + "\n")


def _read_table(path) -> ContingencyTable:
    if path is None:
        raise ConfigError("--data is required")
    if not os.path.exists(path):
        raise ConfigError(f"--data: file not found: {path}")
    return load_table(path)


def _parse_levels(text: str) -> tuple[FactorSpec, ...]:
    """``"Y=2,X=3"`` -> factor specs."""
    out = []
    for piece in text.split(","):
        name, sep, lv = piece.strip().partition("=")
        if not sep:
            raise ConfigError(f"--levels: expected NAME=LEVELS, got {piece!r}")
        try:
            out.append(FactorSpec(name, int(lv)))
        except ValueError:
            raise ConfigError(f"--levels: bad level count in {piece!r}") from None
    return tuple(out)


def _read_model(spec: str | None, names, role="loglinear", outcome=None) -> ModelFormula:
    if spec is None:
        raise ConfigError("--model is required")
    if spec.endswith(".json"):
        if not os.path.exists(spec):
            raise ConfigError(f"--model: file not found: {spec}")
        f = load_formula(spec)
        if role == "logistic" and f.role != "logistic":
            f = ModelFormula(f.terms, role="logistic", outcome=outcome)
        return f
    return parse_formula(spec, names, role=role, outcome=outcome)


def _factors_from(args):
    if getattr(args, "data", None):
        return _read_table(args.data).factors
    if getattr(args, "levels", None):
        return _parse_levels(args.levels)
    raise ConfigError("give --data or --levels")


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    if not 0 < args.level < 1:
        raise ConfigError("--level must lie strictly between 0 and 1")
    table = _read_table(args.data)
    names = list(table.names)
    if args.outcome:
        if args.outcome not in names:
            raise ConfigError(f"--outcome: {args.outcome!r} is not a factor of the data")
        data = collapse_to_binomial(table, args.outcome)
        model = _read_model(args.model, [n for n in names if n != args.outcome], "logistic", args.outcome)
    else:
        data = table
        model = _read_model(args.model, names)
    try:
        law = prior_from_option(args.g, data.N)
    except ValueError as exc:
        raise ConfigError(f"--g: {exc}") from None
    X = design_matrix(data, model)
    prior = gprior_loglinear(X, data, law) if model.role == "loglinear" else gprior_logistic(X, data, law)
    if args.flat_intercept:
        prior, _ = apply_flat_intercept(prior, X)
    settings = MCMCSettings(burn_in=args.burnin, iterations=args.iters, seed=args.seed, level=args.level)
    chain, summary = fit_mcmc(model, data, prior, settings)
    payload = {
        "command": "fit",
        "model": model.describe(names),
        "role": model.role,
        "outcome": args.outcome,
        "g_law": law.to_dict(),
        "flat_intercept": bool(args.flat_intercept),
        "seed": args.seed,
        "burn_in": args.burnin,
        "iterations": args.iters,
        "summary": summary.to_dict(),
    }
    out = _out_dir(args)
    if out is not None:
        _write_json(out / "summary.json", payload)
        write_chain_csv(chain, out / "chain.csv")
    text = [payload["model"], "", summary.format_table(), "",
            f"acceptance rate {chain.acceptance_rate:.3f}"]
    if summary.deviance_at_mle is not None:
        text.append(f"deviance at MLE {summary.deviance_at_mle:.3f}; "
                    f"at posterior mean {summary.deviance_at_mean:.3f}")
    _emit(args, payload, "\n".join(text))
    return 0


def cmd_select(args) -> int:
    table = _read_table(args.data)
    names = list(table.names)
    if args.outcome:
        if args.outcome not in names:
            raise ConfigError(f"--outcome: {args.outcome!r} is not a factor of the data")
        data = collapse_to_binomial(table, args.outcome)
        space = GraphicalSpace(names, "logistic", args.outcome)
    else:
        data = table
        space = GraphicalSpace(names)
    try:
        law = prior_from_option(args.g, data.N)
    except ValueError as exc:
        raise ConfigError(f"--g: {exc}") from None
    settings = SelectionSettings(mode=args.mode, iterations=args.iters, burn_in=args.burnin,
                                 seed=args.seed, g_law=law, flat_intercept=args.flat_intercept)
    post = select_models(space, data, settings)
    payload = {"command": "select", "role": space.role, "outcome": args.outcome,
               "g_law": law.to_dict(), "seed": args.seed, **post.to_dict(names, args.top)}
    out = _out_dir(args)
    if out is not None:
        _write_json(out / "models.json", payload)
    lines = [f"{post.method}: {payload['n_models']} model(s) with positive probability"]
    if post.acceptance_rate is not None:
        lines.append(f"between-model acceptance rate {post.acceptance_rate:.3f}")
    lines += [f"{p:8.4f}  {f.describe(names)}" for f, p in post.top(args.top)]
    _emit(args, payload, "\n".join(lines))
    return 0


def cmd_correspond(args) -> int:
    factors = _factors_from(args)
    names = [f.name for f in factors]
    if not args.outcome:
        raise ConfigError("--outcome is required")
    if args.logistic:
        logistic = _read_model(args.model, [n for n in names if n != args.outcome], "logistic", args.outcome)
        loglinear = logistic_to_loglinear_equivalent(logistic, args.outcome, names)
    else:
        loglinear = _read_model(args.model, names)
    m = corr.build_map(loglinear, args.outcome, factors)
    equivalent = logistic_to_loglinear_equivalent(m.logistic, args.outcome, names)
    witness = nonbijective_witness(loglinear, args.outcome, names)
    payload = {"command": "correspond", **m.to_dict(),
               "equivalent_loglinear": equivalent.describe(names),
               "other_loglinear": witness.describe(names) if witness is not None else None}
    if args.data:
        table = _read_table(args.data)
        X = design_matrix(table, loglinear)
        prior = gprior_loglinear(X, table)
        if args.flat_intercept:
            prior, _ = apply_flat_intercept(prior, X)
        implied = corr.implied_beta_prior(prior, m)
        payload["implied_prior"] = {"labels": list(implied.labels),
                                    "mean": implied.mean.tolist(),
                                    "sigma": implied.sigma.tolist()}
    lines = [payload["loglinear"], f"  implies {payload['logistic']} (outcome {args.outcome})", ""]
    lines += [f"  beta[{b}] = lambda[{l}]" for l, b in m.pairs()]
    lines += ["", f"deviance-equivalent log-linear model: {payload['equivalent_loglinear']}"]
    if witness is not None:
        lines.append(f"another log-linear model with the same logistic model: {payload['other_loglinear']}")
    _emit(args, payload, "\n".join(lines))
    return 0


def cmd_verify(args) -> int:
    if args.model:
        factors = _factors_from(args)
        if not args.outcome:
            raise ConfigError("--outcome is required with --model")
        names = [f.name for f in factors]
        reports = [corr.verify_implied_prior(_read_model(args.model, names), factors, args.outcome,
                                        args.n, None if args.g == "N" else float(args.g))]
    else:
        reports = [corr.verify_implied_prior(f, facs, "Y", args.n)
                   for f, facs in corr.sweep_instances(args.max_factors, args.max_levels)]
    residuals = {}
    rng = np.random.default_rng(args.seed)
    for c in (2.0, 5.0, 10.0):
        X = rng.standard_normal((12, 4))
        residuals[str(c)] = corr.projection_identity_check(X, c)
    ok = all(r["pass"] for r in reports) and all(v < 1e-12 for v in residuals.values())
    payload = {"command": "verify", "instances": len(reports), "pass": ok,
               "failures": sum(not r["pass"] for r in reports),
               "max_rel_diff": max((r["max_rel_diff"] or 0.0 for r in reports), default=0.0),
               "projection_residuals": residuals,
               "reports": reports if args.json or args.model else []}
    out = _out_dir(args)
    if out is not None:
        _write_json(out / "verify.json", {**payload, "reports": reports})
    text = (f"{len(reports)} instance(s), {payload['failures']} failure(s), "
            f"max relative difference {payload['max_rel_diff']:.2e}; "
            f"projection identity residuals {', '.join(f'{v:.1e}' for v in residuals.values())}")
    _emit(args, payload, text)
    return 0 if ok else 1


def cmd_simulate(args) -> int:
    if args.model is None:
        factors = SCENARIO_FACTORS
        model = parse_formula("+".join(SCENARIO_GENERATORS), [f.name for f in factors])
    else:
        if not args.levels:
            raise ConfigError("--levels is required with --model")
        factors = _parse_levels(args.levels)
        model = _read_model(args.model, [f.name for f in factors])
    names = [f.name for f in factors]
    skeleton = ContingencyTable(factors, np.zeros(int(np.prod([f.levels for f in factors])), dtype=np.int64))
    labels = design_matrix(skeleton, model).label_strings()
    if args.lam is None:
        if args.model is not None:
            raise ConfigError("--lambda is required with --model")
        lam = scenario_lambda(labels)
    else:
        if not os.path.exists(args.lam):
            raise ConfigError(f"--lambda: file not found: {args.lam}")
        with open(args.lam) as fh:
            obj = json.load(fh)
        try:
            lam = np.array([obj[k] for k in labels], dtype=float) if isinstance(obj, dict) else np.asarray(obj, float)
        except KeyError as exc:
            raise ConfigError(f"--lambda: missing value for {exc.args[0]!r}") from None
    seed = args.seed if args.seed is not None else (SCENARIO_SEED if args.model is None else 0)
    table = simulate_table(factors, model, lam, args.n, seed)
    out = _out_dir(args)
    if out is not None:
        emit_csv(table, out / "table.csv")
    payload = {"command": "simulate", "model": model.describe(names), "N": args.n, "seed": seed,
               "factors": [{"name": f.name, "levels": f.levels} for f in factors],
               "lambda": dict(zip(labels, map(float, lam))),
               "counts": [int(c) for c in table.counts]}
    _emit(args, payload, emit_csv(table))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _int(text: str) -> int:
    """Accept ``100000`` as well as ``1e5``."""
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v != int(v) or v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}")
    return int(v)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcorrespond",
                                description="Log-linear and logistic g-prior analyses of contingency tables.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        sp.add_argument("--out", help="output directory")
        if seed:
            sp.add_argument("--seed", type=_int, default=0)

    fit = sub.add_parser("fit", help="posterior summary for one model")
    fit.add_argument("--data", required=True)
    fit.add_argument("--model", required=True, help="formula such as YAB+YCD+YE, or a JSON file")
    fit.add_argument("--outcome", help="fit the logistic model for this binary factor")
    fit.add_argument("--g", default="N", help="N, fixed:<g> or ig:<var_g>")
    fit.add_argument("--flat-intercept", action="store_true")
    fit.add_argument("--level", type=float, default=0.95)
    fit.add_argument("--burnin", type=_int, default=100_000)
    fit.add_argument("--iters", type=_int, default=200_000)
    common(fit)
    fit.set_defaults(func=cmd_fit)

    sel = sub.add_parser("select", help="posterior probabilities over graphical models")
    sel.add_argument("--data", required=True)
    sel.add_argument("--outcome")
    sel.add_argument("--g", default="N")
    sel.add_argument("--flat-intercept", action="store_true")
    sel.add_argument("--mode", choices=["rj", "enumerate"], default="rj")
    sel.add_argument("--burnin", type=_int, default=2_000)
    sel.add_argument("--iters", type=_int, default=20_000)
    sel.add_argument("--top", type=_int, default=5)
    common(sel)
    sel.set_defaults(func=cmd_select)

    cor = sub.add_parser("correspond", help="parameter map between a log-linear and a logistic model")
    cor.add_argument("--model", required=True)
    cor.add_argument("--outcome", required=True)
    cor.add_argument("--data")
    cor.add_argument("--levels", help="factor levels such as Y=2,X=3 when no data are given")
    cor.add_argument("--logistic", action="store_true", help="--model is a logistic formula")
    cor.add_argument("--flat-intercept", action="store_true")
    common(cor, seed=False)
    cor.set_defaults(func=cmd_correspond)

    ver = sub.add_parser("verify", help="check the implied logistic g-prior numerically")
    ver.add_argument("--model")
    ver.add_argument("--outcome")
    ver.add_argument("--data")
    ver.add_argument("--levels")
    ver.add_argument("--g", default="N", help="N or a number")
    ver.add_argument("--n", type=_int, default=1000, help="sample size N")
    ver.add_argument("--max-factors", type=_int, default=4)
    ver.add_argument("--max-levels", type=_int, default=3)
    common(ver)
    ver.set_defaults(func=cmd_verify)

    sim = sub.add_parser("simulate", help="draw a multinomial table")
    sim.add_argument("--model", help="default: the documented six-factor scenario")
    sim.add_argument("--levels")
    sim.add_argument("--lambda", dest="lam", help="JSON list or {label: value} object")
    sim.add_argument("--n", type=_int, default=1000)
    sim.add_argument("--seed", type=_int, default=None, help=f"default {SCENARIO_SEED} for the scenario, else 0")
    common(sim, seed=False)
    sim.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormulaError, TableError, SelectionError, corr.CorrespondenceError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (np.linalg.LinAlgError, ModeFindingError, SamplerError, SummaryError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
