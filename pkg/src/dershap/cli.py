"""Command-line front end: ``dershap analyze | validate | cache``.

Configuration precedence: built-in defaults < ``--config`` JSON file <
command-line flags. Exit codes: 0 ok, 1 failed validation, 2 configuration
error, 3 model evaluation failure, 4 node budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .expr import ExprDomainError, ExprSyntaxError, parse_expression
from .gradients import (
    ADProvider,
    EvalCounter,
    ExternalModel,
    FDProvider,
    ModelEvaluationError,
    ScaledProvider,
    unit_scaling,
)
from .inputs import DEFAULT_NODE_BUDGET, BudgetExceeded, IndependentInputs, SpecError, digest_of, spec_from_dict
from .measures import activity_scores, dershap, dershap_truncated, dgsm, dgsm_abs, make_report
from .models import get_model
from .report import write_outputs
from .spectral import ArtifactError, CMatrix, eigendecompose, estimate_c_mc, estimate_c_quadrature
from .validation import SUITES

EXIT_FAIL, EXIT_CONFIG, EXIT_MODEL, EXIT_BUDGET = 1, 2, 3, 4

METHODS = ("dgsm", "dgsm_abs", "activity", "dershap", "dershap_truncated")
DEFAULT_METHODS = ("dgsm", "activity", "dershap")
FORMATS = ("csv", "json", "svg")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str | None = None
    expr: str | None = None
    vars: list | None = None
    external_cmd: str | None = None
    inputs: dict | None = None
    estimator: str = "mc"
    samples: int = 10_000
    points: int = 8
    seed: int = 0
    methods: list = field(default_factory=lambda: list(DEFAULT_METHODS))
    m: int | None = None
    k: int | None = None
    gradient: str | None = None  # ad | fd; default ad for expressions, fd for external
    fd_h: float = 1e-6
    central: bool = False
    scaling: str = "natural"  # natural | unit
    out: str = "dershap-out"
    formats: list = field(default_factory=lambda: list(FORMATS))
    workers: int = 1
    budget: int = DEFAULT_NODE_BUDGET
    cache: str | None = None


# --------------------------------------------------------------------------
# Config assembly


def _split(value):
    if value is None or isinstance(value, list):
        return value
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from exc


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        raw = _load_json(args.config, "config file")
        known = set(RunConfig.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key, value in raw.items():
            setattr(cfg, key, value)
    flag_map = {
        "model": "model", "expr": "expr", "vars": "vars", "external_cmd": "external_cmd",
        "estimator": "estimator", "samples": "samples", "points": "points", "seed": "seed",
        "methods": "methods", "m": "m", "k": "k", "gradient": "gradient", "fd_h": "fd_h",
        "scaling": "scaling", "out": "out", "format": "formats", "workers": "workers",
        "budget": "budget", "cache": "cache",
    }
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "central", False):
        cfg.central = True
    if getattr(args, "spec", None):
        cfg.inputs = _load_json(args.spec, "input spec")
    cfg.vars = _split(cfg.vars)
    cfg.methods = _split(cfg.methods)
    cfg.formats = _split(cfg.formats)
    if cfg.estimator == "quad":
        cfg.estimator = "quadrature"
    return cfg


@dataclass
class Resolved:
    model_id: str
    names: tuple
    spec: object
    provider: object
    value_fn: object
    digest: str
    external: ExternalModel | None = None


def resolve(cfg: RunConfig) -> Resolved:
    sources = [s for s in (cfg.model, cfg.expr, cfg.external_cmd) if s]
    if len(sources) != 1:
        raise ConfigError("give exactly one of --model, --expr or --external-cmd")
    try:
        spec = spec_from_dict(cfg.inputs) if cfg.inputs is not None else None
    except (SpecError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad input spec: {exc}") from exc

    counter = EvalCounter()
    external = None
    if cfg.model:
        try:
            model = get_model(cfg.model)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc).strip("'\"")) from exc
        expr, model_id = model.expression, model.id
        spec = spec or model.default_spec
        value_fn = model
    elif cfg.expr:
        if not cfg.vars:
            raise ConfigError("--expr needs --vars")
        try:
            expr = parse_expression(cfg.expr, cfg.vars)
        except (ExprSyntaxError, ValueError) as exc:
            raise ConfigError(f"expression error: {exc}") from exc
        model_id = "expr"
        value_fn = expr
        if spec is None:
            raise ConfigError("--expr needs an input spec (--spec FILE or 'inputs' in the config)")
    else:
        expr = None
        if spec is None:
            raise ConfigError("--external-cmd needs an input spec")
        model_id = "external"
        external = ExternalModel(cfg.external_cmd, spec.dim, workers=cfg.workers)
        value_fn = external

    if expr is not None and spec.dim != expr.dim:
        raise ConfigError(f"input spec has {spec.dim} inputs but the model has {expr.dim}")
    backend = cfg.gradient or ("ad" if expr is not None else "fd")
    if backend == "ad":
        if expr is None:
            raise ConfigError("external models need the fd gradient backend")
        provider = ADProvider(expr, counter)
    elif backend == "fd":
        if not cfg.fd_h > 0:
            raise ConfigError("--fd-h must be positive")
        provider = FDProvider(value_fn, spec.dim, h=cfg.fd_h, central=cfg.central, counter=counter,
                              name=model_id)
    else:
        raise ConfigError(f"unknown gradient backend {backend!r}")
    if cfg.scaling == "unit":
        try:
            provider = ScaledProvider(provider, unit_scaling(spec))
        except SpecError as exc:
            raise ConfigError(str(exc)) from exc
    elif cfg.scaling != "natural":
        raise ConfigError(f"unknown scaling {cfg.scaling!r}")

    names = tuple(spec.names) if spec.names else (expr.variables if expr is not None
                                                  else tuple(f"x{i}" for i in range(spec.dim)))
    ident = {"model": model_id, "inputs": spec.to_dict(), "scaling": cfg.scaling}
    if expr is not None:
        ident["expression"] = expr.source
        ident["variables"] = list(expr.variables)
    if external is not None:
        ident["command"] = external.command
    return Resolved(model_id, names, spec, provider, value_fn, digest_of(ident), external)


def validate_config(cfg: RunConfig, d: int, spec) -> None:
    bad = [m for m in cfg.methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown methods: {', '.join(bad)} (choose from {', '.join(METHODS)})")
    if not cfg.methods:
        raise ConfigError("no methods requested")
    bad = [f for f in cfg.formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"unknown formats: {', '.join(bad)}")
    if cfg.estimator not in ("mc", "quadrature"):
        raise ConfigError(f"unknown estimator {cfg.estimator!r}")
    if cfg.estimator == "quadrature" and not (isinstance(spec, IndependentInputs) and spec.all_uniform()):
        raise ConfigError("quadrature needs independent uniform inputs")
    if cfg.estimator == "mc" and cfg.samples < 2:
        raise ConfigError("--samples must be >= 2")
    if cfg.points < 1:
        raise ConfigError("--points must be >= 1")
    m = d if cfg.m is None else cfg.m
    if not 1 <= m <= d:
        raise ConfigError(f"--m must be in [1, {d}]")
    if "dershap_truncated" in cfg.methods:
        if cfg.k is None:
            raise ConfigError("dershap_truncated needs --k")
        if not 1 <= cfg.k <= d:
            raise ConfigError(f"--k must be in [1, {d}]")
    if cfg.workers < 1:
        raise ConfigError("--workers must be >= 1")


# --------------------------------------------------------------------------
# analyze


def _estimator_settings(cfg: RunConfig) -> dict:
    if cfg.estimator == "mc":
        return {"kind": "mc", "n": cfg.samples, "seed": cfg.seed}
    return {"kind": "quadrature", "q": cfg.points}


def compute_c(cfg: RunConfig, res: Resolved) -> tuple[CMatrix, bool]:
    """Estimate C or reuse a cached artifact. Returns ``(cmatrix, from_cache)``."""
    settings = _estimator_settings(cfg)
    if cfg.cache and os.path.exists(cfg.cache):
        try:
            cm = CMatrix.load(cfg.cache, res.digest)
        except ArtifactError as exc:
            raise ConfigError(f"cache refused: {exc}") from exc
        if cm.estimator != settings:
            raise ConfigError(f"cache refused: estimator {cm.estimator} differs from requested {settings}")
        return cm, True
    meta = {"model": res.model_id, "model_digest": res.digest, "gradient": res.provider.describe()}
    if cfg.estimator == "mc":
        cm = estimate_c_mc(res.provider, res.spec, cfg.samples, cfg.seed, workers=cfg.workers, metadata=meta)
    else:
        cm = estimate_c_quadrature(res.provider, res.spec, cfg.points, budget=cfg.budget,
                                   workers=cfg.workers, metadata=meta)
    cm.metadata.update(res.provider.counter.snapshot())
    if cfg.cache:
        cm.save(cfg.cache)
    return cm, False


def run_analysis(cfg: RunConfig) -> dict:
    """Run the configured analysis; returns the report payload (also written to disk)."""
    res = resolve(cfg)
    d = res.spec.dim
    validate_config(cfg, d, res.spec)
    m = d if cfg.m is None else cfg.m
    t0 = time.perf_counter()
    cm, cached = compute_c(cfg, res)
    common = {"estimator": cm.estimator}
    reports = []
    for method in cfg.methods:
        if method == "dgsm":
            reports.append(make_report("dgsm", dgsm(cm), metadata=common))
        elif method == "dgsm_abs":
            n = cfg.samples
            raw = dgsm_abs(res.provider, res.spec, n, cfg.seed, workers=cfg.workers)
            reports.append(make_report("dgsm_abs", raw, metadata={"estimator": {"kind": "mc", "n": n, "seed": cfg.seed}}))
        elif method == "activity":
            eig = eigendecompose(cm.entries)
            reports.append(make_report("activity", activity_scores(eig, m), params={"m": m},
                                       metadata={**common, "eigenvalues": eig.eigenvalues.tolist()}))
        elif method == "dershap":
            reports.append(make_report("dershap", dershap(cm).values, metadata=common))
        elif method == "dershap_truncated":
            tr = dershap_truncated(cm, cfg.k)
            reports.append(make_report("dershap_truncated", tr.values, params={"k": cfg.k},
                                       metadata={**common, "eps": tr.eps, "bound": tr.bound}, clamp=True))
    elapsed = time.perf_counter() - t0
    counts = res.provider.counter.snapshot()
    payload = {
        "model": res.model_id,
        "model_digest": res.digest,
        "inputs": {"names": list(res.names), "spec": res.spec.to_dict()},
        "gradient": res.provider.describe(),
        "scaling": cfg.scaling,
        "c_matrix": {"entries": cm.entries.tolist(), "estimator": cm.estimator, "from_cache": cached},
        "reports": [r.to_dict() for r in reports],
        "metadata": {
            "seed": cfg.seed,
            "workers": cfg.workers,
            "reduction": "chunk-ordered (independent of worker count)",
            "evaluations": counts,
            "elapsed_seconds": elapsed,
        },
    }
    if res.external is not None:
        payload["metadata"]["external_spawns"] = res.external.spawns
    write_outputs(cfg.out, cfg.formats, list(res.names), reports, payload, title=res.model_id)
    return payload


def cmd_analyze(args) -> int:
    cfg = build_config(args)
    payload = run_analysis(cfg)
    for rep in payload["reports"]:
        vals = " ".join(f"{v:.4f}" for v in rep["normalized"])
        print(f"{rep['label']}: {vals}")
    print(f"evaluations: {payload['metadata']['evaluations']['model_evaluations']}; outputs in {cfg.out}")
    return 0


# --------------------------------------------------------------------------
# validate / cache


def cmd_validate(args) -> int:
    kwargs = {"seed": args.seed}
    if args.suite == "bounds":
        try:
            kwargs["model"] = get_model(args.model or "bilinear")
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        kwargs["n"] = args.samples or 100_000
    results = SUITES[args.suite](**kwargs)
    for r in results:
        print(r.line())
    return 0 if all(r.ok for r in results) else EXIT_FAIL


def cmd_cache(args) -> int:
    cfg = build_config(args)
    res = resolve(cfg)
    if args.op == "save":
        validate_config(cfg, res.spec.dim, res.spec)
        cfg.cache = None
        cm, _ = compute_c(cfg, res)
        cm.save(args.path)
        print(f"saved C ({res.spec.dim}x{res.spec.dim}, digest {res.digest}) to {args.path}")
        return 0
    try:
        cm = CMatrix.load(args.path, res.digest)
    except ArtifactError as exc:
        raise ConfigError(f"cache refused: {exc}") from exc
    print(json.dumps({"estimator": cm.estimator, "entries": cm.entries.tolist(),
                      "model_digest": cm.metadata.get("model_digest")}, sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration (flags override its fields)")
    p.add_argument("--model", help="built-in model id, e.g. ebola_liberia or linear:3,1")
    p.add_argument("--expr", help="model expression, e.g. 'x0*x1'")
    p.add_argument("--vars", help="comma-separated variable names for --expr")
    p.add_argument("--external-cmd", dest="external_cmd", help="external model command (line protocol)")
    p.add_argument("--spec", help="JSON input spec file")
    p.add_argument("--estimator", choices=["mc", "quad", "quadrature"])
    p.add_argument("--samples", type=int, help="Monte Carlo sample size (default 10000)")
    p.add_argument("--points", type=int, help="Gauss-Legendre points per dimension (default 8)")
    p.add_argument("--seed", type=int)
    p.add_argument("--gradient", choices=["ad", "fd"])
    p.add_argument("--fd-h", dest="fd_h", type=float, help="finite-difference increment (default 1e-6)")
    p.add_argument("--central", action="store_true", help="central instead of forward differences")
    p.add_argument("--scaling", choices=["natural", "unit"],
                   help="'unit' takes gradients w.r.t. uniform inputs mapped to [-1, 1]")
    p.add_argument("--workers", type=int)
    p.add_argument("--budget", type=int, help=f"quadrature node budget (default {DEFAULT_NODE_BUDGET})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dershap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="compute DGSM, activity scores and DerSHAP")
    _add_model_flags(p)
    p.add_argument("--methods", help=f"comma list from {', '.join(METHODS)}")
    p.add_argument("--m", type=int, help="activity-score rank (default d)")
    p.add_argument("--k", type=int, help="retained rank for dershap_truncated")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", help="comma list from csv, json, svg")
    p.add_argument("--cache", help="C-matrix artifact: reused if present, written otherwise")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", help="run an invariant suite")
    p.add_argument("suite", choices=sorted(SUITES))
    p.add_argument("--model", help="model for the bounds suite (default bilinear)")
    p.add_argument("--samples", type=int, help="Sobol' sample size for the bounds suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("cache", help="save or load a C-matrix artifact")
    p.add_argument("op", choices=["save", "load"])
    p.add_argument("path")
    _add_model_flags(p)
    p.set_defaults(func=cmd_cache)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SpecError) as exc:
        print(f"dershap: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelEvaluationError, ExprDomainError) as exc:
        print(f"dershap: model evaluation failed: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except BudgetExceeded as exc:
        print(f"dershap: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
