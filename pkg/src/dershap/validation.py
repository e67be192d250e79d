"""Invariant suites behind ``dershap validate``."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .gradients import ADProvider, EvalCounter, FDProvider
from .inputs import IndependentInputs, Normal, gauss_legendre_grid, sample
from .measures import (
    check_activity_bound,
    check_linear_identity,
    check_poincare_bound,
    dershap,
    dershap_truncated,
)
from .models import BuiltinModel, builtin_catalog
from .oracles import imp, shapley_exact, sobol_estimate
from .spectral import eigendecompose, estimate_c_mc, estimate_c_quadrature

__all__ = [
    "CheckResult",
    "random_psd",
    "suite_shapley_oracle",
    "suite_truncation",
    "suite_bounds",
    "suite_gradients",
    "SUITES",
]


@dataclass
class CheckResult:
    suite: str
    check: str
    passed: int
    total: int
    detail: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.passed == self.total

    def line(self) -> str:
        rec = {"suite": self.suite, "check": self.check, "passed": int(self.passed),
               "total": int(self.total), "status": "pass" if self.ok else "fail"}
        rec.update(self.detail)
        return json.dumps(rec, sort_keys=True)


def random_psd(rng: np.random.Generator, d: int, rank: int | None = None) -> np.ndarray:
    """Random symmetric PSD matrix with mixed-sign off-diagonals."""
    rank = d if rank is None else rank
    x = rng.normal(size=(d, rank)) * rng.uniform(0.1, 3.0, size=(d, 1))
    return x @ x.T


def _dims(rng, count, lo=2, hi=10):
    return rng.integers(lo, hi + 1, size=count)


def suite_shapley_oracle(n_matrices: int = 200, n_axiom: int = 100, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    ok, worst = 0, 0.0
    for d in _dims(rng, n_matrices):
        c = random_psd(rng, int(d))
        err = float(np.abs(dershap(c).values - shapley_exact(np.abs(c))).max())
        worst = max(worst, err)
        ok += err <= 1e-10
    out.append(CheckResult("shapley_oracle", "closed_form_vs_enumeration", ok, n_matrices,
                           {"max_abs_err": worst}))

    ok = 0
    for d in _dims(rng, n_axiom):
        c = random_psd(rng, int(d))
        full = imp(np.abs(c), range(int(d)))
        phi, phi_x = dershap(c).values, shapley_exact(np.abs(c))
        ok += abs(phi.sum() - full) <= 1e-10 * abs(full) and abs(phi_x.sum() - full) <= 1e-10 * abs(full)
    out.append(CheckResult("shapley_oracle", "efficiency", ok, n_axiom))

    ok = 0
    for d in _dims(rng, n_axiom):
        d = int(d)
        i = int(rng.integers(d))
        c = np.zeros((d, d))
        keep = [j for j in range(d) if j != i]
        c[np.ix_(keep, keep)] = random_psd(rng, d - 1)
        ok += dershap(c).values[i] == 0.0 and shapley_exact(np.abs(c))[i] == 0.0
    out.append(CheckResult("shapley_oracle", "dummy", ok, n_axiom))

    ok = 0
    for d in _dims(rng, n_axiom):
        d = int(d)
        i, j = rng.choice(d, size=2, replace=False)
        perm = np.arange(d)
        perm[[i, j]] = perm[[j, i]]
        base = random_psd(rng, d)
        c = 0.5 * (base + base[np.ix_(perm, perm)])
        phi, phi_x = dershap(c).values, shapley_exact(np.abs(c))
        ok += (abs(phi[i] - phi[j]) <= 1e-12 * max(abs(phi[i]), 1e-300)
               and abs(phi_x[i] - phi_x[j]) <= 1e-10 * max(abs(phi_x[i]), 1e-300))
    out.append(CheckResult("shapley_oracle", "symmetry", ok, n_axiom))

    ok = 0
    for d in _dims(rng, n_axiom):
        a, b = np.abs(random_psd(rng, int(d))), np.abs(random_psd(rng, int(d)))
        lhs = shapley_exact(a + b)
        ok += bool(np.allclose(lhs, shapley_exact(a) + shapley_exact(b), rtol=1e-12, atol=1e-12))
    out.append(CheckResult("shapley_oracle", "additivity", ok, n_axiom))
    return out


def suite_truncation(n_matrices: int = 100, d: int = 8, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    ok = total = 0
    tightest = math.inf
    for _ in range(n_matrices):
        rank = int(rng.integers(1, d + 1))
        c = random_psd(rng, d, rank)
        phi = dershap(c).values
        for k in range(1, d + 1):
            approx = dershap_truncated(c, k)
            err = float(np.linalg.norm(phi - approx.values))
            total += 1
            ok += err <= approx.bound
            if approx.bound > 0:
                tightest = min(tightest, approx.bound - err)
    return [CheckResult("truncation", "l2_error_bound", ok, total,
                        {"min_margin": tightest if math.isfinite(tightest) else None})]


def _c_for(model: BuiltinModel, spec, n: int, seed: int, q: int):
    provider = ADProvider(model.expression)
    if isinstance(spec, IndependentInputs) and spec.all_uniform() and q**spec.dim <= 2_000_000:
        return estimate_c_quadrature(provider, spec, q)
    return estimate_c_mc(provider, spec, n, seed)


def suite_bounds(model: BuiltinModel, n: int = 100_000, seed: int = 0, q: int = 8,
                 normal_marginals: bool = True) -> list[CheckResult]:
    """Poincare, linear identity (componentwise-linear models) and the activity-score bound."""
    out = []
    runs = [("uniform", model.default_spec)]
    if normal_marginals:
        runs.append(("normal", IndependentInputs(tuple(Normal(0.0, 1.0) for _ in range(model.dim)))))
    for tag, spec in runs:
        sob = sobol_estimate(model, spec, n, seed)
        if sob.degenerate:
            out.append(CheckResult("bounds", f"{tag}:degenerate", 0, 0, {"model": model.id, "skipped": True}))
            continue
        c = _c_for(model, spec, n, seed + 1, q)
        v = np.diag(c.entries)
        v_se = None if c.stderr is None else np.diag(c.stderr)
        common = dict(total_se=sob.total_se, sigma2_se=sob.variance_se)
        if tag == "uniform" and spec.is_unit_uniform():
            res = check_poincare_bound(sob.total, v, sob.variance, spec, v_se=v_se, **common)
            out.append(_from_checks("poincare", res, model.id, tag))
            if model.linear:
                res = check_linear_identity(sob.total, v, sob.variance, spec, v_se=v_se, **common)
                out.append(_from_checks("linear_identity", res, model.id, tag))
        eig = eigendecompose(c.entries)
        for m in range(1, model.dim + 1):
            res = check_activity_bound(sob.total, eig, m, sob.variance, spec, **common)
            out.append(_from_checks(f"activity_bound(m={m})", res, model.id, tag))
    return out


def _from_checks(name, res, model_id, tag) -> CheckResult:
    detail = {"model": model_id, "inputs": tag,
              "min_slack": min((c.slack for c in res.checks), default=None)}
    if res.skipped:
        detail["skipped"] = res.skipped
    return CheckResult("bounds", name, sum(c.passed for c in res.checks), len(res.checks), detail)


def suite_gradients(n_points: int = 100, seed: int = 0, h: float = 1e-6, rtol: float = 1e-4) -> list[CheckResult]:
    """AD against forward differences on every smooth built-in model."""
    out = []
    for model in builtin_catalog():
        if not model.smooth:
            continue
        pts = sample(model.default_spec, n_points, seed)
        _, g_ad = ADProvider(model.expression).value_and_grad(pts)
        _, g_fd = FDProvider(model, model.dim, h=h).value_and_grad(pts)
        scale = np.maximum(np.abs(g_ad).max(axis=1, keepdims=True), 1e-12)
        rel = np.abs(g_fd - g_ad) / scale
        worst = rel.max(axis=1)
        out.append(CheckResult("gradients", f"ad_vs_fd:{model.id}", int((worst <= rtol).sum()), n_points,
                               {"max_rel_err": float(worst.max())}))
    return out


SUITES = {
    "shapley_oracle": lambda **kw: suite_shapley_oracle(seed=kw.get("seed", 0)),
    "truncation": lambda **kw: suite_truncation(seed=kw.get("seed", 0)),
    "gradients": lambda **kw: suite_gradients(seed=kw.get("seed", 0)),
    "bounds": lambda **kw: suite_bounds(kw["model"], n=kw.get("n", 100_000), seed=kw.get("seed", 0)),
}
