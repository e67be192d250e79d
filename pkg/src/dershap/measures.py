"""DGSM, activity scores, derivative-based Shapley values and bound checks."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .gradients import GradientProvider
from .inputs import IndependentInputs, InputSpec, SpecError, kucherenko_constant, sample_block
from .spectral import (
    CMatrix,
    EigenDecomp,
    _Neumaier,
    _grads,
    _map_ordered,
    _mc_chunks,
    eigendecompose,
)

__all__ = [
    "SensitivityReport",
    "ShapleyVector",
    "TruncatedShapley",
    "BoundCheck",
    "BoundChecks",
    "normalize",
    "make_report",
    "dgsm",
    "dgsm_abs",
    "activity_scores",
    "dershap",
    "dershap_truncated",
    "check_poincare_bound",
    "check_linear_identity",
    "check_activity_bound",
    "matrix_digest",
]

# tolerance on "nonnegative" raw scores (eigen round-off)
_NEG_TOL = 1e-12


def _entries(c) -> np.ndarray:
    return np.asarray(c.entries if isinstance(c, CMatrix) else c, dtype=float)


def matrix_digest(m: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(m, dtype=float).tobytes()).hexdigest()[:16]


class Normalized(NamedTuple):
    values: np.ndarray
    degenerate: bool
    clamped: bool


def normalize(raw, clamp: bool = False) -> Normalized:
    """Divide by the sum of all values.

    All-zero input gives all-zero output with ``degenerate=True``. With
    ``clamp=True`` negative entries are set to zero first (and flagged);
    otherwise negatives beyond round-off raise ``ValueError``.
    """
    raw = np.asarray(raw, dtype=float)
    clamped = False
    scale = max(np.abs(raw).max(initial=0.0), 1.0)
    if np.any(raw < 0):
        if clamp or np.all(raw >= -_NEG_TOL * scale):
            clamped = bool(np.any(raw < 0))
            raw = np.maximum(raw, 0.0)
        else:
            raise ValueError("cannot normalize negative scores without clamping")
    total = raw.sum()
    if total <= 0:
        return Normalized(np.zeros_like(raw), True, clamped)
    return Normalized(raw / total, False, clamped)


@dataclass
class SensitivityReport:
    method: str
    raw: np.ndarray
    normalized: np.ndarray
    degenerate: bool = False
    clamped: bool = False
    params: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        if self.method == "activity":
            return f"activity(m={self.params['m']})"
        if self.method == "dershap_truncated":
            return f"dershap_truncated(k={self.params['k']})"
        return self.method

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "label": self.label,
            "params": self.params,
            "raw": self.raw.tolist(),
            "normalized": self.normalized.tolist(),
            "degenerate": self.degenerate,
            "clamped": self.clamped,
            "metadata": self.metadata,
        }


def make_report(method: str, raw, params: dict | None = None, metadata: dict | None = None,
                clamp: bool = False) -> SensitivityReport:
    raw = np.asarray(raw, dtype=float)
    norm = normalize(raw, clamp=clamp)
    return SensitivityReport(method, raw, norm.values, norm.degenerate, norm.clamped,
                             dict(params or {}), dict(metadata or {}))


# --------------------------------------------------------------------------
# Measures


def dgsm(c) -> np.ndarray:
    """``v_i = C_ii``."""
    return np.diag(_entries(c)).copy()


def dgsm_abs(provider: GradientProvider, spec: InputSpec, n: int, seed: int, workers: int = 1) -> np.ndarray:
    """Mean absolute derivative ``mu*_i = (1/n) sum |d f / d x_i|``."""
    if n < 1:
        raise ValueError("need n >= 1 samples")
    acc = _Neumaier(spec.dim)

    def work(chunk):
        b, start, m = chunk
        g = _grads(provider, sample_block(spec, seed, b, m), start)
        return np.sum(np.abs(np.ascontiguousarray(g.T)), axis=1)

    for part in _map_ordered(work, _mc_chunks(n), workers):
        acc.add(part)
    return acc.total / n


def activity_scores(eig: EigenDecomp, m: int) -> np.ndarray:
    """``alpha_i(m) = sum_{j<=m} lambda_j w_ij^2`` from the eigenpairs of C."""
    d = eig.eigenvalues.size
    if not 1 <= m <= d:
        raise ValueError(f"m must be in [1, {d}], got {m}")
    w = eig.eigenvectors[:, :m]
    return (w * w) @ eig.eigenvalues[:m]


@dataclass(frozen=True)
class ShapleyVector:
    values: np.ndarray
    source_digest: str


def dershap(c) -> ShapleyVector:
    """Closed-form Shapley value of the derivative-based importance.

    ``phi = |C| e / 2 + diag(|C|) / 2``, i.e. ``C_ii + (1/2) sum_{j != i} |C_ij|``.
    """
    a = np.abs(_entries(c))
    phi = 0.5 * a.sum(axis=1) + 0.5 * np.diag(a)
    return ShapleyVector(phi, matrix_digest(_entries(c)))


class TruncatedShapley(NamedTuple):
    values: np.ndarray
    bound: float
    eps: float
    k: int


def dershap_truncated(c, k: int) -> TruncatedShapley:
    """Shapley values from a rank-``k`` eigen-truncation of ``|C|``.

    Eigenvalues are ranked by magnitude since ``|C|`` can be indefinite;
    ``eps`` is the largest discarded ``|lambda|`` and
    ``||phi - phi_k||_2 <= (d - k) eps sqrt(d)``.
    """
    a = np.abs(_entries(c))
    d = a.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    eig = eigendecompose(a, order="magnitude")
    # subtract the discarded part R = |C| - C_k so round-off scales with eps, not ||C||
    w = eig.eigenvectors[:, k:]
    rest = (w * eig.eigenvalues[k:]) @ w.T
    full = 0.5 * a.sum(axis=1) + 0.5 * np.diag(a)
    phi = full - (0.5 * rest.sum(axis=1) + 0.5 * np.diag(rest))
    eps = float(np.abs(eig.eigenvalues[k:]).max(initial=0.0))
    return TruncatedShapley(phi, (d - k) * eps * math.sqrt(d), eps, k)


# --------------------------------------------------------------------------
# Bound checks


@dataclass(frozen=True)
class BoundCheck:
    index: int
    lhs: float
    rhs: float
    se: float
    passed: bool

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


@dataclass
class BoundChecks:
    name: str
    checks: list
    skipped: str | None = None

    @property
    def passed(self) -> bool:
        return self.skipped is None and all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "check": self.name,
            "skipped": self.skipped,
            "passed": self.passed,
            "items": [
                {"index": c.index, "lhs": c.lhs, "rhs": c.rhs, "slack": c.slack, "se": c.se, "passed": c.passed}
                for c in self.checks
            ],
        }


def _vec(x, d):
    if x is None:
        return np.zeros(d)
    return np.broadcast_to(np.asarray(x, dtype=float), (d,))


def _rhs_se(rhs, num, num_se, sigma2, sigma2_se):
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_num = np.where(num > 0, num_se / np.where(num > 0, num, 1.0), 0.0)
    return np.abs(rhs) * np.sqrt(rel_num**2 + (sigma2_se / sigma2) ** 2)


def _inequality(name, lhs, rhs, lhs_se, rhs_se, sigmas=3.0) -> BoundChecks:
    checks = []
    for i in range(lhs.size):
        se = float(math.hypot(lhs_se[i], rhs_se[i]))
        checks.append(BoundCheck(i, float(lhs[i]), float(rhs[i]), se, bool(lhs[i] <= rhs[i] + sigmas * se)))
    return BoundChecks(name, checks)


def _require_unit_uniform(spec: InputSpec | None, what: str) -> None:
    if spec is not None and not (isinstance(spec, IndependentInputs) and spec.is_unit_uniform()):
        raise SpecError(f"{what} applies to independent uniform(0, 1) inputs only")


def check_poincare_bound(total, v, sigma2: float, spec: InputSpec | None = None, *,
                         total_se=None, v_se=None, sigma2_se: float = 0.0) -> BoundChecks:
    """``S_total_i <= v_i / (pi^2 sigma^2)`` up to 3 combined standard errors."""
    _require_unit_uniform(spec, "the Poincare bound")
    total = np.asarray(total, dtype=float)
    d = total.size
    if not sigma2 > 0:
        return BoundChecks("poincare", [], skipped="zero output variance")
    v = np.asarray(v, dtype=float)
    rhs = v / (math.pi**2 * sigma2)
    return _inequality("poincare", total, rhs, _vec(total_se, d),
                       _rhs_se(rhs, v, _vec(v_se, d), sigma2, sigma2_se))


def check_linear_identity(total, v, sigma2: float, spec: InputSpec | None = None, *,
                          total_se=None, v_se=None, sigma2_se: float = 0.0) -> BoundChecks:
    """Residuals ``S_total_i - v_i / (12 sigma^2)`` for componentwise-linear models.

    ``BoundCheck.lhs`` holds the residual and ``rhs`` the predicted index.
    """
    _require_unit_uniform(spec, "the linear identity")
    total = np.asarray(total, dtype=float)
    d = total.size
    if not sigma2 > 0:
        return BoundChecks("linear_identity", [], skipped="zero output variance")
    v = np.asarray(v, dtype=float)
    pred = v / (12.0 * sigma2)
    pred_se = _rhs_se(pred, v, _vec(v_se, d), sigma2, sigma2_se)
    lhs_se = _vec(total_se, d)
    checks = []
    for i in range(d):
        resid = float(total[i] - pred[i])
        se = float(math.hypot(lhs_se[i], pred_se[i]))
        checks.append(BoundCheck(i, resid, float(pred[i]), se, abs(resid) <= 3.0 * se + 1e-12))
    return BoundChecks("linear_identity", checks)


def check_activity_bound(total, eig: EigenDecomp, m: int, sigma2: float, spec: InputSpec, *,
                         total_se=None, score_se=None, sigma2_se: float = 0.0) -> BoundChecks:
    """``S_total_i <= D(F_i) (alpha_i(m) + lambda_{m+1}) / sigma^2`` for independent inputs."""
    if not isinstance(spec, IndependentInputs):
        raise SpecError("the activity-score bound is only established for independent inputs")
    total = np.asarray(total, dtype=float)
    d = total.size
    if not 1 <= m <= d:
        raise ValueError(f"m must be in [1, {d}], got {m}")
    if not sigma2 > 0:
        return BoundChecks("activity_bound", [], skipped="zero output variance")
    alpha = activity_scores(eig, m)
    nxt = float(eig.eigenvalues[m]) if m < d else 0.0
    score = alpha + max(nxt, 0.0)
    consts = np.array([kucherenko_constant(mg) for mg in spec.marginals])
    rhs = consts * score / sigma2
    return _inequality("activity_bound", total, rhs, _vec(total_se, d),
                       _rhs_se(rhs, score, _vec(score_se, d), sigma2, sigma2_se))
