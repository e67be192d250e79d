"""Brute-force references: subset importance, enumerated Shapley values, Sobol' indices.

These are deliberately slow and definitional; they exist to check the
closed forms in :mod:`dershap.measures`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .gradients import EvalCounter
from .inputs import IndependentInputs, InputSpec, SpecError, sample

__all__ = ["MAX_ENUM_DIM", "imp", "shapley_exact", "SobolEstimate", "sobol_estimate", "subset_mask"]

MAX_ENUM_DIM = 24


def subset_mask(u: int | Iterable[int]) -> int:
    if isinstance(u, (int, np.integer)):
        return int(u)
    mask = 0
    for i in u:
        mask |= 1 << int(i)
    return mask


def imp(c_abs, u) -> float:
    """Derivative-based importance of subset ``u`` (bitmask or index iterable).

    Sum of ``|C|`` over unordered pairs ``i <= j`` inside ``u``; ``imp(empty) = 0``.
    """
    a = np.asarray(c_abs, dtype=float)
    mask = subset_mask(u)
    members = [i for i in range(a.shape[0]) if mask >> i & 1]
    total = 0.0
    for p, i in enumerate(members):
        for j in members[p:]:
            total += a[i, j]
    return total


def _imp_table(a: np.ndarray, chunk: int = 1 << 16) -> np.ndarray:
    """``imp`` of every subset, indexed by bitmask (vectorised enumeration)."""
    d = a.shape[0]
    upper = np.triu(a)
    out = np.empty(1 << d)
    bits = 1 << np.arange(d)
    for start in range(0, 1 << d, chunk):
        masks = np.arange(start, min(start + chunk, 1 << d))
        member = ((masks[:, None] & bits) != 0).astype(float)
        # x^T U x counts each unordered pair (and each diagonal) exactly once
        out[start : start + masks.size] = np.einsum("si,ij,sj->s", member, upper, member)
    return out


def shapley_exact(c_abs, counter: EvalCounter | None = None) -> np.ndarray:
    """Shapley values of ``imp`` by enumerating all subsets.

    ``phi_i = (1/d) sum_{u not containing i} C(d-1, |u|)^{-1} (imp(u+i) - imp(u))``.
    ``counter.model_evaluations`` (if given) is charged one per subset
    importance evaluated, i.e. ``2^d``.
    """
    a = np.asarray(c_abs, dtype=float)
    d = a.shape[0]
    if d > MAX_ENUM_DIM:
        raise ValueError(f"subset enumeration limited to d <= {MAX_ENUM_DIM}, got {d}")
    table = _imp_table(a)
    if counter is not None:
        counter.add(model=table.size)
    masks = np.arange(1 << d)
    sizes = np.zeros(masks.size, dtype=np.int64)
    for i in range(d):
        sizes += (masks >> i) & 1
    # 1 / (d * C(d-1, s)) via log-gamma
    s = np.arange(d)
    log_w = (np.array([math.lgamma(k + 1) for k in s]) + np.array([math.lgamma(d - k) for k in s])
             - math.lgamma(d + 1))
    weight = np.exp(log_w)
    phi = np.empty(d)
    for i in range(d):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        gains = table[without | bit] - table[without]
        phi[i] = np.sum(weight[sizes[without]] * gains)
    return phi


@dataclass
class SobolEstimate:
    total: np.ndarray
    main: np.ndarray
    variance: float
    total_se: np.ndarray
    main_se: np.ndarray
    variance_se: float
    n: int
    evaluations: int
    degenerate: bool = False


def _estimators(fa, fb, fab):
    var = np.var(fa)
    total = np.mean((fa[:, None] - fab) ** 2, axis=0) / (2.0 * var)
    cov = np.mean((fb - fb.mean())[:, None] * (fab - fab.mean(axis=0)), axis=0)
    return total, cov / var, var


def sobol_estimate(
    model: Callable[[np.ndarray], np.ndarray],
    spec: InputSpec,
    n: int,
    seed: int,
    batches: int = 10,
    counter: EvalCounter | None = None,
) -> SobolEstimate:
    """Pick-freeze estimates of singleton total and main Sobol' indices.

    Two independent ``n``-row designs ``A`` and ``B``; ``AB_i`` is ``A`` with
    column ``i`` taken from ``B``. Total index ``E[(f(A) - f(AB_i))^2] / 2 var``,
    main index ``Cov(f(B), f(AB_i)) / var``. Standard errors from splitting the
    rows into ``batches`` contiguous groups. Costs ``n (d + 2)`` evaluations.
    """
    if not isinstance(spec, IndependentInputs):
        raise SpecError("Sobol' indices here need independent inputs")
    if n < 1000:
        raise ValueError("need n >= 1000 rows")
    d = spec.dim
    seed_a, seed_b = np.random.SeedSequence(seed).generate_state(2)
    xa = sample(spec, n, int(seed_a))
    xb = sample(spec, n, int(seed_b))
    fa = np.asarray(model(xa), dtype=float)
    fb = np.asarray(model(xb), dtype=float)
    fab = np.empty((n, d))
    for i in range(d):
        xab = xa.copy()
        xab[:, i] = xb[:, i]
        fab[:, i] = model(xab)
    evaluations = n * (d + 2)
    if counter is not None:
        counter.add(model=evaluations)
    if not (np.isfinite(fa).all() and np.isfinite(fb).all() and np.isfinite(fab).all()):
        raise ValueError("model produced non-finite values")

    var = float(np.var(fa))
    if var <= 1e-14 * float(np.mean(fa * fa)):
        nan = np.full(d, np.nan)
        return SobolEstimate(nan, nan.copy(), var, nan.copy(), nan.copy(), float("nan"), n, evaluations, True)
    total, main, var = _estimators(fa, fb, fab)

    parts = np.array_split(np.arange(n), batches)
    bt, bm, bv = [], [], []
    for idx in parts:
        t, m, v = _estimators(fa[idx], fb[idx], fab[idx])
        bt.append(t)
        bm.append(m)
        bv.append(v)
    root = math.sqrt(batches)
    return SobolEstimate(
        total,
        main,
        float(var),
        np.std(bt, axis=0, ddof=1) / root,
        np.std(bm, axis=0, ddof=1) / root,
        float(np.std(bv, ddof=1) / root),
        n,
        evaluations,
    )
