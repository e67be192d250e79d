"""Gradient second-moment matrix ``C = E[grad f grad f^T]`` and its spectrum."""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .expr import ExprDomainError
from .gradients import GradientProvider, ModelEvaluationError
from .inputs import (
    DEFAULT_NODE_BUDGET,
    SAMPLE_BLOCK,
    InputSpec,
    gauss_legendre_grid,
    sample_block,
)

__all__ = [
    "CMatrix",
    "EigenDecomp",
    "EigenConvergenceError",
    "ArtifactError",
    "estimate_c_mc",
    "estimate_c_quadrature",
    "estimate_dgsm_mc",
    "eigendecompose",
    "abs_entrywise",
]

ARTIFACT_VERSION = 1


class EigenConvergenceError(RuntimeError):
    pass


class ArtifactError(ValueError):
    """Malformed C-matrix artifact or one that belongs to another model."""


# --------------------------------------------------------------------------
# Streaming compensated accumulation


class _Neumaier:
    """Elementwise compensated running sum of arrays."""

    def __init__(self, shape):
        self.s = np.zeros(shape)
        self.c = np.zeros(shape)

    def add(self, x: np.ndarray) -> None:
        t = self.s + x
        big = np.abs(self.s) >= np.abs(x)
        self.c += np.where(big, (self.s - t) + x, (x - t) + self.s)
        self.s = t

    @property
    def total(self) -> np.ndarray:
        return self.s + self.c


def _pair_index(d: int):
    return np.triu_indices(d)


def _chunk_pair_sums(grad: np.ndarray, weights: np.ndarray | None, iu, ju, squares: bool):
    # rows of gt are contiguous so np.sum(axis=1) sums each pair pairwise
    gt = np.ascontiguousarray(grad.T)
    prods = gt[iu] * gt[ju]
    if weights is not None:
        prods = prods * weights
    s1 = np.sum(prods, axis=1)
    s2 = np.sum(prods * prods, axis=1) if squares else None
    return s1, s2


def _chunk_diag_sums(grad: np.ndarray, weights: np.ndarray | None):
    gt = np.ascontiguousarray(grad.T)
    prods = gt * gt
    if weights is not None:
        prods = prods * weights
    return np.sum(prods, axis=1)


def _mirror(d: int, iu, ju, packed: np.ndarray) -> np.ndarray:
    out = np.zeros((d, d))
    out[iu, ju] = packed
    out[ju, iu] = packed
    return out


def _mc_chunks(n: int):
    return [(b, start, min(SAMPLE_BLOCK, n - start)) for b, start in enumerate(range(0, n, SAMPLE_BLOCK))]


def _map_ordered(fn, items, workers: int):
    # results come back in item order, so the reduction order never depends on workers
    if workers <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        window = workers * 2
        pending = []
        it = iter(items)
        for item in it:
            pending.append(pool.submit(fn, item))
            if len(pending) >= window:
                yield pending.pop(0).result()
        for fut in pending:
            yield fut.result()


def _grads(provider: GradientProvider, pts: np.ndarray, offset: int) -> np.ndarray:
    try:
        _, g = provider.value_and_grad(pts)
    except ModelEvaluationError as exc:
        if exc.row is not None:
            raise ModelEvaluationError(
                str(exc).split(";")[0], row=offset + exc.row, point=exc.point, index=exc.index
            ) from exc
        raise
    except ExprDomainError as exc:
        if exc.row is not None:
            raise ExprDomainError(exc.message, exc.node, offset + exc.row) from exc
        raise
    return g


# --------------------------------------------------------------------------
# C matrix


@dataclass
class CMatrix:
    entries: np.ndarray
    estimator: dict
    metadata: dict = field(default_factory=dict)
    stderr: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def to_dict(self) -> dict:
        d = {
            "version": ARTIFACT_VERSION,
            "dim": self.dim,
            "entries": self.entries.reshape(-1).tolist(),
            "estimator": self.estimator,
            "metadata": self.metadata,
        }
        if self.stderr is not None:
            d["stderr"] = self.stderr.reshape(-1).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CMatrix":
        try:
            dim = int(d["dim"])
            entries = np.asarray(d["entries"], dtype=float).reshape(dim, dim)
            stderr = d.get("stderr")
            if stderr is not None:
                stderr = np.asarray(stderr, dtype=float).reshape(dim, dim)
            out = cls(entries, dict(d["estimator"]), dict(d.get("metadata", {})), stderr)
        except (KeyError, TypeError, ValueError) as exc:
            raise ArtifactError(f"malformed C-matrix artifact: {exc}") from exc
        if not np.array_equal(entries, entries.T):
            raise ArtifactError("artifact entries are not symmetric")
        return out

    def save(self, path) -> None:
        _atomic_write(path, json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path, model_digest: str | None = None) -> "CMatrix":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ArtifactError(f"cannot read artifact {path}: {exc}") from exc
        cm = cls.from_dict(raw)
        if model_digest is not None and cm.metadata.get("model_digest") != model_digest:
            raise ArtifactError(
                f"artifact digest {cm.metadata.get('model_digest')!r} does not match model {model_digest!r}"
            )
        return cm


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def estimate_c_mc(
    provider: GradientProvider,
    spec: InputSpec,
    n: int,
    seed: int,
    workers: int = 1,
    metadata: dict | None = None,
) -> CMatrix:
    """Monte Carlo ``C_hat = (1/n) sum grad f(x_j) grad f(x_j)^T`` over ``sample(spec, n, seed)``.

    Entrywise standard errors are attached as ``stderr``.
    """
    if n < 2:
        raise ValueError("need n >= 2 samples")
    d = spec.dim
    if provider.dim != d:
        raise ValueError(f"provider dimension {provider.dim} != input dimension {d}")
    iu, ju = _pair_index(d)
    s1, s2 = _Neumaier(iu.size), _Neumaier(iu.size)

    def work(chunk):
        b, start, m = chunk
        pts = sample_block(spec, seed, b, m)
        return _chunk_pair_sums(_grads(provider, pts, start), None, iu, ju, squares=True)

    for a, b in _map_ordered(work, _mc_chunks(n), workers):
        s1.add(a)
        s2.add(b)
    mean = s1.total / n
    var = np.maximum(s2.total / n - mean * mean, 0.0) * (n / (n - 1))
    meta = {"input_digest": spec.digest(), "workers": workers, "reduction": "chunk-ordered"}
    meta.update(metadata or {})
    return CMatrix(
        _mirror(d, iu, ju, mean),
        {"kind": "mc", "n": n, "seed": seed},
        meta,
        _mirror(d, iu, ju, np.sqrt(var / n)),
    )


def estimate_dgsm_mc(provider: GradientProvider, spec: InputSpec, n: int, seed: int, workers: int = 1) -> np.ndarray:
    """Direct DGSM estimate ``(1/n) sum (d f / d x_i)^2``; same samples as :func:`estimate_c_mc`."""
    if n < 1:
        raise ValueError("need n >= 1 samples")
    acc = _Neumaier(spec.dim)

    def work(chunk):
        b, start, m = chunk
        return _chunk_diag_sums(_grads(provider, sample_block(spec, seed, b, m), start), None)

    for part in _map_ordered(work, _mc_chunks(n), workers):
        acc.add(part)
    return acc.total / n


def estimate_c_quadrature(
    provider: GradientProvider,
    spec: InputSpec,
    q: int,
    budget: int = DEFAULT_NODE_BUDGET,
    workers: int = 1,
    metadata: dict | None = None,
) -> CMatrix:
    """Tensor Gauss-Legendre estimate ``sum_k w_k grad f grad f^T`` (weights sum to 1)."""
    grid = gauss_legendre_grid(spec, q, budget)
    d = spec.dim
    if provider.dim != d:
        raise ValueError(f"provider dimension {provider.dim} != input dimension {d}")
    iu, ju = _pair_index(d)
    acc = _Neumaier(iu.size)
    starts = list(range(0, grid.size, SAMPLE_BLOCK))

    def work(start):
        pts, w = grid.chunk(start, min(start + SAMPLE_BLOCK, grid.size))
        return _chunk_pair_sums(_grads(provider, pts, start), w, iu, ju, squares=False)[0]

    for part in _map_ordered(work, starts, workers):
        acc.add(part)
    meta = {"input_digest": spec.digest(), "workers": workers, "reduction": "chunk-ordered",
            "nodes": grid.size}
    meta.update(metadata or {})
    return CMatrix(_mirror(d, iu, ju, acc.total), {"kind": "quadrature", "q": q}, meta)


def abs_entrywise(c) -> np.ndarray:
    m = c.entries if isinstance(c, CMatrix) else np.asarray(c, dtype=float)
    return np.abs(m)


# --------------------------------------------------------------------------
# Symmetric eigendecomposition (cyclic Jacobi)


@dataclass(frozen=True)
class EigenDecomp:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, orthonormal
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        w = self.eigenvectors
        return (w * self.eigenvalues) @ w.T


def eigendecompose(a, tol: float = 1e-12, max_sweeps: int = 100, order: str = "value") -> EigenDecomp:
    """Eigenpairs of a symmetric matrix by cyclic Jacobi rotations.

    Converged once every off-diagonal entry is below ``tol * ||A||_F``.
    ``order="value"`` sorts eigenvalues descending; ``order="magnitude"``
    sorts by descending ``|lambda|``. Each eigenvector is signed so its
    largest-magnitude component is positive.
    """
    a = np.array(a.entries if isinstance(a, CMatrix) else a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"need a square matrix, got shape {a.shape}")
    scale = np.abs(a).max(initial=0.0)
    if np.abs(a - a.T).max(initial=0.0) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    d = a.shape[0]
    v = np.eye(d)
    threshold = tol * np.linalg.norm(a)
    sweeps = 0
    off_mask = ~np.eye(d, dtype=bool)
    while True:
        off = np.abs(a[off_mask]).max(initial=0.0)
        if off <= threshold:
            break
        if sweeps >= max_sweeps:
            raise EigenConvergenceError(
                f"Jacobi did not converge in {max_sweeps} sweeps; largest off-diagonal {off:.3e}"
            )
        sweeps += 1
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= threshold * 1e-3:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    lam = np.diag(a).copy()
    if order == "value":
        perm = np.argsort(-lam, kind="stable")
    elif order == "magnitude":
        perm = np.argsort(-np.abs(lam), kind="stable")
    else:
        raise ValueError(f"unknown order {order!r}")
    lam = lam[perm]
    v = v[:, perm]
    for j in range(d):
        k = int(np.argmax(np.abs(v[:, j])))
        if v[k, j] < 0:
            v[:, j] = -v[:, j]
    return EigenDecomp(lam, v, sweeps)
