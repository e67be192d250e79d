"""Value-and-gradient providers with evaluation accounting.

Every provider maps a batch of points ``(n, d)`` to values ``(n,)`` and
gradients ``(n, d)``. Backends:

* :class:`ADProvider` - exact forward-mode gradients of an :class:`Expression`.
* :class:`FDProvider` - finite differences of any vectorised value function.
  Forward differences with an absolute increment ``h = 1e-6`` by default;
  ``h`` is not scaled by ``|x_i|``, so badly scaled inputs may need a
  different ``h``.
* :class:`ExternalModel` - value function backed by a child process speaking
  the line protocol below; wrap it in :class:`FDProvider` for gradients.

External line protocol (ASCII, stdin/stdout): one request line per point with
``d`` decimal floats separated by single spaces; the child answers each with
one line holding one decimal float, and exits when stdin closes. Nothing else
may be written to stdout.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .expr import Expression
from .inputs import IndependentInputs, SpecError

__all__ = [
    "EvalCounter",
    "ModelEvaluationError",
    "GradientProvider",
    "ADProvider",
    "FDProvider",
    "ExternalModel",
    "ScaledProvider",
    "external_model_call",
    "gradient_at",
    "unit_scaling",
]


class ModelEvaluationError(RuntimeError):
    """A model returned a non-finite value or its process failed."""

    def __init__(self, message: str, row: int | None = None, point=None, index: int | None = None):
        parts = [message]
        if row is not None:
            parts.append(f"row {row}")
        if index is not None:
            parts.append(f"coordinate {index}")
        if point is not None:
            parts.append(f"point {np.asarray(point).tolist()}")
        super().__init__("; ".join(parts))
        self.row = row
        self.point = point
        self.index = index


class EvalCounter:
    """Thread-safe monotone counters for model and gradient evaluations."""

    def __init__(self):
        self._lock = threading.Lock()
        self.model_evaluations = 0
        self.gradient_evaluations = 0

    def add(self, model: int = 0, gradient: int = 0) -> None:
        with self._lock:
            self.model_evaluations += model
            self.gradient_evaluations += gradient

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "model_evaluations": self.model_evaluations,
                "gradient_evaluations": self.gradient_evaluations,
            }


class GradientProvider:
    dim: int
    counter: EvalCounter
    backend: str = "abstract"

    def value_and_grad(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"backend": self.backend, "dim": self.dim}


def _check_finite(values: np.ndarray, points: np.ndarray, what: str, offset: int = 0) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        r = int(np.flatnonzero(bad.reshape(bad.shape[0], -1).any(axis=1))[0])
        raise ModelEvaluationError(f"non-finite {what}", row=offset + r, point=points[r])


class ADProvider(GradientProvider):
    backend = "ad"

    def __init__(self, expr: Expression, counter: EvalCounter | None = None):
        self.expr = expr
        self.dim = expr.dim
        self.counter = counter or EvalCounter()

    def value_and_grad(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        val, grad = self.expr.value_and_grad(points)
        self.counter.add(model=points.shape[0], gradient=points.shape[0])
        _check_finite(val, points, "model value")
        _check_finite(grad, points, "gradient")
        return val, grad

    def describe(self) -> dict:
        return {"backend": "ad", "dim": self.dim, "expression": self.expr.source,
                "variables": list(self.expr.variables)}


class FDProvider(GradientProvider):
    """Finite differences of a vectorised value function ``func(points) -> values``.

    Forward: ``g_i = (f(x + h e_i) - f(x)) / h``, d+1 model calls per point.
    Central (``central=True``): ``(f(x + h e_i) - f(x - h e_i)) / 2h``, 2d+1 calls.
    All perturbed points of a batch go to ``func`` in one call.
    """

    backend = "fd"

    def __init__(
        self,
        func: Callable[[np.ndarray], np.ndarray],
        dim: int,
        h: float = 1e-6,
        central: bool = False,
        counter: EvalCounter | None = None,
        name: str | None = None,
    ):
        if not h > 0:
            raise ValueError("finite-difference increment must be positive")
        self.func = func
        self.dim = dim
        self.h = float(h)
        self.central = central
        self.counter = counter or EvalCounter()
        self.name = name

    def _values(self, pts: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.func(pts), dtype=float).reshape(-1)
        if vals.shape[0] != pts.shape[0]:
            raise ModelEvaluationError(f"model returned {vals.shape[0]} values for {pts.shape[0]} points")
        self.counter.add(model=pts.shape[0])
        return vals

    def value_and_grad(self, points):
        x = np.atleast_2d(np.asarray(points, dtype=float))
        n, d = x.shape
        if d != self.dim:
            raise ValueError(f"expected {self.dim} coordinates, got {d}")
        eye = np.eye(d) * self.h
        plus = (x[:, None, :] + eye[None, :, :]).reshape(n * d, d)
        if self.central:
            minus = (x[:, None, :] - eye[None, :, :]).reshape(n * d, d)
            allv = self._values(np.concatenate([x, plus, minus]))
            f0 = allv[:n]
            fp = allv[n : n + n * d].reshape(n, d)
            fm = allv[n + n * d :].reshape(n, d)
            grad = (fp - fm) / (2.0 * self.h)
        else:
            allv = self._values(np.concatenate([x, plus]))
            f0 = allv[:n]
            fp = allv[n:].reshape(n, d)
            grad = (fp - f0[:, None]) / self.h
        self.counter.add(gradient=n)
        _check_finite(f0, x, "model value")
        bad = ~np.isfinite(grad)
        if bad.any():
            r, i = (int(v) for v in np.argwhere(bad)[0])
            raise ModelEvaluationError("non-finite finite-difference derivative", row=r, point=x[r], index=i)
        return f0, grad

    def describe(self) -> dict:
        out = {"backend": "fd", "dim": self.dim, "h": self.h,
               "scheme": "central" if self.central else "forward"}
        if self.name:
            out["model"] = self.name
        return out


class ScaledProvider(GradientProvider):
    """Gradients with respect to rescaled inputs: ``g_i * scale_i``.

    With ``scale_i = (b_i - a_i) / 2`` this is the gradient in coordinates
    mapped onto ``[-1, 1]`` (see :func:`unit_scaling`).
    """

    def __init__(self, inner: GradientProvider, scale):
        self.inner = inner
        self.scale = np.asarray(scale, dtype=float)
        if self.scale.shape != (inner.dim,):
            raise ValueError("scale must have one entry per input")
        self.dim = inner.dim
        self.counter = inner.counter
        self.backend = inner.backend

    def value_and_grad(self, points):
        val, grad = self.inner.value_and_grad(points)
        return val, grad * self.scale

    def describe(self) -> dict:
        out = dict(self.inner.describe())
        out["input_scale"] = self.scale.tolist()
        return out


def unit_scaling(spec) -> np.ndarray:
    """Half-widths ``(b - a) / 2`` of independent uniform marginals."""
    if not isinstance(spec, IndependentInputs) or not spec.all_uniform():
        raise SpecError("unit input scaling needs independent uniform marginals")
    return np.array([(m.b - m.a) / 2.0 for m in spec.marginals])


def gradient_at(provider: GradientProvider, point) -> tuple[float, np.ndarray]:
    """Value and gradient at a single point."""
    point = np.asarray(point, dtype=float)
    if point.shape != (provider.dim,):
        raise ValueError(f"point must have length {provider.dim}, got shape {point.shape}")
    val, grad = provider.value_and_grad(point[None, :])
    return float(val[0]), grad[0]


# --------------------------------------------------------------------------
# External process models


def _format_rows(points: np.ndarray) -> bytes:
    lines = [" ".join(repr(v) for v in row) for row in points.tolist()]
    return ("\n".join(lines) + "\n").encode("ascii") if lines else b""


def _run_batch(argv: Sequence[str], points: np.ndarray, offset: int, timeout: float | None) -> np.ndarray:
    try:
        proc = subprocess.run(
            list(argv), input=_format_rows(points), capture_output=True, timeout=timeout, check=False
        )
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise ModelEvaluationError(f"external model failed to run: {exc}") from exc
    if proc.returncode != 0:
        tail = proc.stderr.decode(errors="replace").strip().splitlines()[-1:] or [""]
        raise ModelEvaluationError(f"external model exited with status {proc.returncode}: {tail[0]}")
    lines = proc.stdout.decode("ascii", errors="replace").splitlines()
    if len(lines) != points.shape[0]:
        raise ModelEvaluationError(
            f"external model returned {len(lines)} lines for {points.shape[0]} points"
        )
    out = np.empty(points.shape[0])
    for r, line in enumerate(lines):
        try:
            out[r] = float(line.strip())
        except ValueError:
            raise ModelEvaluationError(f"malformed output line {line!r}", row=offset + r) from None
        if not math.isfinite(out[r]):
            raise ModelEvaluationError(f"non-finite value {line.strip()!r}", row=offset + r, point=points[r])
    return out


class ExternalModel:
    """Value-only model answered by a child process (one spawn per batch per worker)."""

    def __init__(self, command: str | Sequence[str], dim: int, workers: int = 1, timeout: float | None = None):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise ValueError("empty external command")
        self.command = command if isinstance(command, str) else shlex.join(self.argv)
        self.dim = dim
        self.workers = max(1, int(workers))
        self.timeout = timeout
        self._lock = threading.Lock()
        self.spawns = 0

    def _spawned(self, k: int) -> None:
        with self._lock:
            self.spawns += k

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} coordinates, got {pts.shape[1]}")
        n = pts.shape[0]
        if n == 0:
            return np.empty(0)
        k = min(self.workers, n)
        bounds = np.linspace(0, n, k + 1).astype(int)
        parts = [(pts[bounds[j] : bounds[j + 1]], int(bounds[j])) for j in range(k)]
        self._spawned(k)
        if k == 1:
            return _run_batch(self.argv, pts, 0, self.timeout)
        with ThreadPoolExecutor(max_workers=k) as pool:
            results = list(pool.map(lambda p: _run_batch(self.argv, p[0], p[1], self.timeout), parts))
        return np.concatenate(results)


def external_model_call(command: str | Sequence[str], points, timeout: float | None = None) -> np.ndarray:
    """Evaluate ``points`` with one spawn of ``command``; values keep row order."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return ExternalModel(command, pts.shape[1], timeout=timeout)(pts)
