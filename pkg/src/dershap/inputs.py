"""Input distributions, sampling, tensor Gauss-Legendre grids."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Uniform",
    "Normal",
    "IndependentInputs",
    "CorrelatedNormal",
    "InputSpec",
    "QuadratureGrid",
    "SpecError",
    "BudgetExceeded",
    "DEFAULT_NODE_BUDGET",
    "SAMPLE_BLOCK",
    "pivoted_cholesky",
    "sample",
    "sample_block",
    "gauss_legendre_grid",
    "kucherenko_constant",
    "spec_from_dict",
]

DEFAULT_NODE_BUDGET = 20_000_000
# rows per independently seeded block; sample() is the concatenation of blocks
SAMPLE_BLOCK = 65_536


class SpecError(ValueError):
    """Invalid or unsupported input specification."""


class BudgetExceeded(RuntimeError):
    """A tensor grid would exceed the configured node budget."""


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b) and self.a < self.b):
            raise SpecError(f"uniform needs finite a < b, got ({self.a}, {self.b})")

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)

    def from_unit(self, u):
        return self.a + (self.b - self.a) * u

    def to_dict(self) -> dict:
        return {"dist": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Normal:
    mean: float
    std: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.std) and self.std > 0):
            raise SpecError(f"normal needs finite mean and std > 0, got ({self.mean}, {self.std})")

    def cdf(self, x):
        return ndtr((np.asarray(x, dtype=float) - self.mean) / self.std)

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.std
        return np.exp(-0.5 * z * z) / (self.std * math.sqrt(2.0 * math.pi))

    def to_dict(self) -> dict:
        return {"dist": "normal", "mean": self.mean, "std": self.std}


Marginal = Union[Uniform, Normal]


def _marginal_from_dict(d: dict) -> Marginal:
    kind = d.get("dist")
    if kind == "uniform":
        return Uniform(float(d["a"]), float(d["b"]))
    if kind == "normal":
        return Normal(float(d["mean"]), float(d["std"]))
    raise SpecError(f"unknown distribution {kind!r}; expected 'uniform' or 'normal'")


@dataclass(frozen=True)
class IndependentInputs:
    marginals: tuple
    names: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        if not self.marginals:
            raise SpecError("need at least one input")
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))
            if len(self.names) != len(self.marginals):
                raise SpecError("names and marginals differ in length")

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def independent(self) -> bool:
        return True

    def all_uniform(self) -> bool:
        return all(isinstance(m, Uniform) for m in self.marginals)

    def is_unit_uniform(self) -> bool:
        return all(isinstance(m, Uniform) and m.a == 0.0 and m.b == 1.0 for m in self.marginals)

    def _draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty((n, self.dim))
        for i, m in enumerate(self.marginals):
            if isinstance(m, Uniform):
                out[:, i] = m.from_unit(rng.random(n))
            else:
                out[:, i] = m.mean + m.std * rng.standard_normal(n)
        return out

    def to_dict(self) -> dict:
        d = {"type": "independent", "marginals": [m.to_dict() for m in self.marginals]}
        if self.names is not None:
            d["names"] = list(self.names)
        return d

    def digest(self) -> str:
        return digest_of(self.to_dict())


@dataclass(frozen=True)
class CorrelatedNormal:
    mean: np.ndarray
    cov: np.ndarray
    names: tuple | None = None
    _factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if mean.size < 1:
            raise SpecError("need at least one input")
        if cov.shape != (mean.size, mean.size):
            raise SpecError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise SpecError("covariance is not symmetric")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_factor", pivoted_cholesky(cov))
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def independent(self) -> bool:
        return False

    def all_uniform(self) -> bool:
        return False

    def is_unit_uniform(self) -> bool:
        return False

    @property
    def factor(self) -> np.ndarray:
        """``L`` with ``L @ L.T ~= cov`` (d x rank)."""
        return self._factor

    def _draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self._factor.shape[1]))
        return self.mean + z @ self._factor.T

    def to_dict(self) -> dict:
        d = {"type": "correlated_normal", "mean": self.mean.tolist(), "cov": self.cov.tolist()}
        if self.names is not None:
            d["names"] = list(self.names)
        return d

    def digest(self) -> str:
        return digest_of(self.to_dict())

    def __eq__(self, other):
        return (
            isinstance(other, CorrelatedNormal)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.cov, other.cov)
        )

    __hash__ = None


InputSpec = Union[IndependentInputs, CorrelatedNormal]


def digest_of(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def spec_from_dict(d: dict) -> InputSpec:
    kind = d.get("type", "independent")
    names = d.get("names")
    if kind == "independent":
        return IndependentInputs(tuple(_marginal_from_dict(m) for m in d["marginals"]), names)
    if kind == "correlated_normal":
        return CorrelatedNormal(np.asarray(d["mean"]), np.asarray(d["cov"]), names)
    raise SpecError(f"unknown input spec type {kind!r}")


def pivoted_cholesky(cov, rel_tol: float = 1e-10) -> np.ndarray:
    """Cholesky with diagonal pivoting for PSD matrices.

    Stops once the largest remaining pivot drops below ``rel_tol * trace``,
    so rank-deficient covariances give a ``d x r`` factor with r < d.
    Raises :class:`SpecError` if the matrix is not PSD to that tolerance.
    """
    a = np.array(cov, dtype=float)
    d = a.shape[0]
    tol = rel_tol * max(np.trace(a), 0.0)
    if np.linalg.eigvalsh(a).min() < -max(tol, 1e-300):
        raise SpecError("covariance is not positive semidefinite")
    L = np.zeros((d, d))
    resid = np.diag(a).copy()
    done = np.zeros(d, dtype=bool)
    rank = 0
    for k in range(d):
        cand = np.where(done, -np.inf, resid)
        p = int(np.argmax(cand))
        if cand[p] <= tol:
            break
        done[p] = True
        piv = math.sqrt(cand[p])
        col = (a[:, p] - L[:, :k] @ L[p, :k]) / piv
        col[done] = 0.0
        col[p] = piv
        L[:, k] = col
        resid -= col**2
        resid[p] = 0.0
        rank = k + 1
    return L[:, :rank]


def sample_block(spec: InputSpec, seed: int, block: int, n: int) -> np.ndarray:
    """Rows for block ``block`` of the stream identified by ``seed``.

    Each block has its own generator, so workers can draw blocks in any
    order and the concatenation is the same.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(block,))
    return spec._draw(np.random.Generator(np.random.PCG64(ss)), n)


def sample(spec: InputSpec, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. rows from ``spec``; deterministic given ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    blocks = []
    for b, start in enumerate(range(0, n, SAMPLE_BLOCK)):
        blocks.append(sample_block(spec, seed, b, min(SAMPLE_BLOCK, n - start)))
    return np.concatenate(blocks, axis=0)


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor-product rule stored as 1-D factors; nodes are generated lazily.

    ``weights`` sum to one, so ``sum(w * g(node))`` estimates ``E[g]``.
    """

    nodes_1d: tuple  # per-dimension node arrays
    weights_1d: tuple  # per-dimension probability weights
    points_per_dim: int

    @property
    def dim(self) -> int:
        return len(self.nodes_1d)

    @property
    def size(self) -> int:
        return self.points_per_dim ** self.dim

    def chunk(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        """Points and weights for flat node indices ``start:stop`` (C order)."""
        q = self.points_per_dim
        idx = np.arange(start, stop, dtype=np.int64)
        pts = np.empty((idx.size, self.dim))
        w = np.ones(idx.size)
        for axis in range(self.dim - 1, -1, -1):
            digit = idx % q
            idx //= q
            pts[:, axis] = self.nodes_1d[axis][digit]
            w *= self.weights_1d[axis][digit]
        return pts, w

    def iter_chunks(self, chunk_size: int = SAMPLE_BLOCK) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for start in range(0, self.size, chunk_size):
            yield self.chunk(start, min(start + chunk_size, self.size))

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        return self.chunk(0, self.size)

    def integrate(self, func) -> float:
        """``sum(w * func(points))`` for a vectorised ``func``."""
        total = 0.0
        for pts, w in self.iter_chunks():
            total += float(np.dot(w, func(pts)))
        return total


def gauss_legendre_grid(
    spec: InputSpec, q: int, budget: int = DEFAULT_NODE_BUDGET
) -> QuadratureGrid:
    if not isinstance(spec, IndependentInputs) or not spec.all_uniform():
        raise SpecError("Gauss-Legendre grids need independent uniform marginals")
    if q < 1:
        raise ValueError("q must be >= 1")
    if q**spec.dim > budget:
        raise BudgetExceeded(f"{q}^{spec.dim} = {q**spec.dim} nodes exceeds budget {budget}")
    x, w = np.polynomial.legendre.leggauss(q)
    nodes, weights = [], []
    for m in spec.marginals:
        nodes.append(m.a + (m.b - m.a) * (x + 1.0) / 2.0)
        weights.append(w / 2.0)
    return QuadratureGrid(tuple(nodes), tuple(weights), q)


def kucherenko_constant(marginal: Marginal, grid_points: int = 100_001) -> float:
    """``D(F) = 4 [sup min(F, 1-F) / f]^2``.

    Closed form for uniforms; for normals a grid search over +-10 std.
    """
    if isinstance(marginal, Uniform):
        # sup attained at the midpoint: (1/2) / (1/(b-a))
        return (marginal.b - marginal.a) ** 2
    if isinstance(marginal, Normal):
        x = np.linspace(marginal.mean - 10 * marginal.std, marginal.mean + 10 * marginal.std, grid_points)
        z = (x - marginal.mean) / marginal.std
        # min(F, 1-F) == Phi(-|z|), computed without cancellation in the tail
        ratio = ndtr(-np.abs(z)) / marginal.pdf(x)
        return float(4.0 * ratio.max() ** 2)
    raise SpecError(f"unsupported marginal {marginal!r}")
