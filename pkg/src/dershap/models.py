"""Built-in models: the Ebola basic reproduction number and analytic test functions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .expr import Expression, parse_expression
from .inputs import IndependentInputs, InputSpec, Uniform, digest_of

__all__ = [
    "BuiltinModel",
    "ebola_r0",
    "ebola_table",
    "ebola_model",
    "linear_model",
    "bilinear_model",
    "additive_sine_model",
    "sobol_g_model",
    "builtin_catalog",
    "get_model",
    "EBOLA_VARIABLES",
]

EBOLA_VARIABLES = ("beta1", "beta2", "beta3", "rho1", "gamma1", "gamma2", "omega", "psi")


@dataclass(frozen=True)
class BuiltinModel:
    id: str
    expression: Expression
    default_spec: InputSpec
    linear: bool = False
    smooth: bool = True
    analytic_sobol: dict | None = None  # main, total, variance under default_spec
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.default_spec.dim != self.expression.dim:
            raise ValueError(f"{self.id}: spec dimension does not match model dimension")

    @property
    def dim(self) -> int:
        return self.expression.dim

    @property
    def variables(self) -> tuple:
        return self.expression.variables

    def __call__(self, points) -> np.ndarray:
        return self.expression.value(np.atleast_2d(points))

    def digest(self, spec: InputSpec | None = None) -> str:
        spec = spec or self.default_spec
        return digest_of({"model": self.id, "expression": self.expression.source,
                        "variables": list(self.variables), "inputs": spec.to_dict()})


def ebola_table() -> dict:
    with resources.files("dershap").joinpath("data/ebola_ranges.json").open() as fh:
        return json.load(fh)


def ebola_r0(x) -> np.ndarray | float:
    """Basic reproduction number, evaluated directly (no expression parsing).

    ``x`` columns: beta1, beta2, beta3, rho1, gamma1, gamma2, omega, psi.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    b1, b2, b3, r1, g1, g2, w, psi = x.T
    if np.any(g1 + psi <= 0) or np.any(w <= 0) or np.any(g2 <= 0):
        raise ValueError("R0 needs gamma1 + psi > 0, omega > 0 and gamma2 > 0")
    r0 = (b1 + b2 * r1 * g1 / w + b3 * psi / g2) / (g1 + psi)
    return float(r0[0]) if single else r0


def ebola_model(country: str = "liberia") -> BuiltinModel:
    table = ebola_table()
    ranges = table["ranges"][country]
    spec = IndependentInputs(tuple(Uniform(*ranges[v]) for v in EBOLA_VARIABLES), EBOLA_VARIABLES)
    expr = parse_expression(table["expression"], EBOLA_VARIABLES)
    return BuiltinModel(f"ebola_{country}", expr, spec, params={"country": country})


def _unit_cube(d: int, names) -> IndependentInputs:
    return IndependentInputs(tuple(Uniform(0.0, 1.0) for _ in range(d)), tuple(names))


def _names(d: int) -> tuple:
    return tuple(f"x{i}" for i in range(d))


def _additive_indices(parts) -> dict:
    parts = np.asarray(parts, dtype=float)
    var = float(parts.sum())
    s = parts / var
    return {"main": s, "total": s.copy(), "variance": var}


def linear_model(a=(3.0, 1.0)) -> BuiltinModel:
    a = tuple(float(v) for v in a)
    names = _names(len(a))
    text = " + ".join(f"{v!r}*{n}" for v, n in zip(a, names))
    return BuiltinModel(
        "linear", parse_expression(text, names), _unit_cube(len(a), names), linear=True,
        analytic_sobol=_additive_indices(np.square(a) / 12.0), params={"a": list(a)},
    )


def bilinear_model() -> BuiltinModel:
    names = _names(2)
    # f = x0 x1 on (0,1)^2: sigma^2 = 7/144, sigma_i^2 = 3/144, sigma_01^2 = 1/144
    sobol = {"main": np.array([3 / 7, 3 / 7]), "total": np.array([4 / 7, 4 / 7]), "variance": 7 / 144}
    return BuiltinModel("bilinear", parse_expression("x0*x1", names), _unit_cube(2, names),
                        linear=True, analytic_sobol=sobol)


def additive_sine_model(a=(1.0, 0.5, 0.25)) -> BuiltinModel:
    a = tuple(float(v) for v in a)
    names = _names(len(a))
    text = " + ".join(f"{v!r}*sin(2*pi*{n})" for v, n in zip(a, names))
    return BuiltinModel(
        "additive_sine", parse_expression(text, names), _unit_cube(len(a), names),
        analytic_sobol=_additive_indices(np.square(a) / 2.0), params={"a": list(a)},
    )


def sobol_g_model(a=(0.0, 1.0, 4.5, 9.0)) -> BuiltinModel:
    a = np.asarray(a, dtype=float)
    names = _names(a.size)
    text = " * ".join(f"((abs(4*{n} - 2) + {float(v)!r}) / {float(1 + v)!r})" for v, n in zip(a, names))
    vi = 1.0 / (3.0 * (1.0 + a) ** 2)
    var = float(np.prod(1.0 + vi) - 1.0)
    total = np.array([vi[i] * np.prod(np.delete(1.0 + vi, i)) for i in range(a.size)]) / var
    return BuiltinModel(
        "sobol_g", parse_expression(text, names), _unit_cube(a.size, names), smooth=False,
        analytic_sobol={"main": vi / var, "total": total, "variance": var}, params={"a": a.tolist()},
    )


_FACTORIES = {
    "ebola_liberia": lambda: ebola_model("liberia"),
    "ebola_sierra_leone": lambda: ebola_model("sierra_leone"),
    "linear": linear_model,
    "bilinear": bilinear_model,
    "additive_sine": additive_sine_model,
    "sobol_g": sobol_g_model,
}


def builtin_catalog() -> list[BuiltinModel]:
    return [make() for make in _FACTORIES.values()]


def get_model(ref: str) -> BuiltinModel:
    """Look up a model by id; ``linear:3,1`` style suffixes set coefficients."""
    name, _, args = ref.partition(":")
    if name not in _FACTORIES:
        raise KeyError(f"unknown model {name!r}; choose from {', '.join(_FACTORIES)}")
    if not args:
        return _FACTORIES[name]()
    if name not in ("linear", "additive_sine", "sobol_g"):
        raise ValueError(f"model {name!r} takes no parameters")
    try:
        coeffs = [float(v) for v in args.split(",")]
    except ValueError:
        raise ValueError(f"bad coefficients in {ref!r}") from None
    if name == "sobol_g" and any(c < 0 or not math.isfinite(c) for c in coeffs):
        raise ValueError("sobol_g coefficients must be >= 0")
    return _FACTORIES[name](coeffs)
