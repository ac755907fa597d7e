"""Analytic source terms ``f`` with derivatives and primitive.

Builtins are polynomial or rational, hence analytic; the sign condition
``s f(s) <= 0`` is recorded on each instance and re-checked by sampling.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigError

SIGN_TOL = 1e-12
DEFAULT_SAMPLES = 10_001

Func = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SignReport:
    status: str  # "satisfied" | "violated"
    range: tuple[float, float]
    worst: float  # max of s f(s) and F(s) over the samples
    witness: float | None = None

    def to_dict(self) -> dict:
        return {"status": self.status, "range": list(self.range), "worst": self.worst, "witness": self.witness}


@dataclass(frozen=True)
class Nonlinearity:
    name: str
    f: Func
    df: Func
    d2f: Func
    F: Func
    sign_status: str = "unchecked"
    witness: float | None = None
    params: dict = field(default_factory=dict)

    def __call__(self, s):
        return self.f(s)

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"


def _const(value):
    return lambda s: np.zeros_like(np.asarray(s, dtype=float)) + value


def _zero():
    z = _const(0.0)
    return Nonlinearity("zero", z, z, z, z, "satisfied")


def _linear(lam):
    if lam < 0:
        raise ConfigError("linear nonlinearity needs lambda >= 0 (f = -lambda s)")
    return Nonlinearity(
        "linear",
        lambda s: -lam * np.asarray(s, dtype=float),
        _const(-lam),
        _const(0.0),
        lambda s: -0.5 * lam * np.asarray(s, dtype=float) ** 2,
        "satisfied",
        params={"lambda": lam},
    )


def _cubic(sign):
    name = "cubic_stable" if sign < 0 else "cubic_unstable"
    status, witness = ("satisfied", None) if sign < 0 else ("violated", 1.0)
    return Nonlinearity(
        name,
        lambda s: sign * np.asarray(s, dtype=float) ** 3,
        lambda s: 3.0 * sign * np.asarray(s, dtype=float) ** 2,
        lambda s: 6.0 * sign * np.asarray(s, dtype=float),
        lambda s: 0.25 * sign * np.asarray(s, dtype=float) ** 4,
        status,
        witness,
    )


def _saturating():
    # f = -s^3/(1+s^2) = -s + s/(1+s^2)
    def f(s):
        s = np.asarray(s, dtype=float)
        return -(s**3) / (1.0 + s**2)

    def df(s):
        s2 = np.asarray(s, dtype=float) ** 2
        return -s2 * (3.0 + s2) / (1.0 + s2) ** 2

    def d2f(s):
        s = np.asarray(s, dtype=float)
        return -2.0 * s * (3.0 - s**2) / (1.0 + s**2) ** 3

    def F(s):
        s2 = np.asarray(s, dtype=float) ** 2
        return -0.5 * s2 + 0.5 * np.log1p(s2)

    return Nonlinearity("saturating", f, df, d2f, F, "satisfied")


def builtin(name: str, **params) -> Nonlinearity:
    """Return a named source term.

    Known names: ``zero``, ``linear`` (``lam``, f = -lam s), ``cubic_stable``
    (f = -s³), ``cubic_unstable`` (f = +s³, sign condition violated at s = 1)
    and ``saturating`` (f = -s³/(1+s²)).
    """
    if name == "zero":
        return _zero()
    if name == "linear":
        return _linear(float(params.get("lam", params.get("lambda", 1.0))))
    if name == "cubic_stable":
        return _cubic(-1.0)
    if name == "cubic_unstable":
        return _cubic(+1.0)
    if name == "saturating":
        return _saturating()
    raise ConfigError(f"unknown nonlinearity {name!r}")


def parse(spec: str) -> Nonlinearity:
    """Parse ``"name"`` or ``"name:param"`` (e.g. ``"linear:4"``)."""
    name, _, arg = spec.strip().partition(":")
    if name == "linear" and arg:
        return builtin("linear", lam=float(arg))
    if arg:
        raise ConfigError(f"nonlinearity {name!r} takes no parameter")
    return builtin(name)


def _grid(beta, n_samples):
    if beta <= 0:
        raise ValueError("range half-width must be positive")
    return np.linspace(-beta, beta, n_samples)


def validate_sign(nl: Nonlinearity, beta: float, n_samples: int = DEFAULT_SAMPLES) -> SignReport:
    """Sample ``s f(s)`` and ``F(s)`` on ``[-beta, beta]``."""
    s = _grid(beta, n_samples)
    sf = s * nl.f(s)
    Fs = nl.F(s)
    worst_vals = np.maximum(sf, Fs)
    i = int(np.argmax(worst_vals))
    worst = float(worst_vals[i])
    if worst <= SIGN_TOL:
        return SignReport("satisfied", (-beta, beta), worst)
    return SignReport("violated", (-beta, beta), worst, float(s[i]))


def with_sign_report(nl: Nonlinearity, report: SignReport) -> Nonlinearity:
    return replace(nl, sign_status=report.status, witness=report.witness)


def bounds_on(nl: Nonlinearity, beta: float, n_samples: int = DEFAULT_SAMPLES) -> tuple[float, float, float]:
    """Sampled ``(sup|f|, sup|f'|, sup|f''|)`` over ``[-beta, beta]``."""
    s = _grid(beta, n_samples)
    return (
        float(np.max(np.abs(nl.f(s)))),
        float(np.max(np.abs(nl.df(s)))),
        float(np.max(np.abs(nl.d2f(s)))),
    )
