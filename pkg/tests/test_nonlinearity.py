import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from dampwave import nonlinearity as nlin
from dampwave.errors import ConfigError

BUILTINS = ["zero", "linear", "cubic_stable", "cubic_unstable", "saturating"]


def test_cubic_stable_values():
    nl = nlin.builtin("cubic_stable")
    assert (nl.f(2.0), nl.F(2.0), nl.df(2.0), nl.d2f(2.0)) == (-8.0, -4.0, -12.0, -12.0)


def test_zero_is_zero():
    nl = nlin.builtin("zero")
    s = np.linspace(-3, 3, 7)
    for fn in (nl.f, nl.df, nl.d2f, nl.F):
        assert np.all(fn(s) == 0.0)
    assert nl.sign_status == "satisfied"


def test_cubic_unstable_declared_violated():
    nl = nlin.builtin("cubic_unstable")
    assert nl.sign_status == "violated" and nl.witness == 1.0
    assert 1.0 * nl.f(1.0) == 1.0


@pytest.mark.parametrize(
    "spec,beta,status",
    [("cubic_stable", 10.0, "satisfied"), ("cubic_unstable", 1.0, "violated"), ("linear:4", 5.0, "satisfied"),
     ("saturating", 20.0, "satisfied"), ("zero", 1.0, "satisfied")],
)
def test_validate_sign(spec, beta, status):
    rep = nlin.validate_sign(nlin.parse(spec), beta)
    assert rep.status == status
    assert (rep.witness is not None) == (status == "violated")
    if status == "violated":
        assert rep.witness != 0.0
    else:
        assert rep.worst == 0.0


@pytest.mark.parametrize(
    "spec,beta,expected",
    [("cubic_stable", 1.0, (1.0, 3.0, 6.0)), ("zero", 2.0, (0.0, 0.0, 0.0)), ("linear:2", 3.0, (6.0, 2.0, 0.0))],
)
def test_bounds_on(spec, beta, expected):
    assert nlin.bounds_on(nlin.parse(spec), beta) == pytest.approx(expected)


def test_parse_errors():
    with pytest.raises(ConfigError):
        nlin.parse("quintic")
    with pytest.raises(ConfigError):
        nlin.parse("cubic_stable:2")
    with pytest.raises(ConfigError):
        nlin.parse("linear:-1")


def test_validate_sign_range():
    with pytest.raises(ValueError):
        nlin.validate_sign(nlin.builtin("zero"), 0.0)


def test_with_sign_report():
    nl = nlin.builtin("cubic_stable")
    rep = nlin.validate_sign(nlin.builtin("cubic_unstable"), 1.0)
    assert nlin.with_sign_report(nl, rep).sign_status == "violated"


@pytest.mark.parametrize("name", BUILTINS)
def test_primitive_matches_quadrature(name):
    nl = nlin.builtin(name)
    assert nl.F(0.0) == 0.0
    for s in np.linspace(-5, 5, 11):
        val, _ = quad(lambda x: float(nl.f(x)), 0.0, s, epsabs=1e-12, epsrel=1e-12)
        assert float(nl.F(s)) == pytest.approx(val, abs=1e-8)


@pytest.mark.parametrize("name", BUILTINS)
@settings(max_examples=30, deadline=None)
@given(s=st.floats(-5, 5, allow_nan=False))
def test_derivative_consistency(name, s):
    nl = nlin.builtin(name)
    d = 1e-4
    fd = (nl.f(s + d) - nl.f(s - d)) / (2 * d)
    fd2 = (nl.df(s + d) - nl.df(s - d)) / (2 * d)
    assert float(fd) == pytest.approx(float(nl.df(s)), abs=1e-6 * (1 + abs(s) ** 3))
    assert float(fd2) == pytest.approx(float(nl.d2f(s)), abs=1e-6 * (1 + abs(s) ** 3))


@pytest.mark.parametrize("name", ["zero", "linear", "cubic_stable", "saturating"])
@settings(max_examples=30, deadline=None)
@given(s=st.floats(-1e3, 1e3, allow_nan=False))
def test_satisfied_sign_gives_nonpositive_primitive(name, s):
    nl = nlin.builtin(name)
    assert s * float(nl.f(s)) <= 0.0
    assert float(nl.F(s)) <= 0.0
