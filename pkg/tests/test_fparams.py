import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hodoflow.errors import ConfigError
from hodoflow.fparams import (Constant, Linear, Log, Power, Quadratic, Tabulated, Wrapped,
                              as_fparam, from_config)


def test_values():
    assert Constant(2.5)(np.zeros(3)).tolist() == [2.5] * 3
    assert Linear(1.0, [2.0, -1.0])(3.0, 4.0) == pytest.approx(3.0)
    assert Quadratic(1, 2, 3)(2.0) == pytest.approx(17.0)
    assert Power(2.0, 0.5)(4.0) == pytest.approx(4.0)
    assert math.isnan(Power(2.0, 0.5)(-1.0))
    assert Log(1.0)(1.0) == 0.0
    assert Log(2.0)(math.exp(-4)) == pytest.approx(4 * math.exp(-4))
    assert math.isnan(Log(1.0)(1.5))


def test_linear_arity_checked():
    with pytest.raises(ValueError):
        Linear(0.0, [1.0, 2.0])(1.0)


@pytest.mark.parametrize("f", [Quadratic(0.3, -1.2, 0.7), Power(1.3, 2.5), Log(0.8),
                               Linear(0.1, 2.0), Tabulated([0, 1, 2, 3], [0, 1, 4, 9])])
def test_analytic_grad_matches_fd(f):
    x = np.linspace(0.2, 0.9, 8)
    exact = f.grad(x)[0]
    fd = (f(x + 1e-6) - f(x - 1e-6)) / 2e-6
    np.testing.assert_allclose(exact, fd, rtol=1e-6, atol=1e-8)


def test_wrapped_fd_grad():
    f = Wrapped(lambda a, b: a * a * b)
    g = f.grad(np.array(2.0), np.array(3.0))
    assert g[0] == pytest.approx(12.0, rel=1e-8)
    assert g[1] == pytest.approx(4.0, rel=1e-8)


def test_tabulated_is_monotone_and_bounded():
    f = Tabulated([0, 1, 2], [0, 1, 1.1])
    x = np.linspace(0, 2, 201)
    assert np.all(np.diff(f(x)) >= -1e-15)
    assert math.isnan(f(2.5))
    with pytest.raises(ConfigError):
        Tabulated([0, 0, 1], [1, 2, 3])


@pytest.mark.parametrize("f", [Constant(1.5), Linear(1.0, 2.0), Linear(0.5, [1.0, -2.0]),
                               Quadratic(1, 2, 3), Power(2.0, -1.5), Log(0.3),
                               Tabulated([0, 1], [2, 3])])
def test_config_round_trip(f):
    g = from_config(f.to_config())
    assert type(g) is type(f)
    assert g.to_config() == f.to_config()


def test_config_errors():
    with pytest.raises(ConfigError, match="unknown"):
        from_config({"type": "spline"})
    with pytest.raises(ConfigError, match="missing"):
        from_config({"type": "power", "k": 1})
    with pytest.raises(ConfigError):
        Wrapped(abs).to_config()
    assert from_config({"type": "quadratic", "a": 1, "b": 2}).c == 0.0


def test_as_fparam_coercions():
    assert isinstance(as_fparam(3), Constant)
    assert isinstance(as_fparam({"type": "log", "k": 1}), Log)
    assert isinstance(as_fparam(np.sin), Wrapped)
    with pytest.raises(ConfigError):
        as_fparam("sin")


@given(st.floats(1e-6, 1 - 1e-6))
def test_log_matches_its_closed_form(x):
    assert Log(1.7)(x) == pytest.approx(1.7 * x * math.sqrt(-math.log(x)), rel=1e-12)
