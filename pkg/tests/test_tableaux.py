from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rex.tableaux import (
    BUILTIN_NAMES,
    ODE_BUILTINS,
    SDE_BUILTINS,
    ButcherTableau,
    ExtendedButcherTableau,
    builtin,
    format_tableau,
    generic2,
    load_tableau,
    parse_tableau,
    stability_polynomial,
    transfer_function,
    validate,
)


def test_builtin_name_lists():
    assert set(ODE_BUILTINS) | set(SDE_BUILTINS) == set(BUILTIN_NAMES)
    assert all(not builtin(n).is_stochastic for n in ODE_BUILTINS)
    assert all(builtin(n).is_stochastic for n in SDE_BUILTINS)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_every_builtin_validates(name):
    assert validate(builtin(name)) == []


def test_euler_coefficients():
    e = builtin("euler")
    assert e.c == (F(0),) and e.a == ((F(0),),) and e.b == (F(1),)


def test_shark_coefficients():
    s = builtin("shark")
    assert isinstance(s, ExtendedButcherTableau)
    assert s.c == (F(0), F(5, 6))
    assert s.a[1][0] == F(5, 6)
    assert s.aW == (F(0), F(5, 6))
    assert s.aH == (F(1), F(1))
    assert s.b == (F(2, 5), F(3, 5))
    assert (s.bW, s.bH) == (F(1), F(0))
    assert s.b_embedded == (F(-3, 5), F(3, 5))


def test_euler_maruyama_coefficients():
    em = builtin("euler_maruyama")
    assert em.b == (F(1),) and em.aW == (F(0),) and em.aH == (F(0),)
    assert (em.bW, em.bH) == (F(1), F(0))


def test_rk4_coefficients():
    r = builtin("rk4")
    assert r.c == (F(0), F(1, 2), F(1, 2), F(1))
    assert r.b == (F(1, 6), F(1, 3), F(1, 3), F(1, 6))


def test_midpoint_embedded_euler():
    t = builtin("midpoint_embedded_euler")
    assert t.b == (F(0), F(1)) and t.b_embedded == (F(1), F(0))


def test_generic2_half_is_midpoint():
    g = generic2(F(1, 2))
    assert g.b == (F(0), F(1))
    assert g.coefficients_equal(builtin("midpoint"))


def test_generic2_family_members():
    assert generic2(1).coefficients_equal(builtin("heun2"))
    assert generic2(F(2, 3)).coefficients_equal(builtin("ralston2"))
    assert builtin("ralston2").b == (F(1, 4), F(3, 4))
    assert builtin("generic2(2/3)").coefficients_equal(builtin("ralston2"))
    assert builtin("generic2", eta=0.5).coefficients_equal(builtin("midpoint"))


@given(num=st.integers(-50, 50).filter(lambda n: n != 0), den=st.integers(1, 50))
def test_generic2_always_valid(num, den):
    g = generic2(F(num, den))
    assert validate(g) == []
    assert stability_polynomial(g)[:3] == (F(1), F(1), F(1, 2))


def test_generic2_rejects_zero():
    with pytest.raises(ValueError):
        generic2(0)


def test_unknown_builtin():
    with pytest.raises(KeyError):
        builtin("rk45")


def test_validate_reports_every_violation():
    bad = ButcherTableau.create("bad", [0, 1], [[0, F(1, 3)], [1, 0]], [F(1, 2), F(1, 3)])
    problems = validate(bad)
    assert any(p.startswith("explicitness") for p in problems)
    assert any(p.startswith("row sum") for p in problems)
    assert any(p.startswith("consistency") for p in problems)
    with pytest.raises(ValueError):
        stability_polynomial(bad)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_transfer_function_at_zero(name):
    assert transfer_function(builtin(name))(0.0) == 1.0


def test_transfer_polynomials():
    assert stability_polynomial(builtin("euler")) == (F(1), F(1))
    for name in ("midpoint", "heun2", "ralston2"):
        assert stability_polynomial(builtin(name)) == (F(1), F(1), F(1, 2))
    assert stability_polynomial(builtin("rk4")) == (F(1), F(1), F(1, 2), F(1, 6), F(1, 24))


def test_rk4_transfer_matches_series():
    r = transfer_function(builtin("rk4"))
    for z in (0.3, -1.2, 2.0 + 0.5j, -0.7j, -2.5 - 1.0j):
        expected = 1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24
        assert abs(r(z) - expected) <= 1e-14 * max(1.0, abs(expected))


def test_transfer_function_vectorised():
    r = transfer_function(builtin("euler"))
    z = np.array([[0.1, -0.5j], [2.0, -3.0 + 1j]])
    np.testing.assert_array_equal(r(z), 1 + z)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_text_format_round_trip(name):
    tab = builtin(name)
    again = parse_tableau(format_tableau(tab), name=tab.name)
    assert again.coefficients_equal(tab)
    assert type(again) is type(tab)


def test_parse_comments_and_decimals(tmp_path):
    text = """
    # Heun's method
    0   | 0   0
    1.0 | 1   0
        | 0.5 1/2
    """
    path = tmp_path / "heun.txt"
    path.write_text(text)
    tab = load_tableau(path)
    assert tab.name == "heun"
    assert tab.coefficients_equal(builtin("heun2"))


def test_parse_errors():
    with pytest.raises(ValueError):
        parse_tableau("0 | 0\n")
    with pytest.raises(ValueError):
        parse_tableau("0 | 0 0 | 0 1\n1/2 | 1/2 0\n| 0 1 | 1 0\n")
    with pytest.raises(ValueError):
        parse_tableau("0 | 0 | 0 0\n| 1\n")


def test_float_views():
    s = builtin("shark")
    np.testing.assert_array_equal(s.a_float, [[0.0, 0.0], [5 / 6, 0.0]])
    np.testing.assert_array_equal(s.aW_float, [0.0, 5 / 6])
    np.testing.assert_array_equal(s.b_float, [0.4, 0.6])
