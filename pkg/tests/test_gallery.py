import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gtrident.errors import DomainError, ValidationError
from gtrident.gallery import (
    PlanarCurve,
    adaptive_simpson,
    binary_nonident_witness,
    count_inflections,
    curve_points,
    f_graph,
    phi_fiber_demo,
    rogers_f,
)
from gtrident.model import TripleTree

# reference values from scipy.integrate.quad at 1e-14 tolerances
F_REFERENCE = {
    0.5: 0.4787975658579229,
    1.0: 1.3793158438433137,
    2.0: 2.7586316876866275,
    5.0: 4.387114999786684,
}


def test_adaptive_simpson_on_known_integrals():
    assert adaptive_simpson(math.sin, 0.0, math.pi) == pytest.approx(2.0, abs=1e-10)
    assert adaptive_simpson(math.exp, 0.0, 1.0) == pytest.approx(math.e - 1, abs=1e-10)
    assert adaptive_simpson(math.exp, 1.0, 1.0) == 0.0


@pytest.mark.parametrize("x, value", sorted(F_REFERENCE.items()))
def test_f_matches_reference(x, value):
    assert rogers_f(x) == pytest.approx(value, abs=1e-9)


def test_f_vectorised_and_unsorted():
    xs = np.array([2.0, 0.5, 5.0, 1.0, 0.0])
    out = rogers_f(xs)
    expected = [F_REFERENCE[2.0], F_REFERENCE[0.5], F_REFERENCE[5.0], F_REFERENCE[1.0], 0.0]
    np.testing.assert_allclose(out, expected, atol=1e-9)
    assert rogers_f(0.0) == 0.0
    with pytest.raises(DomainError):
        rogers_f(-1.0)


@given(st.floats(0.0, 4.0), st.floats(0.0, 4.0))
def test_f_is_increasing(x, y):
    lo, hi = sorted((x, y))
    assert rogers_f(lo) <= rogers_f(hi) + 1e-12


def test_f_graph_inflects_once():
    # f'' has the sign of (1 - t), so the only inflection is at x = 1
    assert count_inflections(f_graph()) == 1
    assert count_inflections(f_graph(0.9)) == 0


def test_parametric_curve_inflects_three_times():
    assert count_inflections(curve_points(1.0, 2.0)) == 3


def test_equal_taus_give_the_diagonal():
    c = curve_points(1.0, 1.0)
    np.testing.assert_array_equal(c.x, c.y)


def test_straight_line_has_no_inflection():
    x = np.linspace(0, 1, 50)
    assert count_inflections(PlanarCurve(x, 3 * x + 1)) == 0
    assert count_inflections(PlanarCurve(x, x**2)) == 0
    assert count_inflections(PlanarCurve(x, (x - 0.5) ** 3)) == 1


def test_curve_validation():
    with pytest.raises(ValidationError):
        curve_points(2.0, 1.0)
    with pytest.raises(ValidationError):
        PlanarCurve([0, 0, 1], [1, 2, 3])
    with pytest.raises(ValidationError):
        count_inflections(PlanarCurve(np.arange(5.0), np.arange(5.0)))


@pytest.mark.parametrize(
    "x, y, kind, point",
    [(2.0, 6.0, "unique", (2.0, 3.0)), (0.0, 0.0, "line", None), (0.0, 1.0, "empty", None)],
)
def test_phi_fibres(x, y, kind, point):
    fib = phi_fiber_demo(x, y)
    assert fib.kind == kind
    assert fib.point == point
    assert fib.describe()


def test_two_state_witness_closed_form():
    w = binary_nonident_witness(1.0, (0.3, 0.3, 0.3), 2.0)
    assert w.feasible
    expected = (math.sqrt(2.2) - 1) / 2
    np.testing.assert_allclose(w.tree_alt.lengths, expected, atol=1e-14)
    assert w.max_deviation < 1e-14


def test_witness_with_same_shape_is_identity():
    w = binary_nonident_witness(0.8, TripleTree(0.1, 0.2, 0.35), 0.8)
    np.testing.assert_allclose(w.tree_alt.lengths, (0.1, 0.2, 0.35), atol=1e-14)


def test_infeasible_witness_explains_itself():
    w = binary_nonident_witness(1.0, (0.01, 0.3, 0.9), 0.05)
    assert not w.feasible
    assert "< 0" in w.reason


@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(0.05, 1.0))
def test_feasible_witnesses_match_tensor(alpha, alpha_alt, t):
    w = binary_nonident_witness(alpha, (t, t, t), alpha_alt)
    # equal edges keep every implied edge equal, hence positive
    assert w.feasible
    assert w.max_deviation < 1e-13
