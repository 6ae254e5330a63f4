"""Numerical counterexamples: a curve with several inflections, a toy map
that is identifiable only generically, and the two-state ambiguity."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidationError
from .forward import joint3_exact
from .model import GammaRates, TripleTree, mgf_gamma, mgf_gamma_inverse
from .sampling import jc_model

SIMPSON_TOL = 1e-10
DEAD_BAND = 1e-9
TWO_STATE_LAMBDA = -2.0


def _integrand(t):
    return math.exp(math.exp(-10.0 * (t - 1.0) ** 2) - (1.0 - t) ** 2 / 10.0)


def adaptive_simpson(f, a, b, tol=SIMPSON_TOL, max_depth=50):
    """Adaptive Simpson quadrature with Richardson correction."""
    if b == a:
        return 0.0
    m = 0.5 * (a + b)
    fa, fm, fb = f(a), f(m), f(b)
    whole = (b - a) * (fa + 4 * fm + fb) / 6.0
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        a, b, fa, fm, fb, whole, eps, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) * (fa + 4 * flm + fm) / 6.0
        right = (b - m) * (fm + 4 * frm + fb) / 6.0
        delta = left + right - whole
        if depth >= max_depth or abs(delta) <= 15.0 * eps:
            total += left + right + delta / 15.0
        else:
            stack.append((a, m, fa, flm, fm, left, eps / 2, depth + 1))
            stack.append((m, b, fm, frm, fb, right, eps / 2, depth + 1))
    return total


def rogers_f(x, tol=SIMPSON_TOL):
    """f(x) = integral over [0, x] of exp(exp(-10 (t-1)^2) - (1-t)^2 / 10).

    Arrays are evaluated cumulatively over the sorted points, splitting the
    tolerance across the pieces.
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0) or np.any(~np.isfinite(arr)):
        raise DomainError("rogers_f needs finite x >= 0")
    flat = arr.ravel()
    order = np.argsort(flat, kind="stable")
    out = np.empty_like(flat)
    pieces = max(1, flat.size)
    acc, prev = 0.0, 0.0
    for idx in order:
        xi = float(flat[idx])
        acc += adaptive_simpson(_integrand, prev, xi, tol / pieces)
        prev = xi
        out[idx] = acc
    out = out.reshape(arr.shape)
    return float(out) if arr.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class PlanarCurve:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        y = np.array(self.y, dtype=np.float64)
        if x.shape != y.shape or x.ndim != 1:
            raise ValidationError("x and y must be 1-d arrays of equal length")
        if np.any(np.diff(x) <= 0):
            raise ValidationError("x must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.x.size


def f_graph(x_max=3.0, n=400):
    """The curve (x, f(x)) on a uniform grid over [0, x_max]."""
    x = np.linspace(0.0, x_max, n)
    return PlanarCurve(x, rogers_f(x))


def curve_points(tau1, tau2, x_max=3.0, n=400):
    """Points (f(tau1 x), f(tau2 x)) for x on a uniform grid over [0, x_max]."""
    if not (tau1 > 0 and tau2 >= tau1):
        raise ValidationError("need tau2 >= tau1 > 0")
    x = np.linspace(0.0, x_max, n)
    return PlanarCurve(rogers_f(tau1 * x), rogers_f(tau2 * x))


def discrete_curvature(curve):
    """Second divided differences of y as a function of x."""
    x, y = curve.x, curve.y
    slope = np.diff(y) / np.diff(x)
    return np.diff(slope) / (0.5 * (x[2:] - x[:-2]))


def count_inflections(curve, dead_band=DEAD_BAND):
    """Sign changes of the discrete curvature, ignoring tiny values.

    Values below ``dead_band`` times yrange / xrange**2 carry no sign.
    """
    if len(curve) < 16:
        raise ValidationError("count_inflections needs at least 16 points")
    dd = discrete_curvature(curve)
    xr = curve.x[-1] - curve.x[0]
    yr = float(np.ptp(curve.y)) or 1.0
    cut = dead_band * yr / xr**2
    signs = np.sign(dd[np.abs(dd) > cut])
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


@dataclass(frozen=True)
class Fiber:
    """Preimage of a point under (a, b) -> (a, a b)."""

    kind: str
    point: tuple = None

    def describe(self):
        if self.kind == "unique":
            return f"unique preimage (a, b) = {self.point}"
        if self.kind == "line":
            return "every (0, b) with b real maps here: not identifiable"
        return "empty: the point is not in the image"


def phi_fiber_demo(x, y):
    if x != 0:
        return Fiber("unique", (float(x), float(y) / float(x)))
    if y == 0:
        return Fiber("line")
    return Fiber("empty")


@dataclass(frozen=True)
class Witness:
    alpha: float
    tree: TripleTree
    alpha_alt: float
    tree_alt: TripleTree = None
    max_deviation: float = None
    reason: str = None

    @property
    def feasible(self):
        return self.tree_alt is not None


def binary_nonident_witness(alpha, tree, alpha_alt):
    """Second (alpha, edge lengths) pair giving the same two-state tensor.

    For the symmetric two-state model only the pair values
    L_alpha(-2 (t_x + t_y)) are visible, so each pairwise sum can be
    re-solved for another shape.  Infeasible when an implied edge is negative.
    """
    if not isinstance(tree, TripleTree):
        tree = TripleTree(*tree)
    t_a, t_b, t_c = tree.lengths
    sums = np.array([t_b + t_c, t_a + t_c, t_a + t_b])
    vals = mgf_gamma(alpha, TWO_STATE_LAMBDA * sums)
    s_bc, s_ac, s_ab = mgf_gamma_inverse(alpha_alt, vals) / TWO_STATE_LAMBDA
    alt = np.array([s_ab + s_ac - s_bc, s_ab + s_bc - s_ac, s_ac + s_bc - s_ab]) / 2.0
    alt[np.abs(alt) < 1e-15] = 0.0
    if alt.min() < 0:
        return Witness(alpha, tree, alpha_alt, reason=f"implied edge {alt.min():.3e} < 0")
    try:
        tree_alt = TripleTree(*alt)
    except ValidationError as err:
        return Witness(alpha, tree, alpha_alt, reason=str(err))
    model = jc_model(2)
    p = joint3_exact(model, GammaRates(alpha), tree).p
    q = joint3_exact(model, GammaRates(alpha_alt), tree_alt).p
    return Witness(alpha, tree, alpha_alt, tree_alt, float(np.abs(p - q).max()))
