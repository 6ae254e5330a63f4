"""Generic vs. exceptional parameter regimes of (pi, u).

A parameter set is *generic* when some nu_{ijj} with 0 < i <= j is nonzero
(0-based eigen-indices).  For four states the remaining parameter sets are,
up to a permutation of states and column signs, one of two explicit
families: Case A (uniform pi, eigenvectors built from b, c with
b**2 + c**2 == 2) and Case B (pi = (1/8, 1/8, 1/4, 1/2)).
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InternalInconsistencyError,
    NonIdentifiableError,
    UnsupportedRegimeError,
    ValidationError,
)
from .model import GTRModel, _pi, eigen_groups, nu_tensor

NU_RTOL = 1e-9
AMBIGUITY_FACTOR = 1e3
MATCH_TOL = 1e-6
PI_TOL = 1e-8

GENERIC = "Generic"
CASE_A1 = "CaseA1"
CASE_A2 = "CaseA2"
CASE_B = "CaseB"

CASE_B_PI = np.array([1 / 8, 1 / 8, 1 / 4, 1 / 2])
_R2 = math.sqrt(2.0)
CASE_B_U = np.array(
    [
        [1.0, 2.0, _R2, 1.0],
        [1.0, -2.0, _R2, 1.0],
        [1.0, 0.0, -_R2, 1.0],
        [1.0, 0.0, 0.0, -1.0],
    ]
)
_E1 = np.array([1.0, -1.0, 0.0, 0.0])
_E2 = np.array([0.0, 0.0, 1.0, -1.0])
_CASE_A_U4 = np.array([1.0, 1.0, -1.0, -1.0])
# (c, -b) = J @ (b, c)
_J = np.array([[0.0, 1.0], [-1.0, 0.0]])


def case_a_u(b, c):
    """Eigenvector matrix of the Case A family for parameters b, c."""
    return np.array(
        [
            [1.0, c, b, 1.0],
            [1.0, -c, -b, 1.0],
            [1.0, -b, c, -1.0],
            [1.0, b, -c, -1.0],
        ]
    )


@dataclass(frozen=True)
class RegimeTag:
    """Classification of (pi, u).

    For ``Generic`` the ``pair`` is the lexicographically smallest (i, j),
    0 < i <= j, with nu_ijj nonzero and ``best_pair`` the one with largest
    |nu_ijj|.  For exceptional cases ``permutation[r]`` is the actual state
    playing row ``r`` of the canonical matrix and ``column_signs`` are the
    signs that map the columns of u onto it.
    """

    kind: str
    pair: tuple = None
    best_pair: tuple = None
    b: float = None
    c: float = None
    permutation: tuple = None
    column_signs: tuple = None
    ambiguous: bool = False

    @property
    def exceptional(self):
        return self.kind != GENERIC

    def to_dict(self):
        return {
            "type": self.kind,
            "pair": list(self.pair) if self.pair else None,
            "best_pair": list(self.best_pair) if self.best_pair else None,
            "b": self.b,
            "c": self.c,
            "permutation": list(self.permutation) if self.permutation else None,
            "column_signs": list(self.column_signs) if self.column_signs else None,
            "ambiguous": self.ambiguous,
        }


def default_nu_tol(nu):
    nu = getattr(nu, "nu", nu)
    return NU_RTOL * float(np.abs(nu).max())


def generic_pairs(nu, tol):
    """All (i, j), 0 < i <= j, with |nu_ijj| > tol, in lexicographic order."""
    nu = getattr(nu, "nu", nu)
    k = nu.shape[0]
    return [(i, j) for i in range(1, k) for j in range(i, k) if abs(nu[i, j, j]) > tol]


def _projectors(pi, u, groups):
    proj = {}
    for g in groups:
        ug = u[:, g]
        p = ug @ ug.T * pi[None, :]
        for k in g:
            proj[k] = p
    return proj


def _pnorm2(pi, x):
    return float(np.dot(pi, x * x))


def match_exceptional(pi, u, groups=None, tol=MATCH_TOL):
    """Fit the Case A / Case B families to the eigenspaces of u.

    ``groups`` lists columns sharing an eigenvalue; columns within a group
    may be rotated freely.  By default every column is its own group, which
    means the columns must match the canonical vectors up to sign.  When a
    Case A fit leaves (b, c) undetermined (two columns in one eigenspace)
    the symmetric choice b = c = 1 is made.  Among all matches the one with
    the smallest b is returned, so b <= c.

    Returns ``(tag, aligned_u)`` or ``None``.
    """
    pi = _pi(pi)
    u = np.asarray(u, dtype=np.float64)
    if pi.size != 4:
        return None
    if groups is None:
        groups = [[k] for k in range(1, 4)]
    groups = [list(g) for g in groups if g and g[0] != 0]
    proj = _projectors(pi, u, groups)
    eye = np.eye(4)
    best = None

    def residual(x, k):
        r = x - proj[k] @ x
        return _pnorm2(pi, r)

    for perm in itertools.permutations(range(4)):
        idx = list(perm)
        if np.abs(pi[idx] - CASE_B_PI).max() < PI_TOL:
            cols = []
            for k in range(1, 4):
                x = np.empty(4)
                x[idx] = CASE_B_U[:, k]
                cols.append(x)
            res = sum(residual(x, k) for k, x in zip(range(1, 4), cols))
            if math.sqrt(res) < tol:
                cand = (CASE_B, None, None, perm, cols)
                if best is None:
                    best = cand
        if np.abs(pi - 0.25).max() < PI_TOL:
            x4 = np.empty(4)
            x4[idx] = _CASE_A_U4
            e = np.empty((4, 2))
            e[idx, 0] = _E1
            e[idx, 1] = _E2
            r4 = residual(x4, 3)
            if math.sqrt(r4) >= tol:
                continue
            m3 = (eye - proj[2]) @ e
            m2 = (eye - proj[1]) @ e
            mat = m3.T @ (pi[:, None] * m3) + _J.T @ (m2.T @ (pi[:, None] * m2)) @ _J
            w, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
            if w[1] - w[0] < 1e-9:
                z = np.array([1.0, 1.0])
            else:
                z = _R2 * vecs[:, 0]
                if z.sum() < 0:
                    z = -z
                if z.min() < -1e-7:
                    continue
                z = np.clip(z, 0.0, None)
                z *= _R2 / np.linalg.norm(z)
            res = r4 + float(z @ mat @ z)
            if math.sqrt(max(res, 0.0)) >= tol:
                continue
            b, c = float(z[0]), float(z[1])
            x3 = e @ z
            x2 = e @ (_J @ z)
            kind = CASE_A1 if b * c > 1e-8 else CASE_A2
            if best is None or best[0] == CASE_B or b < best[1] - 1e-12:
                best = (kind, b, c, perm, [x2, x3, x4])
    if best is None:
        return None
    kind, b, c, perm, cols = best
    aligned = np.column_stack([np.ones(4)] + cols)
    signs = [1.0]
    for k in range(1, 4):
        dot = float(np.dot(pi, u[:, k] * aligned[:, k]))
        signs.append(-1.0 if dot < 0 else 1.0)
    tag = RegimeTag(kind, b=b, c=c, permutation=tuple(perm), column_signs=tuple(signs))
    return tag, aligned


def classify_regime(pi, u, nu_tol=None):
    """Classify (pi, u) as Generic, CaseA1, CaseA2 or CaseB.

    Exceptional matching needs four states; other state counts with every
    nu_ijj ~ 0 raise (two states: the symmetric model, non-identifiable).
    """
    pi = _pi(pi)
    nu = nu_tensor(pi, u).nu
    tol = default_nu_tol(nu) if nu_tol is None else float(nu_tol)
    pairs = generic_pairs(nu, tol)
    if pairs:
        best = max(pairs, key=lambda p: abs(nu[p[0], p[1], p[1]]))
        smallest = abs(nu[best[0], best[1], best[1]])
        return RegimeTag(
            GENERIC,
            pair=pairs[0],
            best_pair=best,
            ambiguous=smallest < AMBIGUITY_FACTOR * tol,
        )
    kappa = pi.size
    if kappa == 2:
        raise NonIdentifiableError("non-identifiable (kappa=2 symmetric): nu_222 vanishes")
    if kappa != 4:
        raise UnsupportedRegimeError(
            f"every nu_ijj vanishes for kappa={kappa}; only kappa=4 exceptions are classified"
        )
    found = match_exceptional(pi, u)
    if found is None:
        raise InternalInconsistencyError(
            "every nu_ijj vanishes but (pi, u) matches neither exceptional family"
        )
    return found[0]


def classify_model(model, nu_tol=None):
    """Classify a model, aligning repeated eigenspaces first.

    Within a repeated eigenvalue any orthonormal basis is valid, and a
    random one hides the exceptional structure (e.g. Jukes-Cantor).  For
    four states the eigenspaces are fitted to the exceptional families
    before falling back to :func:`classify_regime`.  Returns ``(tag, u)``
    with the basis actually classified.
    """
    if not isinstance(model, GTRModel):
        raise ValidationError("expected a GTRModel")
    u = np.array(model.u)
    groups = [g for g in eigen_groups(model.lambdas) if g[0] != 0]
    if model.kappa == 4 and any(len(g) > 1 for g in groups):
        found = match_exceptional(model.pi, u, groups)
        if found is not None:
            return found
    return classify_regime(model.pi, u, nu_tol), u


@dataclass(frozen=True)
class RateInequalityReport:
    """Eigenvalue inequalities forced by positive off-diagonal rates."""

    regime: str
    checks: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(self.checks.values())


def check_rate_inequalities(lambdas, regime):
    """Evaluate the eigenvalue inequalities of the exceptional families.

    Case A with bc != 0: lambda4 > lambda2 + lambda3; with bc == 0 and in
    Case B: lambda4 > 2 lambda2.  Positivity of the off-diagonal entries of
    u diag(lambda) u^T for the canonical u is reported as well.  Generic
    regimes carry no extra inequality.
    """
    lam = np.asarray(lambdas, dtype=np.float64)
    kind = regime.kind if isinstance(regime, RegimeTag) else str(regime)
    if kind == GENERIC:
        return RateInequalityReport(kind, {})
    if lam.size != 4:
        raise ValidationError("exceptional inequalities are defined for four states")
    l2, l3, l4 = lam[1:]
    checks = {}
    if kind == CASE_B:
        checks["lambda4 > 2*lambda2"] = bool(l4 > 2 * l2)
        canon = CASE_B_U
    elif kind in (CASE_A1, CASE_A2):
        b = getattr(regime, "b", None)
        c = getattr(regime, "c", None)
        if b is None or c is None:
            b, c = (1.0, 1.0) if kind == CASE_A1 else (0.0, _R2)
        if kind == CASE_A1:
            checks["lambda4 > lambda2 + lambda3"] = bool(l4 > l2 + l3)
        else:
            checks["lambda4 > 2*lambda2"] = bool(l4 > 2 * l2)
        canon = case_a_u(b, c)
    else:
        raise ValidationError(f"unknown regime {kind!r}")
    qt = canon @ np.diag(lam) @ canon.T
    off = qt[~np.eye(4, dtype=bool)]
    checks["offdiagonal rates positive"] = bool(off.min() > 0)
    return RateInequalityReport(kind, checks)


def nonzero_triple_search(pi, u, nu_tol=None):
    """First (i, j, k), 0 < i <= j <= k, with |nu_ijk| above tolerance.

    Such a triple always exists for three or more states.  With two states
    the symmetric model has none and the search reports it.
    """
    pi = _pi(pi)
    nu = nu_tensor(pi, u).nu
    kappa = pi.size
    tol = default_nu_tol(nu) if nu_tol is None else float(nu_tol)
    for i in range(1, kappa):
        for j in range(i, kappa):
            for k in range(j, kappa):
                if abs(nu[i, j, k]) > tol:
                    return (i, j, k)
    if kappa < 3:
        raise NonIdentifiableError(
            "no nonzero nu_ijk with i, j, k > 0: the 2-state symmetric model is the exception"
        )
    raise InternalInconsistencyError("no nonzero nu_ijk with i, j, k > 0 for kappa >= 3")
