"""Recover (pi, Q, alpha, edge lengths) from a 3-taxon joint distribution.

Pipeline: marginals give pi; simultaneous diagonalisation of the three
pair matrices gives u and the pair Laplace values; projecting the joint
tensor onto u gives D_ijk = L(lambda_i t_a + lambda_j t_b + lambda_k t_c)
wherever nu_ijk is nonzero; one scalar equation in beta = 1/alpha then
pins the Gamma shape, after which eigenvalues and edge lengths follow
linearly.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .errors import (
    DegenerateInstanceError,
    DomainError,
    InconsistentDistributionError,
    NonIdentifiableError,
    NumericalError,
    UnsupportedRegimeError,
    ValidationError,
)
from .forward import JointTensor, joint3_exact, pair_matrix, permute_taxa
from .model import (
    GammaRates,
    GTRModel,
    GTRRateMatrix,
    StateDistribution,
    TripleTree,
    canonical_column_signs,
    mgf_gamma_inverse,
    nu_tensor,
)
from .regimes import (
    CASE_A1,
    CASE_A2,
    CASE_B,
    GENERIC,
    check_rate_inequalities,
    classify_regime,
    default_nu_tol,
    generic_pairs,
    match_exceptional,
)

MARGINAL_TOL = 1e-10
PAIR_SYM_TOL = 1e-10
DIAG_TOL = 1e-9
GROUP_TOL = 1e-8
D_SLACK = 1e-9
INPUT_SLACK = 1e-12
BETA_BRACKET = (1e-4, 64.0)
BETA_MAX = 2.0**20
F_TOL = 1e-13
EDGE_SNAP = 1e-10
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class ExtractedData:
    """Quantities read directly off a 3-taxon joint distribution.

    ``pair_values[x]`` holds L(lambda_k * d) for the pair of taxa that
    excludes taxon ``x`` (so index 0 is the pair (b, c)).
    """

    pi: np.ndarray
    u: np.ndarray
    pair_values: np.ndarray
    transform: np.ndarray
    groups: list

    @property
    def a_values(self):
        return self.pair_values[0]

    @property
    def b_values(self):
        return self.pair_values[1]

    @property
    def c_values(self):
        return self.pair_values[2]


@dataclass(frozen=True)
class BetaSolution:
    beta: float
    iterations: int
    bracket: tuple
    residual: float

    @property
    def alpha(self):
        return 1.0 / self.beta


@dataclass(frozen=True, eq=False)
class RecoveredModel:
    pi: StateDistribution
    q: GTRRateMatrix
    alpha: float
    edge_lengths: tuple
    regime: object
    residual: float
    beta_solver: BetaSolution
    lambdas: np.ndarray
    u: np.ndarray

    def model(self):
        return GTRModel(self.pi, self.q)

    def tree(self):
        return TripleTree(*self.edge_lengths)

    def to_dict(self):
        return {
            "pi": self.pi.pi.tolist(),
            "Q": self.q.q.tolist(),
            "alpha": self.alpha,
            "edge_lengths": list(self.edge_lengths),
            "regime": self.regime.to_dict(),
            "residual": self.residual,
            "beta_solver": {
                "iterations": self.beta_solver.iterations,
                "bracket": list(self.beta_solver.bracket),
            },
        }


def _check_joint(joint):
    if not isinstance(joint, JointTensor):
        raise ValidationError("expected a JointTensor")
    if joint.n != 3:
        raise ValidationError(f"identification works on 3 taxa, got {joint.n}")


def recover_pi(joint):
    """Stationary distribution from the one-taxon marginals, which must agree."""
    arr = joint.array()
    margins = [arr.sum(axis=tuple(j for j in range(joint.n) if j != i)) for i in range(joint.n)]
    spread = max(np.abs(m - margins[0]).max() for m in margins)
    if spread > MARGINAL_TOL:
        raise InconsistentDistributionError(
            f"taxon marginals disagree by {spread:.3e}: not a stationary model"
        )
    pi = np.mean(margins, axis=0)
    if np.any(pi <= 0):
        raise InconsistentDistributionError("a state has zero marginal probability")
    return StateDistribution(pi / pi.sum())


def _sym_pair(joint, i, j, root):
    p = pair_matrix(joint, i, j)
    if np.abs(p - p.T).max() > PAIR_SYM_TOL:
        raise InconsistentDistributionError(
            f"pair matrix of taxa {i},{j} is not symmetric: not time-reversible"
        )
    p = 0.5 * (p + p.T)
    return p / root[:, None] / root[None, :]


def _refine(w, mat, keys):
    """Rotate columns sharing all current keys so ``mat`` becomes diagonal."""
    k = w.shape[1]
    start = 0
    while start < k:
        stop = start + 1
        while stop < k and all(abs(key[stop] - key[start]) < GROUP_TOL for key in keys):
            stop += 1
        if stop - start > 1:
            block = w[:, start:stop]
            sub = block.T @ mat @ block
            vals, rot = _kernels.jacobi_eigh(0.5 * (sub + sub.T))
            idx = np.argsort(-vals, kind="stable")
            w[:, start:stop] = block @ rot[:, idx]
        start = stop
    return w


def recover_eigenbasis(joint, pi):
    """Eigenvectors u and pair Laplace values from the three pair matrices.

    The (a, b) pair fixes eigenspaces; repeated values there are split by the
    (a, c) and then the (b, c) pair.  Columns are sorted by decreasing
    (C, B, A) values, which sorts eigenvalues in decreasing order.
    Returns ``(u, pair_values)`` with ``pair_values`` rows ordered
    (A: pair bc, B: pair ac, C: pair ab).
    """
    pi = pi.pi if isinstance(pi, StateDistribution) else np.asarray(pi)
    root = np.sqrt(pi)
    s_ab = _sym_pair(joint, 0, 1, root)
    s_ac = _sym_pair(joint, 0, 2, root)
    s_bc = _sym_pair(joint, 1, 2, root)
    vals, w = _kernels.jacobi_eigh(s_ab)
    idx = np.argsort(-vals, kind="stable")
    w = w[:, idx]
    c_key = np.einsum("ik,ij,jk->k", w, s_ab, w)
    w = _refine(w, s_ac, [c_key])
    b_key = np.einsum("ik,ij,jk->k", w, s_ac, w)
    w = _refine(w, s_bc, [c_key, b_key])
    values = np.array([np.einsum("ik,ij,jk->k", w, s, w) for s in (s_bc, s_ac, s_ab)])
    for s, row in zip((s_bc, s_ac, s_ab), values):
        off = w.T @ s @ w - np.diag(row)
        if np.abs(off).max() > DIAG_TOL:
            raise InconsistentDistributionError(
                "pair matrices do not share an eigenbasis: not a GTR+Gamma distribution"
            )
    order = np.lexsort((-values[0], -values[1], -values[2]))
    w = w[:, order]
    values = values[:, order]
    u = w / root[:, None]
    if np.abs(np.abs(u[:, 0]) - 1.0).max() > 1e-6 or np.abs(values[:, 0] - 1.0).max() > 1e-8:
        raise InconsistentDistributionError("leading pair eigenvalue is not 1")
    u[:, 0] = 1.0
    values[:, 0] = 1.0
    if values.min() <= 0 or values.max() > 1.0 + D_SLACK:
        raise InconsistentDistributionError("pair Laplace values outside (0, 1]")
    values = np.minimum(values, 1.0)
    u = u * canonical_column_signs(u)[None, :]
    return u, values


def pair_groups(values, tol=GROUP_TOL):
    """Runs of columns (index >= 1) whose pair values all coincide."""
    k = values.shape[1]
    groups = []
    for col in range(1, k):
        if groups and np.abs(values[:, col] - values[:, groups[-1][-1]]).max() < tol:
            groups[-1].append(col)
        else:
            groups.append([col])
    return groups


def extract_data(joint, pi=None):
    _check_joint(joint)
    pi = recover_pi(joint) if pi is None else pi
    u, values = recover_eigenbasis(joint, pi)
    p = joint.array()
    t = np.einsum("xyz,xi,yj,zk->ijk", p, u, u, u)
    return ExtractedData(pi.pi, u, values, t, pair_groups(values))


def extract_d(transform, pi, u, nu_tol=None):
    """D_ijk = T_ijk / nu_ijk wherever |nu_ijk| exceeds the tolerance.

    Returns a dict keyed by 0-based (i, j, k).
    """
    nu = nu_tensor(pi, u).nu
    tol = default_nu_tol(nu) if nu_tol is None else nu_tol
    out = {}
    for idx in zip(*np.nonzero(np.abs(nu) > tol)):
        idx = tuple(int(i) for i in idx)
        d = transform[idx] / nu[idx]
        if not 0.0 < d <= 1.0 + D_SLACK:
            raise InconsistentDistributionError(
                f"D{idx} = {d:.6g} lies outside (0, 1]: not a GTR+Gamma distribution"
            )
        out[idx] = min(d, 1.0)
    return out


def rank_edges(a_values, b_values, c_values):
    """Taxon order with non-decreasing edge lengths.

    A longer edge at taxon x makes the two pairs containing x more distant,
    so the pair excluding x keeps the largest Laplace value.  Sorting taxa by
    the excluded pair's value at the most negative eigenvalue (then the next)
    sorts edges ascending; exact ties keep input order.  Returns ``order``:
    new taxon j is old taxon ``order[j]``.
    """
    values = np.array([a_values, b_values, c_values], dtype=np.float64)
    keys = [tuple(values[x, ::-1][:-1]) for x in range(3)]
    return tuple(sorted(range(3), key=lambda x: keys[x]))


def _shape_terms(d1, d2, a, b, c):
    vals = np.array([d1, d2, a, b, c], dtype=np.float64)
    if np.any(vals <= 0) or np.any(vals > 1.0 + INPUT_SLACK):
        raise DomainError("shape-equation inputs must lie in (0, 1]")
    return -np.log(np.minimum(vals, 1.0))


_SIGNS = np.array([1.0, 1.0, -1.0, -1.0, -1.0])


def shape_function(logs):
    """F(beta) * exp(-beta * max(logs)) for the beta equation.

    ``logs`` are -log of (d1, d2, a, b, c).  The positive scale keeps the
    sign and roots of F while avoiding overflow for large beta.
    """
    top = float(logs.max())

    def g(beta):
        if beta * top <= 1.0:
            f = float(np.dot(_SIGNS, np.expm1(beta * logs)))
            return f * np.exp(-beta * top)
        return float(np.dot(_SIGNS, np.exp(beta * (logs - top))) + np.exp(-beta * top))

    return g


def solve_beta(d1, d2, a, b, c, bracket=BETA_BRACKET, max_beta=BETA_MAX):
    """Positive root of d1^-b + d2^-b - a^-b - b^-b - c^-b + 1 = 0 in beta.

    The inputs must satisfy c >= a >= d1 > 0 and c >= b > d2 > 0; then the
    left side is convex in beta with exactly one positive root.  The root is
    bracketed by doubling the upper end and polished with Brent's method.
    """
    logs = _shape_terms(d1, d2, a, b, c)
    s = INPUT_SLACK
    if not (c >= a - s and a >= d1 - s and c >= b - s and b > d2 - s):
        raise DegenerateInstanceError(
            f"beta equation hypotheses fail for d1={d1!r}, d2={d2!r}, a={a!r}, b={b!r}, c={c!r}"
        )
    g = shape_function(logs)
    lo, hi = map(float, bracket)
    g_lo = g(lo)
    if not g_lo < 0:
        raise DegenerateInstanceError(
            f"beta equation has no root above {lo}: F({lo}) = {g_lo:.3e}"
        )
    g_hi = g(hi)
    while g_hi <= 0 and hi < max_beta:
        hi *= 2.0
        g_hi = g(hi)
    if g_hi <= 0:
        raise DegenerateInstanceError(f"beta equation has no root below {max_beta}")
    beta, info = brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500, full_output=True)
    if not info.converged:
        raise NumericalError("Brent iteration did not converge for beta")
    res = abs(g(beta))
    if res > F_TOL:
        raise NumericalError(f"beta equation residual {res:.3e} too large")
    return BetaSolution(float(beta), int(info.iterations), (lo, hi), res)


def _equation_inputs(regime, pair, d, values):
    a_v, b_v, c_v = values
    if regime == GENERIC:
        i, j = pair
        return d[(i, j, j)], d[(j, i, j)], a_v[j], b_v[j], c_v[i]
    if regime == CASE_A1:
        a2, b3, c4 = a_v[1], b_v[2], c_v[3]
        d1, d2 = d[(2, 3, 1)], d[(3, 1, 2)]
        if c4 >= a2 and c4 >= b3:
            return d1, d2, a2, b3, c4
        if a2 >= b3:
            return d1, d2, c4, b3, a2
        return d1, d2, a2, c4, b3
    if regime in (CASE_A2, CASE_B):
        a2, b2, c4 = a_v[1], b_v[1], c_v[3]
        d1, d2 = d[(3, 1, 1)], d[(1, 3, 1)]
        if c4 >= b2:
            return d1, d2, a2, b2, c4
        return d1, d2, a2, c4, b2
    raise UnsupportedRegimeError(f"no shape equation for regime {regime!r}")


def _assemble(pi, u, values, beta_sol, order, regime):
    alpha = beta_sol.alpha
    k = pi.size
    x = np.zeros((3, k))
    x[:, 1:] = mgf_gamma_inverse(alpha, values[:, 1:])
    weights = np.einsum("l,lk->k", pi * pi, u * u)
    dists = -(x[:, 1:] @ weights[1:])
    if np.any(dists <= 0):
        raise InconsistentDistributionError("recovered pair distances are not positive")
    lam = x.sum(axis=0) / dists.sum()
    lam[0] = 0.0
    q = u @ np.diag(lam) @ u.T * pi[None, :]
    flux = pi[:, None] * q
    flux = 0.5 * (flux + flux.T)
    np.fill_diagonal(flux, 0.0)
    if np.any(flux[~np.eye(k, dtype=bool)] <= 0):
        raise InconsistentDistributionError("recovered rate matrix has non-positive rates")
    flux /= flux.sum()
    q = flux / pi[:, None]
    np.fill_diagonal(q, -q.sum(axis=1))
    d_bc, d_ac, d_ab = dists
    t = np.array([d_ab + d_ac - d_bc, d_ab + d_bc - d_ac, d_ac + d_bc - d_ab]) / 2.0
    if t.min() < -EDGE_SNAP:
        raise InconsistentDistributionError(f"negative recovered edge length {t.min():.3e}")
    t[np.abs(t) < EDGE_SNAP] = 0.0
    t = np.maximum(t, 0.0)
    orig = np.empty(3)
    orig[list(order)] = t
    return GTRRateMatrix(q), lam, tuple(float(v) for v in orig)


def _attempt(joint, pi, u, regime, pairs, nu_tol, order, values):
    d = extract_d(_transform(joint, order, u), pi, u, nu_tol)
    last_err = None
    for pair in pairs:
        try:
            inputs = _equation_inputs(regime.kind, pair, d, values)
            sol = solve_beta(*inputs)
            q, lam, lengths = _assemble(pi, u, values, sol, order, regime)
        except (NumericalError, KeyError) as err:
            last_err = err
            continue
        if regime.exceptional:
            report = check_rate_inequalities(lam, regime)
            if not report.ok:
                last_err = InconsistentDistributionError(
                    f"recovered eigenvalues violate {regime.kind} inequalities: {report.checks}"
                )
                continue
        pi_d = StateDistribution(pi)
        model = GTRModel(pi_d, q)
        recon = joint3_exact(model, GammaRates(sol.alpha), TripleTree(*lengths))
        residual = float(np.abs(recon.p - joint.p).max())
        return RecoveredModel(pi_d, q, sol.alpha, lengths, regime, residual, sol, lam, u), None
    return None, last_err


def _transform(joint, order, u):
    arr = permute_taxa(joint, order).array()
    return np.einsum("xyz,xi,yj,zk->ijk", arr, u, u, u)


def recover_all(joint, nu_tol=None, residual_tol=RESIDUAL_TOL):
    """Identify pi, Q, alpha and the three edge lengths from a 3-taxon joint.

    Raises :class:`NonIdentifiableError` for the symmetric 2-state model and
    :class:`InconsistentDistributionError` when the tensor is not produced by
    a GTR+Gamma model on a 3-taxon tree.
    """
    _check_joint(joint)
    data = extract_data(joint)
    pi = data.pi
    k = pi.size
    order = rank_edges(*data.pair_values)
    values = data.pair_values[list(order)]
    u = data.u

    candidates = []
    degenerate = any(len(g) > 1 for g in data.groups)
    if k == 4 and degenerate:
        found = match_exceptional(pi, u, data.groups)
        if found is not None:
            candidates.append(found)
    first_err = None
    try:
        tag = classify_regime(pi, u, nu_tol)
    except NonIdentifiableError:
        raise NonIdentifiableError(
            "non-identifiable (kappa=2 symmetric): the 2-state model with uniform pi "
            "does not determine alpha and the edge lengths"
        ) from None
    except (UnsupportedRegimeError, NumericalError) as err:
        if not candidates:
            raise
        tag = None
        first_err = err
    if tag is not None:
        candidates.append((tag, u))
        if tag.kind == GENERIC and tag.ambiguous and k == 4:
            found = match_exceptional(pi, u)
            if found is not None:
                candidates.append(found)

    best = None
    last_err = None
    for tag, basis in candidates:
        if tag.kind == GENERIC:
            nu = nu_tensor(pi, basis).nu
            tol = default_nu_tol(nu) if nu_tol is None else nu_tol
            pairs = sorted(generic_pairs(nu, tol), key=lambda p: -abs(nu[p[0], p[1], p[1]]))
        else:
            pairs = [None]
        rec, err = _attempt(joint, pi, basis, tag, pairs, nu_tol, order, values)
        if rec is None:
            last_err = err
            continue
        if rec.residual <= residual_tol:
            return rec
        if best is None or rec.residual < best.residual:
            best = rec
    if best is not None:
        raise InconsistentDistributionError(
            f"reconstruction residual {best.residual:.3e} exceeds {residual_tol:.1e}"
        )
    raise last_err or first_err
