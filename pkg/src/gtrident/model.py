"""GTR+Gamma parameters, spectral form of reversible rate matrices, Gamma MGF.

Conventions used throughout the package:

* states and eigen-indices are 0-based; eigen-index 0 is the zero eigenvalue
  and its eigenvector is the all-ones column;
* ``u`` holds right eigenvectors of ``Q`` as columns, normalised so that
  ``u.T @ diag(pi) @ u == I``; hence ``inv(u) == u.T @ diag(pi)``;
* rate matrices are reported in the gauge ``trace(diag(pi) Q) == -1``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import DomainError, ValidationError

SUM_TOL = 1e-12
ROW_SUM_TOL = 1e-12
SYM_TOL = 1e-12
EIG_TOL = 1e-13
MULTIPLICITY_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class StateDistribution:
    """Stationary state frequencies: strictly positive, summing to one."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=np.float64)
        if pi.ndim != 1 or pi.size < 2:
            raise ValidationError("pi must be a vector with at least 2 states")
        if not np.all(np.isfinite(pi)) or np.any(pi <= 0):
            raise ValidationError("pi entries must be finite and strictly positive")
        if abs(pi.sum() - 1.0) > SUM_TOL:
            raise ValidationError(f"pi must sum to 1 (got {pi.sum()!r})")
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)

    @property
    def kappa(self):
        return self.pi.size

    @classmethod
    def uniform(cls, kappa):
        return cls(np.full(kappa, 1.0 / kappa))


@dataclass(frozen=True, eq=False)
class GTRRateMatrix:
    """Rate matrix with positive off-diagonal rates and zero row sums.

    Reversibility and the trace gauge involve ``pi`` and are checked by
    :meth:`validate_with`.
    """

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 2:
            raise ValidationError("Q must be a square matrix with kappa >= 2")
        if not np.all(np.isfinite(q)):
            raise ValidationError("Q has non-finite entries")
        off = q[~np.eye(q.shape[0], dtype=bool)]
        if np.any(off <= 0):
            raise ValidationError("off-diagonal rates must be strictly positive")
        scale = max(1.0, float(np.abs(q).max()))
        if np.abs(q.sum(axis=1)).max() > ROW_SUM_TOL * scale:
            raise ValidationError("rows of Q must sum to zero")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def kappa(self):
        return self.q.shape[0]

    def trace_gauge(self, pi):
        """trace(diag(pi) Q); -1 for a normalised matrix."""
        return float(np.dot(_pi(pi), np.diag(self.q)))

    def is_reversible(self, pi, tol=SYM_TOL):
        f = _pi(pi)[:, None] * self.q
        return bool(np.abs(f - f.T).max() <= tol * max(1.0, np.abs(f).max()))

    def validate_with(self, pi):
        pi = _pi(pi)
        if pi.size != self.kappa:
            raise ValidationError("pi and Q have different numbers of states")
        if not self.is_reversible(pi):
            raise ValidationError("diag(pi) Q is not symmetric")
        if abs(self.trace_gauge(pi) + 1.0) > SUM_TOL * max(1.0, np.abs(self.q).max()):
            raise ValidationError("Q is not normalised to trace(diag(pi) Q) = -1")


@dataclass(frozen=True, eq=False)
class SpectralForm:
    """Eigenvalues (descending, first exactly 0) and right eigenvectors."""

    lambdas: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lambdas, dtype=np.float64)
        u = np.array(self.u, dtype=np.float64)
        if lam.ndim != 1 or u.shape != (lam.size, lam.size):
            raise ValidationError("lambdas and u have inconsistent shapes")
        if lam[0] != 0.0 or np.any(lam[1:] >= 0) or np.any(np.diff(lam) > 0):
            raise ValidationError("need 0 = lambda_1 > lambda_2 >= ... >= lambda_kappa")
        lam.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "u", u)

    def inverse(self, pi):
        """u^{-1} = u^T diag(pi)."""
        return self.u.T * _pi(pi)[None, :]

    def reconstruct(self, pi):
        """Rebuild Q = u diag(lambda) u^{-1}."""
        return (self.u * self.lambdas[None, :]) @ self.inverse(pi)


@dataclass(frozen=True)
class GammaRates:
    """Mean-one Gamma rate distribution (shape alpha, scale 1/alpha)."""

    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not np.isfinite(a) or a <= 0:
            raise ValidationError("alpha must be a positive finite number")
        object.__setattr__(self, "alpha", a)


@dataclass(frozen=True)
class TripleTree:
    """Pendant edge lengths of the 3-taxon star (taxa a, b, c)."""

    t_a: float
    t_b: float
    t_c: float

    def __post_init__(self):
        t = [float(x) for x in (self.t_a, self.t_b, self.t_c)]
        if not all(np.isfinite(x) and x >= 0 for x in t):
            raise ValidationError("edge lengths must be finite and nonnegative")
        if sum(x == 0.0 for x in t) > 1:
            raise ValidationError("at most one edge of the triple may have length 0")
        for name, x in zip(("t_a", "t_b", "t_c"), t):
            object.__setattr__(self, name, x)

    @property
    def lengths(self):
        return np.array([self.t_a, self.t_b, self.t_c])

    def pair_distances(self):
        """(d_bc, d_ac, d_ab): each pair distance indexed by the excluded taxon."""
        return np.array([self.t_b + self.t_c, self.t_a + self.t_c, self.t_a + self.t_b])


@dataclass(frozen=True, eq=False)
class NuTensor:
    """Symmetric 3-way tensor nu_ijk = sum_l pi_l u_li u_lj u_lk."""

    nu: np.ndarray

    def __post_init__(self):
        nu = np.array(self.nu, dtype=np.float64)
        k = nu.shape[0] if nu.ndim else 0
        if nu.shape != (k, k, k):
            raise ValidationError("nu must be a kappa x kappa x kappa array")
        nu.setflags(write=False)
        object.__setattr__(self, "nu", nu)

    def __getitem__(self, idx):
        return self.nu[idx]

    @property
    def kappa(self):
        return self.nu.shape[0]


@dataclass(frozen=True, eq=False)
class GTRModel:
    """Stationary distribution, normalised rate matrix and its spectral form."""

    pi: StateDistribution
    q: GTRRateMatrix
    spectral: SpectralForm = field(default=None)

    def __post_init__(self):
        if self.pi.kappa != self.q.kappa:
            raise ValidationError("pi and Q have different numbers of states")
        self.q.validate_with(self.pi)
        if self.spectral is None:
            object.__setattr__(self, "spectral", spectral_decompose(self.q, self.pi))

    @classmethod
    def from_exchangeabilities(cls, s, pi):
        pi = pi if isinstance(pi, StateDistribution) else StateDistribution(pi)
        return cls(pi, build_gtr(s, pi))

    @classmethod
    def from_rate_matrix(cls, q, pi):
        """Accept any reversible Q; rescale it into the trace gauge.

        Returns ``(model, factor)`` where ``factor`` multiplied the input.
        """
        pi = pi if isinstance(pi, StateDistribution) else StateDistribution(pi)
        qn, factor = normalize_rate_matrix(q, pi)
        return cls(pi, qn), factor

    @property
    def kappa(self):
        return self.pi.kappa

    @property
    def lambdas(self):
        return self.spectral.lambdas

    @property
    def u(self):
        return self.spectral.u

    @cached_property
    def v(self):
        """Left eigenvectors as rows: u^{-1} = u^T diag(pi)."""
        return self.spectral.inverse(self.pi)

    @cached_property
    def nu(self):
        return nu_tensor(self.pi, self.u)


def _pi(pi):
    return pi.pi if isinstance(pi, StateDistribution) else np.asarray(pi, dtype=np.float64)


def normalize_rate_matrix(q, pi):
    """Scale a reversible rate matrix so trace(diag(pi) Q) = -1."""
    q = GTRRateMatrix(q) if not isinstance(q, GTRRateMatrix) else q
    pi = _pi(pi)
    if not q.is_reversible(pi):
        raise ValidationError("diag(pi) Q is not symmetric")
    factor = -1.0 / q.trace_gauge(pi)
    return GTRRateMatrix(q.q * factor), factor


def build_gtr(exchangeabilities, pi):
    """Rate matrix q_ij = s_ij pi_j (i != j) in the trace gauge."""
    s = np.array(exchangeabilities, dtype=np.float64)
    pi = _pi(pi if isinstance(pi, StateDistribution) else StateDistribution(pi))
    k = pi.size
    if s.shape != (k, k):
        raise ValidationError(f"exchangeabilities must be {k}x{k}")
    off = ~np.eye(k, dtype=bool)
    if not np.all(np.isfinite(s[off])) or np.any(s[off] <= 0):
        raise ValidationError("exchangeabilities must be strictly positive off the diagonal")
    if np.abs(s - s.T)[off].max() > SYM_TOL * s[off].max():
        raise ValidationError("exchangeabilities must be symmetric")
    s = np.where(off, 0.5 * (s + s.T), 0.0)
    q = s * pi[None, :]
    np.fill_diagonal(q, -q.sum(axis=1))
    q /= -np.dot(pi, np.diag(q))
    # re-zero rows after scaling
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return GTRRateMatrix(q)


def canonical_column_signs(u, rtol=1e-9):
    """Signs that make each column's largest-magnitude entry positive.

    Ties (within ``rtol``) go to the first such index.
    """
    u = np.asarray(u)
    signs = np.ones(u.shape[1])
    for j in range(u.shape[1]):
        col = u[:, j]
        m = np.abs(col).max()
        if m == 0:
            continue
        i = int(np.argmax(np.abs(col) >= m * (1 - rtol)))
        signs[j] = -1.0 if col[i] < 0 else 1.0
    return signs


def spectral_decompose(q, pi):
    """Diagonalise a reversible rate matrix through its symmetrisation.

    The symmetric matrix diag(pi^1/2) Q diag(pi^-1/2) is eigen-decomposed by
    cyclic Jacobi rotations; eigenvalues are sorted descending, the zero
    eigenvalue is snapped to exactly 0 and its eigenvector to the ones vector.
    """
    qm = q.q if isinstance(q, GTRRateMatrix) else np.asarray(q, dtype=np.float64)
    pi = _pi(pi)
    if qm.shape != (pi.size, pi.size):
        raise ValidationError("pi and Q have different numbers of states")
    root = np.sqrt(pi)
    s = root[:, None] * qm / root[None, :]
    scale = max(1.0, float(np.abs(s).max()))
    if np.abs(s - s.T).max() > 1e-10 * scale:
        raise ValidationError("symmetrised rate matrix is not symmetric: Q is not reversible for pi")
    w, vecs = _kernels.jacobi_eigh(0.5 * (s + s.T), tol=EIG_TOL)
    order = np.argsort(-w, kind="stable")
    w = w[order]
    vecs = vecs[:, order]
    if abs(w[0]) > 1e-9 * scale or w[1] >= 0:
        raise ValidationError("rate matrix does not have a simple zero eigenvalue")
    u = vecs / root[:, None]
    w[0] = 0.0
    u[:, 0] = 1.0
    u *= canonical_column_signs(u)[None, :]
    return SpectralForm(w, u)


def eigen_groups(values, rtol=MULTIPLICITY_RTOL, scale=None):
    """Group sorted values into runs of numerically equal entries.

    Two neighbours are equal when they differ by less than ``rtol`` times
    ``scale`` (default: the largest magnitude).  Returns a list of index lists.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return []
    if scale is None:
        scale = float(np.abs(values).max()) or 1.0
    groups = [[0]]
    for i in range(1, values.size):
        if abs(values[i] - values[i - 1]) < rtol * scale:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def mgf_gamma(alpha, u):
    """Moment generating function of the mean-one Gamma: (1 - u/alpha)^-alpha.

    Defined for ``u <= 0``; accepts scalars or arrays.
    """
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    arr = np.asarray(u, dtype=np.float64)
    if np.any(arr > 0) or np.any(np.isnan(arr)):
        raise DomainError("mgf_gamma is defined for u <= 0 only")
    out = _kernels.mgf_vec(alpha, arr)
    return float(out) if out.ndim == 0 else out


def mgf_gamma_inverse(alpha, v):
    """Inverse of :func:`mgf_gamma`: alpha * (1 - v^(-1/alpha)) for 0 < v <= 1."""
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    arr = np.asarray(v, dtype=np.float64)
    if np.any(arr <= 0) or np.any(arr > 1) or np.any(np.isnan(arr)):
        raise DomainError("mgf_gamma_inverse needs 0 < v <= 1")
    out = -alpha * np.expm1(-np.log(arr) / alpha)
    return float(out) if out.ndim == 0 else out


def nu_tensor(pi, u, orth_tol=1e-8):
    """nu_ijk = sum_l pi_l u_li u_lj u_lk for a pi-orthonormal eigenbasis."""
    pi = _pi(pi)
    u = np.asarray(u, dtype=np.float64)
    gram = u.T @ (pi[:, None] * u)
    if np.abs(gram - np.eye(pi.size)).max() > orth_tol:
        raise ValidationError("u is not orthonormal in the pi-weighted inner product")
    return NuTensor(np.einsum("l,li,lj,lk->ijk", pi, u, u, u))
