"""Hot numerical kernels with a numba path and a pure-numpy path.

Every kernel exists twice: ``*_nb`` is compiled with ``numba.njit`` and
``*_np`` is plain numpy.  The public wrappers dispatch on :data:`USE_NUMBA`,
which is read from the environment at import time:

    GTRIDENT_NUMBA=0   force the numpy path
    GTRIDENT_NUMBA=1   use numba when importable (default)

Both paths compute the same quantities; only summation order differs, so
results agree to rounding (see ``tests/test_kernels.py``).
"""

import math
import os

import numpy as np

from .errors import NumericalError

try:  # pragma: no cover - exercised implicitly
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def _flag_enabled(value):
    return value.strip().lower() not in ("0", "false", "no", "off", "")


USE_NUMBA = HAVE_NUMBA and _flag_enabled(os.environ.get("GTRIDENT_NUMBA", "1"))


def _njit(*args, **kwargs):
    if HAVE_NUMBA:
        return numba.njit(*args, cache=True, **kwargs)

    def passthrough(fn):
        return fn

    return passthrough


def backend():
    """Name of the active kernel backend."""
    return "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# Gamma moment generating function (scalar and vector)
# --------------------------------------------------------------------------


@_njit
def _mgf_scalar(alpha, u):
    return math.exp(-alpha * math.log1p(-u / alpha))


def mgf_vec(alpha, u):
    """(1 - u/alpha)^(-alpha) evaluated elementwise, stable for large alpha."""
    u = np.asarray(u, dtype=np.float64)
    return np.exp(-alpha * np.log1p(-u / alpha))


# --------------------------------------------------------------------------
# Cyclic Jacobi eigensolver for small symmetric matrices
# --------------------------------------------------------------------------


@_njit
def _jacobi_eigh_nb(a, tol, max_sweeps):
    a = a.copy()
    n = a.shape[0]
    v = np.eye(n)
    scale = 0.0
    for i in range(n):
        for j in range(n):
            if abs(a[i, j]) > scale:
                scale = abs(a[i, j])
    if scale == 0.0:
        scale = 1.0
    sweeps = 0
    while sweeps < max_sweeps:
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) > off:
                    off = abs(a[p, q])
        if off <= tol * scale:
            break
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                sgn = 1.0 if theta >= 0.0 else -1.0
                t = sgn / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, v, sweeps


def _jacobi_eigh_np(a, tol, max_sweeps):
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    scale = float(np.abs(a).max()) if n else 1.0
    if scale == 0.0:
        scale = 1.0
    sweeps = 0
    iu = np.triu_indices(n, 1)
    while sweeps < max_sweeps:
        if n < 2 or np.abs(a[iu]).max() <= tol * scale:
            break
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                sgn = 1.0 if theta >= 0.0 else -1.0
                t = sgn / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                cols = a[:, [p, q]].copy()
                a[:, p] = c * cols[:, 0] - s * cols[:, 1]
                a[:, q] = s * cols[:, 0] + c * cols[:, 1]
                rows = a[[p, q], :].copy()
                a[p, :] = c * rows[0] - s * rows[1]
                a[q, :] = s * rows[0] + c * rows[1]
                a[p, q] = a[q, p] = 0.0
                vc = v[:, [p, q]].copy()
                v[:, p] = c * vc[:, 0] - s * vc[:, 1]
                v[:, q] = s * vc[:, 0] + c * vc[:, 1]
    return np.diag(a).copy(), v, sweeps


def jacobi_eigh(a, tol=1e-13, max_sweeps=100):
    """Eigen-decompose a symmetric matrix by cyclic Jacobi rotations.

    Sweeps until the largest off-diagonal entry is below ``tol`` times the
    largest entry of the input.  Returns ``(eigenvalues, eigenvectors)``
    unsorted; eigenvectors are the columns of the second array.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("jacobi_eigh needs a square matrix")
    if USE_NUMBA:
        w, v, sweeps = _jacobi_eigh_nb(a, tol, max_sweeps)
    else:
        w, v, sweeps = _jacobi_eigh_np(a, tol, max_sweeps)
    if sweeps >= max_sweeps:
        raise NumericalError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    return w, v


# --------------------------------------------------------------------------
# 3-taxon star: P(x,y,z) = sum nu_mnp V_mx V_ny V_pz L(t.lambda)
# --------------------------------------------------------------------------


@_njit
def _star_joint_nb(nu, v, lam, t, alpha):
    k = lam.shape[0]
    g = np.empty((k, k, k))
    for m in range(k):
        for n in range(k):
            for p in range(k):
                if nu[m, n, p] == 0.0:
                    g[m, n, p] = 0.0
                else:
                    e = t[0] * lam[m] + t[1] * lam[n] + t[2] * lam[p]
                    g[m, n, p] = nu[m, n, p] * _mgf_scalar(alpha, e)
    # contract one mode at a time: O(k^4)
    h1 = np.zeros((k, k, k))
    for x in range(k):
        for m in range(k):
            vm = v[m, x]
            for n in range(k):
                for p in range(k):
                    h1[x, n, p] += vm * g[m, n, p]
    h2 = np.zeros((k, k, k))
    for x in range(k):
        for y in range(k):
            for n in range(k):
                vn = v[n, y]
                for p in range(k):
                    h2[x, y, p] += vn * h1[x, n, p]
    out = np.zeros((k, k, k))
    for x in range(k):
        for y in range(k):
            for z in range(k):
                acc = 0.0
                for p in range(k):
                    acc += v[p, z] * h2[x, y, p]
                out[x, y, z] = acc
    return out


def _star_joint_np(nu, v, lam, t, alpha):
    e = t[0] * lam[:, None, None] + t[1] * lam[None, :, None] + t[2] * lam[None, None, :]
    # memoize L on distinct exponents (repeated eigenvalues give repeats)
    uniq, inv = np.unique(e.ravel(), return_inverse=True)
    g = nu * mgf_vec(alpha, uniq)[inv].reshape(e.shape)
    return np.einsum("mnp,mx,ny,pz->xyz", g, v, v, v, optimize=True)


def star_joint(nu, v, lam, t, alpha):
    """Joint leaf distribution of the 3-taxon star from spectral data."""
    args = (
        np.ascontiguousarray(nu, dtype=np.float64),
        np.ascontiguousarray(v, dtype=np.float64),
        np.ascontiguousarray(lam, dtype=np.float64),
        np.ascontiguousarray(t, dtype=np.float64),
        float(alpha),
    )
    if USE_NUMBA:
        return _star_joint_nb(*args)
    return _star_joint_np(*args)


# --------------------------------------------------------------------------
# n-taxon tree: core tensor over leaf-edge eigen-indices
#
# G[k_leaf1..k_leafn] = sum over internal-edge indices of
#     L(sum_e t_e lambda_{k_e}) * prod_{internal v} sum_l pi_l prod_{e~v} U[l,k_e]
# --------------------------------------------------------------------------


@_njit
def _tree_core_nb(lam, u, pi, lengths, vert_edges, vert_deg, leaf_edges, alpha):
    kappa = lam.shape[0]
    n_edges = lengths.shape[0]
    n_leaves = leaf_edges.shape[0]
    n_int = vert_deg.shape[0]
    total = 1
    for _ in range(n_edges):
        total *= kappa
    core = np.zeros(kappa**n_leaves)
    digits = np.zeros(n_edges, dtype=np.int64)
    for idx in range(total):
        # odometer decode (last edge fastest)
        rem = idx
        for e in range(n_edges - 1, -1, -1):
            digits[e] = rem % kappa
            rem //= kappa
        expo = 0.0
        for e in range(n_edges):
            expo += lengths[e] * lam[digits[e]]
        w = 1.0
        for vtx in range(n_int):
            acc = 0.0
            for l in range(kappa):
                prod = pi[l]
                for j in range(vert_deg[vtx]):
                    prod *= u[l, digits[vert_edges[vtx, j]]]
                acc += prod
            w *= acc
            if w == 0.0:
                break
        if w == 0.0:
            continue
        code = 0
        for i in range(n_leaves):
            code = code * kappa + digits[leaf_edges[i]]
        core[code] += w * _mgf_scalar(alpha, expo)
    return core


def _tree_core_np(lam, u, pi, lengths, vert_edges, vert_deg, leaf_edges, alpha, chunk=1 << 16):
    kappa = lam.shape[0]
    n_edges = lengths.shape[0]
    n_leaves = leaf_edges.shape[0]
    total = kappa**n_edges
    core = np.zeros(kappa**n_leaves)
    powers = kappa ** np.arange(n_edges - 1, -1, -1, dtype=np.int64)
    leaf_powers = kappa ** np.arange(n_leaves - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (idx[:, None] // powers[None, :]) % kappa
        expo = lam[digits] @ lengths
        w = np.ones(idx.shape[0])
        for vtx in range(vert_deg.shape[0]):
            prod = np.broadcast_to(pi, (idx.shape[0], kappa)).copy()
            for j in range(vert_deg[vtx]):
                prod *= u[:, digits[:, vert_edges[vtx, j]]].T
            w *= prod.sum(axis=1)
        uniq, inv = np.unique(expo, return_inverse=True)
        vals = w * mgf_vec(alpha, uniq)[inv]
        code = digits[:, leaf_edges] @ leaf_powers
        core += np.bincount(code, weights=vals, minlength=core.shape[0])
    return core


def tree_core(lam, u, pi, lengths, vert_edges, vert_deg, leaf_edges, alpha):
    """Spectral core tensor (flat, length kappa**n) of an n-taxon tree."""
    args = (
        np.ascontiguousarray(lam, dtype=np.float64),
        np.ascontiguousarray(u, dtype=np.float64),
        np.ascontiguousarray(pi, dtype=np.float64),
        np.ascontiguousarray(lengths, dtype=np.float64),
        np.ascontiguousarray(vert_edges, dtype=np.int64),
        np.ascontiguousarray(vert_deg, dtype=np.int64),
        np.ascontiguousarray(leaf_edges, dtype=np.int64),
        float(alpha),
    )
    if USE_NUMBA:
        return _tree_core_nb(*args)
    return _tree_core_np(*args)
