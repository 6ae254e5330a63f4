"""Random and named GTR+Gamma instances."""

import math

import numpy as np

from .errors import ValidationError
from .forward import LabeledTree
from .model import GammaRates, GTRModel, StateDistribution, TripleTree
from .regimes import CASE_B_PI, CASE_B_U, case_a_u

EXCH_RANGE = (0.1, 10.0)
ALPHA_RANGE = (0.2, 5.0)
EDGE_RANGE = (0.02, 2.0)


def rng_for(seed, trial=0):
    """Independent PCG64 stream for trial ``trial`` of a run seeded ``seed``."""
    return np.random.default_rng(int(seed) + int(trial))


def _log_uniform(rng, lo, hi, size=None):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


def random_exchangeabilities(rng, kappa):
    s = np.zeros((kappa, kappa))
    iu = np.triu_indices(kappa, 1)
    s[iu] = _log_uniform(rng, *EXCH_RANGE, size=len(iu[0]))
    return s + s.T


def random_model(rng, kappa=4):
    """Flat-Dirichlet pi, log-uniform exchangeabilities, log-uniform alpha,
    uniform edge lengths.  Returns ``(model, rates, tree)``."""
    pi = rng.dirichlet(np.ones(kappa))
    # keep every state visibly present
    pi = np.maximum(pi, 1e-3)
    pi /= pi.sum()
    model = GTRModel.from_exchangeabilities(random_exchangeabilities(rng, kappa), pi)
    rates = GammaRates(float(_log_uniform(rng, *ALPHA_RANGE)))
    tree = TripleTree(*rng.uniform(*EDGE_RANGE, size=3))
    return model, rates, tree


def random_rates_and_tree(rng):
    rates = GammaRates(float(_log_uniform(rng, *ALPHA_RANGE)))
    tree = TripleTree(*rng.uniform(*EDGE_RANGE, size=3))
    return rates, tree


def model_from_spectrum(pi, u, lambdas):
    """Rate matrix u diag(lambda) u^T diag(pi), rescaled into the trace gauge."""
    pi = np.asarray(pi, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    lam = np.asarray(lambdas, dtype=np.float64)
    if lam.size == u.shape[1] - 1:
        lam = np.concatenate([[0.0], lam])
    # the columns given may only be orthogonal; normalise them in the pi metric
    norms = np.sqrt(np.einsum("l,lk->k", pi, u * u))
    u = u / norms[None, :]
    q = u @ np.diag(lam) @ u.T * pi[None, :]
    flux = pi[:, None] * q
    q = 0.5 * (flux + flux.T) / pi[:, None]
    np.fill_diagonal(q, 0.0)
    if np.any(q[~np.eye(pi.size, dtype=bool)] <= 0):
        raise ValidationError("spectrum gives non-positive off-diagonal rates")
    np.fill_diagonal(q, -q.sum(axis=1))
    return GTRModel.from_rate_matrix(q, StateDistribution(pi))[0]


def permute_states(model, perm):
    """Relabel states: new state r is old state ``perm[r]``."""
    idx = list(perm)
    q = model.q.q[np.ix_(idx, idx)]
    return GTRModel(StateDistribution(model.pi.pi[idx]), type(model.q)(q))


def jc_model(kappa=4):
    return GTRModel.from_exchangeabilities(np.ones((kappa, kappa)), np.full(kappa, 1.0 / kappa))


def k2p_model(ratio=2.0):
    """Two-parameter model on (A, C, G, T): transitions A<->G and C<->T at
    ``ratio`` times the transversion rate."""
    s = np.ones((4, 4))
    s[0, 2] = s[2, 0] = s[1, 3] = s[3, 1] = ratio
    return GTRModel.from_exchangeabilities(s, np.full(4, 0.25))


def k3p_model(transition=3.0, tv1=1.0, tv2=0.5):
    s = np.ones((4, 4))
    s[0, 2] = s[2, 0] = s[1, 3] = s[3, 1] = transition
    s[0, 1] = s[1, 0] = s[2, 3] = s[3, 2] = tv1
    s[0, 3] = s[3, 0] = s[1, 2] = s[2, 1] = tv2
    return GTRModel.from_exchangeabilities(s, np.full(4, 0.25))


def case_a_model(b, c, lambdas=(-1.0, -1.2, -1.6)):
    """Uniform-pi model whose eigenvectors follow the Case A pattern."""
    if b < 0 or c < 0 or abs(b * b + c * c - 2.0) > 1e-12:
        raise ValidationError("Case A needs b, c >= 0 with b^2 + c^2 = 2")
    return model_from_spectrum(np.full(4, 0.25), case_a_u(b, c), lambdas)


def case_b_model(lambdas=(-0.66, -0.7, -1.2)):
    """pi = (1/8, 1/8, 1/4, 1/2) with the Case B eigenvector pattern."""
    return model_from_spectrum(CASE_B_PI, CASE_B_U, lambdas)


def random_case_a(rng, max_tries=1000):
    """Case A model with random (b, c) and eigenvalues meeting its
    inequalities.  Returns ``(model, b, c)``."""
    for _ in range(max_tries):
        theta = rng.uniform(0.05, math.pi / 2 - 0.05)
        b, c = math.sqrt(2) * math.cos(theta), math.sqrt(2) * math.sin(theta)
        lam = -np.sort(rng.uniform(0.3, 2.0, size=3))
        try:
            return case_a_model(b, c, lam), b, c
        except ValidationError:
            continue
    raise ValidationError("could not sample a valid Case A spectrum")


def random_binary_tree(rng, n, edge_range=EDGE_RANGE):
    """Unrooted binary tree on n >= 3 leaves grown by random leaf insertion."""
    if n < 3:
        raise ValidationError("a binary tree needs at least 3 leaves")
    # leaves are 0..n-1, internal vertices n..2n-3
    edges = [(0, n), (1, n), (2, n)]
    next_internal = n + 1
    for leaf in range(3, n):
        a, b = edges.pop(int(rng.integers(len(edges))))
        mid = next_internal
        next_internal += 1
        edges += [(a, mid), (mid, b), (mid, leaf)]
    lengths = rng.uniform(*edge_range, size=len(edges))
    return LabeledTree(edges, lengths)
