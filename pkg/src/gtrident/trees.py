"""From n-taxon joint distributions to distances and trees."""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import (
    InconsistentDistributionError,
    NotATreeMetricError,
    ValidationError,
)
from .forward import JointTensor, LabeledTree, marginalize
from .identify import recover_all
from .model import GTRRateMatrix, StateDistribution

ALL_TRIPLES_MAX_N = 8
CONSISTENCY_RTOL = 1e-6
METRIC_TOL = 1e-8
EDGE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Symmetric, nonnegative, zero-diagonal matrix of leaf-to-leaf distances."""

    d: np.ndarray
    labels: tuple = None

    def __post_init__(self):
        d = np.array(self.d, dtype=np.float64)
        n = d.shape[0]
        if d.ndim != 2 or d.shape != (n, n) or n < 2:
            raise ValidationError("distance matrix must be square with n >= 2")
        if not np.all(np.isfinite(d)):
            raise ValidationError("distances must be finite")
        if np.abs(d - d.T).max() > 1e-12 * max(1.0, np.abs(d).max()):
            raise ValidationError("distance matrix must be symmetric")
        if np.any(np.diag(d) != 0):
            raise ValidationError("distance matrix must have a zero diagonal")
        if d.min() < 0:
            raise ValidationError("distances must be nonnegative")
        d = 0.5 * (d + d.T)
        d.setflags(write=False)
        object.__setattr__(self, "d", d)
        labels = tuple(self.labels) if self.labels is not None else tuple(f"t{i}" for i in range(n))
        if len(labels) != n:
            raise ValidationError("one label per row is required")
        object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return self.d.shape[0]


@dataclass(frozen=True, eq=False)
class DistanceRecovery:
    distances: DistanceMatrix
    alpha: float
    q: GTRRateMatrix
    pi: StateDistribution
    report: dict


def covering_triples(n):
    """Every triple for small n; otherwise one triple per leaf pair."""
    if n <= ALL_TRIPLES_MAX_N:
        return list(itertools.combinations(range(n), 3))
    chosen = set()
    for i, j in itertools.combinations(range(n), 2):
        k = next(x for x in range(n) if x not in (i, j))
        chosen.add(tuple(sorted((i, j, k))))
    return sorted(chosen)


def distances_from_joint(joint, rtol=CONSISTENCY_RTOL):
    """Recover pairwise distances, alpha, Q and pi from triple marginals.

    Every triple is identified independently; alpha, Q and pi are averaged
    and their spread across triples is reported.  A spread above ``rtol``
    (relative) means the tensor is not from one GTR+Gamma tree model.
    """
    if not isinstance(joint, JointTensor):
        raise ValidationError("expected a JointTensor")
    n = joint.n
    if n < 3:
        raise ValidationError("at least 3 taxa are needed")
    triples = covering_triples(n)
    sums = np.zeros((n, n))
    counts = np.zeros((n, n))
    alphas, qs, pis, residuals = [], [], [], []
    for tri in triples:
        rec = recover_all(marginalize(joint, tri))
        t = rec.edge_lengths
        for (x, tx), (y, ty) in itertools.combinations(zip(tri, t), 2):
            sums[x, y] += tx + ty
            counts[x, y] += 1
        alphas.append(rec.alpha)
        qs.append(rec.q.q)
        pis.append(rec.pi.pi)
        residuals.append(rec.residual)
    alphas = np.array(alphas)
    qs = np.array(qs)
    pis = np.array(pis)
    alpha = float(alphas.mean())
    q = qs.mean(axis=0)
    alpha_spread = float((alphas.max() - alphas.min()) / alpha)
    q_spread = float((qs.max(axis=0) - qs.min(axis=0)).max() / np.abs(q).max())
    pi_spread = float((pis.max(axis=0) - pis.min(axis=0)).max())
    report = {
        "triples": len(triples),
        "alpha_spread": alpha_spread,
        "q_spread": q_spread,
        "pi_spread": pi_spread,
        "max_triple_residual": float(max(residuals)),
    }
    if alpha_spread > rtol or q_spread > rtol or pi_spread > rtol:
        raise InconsistentDistributionError(
            f"inconsistent tensor: triples disagree (alpha {alpha_spread:.2e}, "
            f"Q {q_spread:.2e}, pi {pi_spread:.2e})"
        )
    d = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    d[iu] = sums[iu] / counts[iu]
    d = d + d.T
    pi = pis.mean(axis=0)
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return DistanceRecovery(
        DistanceMatrix(d, joint.taxa), alpha, GTRRateMatrix(q), StateDistribution(pi / pi.sum()), report
    )


def four_point_residual(d):
    """Largest gap between the two largest of the three quartet pair sums."""
    d = getattr(d, "d", d)
    worst = 0.0
    for i, j, k, m in itertools.combinations(range(d.shape[0]), 4):
        s = sorted((d[i, j] + d[k, m], d[i, k] + d[j, m], d[i, m] + d[j, k]))
        worst = max(worst, s[2] - s[1])
    return worst


def _neighbor_joining(d):
    """Topology by neighbor joining; returns (edges, n_vertices)."""
    n = d.shape[0]
    dist = {(i, j): d[i, j] for i in range(n) for j in range(n)}
    active = list(range(n))
    edges = []
    next_id = n
    while len(active) > 3:
        m = len(active)
        r = {i: sum(dist[i, k] for k in active) for i in active}
        best = None
        for a, b in itertools.combinations(active, 2):
            score = (m - 2) * dist[a, b] - r[a] - r[b]
            if best is None or score < best[0] - 1e-12 * max(1.0, abs(score)):
                best = (score, a, b)
        _, a, b = best
        u = next_id
        next_id += 1
        edges.append((u, a))
        edges.append((u, b))
        for k in active:
            if k not in (a, b):
                dist[u, k] = dist[k, u] = 0.5 * (dist[a, k] + dist[b, k] - dist[a, b])
        dist[u, u] = 0.0
        active = [k for k in active if k not in (a, b)] + [u]
    centre = next_id
    for k in active:
        edges.append((centre, k))
    return edges, centre + 1


def _relabel(edges, n, n_vertices):
    """Renumber internal vertices to n, n+1, ... in order of appearance."""
    mapping = {i: i for i in range(n)}
    for u, v in edges:
        for x in (u, v):
            if x not in mapping:
                mapping[x] = len(mapping)
    return [(mapping[u], mapping[v]) for u, v in edges]


def _path_matrix(edges, n):
    adj = {}
    for e, (u, v) in enumerate(edges):
        adj.setdefault(u, []).append((v, e))
        adj.setdefault(v, []).append((u, e))
    pairs = list(itertools.combinations(range(n), 2))
    design = np.zeros((len(pairs), len(edges)))
    for row, (i, j) in enumerate(pairs):
        stack = [(i, -1, [])]
        while stack:
            v, parent, path = stack.pop()
            if v == j:
                design[row, path] = 1.0
                break
            for w, e in adj[v]:
                if w != parent:
                    stack.append((w, v, path + [e]))
    return pairs, design


def build_tree(d, tol=METRIC_TOL):
    """Reconstruct the tree realising a tree metric.

    Neighbor joining picks the topology, edge lengths are refitted by least
    squares over all leaf pairs, and the fit must reproduce ``d`` within
    ``tol`` (scaled by the largest distance).  Pendant edges within 1e-10 of
    zero are reported as exactly 0; internal edges must be positive.
    Returns ``(tree, report)``.
    """
    if not isinstance(d, DistanceMatrix):
        d = DistanceMatrix(d)
    n = d.n
    if n < 3:
        raise ValidationError("tree building needs at least 3 leaves")
    scale = max(1.0, float(d.d.max()))
    fp = float(four_point_residual(d.d))
    if fp > tol * scale:
        raise NotATreeMetricError(f"not a tree metric: four-point residual {fp:.3e}")
    edges, n_vertices = _neighbor_joining(np.array(d.d))
    edges = _relabel(edges, n, n_vertices)
    pairs, design = _path_matrix(edges, n)
    target = np.array([d.d[i, j] for i, j in pairs])
    lengths, *_ = np.linalg.lstsq(design, target, rcond=None)
    fit = float(np.abs(design @ lengths - target).max())
    if fit > tol * scale:
        raise NotATreeMetricError(f"not a tree metric: least-squares misfit {fit:.3e}")
    for e, (u, v) in enumerate(edges):
        pendant = u < n or v < n
        if pendant:
            if lengths[e] < -EDGE_TOL:
                raise NotATreeMetricError(f"negative pendant edge {lengths[e]:.3e}")
            if abs(lengths[e]) < EDGE_TOL:
                lengths[e] = 0.0
        elif lengths[e] < EDGE_TOL:
            raise NotATreeMetricError(
                f"not a tree metric: internal edge {lengths[e]:.3e} is not positive"
            )
    tree = LabeledTree(edges, lengths, d.labels)
    return tree, {"four_point_residual": fp, "fit_residual": fit}
