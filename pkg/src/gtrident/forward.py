"""Exact joint leaf-state distributions under GTR+Gamma.

Two independent routes are provided:

* the spectral expansion, which assigns one eigen-index per edge so the
  Gamma expectation collapses to a single MGF evaluation per index
  combination (:func:`joint3_exact`, :func:`joint_n_spectral`);
* a quadrature oracle that integrates the fixed-rate distribution, computed
  by matrix exponentials and message passing from a chosen root, against
  the Gamma density (:func:`joint_quadrature_oracle`).

Tensor layout is row-major with taxon order equal to leaf order, so entry
``(i1, ..., in)`` sits at flat index ``i1*k**(n-1) + ... + in``.
"""

import re
import string
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.special import gammainccinv, gammaincinv, gammaln, roots_jacobi, roots_legendre

from . import _kernels
from .errors import DeskScaleExceeded, ValidationError
from .model import GammaRates, GTRModel, TripleTree

NEG_TOL = 1e-13
SUM_TOL = 1e-12
MAX_TAXA = 10
MAX_TERMS = 1 << 22


def default_taxa(n):
    if n <= 26:
        return tuple(string.ascii_lowercase[:n])
    return tuple(f"t{i}" for i in range(n))


@dataclass(frozen=True, eq=False)
class JointTensor:
    """kappa**n leaf-state probabilities, stored flat in row-major order."""

    kappa: int
    p: np.ndarray
    taxa: tuple = None

    def __post_init__(self):
        k = int(self.kappa)
        p = np.array(self.p, dtype=np.float64).ravel()
        if k < 2:
            raise ValidationError("kappa must be at least 2")
        n = int(round(np.log(p.size) / np.log(k))) if p.size > 1 else 0
        if n < 1 or k**n != p.size:
            raise ValidationError(f"tensor length {p.size} is not a power of kappa={k}")
        if not np.all(np.isfinite(p)):
            raise ValidationError("tensor has non-finite entries")
        if p.min() < -NEG_TOL:
            raise ValidationError(f"tensor has a negative entry ({p.min():.3g})")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise ValidationError(f"tensor entries sum to {p.sum()!r}, not 1")
        taxa = default_taxa(n) if self.taxa is None else tuple(str(t) for t in self.taxa)
        if len(taxa) != n or len(set(taxa)) != n:
            raise ValidationError("taxa must be n distinct labels")
        p.setflags(write=False)
        object.__setattr__(self, "kappa", k)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "taxa", taxa)

    @property
    def n(self):
        return len(self.taxa)

    def array(self):
        """The tensor reshaped to ``(kappa,) * n``."""
        return self.p.reshape((self.kappa,) * self.n)

    @classmethod
    def from_array(cls, arr, taxa=None):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr.shape[0], arr.ravel(), taxa)


# --------------------------------------------------------------------------
# Trees
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LabeledTree:
    """Unrooted tree; vertices ``0..n-1`` are the leaves, in taxon order.

    ``edges[e] = (u, v)`` with length ``lengths[e]``.  Internal vertices must
    have valence at least 3 and internal edges must be strictly positive.
    """

    edges: tuple
    lengths: np.ndarray
    labels: tuple = None

    def __post_init__(self):
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        lengths = np.array(self.lengths, dtype=np.float64).ravel()
        if len(edges) != lengths.size or not edges:
            raise ValidationError("need one length per edge and at least one edge")
        if not np.all(np.isfinite(lengths)) or np.any(lengths < 0):
            raise ValidationError("edge lengths must be finite and nonnegative")
        n_vert = max(max(e) for e in edges) + 1
        if len(edges) != n_vert - 1:
            raise ValidationError("edge list does not describe a tree")
        deg = np.zeros(n_vert, dtype=int)
        for a, b in edges:
            if a == b or min(a, b) < 0:
                raise ValidationError("invalid edge")
            deg[a] += 1
            deg[b] += 1
        leaves = np.flatnonzero(deg == 1)
        n = leaves.size
        if not np.array_equal(leaves, np.arange(n)):
            raise ValidationError("leaves must be the vertices 0..n-1")
        if np.any(deg[n:] < 3):
            raise ValidationError("internal vertices must have valence >= 3")
        labels = default_taxa(n) if self.labels is None else tuple(str(x) for x in self.labels)
        if len(labels) != n or len(set(labels)) != n:
            raise ValidationError("labels must be n distinct strings")
        object.__setattr__(self, "edges", edges)
        lengths.setflags(write=False)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "labels", labels)
        if not self._connected():
            raise ValidationError("edge list does not describe a connected tree")
        for e, (a, b) in enumerate(edges):
            if a >= n and b >= n and lengths[e] <= 0:
                raise ValidationError("internal edges must have positive length")
        d = self.distance_matrix()
        off = ~np.eye(n, dtype=bool)
        if n > 1 and d[off].min() <= 0:
            raise ValidationError("two taxa are at total distance 0")

    @property
    def n_leaves(self):
        return len(self.labels)

    @property
    def n_vertices(self):
        return len(self.edges) + 1

    def adjacency(self):
        adj = [[] for _ in range(self.n_vertices)]
        for e, (a, b) in enumerate(self.edges):
            adj[a].append((b, e))
            adj[b].append((a, e))
        return adj

    def _connected(self):
        adj = self.adjacency()
        seen = {0}
        stack = [0]
        while stack:
            v = stack.pop()
            for w, _ in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == self.n_vertices

    def distance_matrix(self):
        """Path lengths between all pairs of leaves."""
        n = self.n_leaves
        adj = self.adjacency()
        out = np.zeros((n, n))
        for src in range(n):
            dist = {src: 0.0}
            stack = [src]
            while stack:
                v = stack.pop()
                for w, e in adj[v]:
                    if w not in dist:
                        dist[w] = dist[v] + self.lengths[e]
                        stack.append(w)
            out[src] = [dist[j] for j in range(n)]
        return out

    def splits(self):
        """Map each edge's leaf bipartition to its length.

        A split is keyed by the frozenset of leaf indices on the side not
        containing leaf 0.
        """
        adj = self.adjacency()
        n = self.n_leaves
        out = {}
        for e, (a, b) in enumerate(self.edges):
            side = set()
            stack = [b]
            seen = {a, b}
            while stack:
                v = stack.pop()
                if v < n:
                    side.add(v)
                for w, _ in adj[v]:
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            if 0 in side:
                side = set(range(n)) - side
            out[frozenset(side)] = float(self.lengths[e])
        return out

    @classmethod
    def star(cls, lengths, labels=None):
        """Star tree with one internal vertex (the 3-taxon tree when n = 3)."""
        lengths = np.asarray(lengths, dtype=np.float64)
        n = lengths.size
        return cls(tuple((i, n) for i in range(n)), lengths, labels)

    @classmethod
    def from_triple(cls, tree, labels=None):
        return cls.star(tree.lengths, labels)

    def to_newick(self, precision=17):
        """Newick string rooted at the highest-numbered internal vertex."""
        adj = self.adjacency()
        root = self.n_vertices - 1 if self.n_vertices > self.n_leaves else 0

        def fmt(x):
            return format(float(x), f".{precision}g")

        def render(v, parent):
            kids = [(w, e) for w, e in adj[v] if w != parent]
            parts = [render(w, v) + ":" + fmt(self.lengths[e]) for w, e in kids]
            name = self.labels[v] if v < self.n_leaves else ""
            if not parts:
                return name
            return "(" + ",".join(parts) + ")" + name

        return render(root, -1) + ";"

    @classmethod
    def from_newick(cls, text, taxa=None):
        """Parse a Newick string with branch lengths.

        A degree-2 root is suppressed by merging its two edges.  If ``taxa``
        is given the leaves are numbered in that order.
        """
        return _parse_newick(text, taxa)


_TOKEN = re.compile(r"\s*([(),:;]|[^(),:;\s]+)")


def _parse_newick(text, taxa):
    tokens = _TOKEN.findall(text.strip())
    if not tokens or tokens[-1] != ";":
        raise ValidationError("Newick string must end with ';'")
    pos = 0
    nodes = []  # (name, parent, length)

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take():
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        return tok

    def parse_node(parent):
        me = len(nodes)
        nodes.append([None, parent, 0.0])
        if peek() == "(":
            take()
            parse_node(me)
            while peek() == ",":
                take()
                parse_node(me)
            if take() != ")":
                raise ValidationError("unbalanced parentheses in Newick string")
        if peek() not in ("(", ")", ",", ":", ";", None):
            nodes[me][0] = take()
        if peek() == ":":
            take()
            try:
                nodes[me][2] = float(take())
            except ValueError:
                raise ValidationError("bad branch length in Newick string") from None
        return me

    try:
        parse_node(-1)
        if take() != ";" or pos != len(tokens):
            raise ValidationError("trailing characters in Newick string")
    except IndexError:
        raise ValidationError("truncated Newick string") from None

    root_kids = [i for i, node in enumerate(nodes) if node[1] == 0]
    suppress = len(root_kids) == 2
    edges_list = [
        (c, nodes[c][1], nodes[c][2])
        for c in range(1, len(nodes))
        if not (suppress and nodes[c][1] == 0)
    ]
    if suppress:
        a, b = root_kids
        edges_list.append((a, b, nodes[a][2] + nodes[b][2]))
    vertices = [v for v in range(len(nodes)) if not (suppress and v == 0)]
    degree = {v: 0 for v in vertices}
    for c, p, _ in edges_list:
        degree[c] += 1
        degree[p] += 1
    leaves = [v for v in vertices if degree[v] == 1]
    names = [nodes[v][0] for v in leaves]
    if any(nm is None for nm in names):
        raise ValidationError("every leaf needs a label")
    if taxa is not None:
        taxa = [str(t) for t in taxa]
        if sorted(taxa) != sorted(names):
            raise ValidationError("taxa do not match the Newick leaf labels")
        leaves = [leaves[names.index(t)] for t in taxa]
        names = taxa
    internal = [v for v in vertices if degree[v] != 1]
    relabel = {v: i for i, v in enumerate(leaves + internal)}
    return LabeledTree(
        tuple((relabel[c], relabel[p]) for c, p, _ in edges_list),
        np.array([ln for _, _, ln in edges_list]),
        tuple(names),
    )


# --------------------------------------------------------------------------
# Spectral evaluation
# --------------------------------------------------------------------------


def _coerce(model, rates):
    if not isinstance(model, GTRModel):
        raise ValidationError("model must be a GTRModel")
    alpha = rates.alpha if isinstance(rates, GammaRates) else GammaRates(rates).alpha
    return model, alpha


def joint3_exact(model, rates, tree):
    """Joint distribution of the 3-taxon star by spectral expansion.

    P(i,j,k) = sum_{m,n,p} nu_mnp V_mi V_nj V_pk L(t_a l_m + t_b l_n + t_c l_p)
    with V = u^{-1}.
    """
    model, alpha = _coerce(model, rates)
    if not isinstance(tree, TripleTree):
        tree = TripleTree(*tree)
    arr = _kernels.star_joint(model.nu.nu, model.v, model.lambdas, tree.lengths, alpha)
    return JointTensor.from_array(arr)


def _as_tree(tree):
    if isinstance(tree, LabeledTree):
        return tree
    if not isinstance(tree, TripleTree):
        tree = TripleTree(*tree)
    return LabeledTree.from_triple(tree)


def _mode_products(core, v, n):
    k = v.shape[0]
    arr = core.reshape((k,) * n)
    for axis in range(n):
        arr = np.moveaxis(np.tensordot(v.T, arr, axes=(1, axis)), 0, axis)
    return arr


def joint_n_spectral(tree, model, rates):
    """Joint distribution on any labeled tree by spectral expansion.

    Cost grows like kappa**(number of edges); trees beyond 10 taxa or
    2**22 index combinations raise :class:`DeskScaleExceeded`.
    """
    model, alpha = _coerce(model, rates)
    tree = _as_tree(tree)
    n = tree.n_leaves
    k = model.kappa
    n_edges = len(tree.edges)
    if n > MAX_TAXA or k**n_edges > MAX_TERMS:
        raise DeskScaleExceeded(
            f"desk-scale exceeded: {n} taxa, {k}**{n_edges} index combinations"
        )
    adj = tree.adjacency()
    internal = list(range(n, tree.n_vertices))
    max_deg = max((len(adj[v]) for v in internal), default=1)
    vert_edges = np.full((len(internal), max_deg), -1, dtype=np.int64)
    vert_deg = np.zeros(len(internal), dtype=np.int64)
    for row, vtx in enumerate(internal):
        vert_deg[row] = len(adj[vtx])
        vert_edges[row, : len(adj[vtx])] = [e for _, e in adj[vtx]]
    leaf_edges = np.array([adj[i][0][1] for i in range(n)], dtype=np.int64)
    core = _kernels.tree_core(
        model.lambdas, model.u, model.pi.pi, tree.lengths, vert_edges, vert_deg, leaf_edges, alpha
    )
    return JointTensor.from_array(_mode_products(core, model.v, n), tree.labels)


# --------------------------------------------------------------------------
# Quadrature oracle
# --------------------------------------------------------------------------


def gamma_rate_quadrature(alpha, nodes):
    """Nodes and weights for E[f(r)], r ~ Gamma(shape alpha, scale 1/alpha).

    For alpha < 5 the range is split at r0 = 0.1: Gauss-Jacobi with weight
    r**(alpha-1) on [0, r0] absorbs the singularity at the origin, and
    Gauss-Legendre in log r covers [r0, r_max].  For alpha >= 5 the density
    is concentrated away from 0 and Gauss-Legendre in log r spans the
    central quantile range.  r_max is the 1 - 1e-17 quantile.
    """
    if nodes < 16:
        raise ValidationError("quadrature needs at least 16 nodes")
    log_norm = alpha * np.log(alpha) - gammaln(alpha)
    r_hi = gammainccinv(alpha, 1e-17) / alpha
    if alpha >= 5:
        r_lo = gammaincinv(alpha, 1e-17) / alpha
        return _log_legendre(alpha, r_lo, r_hi, nodes)
    r0 = 0.1
    n1 = (3 * nodes) // 8
    x, w = roots_jacobi(n1, 0.0, alpha - 1.0)
    r1 = r0 * (1 + x) / 2
    w1 = w * (r0 / 2) ** alpha * np.exp(log_norm - alpha * r1)
    r2, w2 = _log_legendre(alpha, r0, r_hi, nodes - n1)
    return np.concatenate([r1, r2]), np.concatenate([w1, w2])


def _stirling_correction(alpha):
    if alpha < 100:
        return gammaln(alpha) - ((alpha - 0.5) * np.log(alpha) - alpha + 0.5 * np.log(2 * np.pi))
    a2 = alpha * alpha
    return (1 / 12 - (1 / 360 - 1 / (1260 * a2)) / a2) / alpha


def _log_legendre(alpha, r_lo, r_hi, n):
    # log density written as alpha*(log r - r + 1) + const so that nothing of
    # size alpha cancels; the naive alpha*log(alpha) - gammaln(alpha) loses
    # about alpha * eps in relative accuracy.
    y, w = roots_legendre(n)
    lo, hi = np.log(r_lo), np.log(r_hi)
    y = lo + (y + 1) * (hi - lo) / 2
    w = w * (hi - lo) / 2
    r = np.exp(y)
    const = 0.5 * np.log(alpha / (2 * np.pi)) - _stirling_correction(alpha)
    return r, w * np.exp(const + alpha * (y - np.expm1(y)))


def homogeneous_joint(tree, q, pi, rate=1.0, root=None):
    """Leaf distribution for a single rate, summing over histories from a root.

    Uses matrix exponentials exp(rate * t_e * Q) and message passing; the
    result is a ``(kappa,) * n`` array.  ``root`` may be any vertex.
    """
    tree = _as_tree(tree)
    q = np.asarray(getattr(q, "q", q), dtype=np.float64)
    pi = np.asarray(getattr(pi, "pi", pi), dtype=np.float64)
    k = pi.size
    n = tree.n_leaves
    adj = tree.adjacency()
    if root is None:
        root = n if tree.n_vertices > n else 0
    if not 0 <= root < tree.n_vertices:
        raise ValidationError("root is not a vertex of the tree")

    def message(v, parent):
        # returns (array with axes [h_v, leaves...], leaf ids)
        arr = np.eye(k) if v < n else np.ones(k)
        order = [v] if v < n else []
        for w, e in adj[v]:
            if w == parent:
                continue
            sub, ids = message(w, v)
            m = np.tensordot(expm(rate * tree.lengths[e] * q), sub, axes=(1, 0))
            arr = arr.reshape(arr.shape + (1,) * (m.ndim - 1)) * m.reshape(
                (k,) + (1,) * (arr.ndim - 1) + m.shape[1:]
            )
            order += ids
        return arr, order

    arr, order = message(root, -1)
    joint = np.tensordot(pi, arr, axes=(0, 0))
    return np.transpose(joint, np.argsort(order))


def joint_quadrature_oracle(tree, model, rates, nodes=64, root=None):
    """Integrate the fixed-rate distribution against the Gamma density."""
    model, alpha = _coerce(model, rates)
    tree = _as_tree(tree)
    r, w = gamma_rate_quadrature(alpha, int(nodes))
    acc = np.zeros((model.kappa,) * tree.n_leaves)
    for ri, wi in zip(r, w):
        acc += wi * homogeneous_joint(tree, model.q, model.pi, ri, root)
    # quadrature weights sum to 1 only up to truncation; the tensor is not renormalised
    return JointTensor(model.kappa, np.clip(acc, 0.0, None).ravel(), tree.labels)


# --------------------------------------------------------------------------
# Marginals
# --------------------------------------------------------------------------


def marginalize(joint, keep):
    """Sum out every taxon not in ``keep``; kept taxa appear in ``keep`` order."""
    keep = [int(i) for i in keep]
    if not keep:
        raise ValidationError("keep must name at least one taxon")
    if len(set(keep)) != len(keep) or min(keep) < 0 or max(keep) >= joint.n:
        raise ValidationError("keep must be distinct taxon indices")
    arr = joint.array()
    drop = tuple(i for i in range(joint.n) if i not in keep)
    arr = arr.sum(axis=drop) if drop else arr
    remaining = sorted(keep)
    arr = np.transpose(arr, [remaining.index(i) for i in keep])
    return JointTensor.from_array(arr, tuple(joint.taxa[i] for i in keep))


def permute_taxa(joint, order):
    """Reorder taxa so new taxon ``j`` is old taxon ``order[j]``."""
    if sorted(order) != list(range(joint.n)):
        raise ValidationError("order must be a permutation of the taxa")
    return marginalize(joint, order)


def pair_matrix(joint, i, j):
    """kappa x kappa joint distribution of taxa i and j."""
    return marginalize(joint, [i, j]).array()
