"""Graph container, normalization matrices, k-hop reachability and label diagnostics.

Graphs are undirected and unweighted: a symmetric boolean adjacency in CSR
form (no stored self-loops), a dense float feature matrix, and optional
integer labels. All structures are treated as immutable after construction.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import shortest_path as _sp_shortest_path

from .errors import ConfigError, DimensionError, ParseError

__all__ = [
    "Graph",
    "NormalizedAdjacency",
    "KHopMask",
    "load_graph",
    "normalized_adjacency",
    "khop_mask",
    "khop_weights",
    "homophily_ratio",
    "shortest_path_histogram",
]


@dataclass(frozen=True)
class Graph:
    """Undirected graph with node features and optional cluster labels."""

    n_nodes: int
    adj: sparse.csr_array          # symmetric, 0/1 float64, zero diagonal
    features: np.ndarray           # (n_nodes, d) float64
    labels: np.ndarray | None = None
    n_clusters: int | None = None

    def __post_init__(self):
        if self.features.shape[0] != self.n_nodes:
            raise DimensionError(
                f"feature rows ({self.features.shape[0]}) != n_nodes ({self.n_nodes})"
            )
        if self.labels is not None:
            if len(self.labels) != self.n_nodes:
                raise DimensionError(
                    f"label count ({len(self.labels)}) != n_nodes ({self.n_nodes})"
                )
            if self.n_clusters is None:
                object.__setattr__(self, "n_clusters", int(self.labels.max()) + 1)
            if self.labels.min() < 0 or self.labels.max() >= self.n_clusters:
                raise ConfigError("labels must lie in [0, n_clusters)")

    @property
    def n_edges(self) -> int:
        """Number of undirected edges."""
        return self.adj.nnz // 2

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adj.sum(axis=1)).ravel()

    def fingerprint(self) -> str:
        """Content hash over structure, features and labels (sha256 hex)."""
        h = hashlib.sha256()
        h.update(np.int64(self.n_nodes).tobytes())
        h.update(np.ascontiguousarray(self.adj.indptr, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.adj.indices, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.features, dtype=np.float64).tobytes())
        if self.labels is not None:
            h.update(np.ascontiguousarray(self.labels, dtype=np.int64).tobytes())
        return h.hexdigest()


def build_graph(edges: np.ndarray, features: np.ndarray,
                labels: np.ndarray | None = None) -> Graph:
    """Assemble a Graph from an (m, 2) edge index array.

    Edges are symmetrized and deduplicated; self-loops are dropped.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    n = features.shape[0]
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        bad = int(edges.max()) if edges.max() >= n else int(edges.min())
        raise ParseError(f"edge endpoint {bad} outside [0, {n})")
    keep = edges[:, 0] != edges[:, 1]
    edges = edges[keep]
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    data = np.ones(len(rows), dtype=np.float64)
    adj = sparse.csr_array((data, (rows, cols)), shape=(n, n))
    adj.data[:] = 1.0  # collapse duplicates introduced by coo summation
    adj.sort_indices()
    lab = None
    if labels is not None:
        lab = np.asarray(labels, dtype=np.int64)
    return Graph(n_nodes=n, adj=adj, features=features, labels=lab)


def load_graph(edge_path, feature_path, label_path=None) -> Graph:
    """Load a graph from an edge list, a features CSV and optional labels.

    The edge file holds one integer pair per line (whitespace or comma
    separated); the feature file is CSV with one row per node; the label
    file holds one integer per line. Node count is set by the feature file.
    """
    features = _read_features(feature_path)
    n = features.shape[0]
    edges = _read_edges(edge_path, n)
    labels = None
    if label_path is not None:
        labels = _read_labels(label_path)
        if len(labels) != n:
            raise DimensionError(
                f"label file has {len(labels)} rows but feature file has {n}"
            )
    return build_graph(edges, features, labels)


def _read_features(path) -> np.ndarray:
    try:
        feats = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ParseError(f"bad feature row: {exc}", path=path) from exc
    if feats.size == 0:
        raise ParseError("empty feature file", path=path)
    return feats


def _read_edges(path, n_nodes: int) -> np.ndarray:
    pairs = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.replace(",", " ").strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(
                    f"expected two integers, got {len(parts)} fields",
                    path=path, line=lineno,
                )
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ParseError(
                    f"non-integer edge endpoint {parts!r}", path=path, line=lineno
                ) from exc
            if not (0 <= u < n_nodes and 0 <= v < n_nodes):
                bad = u if not (0 <= u < n_nodes) else v
                raise ParseError(
                    f"node index {bad} out of range [0, {n_nodes})",
                    path=path, line=lineno,
                )
            pairs.append((u, v))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _read_labels(path) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                values.append(int(line))
            except ValueError as exc:
                raise ParseError(
                    f"non-integer label {line!r}", path=path, line=lineno
                ) from exc
    return np.asarray(values, dtype=np.int64)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetrically normalized adjacency, with or without self-loops."""

    matrix: sparse.csr_array
    with_self_loops: bool


def normalized_adjacency(g: Graph, with_self_loops: bool = False) -> NormalizedAdjacency:
    """Return D^{-1/2} A D^{-1/2}, optionally with self-loops folded into A and D.

    Isolated nodes (degree zero, no self-loops) keep an all-zero row.
    """
    if g.n_nodes == 0:
        raise ConfigError("graph has no nodes")
    a = g.adj
    if with_self_loops:
        a = (a + sparse.eye_array(g.n_nodes, format="csr")).tocsr()
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    mat = a.multiply(inv_sqrt[:, None]).multiply(inv_sqrt[None, :]).tocsr()
    mat.sort_indices()
    return NormalizedAdjacency(matrix=mat, with_self_loops=with_self_loops)


@dataclass(frozen=True)
class KHopMask:
    """Boolean <=k-hop reachability, stored as per-node sorted neighbor lists.

    Every node reaches itself. Lists are CSR-style: the neighbors of node i
    are ``indices[indptr[i]:indptr[i+1]]``, sorted ascending.
    """

    k: int
    n_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    total_nnz: int
    d_max: int
    symmetric: bool = True
    _src: np.ndarray | None = field(default=None, repr=False, compare=False)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def list_sizes(self) -> np.ndarray:
        return np.diff(self.indptr)

    def src_ids(self) -> np.ndarray:
        """Row id of every stored entry (cached)."""
        if self._src is None:
            src = np.repeat(np.arange(self.n_nodes, dtype=np.int64), self.list_sizes())
            object.__setattr__(self, "_src", src)
        return self._src

    def pattern(self, data: np.ndarray) -> sparse.csr_array:
        """CSR array sharing this mask's sparsity pattern with given data."""
        return sparse.csr_array(
            (data, self.indices, self.indptr), shape=(self.n_nodes, self.n_nodes)
        )

    @classmethod
    def complete(cls, n: int, k: int = 1) -> "KHopMask":
        """Mask in which every node reaches every node (vanilla attention)."""
        indptr = np.arange(0, n * n + 1, n, dtype=np.int64)
        indices = np.tile(np.arange(n, dtype=np.int64), n)
        return cls(k=k, n_nodes=n, indptr=indptr, indices=indices,
                   total_nnz=n * n, d_max=n)

    def subsample(self, max_neighbors: int, seed: int) -> "KHopMask":
        """Cap every list at ``max_neighbors`` by seeded uniform subsampling.

        The node itself is always kept. The result is generally not
        symmetric, which only affects attention gathering, never losses.
        """
        if max_neighbors < 1:
            raise ConfigError("max_neighbors must be >= 1")
        rng = np.random.default_rng(seed)
        lists = []
        for i in range(self.n_nodes):
            nb = self.neighbors(i)
            if len(nb) <= max_neighbors:
                lists.append(nb)
                continue
            others = nb[nb != i]
            pick = rng.choice(len(others), size=max_neighbors - 1, replace=False)
            lists.append(np.sort(np.append(others[pick], i)))
        return _mask_from_lists(self.k, self.n_nodes, lists, symmetric=False)


def _mask_from_lists(k, n, lists, symmetric=True) -> KHopMask:
    sizes = np.fromiter((len(l) for l in lists), dtype=np.int64, count=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(sizes, out=indptr[1:])
    indices = (np.concatenate(lists) if n else np.empty(0)).astype(np.int64)
    return KHopMask(k=k, n_nodes=n, indptr=indptr, indices=indices,
                    total_nnz=int(indptr[-1]), d_max=int(sizes.max(initial=0)),
                    symmetric=symmetric)


def khop_mask(g: Graph, k: int) -> KHopMask:
    """Boolean reachability within k hops, self included: (A + I)^k > 0."""
    if k < 1:
        raise ConfigError(f"hop order k must be >= 1, got {k}")
    n = g.n_nodes
    step = (g.adj + sparse.eye_array(n, format="csr")).tocsr()
    step.data[:] = 1.0
    reach = step.copy()
    for _ in range(k - 1):
        reach = reach @ step
        reach.data[:] = 1.0
    reach = reach.tocsr()
    reach.sort_indices()
    sizes = np.diff(reach.indptr)
    return KHopMask(
        k=k, n_nodes=n,
        indptr=reach.indptr.astype(np.int64),
        indices=reach.indices.astype(np.int64),
        total_nnz=int(reach.nnz),
        d_max=int(sizes.max(initial=0)),
    )


def khop_weights(g: Graph, k: int) -> sparse.csr_array:
    """k-th power of the self-loop-free normalized adjacency, diagonal zeroed.

    These are the real-valued positive-pair weights; entries are nonnegative
    and, by the spectral bound, never exceed one.
    """
    if k < 1:
        raise ConfigError(f"hop order k must be >= 1, got {k}")
    base = normalized_adjacency(g, with_self_loops=False).matrix
    w = base.copy()
    for _ in range(k - 1):
        w = (w @ base).tocsr()
    w = sparse.csr_array(w)
    w.setdiag(0.0)
    w.eliminate_zeros()
    w.sort_indices()
    return w


def homophily_ratio(g: Graph) -> float:
    """Mean over non-isolated nodes of the same-label fraction of 1-hop neighbors."""
    if g.labels is None:
        raise ConfigError("homophily_ratio requires node labels")
    adj = g.adj
    same = 0.0
    count = 0
    for i in range(g.n_nodes):
        nb = adj.indices[adj.indptr[i]:adj.indptr[i + 1]]
        if len(nb) == 0:
            continue
        same += float(np.mean(g.labels[nb] == g.labels[i]))
        count += 1
    if count == 0:
        raise ConfigError("graph has no edges; homophily undefined")
    return same / count


def shortest_path_histogram(g: Graph) -> dict:
    """Tally shortest-path distance for every unordered same-label node pair.

    Unreachable pairs land in the ``math.inf`` bucket. Keys are ints (plus
    possibly ``math.inf``), inserted in ascending order.
    """
    if g.labels is None:
        raise ConfigError("shortest_path_histogram requires node labels")
    counts: dict = {}
    for lab in np.unique(g.labels):
        members = np.flatnonzero(g.labels == lab)
        if len(members) < 2:
            continue
        dist = _sp_shortest_path(g.adj, method="D", unweighted=True,
                                 directed=False, indices=members)
        sub = dist[:, members]
        iu, ju = np.triu_indices(len(members), k=1)
        for d in sub[iu, ju]:
            key = math.inf if math.isinf(d) else int(d)
            counts[key] = counts.get(key, 0) + 1
    finite = sorted(k for k in counts if k is not math.inf)
    ordered = {k: counts[k] for k in finite}
    if math.inf in counts:
        ordered[math.inf] = counts[math.inf]
    return ordered
