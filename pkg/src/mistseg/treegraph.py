"""Pixel-grid graphs, minimum spanning trees, and tree-affinity filtering.

A 4-connected grid graph is built over an image, with edge weights equal to
the squared Euclidean color/feature difference of adjacent pixels. Kruskal's
algorithm extracts the minimum spanning tree, and predictions are smoothed by
a normalized affinity filter where the affinity between two pixels decays
exponentially with their path distance on the tree.

The filter has two implementations: a direct O(N^2) evaluation over explicit
pairwise tree distances (the verification oracle), and a linear-time two-pass
dynamic program that exploits the multiplicative factorization of the
affinity along tree paths (the production path).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .diffcore import Tensor, as_tensor, from_op
from .diffcore.ops import _lerp_matrix
from .scribble import ScribbleMask


class GridEdge(NamedTuple):
    u: int
    v: int
    weight: float


class EdgeList:
    """Edges stored as parallel arrays; indexing yields GridEdge tuples."""

    def __init__(self, u: np.ndarray, v: np.ndarray, weight: np.ndarray):
        self.u = np.asarray(u, dtype=np.int64)
        self.v = np.asarray(v, dtype=np.int64)
        self.weight = np.asarray(weight, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.u)

    def __getitem__(self, i: int) -> GridEdge:
        return GridEdge(int(self.u[i]), int(self.v[i]), float(self.weight[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


@dataclass
class FilterLevel:
    """Affinity bandwidth for one filtering level."""

    kind: str
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


LOW_LEVEL = FilterLevel("low", 0.02)
HIGH_LEVEL = FilterLevel("high", 1.0)


def build_grid_edges(feature_map) -> EdgeList:
    """4-connectivity edges over an (C, H, W) map.

    The weight of an edge is the squared Euclidean distance between the two
    pixels' channel vectors. Returns H*(W-1) + W*(H-1) edges.
    """
    data = feature_map.data if isinstance(feature_map, Tensor) else np.asarray(feature_map)
    if data.ndim == 2:
        data = data[None]
    if data.ndim != 3:
        raise ValueError(f"expected (C, H, W) map, got shape {data.shape}")
    c, h, w = data.shape
    if h * w == 0:
        raise ValueError("empty map")

    index = np.arange(h * w).reshape(h, w)
    horiz_w = ((data[:, :, 1:] - data[:, :, :-1]) ** 2).sum(axis=0).ravel()
    horiz_u = index[:, :-1].ravel()
    horiz_v = index[:, 1:].ravel()
    vert_w = ((data[:, 1:, :] - data[:, :-1, :]) ** 2).sum(axis=0).ravel()
    vert_u = index[:-1, :].ravel()
    vert_v = index[1:, :].ravel()
    return EdgeList(
        np.concatenate([horiz_u, vert_u]),
        np.concatenate([horiz_v, vert_v]),
        np.concatenate([horiz_w, vert_w]),
    )


@dataclass
class SpanningTree:
    """Rooted spanning tree over pixels: parent pointers plus BFS order."""

    root: int
    parent: np.ndarray
    parent_weight: np.ndarray
    bfs_order: np.ndarray
    _levels: list = field(default=None, repr=False, compare=False)
    _dist_to_root: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.parent)

    @property
    def total_weight(self) -> float:
        return float(self.parent_weight.sum())

    def hop_depth(self) -> np.ndarray:
        """Number of edges between each node and the root."""
        depth = np.zeros(self.n, dtype=np.int64)
        # BFS order guarantees parents are assigned before children.
        for node in self.bfs_order[1:]:
            depth[node] = depth[self.parent[node]] + 1
        return depth

    def levels(self) -> list:
        """Node index arrays grouped by hop depth, shallow to deep."""
        if self._levels is None:
            depth = self.hop_depth()
            buckets = [[] for _ in range(int(depth.max()) + 1)]
            for node in self.bfs_order:
                buckets[depth[node]].append(node)
            self._levels = [np.asarray(b, dtype=np.int64) for b in buckets]
        return self._levels

    def dist_to_root(self) -> np.ndarray:
        """Weighted path distance from every node to the root."""
        if self._dist_to_root is None:
            dist = np.zeros(self.n)
            for node in self.bfs_order[1:]:
                dist[node] = dist[self.parent[node]] + self.parent_weight[node]
            self._dist_to_root = dist
        return self._dist_to_root


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        return True


def mst(edges, n_pixels: int) -> SpanningTree:
    """Minimum spanning tree via Kruskal, rooted at pixel 0.

    Ties are broken by (weight, u, v) lexicographic order so the tree is
    deterministic. Raises ValueError if the edges do not connect all pixels.
    """
    if isinstance(edges, EdgeList):
        eu, ev, ew = edges.u, edges.v, edges.weight
    else:
        arr = [(e.u, e.v, e.weight) for e in edges]
        eu = np.array([a[0] for a in arr], dtype=np.int64)
        ev = np.array([a[1] for a in arr], dtype=np.int64)
        ew = np.array([a[2] for a in arr], dtype=np.float64)

    order = np.lexsort((ev, eu, ew))
    uf = _UnionFind(n_pixels)
    chosen_u = np.empty(n_pixels - 1, dtype=np.int64)
    chosen_v = np.empty(n_pixels - 1, dtype=np.int64)
    chosen_w = np.empty(n_pixels - 1)
    count = 0
    eu_s, ev_s, ew_s = eu[order], ev[order], ew[order]
    for i in range(len(eu_s)):
        if count == n_pixels - 1:
            break
        a, b = int(eu_s[i]), int(ev_s[i])
        if uf.union(a, b):
            chosen_u[count] = a
            chosen_v[count] = b
            chosen_w[count] = ew_s[i]
            count += 1
    if count != n_pixels - 1:
        raise ValueError(
            f"disconnected input: only {count} of {n_pixels - 1} tree edges found"
        )

    # Orient edges away from the root with a BFS over the adjacency.
    neighbors = np.concatenate([chosen_v, chosen_u])
    owners = np.concatenate([chosen_u, chosen_v])
    weights2 = np.concatenate([chosen_w, chosen_w])
    sort = np.lexsort((neighbors, owners))
    owners, neighbors, weights2 = owners[sort], neighbors[sort], weights2[sort]
    starts = np.searchsorted(owners, np.arange(n_pixels + 1))

    parent = np.full(n_pixels, -1, dtype=np.int64)
    parent_weight = np.zeros(n_pixels)
    bfs_order = np.empty(n_pixels, dtype=np.int64)
    parent[0] = 0
    bfs_order[0] = 0
    head, tail = 0, 1
    while head < tail:
        node = bfs_order[head]
        head += 1
        for j in range(starts[node], starts[node + 1]):
            nb = neighbors[j]
            if parent[nb] == -1:
                parent[nb] = node
                parent_weight[nb] = weights2[j]
                bfs_order[tail] = nb
                tail += 1
    return SpanningTree(0, parent, parent_weight, bfs_order)


def tree_distance(tree: SpanningTree, u: int, v: int) -> float:
    """Sum of edge weights along the unique u-v path."""
    depth = tree.hop_depth()
    a, b = u, v
    total = 0.0
    while depth[a] > depth[b]:
        total += tree.parent_weight[a]
        a = tree.parent[a]
    while depth[b] > depth[a]:
        total += tree.parent_weight[b]
        b = tree.parent[b]
    while a != b:
        total += tree.parent_weight[a] + tree.parent_weight[b]
        a, b = tree.parent[a], tree.parent[b]
    return total


def _decay_factors(tree: SpanningTree, sigma: float) -> np.ndarray:
    factors = np.exp(-tree.parent_weight / sigma)
    factors[tree.root] = 0.0
    return factors


def tree_aggregate(tree: SpanningTree, sigma: float, values: np.ndarray) -> np.ndarray:
    """Unnormalized affinity sum: out[u] = sum_v exp(-D(u,v)/sigma) * values[v].

    Linear-time two-pass dynamic program. The affinity along a path is the
    product of per-edge factors exp(-w/sigma), so subtree sums can be pushed
    to the root (upward pass) and then redistributed (downward pass).
    """
    a = _decay_factors(tree, sigma)
    levels = tree.levels()
    up = np.array(values, dtype=np.float64, copy=True)
    for nodes in reversed(levels[1:]):
        np.add.at(up, tree.parent[nodes], a[nodes] * up[nodes])
    total = up.copy()
    for nodes in levels[1:]:
        an = a[nodes]
        total[nodes] = up[nodes] + an * (total[tree.parent[nodes]] - an * up[nodes])
    return total


def tree_filter(tree: SpanningTree, sigma: float, signal) -> Tensor:
    """Normalized tree-affinity filter, differentiable w.r.t. the signal.

    out[u] = sum_v A(u,v) s[v] / sum_v A(u,v) with A = exp(-D/sigma). The
    output is a convex combination of the input values.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    signal = as_tensor(signal)
    shape = signal.shape
    flat = signal.data.ravel()
    if flat.size != tree.n:
        raise ValueError(f"signal has {flat.size} pixels, tree has {tree.n}")
    norm = tree_aggregate(tree, sigma, np.ones(tree.n))
    out = tree_aggregate(tree, sigma, flat) / norm

    def vjp(g):
        # The filter is linear in s with matrix M[u, v] = A[u, v] / z[u].
        # M^T g = A (g / z) because A is symmetric.
        return (tree_aggregate(tree, sigma, g.ravel() / norm).reshape(shape),)

    return from_op(out.reshape(shape), (signal,), vjp)


def pairwise_tree_distances(tree: SpanningTree) -> np.ndarray:
    """Full (N, N) matrix of path distances. Quadratic memory; small trees only."""
    n = tree.n
    out = np.empty((n, n))
    order, parent_pos, w_pos, tin, tout = _preorder_layout(tree)
    out[0] = tree.dist_to_root()[order]
    for i in range(1, n):
        np.add(out[parent_pos[i]], w_pos[i], out=out[i])
        out[i, tin[i] : tout[i]] -= 2.0 * w_pos[i]
    inverse = np.empty(n, dtype=np.int64)
    inverse[order] = np.arange(n)
    return out[np.ix_(inverse, inverse)]


def _preorder_layout(tree: SpanningTree):
    """Preorder relabeling: children contiguous, enabling interval updates."""
    n = tree.n
    children = [[] for _ in range(n)]
    for node in tree.bfs_order[1:]:
        children[tree.parent[node]].append(node)

    order = np.empty(n, dtype=np.int64)
    tin = np.empty(n, dtype=np.int64)
    stack = [tree.root]
    pos = 0
    while stack:
        node = stack.pop()
        order[pos] = node
        tin[node] = pos
        pos += 1
        stack.extend(reversed(children[node]))

    size = np.ones(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        size[tree.parent[order[i]]] += size[order[i]]

    parent_pos = tin[tree.parent[order]]
    w_pos = tree.parent_weight[order]
    tin_pos = np.arange(n)
    tout_pos = tin_pos + size[order]
    return order, parent_pos, w_pos, tin_pos, tout_pos


def tree_filter_brute(tree: SpanningTree, sigma: float, signal,
                      block: int = 2048) -> np.ndarray:
    """O(N^2) oracle: evaluate the filter from explicit pairwise distances.

    Distances are materialized in column blocks to bound memory; each row is
    derived from its parent's row with a contiguous-interval correction.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    data = signal.data if isinstance(signal, Tensor) else np.asarray(signal)
    shape = data.shape
    flat = data.ravel().astype(np.float64)
    n = tree.n
    if flat.size != n:
        raise ValueError(f"signal has {flat.size} pixels, tree has {n}")

    order, parent_pos, w_pos, tin, tout = _preorder_layout(tree)
    root_row = tree.dist_to_root()[order]
    s_pos = flat[order]

    num = np.zeros(n)
    den = np.zeros(n)
    dist_block = np.empty((n, 1))
    for c0 in range(0, n, block):
        c1 = min(c0 + block, n)
        if dist_block.shape[1] != c1 - c0:
            dist_block = np.empty((n, c1 - c0))
        dist_block[0] = root_row[c0:c1]
        for i in range(1, n):
            np.add(dist_block[parent_pos[i]], w_pos[i], out=dist_block[i])
            lo, hi = max(tin[i], c0), min(tout[i], c1)
            if lo < hi:
                dist_block[i, lo - c0 : hi - c0] -= 2.0 * w_pos[i]
        affinity = np.exp(dist_block / -sigma)
        num += affinity @ s_pos[c0:c1]
        den += affinity.sum(axis=1)

    out = np.empty(n)
    out[order] = num / den
    return out.reshape(shape)


def _resize_bilinear(data: np.ndarray, height: int, width: int) -> np.ndarray:
    """Half-pixel-aligned bilinear resize of a (C, h, w) array."""
    wr = _lerp_matrix(height, data.shape[1])
    wc = _lerp_matrix(width, data.shape[2])
    return np.einsum("ij,cjk,lk->cil", wr, data, wc, optimize=True)


def refine(initial, image, feature, sigma_low: float = 0.02,
           sigma_high: float = 1.0) -> Tensor:
    """Cascaded two-level refinement of a prediction map.

    The prediction is first filtered on the MST of the raw image (small
    bandwidth), then on the MST of the feature map resized to image
    resolution (large bandwidth).
    """
    initial = as_tensor(initial)
    image_data = image.data if isinstance(image, Tensor) else np.asarray(image)
    feat_data = feature.data if isinstance(feature, Tensor) else np.asarray(feature)
    if image_data.ndim == 2:
        image_data = image_data[None]
    if feat_data.ndim == 2:
        feat_data = feat_data[None]
    h, w = image_data.shape[1], image_data.shape[2]
    if initial.data.reshape(-1).size != h * w:
        raise ValueError(
            f"prediction has {initial.size} pixels, image is {h}x{w}"
        )
    if feat_data.shape[1:] != (h, w):
        feat_data = _resize_bilinear(feat_data, h, w)

    low_tree = mst(build_grid_edges(image_data), h * w)
    smoothed = tree_filter(low_tree, sigma_low, initial)
    high_tree = mst(build_grid_edges(feat_data), h * w)
    return tree_filter(high_tree, sigma_high, smoothed)


def tree_energy_loss(initial, refined, mask: ScribbleMask) -> Tensor:
    """Mean L1 gap between initial and refined predictions over unlabeled pixels.

    The refined map is treated as a constant target: no gradient flows
    through it. Returns 0 when every pixel is labeled.
    """
    initial = as_tensor(initial)
    target = refined.detach() if isinstance(refined, Tensor) else Tensor(refined)
    if initial.data.shape != target.data.shape:
        raise ValueError(
            f"shape mismatch: {initial.data.shape} vs {target.data.shape}"
        )
    unlabeled = mask.unlabeled.ravel().astype(np.float64)
    count = unlabeled.sum()
    if count == 0:
        return Tensor(0.0)
    from .diffcore import ops

    gap = ops.abs(ops.sub(initial.reshape(-1), target.reshape(-1)))
    return ops.div(ops.sum(ops.mul(gap, Tensor(unlabeled))), count)
