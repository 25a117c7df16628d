"""Keypoint extraction and ordering from a reliability-pruned depth field.

Reliable pixels are clustered with BFS (Manhattan radius 2, so clusters can
bridge small gaps), cluster centroids become 3D keypoints, clusters are
solidified to span the full structure width, and an adjacency graph built by
constrained BFS over the segmentation links neighboring keypoints. A
nearest-neighbor DFS over that graph produces the topological ordering;
terminal keypoints are finally extended to the physical thread ends.

All traversals use fixed seed and neighbor orders, so results are fully
deterministic for identical inputs.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ReconstructionError
from .stereo import DepthField, MatchParams

# Neighbor offsets (dy, dx), sorted for deterministic traversal order.
OFFSETS_MANHATTAN2 = tuple(
    sorted(
        (dy, dx)
        for dy in range(-2, 3)
        for dx in range(-2, 3)
        if 0 < abs(dy) + abs(dx) <= 2
    )
)
OFFSETS_8 = tuple(
    sorted((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0))
)


@dataclass(frozen=True)
class ClusterParams:
    """Clustering, solidification and endpoint-extension parameters.

    Attributes:
        max_cluster_size: BFS growth stops at this many pixels.
        min_cluster_size: Smaller explored sets are discarded.
        neighbor_manhattan_radius: Cluster-growth neighborhood radius
            (fixed at 2; exposed for completeness).
        solidify_radius: Chebyshev radius of segmented pixels absorbed
            around each cluster.
        endpoint_unreached_min: Minimum count of tail pixels (unreachable
            from any neighboring cluster) that triggers endpoint extension.
    """

    max_cluster_size: int = 50
    min_cluster_size: int = 5
    neighbor_manhattan_radius: int = 2
    solidify_radius: int = 2
    endpoint_unreached_min: int = 10

    def __post_init__(self):
        if not self.max_cluster_size >= self.min_cluster_size >= 1:
            raise ValueError("need max_cluster_size >= min_cluster_size >= 1")


@dataclass
class Cluster:
    """A cluster of reliable pixels with its 3D points and centroid.

    ``pixels`` may grow during solidification; ``points3d`` and the centroid
    always refer to the reliable core so keypoints stay anchored to
    trustworthy depth.
    """

    id: int
    pixels: set[tuple[int, int]]  # (x, y)
    points3d: np.ndarray  # (n, 3): pixel x, pixel y, depth
    centroid: np.ndarray  # (3,)


@dataclass
class KeypointChain:
    """Ordered keypoints with their clusters and adjacency graph.

    ``order`` lists cluster ids along the thread; keypoint i of the chain is
    ``clusters`` entry with id ``order[i]``. Ordering indices (1-based in
    dumps) are positions in this list.
    """

    clusters: list[Cluster]
    adjacency: dict[int, set[int]]
    order: list[int]

    def cluster_by_id(self, cluster_id: int) -> Cluster:
        for c in self.clusters:
            if c.id == cluster_id:
                return c
        raise KeyError(cluster_id)

    @property
    def ordered_keypoints(self) -> np.ndarray:
        """Keypoint positions (x, y, depth) in chain order, shape (k, 3)."""
        by_id = {c.id: c.centroid for c in self.clusters}
        return np.array([by_id[i] for i in self.order])

    def to_debug_dict(self) -> dict:
        clusters = {
            str(c.id): [[int(x), int(y)] for x, y in sorted(c.pixels, key=lambda p: (p[1], p[0]))]
            for c in self.clusters
        }
        by_id = {c.id: c.centroid for c in self.clusters}
        keypoints = [
            [float(by_id[cid][0]), float(by_id[cid][1]), float(by_id[cid][2]), rank + 1]
            for rank, cid in enumerate(self.order)
        ]
        return {"clusters": clusters, "keypoints": keypoints}


def prune_reliable(field: DepthField, params: MatchParams) -> np.ndarray:
    """Valid pixels whose reliability strictly exceeds the threshold.

    Returns:
        Boolean (H, W) array of reliable pixels.

    Raises:
        ReconstructionError: No pixel passes the threshold.
    """
    reliable = field.valid & (field.reliability > params.reliability_threshold)
    if not reliable.any():
        raise ReconstructionError("no reliable pixels")
    return reliable


def find_clusters(
    reliable: np.ndarray, field: DepthField, params: ClusterParams
) -> list[Cluster]:
    """Group reliable pixels into clusters by bounded BFS.

    Seeds are scanned in row-major order; neighbors are reliable pixels
    within Manhattan distance ``neighbor_manhattan_radius``. Growth stops
    when the explored set reaches ``max_cluster_size``; explored sets below
    ``min_cluster_size`` are dropped (their pixels stay consumed).

    Raises:
        ReconstructionError: No cluster survives the size filter.
    """
    h, w = reliable.shape
    offsets = OFFSETS_MANHATTAN2
    if params.neighbor_manhattan_radius != 2:
        r = params.neighbor_manhattan_radius
        offsets = tuple(
            sorted(
                (dy, dx)
                for dy in range(-r, r + 1)
                for dx in range(-r, r + 1)
                if 0 < abs(dy) + abs(dx) <= r
            )
        )

    consumed = np.zeros_like(reliable)
    clusters: list[Cluster] = []
    seed_ys, seed_xs = np.nonzero(reliable)
    for sy, sx in zip(seed_ys, seed_xs):
        if consumed[sy, sx]:
            continue
        members: list[tuple[int, int]] = [(sx, sy)]
        consumed[sy, sx] = True
        queue: deque[tuple[int, int]] = deque([(sx, sy)])
        while queue and len(members) < params.max_cluster_size:
            x, y = queue.popleft()
            for dy, dx in offsets:
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and reliable[ny, nx] and not consumed[ny, nx]:
                    consumed[ny, nx] = True
                    members.append((nx, ny))
                    if len(members) >= params.max_cluster_size:
                        break
                    queue.append((nx, ny))
        if len(members) < params.min_cluster_size:
            continue
        pts = np.array([[x, y, field.depth[y, x]] for x, y in members], dtype=float)
        clusters.append(
            Cluster(
                id=len(clusters),
                pixels=set(members),
                points3d=pts,
                centroid=pts.mean(axis=0),
            )
        )
    if not clusters:
        raise ReconstructionError("no keypoints")
    return clusters


def label_image(clusters: list[Cluster], shape: tuple[int, int]) -> np.ndarray:
    """Cluster-id image (-1 where unclustered)."""
    labels = np.full(shape, -1, dtype=np.int32)
    for c in clusters:
        for x, y in c.pixels:
            labels[y, x] = c.id
    return labels


def solidify(
    clusters: list[Cluster], mask: np.ndarray, params: ClusterParams
) -> list[Cluster]:
    """Grow each cluster over nearby segmented pixels so it spans the thread.

    Every unclaimed mask pixel within Chebyshev distance ``solidify_radius``
    of a cluster's original pixels is absorbed; contested pixels go to the
    smaller cluster id. Centroids and 3D points are not touched.
    """
    h, w = mask.shape
    labels = label_image(clusters, (h, w))
    r = params.solidify_radius
    for c in clusters:  # ascending id: earlier clusters win contested pixels
        absorbed: list[tuple[int, int]] = []
        for x, y in sorted(c.pixels, key=lambda p: (p[1], p[0])):
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    ny, nx = y + dy, x + dx
                    if (
                        0 <= ny < h
                        and 0 <= nx < w
                        and mask[ny, nx]
                        and labels[ny, nx] == -1
                    ):
                        labels[ny, nx] = c.id
                        absorbed.append((nx, ny))
        c.pixels.update(absorbed)
    return clusters


def _bfs_from_cluster(
    cluster: Cluster,
    labels: np.ndarray,
    mask: np.ndarray,
    traverse_own: bool,
) -> tuple[dict[tuple[int, int], int], set[int]]:
    """BFS over the segmentation starting from all pixels of a cluster.

    Unclustered pixels are traversed; pixels of foreign clusters are never
    enqueued but their cluster ids are recorded as touched. With
    ``traverse_own`` the cluster's own pixels are traversed too (adjacency
    construction); without it only the seeds are used (reachability of the
    unclustered surroundings).

    Returns:
        (reached, touched): unclustered pixel -> BFS depth, and the set of
        foreign cluster ids encountered as neighbors.
    """
    h, w = mask.shape
    own = cluster.id
    seeds = sorted(cluster.pixels, key=lambda p: (p[1], p[0]))
    seen = np.zeros_like(mask)
    queue: deque[tuple[int, int, int]] = deque()
    for x, y in seeds:
        seen[y, x] = True
        queue.append((x, y, 0))
    reached: dict[tuple[int, int], int] = {}
    touched: set[int] = set()
    while queue:
        x, y, depth = queue.popleft()
        for dy, dx in OFFSETS_8:
            ny, nx = y + dy, x + dx
            if not (0 <= ny < h and 0 <= nx < w) or not mask[ny, nx] or seen[ny, nx]:
                continue
            lab = labels[ny, nx]
            if lab == own:
                if traverse_own:
                    seen[ny, nx] = True
                    queue.append((nx, ny, depth + 1))
                continue
            if lab != -1:
                touched.add(int(lab))
                continue
            seen[ny, nx] = True
            reached[(nx, ny)] = depth + 1
            queue.append((nx, ny, depth + 1))
    return reached, touched


def build_adjacency(
    clusters: list[Cluster], mask: np.ndarray
) -> dict[int, set[int]]:
    """Adjacency graph over keypoints via constrained BFS on the mask.

    From each cluster, BFS with 8-connected neighbors runs over the
    segmentation without entering other clusters; every foreign cluster
    touched contributes an undirected edge.
    """
    labels = label_image(clusters, mask.shape)
    adjacency: dict[int, set[int]] = {c.id: set() for c in clusters}
    for c in clusters:
        _, touched = _bfs_from_cluster(c, labels, mask, traverse_own=True)
        for other in touched:
            adjacency[c.id].add(other)
            adjacency[other].add(c.id)
    return adjacency


def order_keypoints(
    adjacency: dict[int, set[int]], keypoints: dict[int, np.ndarray]
) -> list[int]:
    """Topological ordering of keypoints by nearest-neighbor DFS.

    Starts at the degree-1 keypoint with the smallest id; at each step moves
    to the unexplored neighbor closest in 3D (ties toward smaller id),
    backtracking when stuck. Edges toward already-explored keypoints are
    ignored, which makes the traversal robust to short undirected cycles.

    Args:
        adjacency: Undirected edges keyed by cluster id.
        keypoints: Cluster id -> (x, y, depth) keypoint position.

    Returns:
        Cluster ids in traversal order.

    Raises:
        ReconstructionError: No degree-1 keypoint exists ("no endpoint
            found") or the graph is disconnected ("fragmented thread").
    """
    ids = sorted(adjacency)
    if not ids:
        raise ReconstructionError("no keypoints")
    # connectivity check
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        for n in adjacency[stack.pop()]:
            if n not in seen:
                seen.add(n)
                stack.append(n)
    if len(seen) != len(ids):
        raise ReconstructionError("fragmented thread")

    endpoints = [i for i in ids if len(adjacency[i]) == 1]
    if not endpoints:
        raise ReconstructionError("no endpoint found")
    start = min(endpoints)

    visited = {start}
    order = [start]
    stack = [start]
    while stack:
        current = stack[-1]
        candidates = [n for n in adjacency[current] if n not in visited]
        if not candidates:
            stack.pop()
            continue
        here = keypoints[current]
        nxt = min(
            candidates,
            key=lambda n: (float(np.linalg.norm(keypoints[n] - here)), n),
        )
        visited.add(nxt)
        order.append(nxt)
        stack.append(nxt)
    return order


def extend_endpoints(
    chain: KeypointChain,
    mask: np.ndarray,
    field: DepthField,
    params: ClusterParams,
) -> KeypointChain:
    """Extend the chain to the physical thread ends.

    For each terminal keypoint, the unclustered segmented pixels reachable
    from its cluster are compared against those reachable from neighboring
    clusters; if at least ``endpoint_unreached_min`` pixels belong only to
    the terminal region, the farthest one (image-plane distance) becomes a
    new keypoint at the terminal keypoint's depth.
    """
    clusters = chain.clusters
    adjacency = {k: set(v) for k, v in chain.adjacency.items()}
    order = list(chain.order)
    labels = label_image(clusters, mask.shape)
    next_id = max(c.id for c in clusters) + 1

    for terminal, prepend in ((order[0], True), (order[-1], False)):
        cluster = next(c for c in clusters if c.id == terminal)
        reached, _ = _bfs_from_cluster(cluster, labels, mask, traverse_own=False)
        neighbor_reach: set[tuple[int, int]] = set()
        for nbr in adjacency[terminal]:
            nbr_cluster = next(c for c in clusters if c.id == nbr)
            r, _ = _bfs_from_cluster(nbr_cluster, labels, mask, traverse_own=False)
            neighbor_reach.update(r)
        tail = [p for p in reached if p not in neighbor_reach]
        if len(tail) < params.endpoint_unreached_min:
            continue
        kx, ky, kz = cluster.centroid
        tip = min(tail, key=lambda p: (-((p[0] - kx) ** 2 + (p[1] - ky) ** 2), p[1], p[0]))
        point = np.array([[float(tip[0]), float(tip[1]), float(kz)]])
        new = Cluster(id=next_id, pixels={tip}, points3d=point, centroid=point[0])
        clusters = clusters + [new]
        labels[tip[1], tip[0]] = next_id
        adjacency[next_id] = {terminal}
        adjacency[terminal] = adjacency[terminal] | {next_id}
        if prepend:
            order = [next_id] + order
        else:
            order = order + [next_id]
        next_id += 1

    return KeypointChain(clusters=clusters, adjacency=adjacency, order=order)


def build_chain(
    field: DepthField, match_params: MatchParams, params: ClusterParams
) -> KeypointChain:
    """Full keypoint stage: prune, cluster, solidify, order, extend."""
    reliable = prune_reliable(field, match_params)
    clusters = find_clusters(reliable, field, params)
    clusters = solidify(clusters, field.mask, params)
    adjacency = build_adjacency(clusters, field.mask)
    keypoints = {c.id: c.centroid for c in clusters}
    order = order_keypoints(adjacency, keypoints)
    chain = KeypointChain(clusters=clusters, adjacency=adjacency, order=order)
    return extend_endpoints(chain, field.mask, field, params)
