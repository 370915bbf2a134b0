"""Triangle meshes, surface point clouds, and the spatial queries built on them."""

import numpy as np
from dataclasses import dataclass, field

from .errors import EmptyMesh, KTooLarge

# Faces below this area are kept but flagged and excluded from sampling.
DEGENERATE_AREA = 1e-12


def _triangle_areas(vertices, faces):
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _triangle_normals(vertices, faces):
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    n = np.cross(b - a, c - a)
    length = np.linalg.norm(n, axis=1)
    ok = length > 0
    n[ok] /= length[ok, None]
    return n


@dataclass
class TriMesh:
    """Indexed triangle mesh. Treated as immutable after construction.

    ``vertices`` is (n, 3) float64, ``faces`` (m, 3) int64. ``face_areas`` is
    cached at construction; adjacency (edge-sharing faces) and normals are
    computed lazily and memoized.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_areas: np.ndarray = None
    degenerate: np.ndarray = None
    _adjacency: list = field(default=None, repr=False)
    _normals: np.ndarray = field(default=None, repr=False)
    _centroids: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_arrays(cls, vertices, faces, normalize=False):
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise EmptyMesh("face indices out of range")
        if normalize:
            vertices = normalize_to_unit_cube(vertices)
        areas = _triangle_areas(vertices, faces)
        return cls(vertices, faces, areas, areas <= DEGENERATE_AREA)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def face_normals(self):
        if self._normals is None:
            self._normals = _triangle_normals(self.vertices, self.faces)
        return self._normals

    @property
    def face_centroids(self):
        if self._centroids is None:
            self._centroids = self.vertices[self.faces].mean(axis=1)
        return self._centroids

    @property
    def adjacency(self):
        """Per-face lists of edge-sharing face indices (symmetric)."""
        if self._adjacency is None:
            edges = {}
            for fi, (a, b, c) in enumerate(self.faces):
                for u, v in ((a, b), (b, c), (c, a)):
                    key = (u, v) if u < v else (v, u)
                    edges.setdefault(key, []).append(fi)
            adj = [set() for _ in range(len(self.faces))]
            for flist in edges.values():
                for i in flist:
                    for j in flist:
                        if i != j:
                            adj[i].add(j)
            self._adjacency = [np.array(sorted(s), dtype=np.int64) for s in adj]
        return self._adjacency

    def normalized(self):
        """Copy of the mesh rescaled so its bounding box fits the unit cube at origin."""
        return TriMesh.from_arrays(normalize_to_unit_cube(self.vertices), self.faces)


def normalize_to_unit_cube(vertices):
    """Translate/scale so the bounding box fits [-0.5, 0.5]^3, centered at origin."""
    vertices = np.asarray(vertices, dtype=np.float64)
    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    center = (lo + hi) / 2.0
    extent = (hi - lo).max()
    if extent <= 0:
        return vertices - center
    return (vertices - center) / extent


@dataclass
class SampledCloud:
    """Surface point sample with unit normals and per-point source-face provenance.

    ``source_face`` is None for raw point-cloud input (no originating mesh).
    """

    points: np.ndarray
    normals: np.ndarray
    source_face: np.ndarray = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if self.source_face is not None:
            self.source_face = np.asarray(self.source_face, dtype=np.int64)

    @property
    def n_points(self):
        return len(self.points)


def sample_surface(mesh, n, seed=0):
    """Draw ``n`` area-weighted surface points from a mesh.

    Points are uniform within each chosen face, normals are the flat face
    normals, and each point records its source face. Deterministic per seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = np.where(mesh.degenerate, 0.0, mesh.face_areas)
    total = areas.sum()
    if total <= 0:
        raise EmptyMesh("mesh has no non-degenerate face to sample")
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(len(mesh.faces), size=n, p=areas / total)
    u, v = rng.random(n), rng.random(n)
    su = np.sqrt(u)
    bary = np.stack([1.0 - su, su * (1.0 - v), su * v], axis=1)
    corners = mesh.vertices[mesh.faces[face_idx]]            # (n, 3, 3)
    points = np.einsum("nk,nkd->nd", bary, corners)
    normals = mesh.face_normals[face_idx]
    return SampledCloud(points, normals, face_idx)


def farthest_point_sampling(points, k, seed=0):
    """Greedy farthest point sampling.

    The first index is a seeded uniform draw; each following index maximizes
    the minimum distance to everything already picked, ties broken by lowest
    index. Returns the k selected indices in pick order.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= k <= n:
        raise KTooLarge(f"k={k} out of range for {n} points")
    rng = np.random.default_rng(seed)
    picked = np.empty(k, dtype=np.int64)
    picked[0] = rng.integers(n)
    min_d2 = np.sum((points - points[picked[0]]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(min_d2))   # argmax returns the first (lowest) index on ties
        picked[i] = nxt
        d2 = np.sum((points - points[nxt]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
    return picked


def _knn_brute(points, query, k):
    d2 = np.sum((points - query) ** 2, axis=1)
    order = np.lexsort((np.arange(len(points)), d2))
    return order[:k]


class PointGrid:
    """Uniform hash grid for exact k-nearest-neighbor queries.

    Cell size defaults to roughly twice the expected nearest-neighbor spacing;
    queries expand outward in Chebyshev shells until the k-th best distance is
    provably final, so results match an exhaustive scan exactly (ties broken
    by lowest index).
    """

    def __init__(self, points, cell_size=None):
        self.points = np.asarray(points, dtype=np.float64)
        n = len(self.points)
        if cell_size is None:
            lo = self.points.min(axis=0)
            hi = self.points.max(axis=0)
            vol = float(np.prod(np.maximum(hi - lo, 1e-12)))
            cell_size = 2.0 * (vol / max(n, 1)) ** (1.0 / 3.0)
        self.cell = max(cell_size, 1e-9)
        self.origin = self.points.min(axis=0)
        keys = np.floor((self.points - self.origin) / self.cell).astype(np.int64)
        self.table = {}
        for i, key in enumerate(map(tuple, keys)):
            self.table.setdefault(key, []).append(i)
        self.table = {key: np.array(v, dtype=np.int64) for key, v in self.table.items()}

    def _shell_cells(self, center, radius):
        cx, cy, cz = center
        if radius == 0:
            yield (cx, cy, cz)
            return
        r = radius
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                for dz in range(-r, r + 1):
                    if max(abs(dx), abs(dy), abs(dz)) == r:
                        yield (cx + dx, cy + dy, cz + dz)

    def query(self, q, k):
        q = np.asarray(q, dtype=np.float64)
        center = tuple(np.floor((q - self.origin) / self.cell).astype(np.int64))
        found = []
        radius = 0
        best_kth = np.inf
        while True:
            for cell in self._shell_cells(center, radius):
                idx = self.table.get(cell)
                if idx is not None:
                    found.append(idx)
            if found:
                cand = np.concatenate(found)
                d2 = np.sum((self.points[cand] - q) ** 2, axis=1)
                order = np.lexsort((cand, d2))
                cand, d2 = cand[order], d2[order]
                found = [cand]
                if len(cand) >= k:
                    best_kth = d2[k - 1]
                    # Every point in an unvisited shell lies at least radius·cell
                    # beyond the query's own cell; strict < keeps equal-distance,
                    # lower-index candidates from being cut off.
                    bound = radius * self.cell
                    if best_kth < bound * bound:
                        return cand[:k]
            radius += 1
            if radius > 3 and radius ** 3 > 8 * max(len(self.table), 1):
                # Degenerate spread; finish exhaustively.
                return _knn_brute(self.points, q, k)


def nearest_neighbor(query, reference, k=1):
    """Exact k-nearest points of a cloud to one query point, sorted by distance.

    Ties are broken by lowest index. ``reference`` may be a SampledCloud or a
    raw (n, 3) array.
    """
    points = reference.points if isinstance(reference, SampledCloud) else np.asarray(reference)
    n = len(points)
    if n == 0:
        raise ValueError("reference is empty")
    if k > n:
        raise KTooLarge(f"k={k} exceeds {n} reference points")
    if n <= 2000:
        return _knn_brute(points, np.asarray(query, dtype=np.float64), k)
    return PointGrid(points).query(query, k)


def nearest_neighbor_batch(queries, points, k=1):
    """k-nearest reference indices for many queries; (len(queries), k) int array."""
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    out = np.empty((len(queries), k), dtype=np.int64)
    if len(points) <= 2000:
        for i, q in enumerate(queries):
            out[i] = _knn_brute(points, q, k)
        return out
    grid = PointGrid(points)
    for i, q in enumerate(queries):
        out[i] = grid.query(q, k)
    return out


@dataclass
class VoxelGrid:
    """Occupancy map over [−0.5, 0.5]^3 at an integer resolution per axis."""

    resolution: int
    occupancy: dict

    def cells_of(self, owner):
        return {key for key, owners in self.occupancy.items() if owner in owners}


def voxel_keys(points, resolution):
    """Integer cell of each point: floor((p + 0.5)·resolution), clamped in range."""
    keys = np.floor((np.asarray(points) + 0.5) * resolution).astype(np.int64)
    return np.clip(keys, 0, resolution - 1)


def voxelize(points, resolution, owner_ids=None):
    """Bucket points into a VoxelGrid; each cell stores the ids of its occupants."""
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if owner_ids is None:
        owner_ids = np.arange(len(points))
    owner_ids = np.asarray(owner_ids)
    keys = voxel_keys(points, resolution)
    occ = {}
    for key, owner in zip(map(tuple, keys), owner_ids):
        occ.setdefault(key, set()).add(owner.item() if hasattr(owner, "item") else owner)
    return VoxelGrid(resolution, occ)
