"""Decompose artist meshes into parts, merge slivers, filter objects, transfer labels.

Parts start as vertex-sharing connected components. Adjacency between parts is
decided by voxel co-occupancy of densely sampled part surfaces; parts smaller
than a threshold are merged bottom-up into their largest neighbor; objects with
unusable part structure are rejected with a reason.
"""

import json

import numpy as np
from dataclasses import dataclass

from .geometry import SampledCloud, nearest_neighbor_batch, voxel_keys

REJECT_REASONS = ("too_few_parts", "too_many_parts", "dominant_part", "tiny_part_mass", "ok")


@dataclass
class PartAnnotation:
    """Per-face (or per-point) part labels 1..n_parts plus area fractions.

    ``labels`` partitions whatever it indexes: every face/point carries exactly
    one label. ``part_areas[k]`` is the surface-area fraction of part k+1; the
    fractions sum to 1.
    """

    labels: np.ndarray
    part_areas: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.part_areas = np.asarray(self.part_areas, dtype=np.float64)

    @property
    def n_parts(self):
        return len(self.part_areas)

    def validate(self):
        assert self.labels.min() >= 1 and self.labels.max() <= self.n_parts
        assert set(np.unique(self.labels)) == set(range(1, self.n_parts + 1))
        assert abs(self.part_areas.sum() - 1.0) <= 1e-9
        assert (self.part_areas >= 0).all()

    def to_json(self):
        return {
            "n_parts": int(self.n_parts),
            "face_labels": self.labels.tolist(),
            "part_areas": self.part_areas.tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(np.array(obj["face_labels"]), np.array(obj["part_areas"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class PartGraph:
    """Part ids with area fractions and a symmetric adjacency edge set."""

    areas: dict
    edges: set

    def neighbors(self, part):
        out = set()
        for a, b in self.edges:
            if a == part:
                out.add(b)
            elif b == part:
                out.add(a)
        return out


@dataclass
class CurationReport:
    verdict: str              # accepted | rejected
    reason: str               # one of REJECT_REASONS
    n_parts: int
    max_area_fraction: float
    tiny_part_mass: float

    def to_json(self):
        return {
            "verdict": self.verdict,
            "reason": self.reason,
            "stats": {
                "n_parts": self.n_parts,
                "max_area_fraction": self.max_area_fraction,
                "tiny_part_mass": self.tiny_part_mass,
            },
        }


def annotation_from_face_parts(mesh, part_of):
    """Relabel arbitrary group ids to 1..N in decreasing total-area order."""
    part_of = np.asarray(part_of)
    groups = {}
    for gid in np.unique(part_of):
        groups[gid] = mesh.face_areas[part_of == gid].sum()
    total = sum(groups.values())
    # Decreasing area; equal areas keep the lower original id first.
    order = sorted(groups, key=lambda g: (-groups[g], g))
    remap = {g: i + 1 for i, g in enumerate(order)}
    labels = np.array([remap[g] for g in part_of], dtype=np.int64)
    areas = np.array([groups[g] / total for g in order])
    return PartAnnotation(labels, areas)


def connected_components(mesh):
    """Label faces by vertex-sharing connected component, largest part first."""
    n = mesh.n_faces
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    vert_face = {}
    for fi, face in enumerate(mesh.faces):
        for v in face:
            vert_face.setdefault(int(v), []).append(fi)
    for flist in vert_face.values():
        for other in flist[1:]:
            union(flist[0], other)

    roots = np.array([find(i) for i in range(n)])
    return annotation_from_face_parts(mesh, roots)


def _sample_part_surfaces(mesh, annotation, spacing):
    """Barycentric-lattice samples of every face, labeled by part.

    The lattice pitch along the longest edge is at most ``spacing`` so that
    touching parts cannot slip between voxel samples. Face vertices and
    centroids are always included.
    """
    pts, owners = [], []
    verts = mesh.vertices
    for fi, face in enumerate(mesh.faces):
        a, b, c = verts[face[0]], verts[face[1]], verts[face[2]]
        label = annotation.labels[fi]
        longest = max(np.linalg.norm(b - a), np.linalg.norm(c - b), np.linalg.norm(a - c))
        m = int(np.ceil(longest / spacing))
        if m <= 1:
            samples = np.array([a, b, c, (a + b + c) / 3.0])
        else:
            ij = [(i, j) for i in range(m + 1) for j in range(m + 1 - i)]
            ij = np.array(ij, dtype=np.float64) / m
            u, v = ij[:, 0], ij[:, 1]
            samples = np.outer(1 - u - v, a) + np.outer(u, b) + np.outer(v, c)
        pts.append(samples)
        owners.append(np.full(len(samples), label))
    return np.concatenate(pts), np.concatenate(owners)


def build_part_adjacency(mesh, annotation, resolution=128):
    """Parts are adjacent iff their surfaces occupy a common voxel cell."""
    cell = 1.0 / resolution
    pts, owners = _sample_part_surfaces(mesh, annotation, spacing=cell / 4.0)
    keys = voxel_keys(pts, resolution)
    cell_parts = {}
    for key, owner in zip(map(tuple, keys), owners):
        cell_parts.setdefault(key, set()).add(int(owner))
    edges = set()
    for parts in cell_parts.values():
        if len(parts) > 1:
            ordered = sorted(parts)
            for i, a in enumerate(ordered):
                for b in ordered[i + 1:]:
                    edges.add((a, b))
    areas = {i + 1: float(annotation.part_areas[i]) for i in range(annotation.n_parts)}
    return PartGraph(areas, edges)


def merge_small_parts(graph, annotation, threshold=0.01):
    """Merge each sub-threshold part into its largest neighbor, smallest first.

    Runs until every part is at or above the threshold or only neighborless
    slivers remain (those are kept). Output labels are contiguous, ordered by
    decreasing area.
    """
    areas = dict(graph.areas)
    neigh = {p: set() for p in areas}
    for a, b in graph.edges:
        neigh[a].add(b)
        neigh[b].add(a)
    merged_into = {}   # old part -> surviving part

    def resolve(p):
        while p in merged_into:
            p = merged_into[p]
        return p

    while True:
        candidates = [p for p, a in areas.items() if a < threshold and neigh[p]]
        if not candidates:
            break
        victim = min(candidates, key=lambda p: (areas[p], p))
        target = max(neigh[victim], key=lambda p: (areas[p], -p))
        areas[target] += areas.pop(victim)
        for other in neigh.pop(victim):
            neigh[other].discard(victim)
            if other != target:
                neigh[other].add(target)
                neigh[target].add(other)
        merged_into[victim] = target

    part_of = np.array([resolve(int(l)) for l in annotation.labels])
    groups = sorted(areas, key=lambda p: (-areas[p], p))
    remap = {p: i + 1 for i, p in enumerate(groups)}
    labels = np.array([remap[p] for p in part_of], dtype=np.int64)
    total = sum(areas.values())
    fractions = np.array([areas[p] / total for p in groups])
    return PartAnnotation(labels, fractions)


def filter_object(annotation, max_parts=50, dominant=0.85, tiny=0.01, tiny_mass=0.10):
    """Accept or reject an annotated object; the first failing rule wins.

    Rejection reasons, in check order: fewer than 2 parts, more than
    ``max_parts`` parts, one part covering more than ``dominant`` of the area,
    or parts below ``tiny`` area jointly exceeding ``tiny_mass``.
    """
    n = annotation.n_parts
    max_frac = float(annotation.part_areas.max()) if n else 0.0
    mass = float(annotation.part_areas[annotation.part_areas < tiny].sum())
    if n < 2:
        reason = "too_few_parts"
    elif n > max_parts:
        reason = "too_many_parts"
    elif max_frac > dominant:
        reason = "dominant_part"
    elif mass > tiny_mass:
        reason = "tiny_part_mass"
    else:
        reason = "ok"
    verdict = "accepted" if reason == "ok" else "rejected"
    return CurationReport(verdict, reason, n, max_frac, mass)


def transfer_labels(wt_cloud, nwt_cloud, nwt_labels):
    """Give every watertight point the label of its nearest non-watertight point."""
    nwt_labels = np.asarray(nwt_labels)
    assert len(nwt_labels) == nwt_cloud.n_points
    idx = nearest_neighbor_batch(wt_cloud.points, nwt_cloud.points, k=1)[:, 0]
    return nwt_labels[idx]


def curate_mesh(mesh, resolution=128, merge_threshold=0.01):
    """Full curation pass: components -> adjacency -> merge -> filter."""
    annotation = connected_components(mesh)
    graph = build_part_adjacency(mesh, annotation, resolution=resolution)
    merged = merge_small_parts(graph, annotation, threshold=merge_threshold)
    report = filter_object(merged)
    return merged, report
