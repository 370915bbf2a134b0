"""Procedural part-labeled shapes: composed primitives at two label granularities.

Each shape is a union of 2-5 posed primitives (sphere / box / cylinder) whose
surfaces genuinely touch or overlap; no boolean is performed, so every face
keeps its primitive's label. Fine labels are per primitive, coarse labels per
connected assembly, giving the multi-head loss genuinely scale-ambiguous
prompts. Everything is deterministic per seed.
"""

import hashlib
import json
import os

import numpy as np
from dataclasses import dataclass, asdict

from .curation import PartAnnotation, annotation_from_face_parts
from .geometry import TriMesh, sample_surface
from .mesh_io import load_mesh, save_mesh_ply
from .training import TrainObject

AREA_RANGE = (0.2, 0.7)     # pre-normalization target surface area per primitive
PRIM_KINDS = ("sphere", "box", "cylinder")


def box_mesh(half_extents):
    hx, hy, hz = half_extents
    v = np.array([[sx * hx, sy * hy, sz * hz]
                  for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    f = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ], dtype=np.int64)
    return v, f


def sphere_mesh(radius, rings=12, segments=18):
    verts = [[0.0, 0.0, radius]]
    for i in range(1, rings):
        phi = np.pi * i / rings
        for j in range(segments):
            theta = 2 * np.pi * j / segments
            verts.append([radius * np.sin(phi) * np.cos(theta),
                          radius * np.sin(phi) * np.sin(theta),
                          radius * np.cos(phi)])
    verts.append([0.0, 0.0, -radius])
    faces = []
    def ring(i, j):
        return 1 + (i - 1) * segments + (j % segments)
    for j in range(segments):
        faces.append([0, ring(1, j), ring(1, j + 1)])
    for i in range(1, rings - 1):
        for j in range(segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    bottom = len(verts) - 1
    for j in range(segments):
        faces.append([bottom, ring(rings - 1, j + 1), ring(rings - 1, j)])
    return np.array(verts), np.array(faces, dtype=np.int64)


def cylinder_mesh(radius, half_height, segments=18):
    top, bottom = [], []
    for j in range(segments):
        theta = 2 * np.pi * j / segments
        x, y = radius * np.cos(theta), radius * np.sin(theta)
        top.append([x, y, half_height])
        bottom.append([x, y, -half_height])
    verts = top + bottom + [[0.0, 0.0, half_height], [0.0, 0.0, -half_height]]
    tc, bc = 2 * segments, 2 * segments + 1
    faces = []
    for j in range(segments):
        a, b = j, (j + 1) % segments
        c, d = segments + j, segments + (j + 1) % segments
        faces.append([a, c, d])
        faces.append([a, d, b])
        faces.append([tc, a, b])
        faces.append([bc, d, c])
    return np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64)


def _random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _make_primitive(kind, area, rng):
    """Primitive mesh with the requested surface area; returns (V, F, r_in, params)."""
    if kind == "sphere":
        r = np.sqrt(area / (4 * np.pi))
        v, f = sphere_mesh(r)
        return v, f, r, {"radius": r}
    if kind == "box":
        u, w = rng.uniform(0.6, 1.4, size=2)
        s = np.sqrt(area / (8 * (u + u * w + w)))
        he = np.array([s, s * u, s * w])
        v, f = box_mesh(he)
        return v, f, float(he.min()), {"half_extents": he.tolist()}
    t = rng.uniform(0.6, 2.0)
    r = np.sqrt(area / (2 * np.pi * (2 * t + 1)))
    v, f = cylinder_mesh(r, r * t)
    return v, f, float(min(r, r * t)), {"radius": r, "half_height": r * t}


@dataclass
class ShapeRecipe:
    seed: int
    primitives: list          # [{kind, params, rotation, translation, group}]
    attachments: list         # [(i, j)] primitive index pairs that touch
    fine_ids: list            # per-primitive fine part id
    coarse_ids: list          # per-primitive assembly group id

    def to_json(self):
        return asdict(self)


def generate_shape(seed):
    """One labeled shape: (TriMesh, fine PartAnnotation, coarse PartAnnotation, recipe)."""
    rng = np.random.default_rng(seed)
    n_prims = int(rng.choice([2, 3, 4, 5], p=[0.3, 0.35, 0.25, 0.1]))
    two_groups = bool(n_prims >= 4 and rng.random() < 0.3)
    if two_groups:
        size1 = int(rng.integers(2, n_prims - 1))
        groups = [0] * size1 + [1] * (n_prims - size1)
    else:
        groups = [0] * n_prims

    prims = []        # (V, F, r_in, kind, params, rotation, translation)
    attachments = []
    group_members = {}
    for i in range(n_prims):
        kind = PRIM_KINDS[int(rng.integers(len(PRIM_KINDS)))]
        area = rng.uniform(*AREA_RANGE)
        v, f, r_in, params = _make_primitive(kind, area, rng)
        rot = _random_rotation(rng)
        v = v @ rot.T
        members = group_members.setdefault(groups[i], [])
        if not members:
            trans = np.zeros(3)
        else:
            target = members[int(rng.integers(len(members)))]
            tv, _, tr_in, _, _, _, tt = prims[target]
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            # Factor <= 1 of the inscribed-radius sum guarantees the surfaces
            # overlap or touch; the high band keeps buried surface area small
            # so part boundaries stay geometrically visible.
            dist = (tr_in + r_in) * rng.uniform(0.93, 1.0)
            trans = tt + direction * dist
            attachments.append((target, i))
        prims.append((v, f, r_in, kind, params, rot, trans))
        members.append(i)

    if two_groups:
        # Push group 1 away from group 0 so their surfaces cannot share a voxel.
        def bounding(group):
            pts = np.concatenate([v + t for v, _, _, _, _, _, t in
                                  (prims[i] for i in group_members[group])])
            center = (pts.min(0) + pts.max(0)) / 2
            radius = np.linalg.norm(pts - center, axis=1).max()
            return center, radius
        c0, r0 = bounding(0)
        c1, r1 = bounding(1)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        offset = c0 + direction * (r0 + r1 + 0.5 * (r0 + r1)) - c1
        prims = [(v, f, ri, k, p, rot, t + offset) if groups[i] == 1 else (v, f, ri, k, p, rot, t)
                 for i, (v, f, ri, k, p, rot, t) in enumerate(prims)]

    verts, faces, face_prim = [], [], []
    offset = 0
    for i, (v, f, _, _, _, _, t) in enumerate(prims):
        verts.append(v + t)
        faces.append(f + offset)
        face_prim.append(np.full(len(f), i))
        offset += len(v)
    mesh = TriMesh.from_arrays(np.concatenate(verts), np.concatenate(faces), normalize=True)
    face_prim = np.concatenate(face_prim)

    fine = annotation_from_face_parts(mesh, face_prim)
    coarse = annotation_from_face_parts(mesh, np.array([groups[p] for p in face_prim]))
    recipe = ShapeRecipe(
        seed=int(seed),
        primitives=[{"kind": k, "params": p, "rotation": rot.tolist(),
                     "translation": t.tolist(), "group": groups[i]}
                    for i, (_, _, _, k, p, rot, t) in enumerate(prims)],
        attachments=[list(a) for a in attachments],
        fine_ids=list(range(1, n_prims + 1)),
        coarse_ids=[g + 1 for g in groups],
    )
    return mesh, fine, coarse, recipe


def _shape_seed(base_seed, index):
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def _hash_rank(seed):
    return hashlib.md5(str(int(seed)).encode()).hexdigest()


@dataclass
class DatasetItem:
    seed: int
    mesh: TriMesh
    fine: PartAnnotation
    coarse: PartAnnotation
    recipe: dict
    split: str                # train | heldout


def generate_dataset(n, seed=0):
    """n labeled shapes with a deterministic 80/20 train/held-out split by seed hash."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seeds = [_shape_seed(seed, i) for i in range(n)]
    order = sorted(range(n), key=lambda i: (_hash_rank(seeds[i]), seeds[i]))
    n_train = int(round(0.8 * n))
    split = {}
    for rank, i in enumerate(order):
        split[i] = "train" if rank < n_train else "heldout"
    items = []
    for i, s in enumerate(seeds):
        mesh, fine, coarse, recipe = generate_shape(s)
        items.append(DatasetItem(s, mesh, fine, coarse, recipe.to_json(), split[i]))
    return items


def save_dataset(items, root):
    os.makedirs(root, exist_ok=True)
    manifest = {"items": []}
    for item in items:
        save_mesh_ply(os.path.join(root, f"{item.seed}.ply"), item.mesh)
        item.fine.save(os.path.join(root, f"{item.seed}.fine.json"))
        item.coarse.save(os.path.join(root, f"{item.seed}.coarse.json"))
        manifest["items"].append({"seed": item.seed, "split": item.split,
                                  "recipe": item.recipe})
    with open(os.path.join(root, "recipe.json"), "w") as fh:
        json.dump(manifest, fh)


def load_dataset(root):
    with open(os.path.join(root, "recipe.json")) as fh:
        manifest = json.load(fh)
    items = []
    for entry in manifest["items"]:
        seed = entry["seed"]
        mesh = load_mesh(os.path.join(root, f"{seed}.ply"))
        fine = PartAnnotation.load(os.path.join(root, f"{seed}.fine.json"))
        coarse = PartAnnotation.load(os.path.join(root, f"{seed}.coarse.json"))
        items.append(DatasetItem(seed, mesh, fine, coarse, entry["recipe"], entry["split"]))
    return items


def to_train_objects(items, n_points=4096, seed=0, resample=True):
    """Sample clouds and lift face labels to points through source-face provenance.

    With ``resample`` every training visit draws a fresh surface sample of the
    mesh; the stored cloud remains the canonical (deterministic) sample used
    for evaluation.
    """
    objects = []
    for i, item in enumerate(items):
        cloud = sample_surface(item.mesh, n_points, seed=_shape_seed(seed, i))
        labels = item.fine.labels[cloud.source_face]
        coarse = item.coarse.labels[cloud.source_face]
        sampler = None
        if resample:
            def sampler(sample_seed, mesh=item.mesh, fine=item.fine, co=item.coarse):
                fresh = sample_surface(mesh, n_points, seed=sample_seed)
                return fresh, fine.labels[fresh.source_face], co.labels[fresh.source_face]
        objects.append(TrainObject(cloud, labels, coarse, name=str(item.seed),
                                   sampler=sampler))
    return objects
