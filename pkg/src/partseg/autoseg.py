"""Fully automatic segmentation: oversampled prompts, mask NMS, voting, flood fill.

Also hosts the two applications built on the same machinery: multi-prompt
segmentation with user-chosen parts, and hierarchical merging of parts by
feature similarity, plus PCA-based feature coloring for visualization.
"""

import numpy as np
from dataclasses import dataclass, field

from .curation import PartAnnotation
from .errors import EmptyCandidate, NoLabeledSeed
from .geometry import SampledCloud, farthest_point_sampling, nearest_neighbor_batch, sample_surface
from .network import extract_features, predict, predict_batch, prepare_cache


@dataclass
class CandidateMask:
    """A binarized predicted mask with its predicted-IoU score and origin prompt."""

    mask: np.ndarray          # (N,) bool, nonempty
    score: float
    prompt_index: int


@dataclass
class AutoSegConfig:
    n_points: int = 16384     # paper-scale default is 100,000
    n_prompts: int = 400
    t_nms: float = 0.9
    k_nearest: int = 5        # flood-fill fallback neighbors
    threshold: float = 0.5
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        assert 0 < self.t_nms <= 1
        assert self.n_prompts <= self.n_points


def mask_iou(a, b):
    """|a ∧ b| / |a ∨ b|; defined as 1.0 when both masks are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum()) / float(union)


def nms_masks(candidates, t_nms=0.9):
    """Greedy mask NMS by descending score (ties: lower prompt index first).

    Pops the best-scored candidate, drops every remaining mask whose IoU with
    it exceeds ``t_nms``, and repeats; the survivors are pairwise <= t_nms.
    """
    if not candidates:
        return []
    order = sorted(range(len(candidates)),
                   key=lambda i: (-candidates[i].score, candidates[i].prompt_index))
    masks = np.stack([candidates[i].mask for i in order]).astype(np.float64)
    sizes = masks.sum(axis=1)
    alive = np.ones(len(order), dtype=bool)
    kept = []
    for i in range(len(order)):
        if not alive[i]:
            continue
        kept.append(order[i])
        alive[i] = False
        rest = np.flatnonzero(alive)
        if len(rest) == 0:
            break
        inter = masks[rest] @ masks[i]
        union = sizes[rest] + sizes[i] - inter
        iou = np.where(union > 0, inter / np.maximum(union, 1e-30), 1.0)
        alive[rest[iou > t_nms]] = False
    return [candidates[i] for i in kept]


def vote_faces(cloud, point_labels, n_faces):
    """Majority label of each face's samples (ties: lowest label); 0 = unlabeled."""
    point_labels = np.asarray(point_labels, dtype=np.int64)
    assert cloud.source_face is not None and len(point_labels) == cloud.n_points
    face_labels = np.zeros(n_faces, dtype=np.int64)
    labeled = point_labels > 0
    faces = cloud.source_face[labeled]
    labels = point_labels[labeled]
    if len(faces) == 0:
        return face_labels
    max_label = labels.max()
    counts = np.zeros((n_faces, max_label + 1), dtype=np.int64)
    np.add.at(counts, (faces, labels), 1)
    has_any = counts.sum(axis=1) > 0
    # argmax over labels 1..max; ties resolve to the lowest label.
    face_labels[has_any] = np.argmax(counts[has_any, 1:], axis=1) + 1
    return face_labels


def flood_fill(mesh, face_labels, k_nearest=5):
    """Propagate labels to unlabeled faces until every face is labeled.

    Each sweep is synchronous: every unlabeled face with labeled edge-sharing
    neighbors takes their most frequent label (ties: lowest). When a sweep
    makes no progress (disconnected patches or missing adjacency), remaining
    faces take the majority label of their ``k_nearest`` labeled faces by
    centroid distance. Labeled faces are never changed.
    """
    labels = np.asarray(face_labels, dtype=np.int64).copy()
    if not (labels > 0).any():
        raise NoLabeledSeed("flood fill needs at least one labeled face")
    adjacency = mesh.adjacency
    centroids = mesh.face_centroids
    while True:
        todo = np.flatnonzero(labels == 0)
        if len(todo) == 0:
            return labels
        updates = {}
        for fi in todo:
            neighbor_labels = labels[adjacency[fi]] if len(adjacency[fi]) else np.empty(0, np.int64)
            neighbor_labels = neighbor_labels[neighbor_labels > 0]
            if len(neighbor_labels):
                counts = np.bincount(neighbor_labels)
                updates[fi] = int(np.argmax(counts))
        if updates:
            for fi, lab in updates.items():
                labels[fi] = lab
            continue
        # Stalled: fall back to nearest labeled faces by centroid.
        labeled_idx = np.flatnonzero(labels > 0)
        k = min(k_nearest, len(labeled_idx))
        nn = nearest_neighbor_batch(centroids[todo], centroids[labeled_idx], k=k)
        for row, fi in enumerate(todo):
            near = labels[labeled_idx[nn[row]]]
            labels[fi] = int(np.argmax(np.bincount(near)))
        return labels


def _relabel_contiguous(labels):
    """Map positive labels to 1..n by decreasing population (ties: lower original)."""
    labels = np.asarray(labels, dtype=np.int64)
    present, counts = np.unique(labels[labels > 0], return_counts=True)
    order = sorted(range(len(present)), key=lambda i: (-counts[i], present[i]))
    remap = np.zeros(labels.max() + 1, dtype=np.int64)
    for new, i in enumerate(order):
        remap[present[i]] = new + 1
    out = labels.copy()
    out[labels > 0] = remap[labels[labels > 0]]
    return out


def _face_annotation(mesh, face_labels):
    face_labels = _relabel_contiguous(face_labels)
    n = face_labels.max()
    areas = np.array([mesh.face_areas[face_labels == k].sum() for k in range(1, n + 1)])
    return PartAnnotation(face_labels, areas / areas.sum())


def _point_annotation(point_labels):
    point_labels = _relabel_contiguous(point_labels)
    n = point_labels.max()
    counts = np.array([(point_labels == k).sum() for k in range(1, n + 1)], dtype=np.float64)
    return PartAnnotation(point_labels, counts / counts.sum())


def _fill_points(points, point_labels, k_nearest=5):
    """Label leftover points from their k nearest labeled points (majority)."""
    labels = point_labels.copy()
    todo = np.flatnonzero(labels == 0)
    if len(todo) == 0:
        return labels
    labeled_idx = np.flatnonzero(labels > 0)
    if len(labeled_idx) == 0:
        raise NoLabeledSeed("no labeled point to fill from")
    k = min(k_nearest, len(labeled_idx))
    nn = nearest_neighbor_batch(points[todo], points[labeled_idx], k=k)
    for row, pi in enumerate(todo):
        near = labels[labeled_idx[nn[row]]]
        labels[pi] = int(np.argmax(np.bincount(near)))
    return labels


def _claim_points(retained, n_points):
    """Assign points to retained masks; multiply-claimed points go to the higher score."""
    point_labels = np.zeros(n_points, dtype=np.int64)
    ranked = sorted(range(len(retained)),
                    key=lambda i: (-retained[i].score, retained[i].prompt_index))
    for label_rank, i in enumerate(ranked):
        free = retained[i].mask & (point_labels == 0)
        point_labels[free] = label_rank + 1
    return point_labels


def auto_segment(geometry, weights, config=None, cloud=None, features=None, cache=None):
    """Segment a mesh (or bare cloud) into parts with no human input.

    Sample the surface, oversample prompts by FPS, predict one best mask per
    prompt, suppress duplicates with NMS, vote point labels onto faces, and
    flood-fill to a total partition. For bare-cloud input the output
    annotation is per point. ``cloud``/``features``/``cache`` may be supplied
    to reuse precomputed state (the service does this).
    """
    config = config or AutoSegConfig()
    is_mesh = not isinstance(geometry, SampledCloud)
    if cloud is None:
        cloud = sample_surface(geometry, config.n_points, seed=config.seed) if is_mesh else geometry
    if features is None:
        features = extract_features(cloud, weights, dtype=np.dtype(config.dtype))
    if cache is None:
        cache = prepare_cache(features, cloud, weights, dtype=np.dtype(config.dtype))

    n_prompts = min(config.n_prompts, cloud.n_points)
    prompt_idx = farthest_point_sampling(cloud.points, n_prompts, seed=config.seed)
    prompts = cloud.points[prompt_idx]
    ious, heads, masks = predict_batch(features, cloud, prompts, weights, cache=cache,
                                       threshold=config.threshold)
    best = ious[np.arange(len(prompts)), heads]
    candidates = [CandidateMask(masks[i], float(best[i]), i)
                  for i in range(len(prompts)) if masks[i].any()]
    if not candidates:
        raise NoLabeledSeed("every candidate mask came back empty")
    retained = nms_masks(candidates, config.t_nms)
    point_labels = _claim_points(retained, cloud.n_points)

    if not is_mesh:
        return _point_annotation(_fill_points(cloud.points, point_labels, config.k_nearest))
    face_labels = vote_faces(cloud, point_labels, geometry.n_faces)
    face_labels = flood_fill(geometry, face_labels, k_nearest=config.k_nearest)
    return _face_annotation(geometry, face_labels)


@dataclass
class MultiPromptStats:
    """Pre-assignment quality of the chosen per-prompt masks."""

    coverage: float               # |union| / N_p
    max_pair_overlap: float       # max over prompt pairs of |m_i & m_j| / N_p
    levels: list                  # chosen size rank per prompt


def multi_prompt_segment(geometry, weights, prompts, config=None,
                         cloud=None, features=None, cache=None,
                         coverage_target=0.995, with_stats=False):
    """Segment into exactly one part per user prompt.

    Each prompt contributes its three stage-2 masks ordered by size; starting
    from the smallest per prompt, the single upgrade with the best
    (new coverage − new overlap) gain is applied while positive and coverage
    is below the target. Overlapping points go to the smaller mask, leftovers
    are filled, and for meshes the result is voted + flood-filled, forcing
    every prompt to keep at least one face. ``with_stats`` also returns the
    pre-assignment coverage/overlap of the chosen masks.
    """
    config = config or AutoSegConfig()
    prompts = np.asarray(prompts, dtype=np.float64).reshape(-1, 3)
    k = len(prompts)
    if k < 1:
        raise ValueError("need at least one prompt")
    is_mesh = not isinstance(geometry, SampledCloud)
    if cloud is None:
        cloud = sample_surface(geometry, config.n_points, seed=config.seed) if is_mesh else geometry
    if features is None:
        features = extract_features(cloud, weights, dtype=np.dtype(config.dtype))
    if cache is None:
        cache = prepare_cache(features, cloud, weights, dtype=np.dtype(config.dtype))

    options = []      # per prompt: list of masks ordered by ascending size
    for j in range(k):
        triple = predict(features, cloud, prompts[j], weights, cache=cache)
        masks = [m > config.threshold for m in triple.stage2]
        masks = [m for m in masks if m.any()]
        if not masks:
            raise EmptyCandidate(f"prompt {j} produced no nonempty mask")
        masks.sort(key=lambda m: int(m.sum()))
        options.append(masks)

    level = [0] * k
    n = cloud.n_points

    def claim_counts(levels):
        counts = np.zeros(n, dtype=np.int64)
        for j in range(k):
            counts += options[j][levels[j]]
        return counts

    counts = claim_counts(level)
    covered = int((counts > 0).sum())
    overlap = int(counts.sum()) - covered
    while covered < coverage_target * n:
        best_gain, best_j = 0, -1
        for j in range(k):
            if level[j] + 1 >= len(options[j]):
                continue
            trial = list(level)
            trial[j] += 1
            c = claim_counts(trial)
            cov = int((c > 0).sum())
            ov = int(c.sum()) - cov
            gain = (cov - covered) - (ov - overlap)
            if gain > best_gain:
                best_gain, best_j = gain, j
        if best_j < 0:
            break
        level[best_j] += 1
        counts = claim_counts(level)
        covered = int((counts > 0).sum())
        overlap = int(counts.sum()) - covered

    final = [options[j][level[j]] for j in range(k)]
    if with_stats:
        union = np.zeros(n, dtype=bool)
        for m in final:
            union |= m
        max_overlap = 0.0
        for i in range(k):
            for j in range(i + 1, k):
                max_overlap = max(max_overlap, float((final[i] & final[j]).sum()) / n)
        stats = MultiPromptStats(float(union.sum()) / n, max_overlap, list(level))
    sizes = [int(m.sum()) for m in final]
    point_labels = np.zeros(n, dtype=np.int64)
    # Smaller masks claim first so overlaps resolve toward the smaller part.
    for j in sorted(range(k), key=lambda j: (sizes[j], j)):
        free = final[j] & (point_labels == 0)
        point_labels[free] = j + 1

    if not is_mesh:
        point_labels = _fill_points(cloud.points, point_labels, config.k_nearest)
        for j in range(k):
            if not (point_labels == j + 1).any():
                nearest = int(np.argmin(np.linalg.norm(cloud.points - prompts[j], axis=1)))
                point_labels[nearest] = j + 1
        counts = np.array([(point_labels == j + 1).sum() for j in range(k)], dtype=np.float64)
        annotation = PartAnnotation(point_labels, counts / counts.sum())
        return (annotation, stats) if with_stats else annotation

    face_labels = vote_faces(cloud, point_labels, geometry.n_faces)
    # Pin a face near each prompt that lost every face in voting, preferring
    # unlabeled faces and never stealing a label's last face.
    centroids = geometry.face_centroids
    for j in range(k):
        if (face_labels == j + 1).any():
            continue
        dists = np.linalg.norm(centroids - prompts[j], axis=1)
        counts = np.bincount(face_labels, minlength=k + 2)
        penalty = np.where(face_labels == 0, 0.0,
                           np.where(counts[face_labels] > 1, 1.0, np.inf))
        fi = int(np.argmin(dists + penalty * 1e6))
        face_labels[fi] = j + 1
    face_labels = flood_fill(geometry, face_labels, k_nearest=config.k_nearest)
    areas = np.array([geometry.face_areas[face_labels == j + 1].sum() for j in range(k)])
    annotation = PartAnnotation(face_labels, areas / areas.sum())
    return (annotation, stats) if with_stats else annotation


@dataclass
class MergeTree:
    """Agglomerative merge sequence over part ids 1..n (average linkage)."""

    n_parts: int
    merges: list              # (part_a, part_b, distance) with part ids at merge time

    def label_map(self, level):
        """Old label -> new contiguous label after ``level`` merges."""
        if not 0 <= level <= len(self.merges):
            raise ValueError(f"level must be in [0, {len(self.merges)}]")
        group = {i: {i} for i in range(1, self.n_parts + 1)}
        for a, b, _ in self.merges[:level]:
            group[a] |= group.pop(b)
        mapping = {}
        for new, root in enumerate(sorted(group, key=lambda r: min(group[r]))):
            for old in group[root]:
                mapping[old] = new + 1
        return mapping

    def cut(self, level, labels):
        mapping = self.label_map(level)
        lut = np.zeros(max(mapping) + 1, dtype=np.int64)
        for old, new in mapping.items():
            lut[old] = new
        return lut[np.asarray(labels, dtype=np.int64)]


def hierarchical_segment(cloud, f_p, point_labels):
    """Average-linkage agglomerative clustering of parts by mean feature.

    Returns a MergeTree whose ``cut(level, labels)`` yields the annotation
    after ``level`` merges (level 0 is the input unchanged).
    """
    point_labels = np.asarray(point_labels, dtype=np.int64)
    ids = np.unique(point_labels[point_labels > 0])
    n = len(ids)
    assert n >= 2, "need at least two parts to build a hierarchy"
    feats = np.stack([f_p[point_labels == pid].mean(axis=0) for pid in ids])
    # Pairwise distances between the per-part mean features.
    d = np.linalg.norm(feats[:, None, :] - feats[None, :, :], axis=2)

    clusters = {int(pid): [i] for i, pid in enumerate(ids)}     # part id -> member rows
    merges = []
    while len(clusters) > 1:
        keys = sorted(clusters)
        best = None
        for ai, a in enumerate(keys):
            for b in keys[ai + 1:]:
                dist = d[np.ix_(clusters[a], clusters[b])].mean()
                if best is None or dist < best[0]:
                    best = (dist, a, b)
        dist, a, b = best
        clusters[a] = clusters[a] + clusters.pop(b)
        merges.append((a, b, float(dist)))
    return MergeTree(int(ids.max()), merges)


def feature_colors(f_p):
    """Project features to their top 3 principal components scaled to RGB.

    Deterministic: component signs are fixed, identical features map to
    identical colors, and zero-variance input maps to uniform gray.
    """
    f_p = np.asarray(f_p, dtype=np.float64)
    assert len(f_p) >= 3, "need at least 3 points"
    centered = f_p - f_p.mean(axis=0)
    if not np.any(np.abs(centered) > 1e-12):
        return np.full((len(f_p), 3), 0.5)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:3]
    # Fix each component's sign by its largest-magnitude coefficient.
    for i in range(len(comps)):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i][j] < 0:
            comps[i] = -comps[i]
    proj = centered @ comps.T
    if proj.shape[1] < 3:
        proj = np.pad(proj, ((0, 0), (0, 3 - proj.shape[1])))
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    span = hi - lo
    out = np.full_like(proj, 0.5)
    ok = span > 1e-12
    out[:, ok] = (proj[:, ok] - lo[ok]) / span[ok]
    return out
