"""Evaluation protocols: full-segmentation mIoU, 10-prompt interactive IoU,
part-count accuracy, and report assembly."""

import json
import time

import numpy as np
from dataclasses import dataclass, field

from .autoseg import AutoSegConfig, auto_segment, mask_iou
from .errors import FaceCountMismatch
from .geometry import sample_surface
from .network import extract_features, predict, prepare_cache

FULL_SEG_PROTOCOL = (
    "full_seg_miou: for each ground-truth part, the maximum area-weighted IoU "
    "over predicted parts, averaged over ground-truth parts; "
    "face_accuracy: each predicted part maps to the ground-truth part sharing "
    "the most area, accuracy is the area fraction mapped correctly."
)


def full_seg_miou(pred, gt, face_areas=None):
    """Mean over gt parts of the best area-weighted IoU with any predicted part.

    ``face_areas`` weights each face (or point); None means uniform weights
    (the point-cloud fallback). Invariant to label permutation on both sides.
    """
    pl = np.asarray(pred.labels if hasattr(pred, "labels") else pred, dtype=np.int64)
    gl = np.asarray(gt.labels if hasattr(gt, "labels") else gt, dtype=np.int64)
    if len(pl) != len(gl):
        raise FaceCountMismatch(f"{len(pl)} vs {len(gl)} faces")
    w = np.ones(len(pl)) if face_areas is None else np.asarray(face_areas, dtype=np.float64)
    best = []
    for g in np.unique(gl):
        in_g = gl == g
        area_g = w[in_g].sum()
        ious = []
        for p in np.unique(pl):
            in_p = pl == p
            inter = w[in_g & in_p].sum()
            union = area_g + w[in_p].sum() - inter
            ious.append(inter / union if union > 0 else 1.0)
        best.append(max(ious))
    return float(np.mean(best))


def face_accuracy(pred, gt, face_areas=None):
    """Area fraction labeled correctly after mapping each predicted part to the
    ground-truth part it overlaps most."""
    pl = np.asarray(pred.labels if hasattr(pred, "labels") else pred, dtype=np.int64)
    gl = np.asarray(gt.labels if hasattr(gt, "labels") else gt, dtype=np.int64)
    if len(pl) != len(gl):
        raise FaceCountMismatch(f"{len(pl)} vs {len(gl)} faces")
    w = np.ones(len(pl)) if face_areas is None else np.asarray(face_areas, dtype=np.float64)
    correct = 0.0
    for p in np.unique(pl):
        in_p = pl == p
        overlaps = {g: w[in_p & (gl == g)].sum() for g in np.unique(gl[in_p])}
        correct += max(overlaps.values())
    return float(correct / w.sum())


def part_count_accuracy(preds, gts):
    """(fraction with exact part-count match, fraction within ±1)."""
    pc = np.array([p.n_parts if hasattr(p, "n_parts") else int(p) for p in preds])
    gc = np.array([g.n_parts if hasattr(g, "n_parts") else int(g) for g in gts])
    assert len(pc) == len(gc) and len(pc) > 0
    diff = np.abs(pc - gc)
    return float((diff == 0).mean()), float((diff <= 1).mean())


@dataclass
class EvalReport:
    mode: str
    per_object: list                  # dicts with at least {"name", "miou"}
    mean: float                       # arithmetic mean of per-object mIoU
    prompt_mean: float = None         # interactive: mean over all prompts
    part_count_exact: float = None
    part_count_within_one: float = None
    face_accuracy_mean: float = None
    skipped_parts: int = 0
    seconds: float = 0.0
    protocol: str = FULL_SEG_PROTOCOL

    def to_json(self):
        return {
            "mode": self.mode,
            "protocol": self.protocol,
            "mean_miou": self.mean,
            "prompt_mean_iou": self.prompt_mean,
            "part_count_exact": self.part_count_exact,
            "part_count_within_one": self.part_count_within_one,
            "face_accuracy_mean": self.face_accuracy_mean,
            "skipped_parts": self.skipped_parts,
            "seconds": self.seconds,
            "per_object": self.per_object,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    def to_text(self):
        cols = sorted({k for row in self.per_object for k in row})
        cols = ["name"] + [c for c in cols if c != "name"]
        widths = {c: max(len(c), *(len(_fmt(row.get(c))) for row in self.per_object))
                  for c in cols}
        lines = ["  ".join(c.ljust(widths[c]) for c in cols)]
        for row in self.per_object:
            lines.append("  ".join(_fmt(row.get(c)).ljust(widths[c]) for c in cols))
        lines.append("")
        lines.append(f"mode={self.mode}  mean_miou={self.mean:.4f}"
                     + (f"  prompt_mean={self.prompt_mean:.4f}" if self.prompt_mean is not None else "")
                     + (f"  part_exact={self.part_count_exact:.3f}"
                        f"  part_within1={self.part_count_within_one:.3f}"
                        if self.part_count_exact is not None else "")
                     + (f"  face_acc={self.face_accuracy_mean:.4f}"
                        if self.face_accuracy_mean is not None else ""))
        lines.append(f"protocol: {self.protocol}")
        return "\n".join(lines)


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def interactive_eval(weights, objects, prompts_per_part=10, seed=0,
                     dtype="float32", predictor=None):
    """The 10-prompt interactive protocol over annotated clouds.

    For every ground-truth part of every object, ``prompts_per_part`` member
    points are drawn as prompts; the predicted mask is the argmax-IoU stage-2
    mask binarized at 0.5. Parts with no points are skipped and counted.
    ``predictor(cloud, features, cache, prompt) -> bool mask`` can replace the
    network (oracle tests).
    """
    rng = np.random.default_rng(seed)
    per_object = []
    all_ious = []
    skipped = 0
    t0 = time.perf_counter()
    for obj in objects:
        features = cache = None
        if predictor is None:
            features = extract_features(obj.cloud, weights, dtype=np.dtype(dtype))
            cache = prepare_cache(features, obj.cloud, weights, dtype=np.dtype(dtype))
        obj_ious = []
        for pid in np.unique(obj.labels):
            members = np.flatnonzero(obj.labels == pid)
            if len(members) == 0:
                skipped += 1
                continue
            gt = obj.labels == pid
            picks = members[rng.integers(0, len(members), size=prompts_per_part)]
            for pi in picks:
                prompt = obj.cloud.points[pi]
                if predictor is None:
                    triple = predict(features, obj.cloud, prompt, weights, cache=cache)
                    mask = triple.best_mask()
                else:
                    mask = predictor(obj.cloud, features, cache, prompt)
                obj_ious.append(mask_iou(mask, gt))
        per_object.append({"name": obj.name, "miou": float(np.mean(obj_ious)),
                           "n_parts": int(len(np.unique(obj.labels))),
                           "n_prompts": len(obj_ious)})
        all_ious.extend(obj_ious)
    return EvalReport(
        mode="interactive",
        per_object=per_object,
        mean=float(np.mean([row["miou"] for row in per_object])),
        prompt_mean=float(np.mean(all_ious)),
        skipped_parts=skipped,
        seconds=time.perf_counter() - t0,
        protocol="interactive: mean IoU between the argmax-IoU stage-2 mask (binarized "
                 "at 0.5) and the ground-truth part mask, over "
                 f"{prompts_per_part} prompts per part",
    )


def full_eval(weights, items, config=None, n_points=4096, seed=0):
    """Run auto_segment on every DatasetItem and score against its fine labels."""
    config = config or AutoSegConfig(n_points=n_points, n_prompts=96, seed=seed)
    per_object = []
    preds, gts = [], []
    t0 = time.perf_counter()
    for item in items:
        pred = auto_segment(item.mesh, weights, config)
        miou = full_seg_miou(pred, item.fine, face_areas=item.mesh.face_areas)
        acc = face_accuracy(pred, item.fine, face_areas=item.mesh.face_areas)
        preds.append(pred)
        gts.append(item.fine)
        per_object.append({"name": str(item.seed), "miou": miou, "face_acc": acc,
                           "n_pred": pred.n_parts, "n_gt": item.fine.n_parts})
    exact, within = part_count_accuracy(preds, gts)
    return EvalReport(
        mode="full",
        per_object=per_object,
        mean=float(np.mean([r["miou"] for r in per_object])),
        part_count_exact=exact,
        part_count_within_one=within,
        face_accuracy_mean=float(np.mean([r["face_acc"] for r in per_object])),
        seconds=time.perf_counter() - t0,
    )
