"""Training losses: Dice + Focal per mask, min-over-heads selection, IoU regression.

Every loss works both on plain numpy arrays (returning a float) and on
autodiff Nodes (returning a Node), so the same formulas serve evaluation and
training.
"""

from functools import reduce

import numpy as np
from dataclasses import dataclass

from . import autodiff as ad
from .network import TrainGraph

DICE_EPS = 1.0
FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25
ALPHA_DICE = 0.5
# Masks are clipped this far away from {0, 1} before the focal log terms;
# keeps float32 training finite once heads saturate.
MASK_CLIP = 1e-7


@dataclass
class PromptBatch:
    """One cloud, K point prompts, and the K binary ground-truth masks."""

    cloud: object
    prompts: np.ndarray        # (K, 3)
    gt_masks: np.ndarray       # (K, N) binary

    def __post_init__(self):
        self.prompts = np.asarray(self.prompts, dtype=np.float64).reshape(-1, 3)
        self.gt_masks = np.asarray(self.gt_masks).reshape(len(self.prompts), -1)

    @property
    def k(self):
        return len(self.prompts)

    def validate(self):
        assert self.k >= 1
        for prompt, gt in zip(self.prompts, self.gt_masks):
            d = np.linalg.norm(self.cloud.points - prompt, axis=1)
            assert gt[int(np.argmin(d))] and d.min() <= 1e-6


def _as_node(x):
    if isinstance(x, ad.Node):
        return x, True
    return ad.leaf(np.asarray(x, dtype=np.float64)), False


def _ret(node, was_node):
    return node if was_node else float(node.value)


def dice_loss(mask, gt, eps=DICE_EPS):
    """1 − (2·Σ m·g + ε) / (Σ m + Σ g + ε); in [0, 1) and smooth in the mask."""
    mask, was_node = _as_node(mask)
    gt = np.asarray(gt, dtype=mask.value.dtype).reshape(mask.value.shape)
    num = ad.add(ad.mul(ad.nsum(ad.mul(mask, gt)), 2.0), eps)
    den = ad.add(ad.nsum(mask), float(gt.sum()) + eps)
    out = ad.sub(1.0, ad.mul(num, ad.power(den, -1.0)))
    return _ret(out, was_node)


def focal_loss(mask, gt, gamma=FOCAL_GAMMA, alpha=FOCAL_ALPHA):
    """Mean over points of α_t (1 − p_t)^γ · (−log p_t); γ=0 gives scaled BCE."""
    mask, was_node = _as_node(mask)
    gt = np.asarray(gt, dtype=mask.value.dtype).reshape(mask.value.shape)
    m = ad.clip(mask, MASK_CLIP, 1.0 - MASK_CLIP)
    p_t = ad.add(ad.mul(m, gt), ad.mul(ad.sub(1.0, m), 1.0 - gt))
    alpha_t = alpha * gt + (1.0 - alpha) * (1.0 - gt)
    term = ad.mul(ad.mul(alpha_t, ad.power(ad.sub(1.0, p_t), gamma)), ad.mul(ad.log(p_t), -1.0))
    return _ret(ad.nmean(term), was_node)


def mask_loss(masks, gt, alpha_dice=ALPHA_DICE):
    """Min over the three heads of α_dice·Dice + Focal.

    Returns (loss, selected head index); ties pick the lowest index, and the
    gradient flows only through the selected head.
    """
    per_head = [
        ad.add(ad.mul(dice_loss(m, gt) if isinstance(m, ad.Node) else ad.leaf(dice_loss(m, gt)),
                      alpha_dice),
               focal_loss(m, gt) if isinstance(m, ad.Node) else ad.leaf(focal_loss(m, gt)))
        for m in masks
    ]
    values = [float(l.value) for l in per_head]
    idx = int(np.argmin(values))
    node = per_head[idx]
    return (node if isinstance(masks[idx], ad.Node) else float(node.value)), idx


def _binary_iou(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum()) / float(union)


def iou_targets(m2_values, gt, threshold=0.5):
    """Per-head IoU of the binarized stage-2 masks against the ground truth."""
    gt = np.asarray(gt).reshape(-1) > 0.5
    return np.array([_binary_iou(np.asarray(m).reshape(-1) > threshold, gt) for m in m2_values])


def iou_loss(v, m2, gt):
    """MSE between the three predicted IoUs and their detached targets."""
    v, was_node = _as_node(v)
    m2_values = [m.value if isinstance(m, ad.Node) else np.asarray(m) for m in m2]
    targets = iou_targets(m2_values, gt).astype(v.value.dtype)
    out = ad.nmean(ad.power(ad.sub(v, targets), 2.0))
    return _ret(out, was_node)


def _prompt_loss(graph, prompt, gt, alpha_dice):
    m1, m2, v = graph.prompt_forward(prompt)
    gtc = np.asarray(gt, dtype=graph.dtype).reshape(-1, 1)
    l1, h1 = mask_loss(m1, gtc, alpha_dice)
    l2, h2 = mask_loss(m2, gtc, alpha_dice)
    li = iou_loss(v, m2, gtc)
    return ad.add(ad.add(l1, l2), li), (h1, h2)


def total_loss(batch, weights, alpha_dice=ALPHA_DICE, dtype=None):
    """Mean over prompts of stage-1 + stage-2 mask losses plus the IoU loss."""
    value, _ = total_loss_and_grads(batch, weights, alpha_dice=alpha_dice,
                                    dtype=dtype, want_grads=False)
    return value


def total_loss_and_grads(batch, weights, alpha_dice=ALPHA_DICE, dtype=None,
                         chunk=4, want_grads=True):
    """Loss value and analytic gradients for every parameter (declaration order).

    Prompts are processed in chunks so the per-chunk graph can be freed while
    gradients accumulate; the result is independent of the chunk size.
    """
    graph = TrainGraph(batch.cloud, weights, dtype=dtype)
    k = batch.k
    total = 0.0
    grads = None
    pending = []
    for j in range(k):
        node, _ = _prompt_loss(graph, batch.prompts[j], batch.gt_masks[j], alpha_dice)
        pending.append(node)
        if len(pending) >= chunk or j == k - 1:
            chunk_node = ad.mul(reduce(ad.add, pending), 1.0 / k)
            total += float(chunk_node.value)
            if want_grads:
                g = graph.grads(chunk_node)
                grads = g if grads is None else [a + b for a, b in zip(grads, g)]
            pending = []
    return total, grads
