"""Training: data augmentation, Adam, and the prompt-sampling train loop."""

import time

import numpy as np
from dataclasses import dataclass, field

from .errors import EmptyDataset
from .geometry import SampledCloud
from .losses import PromptBatch, total_loss_and_grads
from .network import SegmentorWeights


def augment(cloud, prompts, s_max=0.01, drop_normal_prob=0.3, seed=0):
    """Noise points/normals/prompts and occasionally drop all normals.

    One noise scale s ~ U(0, s_max) is drawn per call; point noise has std s,
    normal noise std 10·s (renormalized), prompt noise std s_max. With
    probability ``drop_normal_prob`` every normal is zeroed. Deterministic per
    seed; s_max = 0 leaves geometry bit-identical.
    """
    rng = np.random.default_rng(seed)
    prompts = np.asarray(prompts, dtype=np.float64).reshape(-1, 3)
    s = rng.uniform(0.0, s_max)
    if s > 0:
        points = cloud.points + rng.normal(0.0, s, cloud.points.shape)
        normals = cloud.normals + rng.normal(0.0, s, cloud.normals.shape) * 10.0
        length = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.where(length > 0, normals / np.maximum(length, 1e-30), 0.0)
        prompts = prompts + rng.normal(0.0, s_max, prompts.shape)
    else:
        points = cloud.points.copy()
        normals = cloud.normals.copy()
        prompts = prompts.copy()
    if drop_normal_prob > 0 and rng.random() < drop_normal_prob:
        normals = np.zeros_like(normals)
    return SampledCloud(points, normals, cloud.source_face), prompts


class Adam:
    """Standard bias-corrected Adam; updates parameter arrays in place."""

    def __init__(self, arrays, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            a -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainObject:
    """A cloud with per-point part labels, optionally at two granularities.

    ``watertight`` points at an alternate version of the same object that is
    preferred during training with probability ``watertight_prob``.
    ``sampler(seed)``, when present, returns a freshly sampled
    (cloud, labels, coarse_labels) so every training visit sees new surface
    points; ``cloud``/``labels`` stay as the canonical evaluation sample.
    """

    cloud: SampledCloud
    labels: np.ndarray
    coarse_labels: np.ndarray = None
    watertight: object = None
    name: str = ""
    sampler: object = None

    def training_view(self, seed):
        if self.sampler is None:
            return self
        cloud, labels, coarse = self.sampler(seed)
        return TrainObject(cloud, labels, coarse, name=self.name)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.coarse_labels is not None:
            self.coarse_labels = np.asarray(self.coarse_labels, dtype=np.int64)

    @property
    def part_ids(self):
        return np.unique(self.labels)

    @property
    def coarse_part_ids(self):
        if self.coarse_labels is None:
            return np.array([], dtype=np.int64)
        # Coarse groups identical to a fine part teach nothing extra.
        ids = []
        for cid in np.unique(self.coarse_labels):
            members = self.coarse_labels == cid
            fine_inside = np.unique(self.labels[members])
            if len(fine_inside) > 1:
                ids.append(cid)
        return np.array(ids, dtype=np.int64)


DESK_PRESET = dict(d=64, n_points=4096, lr=1e-3)
PAPER_PRESET = dict(d=512, n_points=100_000, lr=1e-5)
PRESETS = {"desk": DESK_PRESET, "paper": PAPER_PRESET}


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    lr_schedule: str = "cosine"     # constant | cosine (decays to lr/10)
    k_prompts: int = 8
    batch: int = 1
    seed: int = 0
    d: int = 64
    n_points: int = 4096
    s_max: float = 0.01
    drop_normal_prob: float = 0.3
    coarse_prob: float = 0.2
    watertight_prob: float = 0.8
    alpha_dice: float = 0.5
    dtype: str = "float32"
    log_every: int = 25

    def lr_at(self, step):
        if self.lr_schedule == "constant" or self.steps <= 1:
            return self.lr
        t = step / (self.steps - 1)
        return self.lr * (0.1 + 0.9 * 0.5 * (1 + np.cos(np.pi * t)))

    @classmethod
    def preset(cls, name="desk", **overrides):
        base = dict(PRESETS[name])
        base.update(overrides)
        return cls(**base)


@dataclass
class TrainResult:
    weights: SegmentorWeights
    loss_trace: list          # (step, loss) pairs
    seconds: float


def sample_prompt_batch(obj, k, coarse_prob, rng):
    """Draw K parts (without replacement until a pool runs dry), one prompt each."""
    prompts, gts = [], []
    coarse_ids = obj.coarse_part_ids
    used = {"fine": set(), "coarse": set()}
    for _ in range(k):
        use_coarse = len(coarse_ids) > 0 and rng.random() < coarse_prob
        if use_coarse:
            ids, labels, key = coarse_ids, obj.coarse_labels, "coarse"
        else:
            ids, labels, key = obj.part_ids, obj.labels, "fine"
        avail = [i for i in ids if i not in used[key]]
        if not avail:
            avail = list(ids)
        pid = avail[int(rng.integers(len(avail)))]
        used[key].add(pid)
        members = np.flatnonzero(labels == pid)
        pi = members[int(rng.integers(len(members)))]
        prompts.append(obj.cloud.points[pi])
        gts.append(labels == pid)
    return PromptBatch(obj.cloud, np.array(prompts), np.array(gts))


def train(dataset, config, progress=None, stop_when=None):
    """Adam on the total loss over randomly prompted dataset objects.

    Per step, ``batch`` objects are drawn; for each, K parts are sampled (the
    watertight variant is preferred with probability ``watertight_prob`` when
    present), one random member point per part becomes the prompt, and the
    cloud/prompts are augmented. Deterministic for a fixed seed.

    ``stop_when(step, loss, weights)`` is polled at every logged step; a
    truthy return ends training early.
    """
    if not dataset:
        raise EmptyDataset("no training objects")
    for obj in dataset:
        if len(obj.part_ids) < 1:
            raise EmptyDataset(f"object {obj.name!r} has no parts")

    rng = np.random.default_rng(config.seed)
    dtype = np.dtype(config.dtype)
    weights = SegmentorWeights.create(config.d, seed=config.seed, dtype=dtype)
    params = [arr for _, arr in weights.params()]
    adam = Adam(params, lr=config.lr)
    trace = []
    t0 = time.perf_counter()
    for step in range(config.steps):
        grads = None
        loss = 0.0
        for _ in range(config.batch):
            obj = dataset[int(rng.integers(len(dataset)))]
            if obj.watertight is not None and rng.random() < config.watertight_prob:
                obj = obj.watertight
            obj = obj.training_view(int(rng.integers(2 ** 63)))
            batch = sample_prompt_batch(obj, config.k_prompts, config.coarse_prob, rng)
            cloud, prompts = augment(batch.cloud, batch.prompts, config.s_max,
                                     config.drop_normal_prob, seed=int(rng.integers(2 ** 63)))
            batch = PromptBatch(cloud, prompts, batch.gt_masks)
            value, g = total_loss_and_grads(batch, weights, config.alpha_dice, dtype=dtype)
            loss += value / config.batch
            scaled = [gi / config.batch for gi in g]
            grads = scaled if grads is None else [a + b for a, b in zip(grads, scaled)]
        adam.lr = config.lr_at(step)
        adam.step(params, grads)
        if step % config.log_every == 0 or step == config.steps - 1:
            trace.append((step, loss))
            if progress:
                progress(step, loss)
            if stop_when is not None and stop_when(step, loss, weights):
                break
    return TrainResult(weights, trace, time.perf_counter() - t0)
