"""The promptable segmentation network.

A pluggable toy feature extractor produces prompt-independent per-point
features once per cloud; a two-stage multi-head segmentor then predicts three
alternative masks per point prompt, and a small head estimates each mask's
IoU against the (unknown) ground truth so the best mask can be auto-selected.

Everything prompt-independent (the first-layer contribution of the per-point
features and positions) is premixed once and cached, which is what makes
per-prompt prediction interactive even on one CPU core.
"""

import json

import numpy as np
from dataclasses import dataclass, field

from . import autodiff as ad
from .errors import FeatureMismatch

# Radii (unit-cube scale) of the two mean-pooled neighborhoods fed to the fuser.
NEIGHBOR_RADII = (0.05, 0.2)
RAW_FEATURES = 6          # position + normal
FUSER_INPUT = RAW_FEATURES * (2 + len(NEIGHBOR_RADII))

WEIGHTS_FORMAT_VERSION = 1

# Incremented on every feature extraction; lets tests assert features are reused.
EXTRACT_CALLS = 0


def _he_init(rng, fan_in, fan_out, dtype):
    return (rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)).astype(dtype)


@dataclass
class DenseNet:
    """Plain MLP: hidden layers are rectified-linear, the output is identity or sigmoid."""

    widths: list
    out_activation: str = "identity"
    weights: list = None
    biases: list = None

    @classmethod
    def create(cls, widths, out_activation, rng, dtype):
        ws = [_he_init(rng, widths[i], widths[i + 1], dtype) for i in range(len(widths) - 1)]
        # Small random hidden biases keep units off exact relu kinks (dead
        # inputs would otherwise pin pre-activations at exactly zero).
        bs = [(rng.normal(0.0, 0.02, widths[i + 1])).astype(dtype)
              for i in range(len(widths) - 1)]
        bs[-1] = np.zeros(widths[-1], dtype=dtype)
        return cls(list(widths), out_activation, ws, bs)

    @property
    def n_layers(self):
        return len(self.weights)

    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def _out(self, z):
        if self.out_activation == "sigmoid":
            # exp may overflow to inf for very negative z; 1/(1+inf) = 0 is the
            # right answer, so just silence the warning.
            with np.errstate(over="ignore"):
                return 1.0 / (1.0 + np.exp(-z))
        return z

    def forward(self, x):
        z = x @ self.weights[0] + self.biases[0]
        return self.forward_tail(z)

    def forward_tail(self, z):
        """Finish the forward pass given the layer-0 pre-activation."""
        for i in range(1, self.n_layers):
            z = np.maximum(z, 0) @ self.weights[i] + self.biases[i]
        return self._out(z)

    def forward_node(self, x, nodes):
        z = ad.affine(x, nodes[0][0], nodes[0][1])
        return self.forward_tail_node(z, nodes)

    def forward_tail_node(self, z, nodes):
        for i in range(1, self.n_layers):
            z = ad.affine(ad.relu(z), nodes[i][0], nodes[i][1])
        if self.out_activation == "sigmoid":
            return ad.sigmoid(z)
        return z

    def cast(self, dtype):
        return DenseNet(
            list(self.widths), self.out_activation,
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
        )


def default_layout(d):
    """Widths of every sub-network for a feature width ``d``.

    The fuser is the deepest net because it runs once per cloud; the
    per-prompt nets stay shallow to keep interactive prediction cheap.
    """
    half = max(d // 2, 4)
    wide = max(2 * d, 8)
    return {
        "feature_fuser": ([FUSER_INPUT, wide, wide, d], "identity"),
        "stage1": ([d + 6, d, half, 1], "sigmoid"),
        "global_net": ([d + 9, d, d], "identity"),
        "stage2": ([2 * d + 9, d, half, 1], "sigmoid"),
        "iou_point": ([2 * d + 9, d, d], "identity"),
        "iou_head": ([d, d, 3], "sigmoid"),
    }


@dataclass
class SegmentorWeights:
    """All trainable parameters: fuser, six mask heads, global net, IoU branch."""

    d: int
    feature_fuser: DenseNet
    stage1: list
    global_net: DenseNet
    stage2: list
    iou_point: DenseNet
    iou_head: DenseNet

    @classmethod
    def create(cls, d=64, seed=0, dtype=np.float64):
        rng = np.random.default_rng(seed)
        layout = default_layout(d)
        w = cls(
            d=d,
            feature_fuser=DenseNet.create(*layout["feature_fuser"], rng, dtype),
            stage1=[DenseNet.create(*layout["stage1"], rng, dtype) for _ in range(3)],
            global_net=DenseNet.create(*layout["global_net"], rng, dtype),
            stage2=[DenseNet.create(*layout["stage2"], rng, dtype) for _ in range(3)],
            iou_point=DenseNet.create(*layout["iou_point"], rng, dtype),
            iou_head=DenseNet.create(*layout["iou_head"], rng, dtype),
        )
        # The position / prompt / mask blocks are 3 columns against d-wide
        # feature blocks; He init leaves them drowned out, which cripples
        # prompt conditioning. Boost their initial gain to even the variance.
        gain = np.sqrt(d / 3.0)
        for name, net in w.nets():
            if name.startswith(("stage1", "stage2", "global_net", "iou_point")):
                blocks = _row_blocks(d, name.startswith(("stage2", "iou_point")))
                if name.startswith("iou_point"):
                    # The IoU branch keeps plain He init for positions and the
                    # prompt (a boosted block makes its estimate jumpy across
                    # prompt positions; a zeroed one blinds it to which mask
                    # holds the prompt) and only the mask block is boosted.
                    net.weights[0][blocks["m"]] *= gain
                else:
                    for key in ("P", "prompt", "m"):
                        if key in blocks:
                            net.weights[0][blocks[key]] *= gain
                # Mask inputs live in (0, 1); shift the bias so their block
                # contributes zero at m = 0.5 (an affine reparametrization,
                # just a better-conditioned starting point).
                net.biases[0] -= 0.5 * net.weights[0][blocks["m"]].sum(axis=0)
        # Start the three heads of each stage at different mask scales
        # (small / medium / large); min-loss selection then specializes heads
        # by scale instead of collapsing them onto individual parts. Biases
        # are kept moderate so the small head is never hopeless on small
        # parts (an empty start would lose every min-loss race and starve).
        for heads in (w.stage1, w.stage2):
            for i, bias in enumerate((-0.75, 0.0, 0.75)):
                heads[i].biases[-1][:] = bias
        return w

    def nets(self):
        """(name, net) pairs in declaration order; also the serialization order."""
        out = [("feature_fuser", self.feature_fuser)]
        out += [(f"stage1_{i}", net) for i, net in enumerate(self.stage1)]
        out.append(("global_net", self.global_net))
        out += [(f"stage2_{i}", net) for i, net in enumerate(self.stage2)]
        out += [("iou_point", self.iou_point), ("iou_head", self.iou_head)]
        return out

    def params(self):
        """Flat (name, array) list in declaration order."""
        out = []
        for name, net in self.nets():
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                out.append((f"{name}.W{i}", w))
                out.append((f"{name}.b{i}", b))
        return out

    def n_params(self):
        return sum(arr.size for _, arr in self.params())

    def cast(self, dtype):
        return SegmentorWeights(
            self.d, self.feature_fuser.cast(dtype),
            [n.cast(dtype) for n in self.stage1], self.global_net.cast(dtype),
            [n.cast(dtype) for n in self.stage2], self.iou_point.cast(dtype),
            self.iou_head.cast(dtype),
        )

    def save(self, path):
        header = {
            "format_version": WEIGHTS_FORMAT_VERSION,
            "d": self.d,
            "nets": [
                {"name": name, "widths": net.widths, "out_activation": net.out_activation}
                for name, net in self.nets()
            ],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(len(blob).to_bytes(4, "little"))
            fh.write(blob)
            for _, arr in self.params():
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            n = int.from_bytes(fh.read(4), "little")
            header = json.loads(fh.read(n).decode("utf-8"))
            if header["format_version"] != WEIGHTS_FORMAT_VERSION:
                raise ValueError(f"unsupported weights format {header['format_version']}")
            nets = {}
            for spec in header["nets"]:
                widths = spec["widths"]
                net = DenseNet(widths, spec["out_activation"], [], [])
                for i in range(len(widths) - 1):
                    w = np.frombuffer(fh.read(4 * widths[i] * widths[i + 1]), dtype="<f4")
                    net.weights.append(w.reshape(widths[i], widths[i + 1]).astype(np.float64))
                    b = np.frombuffer(fh.read(4 * widths[i + 1]), dtype="<f4")
                    net.biases.append(b.astype(np.float64))
                nets[spec["name"]] = net
        return cls(
            d=header["d"],
            feature_fuser=nets["feature_fuser"],
            stage1=[nets[f"stage1_{i}"] for i in range(3)],
            global_net=nets["global_net"],
            stage2=[nets[f"stage2_{i}"] for i in range(3)],
            iou_point=nets["iou_point"],
            iou_head=nets["iou_head"],
        )


@dataclass
class MaskTriple:
    """Three soft masks per stage plus the predicted IoU of each stage-2 mask."""

    stage1: np.ndarray       # (3, N) in [0, 1]
    stage2: np.ndarray       # (3, N)
    ious: np.ndarray         # (3,) in [0, 1]

    @property
    def best_head(self):
        return int(np.argmax(self.ious))

    def best_mask(self, threshold=0.5):
        return self.stage2[self.best_head] > threshold


def _ball_means(points, raw, radii, chunk=4096):
    """Mean of ``raw`` over the inclusive Euclidean ball around every point.

    Pairwise distances are built chunk by chunk (memory stays bounded); the
    coordinate block is zero-padded to 8 columns, which BLAS handles far
    better than a k=3 product.
    """
    n = len(points)
    padded = np.zeros((n, 8), dtype=points.dtype)
    padded[:, :3] = points
    neg2t = (-2.0 * padded).T.copy()
    sq = np.einsum("ij,ij->i", points, points)
    # Trailing ones column makes one matmul yield both sums and counts.
    aug = np.concatenate([raw, np.ones((n, 1), dtype=raw.dtype)], axis=1)
    outs = [np.empty_like(raw) for _ in radii]
    mask = np.empty((min(chunk, n), n), dtype=raw.dtype)
    for start in range(0, n, chunk):
        end = min(start + chunk, n)
        d2 = padded[start:end] @ neg2t
        d2 += sq[start:end, None]
        d2 += sq[None, :]
        m = mask[: end - start]
        for oi, r in enumerate(radii):
            np.less_equal(d2, r * r, out=m, casting="unsafe")
            sums = m @ aug
            outs[oi][start:end] = sums[:, :-1] / sums[:, -1:]
    return outs


def fuser_input(cloud, dtype=np.float64):
    """Raw per-point features, two neighborhood means, and the global mean."""
    pts = cloud.points.astype(dtype)
    nrm = cloud.normals.astype(dtype)
    raw = np.concatenate([pts, nrm], axis=1)
    means = _ball_means(pts, raw, NEIGHBOR_RADII)
    gmean = np.broadcast_to(raw.mean(axis=0), raw.shape)
    return np.concatenate([raw, *means, gmean], axis=1)


def extract_features(cloud, weights, dtype=np.float64):
    """Prompt-independent per-point features (N, d); computed once per cloud."""
    global EXTRACT_CALLS
    EXTRACT_CALLS += 1
    x = fuser_input(cloud, dtype)
    fuser = weights.feature_fuser if x.dtype == weights.feature_fuser.weights[0].dtype \
        else weights.feature_fuser.cast(dtype)
    return fuser.forward(x)


# Layer-0 row layout of the prompt-consuming nets: per-point features, then
# positions, then the broadcast prompt, then (stage2/iou only) the broadcast
# global feature, then the three masks.
def _row_blocks(d, with_global):
    blocks = {"f": slice(0, d), "P": slice(d, d + 3), "prompt": slice(d + 3, d + 6)}
    if with_global:
        blocks["g"] = slice(d + 6, 2 * d + 6)
        blocks["m"] = slice(2 * d + 6, 2 * d + 9)
    else:
        blocks["m"] = slice(d + 6, d + 9)
    return blocks


@dataclass
class PromptCache:
    """Per-(cloud, weights) buffers that make per-prompt prediction cheap."""

    dtype: object
    n_points: int
    points: np.ndarray
    f_p: np.ndarray
    weights: SegmentorWeights      # cast to ``dtype``
    premix: dict                   # net name -> (N, width) layer-0 partial
    _scratch: dict = field(default_factory=dict, repr=False)

    def scratch(self, key, shape):
        buf = self._scratch.get(key)
        if buf is None or buf.shape != shape:
            buf = np.empty(shape, dtype=self.dtype)
            self._scratch[key] = buf
        return buf


def prepare_cache(f_p, cloud, weights, dtype=None):
    dtype = np.dtype(dtype or f_p.dtype)
    w = weights if weights.feature_fuser.weights[0].dtype == dtype else weights.cast(dtype)
    pts = cloud.points.astype(dtype)
    fp = f_p.astype(dtype)
    d = w.d
    premix = {}
    for name, net in w.nets():
        if name.startswith(("stage1", "stage2", "global_net", "iou_point")):
            w0 = net.weights[0]
            premix[name] = fp @ w0[:d] + pts @ w0[d:d + 3] + net.biases[0]
    return PromptCache(dtype, cloud.n_points, pts, fp, w, premix)


def _tail_buffered(net, z, cache, key):
    """forward_tail into reused scratch buffers; ``z`` is consumed in place."""
    for i in range(1, net.n_layers):
        np.maximum(z, 0, out=z)
        h = cache.scratch((key, i), (len(z), net.widths[i + 1]))
        np.matmul(z, net.weights[i], out=h)
        h += net.biases[i]
        z = h
    return net._out(z)


def predict(f_p, cloud, prompt, weights, cache=None):
    """Run the two-stage segmentor for one point prompt.

    Returns a MaskTriple; pass a PromptCache (from prepare_cache) to skip the
    prompt-independent work when issuing many prompts against one cloud.
    """
    if f_p.shape[0] != cloud.n_points:
        raise FeatureMismatch(
            f"features are for {f_p.shape[0]} points, cloud has {cloud.n_points}")
    if cache is None:
        cache = prepare_cache(f_p, cloud, weights)
    w = cache.weights
    d, n = w.d, cache.n_points
    p = np.asarray(prompt, dtype=cache.dtype).reshape(1, 3)
    rows1 = _row_blocks(d, False)
    rows2 = _row_blocks(d, True)

    m1cat = cache.scratch("m1cat", (n, 3))
    for i, net in enumerate(w.stage1):
        z = cache.scratch(("s1", i), (n, net.widths[1]))
        np.add(cache.premix[f"stage1_{i}"], p @ net.weights[0][rows1["prompt"]], out=z)
        m1cat[:, i:i + 1] = _tail_buffered(net, z, cache, ("s1t", i))

    gnet = w.global_net
    zg = cache.scratch("g", (n, gnet.widths[1]))
    np.add(cache.premix["global_net"], p @ gnet.weights[0][rows1["prompt"]], out=zg)
    zg += m1cat @ gnet.weights[0][rows1["m"]]
    f_g = _tail_buffered(gnet, zg, cache, "gt").max(axis=0, keepdims=True)   # (1, d)

    m2cat = cache.scratch("m2cat", (n, 3))
    for i, net in enumerate(w.stage2):
        z = cache.scratch(("s2", i), (n, net.widths[1]))
        w0 = net.weights[0]
        np.add(cache.premix[f"stage2_{i}"],
               p @ w0[rows2["prompt"]] + f_g @ w0[rows2["g"]], out=z)
        z += m1cat @ w0[rows2["m"]]
        m2cat[:, i:i + 1] = _tail_buffered(net, z, cache, ("s2t", i))

    w0 = w.iou_point.weights[0]
    zi = cache.scratch("iou", (n, w.iou_point.widths[1]))
    np.add(cache.premix["iou_point"],
           p @ w0[rows2["prompt"]] + f_g @ w0[rows2["g"]], out=zi)
    zi += m2cat @ w0[rows2["m"]]
    pooled = _tail_buffered(w.iou_point, zi, cache, "iout").max(axis=0, keepdims=True)
    v = w.iou_head.forward(pooled)[0]

    return MaskTriple(m1cat.T.copy(), m2cat.T.copy(), v.astype(np.float64))


def predict_batch(f_p, cloud, prompts, weights, cache=None, threshold=0.5):
    """Prediction over many prompts against one shared cache.

    Returns (ious (Q, 3), best_head (Q,), best_masks (Q, N) bool) where
    best_masks are the argmax-IoU stage-2 masks binarized at ``threshold``.
    """
    if cache is None:
        cache = prepare_cache(f_p, cloud, weights)
    prompts = np.asarray(prompts, dtype=cache.dtype).reshape(-1, 3)
    q = len(prompts)
    ious = np.empty((q, 3), dtype=np.float64)
    heads = np.empty(q, dtype=np.int64)
    masks = np.empty((q, cache.n_points), dtype=bool)
    for i in range(q):
        triple = predict(f_p, cloud, prompts[i], weights, cache=cache)
        ious[i] = triple.ious
        heads[i] = triple.best_head
        masks[i] = triple.stage2[heads[i]] > threshold
    return ious, heads, masks


class TrainGraph:
    """Differentiable forward pass for one cloud, shared across its prompts.

    Mirrors ``predict`` exactly in values, and the whole forward is
    differentiable: the analytic gradient equals the true derivative of the
    loss for every parameter. The only constants are the IoU regression
    targets (binarized-mask IoUs), which are locally flat anyway.
    """

    def __init__(self, cloud, weights, dtype=None):
        self.w = weights
        self.d = weights.d
        self.dtype = np.dtype(dtype or weights.feature_fuser.weights[0].dtype)
        self.nodes = {name: ad.leaf(arr) for name, arr in weights.params()}
        self.param_names = [name for name, _ in weights.params()]

        x = fuser_input(cloud, self.dtype)
        self.f_p = weights.feature_fuser.forward_node(
            ad.leaf(x), self._net_nodes("feature_fuser"))
        self.points = ad.leaf(cloud.points.astype(self.dtype))

        self.premix = {}
        for name, _ in weights.nets():
            if name.startswith(("stage1", "stage2", "global_net", "iou_point")):
                self.premix[name] = self._premix(name, self.f_p)

    def _net_nodes(self, name):
        net = dict(self.w.nets())[name]
        return [(self.nodes[f"{name}.W{i}"], self.nodes[f"{name}.b{i}"])
                for i in range(net.n_layers)]

    def _premix(self, name, fp_node):
        d = self.d
        w0 = self.nodes[f"{name}.W0"]
        b0 = self.nodes[f"{name}.b0"]
        z = ad.affine(fp_node, ad.getitem(w0, slice(0, d)), b0)
        return ad.add(z, ad.matmul(self.points, ad.getitem(w0, slice(d, d + 3))))

    def prompt_forward(self, prompt):
        """Mask and IoU nodes for one prompt: ([m1 x3], [m2 x3], v)."""
        d = self.d
        p = ad.leaf(np.asarray(prompt, dtype=self.dtype).reshape(1, 3))

        m1 = []
        for i, net in enumerate(self.w.stage1):
            name = f"stage1_{i}"
            rows = _row_blocks(d, False)
            w0 = self.nodes[f"{name}.W0"]
            z = ad.add(self.premix[name], ad.matmul(p, ad.getitem(w0, rows["prompt"])))
            m1.append(net.forward_tail_node(z, self._net_nodes(name)))
        m1cat = ad.concat(m1, axis=1)

        gnet = self.w.global_net
        rows = _row_blocks(d, False)
        w0 = self.nodes["global_net.W0"]
        zg = ad.add(self.premix["global_net"], ad.matmul(p, ad.getitem(w0, rows["prompt"])))
        zg = ad.add(zg, ad.matmul(m1cat, ad.getitem(w0, rows["m"])))
        zg = gnet.forward_tail_node(zg, self._net_nodes("global_net"))
        f_g = ad.reshape(ad.amax(zg, axis=0), (1, d))

        m2 = []
        for i, net in enumerate(self.w.stage2):
            name = f"stage2_{i}"
            rows = _row_blocks(d, True)
            w0 = self.nodes[f"{name}.W0"]
            z = ad.add(self.premix[name], ad.matmul(p, ad.getitem(w0, rows["prompt"])))
            z = ad.add(z, ad.matmul(f_g, ad.getitem(w0, rows["g"])))
            z = ad.add(z, ad.matmul(m1cat, ad.getitem(w0, rows["m"])))
            m2.append(net.forward_tail_node(z, self._net_nodes(name)))
        m2cat = ad.concat(m2, axis=1)

        rows = _row_blocks(d, True)
        w0 = self.nodes["iou_point.W0"]
        zi = ad.add(self.premix["iou_point"], ad.matmul(p, ad.getitem(w0, rows["prompt"])))
        zi = ad.add(zi, ad.matmul(f_g, ad.getitem(w0, rows["g"])))
        zi = ad.add(zi, ad.matmul(m2cat, ad.getitem(w0, rows["m"])))
        zi = self.w.iou_point.forward_tail_node(zi, self._net_nodes("iou_point"))
        pooled = ad.reshape(ad.amax(zi, axis=0), (1, d))
        v = self.w.iou_head.forward_node(pooled, self._net_nodes("iou_head"))
        v = ad.reshape(v, (3,))
        return m1, m2, v

    def param_arrays(self):
        return [self.nodes[name].value for name in self.param_names]

    def grads(self, loss_node):
        return ad.backward(loss_node, [self.nodes[n] for n in self.param_names])
