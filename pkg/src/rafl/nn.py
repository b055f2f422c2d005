"""Small numpy CNN engine with filter-level structured dropout.

Activations inside the sparse region (between ``SparseBegin`` and
``SparseEnd``) are carried as ``(values, valid_idx)`` pairs: ``values`` only
holds the feature maps listed in ``valid_idx``.  A convolution therefore only
touches ``W[V_o][:, V_i]`` and never computes dropped filters.  Everything runs
in float64.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MAX_RATE = 0.5


# ---------------------------------------------------------------------------
# network description


@dataclass(frozen=True)
class Conv:
    c_out: int
    k_w: int = 3
    k_h: int = 3
    stride: int = 1
    padding: int = 0
    has_bias: bool = True


@dataclass(frozen=True)
class MaxPool:
    k: int = 2
    stride: int = 2


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    n_out: int
    has_bias: bool = True


@dataclass(frozen=True)
class SparseBegin:
    pass


@dataclass(frozen=True)
class SparseEnd:
    pass


LAYER_TYPES = {cls.__name__: cls for cls in (Conv, MaxPool, ReLU, Flatten, Dense, SparseBegin, SparseEnd)}


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer list plus the ``(channels, height, width)`` input shape."""

    layers: tuple
    input_dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_dims", tuple(int(v) for v in self.input_dims))
        object.__setattr__(self, "_shapes", tuple(self._compute_shapes()))  # validates
        object.__setattr__(self, "_conv_indices", tuple(i for i, l in enumerate(self.layers) if isinstance(l, Conv)))

    @property
    def conv_indices(self) -> list[int]:
        return list(self._conv_indices)

    @property
    def n_conv(self) -> int:
        return len(self.conv_indices)

    def shapes(self) -> list[tuple]:
        """Output shape (without batch) of every layer."""
        return list(self._shapes)

    def _compute_shapes(self) -> list[tuple]:
        if len(self.input_dims) != 3 or min(self.input_dims) < 1:
            raise ValueError(f"input_dims must be three positive ints, got {self.input_dims}")
        shape: tuple = self.input_dims
        out = []
        sparse_state = "before"
        seen_conv = False
        for i, layer in enumerate(self.layers):
            if isinstance(layer, SparseBegin):
                if sparse_state != "before":
                    raise ValueError("only one SparseBegin is allowed")
                sparse_state = "inside"
            elif isinstance(layer, SparseEnd):
                if sparse_state != "inside":
                    raise ValueError("SparseEnd without SparseBegin")
                sparse_state = "after"
            elif isinstance(layer, Conv):
                if sparse_state != "inside":
                    raise ValueError(f"layer {i}: convolutions must sit between SparseBegin and SparseEnd")
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: Conv needs a (c, h, w) input, got {shape}")
                c, h, w = shape
                ho = (h + 2 * layer.padding - layer.k_h) // layer.stride + 1
                wo = (w + 2 * layer.padding - layer.k_w) // layer.stride + 1
                if min(layer.c_out, ho, wo) < 1 or layer.stride < 1 or layer.padding < 0:
                    raise ValueError(f"layer {i}: invalid Conv geometry for input {shape}")
                shape = (layer.c_out, ho, wo)
                seen_conv = True
            elif isinstance(layer, MaxPool):
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: MaxPool needs a (c, h, w) input")
                c, h, w = shape
                ho = (h - layer.k) // layer.stride + 1
                wo = (w - layer.k) // layer.stride + 1
                if min(ho, wo) < 1:
                    raise ValueError(f"layer {i}: pooling window larger than input {shape}")
                shape = (c, ho, wo)
            elif isinstance(layer, ReLU):
                pass
            elif isinstance(layer, Flatten):
                if sparse_state == "inside":
                    raise ValueError("Flatten must come after SparseEnd")
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Dense):
                if len(shape) != 1:
                    raise ValueError(f"layer {i}: Dense needs a flat input, got {shape}")
                if sparse_state != "after":
                    raise ValueError("SparseEnd must precede the first Dense layer")
                shape = (layer.n_out,)
            else:
                raise TypeError(f"unknown layer {layer!r}")
            out.append(shape)
        if not seen_conv or sparse_state != "after":
            raise ValueError("network needs SparseBegin, at least one Conv and SparseEnd")
        return out

    @property
    def output_dim(self) -> int:
        return int(np.prod(self.shapes()[-1]))

    def to_dict(self) -> dict:
        return {
            "input_dims": list(self.input_dims),
            "layers": [{"type": type(layer).__name__, **layer.__dict__} for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        layers = []
        for item in data["layers"]:
            item = dict(item)
            kind = item.pop("type")
            if kind not in LAYER_TYPES:
                raise ValueError(f"unknown layer type {kind!r}")
            layers.append(LAYER_TYPES[kind](**item))
        return cls(tuple(layers), tuple(data["input_dims"]))

    def fingerprint(self) -> bytes:
        """8-byte digest identifying the topology."""
        return hashlib.sha256(repr(self.to_dict()).encode()).digest()[:8]


# ---------------------------------------------------------------------------
# parameters


@dataclass
class Weights:
    params: dict[str, np.ndarray]
    momentum: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            if name not in self.momentum:
                self.momentum[name] = np.zeros_like(p)

    def copy(self) -> "Weights":
        return Weights({k: v.copy() for k, v in self.params.items()},
                       {k: v.copy() for k, v in self.momentum.items()})

    def reset_momentum(self):
        for v in self.momentum.values():
            v[...] = 0.0

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def param_names(spec: NetworkSpec, idx: int) -> tuple[str, str | None]:
    layer = spec.layers[idx]
    return f"{idx}.W", (f"{idx}.b" if layer.has_bias else None)


def init_weights(spec: NetworkSpec, rng: np.random.Generator) -> Weights:
    """He-normal weights, zero biases."""
    params = {}
    shapes = spec.shapes()
    prev = spec.input_dims
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            fan_in = prev[0] * layer.k_w * layer.k_h
            w_name, b_name = param_names(spec, i)
            params[w_name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (layer.c_out, prev[0], layer.k_h, layer.k_w))
            if b_name:
                params[b_name] = np.zeros(layer.c_out)
        elif isinstance(layer, Dense):
            w_name, b_name = param_names(spec, i)
            params[w_name] = rng.normal(0.0, np.sqrt(2.0 / prev[0]), (prev[0], layer.n_out))
            if b_name:
                params[b_name] = np.zeros(layer.n_out)
        prev = shapes[i]
    return Weights(params)


# ---------------------------------------------------------------------------
# masks


@dataclass
class MaskSet:
    """Valid filter indices per conv layer, plus the output scale to apply."""

    keep: list[np.ndarray]
    scale: list[float]

    def __post_init__(self):
        if len(self.keep) != len(self.scale):
            raise ValueError("keep and scale must have one entry per conv layer")
        for k in self.keep:
            if len(k) == 0:
                raise ValueError("every conv layer needs at least one valid filter")


def check_rates(d, n_conv: int) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if len(d) != n_conv:
        raise ValueError(f"dropout vector has {len(d)} rates, network has {n_conv} conv layers")
    if np.any(~np.isfinite(d)) or np.any(d < 0.0) or np.any(d > MAX_RATE):
        raise ValueError(f"dropout rates must lie in [0, {MAX_RATE}], got {d}")
    return d


def sample_masks(d, spec: NetworkSpec, rng: np.random.Generator) -> MaskSet:
    """Keep each filter independently with probability ``1 - d[layer]``.

    A layer that loses every filter is redrawn until at least one survives.
    """
    d = check_rates(d, spec.n_conv)
    keep, scale = [], []
    for rate, idx in zip(d, spec.conv_indices):
        c_out = spec.layers[idx].c_out
        if rate == 0.0:
            keep.append(np.arange(c_out))
            scale.append(1.0)
            continue
        while True:
            kept = np.flatnonzero(rng.random(c_out) >= rate)
            if len(kept):
                break
        keep.append(kept)
        scale.append(float(1.0 / (1.0 - rate)))
    return MaskSet(keep, scale)


def full_masks(spec: NetworkSpec) -> MaskSet:
    return MaskSet([np.arange(spec.layers[i].c_out) for i in spec.conv_indices], [1.0] * spec.n_conv)


def prefix_masks(spec: NetworkSpec, fraction: float) -> MaskSet:
    """First ``ceil(fraction * c_out)`` filters of every conv layer, unscaled."""
    keep = []
    for i in spec.conv_indices:
        c_out = spec.layers[i].c_out
        n = min(c_out, max(1, int(np.ceil(fraction * c_out - 1e-9))))
        keep.append(np.arange(n))
    return MaskSet(keep, [1.0] * spec.n_conv)


def trainable_mask(spec: NetworkSpec, masks: MaskSet) -> dict[str, np.ndarray]:
    """Boolean per-parameter mask of the weights a sub-network actually holds.

    Covers ``W[V_o, V_i]`` of every conv layer and the rows of the first dense
    layer that read surviving feature maps; later dense layers are kept whole.
    """
    shapes = spec.shapes()
    out = {}
    v_in = np.arange(spec.input_dims[0])
    conv_no = 0
    first_dense = True
    for i, layer in enumerate(spec.layers):
        in_shape = shapes[i - 1] if i else spec.input_dims
        w_name, b_name = (param_names(spec, i) if isinstance(layer, (Conv, Dense)) else (None, None))
        if isinstance(layer, Conv):
            v_out = masks.keep[conv_no]
            conv_no += 1
            m = np.zeros((layer.c_out, in_shape[0], layer.k_h, layer.k_w), bool)
            m[np.ix_(v_out, v_in)] = True
            out[w_name] = m
            if b_name:
                out[b_name] = np.zeros(layer.c_out, bool)
                out[b_name][v_out] = True
            v_in = v_out
        elif isinstance(layer, Flatten) and first_dense:
            per_map = int(np.prod(in_shape[1:]))
            rows = (v_in[:, None] * per_map + np.arange(per_map)[None, :]).reshape(-1)
        elif isinstance(layer, Dense):
            m = np.ones((in_shape[0], layer.n_out), bool)
            if first_dense:
                m[:] = False
                m[rows] = True
                first_dense = False
            out[w_name] = m
            if b_name:
                out[b_name] = np.ones(layer.n_out, bool)
    return out


# ---------------------------------------------------------------------------
# layer kernels


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int, padding: int):
    """Convolution as one matmul over an im2col matrix; returns ``(out, cols)``."""
    xp = _pad(x, padding)
    c_out, c_in, k_h, k_w = w.shape
    win = sliding_window_view(xp, (k_h, k_w), axis=(2, 3))[:, :, ::stride, ::stride]
    bsz, _, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, c_in * k_h * k_w)
    out = cols @ w.reshape(c_out, -1).T
    if b is not None:
        out += b
    return out.reshape(bsz, ho, wo, c_out).transpose(0, 3, 1, 2), cols


def conv_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape: tuple, stride: int, padding: int):
    c_out, c_in, k_h, k_w = w.shape
    bsz, _, ho, wo = dout.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, c_out)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(c_out, -1)).reshape(bsz, ho, wo, c_in, k_h, k_w).transpose(0, 3, 4, 5, 1, 2)
    _, _, h, wd = x_shape
    dxp = np.zeros((bsz, c_in, h + 2 * padding, wd + 2 * padding))
    for i in range(k_h):
        for j in range(k_w):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return dxp, dw, db


def pool_forward(x: np.ndarray, k: int, stride: int):
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(win.shape[:4] + (k * k,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, arg


def pool_backward(dout: np.ndarray, arg: np.ndarray, x_shape: tuple, k: int, stride: int):
    dx = np.zeros(x_shape)
    ho, wo = dout.shape[2], dout.shape[3]
    for i in range(k):
        for j in range(k):
            hit = arg == i * k + j
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.where(hit, dout, 0.0)
    return dx


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    n = len(labels)
    loss = float(-np.mean(np.log(p[np.arange(n), labels] + 1e-300)))
    grad = p
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class Cache:
    entries: list
    masks: MaskSet | None


def forward(spec: NetworkSpec, weights: Weights, x: np.ndarray, masks: MaskSet | None = None,
            training: bool | None = None):
    """Run the network; returns ``(logits, cache)``.

    With ``masks`` the sparse region only computes the listed filters and
    scales them by the mask's factor.  ``masks=None`` is the full model.
    """
    if training is None:
        training = masks is not None
    if training and masks is None:
        raise ValueError("training forward pass needs a MaskSet")
    if not training and masks is not None:
        raise ValueError("inference always uses the full model; drop the masks")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != spec.input_dims:
        raise ValueError(f"input must have shape (b, {', '.join(map(str, spec.input_dims))}), got {x.shape}")
    if masks is not None and len(masks.keep) != spec.n_conv:
        raise ValueError("MaskSet does not match the network")

    p = weights.params
    valid = None  # valid channel indices inside the sparse region
    full_c = None
    conv_no = 0
    entries = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, SparseBegin):
            full_c = x.shape[1]
            valid = np.arange(full_c)
            entries.append(None)
        elif isinstance(layer, Conv):
            w_name, b_name = param_names(spec, i)
            w, b = p[w_name], (p[b_name] if b_name else None)
            v_out, scale = None, 1.0
            if masks is not None:
                v_out, scale = masks.keep[conv_no], masks.scale[conv_no]
                if len(v_out) == layer.c_out:
                    v_out = None
            v_in = valid if len(valid) != w.shape[1] else None
            if v_out is not None or v_in is not None:
                rows = v_out if v_out is not None else slice(None)
                cols_ = v_in if v_in is not None else slice(None)
                w = w[rows][:, cols_]
                if b is not None and v_out is not None:
                    b = b[v_out]
            out, cols = conv_forward(x, w, b, layer.stride, layer.padding)
            if scale != 1.0:
                out = out * scale
            entries.append((cols, x.shape, w, v_out, v_in, scale))
            x = out
            valid = v_out if v_out is not None else np.arange(layer.c_out)
            full_c = layer.c_out
            conv_no += 1
        elif isinstance(layer, ReLU):
            mask = x > 0
            entries.append(mask)
            x = x * mask
        elif isinstance(layer, MaxPool):
            out, arg = pool_forward(x, layer.k, layer.stride)
            entries.append((arg, x.shape))
            x = out
        elif isinstance(layer, SparseEnd):
            entries.append(valid)
            if len(valid) != full_c:
                dense = np.zeros((x.shape[0], full_c) + x.shape[2:])
                dense[:, valid] = x
                x = dense
            valid = None
        elif isinstance(layer, Flatten):
            entries.append(x.shape)
            x = x.reshape(x.shape[0], -1)
        elif isinstance(layer, Dense):
            w_name, b_name = param_names(spec, i)
            entries.append(x)
            x = x @ p[w_name]
            if b_name:
                x = x + p[b_name]
    return x, Cache(entries, masks)


def backward(spec: NetworkSpec, weights: Weights, cache: Cache | None, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the loss given ``dlogits``; dropped filters get exact zeros."""
    if cache is None:
        raise RuntimeError("backward needs the cache of a forward pass")
    p = weights.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    g = dlogits
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, entry = spec.layers[i], cache.entries[i]
        if isinstance(layer, Dense):
            w_name, b_name = param_names(spec, i)
            grads[w_name] = entry.T @ g
            if b_name:
                grads[b_name] = g.sum(axis=0)
            g = g @ p[w_name].T
        elif isinstance(layer, Flatten):
            g = g.reshape(entry)
        elif isinstance(layer, SparseEnd):
            if len(entry) != g.shape[1]:
                g = g[:, entry]
        elif isinstance(layer, MaxPool):
            arg, x_shape = entry
            g = pool_backward(g, arg, x_shape, layer.k, layer.stride)
        elif isinstance(layer, ReLU):
            g = g * entry
        elif isinstance(layer, Conv):
            cols, x_shape, w, v_out, v_in, scale = entry
            if scale != 1.0:
                g = g * scale
            dx, dw, db = conv_backward(g, cols, w, x_shape, layer.stride, layer.padding)
            w_name, b_name = param_names(spec, i)
            if v_out is None and v_in is None:
                grads[w_name] = dw
            else:
                rows = v_out if v_out is not None else np.arange(layer.c_out)
                cols_ = v_in if v_in is not None else np.arange(p[w_name].shape[1])
                grads[w_name][np.ix_(rows, cols_)] = dw
            if b_name:
                if v_out is None:
                    grads[b_name] = db
                else:
                    grads[b_name][v_out] = db
            g = dx
        # SparseBegin: nothing to do
    return grads


def loss_and_grads(spec: NetworkSpec, weights: Weights, x: np.ndarray, labels: np.ndarray,
                   masks: MaskSet | None = None) -> tuple[float, dict[str, np.ndarray]]:
    training = masks is not None
    logits, cache = forward(spec, weights, x, masks, training=training)
    loss, dlogits = softmax_xent(logits, np.asarray(labels))
    return loss, backward(spec, weights, cache, dlogits)


def sgd_step(weights: Weights, grads: dict[str, np.ndarray], lr: float, momentum: float = 0.9,
             weight_decay: float = 1e-4, trainable: dict[str, np.ndarray] | None = None) -> Weights:
    """In-place SGD with momentum and L2 weight decay (PyTorch convention).

    ``trainable`` restricts the update (and the buffer) to selected entries,
    for server-side sub-models whose other weights never reach the device.
    """
    for name, w in weights.params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        v = weights.momentum[name]
        if trainable is None:
            v *= momentum
            v += g + weight_decay * w
            w -= lr * v
        else:
            m = trainable[name]
            v[m] = momentum * v[m] + (g[m] + weight_decay * w[m])
            w[m] -= lr * v[m]
    return weights


def predict(spec: NetworkSpec, weights: Weights, images: np.ndarray, batch_size: int = 512) -> np.ndarray:
    out = []
    for s in range(0, len(images), batch_size):
        logits, _ = forward(spec, weights, images[s:s + batch_size])
        out.append(logits.argmax(axis=1))
    return np.concatenate(out)


def evaluate(spec: NetworkSpec, weights: Weights, dataset, batch_size: int = 512) -> float:
    """Top-1 accuracy of the full model."""
    images, labels = dataset.images, dataset.labels
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(spec, weights, images, batch_size) == labels))
