"""Small differentiable classifiers with exact input gradients.

Networks are stacks of dense and 3x3-style 2-D convolution layers with a
softplus after every layer but the last, so every class score is a smooth
function of the input.  Gradients are computed by a hand-written reverse pass;
the same pass yields parameter gradients for the toy trainer.

All model entry points accept a single input of shape ``input_shape`` or a
batch of shape ``(n,) + input_shape``.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, InvalidInputError, TrainingFailedError
from .numerics import as_tensor

__all__ = [
    "Dense",
    "Conv2D",
    "ScoreModel",
    "FunctionModel",
    "Prediction",
    "softplus",
    "sigmoid",
    "forward",
    "grad_input",
    "predict",
    "make_dataset",
    "build_model",
    "train_toy",
    "accuracy",
    "max_input_curvature",
    "save_weights",
    "load_weights",
    "DATASETS",
    "ARCHITECTURES",
]

log = logging.getLogger(__name__)


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Dense:
    kind = "dense"

    def __init__(self, weight, bias):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise InvalidInputError(
                f"dense layer needs weight (out, in) and bias (out,), got "
                f"{self.weight.shape} and {self.bias.shape}"
            )

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def output_shape(self, input_shape):
        if int(np.prod(input_shape)) != self.weight.shape[1]:
            raise InvalidInputError(
                f"dense layer expects {self.weight.shape[1]} inputs, got shape {input_shape}"
            )
        return (self.weight.shape[0],)

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        return flat @ self.weight.T + self.bias, (x.shape, flat)

    def backward(self, dy, cache):
        shape, flat = cache
        grads = {"weight": dy.T @ flat, "bias": dy.sum(axis=0)}
        return (dy @ self.weight).reshape(shape), grads


class Conv2D:
    """Stride-1 convolution with zero 'same' padding on ``(n, C, H, W)`` input."""

    kind = "conv2d"

    def __init__(self, weight, bias):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weight.ndim != 4 or self.bias.shape != (self.weight.shape[0],):
            raise InvalidInputError(
                f"conv2d layer needs weight (out, in, kh, kw) and bias (out,), got "
                f"{self.weight.shape} and {self.bias.shape}"
            )
        kh, kw = self.weight.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise InvalidInputError("conv2d kernels must have odd spatial size")

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[0] != self.weight.shape[1]:
            raise InvalidInputError(
                f"conv2d layer expects ({self.weight.shape[1]}, H, W) input, got {input_shape}"
            )
        return (self.weight.shape[0],) + tuple(input_shape[1:])

    def _columns(self, x):
        kh, kw = self.weight.shape[2:]
        ph, pw = kh // 2, kw // 2
        padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        # (n, C, H, W, kh, kw) -> (n, H, W, C, kh, kw)
        win = sliding_window_view(padded, (kh, kw), axis=(2, 3))
        return win.transpose(0, 2, 3, 1, 4, 5)

    def forward(self, x):
        n, c, h, w = x.shape
        out_c = self.weight.shape[0]
        cols = self._columns(x).reshape(n * h * w, -1)
        y = cols @ self.weight.reshape(out_c, -1).T + self.bias
        return y.reshape(n, h, w, out_c).transpose(0, 3, 1, 2), (x.shape, cols)

    def backward(self, dy, cache):
        (n, c, h, w), cols = cache
        out_c, _, kh, kw = self.weight.shape
        dy_rows = dy.transpose(0, 2, 3, 1).reshape(n * h * w, out_c)
        grads = {
            "weight": (dy_rows.T @ cols).reshape(self.weight.shape),
            "bias": dy_rows.sum(axis=0),
        }
        dcols = (dy_rows @ self.weight.reshape(out_c, -1)).reshape(n, h, w, c, kh, kw)
        ph, pw = kh // 2, kw // 2
        dpad = np.zeros((n, c, h + 2 * ph, w + 2 * pw))
        for i in range(kh):
            for j in range(kw):
                dpad[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dpad[:, :, ph:ph + h, pw:pw + w], grads


LAYER_TYPES = {Dense.kind: Dense, Conv2D.kind: Conv2D}


@dataclass
class Prediction:
    class_index: int
    scores: np.ndarray


class _BatchMixin:
    """Shared single-vs-batch input handling."""

    input_shape: tuple

    def _as_batch(self, x):
        x = as_tensor(x, "x")
        if x.shape == self.input_shape:
            return x[None], False
        if x.shape[1:] == self.input_shape:
            return x, True
        raise InvalidInputError(
            f"input shape {x.shape} does not match model input {self.input_shape}"
        )

    def _class_vector(self, c, n):
        c = np.broadcast_to(np.asarray(c), (n,))
        if not np.issubdtype(c.dtype, np.integer) or np.any(c < 0) or np.any(c >= self.class_count):
            raise InvalidInputError(
                f"class index must be an integer in 0..{self.class_count - 1}, got {c.tolist()}"
            )
        return c

    def predict(self, x):
        """Argmax class (lowest index on ties) for one input, or an array for a batch."""
        scores = self.forward(x)
        if scores.ndim == 1:
            return Prediction(int(np.argmax(scores)), scores)
        return np.argmax(scores, axis=1)


class ScoreModel(_BatchMixin):
    """Feed-forward classifier ``f: R^input_shape -> R^k``.

    Parameters
    ----------
    layers : list of Dense or Conv2D
        Applied in order; softplus follows every layer except the last.
    input_shape : tuple of int
        Shape of one input, ``(d,)`` for vectors or ``(C, H, W)`` for images.
    """

    def __init__(self, layers, input_shape):
        if not layers:
            raise InvalidInputError("model needs at least one layer")
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if len(shape) != 1:
            raise InvalidInputError("final layer must be dense")
        self.class_count = shape[0]
        self.meta = {}

    def _forward_cached(self, xb):
        caches = []
        h = xb
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z, cache = layer.forward(h)
            caches.append(cache)
            if i < last:
                caches.append(z)
                h = softplus(z)
            else:
                h = z
        return h, caches

    def _backward(self, dscores, caches):
        grads = [None] * len(self.layers)
        d = dscores
        for i in range(len(self.layers) - 1, -1, -1):
            if i < len(self.layers) - 1:
                z = caches.pop()
                d = d * sigmoid(z)
            d, grads[i] = self.layers[i].backward(d, caches.pop())
        return d, grads

    def forward(self, x):
        xb, batched = self._as_batch(x)
        scores, _ = self._forward_cached(xb)
        return scores if batched else scores[0]

    def grad_input(self, x, c):
        """Exact gradient of class score ``c`` with respect to the input."""
        xb, batched = self._as_batch(x)
        c = self._class_vector(c, xb.shape[0])
        scores, caches = self._forward_cached(xb)
        dscores = np.zeros_like(scores)
        dscores[np.arange(xb.shape[0]), c] = 1.0
        dx, _ = self._backward(dscores, caches)
        return dx if batched else dx[0]

    def copy(self):
        layers = [type(l)(l.weight.copy(), l.bias.copy()) for l in self.layers]
        return ScoreModel(layers, self.input_shape)


class FunctionModel(_BatchMixin):
    """Wrap an analytic scalar function as a one-class model.

    ``fn`` and ``grad`` must be vectorized over leading axes: given an array of
    shape ``(..., *input_shape)`` they return shapes ``(...)`` and
    ``(..., *input_shape)``.
    """

    def __init__(self, fn, grad, input_shape, name="function"):
        self.fn = fn
        self.grad = grad
        self.input_shape = tuple(input_shape)
        self.class_count = 1
        self.name = name

    def forward(self, x):
        xb, batched = self._as_batch(x)
        scores = np.asarray(self.fn(xb), dtype=np.float64).reshape(-1, 1)
        return scores if batched else scores[0]

    def grad_input(self, x, c=0):
        xb, batched = self._as_batch(x)
        self._class_vector(c, xb.shape[0])
        g = np.asarray(self.grad(xb), dtype=np.float64).reshape(xb.shape)
        return g if batched else g[0]


def forward(model, x):
    return model.forward(x)


def grad_input(model, x, c):
    return model.grad_input(x, c)


def predict(model, x):
    return model.predict(x)


# --- toy data and training -------------------------------------------------

def _two_gaussians(rng, n):
    y = rng.integers(0, 2, size=n)
    means = np.where(y[:, None] == 1, 1.0, -1.0) * np.array([2.0, 0.0])
    x = means + 0.5 * rng.standard_normal((n, 2))
    return x, y


def _blob_bar(rng, n, size=8):
    """Gaussian blobs (class 0) vs. straight bars (class 1), unit L2 norm."""
    y = rng.integers(0, 2, size=n)
    rows, cols = np.mgrid[0:size, 0:size]
    x = np.empty((n, 1, size, size))
    for i in range(n):
        if y[i] == 0:
            r0, c0 = rng.uniform(1.5, size - 2.5, size=2)
            s = rng.uniform(0.8, 1.3)
            img = np.exp(-((rows - r0) ** 2 + (cols - c0) ** 2) / (2 * s * s))
        else:
            img = np.zeros((size, size))
            length = int(rng.integers(4, size - 1))
            pos = int(rng.integers(0, size))
            start = int(rng.integers(0, size - length + 1))
            if rng.random() < 0.5:
                img[pos, start:start + length] = 1.0
            else:
                img[start:start + length, pos] = 1.0
        img = img + 0.05 * rng.standard_normal((size, size))
        x[i, 0] = img / np.linalg.norm(img)
    return x, y


DATASETS = {"two-gaussians": _two_gaussians, "blob-bar": _blob_bar}
ARCHITECTURES = ("mlp", "conv")


def make_dataset(name, rng, n):
    """Draw ``n`` labelled samples ``(x, y)`` from a built-in generator."""
    try:
        gen = DATASETS[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown dataset {name!r}; choose from {sorted(DATASETS)}"
        ) from None
    return gen(rng, n)


def build_model(arch, input_shape, class_count, rng, input_rms=1.0):
    """Randomly initialized fixture architecture.

    ``mlp`` is ``d-16-16-k``; ``conv`` is two 3x3x8 convolutions followed by a
    dense read-out. ``input_rms`` (root-mean-square input coordinate) rescales
    the first layer so its pre-activations start at unit scale.
    """
    input_shape = tuple(input_shape)

    def init(shape, fan_in, scale=1.0):
        return rng.standard_normal(shape) / (scale * np.sqrt(fan_in))

    if arch == "mlp":
        d = int(np.prod(input_shape))
        sizes = [d, 16, 16, class_count]
        layers = [
            Dense(init((o, i), i, input_rms if i == d else 1.0), np.zeros(o))
            for i, o in zip(sizes[:-1], sizes[1:])
        ]
    elif arch == "conv":
        if len(input_shape) != 3:
            raise InvalidInputError("conv architecture needs (C, H, W) inputs")
        c, h, w = input_shape
        layers = [
            Conv2D(init((8, c, 3, 3), 9 * c, input_rms), np.zeros(8)),
            Conv2D(init((8, 8, 3, 3), 72), np.zeros(8)),
            Dense(init((class_count, 8 * h * w), 8 * h * w), np.zeros(class_count)),
        ]
    else:
        raise InvalidInputError(f"unknown architecture {arch!r}; choose from {ARCHITECTURES}")
    return ScoreModel(layers, input_shape)


def accuracy(model, x, y) -> float:
    return float(np.mean(model.predict(x) == y))


def _cross_entropy_grad(scores, y):
    shifted = scores - scores.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    loss = -np.mean(np.log(p[np.arange(len(y)), y]))
    p[np.arange(len(y)), y] -= 1.0
    return loss, p / len(y)


def max_input_curvature(model, x, iters=20, step=1e-4):
    """Largest input-Hessian spectral norm over the inputs ``x`` and all classes.

    Power iteration on central differences of the exact input gradient.
    """
    n = x.shape[0]
    rng = np.random.Generator(np.random.PCG64(0))
    best = 0.0
    for c in range(model.class_count):
        v = rng.standard_normal(x.shape)
        lam = np.zeros(n)
        for _ in range(iters):
            v /= np.linalg.norm(v.reshape(n, -1), axis=1).reshape((n,) + (1,) * (x.ndim - 1))
            hv = (model.grad_input(x + step * v, c) - model.grad_input(x - step * v, c)) / (2 * step)
            lam = np.linalg.norm(hv.reshape(n, -1), axis=1)
            v = hv + 1e-12
        best = max(best, float(lam.max()))
    return best


def train_toy(
    dataset,
    arch,
    rng,
    epochs=10,
    lr=0.05,
    batch_size=32,
    n_train=2000,
    n_test=1000,
    weight_decay=1e-3,
    target_accuracy=0.95,
    curvature_target=0.5,
):
    """Train a fixture classifier with plain mini-batch gradient descent.

    Training data, held-out data and initialization/shuffling use three
    independent child streams of ``rng``, so a given seed always yields the
    same weights.

    After training, the read-out layer is scaled down (when needed) so the
    largest input-Hessian norm measured on 32 training inputs is at most
    ``curvature_target``; positive rescaling of all scores leaves every
    prediction unchanged. Final weights are rounded to float32 so that a
    save/load round trip through the weight file is exact.

    Raises
    ------
    TrainingFailedError
        If held-out accuracy stays below ``target_accuracy`` after ``epochs``
        epochs (always, for a zero budget).
    """
    data_rng, test_rng, fit_rng = rng.spawn(3)
    x, y = make_dataset(dataset, data_rng, n_train)
    x_test, y_test = make_dataset(dataset, test_rng, n_test)
    model = build_model(arch, x.shape[1:], 2, fit_rng, float(np.sqrt(np.mean(x * x))))

    for epoch in range(epochs):
        order = fit_rng.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, batch_size):
            idx = order[start:start + batch_size]
            scores, caches = model._forward_cached(x[idx])
            loss, dscores = _cross_entropy_grad(scores, y[idx])
            total += loss * len(idx)
            _, grads = model._backward(dscores, caches)
            for layer, g in zip(model.layers, grads):
                layer.weight -= lr * (g["weight"] + weight_decay * layer.weight)
                layer.bias -= lr * g["bias"]
        log.debug("epoch %d loss %.5f", epoch, total / n_train)

    if curvature_target is not None:
        curv = max_input_curvature(model, x[:32])
        if curv > curvature_target:
            readout = model.layers[-1]
            readout.weight *= curvature_target / curv
            readout.bias *= curvature_target / curv
        log.debug("input curvature %.4f before calibration", curv)

    for layer in model.layers:
        layer.weight = layer.weight.astype(np.float32).astype(np.float64)
        layer.bias = layer.bias.astype(np.float32).astype(np.float64)

    acc = accuracy(model, x_test, y_test)
    model.meta["held_out_accuracy"] = acc
    if epochs < 1:
        raise TrainingFailedError("epoch budget is zero", acc)
    if acc < target_accuracy:
        raise TrainingFailedError(
            f"training did not reach {target_accuracy:.2f} after {epochs} epochs", acc
        )
    log.info("trained %s/%s: held-out accuracy %.4f", dataset, arch, acc)
    return model


# --- MGW1 weight files -----------------------------------------------------

WEIGHT_MAGIC = b"MGW1\n"


def _pack_record(name, arr):
    raw = name.encode("utf-8")
    arr = np.asarray(arr)
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype("<f4").tobytes(order="C")


def save_weights(model: ScoreModel, path):
    """Write ``model`` as an MGW1 file.

    Records are ``input_shape`` followed by ``layer{i}.{kind}.weight`` and
    ``layer{i}.{kind}.bias`` for each layer in order.
    """
    chunks = [WEIGHT_MAGIC, _pack_record("input_shape", np.array(model.input_shape))]
    for i, layer in enumerate(model.layers):
        for pname, value in layer.params().items():
            chunks.append(_pack_record(f"layer{i}.{layer.kind}.{pname}", value))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def _read_records(blob):
    if not blob.startswith(WEIGHT_MAGIC):
        raise FormatError("missing MGW1 magic header")
    pos = len(WEIGHT_MAGIC)
    records = []
    while pos < len(blob):
        idx = len(records)

        def need(n, what, name=None):
            if pos + n > len(blob):
                label = f"record {idx}" + (f" ({name!r})" if name else "")
                raise FormatError(f"{label}: truncated while reading {what}")

        need(2, "name length")
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        need(nlen, "name")
        try:
            name = blob[pos:pos + nlen].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"record {idx}: name is not valid UTF-8") from None
        pos += nlen
        need(4, "ndim", name)
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        need(4 * ndim, "dims", name)
        dims = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        count = int(np.prod(dims, dtype=np.int64))
        need(4 * count, f"payload of {count} float32 values", name)
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
        pos += 4 * count
        records.append((name, data.astype(np.float64).reshape(dims)))
    return records


def load_weights(path) -> ScoreModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    records = _read_records(blob)
    if not records or records[0][0] != "input_shape":
        raise FormatError("record 0: expected 'input_shape'")
    input_shape = tuple(int(s) for s in records[0][1])
    params = {}
    for idx, (name, value) in enumerate(records[1:], start=1):
        parts = name.split(".")
        if (
            len(parts) != 3
            or not parts[0].startswith("layer")
            or not parts[0][5:].isdigit()
            or parts[1] not in LAYER_TYPES
            or parts[2] not in ("weight", "bias")
        ):
            raise FormatError(f"record {idx} ({name!r}): unrecognized record name")
        key = (int(parts[0][5:]), parts[1])
        params.setdefault(key, {})[parts[2]] = (idx, name, value)
    layers = []
    for expected, key in enumerate(sorted(params)):
        if key[0] != expected:
            raise FormatError(f"layer {expected} is missing")
        entry = params[key]
        if set(entry) != {"weight", "bias"}:
            idx, name, _ = next(iter(entry.values()))
            raise FormatError(f"record {idx} ({name!r}): layer lacks weight or bias")
        try:
            layers.append(LAYER_TYPES[key[1]](entry["weight"][2], entry["bias"][2]))
        except InvalidInputError as exc:
            idx, name, _ = entry["weight"]
            raise FormatError(f"record {idx} ({name!r}): {exc}") from None
    try:
        return ScoreModel(layers, input_shape)
    except InvalidInputError as exc:
        raise FormatError(f"inconsistent layer shapes: {exc}") from None
