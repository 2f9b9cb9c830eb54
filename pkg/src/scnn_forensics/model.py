"""The shallow chroma CNN: parameters, forward pass, training and persistence.

Layer stack for a 32x32 RGB patch::

    CrCb (32,32,2) -> conv1+ReLU (30,30,32) -> conv2+ReLU (28,28,32)
    -> flatten 25088 -> dense1+ReLU 64 -> dropout -> dense2 1 -> sigmoid
"""

import logging
import struct
from dataclasses import dataclass, fields, replace

import numpy as np

from . import nn
from .colorspace import BT601, rgb_to_crcb
from .errors import DataError, FormatError, ShapeError, TensorShapeError

log = logging.getLogger(__name__)

PATCH = 32
N_FILTERS = 32
HIDDEN = 64
FEATURE_SIDE = PATCH - 4
FLAT = FEATURE_SIDE * FEATURE_SIDE * N_FILTERS

PARAM_SHAPES = {
    "conv1.filters": (N_FILTERS, 3, 3, 2),
    "conv1.bias": (N_FILTERS,),
    "conv2.filters": (N_FILTERS, 3, 3, N_FILTERS),
    "conv2.bias": (N_FILTERS,),
    "dense1.weights": (FLAT, HIDDEN),
    "dense1.bias": (HIDDEN,),
    "dense2.weights": (HIDDEN, 1),
    "dense2.bias": (1,),
}

WEIGHTS_MAGIC = b"SCNW"
WEIGHTS_VERSION = 1


@dataclass
class ScnnParams:
    conv1_filters: np.ndarray
    conv1_bias: np.ndarray
    conv2_filters: np.ndarray
    conv2_bias: np.ndarray
    dense1_weights: np.ndarray
    dense1_bias: np.ndarray
    dense2_weights: np.ndarray
    dense2_bias: np.ndarray

    @staticmethod
    def attr(name):
        return name.replace(".", "_")

    def named(self):
        """``(dotted-name, array)`` pairs in canonical order."""
        return [(name, getattr(self, self.attr(name))) for name in PARAM_SHAPES]

    def __getitem__(self, name):
        return getattr(self, self.attr(name))

    def __setitem__(self, name, value):
        setattr(self, self.attr(name), value)

    def layer_counts(self):
        counts = {}
        for name, arr in self.named():
            layer = name.split(".")[0]
            counts[layer] = counts.get(layer, 0) + arr.size
        return counts

    def n_params(self):
        return sum(arr.size for _, arr in self.named())

    def copy(self):
        return ScnnParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    @classmethod
    def zeros(cls, dtype=nn.DTYPE):
        return cls(**{cls.attr(n): np.zeros(s, dtype=dtype) for n, s in PARAM_SHAPES.items()})


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 64
    max_epochs: int = 20
    dropout_rate: float = 0.5
    seed: int = 0
    laplacian_fraction: float = 0.2


def glorot_bound(shape):
    if len(shape) == 4:
        cout, kh, kw, cin = shape
        fan_in, fan_out = kh * kw * cin, kh * kw * cout
    else:
        fan_in, fan_out = shape
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(config=None, rng=None):
    """Glorot-uniform weights, zero biases, Laplacian-seeded conv1 filters."""
    config = config or TrainConfig()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    params = ScnnParams.zeros()
    for name, shape in PARAM_SHAPES.items():
        if name.endswith("bias"):
            continue
        bound = glorot_bound(shape)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(nn.DTYPE)
    n_lap = int(np.floor(config.laplacian_fraction * N_FILTERS))
    chosen = rng.choice(N_FILTERS, size=n_lap, replace=False)
    for k in chosen:
        params.conv1_filters[k] = nn.LAPLACIAN[:, :, None]
    return params


def laplacian_filters(params):
    """Indices of conv1 filters whose every input slice equals the Laplacian."""
    hits = [k for k in range(N_FILTERS)
            if np.array_equal(params.conv1_filters[k],
                              np.broadcast_to(nn.LAPLACIAN[:, :, None], (3, 3, 2)))]
    return hits


def _as_patch_batch(patches):
    x = np.asarray(patches)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (PATCH, PATCH, 3):
        raise ShapeError(f"patches must be (n, 32, 32, 3) RGB, got shape {np.shape(patches)}")
    return x.astype(nn.DTYPE, copy=False)


def conv_features(params, crcb, tape=None, counter=None):
    """conv1+ReLU -> conv2+ReLU on chroma input of any spatial size >= 5x5."""
    h = nn.relu(nn.conv2d_valid(crcb, params.conv1_filters, params.conv1_bias,
                                tape=tape, name="conv1", counter=counter), tape=tape)
    return nn.relu(nn.conv2d_valid(h, params.conv2_filters, params.conv2_bias,
                                   tape=tape, name="conv2", counter=counter), tape=tape)


def dense_head(params, flat, mode="infer", rng=None, dropout_rate=0.5, tape=None,
               counter=None):
    """dense1+ReLU -> dropout -> dense2 -> sigmoid on flattened feature slices."""
    h = nn.relu(nn.dense(flat, params.dense1_weights, params.dense1_bias,
                         tape=tape, name="dense1", counter=counter), tape=tape)
    h = nn.dropout(h, dropout_rate, mode, rng, tape=tape)
    z = nn.dense(h, params.dense2_weights, params.dense2_bias,
                 tape=tape, name="dense2", counter=counter)
    return nn.sigmoid(z, tape=tape)[..., 0]


def forward(params, patches, mode="infer", rng=None, dropout_rate=0.5,
            constants=BT601, tape=None, counter=None):
    """Tampered-boundary probability for one patch (scalar) or a batch."""
    single = np.ndim(patches) == 3
    x = _as_patch_batch(patches)
    crcb = rgb_to_crcb(x, constants)
    feats = conv_features(params, crcb, tape=tape, counter=counter)
    flat = nn.flatten(feats, tape=tape)
    out = dense_head(params, flat, mode, rng, dropout_rate, tape=tape, counter=counter)
    return float(out[0]) if single else out


def stage_shapes(params, patch):
    """Shapes after each stage for one patch, batch axis dropped."""
    x = _as_patch_batch(patch)
    crcb = rgb_to_crcb(x)
    h1 = nn.relu(nn.conv2d_valid(crcb, params.conv1_filters, params.conv1_bias))
    h2 = nn.relu(nn.conv2d_valid(h1, params.conv2_filters, params.conv2_bias))
    flat = nn.flatten(h2)
    d1 = nn.relu(nn.dense(flat, params.dense1_weights, params.dense1_bias))
    d2 = nn.dense(d1, params.dense2_weights, params.dense2_bias)
    return [a.shape[1:] for a in (x, crcb, h1, h2, flat, d1, d2)]


def loss_and_grads(params, patches, labels, mode="train", rng=None, dropout_rate=0.5,
                   constants=BT601):
    """Mean BCE over the batch and its gradient for every parameter tensor."""
    tape = nn.Tape()
    labels = np.asarray(labels, dtype=nn.DTYPE).reshape(-1)
    probs = forward(params, _as_patch_batch(patches), mode, rng, dropout_rate,
                    constants, tape=tape)
    loss = float(nn.bce_loss(probs, labels).mean())
    g = nn.bce_grad(probs, labels) / nn.DTYPE(len(labels))
    grads = nn.backward(tape, g[:, None])
    return loss, grads


def predict_proba(params, patches, batch_size=256, constants=BT601):
    x = _as_patch_batch(patches)
    out = np.empty(len(x), dtype=nn.DTYPE)
    for start in range(0, len(x), batch_size):
        out[start:start + batch_size] = forward(params, x[start:start + batch_size],
                                                constants=constants)
    return out


def accuracy(params, patches, labels, constants=BT601):
    if len(labels) == 0:
        return float("nan")
    pred = predict_proba(params, patches, constants=constants) > 0.5
    return float(np.mean(pred == (np.asarray(labels) > 0)))


def train(params, train_set, val_set, config=None, constants=BT601):
    """Mini-batch momentum SGD on mean BCE.

    ``train_set`` and ``val_set`` are ``(patches, labels)`` pairs. Returns the
    parameters from the epoch with the best validation accuracy and a list of
    per-epoch dicts ``{epoch, train_loss, val_accuracy, steps}``.
    """
    config = config or TrainConfig()
    x_train, y_train = train_set
    x_val, y_val = val_set
    x_train = _as_patch_batch(x_train)
    y_train = np.asarray(y_train).reshape(-1)
    if len(x_train) == 0 or len(x_val) == 0:
        raise DataError("training and validation sets must be non-empty")
    if len(np.unique(y_train)) < 2:
        raise DataError("training set must contain both boundary and normal patches")

    rng = np.random.default_rng(config.seed)
    params = params.copy()
    velocity = {name: np.zeros_like(arr) for name, arr in params.named()}
    lr = nn.DTYPE(config.learning_rate)
    mu = nn.DTYPE(config.momentum)
    best, best_acc = params.copy(), -1.0
    history = []
    steps = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(x_train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_grads(params, x_train[idx], y_train[idx], "train", rng,
                                         config.dropout_rate, constants)
            for name, arr in params.named():
                v = velocity[name]
                v *= mu
                v -= lr * grads[name]
                arr += v
            losses.append(loss * len(idx))
            steps += 1
        val_acc = accuracy(params, x_val, y_val, constants)
        record = {"epoch": epoch, "train_loss": float(np.sum(losses) / len(x_train)),
                  "val_accuracy": val_acc, "steps": steps}
        history.append(record)
        log.info("epoch %d loss %.4f val_acc %.4f", epoch, record["train_loss"], val_acc)
        if val_acc > best_acc:
            best, best_acc = params.copy(), val_acc
    return best, history


def save_params(params, path):
    out = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(PARAM_SHAPES))]
    for name, arr in params.named():
        raw = name.encode("ascii")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated weight file: need {n} bytes for {what} "
                              f"at offset {self.pos}, have {len(self.data) - self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_params(path):
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    if rd.take(4, "magic") != WEIGHTS_MAGIC:
        raise FormatError("bad magic: not an SCNW weight file")
    version = rd.u32("version")
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported SCNW version {version}")
    count = rd.u32("tensor count")
    if count != len(PARAM_SHAPES):
        raise FormatError(f"expected {len(PARAM_SHAPES)} tensors, file has {count}")
    tensors = {}
    for _ in range(count):
        name = rd.take(rd.u32("name length"), "name").decode("ascii", errors="replace")
        if name not in PARAM_SHAPES or name in tensors:
            raise FormatError(f"unexpected tensor {name!r}")
        rank = rd.u32(f"{name} rank")
        dims = tuple(struct.unpack(f"<{rank}I", rd.take(4 * rank, f"{name} dims")))
        if dims != PARAM_SHAPES[name]:
            raise TensorShapeError(f"shape mismatch for {name}: file has {dims}, "
                                   f"expected {PARAM_SHAPES[name]}")
        n = int(np.prod(dims))
        tensors[name] = np.frombuffer(rd.take(4 * n, f"{name} data"), dtype="<f4") \
            .reshape(dims).astype(nn.DTYPE)
    if rd.pos != len(rd.data):
        raise FormatError(f"{len(rd.data) - rd.pos} trailing bytes after last tensor")
    params = ScnnParams.zeros()
    for name, arr in tensors.items():
        params[name] = arr
    return params


def with_dtype(params, dtype):
    return replace(params, **{f.name: getattr(params, f.name).astype(dtype)
                              for f in fields(params)})
