"""Hash functions ``sign(psi(x))`` trained against target codes.

``psi`` is either linear or a one-hidden-layer tanh network. Training
minimizes the per-bit hinge loss ``max(0, 1 - u_t psi_t(x))``, a convex upper
bound on the number of mismatched bits, by mini-batch SGD with momentum.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import AssignmentError, DataFormatError, TrainingDivergenceError
from .pursuit import CodeMatrix

ARCHS = ("linear", "hidden")
MAGIC = b"BMPHMDL1"
_ARCH_TAG = {"linear": 0, "hidden": 1}


@dataclass
class TargetAssignment:
    """Item-level target codes plus the item row of each training instance."""

    targets: CodeMatrix
    instance_to_item: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.instance_to_item)
        if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
            raise AssignmentError("instance_to_item must be a 1-D integer array")
        if idx.size and (idx.min() < 0 or idx.max() >= self.targets.n):
            raise AssignmentError(
                f"instance mapped outside the {self.targets.n} target rows"
            )
        self.instance_to_item = idx

    def __len__(self):
        return self.instance_to_item.size

    def codes(self):
        """Per-instance target codes as a float (m, b) array of +-1."""
        return self.targets.v[self.instance_to_item].astype(np.float64)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    l2: float = 1e-4

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")


@dataclass
class HashModel:
    arch: str
    weights: list
    biases: list
    # hidden width, 0 for the linear model
    hidden: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def bits(self):
        return self.weights[-1].shape[1]

    def params(self):
        """Parameters in a fixed order: W1, b1[, W2, b2]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return HashModel(self.arch, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.hidden, dict(self.meta))

    def scores(self, x):
        return _forward(self, np.atleast_2d(np.asarray(x, dtype=np.float64)))[0]


def init_model(input_dim, bits, arch="linear", hidden=256, seed=0, rng=None):
    """Weights uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, zero biases."""
    if arch not in ARCHS:
        raise ValueError(f"arch must be one of {ARCHS}")
    rng = np.random.default_rng(seed) if rng is None else rng
    dims = [input_dim, bits] if arch == "linear" else [input_dim, hidden, bits]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        lim = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return HashModel(arch, weights, biases, hidden if arch == "hidden" else 0)


def _forward(model, x):
    if model.arch == "linear":
        return x @ model.weights[0] + model.biases[0], None
    h = np.tanh(x @ model.weights[0] + model.biases[0])
    return h @ model.weights[1] + model.biases[1], h


def loss_and_grad(model, x, u, l2=0.0):
    """Mean hinge surrogate over a batch and its gradient.

    ``x`` is (m, d) and ``u`` is (m, b) with entries +-1. The L2 penalty
    ``(l2/2) * ||params||^2`` covers every weight and bias. Gradients come
    back in :meth:`HashModel.params` order; the subgradient at the hinge
    kink is 0.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    m = x.shape[0]
    s, h = _forward(model, x)
    margin = 1.0 - u * s
    active = margin > 0.0
    data = float(np.sum(np.where(active, margin, 0.0))) / m
    reg = 0.5 * l2 * sum(float(np.sum(p * p)) for p in model.params())

    ds = np.where(active, -u, 0.0) / m
    if model.arch == "linear":
        gw = x.T @ ds + l2 * model.weights[0]
        grads = [gw, ds.sum(axis=0) + l2 * model.biases[0]]
    else:
        w1, w2 = model.weights
        b1, b2 = model.biases
        gw2 = h.T @ ds + l2 * w2
        gb2 = ds.sum(axis=0) + l2 * b2
        dz = (ds @ w2.T) * (1.0 - h * h)
        gw1 = x.T @ dz + l2 * w1
        grads = [gw1, dz.sum(axis=0) + l2 * b1, gw2, gb2]
    return data + reg, grads


def surrogate_loss(model, x, u, l2=0.0):
    """``sum_t max(0, 1 - u_t psi_t(x)) + (l2/2) ||params||^2`` for one sample."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if x.shape != (model.input_dim,) or u.shape != (model.bits,):
        raise ValueError("sample dimensions do not match the model")
    return loss_and_grad(model, x[None, :], u[None, :], l2)[0]


def encode(model, x):
    """Binary codes ``sign(psi(x))`` with ``sign(0) = +1``; keeps 1-D input 1-D."""
    x = np.asarray(x, dtype=np.float64)
    s = model.scores(x)
    codes = np.where(s >= 0, 1, -1).astype(np.int8)
    return codes[0] if x.ndim == 1 else codes


def mismatch_ratio(model, features, assignment):
    """Fraction of predicted bits that disagree with the assigned targets."""
    pred = encode(model, np.atleast_2d(features))
    target = assignment.codes()
    if pred.shape != target.shape:
        raise ValueError(f"{pred.shape[0]} instances but {target.shape[0]} targets")
    return float(np.mean(pred != target))


def train(features, assignment, cfg=TrainConfig(), arch="linear", hidden=256, model=None):
    """Fit a hash model by SGD with momentum on the hinge surrogate.

    Returns ``(model, loss_curve)`` where ``loss_curve[e]`` is the mean batch
    loss during epoch ``e``. Runs are bitwise reproducible for a fixed
    ``cfg.seed``: one generator drives initialization and shuffling.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be (instances, dim)")
    if x.shape[0] != len(assignment):
        raise AssignmentError(
            f"{x.shape[0]} feature rows but {len(assignment)} assigned instances"
        )
    u = assignment.codes()
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = init_model(x.shape[1], u.shape[1], arch, hidden, rng=rng)
    else:
        model = model.copy()
    params = model.params()
    velocity = [np.zeros_like(p) for p in params]

    # overflow surfaces as a non-finite loss and is reported below
    with np.errstate(over="ignore", invalid="ignore"):
        curve = _sgd(model, params, velocity, x, u, cfg, rng)
    if curve and not all(np.isfinite(p).all() for p in params):
        raise TrainingDivergenceError("parameters became non-finite")
    return model, curve


def _sgd(model, params, velocity, x, u, cfg, rng):
    curve = []
    m = x.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(m)
        total, batches = 0.0, 0
        for start in range(0, m, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grad(model, x[idx], u[idx], cfg.l2)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(
                    f"non-finite loss; try a learning_rate below {cfg.learning_rate:g}"
                )
            for p, g, vel in zip(params, grads, velocity):
                vel *= cfg.momentum
                vel -= cfg.learning_rate * g
                p += vel
            total += loss
            batches += 1
        curve.append(total / max(batches, 1))
    return curve


def save_model(model, path, config=None, final_loss=None):
    """Binary model file plus a ``.txt`` sidecar with config and final loss.

    Layout (little-endian): 8-byte magic, u32 arch tag, u32 input_dim,
    u32 hidden, u32 bits, then float64 parameters W1, b1[, W2, b2] row-major.
    """
    header = MAGIC + struct.pack("<4I", _ARCH_TAG[model.arch], model.input_dim,
                                 model.hidden, model.bits)
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params())
    with open(path, "wb") as fh:
        fh.write(header + body)
    lines = [f"arch={model.arch}", f"input_dim={model.input_dim}",
             f"hidden={model.hidden}", f"bits={model.bits}"]
    for k, v in (config or {}).items():
        lines.append(f"{k}={v}")
    if final_loss is not None:
        lines.append(f"final_loss={final_loss!r}")
    with open(str(path) + ".txt", "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 24 or raw[:8] != MAGIC:
        raise DataFormatError(f"{path}: not a model file (bad magic)")
    tag, d, hidden, bits = struct.unpack("<4I", raw[8:24])
    arch = {v: k for k, v in _ARCH_TAG.items()}.get(tag)
    if arch is None:
        raise DataFormatError(f"{path}: unknown arch tag {tag}")
    dims = [d, bits] if arch == "linear" else [d, hidden, bits]
    shapes = []
    for a, b in zip(dims, dims[1:]):
        shapes += [(a, b), (b,)]
    expected = 24 + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f8", offset=24).astype(np.float64)
    params, pos = [], 0
    for s in shapes:
        size = int(np.prod(s))
        params.append(flat[pos:pos + size].reshape(s).copy())
        pos += size
    return HashModel(arch, params[0::2], params[1::2], hidden if arch == "hidden" else 0)
