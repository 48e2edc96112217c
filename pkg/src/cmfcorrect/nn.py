"""Small regressors written directly in numpy.

Three model kinds share one machinery:

* ``mlp``  - one input column ``x_t`` -> dense ReLU layers -> scalar
* ``mlpw`` - the whole ``D x N_w`` window flattened feature-major -> same body
* ``cnn``  - Conv1D(5->16) ReLU -> Conv1D(16->8) ReLU -> global average
  pool over time -> Dense(8->16) ReLU -> Dense(16->1)

All parameters of a model live in one flat float64 vector; layers see views
into it.  That keeps the optimizer a handful of vector operations, which
matters because training runs with a batch size of two.
"""

from dataclasses import asdict, dataclass
from functools import lru_cache
import json
import statistics
import time

import numpy as np

from .errors import NumericError, ParameterError, ParseError, ShapeError

KINDS = ("mlp", "mlpw", "cnn")
DEFAULT_HIDDEN = {"mlp": (8,), "mlpw": (16,), "cnn": (16,)}
DEFAULT_CHANNELS = (16, 8)
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    window_len: int = 1
    n_features: int = 5
    hidden: tuple = None
    channels: tuple = None
    kernel_size: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown model kind {self.kind!r}")
        if self.hidden is None:
            object.__setattr__(self, "hidden", DEFAULT_HIDDEN[self.kind])
        if self.channels is None:
            object.__setattr__(self, "channels", DEFAULT_CHANNELS if self.kind == "cnn" else ())
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.kind == "mlp" and self.window_len != 1:
            raise ParameterError("mlp takes a single time step (window_len=1)")
        if self.window_len < 1:
            raise ParameterError("window_len must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ParameterError("kernel_size must be odd")

    @property
    def padding(self):
        return (self.kernel_size - 1) // 2

    def with_seed(self, seed):
        return ModelSpec(**{**asdict(self), "seed": int(seed)})


def default_spec(kind, window_len=1, seed=0):
    """Final architectures: MLP 5-8-1, MLPw (5*N_w)-16-1, CNN as documented above."""
    return ModelSpec(kind, window_len=1 if kind == "mlp" else window_len, seed=seed)


# -- layers -------------------------------------------------------------------
# Each forward returns (out, cache); each backward takes (dout, cache) and
# returns (dx, param grads).


def dense_forward(x, W, b):
    return x @ W.T + b, x


def dense_backward(dout, x, W):
    return dout @ W, dout.T @ x, dout.sum(axis=0)


def relu_forward(z):
    return np.maximum(z, 0.0), z > 0


def relu_backward(dout, mask):
    return dout * mask


def _columns(x, k, pad):
    """(B, C, T) -> (B, C*K, T_out) patches; column i covers padded x[i : i+K]."""
    b, c, t = x.shape
    t_out = t + 2 * pad - k + 1
    if pad:
        xp = np.zeros((b, c, t + 2 * pad))
        xp[:, :, pad : pad + t] = x
    else:
        xp = x
    cols = np.empty((b, c, k, t_out))
    for j in range(k):
        cols[:, :, j, :] = xp[:, :, j : j + t_out]
    return cols.reshape(b, c * k, t_out)


def conv1d_forward(x, W, b, pad):
    """``h_i = beta + sum_k w_k x_{i+k-1}`` (cross-correlation) per output channel."""
    o, c, k = W.shape
    cols = _columns(x, k, pad)
    return W.reshape(o, c * k) @ cols + b[None, :, None], cols


def conv1d_backward(dout, cols, W, pad, t_in):
    o, c, k = W.shape
    bsz, _, t_out = dout.shape
    W2 = W.reshape(o, c * k)
    dW = (dout @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(o, c, k)
    db = dout.sum(axis=(0, 2))
    dcols = (W2.T @ dout).reshape(bsz, c, k, t_out)
    dxp = np.zeros((bsz, c, t_in + 2 * pad))
    for j in range(k):
        dxp[:, :, j : j + t_out] += dcols[:, :, j, :]
    return dxp[:, :, pad : pad + t_in], dW, db


def gap_forward(x):
    t = x.shape[2]
    return x.sum(axis=2) / t, t


def gap_backward(dout, t):
    return np.repeat(dout[:, :, None] / t, t, axis=2)


# -- networks -----------------------------------------------------------------


class _Layout:
    """Parameter names, shapes and offsets for one spec."""

    def __init__(self, spec):
        self.spec = spec
        entries = []  # (name, shape, decayed, fan_in)
        if spec.kind == "cnn":
            c_in = spec.n_features
            for i, c_out in enumerate(spec.channels):
                fan_in = c_in * spec.kernel_size
                entries.append((f"conv{i}.w", (c_out, c_in, spec.kernel_size), True, fan_in))
                entries.append((f"conv{i}.b", (c_out,), False, fan_in))
                c_in = c_out
            width = c_in
        else:
            width = spec.n_features * spec.window_len
        for i, h in enumerate(spec.hidden + (1,)):
            entries.append((f"dense{i}.w", (h, width), True, width))
            entries.append((f"dense{i}.b", (h,), False, width))
            width = h
        self.entries = entries
        self.slices = {}
        offset = 0
        for name, shape, _, _ in entries:
            size = int(np.prod(shape))
            self.slices[name] = (slice(offset, offset + size), shape)
            offset += size
        self.size = offset
        self.decay_mask = np.zeros(offset)
        for name, _, decayed, _ in entries:
            if decayed:
                self.decay_mask[self.slices[name][0]] = 1.0
        self.n_conv = len(spec.channels) if spec.kind == "cnn" else 0
        self.n_dense = len(spec.hidden) + 1

    def views(self, flat):
        return {name: flat[sl].reshape(shape) for name, (sl, shape) in self.slices.items()}


@lru_cache(maxsize=64)
def layout(spec):
    return _Layout(spec)


@dataclass(frozen=True, eq=False)
class ModelParams:
    spec: ModelSpec
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (layout(self.spec).size,):
            raise ShapeError(
                f"expected {layout(self.spec).size} parameters, got {theta.shape}"
            )
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def arrays(self):
        return layout(self.spec).views(self.theta)

    def __eq__(self, other):
        return (
            isinstance(other, ModelParams)
            and self.spec == other.spec
            and np.array_equal(self.theta, other.theta)
        )


def init_model(spec):
    """Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    lay = layout(spec)
    rng = np.random.default_rng(spec.seed)
    theta = np.zeros(lay.size)
    for name, shape, decayed, fan_in in lay.entries:
        if decayed:
            bound = np.sqrt(6.0 / fan_in)
            theta[lay.slices[name][0]] = rng.uniform(-bound, bound, int(np.prod(shape)))
    return ModelParams(spec, theta)


def _check_batch(spec, X):
    X = np.asarray(X, dtype=float)
    expected = (spec.n_features, spec.window_len)
    if X.ndim != 3 or X.shape[1:] != expected:
        raise ShapeError(f"expected input of shape (B, {expected[0]}, {expected[1]}), got {X.shape}")
    return X


def _forward(spec, p, X, keep):
    lay = layout(spec)
    caches = []
    if spec.kind == "cnn":
        h = X
        for i in range(lay.n_conv):
            z, cols = conv1d_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"], spec.padding)
            t_in = h.shape[2]
            h, mask = relu_forward(z)
            if keep:
                caches.append((cols, t_in, mask))
        h, t = gap_forward(h)
        if keep:
            caches.append(t)
    else:
        h = X.reshape(X.shape[0], -1)
    for i in range(lay.n_dense):
        z, x_in = dense_forward(h, p[f"dense{i}.w"], p[f"dense{i}.b"])
        if i < lay.n_dense - 1:
            h, mask = relu_forward(z)
        else:
            h, mask = z, None
        if keep:
            caches.append((x_in, mask))
    return h[:, 0], caches


def _backward(spec, p, caches, dyhat, grad):
    lay = layout(spec)
    g = lay.views(grad)
    d = dyhat[:, None]
    for i in reversed(range(lay.n_dense)):
        x_in, mask = caches.pop()
        if mask is not None:
            d = relu_backward(d, mask)
        d, g[f"dense{i}.w"][...], g[f"dense{i}.b"][...] = dense_backward(d, x_in, p[f"dense{i}.w"])
    if spec.kind == "cnn":
        d = gap_backward(d, caches.pop())
        for i in reversed(range(lay.n_conv)):
            cols, t_in, mask = caches.pop()
            d = relu_backward(d, mask)
            d, g[f"conv{i}.w"][...], g[f"conv{i}.b"][...] = conv1d_backward(
                d, cols, p[f"conv{i}.w"], spec.padding, t_in
            )
    return grad


def predict(params, X):
    """Batched forward pass on ``(B, D, N_w)`` windows (scaled domain)."""
    spec = params.spec
    X = _check_batch(spec, X)
    return _forward(spec, params.arrays(), X, keep=False)[0]


def forward(params, X_t):
    """Prediction for a single ``D x N_w`` window."""
    X_t = np.asarray(X_t, dtype=float)
    if X_t.ndim == 1 and params.spec.window_len == 1:
        X_t = X_t[:, None]
    if X_t.ndim != 2:
        raise ShapeError(f"expected a D x N_w window, got shape {X_t.shape}")
    return float(predict(params, X_t[None])[0])


def loss_and_grad(spec, theta, X, y):
    """MSE over the batch and its gradient w.r.t. the flat parameter vector."""
    if len(y) == 0:
        raise ParameterError("empty batch")
    p = layout(spec).views(theta)
    # overflow surfaces as a NumericError below rather than as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        yhat, caches = _forward(spec, p, X, keep=True)
        resid = yhat - y
        loss = float(np.mean(resid * resid))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    grad = _backward(spec, p, caches, 2.0 * resid / len(y), np.empty_like(theta))
    return loss, grad


def backward(params, X, y):
    """Gradients of the batch MSE, keyed by parameter name."""
    X = _check_batch(params.spec, X)
    _, grad = loss_and_grad(params.spec, params.theta, X, np.asarray(y, dtype=float))
    return layout(params.spec).views(grad)


def mse(params, X, y):
    r = predict(params, X) - np.asarray(y)
    return float(np.mean(r * r))


# -- complexity ---------------------------------------------------------------


@dataclass(frozen=True)
class ComplexityReport:
    kind: str
    parameter_count: int
    macs_per_example: int
    latency_us: float | None = None
    latency_std_us: float | None = None


def count_complexity(spec):
    """Parameters and MACs, one multiply-accumulate counted as two operations.

    Convolutions are counted at every output position, padded ones included.
    """
    mults = 0
    if spec.kind == "cnn":
        c_in, t = spec.n_features, spec.window_len
        for c_out in spec.channels:
            t_out = t + 2 * spec.padding - spec.kernel_size + 1
            mults += c_out * c_in * spec.kernel_size * t_out
            c_in, t = c_out, t_out
        width = c_in
    else:
        width = spec.n_features * spec.window_len
    for h in spec.hidden + (1,):
        mults += width * h
        width = h
    return ComplexityReport(spec.kind, layout(spec).size, 2 * mults)


def measure_latency(params, n_trials=1000, warmup=100):
    """Single-example forward latency in microseconds, mean and stdev."""
    x = np.random.default_rng(0).random((1, params.spec.n_features, params.spec.window_len))
    for _ in range(warmup):
        predict(params, x)
    samples = []
    for _ in range(n_trials):
        start = time.perf_counter_ns()
        predict(params, x)
        samples.append((time.perf_counter_ns() - start) / 1000.0)
    stdev = statistics.pstdev(samples) if len(samples) > 1 else 0.0
    return statistics.fmean(samples), stdev


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(params, path):
    doc = {
        "format": "cmfcorrect-checkpoint",
        "version": CHECKPOINT_VERSION,
        "spec": asdict(params.spec),
        "theta": [float(v) for v in params.theta],
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path):
    try:
        with open(path, encoding="ascii") as fh:
            doc = json.load(fh)
        if doc.get("format") != "cmfcorrect-checkpoint" or doc.get("version") != CHECKPOINT_VERSION:
            raise ParseError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
        spec = ModelSpec(**doc["spec"])
        return ModelParams(spec, np.array(doc["theta"], dtype=float))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: {exc}") from None
