"""Grouping, parity splits, scaling, windowing and rolling-origin CV folds."""

from dataclasses import dataclass, field, replace
import logging

import numpy as np

from .errors import ParameterError, ParseError, SplitError
from .rig import FEATURES

log = logging.getLogger(__name__)


def assign_groups(ds, min_samples=1):
    """Number experiments chronologically from 1 and drop invalid ones.

    Numbering happens before exclusion, so a dropped experiment leaves a gap
    and the parity of every remaining group still reflects its position in
    the recording order.
    """
    if not ds:
        raise ParameterError("dataset is empty")
    kept = []
    for index, exp in enumerate(ds, start=1):
        if exp.n_samples < min_samples:
            log.info("excluding experiment %d: %d samples < %d", index, exp.n_samples, min_samples)
            continue
        if not (np.all(np.isfinite(exp.channels.data)) and np.all(np.isfinite(exp.truth.data))):
            log.info("excluding experiment %d: non-finite values", index)
            continue
        kept.append(exp if exp.group_id == index else replace(exp, group_id=index))
    return kept


@dataclass(frozen=True)
class SplitPlan:
    parity: str
    seed: int
    train_groups: tuple
    val_groups: tuple
    test_groups: tuple

    def role(self, group_id):
        if group_id in self.train_groups:
            return "train"
        if group_id in self.val_groups:
            return "val"
        if group_id in self.test_groups:
            return "test"
        return None

    def to_text(self):
        def ids(g):
            return ",".join(str(i) for i in g)

        return (
            f"parity={self.parity}\nseed={self.seed}\n"
            f"train_groups={ids(self.train_groups)}\n"
            f"val_groups={ids(self.val_groups)}\n"
            f"test_groups={ids(self.test_groups)}\n"
        )

    @classmethod
    def from_text(cls, text):
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ParseError(f"expected key=value, got {line!r}", lineno)
            values[key.strip()] = value.strip()
        try:
            groups = {
                k: tuple(int(v) for v in values[k].split(",") if v)
                for k in ("train_groups", "val_groups", "test_groups")
            }
            return cls(values["parity"], int(values["seed"]), **groups)
        except (KeyError, ValueError) as exc:
            raise ParseError(f"bad split manifest: {exc}") from None


def _group_ids(ds):
    return sorted(int(getattr(x, "group_id", x)) for x in ds)


def make_split(ds, parity, val_fraction=1 / 3, seed=0):
    """Train on one parity; carve a seeded validation share out of the other."""
    if parity not in ("even", "odd"):
        raise ParameterError(f"parity must be 'even' or 'odd', got {parity!r}")
    groups = _group_ids(ds)
    want = 0 if parity == "even" else 1
    train = [g for g in groups if g % 2 == want]
    other = [g for g in groups if g % 2 != want]
    if len(train) < 3 or len(other) < 3:
        raise SplitError(
            f"need >= 3 groups of each parity, got {len(train)} {parity} and {len(other)} other"
        )
    n_val = min(max(int(round(len(other) * val_fraction)), 1), len(other) - 1)
    rng = np.random.default_rng(seed)
    val = sorted(int(g) for g in rng.choice(other, size=n_val, replace=False))
    test = [g for g in other if g not in set(val)]
    return SplitPlan(parity, int(seed), tuple(train), tuple(val), tuple(test))


@dataclass(frozen=True)
class WindowConfig:
    window_len: int = 1
    stride: int = 1
    # "edge" repeats an experiment's first sample when it is shorter than
    # the window; only the per-experiment-mean product needs it
    pad: str = "none"

    def __post_init__(self):
        if self.window_len < 1 or self.stride < 1:
            raise ParameterError("window_len and stride must be >= 1")
        if self.pad not in ("none", "edge"):
            raise ParameterError(f"unknown pad mode {self.pad!r}")


@dataclass(eq=False)
class WindowSet:
    """Stacked windowed samples.

    ``X`` has shape ``(n, D, N_w)`` with the last column at time ``t``;
    ``t`` is the 1-based sample index of the target inside its experiment.
    ``apparent`` keeps the unscaled main-meter reading at ``t`` for the
    no-model baseline.
    """

    X: np.ndarray
    y: np.ndarray
    group_id: np.ndarray
    t: np.ndarray
    gvf: np.ndarray
    apparent: np.ndarray
    scaled: bool = False

    def __len__(self):
        return len(self.y)

    @property
    def window_len(self):
        return self.X.shape[2]

    def view(self, window_len):
        """Same targets, only the most recent ``window_len`` columns."""
        if window_len > self.window_len:
            raise ParameterError(f"cannot widen windows from {self.window_len} to {window_len}")
        return self._with(X=self.X[:, :, self.window_len - window_len :])

    def subset(self, mask):
        return WindowSet(
            self.X[mask], self.y[mask], self.group_id[mask], self.t[mask],
            self.gvf[mask], self.apparent[mask], self.scaled,
        )

    def in_groups(self, groups):
        return self.subset(np.isin(self.group_id, np.asarray(list(groups), dtype=int)))

    def targets(self):
        return sorted(zip(self.group_id.tolist(), self.t.tolist(), self.y.tolist()))

    def _with(self, **changes):
        fields_ = dict(
            X=self.X, y=self.y, group_id=self.group_id, t=self.t,
            gvf=self.gvf, apparent=self.apparent, scaled=self.scaled,
        )
        fields_.update(changes)
        return WindowSet(**fields_)


def _experiment_windows(exp, cfg):
    x = exp.channels.data
    y = exp.truth.data[0]
    n_w = cfg.window_len
    n = x.shape[1]
    if n < n_w:
        if cfg.pad != "edge":
            raise ParameterError(
                f"experiment {exp.group_id} has {n} samples, window needs {n_w}"
            )
        pad = n_w - n
        x = np.concatenate([np.repeat(x[:, :1], pad, axis=1), x], axis=1)
        ends = np.array([n_w - 1])
        t = np.array([n])
        y_t = y[-1:]
    else:
        ends = np.arange(n_w - 1, n, cfg.stride)
        t = ends + 1
        y_t = y[ends]
    idx = ends[:, None] + np.arange(-n_w + 1, 1)[None, :]
    X = np.transpose(x[:, idx], (1, 0, 2))
    main = FEATURES.index("apparent_mf_main")
    return X, y_t, t, X[:, main, -1].copy()


def make_windows(experiments, cfg):
    parts = [(exp, *_experiment_windows(exp, cfg)) for exp in experiments]
    if not parts:
        d = len(FEATURES)
        empty = np.empty(0)
        return WindowSet(np.empty((0, d, cfg.window_len)), empty, np.empty(0, int), np.empty(0, int), empty, empty)
    return WindowSet(
        X=np.concatenate([p[1] for p in parts]),
        y=np.concatenate([p[2] for p in parts]),
        group_id=np.concatenate([np.full(len(p[2]), p[0].group_id, dtype=int) for p in parts]),
        t=np.concatenate([p[3] for p in parts]).astype(int),
        gvf=np.concatenate([np.full(len(p[2]), p[0].op.gvf) for p in parts]),
        apparent=np.concatenate([p[4] for p in parts]),
    )


def build_windows(ds, plan, cfg):
    """Windows for the train, validation and test roles of ``plan``."""
    by_role = {"train": [], "val": [], "test": []}
    for exp in ds:
        role = plan.role(exp.group_id)
        if role is not None:
            by_role[role].append(exp)
    return {role: make_windows(exps, cfg) for role, exps in by_role.items()}


@dataclass(frozen=True, eq=False)
class Scaler:
    x_min: np.ndarray
    x_max: np.ndarray
    y_min: float
    y_max: float
    degenerate: tuple = field(default=())

    def _x_span(self):
        span = self.x_max - self.x_min
        return np.where(span > 0, span, 1.0)

    def transform_x(self, X):
        out = (X - self.x_min[None, :, None]) / self._x_span()[None, :, None]
        if any(self.degenerate):
            out[:, np.asarray(self.degenerate), :] = 0.0
        return out

    def transform_y(self, y):
        span = self.y_max - self.y_min
        return (np.asarray(y) - self.y_min) / (span if span > 0 else 1.0)

    def inverse_y(self, y_scaled):
        span = self.y_max - self.y_min
        return np.asarray(y_scaled) * (span if span > 0 else 1.0) + self.y_min


def fit_scaler(train_windows):
    if len(train_windows) == 0:
        raise ParameterError("cannot fit a scaler on an empty training set")
    if train_windows.scaled:
        raise ParameterError("training windows are already scaled")
    X = train_windows.X
    x_min = X.min(axis=(0, 2))
    x_max = X.max(axis=(0, 2))
    degenerate = tuple(bool(v) for v in (x_max <= x_min))
    for name, flag in zip(FEATURES, degenerate):
        if flag:
            log.warning("feature %s is constant on the training set; scaled to 0", name)
    return Scaler(x_min, x_max, float(train_windows.y.min()), float(train_windows.y.max()), degenerate)


def apply_scaler(scaler, windows):
    """Min-max scale features and target; values outside the training range are kept."""
    if windows.scaled:
        raise ParameterError("windows are already scaled")
    return windows._with(X=scaler.transform_x(windows.X), y=scaler.transform_y(windows.y), scaled=True)


@dataclass(eq=False)
class SplitData:
    """Scaled train/validation windows plus the raw test windows.

    The test windows stay in physical units; they are only scaled (with the
    training scaler) at prediction time, after training has finished.
    """

    train: WindowSet
    val: WindowSet
    test: WindowSet
    scaler: Scaler


def scale_split(windows, window_len=None):
    """Fit the scaler on the training view and apply it to train and validation."""
    def view(ws):
        return ws if window_len is None else ws.view(window_len)

    train, val, test = view(windows["train"]), view(windows["val"]), view(windows["test"])
    scaler = fit_scaler(train)
    return SplitData(apply_scaler(scaler, train), apply_scaler(scaler, val), test, scaler)


def cv_folds(train_groups, k=5):
    """Expanding-origin folds over ``k + 1`` contiguous chronological blocks."""
    groups = sorted(int(g) for g in train_groups)
    if k < 1 or len(groups) < k + 1:
        raise SplitError(f"{len(groups)} groups cannot form {k} rolling folds")
    blocks = [list(map(int, b)) for b in np.array_split(np.asarray(groups), k + 1)]
    return [
        (sum(blocks[: i + 1], []), blocks[i + 1])
        for i in range(k)
    ]
