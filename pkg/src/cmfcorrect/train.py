"""AdamW training loop with early stopping, rolling-origin tuning and seed sweeps."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import itertools
import logging

import numpy as np

from . import nn
from .errors import CmfError, NumericError, ParameterError
from .evaluation import ErrorVector, EvalReport, compute_metrics
from .splits import apply_scaler, cv_folds, fit_scaler

log = logging.getLogger(__name__)

# (rate label, model kind) -> {parity: (learning rate, weight decay)}
TUNED_PRESETS = {
    ("4s", "mlp"): {"even": (1e-3, 1e-4), "odd": (1e-3, 1e-4)},
    ("4s", "mlpw"): {"even": (1e-4, 1e-4), "odd": (1e-4, 1e-5)},
    ("4s", "cnn"): {"even": (1e-4, 1e-4), "odd": (1e-4, 1e-3)},
    ("60s", "mlp"): {"even": (1e-3, 1e-3), "odd": (1e-3, 1e-5)},
    ("60s", "mlpw"): {"even": (1e-3, 1e-3), "odd": (1e-3, 1e-3)},
    ("60s", "cnn"): {"even": (1e-3, 1e-5), "odd": (1e-3, 1e-5)},
}
WINDOW_LENGTHS = {"4s": 5, "60s": 2}
DEFAULT_WINDOW = 5


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 2
    max_epochs: int = 60
    patience: int = 10
    seed: int = 0
    shuffle: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0 or not self.weight_decay >= 0:
            raise ParameterError("learning_rate and weight_decay must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ParameterError("batch_size, max_epochs and patience must be >= 1")


def preset(rate_label, kind, parity, **overrides):
    """Final hyperparameters per rate/model/parity; other rates reuse the 4 s row."""
    key = (rate_label if (rate_label, kind) in TUNED_PRESETS else "4s", kind)
    if parity not in ("even", "odd"):
        raise ParameterError(f"parity must be 'even' or 'odd', got {parity!r}")
    lr, wd = TUNED_PRESETS[key][parity]
    return TrainConfig(**{"learning_rate": lr, "weight_decay": wd, **overrides})


def window_length(rate_label):
    return WINDOW_LENGTHS.get(rate_label, DEFAULT_WINDOW)


class AdamW:
    """Adam with decoupled weight decay on the entries selected by ``decay_mask``."""

    def __init__(self, size, lr, weight_decay, decay_mask=None, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.decay = np.ones(size) if decay_mask is None else np.asarray(decay_mask, dtype=float)
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad):
        """Update ``theta`` in place."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * grad
        self.v *= b2
        self.v += (1 - b2) * grad * grad
        if self.weight_decay:
            theta -= (self.lr * self.weight_decay) * self.decay * theta
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return theta


class EarlyStopping:
    """Tracks the best validation loss; ``update`` returns True when training should stop."""

    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch, val_loss):
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""

    @property
    def epochs(self):
        return len(self.val_loss)

    def to_tsv(self):
        lines = ["epoch\ttrain_mse\tval_mse"]
        lines += [
            f"{i}\t{tr!r}\t{va!r}"
            for i, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1)
        ]
        lines.append(f"# best_epoch={self.best_epoch}\tstop_reason={self.stop_reason}")
        return "\n".join(lines) + "\n"


def train(spec, train_set, val_set, cfg):
    """Fit ``spec`` on scaled windows; return the best-validation parameters and a log.

    ``spec.seed`` fixes the initial weights, ``cfg.seed`` the batch order.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ParameterError("training and validation sets must be non-empty")
    if not (train_set.scaled and val_set.scaled):
        raise ParameterError("train() expects scaled windows")
    X_val, y_val = val_set.X, val_set.y
    X, y = train_set.X, train_set.y
    lay = nn.layout(spec)
    theta = nn.init_model(spec).theta.copy()
    opt = AdamW(lay.size, cfg.learning_rate, cfg.weight_decay, lay.decay_mask,
                cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopping(cfg.patience)
    tlog = TrainLog()
    best = theta.copy()
    n = len(y)
    bs = cfg.batch_size

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for b, start in enumerate(range(0, n, bs)):
            idx = order[start : start + bs]
            try:
                loss, grad = nn.loss_and_grad(spec, theta, X[idx], y[idx])
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from None
            total += loss * len(idx)
            opt.step(theta, grad)
        val = nn.mse(nn.ModelParams(spec, theta), X_val, y_val)
        if not np.isfinite(val):
            raise NumericError(f"epoch {epoch}: non-finite validation loss")
        tlog.train_loss.append(total / n)
        tlog.val_loss.append(val)
        if val < stopper.best:
            best = theta.copy()
        if stopper.update(epoch, val):
            tlog.stop_reason = f"early stop: no improvement for {cfg.patience} epochs"
            break
    else:
        tlog.stop_reason = "max_epochs"
    tlog.best_epoch = stopper.best_epoch
    return nn.ModelParams(spec, best), tlog


# -- hyperparameter search ----------------------------------------------------


def default_grid():
    return [
        {"learning_rate": lr, "weight_decay": wd}
        for lr, wd in itertools.product((1e-3, 1e-4), (1e-3, 1e-4, 1e-5))
    ]


@dataclass
class TuningResult:
    best: TrainConfig
    scores: list  # (grid point, mean fold MSE, per-fold MSEs)


def tune_hyperparameters(spec, train_windows, grid, k=5, base=None):
    """Pick the grid point with the lowest mean rolling-origin fold MSE.

    ``train_windows`` are the unscaled windows of the training groups; each
    fold refits the scaler on its own fit groups.  Ties go to the larger
    weight decay, then to the smaller learning rate.
    """
    grid = list(grid)
    if not grid:
        raise ParameterError("empty hyperparameter grid")
    base = base or TrainConfig()
    folds = cv_folds(np.unique(train_windows.group_id), k)
    scores = []
    for point in grid:
        cfg = replace(base, **point)
        fold_mse = []
        for fit_groups, eval_groups in folds:
            fit = train_windows.in_groups(fit_groups)
            ev = train_windows.in_groups(eval_groups)
            scaler = fit_scaler(fit)
            fit_s, ev_s = apply_scaler(scaler, fit), apply_scaler(scaler, ev)
            params, tlog = train(spec, fit_s, ev_s, cfg)
            fold_mse.append(min(tlog.val_loss))
        mean = float(np.mean(fold_mse))
        log.info("grid point %s: mean fold MSE %.6g", point, mean)
        scores.append((point, mean, fold_mse))
    winner = min(
        scores, key=lambda s: (s[1], -s[0].get("weight_decay", base.weight_decay),
                               s[0].get("learning_rate", base.learning_rate))
    )
    return TuningResult(replace(base, **winner[0]), scores)


# -- seed sweep ---------------------------------------------------------------


@dataclass
class SeedRun:
    seed: int
    params: nn.ModelParams | None
    log: TrainLog | None
    errors: ErrorVector | None  # test-set predictions in kg/h
    report: EvalReport | None
    error: str | None = None


def _run_seed(args):
    spec, data, cfg, seed = args
    try:
        params, tlog = train(spec.with_seed(seed), data.train, data.val, replace(cfg, seed=seed))
        test = data.test
        y_hat = data.scaler.inverse_y(nn.predict(params, data.scaler.transform_x(test.X)))
        ev = ErrorVector(test.y, y_hat, test.gvf, seed)
        return SeedRun(seed, params, tlog, ev, compute_metrics(ev))
    except CmfError as exc:
        return SeedRun(seed, None, None, None, None, f"{type(exc).__name__}: {exc}")


def seed_sweep(spec, data, cfg, seeds, jobs=1):
    """Train one model per seed on fixed splits; results are ordered by seed.

    The seed drives both weight initialisation and batch shuffling. A failed
    seed is recorded with its error and the sweep carries on.
    """
    seeds = sorted(int(s) for s in seeds)
    if not seeds:
        raise ParameterError("need at least one seed")
    tasks = [(spec, data, cfg, s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_seed, tasks))
    else:
        runs = [_run_seed(t) for t in tasks]
    failed = [r.seed for r in runs if r.error]
    if failed:
        log.warning("seeds failed: %s", failed)
    return runs
