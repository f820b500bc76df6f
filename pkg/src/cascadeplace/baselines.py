"""Non-recurrent burst predictors: Holt linear smoothing, logistic regression, a tanh MLP.

The two learned baselines see the same per-window inputs as the recurrent
model, with the micro sequence flattened, and are chained through windows
the same way (previous window's probability fed in as a prior).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import ShapeError, ValidationError
from .features import MACRO_COUNT_COLUMNS, MICRO_COUNT_COLUMNS
from .neural import MLP, Adam, bce_with_logits, cosine_lr, log_sigmoid, sigmoid
from .predictor import FIRST_PRIOR, _log_counts, _require_two_classes, _Scaler, class_weights

# --------------------------------------------------------------------------
# Holt's linear (level + trend) smoothing


@dataclass
class HoltState:
    level: float
    trend: float
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValidationError(f"{name}={v} outside (0, 1]")

    def forecast(self, h):
        return self.level + h * self.trend


def holt_fit(series, alpha, beta, level0=None, trend0=None):
    """Run the level/trend recursions over ``series``; default start is (y_1, y_2 - y_1)."""
    y = np.asarray(series, float)
    if y.ndim != 1 or len(y) < 2:
        raise ValidationError("Holt smoothing needs a series of length >= 2")
    level = y[0] if level0 is None else float(level0)
    trend = y[1] - y[0] if trend0 is None else float(trend0)
    st = HoltState(level, trend, alpha, beta)
    for v in y:
        prev = st.level
        st.level = alpha * v + (1 - alpha) * (st.level + st.trend)
        st.trend = beta * (st.level - prev) + (1 - beta) * st.trend
    return st


def holt_forecast(series, h, alpha=0.5, beta=0.5, level0=None, trend0=None):
    return holt_fit(series, alpha, beta, level0, trend0).forecast(h)


def _holt_batch(Y, h, alpha, beta):
    """Vectorized holt_forecast over rows of Y (same recursion, same start)."""
    level = Y[:, 0].copy()
    trend = Y[:, 1] - Y[:, 0]
    for t in range(Y.shape[1]):
        prev = level
        level = alpha * Y[:, t] + (1 - alpha) * (level + trend)
        trend = beta * (level - prev) + (1 - beta) * trend
    return level + h * trend


GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass
class HoltModel:
    alpha: float
    beta: float
    threshold: float

    def forecast(self, series, h):
        return _holt_batch(np.atleast_2d(np.asarray(series, float)), h, self.alpha, self.beta)

    def predict(self, series, h):
        return self.forecast(series, h) >= self.threshold


def holt_train(series, final_size, h, threshold, grid=GRID):
    """Grid-search (alpha, beta) for the smallest squared error of the final-size forecast."""
    Y = np.atleast_2d(np.asarray(series, float))
    target = np.asarray(final_size, float)
    best = None
    for a, b in itertools.product(grid, grid):
        err = float(((_holt_batch(Y, h, a, b) - target) ** 2).mean())
        if best is None or err < best[0]:
            best = (err, a, b)
    return HoltModel(best[1], best[2], threshold)


def cumulative_sizes(fs, n_windows):
    """(C, n_windows) cumulative event counts at the end of each window."""
    return fs.region_hist[:, :n_windows].sum(-1)


# --------------------------------------------------------------------------
# flattened-feature models with prior chaining


class _FlatInputs:
    def __init__(self, n_macro, n_micro_flat):
        self.macro = _Scaler(n_macro)
        self.micro = _Scaler(n_micro_flat)

    def fit(self, macro, micro):
        self.macro.fit(_log_counts(macro, MACRO_COUNT_COLUMNS))
        self.micro.fit(_log_counts(micro, MICRO_COUNT_COLUMNS).reshape(*micro.shape[:-2], -1))

    def __call__(self, macro, ctype, micro, prior):
        macro = np.atleast_2d(np.asarray(macro, float))
        micro = np.asarray(micro, float)
        if micro.ndim == 2:
            micro = micro[None]
        B = len(macro)
        m = self.macro(_log_counts(macro, MACRO_COUNT_COLUMNS))
        f = self.micro(_log_counts(micro, MICRO_COUNT_COLUMNS).reshape(B, -1))
        if f.shape[1] != len(self.micro.mean):
            raise ShapeError(f"flattened micro width {f.shape[1]}, expected {len(self.micro.mean)}")
        p = np.broadcast_to(np.asarray(prior, float), (B,))[:, None]
        return np.hstack([m, np.atleast_2d(ctype), f, p])


class LrModel:
    def __init__(self, n_in):
        self.w = np.zeros(n_in)
        self.b = 0.0
        self.inputs = None

    def logits(self, X):
        return X @ self.w + self.b

    def predict_proba(self, macro, ctype, micro, prior):
        return sigmoid(self.logits(self.inputs(macro, ctype, micro, prior)))


class FfnnModel:
    def __init__(self, n_in, sizes=(64, 32, 16), seed=0):
        self.net = MLP([n_in, *sizes, 1], hidden="tanh", output="linear", rng=np.random.default_rng(seed))
        self.inputs = None

    def params(self):
        return self.net.params()

    def predict_proba(self, macro, ctype, micro, prior):
        z, _ = self.net.forward(self.inputs(macro, ctype, micro, prior))
        return sigmoid(z[:, 0])


def _chain(model, fs, Q):
    C = len(fs)
    probs = np.zeros((C, Q))
    prior = np.full(C, FIRST_PRIOR)
    for k in range(Q):
        prior = model.predict_proba(fs.macro[:, k], fs.ctype, fs.micro[:, k], prior)
        probs[:, k] = prior
    return probs


def chained_probabilities(model, fs, n_windows=None):
    """(C, Q) probabilities with priors chained through windows, as for the recurrent model."""
    return _chain(model, fs, fs.macro.shape[1] if n_windows is None else n_windows)


def _pairs(fs, Q, priors):
    C = len(fs)
    ci, wi = np.divmod(np.arange(C * Q), Q)
    return ci, wi, priors[ci, wi]


def _make_inputs(fs, Q):
    inp = _FlatInputs(fs.macro.shape[2], fs.micro.shape[2] * fs.micro.shape[3])
    inp.fit(fs.macro[:, :Q], fs.micro[:, :Q])
    return inp


def lr_train(fs, n_windows=None, rounds=3, l2=1e-3, balance=True):
    """Weighted logistic regression (L-BFGS); priors re-chained between fitting rounds."""
    y = np.asarray(fs.explosive, bool)
    _require_two_classes(y)
    Q = fs.macro.shape[1] if n_windows is None else n_windows
    inp = _make_inputs(fs, Q)
    C = len(fs)
    n_in = inp(fs.macro[:1, 0], fs.ctype[:1], fs.micro[:1, 0], FIRST_PRIOR).shape[1]
    m = LrModel(n_in)
    m.inputs = inp
    w_c = class_weights(y, balance)
    priors = np.full((C, Q), FIRST_PRIOR)
    for _ in range(rounds):
        ci, wi, pr = _pairs(fs, Q, priors)
        X = inp(fs.macro[ci, wi], fs.ctype[ci], fs.micro[ci, wi], pr)
        t = y[ci].astype(float)
        w = w_c[ci]
        n = len(t)

        def f(theta):
            z = X @ theta[:-1] + theta[-1]
            loss = -(w * (t * log_sigmoid(z) + (1 - t) * log_sigmoid(-z))).sum() / n
            g = w * (sigmoid(z) - t) / n
            reg = 0.5 * l2 * theta[:-1] @ theta[:-1]
            return loss + reg, np.append(X.T @ g + l2 * theta[:-1], g.sum())

        res = minimize(f, np.append(m.w, m.b), jac=True, method="L-BFGS-B")
        m.w, m.b = res.x[:-1].copy(), float(res.x[-1])
        priors[:, 1:] = _chain(m, fs, Q)[:, :-1]
    return m


@dataclass
class FfnnTrainConfig:
    seed: int = 0
    epochs: int = 12
    lr: float = 3e-3
    batch_size: int = 256
    sizes: tuple = (64, 32, 16)
    n_windows: int | None = None
    balance: bool = True
    cosine: bool = True


def ffnn_train(fs, cfg=None, history=None):
    cfg = cfg or FfnnTrainConfig()
    y = np.asarray(fs.explosive, bool)
    _require_two_classes(y)
    Q = fs.macro.shape[1] if cfg.n_windows is None else cfg.n_windows
    inp = _make_inputs(fs, Q)
    n_in = inp(fs.macro[:1, 0], fs.ctype[:1], fs.micro[:1, 0], FIRST_PRIOR).shape[1]
    m = FfnnModel(n_in, cfg.sizes, cfg.seed)
    m.inputs = inp
    opt = Adam(m.params(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    C = len(fs)
    w_c = class_weights(y, cfg.balance)
    losses = [] if history is None else history
    for epoch in range(cfg.epochs):
        if cfg.cosine:
            opt.lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
        priors = np.full((C, Q), FIRST_PRIOR)
        if Q > 1:
            priors[:, 1:] = _chain(m, fs, Q)[:, :-1]
        ci, wi, pr = _pairs(fs, Q, priors)
        X = inp(fs.macro[ci, wi], fs.ctype[ci], fs.micro[ci, wi], pr)
        order = rng.permutation(len(X))
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            b = order[lo:lo + cfg.batch_size]
            z, cache = m.net.forward(X[b])
            loss, dz = bce_with_logits(z[:, 0], y[ci[b]], w_c[ci[b]])
            _, grads = m.net.backward(cache, dz[:, None])
            opt.step(grads)
            total += loss * len(b)
        losses.append(total / len(X))
    return m


def lr_predict(m, fs, n_windows=None):
    return chained_probabilities(m, fs, n_windows)


def ffnn_predict(m, fs, n_windows=None):
    return chained_probabilities(m, fs, n_windows)
