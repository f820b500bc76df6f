"""Burst prediction with window-chained priors, and eventual regional popularity.

The burst model reads one observation window at a time: an LSTM runs
over the per-slot micro sequence, attention pools its hidden states, and
the pooled vector is concatenated with the window's macro statistics,
the content-type one-hot and the previous window's predicted burst
probability (0.5 for the first window). A small tanh stack maps that
to a single burst logit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .features import MACRO_COUNT_COLUMNS, MICRO_COUNT_COLUMNS
from .neural import (LSTM, MLP, Adam, Attention, bce_with_logits, cosine_lr, load_checkpoint,
                     save_checkpoint, sigmoid, softmax, softmax_mse, assign_params)

FIRST_PRIOR = 0.5


@dataclass(frozen=True)
class Priori:
    p_r: float = FIRST_PRIOR

    def __post_init__(self):
        if not 0.0 <= float(self.p_r) <= 1.0:
            raise ValidationError(f"prior {self.p_r} outside [0, 1]")


@dataclass
class RollingVerdict:
    burst_window: int | None
    probabilities: list
    priors: list
    predicted_geo: np.ndarray | None = None


def _log_counts(x, cols):
    x = np.array(x, dtype=float, copy=True)
    x[..., list(cols)] = np.log1p(np.maximum(x[..., list(cols)], 0.0))
    return x


class _Scaler:
    """Column standardization with constants fitted on training data."""

    def __init__(self, n):
        self.mean = np.zeros(n)
        self.std = np.ones(n)

    def fit(self, x):
        flat = x.reshape(-1, x.shape[-1])
        self.mean[:] = flat.mean(0)
        sd = flat.std(0)
        self.std[:] = np.where(sd > 1e-12, sd, 1.0)
        return self

    def __call__(self, x):
        return (x - self.mean) / self.std


# --------------------------------------------------------------------------
# burst model


class BurstModel:
    """Per-window burst classifier; ``use_ctype`` / ``use_prior`` drop those inputs entirely."""

    def __init__(self, n_macro=10, n_micro=3, n_ctype=3, hidden=64, fc=(32, 16),
                 use_ctype=True, use_prior=True, seed=0):
        rng = np.random.default_rng(seed)
        self.n_macro, self.n_micro, self.n_ctype = n_macro, n_micro, n_ctype
        self.use_ctype, self.use_prior = bool(use_ctype), bool(use_prior)
        self.hidden, self.fc_sizes = hidden, tuple(fc)
        self.lstm = LSTM(n_micro, hidden, rng, prefix="lstm.")
        self.attn = Attention(hidden, rng, prefix="attn.")
        n_r = n_macro + (n_ctype if use_ctype else 0) + hidden + (1 if use_prior else 0)
        self.fc = MLP([n_r, *fc, 1], hidden="tanh", output="linear", rng=rng, prefix="fc.")
        self.macro_scaler = _Scaler(n_macro)
        self.micro_scaler = _Scaler(n_micro)

    @property
    def n_inputs(self):
        return self.fc.layers[0].n_in

    def params(self):
        out = {}
        for part in (self.lstm, self.attn):
            out.update(part.named_params())
        out.update({f"fc.{k}": v for k, v in self.fc.params().items()})
        return out

    def tensors(self):
        t = dict(self.params())
        t.update({"norm.macro_mean": self.macro_scaler.mean, "norm.macro_std": self.macro_scaler.std,
                  "norm.micro_mean": self.micro_scaler.mean, "norm.micro_std": self.micro_scaler.std})
        return t

    def meta(self):
        return {"kind": "burst", "n_macro": self.n_macro, "n_micro": self.n_micro,
                "n_ctype": self.n_ctype, "hidden": self.hidden, "fc": list(self.fc_sizes),
                "use_ctype": self.use_ctype, "use_prior": self.use_prior}

    def fit_normalization(self, macro, micro):
        self.macro_scaler.fit(_log_counts(macro, MACRO_COUNT_COLUMNS))
        self.micro_scaler.fit(_log_counts(micro, MICRO_COUNT_COLUMNS))

    def _inputs(self, macro, ctype, micro, prior):
        macro = np.atleast_2d(np.asarray(macro, float))
        micro = np.asarray(micro, float)
        if micro.ndim == 2:
            micro = micro[None]
        B = macro.shape[0]
        if macro.shape[1] != self.n_macro or micro.shape[0] != B or micro.shape[2] != self.n_micro:
            raise ShapeError(f"macro {macro.shape} / micro {micro.shape} do not fit the model")
        m = self.macro_scaler(_log_counts(macro, MACRO_COUNT_COLUMNS))
        x = self.micro_scaler(_log_counts(micro, MICRO_COUNT_COLUMNS))
        extra = [m]
        if self.use_ctype:
            ctype = np.atleast_2d(np.asarray(ctype, float))
            if ctype.shape != (B, self.n_ctype):
                raise ShapeError(f"ctype shape {ctype.shape}, expected {(B, self.n_ctype)}")
            extra.append(ctype)
        return x, extra, np.broadcast_to(np.asarray(prior, float), (B,)).reshape(B, 1)

    def forward(self, macro, ctype, micro, prior):
        """Burst logits (B,) and a cache for ``backward``."""
        x, extra, p = self._inputs(macro, ctype, micro, prior)
        hs, c_lstm = self.lstm.forward(x)
        H, c_attn = self.attn.forward(hs)
        parts = [*extra, H] + ([p] if self.use_prior else [])
        R = np.concatenate(parts, axis=1)
        z, c_fc = self.fc.forward(R)
        return z[:, 0], (c_lstm, c_attn, c_fc, R.shape[1])

    def backward(self, cache, dz):
        c_lstm, c_attn, c_fc, _ = cache
        dR, grads = self.fc.backward(c_fc, dz[:, None])
        grads = {f"fc.{k}": v for k, v in grads.items()}
        off = self.n_macro + (self.n_ctype if self.use_ctype else 0)
        dH = dR[:, off:off + self.hidden]
        dhs, g = self.attn.backward(c_attn, dH)
        grads.update({f"attn.{k}": v for k, v in g.items()})
        _, g = self.lstm.backward(c_lstm, dhs)
        grads.update({f"lstm.{k}": v for k, v in g.items()})
        return grads

    def predict_proba(self, macro, ctype, micro, prior):
        z, _ = self.forward(macro, ctype, micro, prior)
        return sigmoid(z)

    def save(self, path):
        save_checkpoint(path, self.tensors(), self.meta())

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        return cls.from_tensors(tensors, meta)

    @classmethod
    def from_tensors(cls, tensors, meta):
        m = cls(meta["n_macro"], meta["n_micro"], meta["n_ctype"], meta["hidden"], tuple(meta["fc"]),
                meta["use_ctype"], meta["use_prior"])
        assign_params(m.tensors(), tensors)
        return m


def predict_window(m, obs, prior=FIRST_PRIOR):
    """Burst probability for one WindowObservation given the chained prior."""
    p_r = prior.p_r if isinstance(prior, Priori) else Priori(float(prior)).p_r
    micro = np.asarray(obs.micro, float)
    if micro.ndim != 2 or micro.shape[1] != m.n_micro:
        raise ShapeError(f"micro sequence shape {micro.shape}, expected (N, {m.n_micro})")
    p = m.predict_proba(obs.macro.vector()[None], np.asarray(obs.macro.ctype_onehot, float)[None],
                        micro[None], p_r)
    return float(p[0])


def rolling_predict(m, windows, threshold=0.5, geo_model=None, geo_seqs=None):
    """Walk windows in order, chaining each probability into the next prior; stop at the first burst."""
    windows = list(windows)
    if not windows:
        raise ValidationError("rolling_predict needs at least one window")
    prior = FIRST_PRIOR
    probs, priors = [], []
    for k, obs in enumerate(windows, start=1):
        priors.append(prior)
        p = predict_window(m, obs, prior)
        probs.append(p)
        if p >= threshold:
            geo = None
            if geo_model is not None and geo_seqs is not None:
                geo = predict_geo(geo_model, geo_seqs[k - 1])
            return RollingVerdict(k, probs, priors, geo)
        prior = p
    return RollingVerdict(None, probs, priors, None)


def chained_probabilities(m, fs, n_windows=None, batch=2048):
    """(C, Q) burst probabilities with priors chained through every window (no early stop)."""
    Q = fs.macro.shape[1] if n_windows is None else n_windows
    C = len(fs)
    probs = np.zeros((C, Q))
    for lo in range(0, C, batch):
        sl = slice(lo, lo + batch)
        prior = np.full(len(fs.content_id[sl]), FIRST_PRIOR)
        for k in range(Q):
            prior = m.predict_proba(fs.macro[sl, k], fs.ctype[sl], fs.micro[sl, k], prior)
            probs[sl, k] = prior
    return probs


def burst_windows(probs, threshold=0.5):
    """First 1-based window with p >= threshold per row, 0 when never."""
    hit = probs >= threshold
    first = np.argmax(hit, axis=1) + 1
    return np.where(hit.any(axis=1), first, 0)


def window_accuracy(probs, explosive, threshold=0.5):
    """Accuracy of the per-window verdict p_k >= threshold, for every window k."""
    y = np.asarray(explosive, bool)[:, None]
    return ((probs >= threshold) == y).mean(0)


@dataclass
class BurstTrainConfig:
    seed: int = 0
    epochs: int = 12
    lr: float = 3e-3
    batch_size: int = 256
    hidden: int = 64
    fc: tuple = (32, 16)
    use_ctype: bool = True
    use_prior: bool = True
    n_windows: int | None = None
    balance: bool = True
    cosine: bool = True


def class_weights(y, balance=True):
    """Per-sample weights; each class weighted by the inverse of its frequency."""
    y = np.asarray(y, bool)
    if not balance:
        return np.ones(len(y))
    pi = y.mean()
    return np.where(y, 0.5 / pi, 0.5 / (1.0 - pi))


def _require_two_classes(y):
    y = np.asarray(y, bool)
    if y.all() or not y.any():
        raise ValidationError(
            f"training labels are single-class ({int(y.sum())} positive of {len(y)}); "
            "burst training needs both explosive and non-explosive cascades")


def train_burst(fs, cfg=None, history=None):
    """Fit a BurstModel on every (cascade, window) pair of ``fs``.

    Priors are recomputed at the start of each epoch by chaining the
    current model through the windows, so later windows train on the
    priors they will actually see at inference time.
    """
    cfg = cfg or BurstTrainConfig()
    y = np.asarray(fs.explosive, bool)
    _require_two_classes(y)
    Q = fs.macro.shape[1] if cfg.n_windows is None else cfg.n_windows
    m = BurstModel(fs.macro.shape[2], fs.micro.shape[3], fs.ctype.shape[1], cfg.hidden, cfg.fc,
                    cfg.use_ctype, cfg.use_prior, seed=cfg.seed)
    m.fit_normalization(fs.macro[:, :Q], fs.micro[:, :Q])
    opt = Adam(m.params(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    C = len(fs)
    w_c = class_weights(y, cfg.balance)
    ci, wi = np.divmod(np.arange(C * Q), Q)
    losses = [] if history is None else history
    for epoch in range(cfg.epochs):
        if cfg.cosine:
            # small late steps keep the model close to the priors it trained on
            opt.lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
        priors = np.full((C, Q), FIRST_PRIOR)
        if Q > 1 and cfg.use_prior:
            priors[:, 1:] = chained_probabilities(m, fs, Q)[:, :-1]
        order = rng.permutation(C * Q)
        total, seen = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            b = order[lo:lo + cfg.batch_size]
            c, k = ci[b], wi[b]
            z, cache = m.forward(fs.macro[c, k], fs.ctype[c], fs.micro[c, k], priors[c, k])
            loss, dz = bce_with_logits(z, y[c], w_c[c])
            opt.step(m.backward(cache, dz))
            total += loss * len(b)
            seen += len(b)
        losses.append(total / seen)
    return m


def burst_loss(m, fs, n_windows=None, balance=True):
    """Weighted BCE over all windows with chained priors (monitoring only)."""
    probs = chained_probabilities(m, fs, n_windows)
    y = np.asarray(fs.explosive, float)[:, None]
    w = class_weights(fs.explosive, balance)[:, None]
    p = np.clip(probs, 1e-12, 1 - 1e-12)
    return float((w * -(y * np.log(p) + (1 - y) * np.log(1 - p))).mean())


# --------------------------------------------------------------------------
# eventual regional distribution


class GeoPredictor:
    """LSTM over N x M cumulative regional proportions, attention, tanh stack, softmax."""

    def __init__(self, n_regions, hidden=64, fc=(64,), seed=0):
        rng = np.random.default_rng(seed)
        self.n_regions, self.hidden, self.fc_sizes = n_regions, hidden, tuple(fc)
        self.lstm = LSTM(n_regions, hidden, rng, prefix="lstm.")
        self.attn = Attention(hidden, rng, prefix="attn.")
        self.fc = MLP([hidden, *fc, n_regions], hidden="tanh", output="linear", rng=rng, prefix="fc.")
        self.scaler = _Scaler(n_regions)

    def params(self):
        out = {}
        for part in (self.lstm, self.attn):
            out.update(part.named_params())
        out.update({f"fc.{k}": v for k, v in self.fc.params().items()})
        return out

    def tensors(self):
        t = dict(self.params())
        t.update({"norm.mean": self.scaler.mean, "norm.std": self.scaler.std})
        return t

    def meta(self):
        return {"kind": "geo", "n_regions": self.n_regions, "hidden": self.hidden, "fc": list(self.fc_sizes)}

    def _check(self, seq):
        seq = np.asarray(seq, float)
        if seq.ndim == 2:
            seq = seq[None]
        if seq.ndim != 3 or seq.shape[2] != self.n_regions:
            raise ShapeError(f"geo sequence shape {seq.shape}, expected (N, {self.n_regions})")
        return seq

    def forward(self, seq):
        x = self.scaler(self._check(seq))
        hs, c_lstm = self.lstm.forward(x)
        H, c_attn = self.attn.forward(hs)
        z, c_fc = self.fc.forward(H)
        return z, (c_lstm, c_attn, c_fc)

    def backward(self, cache, dz):
        c_lstm, c_attn, c_fc = cache
        dH, grads = self.fc.backward(c_fc, dz)
        grads = {f"fc.{k}": v for k, v in grads.items()}
        dhs, g = self.attn.backward(c_attn, dH)
        grads.update({f"attn.{k}": v for k, v in g.items()})
        _, g = self.lstm.backward(c_lstm, dhs)
        grads.update({f"lstm.{k}": v for k, v in g.items()})
        return grads

    def predict(self, seq):
        z, _ = self.forward(seq)
        return softmax(z)

    def save(self, path):
        save_checkpoint(path, self.tensors(), self.meta())

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        return cls.from_tensors(tensors, meta)

    @classmethod
    def from_tensors(cls, tensors, meta):
        g = cls(meta["n_regions"], meta["hidden"], tuple(meta["fc"]))
        assign_params(g.tensors(), tensors)
        return g


def predict_geo(g, geo_seq):
    """Predicted eventual distribution (on the simplex) from one N x M sequence."""
    return g.predict(np.asarray(geo_seq, float)[None])[0]


def geo_mse(x, lam):
    """Mean over regions of the squared error; rows are averaged when 2-D."""
    x = np.asarray(x, float)
    lam = np.asarray(lam, float)
    if x.shape != lam.shape:
        raise ShapeError(f"shapes differ: {x.shape} vs {lam.shape}")
    return float(((x - lam) ** 2).mean())


@dataclass
class GeoTrainConfig:
    seed: int = 0
    epochs: int = 40
    lr: float = 3e-3
    batch_size: int = 64
    hidden: int = 64
    fc: tuple = (64,)


def train_geo(seqs, targets, cfg=None, history=None):
    """Fit a GeoPredictor on (n, N, M) sequences and (n, M) eventual distributions."""
    cfg = cfg or GeoTrainConfig()
    seqs = np.asarray(seqs, float)
    targets = np.asarray(targets, float)
    if seqs.ndim != 3 or targets.shape != (seqs.shape[0], seqs.shape[2]):
        raise ShapeError(f"sequences {seqs.shape} and targets {targets.shape} do not match")
    if len(seqs) == 0:
        raise ValidationError("geo training needs at least one sequence")
    g = GeoPredictor(seqs.shape[2], cfg.hidden, cfg.fc, seed=cfg.seed)
    g.scaler.fit(seqs)
    opt = Adam(g.params(), lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 2])
    losses = [] if history is None else history
    for _ in range(cfg.epochs):
        order = rng.permutation(len(seqs))
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            b = order[lo:lo + cfg.batch_size]
            z, cache = g.forward(seqs[b])
            loss, _, dz = softmax_mse(z, targets[b])
            opt.step(g.backward(cache, dz))
            total += loss * len(b)
        losses.append(total / len(seqs))
    return g


def geo_windows(windows, n_windows):
    """Window whose geo sequence feeds the geo model: the burst window, else the last one."""
    w = np.asarray(windows)
    return np.where(w > 0, w, n_windows)
