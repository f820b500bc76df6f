"""Small deterministic neural toolkit with analytic gradients.

Layers work on batches (leading axis ``B``). Each layer exposes
``forward(x) -> (y, cache)`` and ``backward(cache, dy) -> (dx, grads)``,
where ``grads`` is keyed like ``params()``. Everything is float64.
"""

from __future__ import annotations

import io
import math
import json
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ParseError, ShapeError

CHECKPOINT_MAGIC = b"cascadeplace-checkpoint 1\n"


def sigmoid(x):
    return expit(x)


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def glorot(rng, fan_in, fan_out, shape=None):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))


def _check_last(x, n, what):
    if x.shape[-1] != n:
        raise ShapeError(f"{what}: expected last dim {n}, got shape {x.shape}")


# --------------------------------------------------------------------------
# activations


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return expit(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "linear":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, z, y, dy):
    if name == "tanh":
        return dy * (1.0 - y * y)
    if name == "sigmoid":
        return dy * y * (1.0 - y)
    if name == "relu":
        return dy * (z > 0)
    return dy


class Layer:
    prefix = ""

    def params(self):
        return {}

    def named_params(self):
        return {f"{self.prefix}{k}": v for k, v in self.params().items()}


class Dense(Layer):
    def __init__(self, n_in, n_out, activation="tanh", rng=None, prefix=""):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = glorot(rng, n_in, n_out)
        self.b = np.zeros(n_out)
        self.activation = activation
        self.prefix = prefix

    @property
    def n_in(self):
        return self.W.shape[0]

    @property
    def n_out(self):
        return self.W.shape[1]

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x):
        _check_last(x, self.n_in, "dense")
        z = x @ self.W + self.b
        y = _act(self.activation, z)
        return y, (x, z, y)

    def backward(self, cache, dy):
        x, z, y = cache
        dz = _act_grad(self.activation, z, y, dy)
        grads = {"W": x.reshape(-1, self.n_in).T @ dz.reshape(-1, self.n_out),
                 "b": dz.reshape(-1, self.n_out).sum(0)}
        return dz @ self.W.T, grads


class MLP(Layer):
    """Dense stack; hidden layers share one activation, the last has its own."""

    def __init__(self, sizes, hidden="tanh", output="linear", rng=None, prefix=""):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.prefix = prefix
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = output if i == len(sizes) - 2 else hidden
            self.layers.append(Dense(a, b, act, rng, prefix=f"{i}."))

    def params(self):
        out = {}
        for layer in self.layers:
            out.update(layer.named_params())
        return out

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, caches, dy):
        grads = {}
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dy, g = layer.backward(c, dy)
            grads.update({f"{layer.prefix}{k}": v for k, v in g.items()})
        return dy, grads


class LSTM(Layer):
    """Gates stacked along the last axis in the order input, forget, output, candidate.

    ``W`` is d x 4H, ``U`` is H x 4H, ``b`` is 4H; ``W[:, :H]`` is W_i and so on.
    """

    GATES = ("i", "f", "o", "a")

    def __init__(self, n_in, n_hidden, rng=None, forget_bias=1.0, prefix=""):
        rng = rng if rng is not None else np.random.default_rng(0)
        H = n_hidden
        self.W = np.concatenate([glorot(rng, n_in, H) for _ in range(4)], axis=1)
        self.U = np.concatenate([glorot(rng, H, H) for _ in range(4)], axis=1)
        self.b = np.zeros(4 * H)
        self.b[H:2 * H] = forget_bias
        self.prefix = prefix

    @property
    def n_in(self):
        return self.W.shape[0]

    @property
    def n_hidden(self):
        return self.U.shape[0]

    def params(self):
        return {"W": self.W, "U": self.U, "b": self.b}

    def gate(self, name):
        """(W_g, U_g, b_g) views for one gate."""
        H = self.n_hidden
        j = self.GATES.index(name)
        sl = slice(j * H, (j + 1) * H)
        return self.W[:, sl], self.U[:, sl], self.b[sl]

    def forward(self, x):
        """x: (B, N, d) -> hidden states (B, N, H); cells kept in the cache."""
        x = np.asarray(x, float)
        if x.ndim == 2:
            x = x[None]
        _check_last(x, self.n_in, "lstm")
        B, N, _ = x.shape
        if N < 1:
            raise ShapeError("lstm needs at least one time step")
        H = self.n_hidden
        xz = x @ self.W + self.b
        hs = np.zeros((B, N, H))
        cs = np.zeros((B, N, H))
        gates = np.zeros((B, N, 4 * H))
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        for t in range(N):
            z = xz[:, t] + h @ self.U
            g = np.empty_like(z)
            g[:, :3 * H] = expit(z[:, :3 * H])
            g[:, 3 * H:] = np.tanh(z[:, 3 * H:])
            c = g[:, H:2 * H] * c + g[:, :H] * g[:, 3 * H:]
            h = g[:, 2 * H:3 * H] * np.tanh(c)
            gates[:, t], cs[:, t], hs[:, t] = g, c, h
        return hs, (x, hs, cs, gates)

    def backward(self, cache, dhs):
        x, hs, cs, gates = cache
        B, N, H = hs.shape
        dz_all = np.zeros((B, N, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(N - 1, -1, -1):
            g = gates[:, t]
            i, f, o, a = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
            c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, H))
            tc = np.tanh(cs[:, t])
            dh = dhs[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :H] = dc * a * i * (1.0 - i)
            dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            dz[:, 3 * H:] = dc * i * (1.0 - a * a)
            dc_next = dc * f
            dh_next = dz @ self.U.T
        h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
        flat = dz_all.reshape(-1, 4 * H)
        grads = {
            "W": x.reshape(-1, self.n_in).T @ flat,
            "U": h_prev.reshape(-1, H).T @ flat,
            "b": flat.sum(0),
        }
        return dz_all @ self.W.T, grads


class Attention(Layer):
    """score_t = tanh(w . h_t) + b; alpha = softmax over t; pooled = sum_t alpha_t h_t."""

    def __init__(self, n_hidden, rng=None, prefix=""):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = glorot(rng, n_hidden, 1, shape=(n_hidden,))
        self.b = np.zeros(1)
        self.prefix = prefix

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, hs):
        if hs.ndim == 2:
            hs = hs[None]
        _check_last(hs, len(self.W), "attention")
        s = np.tanh(hs @ self.W)
        alpha = softmax(s + self.b[0], axis=1)
        pooled = np.einsum("bn,bnh->bh", alpha, hs)
        return pooled, (hs, s, alpha)

    def backward(self, cache, dpooled):
        hs, s, alpha = cache
        dalpha = np.einsum("bnh,bh->bn", hs, dpooled)
        de = alpha * (dalpha - (alpha * dalpha).sum(1, keepdims=True))
        du = de * (1.0 - s * s)
        grads = {"W": np.einsum("bn,bnh->h", du, hs), "b": np.array([de.sum()])}
        dhs = alpha[:, :, None] * dpooled[:, None, :] + du[:, :, None] * self.W
        return dhs, grads


# --------------------------------------------------------------------------
# losses (mean over the batch)


def bce_with_logits(z, y, weight=None):
    """Binary cross-entropy on logits; returns (loss, dloss/dz)."""
    z = np.asarray(z, float)
    y = np.asarray(y, float)
    w = np.ones_like(z) if weight is None else np.broadcast_to(weight, z.shape)
    n = z.shape[0] if z.ndim else 1
    loss = -(y * log_sigmoid(z) + (1 - y) * log_sigmoid(-z))
    return float((w * loss).sum() / n), w * (expit(z) - y) / n


def softmax_mse(z, target):
    """MSE between softmax(z) and target rows, averaged over regions and batch."""
    p = softmax(z)
    B, M = p.shape
    diff = p - target
    loss = float((diff ** 2).sum() / (B * M))
    dp = 2.0 * diff / (B * M)
    dz = p * (dp - (p * dp).sum(1, keepdims=True))
    return loss, p, dz


# --------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads):
        """In-place bias-corrected update of every parameter in ``grads``."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            p = self.params[k]
            if g.shape != p.shape:
                raise ShapeError(f"gradient {k} has shape {g.shape}, parameter {p.shape}")
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def cosine_lr(lr, epoch, epochs):
    """Per-epoch step size decaying from ``lr`` towards zero over the run."""
    return lr * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


# --------------------------------------------------------------------------
# checkpoints


def dumps_checkpoint(tensors, meta=None):
    """Deterministic byte encoding of named float64 tensors plus JSON metadata."""
    names = sorted(tensors)
    header = {
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(np.shape(tensors[n]))} for n in names],
    }
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
    for n in names:
        buf.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())
    return buf.getvalue()


def loads_checkpoint(data):
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ParseError("not a checkpoint (bad magic)")
    rest = data[len(CHECKPOINT_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl].decode("utf-8"))
    body = memoryview(rest)[nl + 1:]
    tensors = {}
    off = 0
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body[off:off + 8 * n], dtype="<f8").astype(float).reshape(shape)
        tensors[spec["name"]] = arr
        off += 8 * n
    if off != len(body):
        raise ParseError("checkpoint has trailing bytes")
    return tensors, header["meta"]


def save_checkpoint(path, tensors, meta=None):
    Path(path).write_bytes(dumps_checkpoint(tensors, meta))


def load_checkpoint(path):
    return loads_checkpoint(Path(path).read_bytes())


def assign_params(target, source):
    """Copy arrays from ``source`` into the same-named arrays of ``target`` in place."""
    for k, v in target.items():
        if k not in source:
            raise ParseError(f"checkpoint missing tensor {k}")
        if source[k].shape != v.shape:
            raise ShapeError(f"tensor {k}: checkpoint shape {source[k].shape}, model {v.shape}")
        v[...] = source[k]
