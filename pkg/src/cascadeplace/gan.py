"""Semi-supervised adversarial imitation of the exact placement solver.

The discriminator has a shared tanh trunk and two heads. Head A gives one
sigmoid per region ("replicate here"); head B gives the probability that
its input was produced by the generator. Labeled samples (a regional
distribution plus the solver's decision) train head A with summed
per-region cross-entropy; real and generated distributions train head B.
The generator maps noise to distributions on the simplex and is trained
to make head B call its samples real.

At decision time only head A is used: the C regions with the largest
probabilities get a replica.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParseError, ShapeError, ValidationError
from .neural import (MLP, Adam, Dense, assign_params, load_checkpoint, log_sigmoid,
                     save_checkpoint, sigmoid, softmax)
from .placement import (exact_solve, repair_decision,
                        transport_solve)


class GeneratorNet:
    def __init__(self, n_regions, noise_dim=16, sizes=(32, 64, 128), seed=0):
        rng = np.random.default_rng([seed, 7])
        self.n_regions, self.noise_dim, self.sizes = n_regions, noise_dim, tuple(sizes)
        self.net = MLP([noise_dim, *sizes, n_regions], hidden="tanh", output="linear", rng=rng)

    def params(self):
        return {f"G.{k}": v for k, v in self.net.params().items()}

    def sample_noise(self, rng, n):
        return rng.standard_normal((n, self.noise_dim))

    def forward(self, z):
        logits, cache = self.net.forward(z)
        x = softmax(logits)
        return x, (cache, x)

    def backward(self, cache, dx):
        c_net, x = cache
        dlogits = x * (dx - (x * dx).sum(1, keepdims=True))
        _, grads = self.net.backward(c_net, dlogits)
        return {f"G.{k}": v for k, v in grads.items()}

    def generate(self, z):
        return self.forward(z)[0]


class DiscriminatorNet:
    def __init__(self, n_regions, width=64, depth=3, seed=0):
        rng = np.random.default_rng([seed, 11])
        self.n_regions, self.width, self.depth = n_regions, width, depth
        self.trunk = MLP([n_regions] + [width] * depth, hidden="tanh", output="tanh", rng=rng)
        self.head_a = Dense(width, n_regions, "linear", rng)
        self.head_b = Dense(width, 1, "linear", rng)
        # inputs are scaled by these constants (fitted on real distributions)
        self.in_mean = np.zeros(n_regions)
        self.in_std = np.ones(n_regions)

    def params(self):
        out = {f"D.trunk.{k}": v for k, v in self.trunk.params().items()}
        out.update({f"D.a.{k}": v for k, v in self.head_a.params().items()})
        out.update({f"D.b.{k}": v for k, v in self.head_b.params().items()})
        return out

    def fit_input_scale(self, x):
        x = np.asarray(x, float)
        self.in_mean[:] = x.mean(0)
        sd = x.std(0)
        self.in_std[:] = np.where(sd > 1e-12, sd, 1.0)

    def forward(self, x):
        """(head A logits (B, M), head B logit (B,), cache)."""
        x = np.asarray(x, float)
        if x.ndim == 1:
            x = x[None]
        if x.shape[1] != self.n_regions:
            raise ShapeError(f"distribution width {x.shape[1]}, expected {self.n_regions}")
        h, c_trunk = self.trunk.forward((x - self.in_mean) / self.in_std)
        a, c_a = self.head_a.forward(h)
        b, c_b = self.head_b.forward(h)
        return a, b[:, 0], (c_trunk, c_a, c_b)

    def backward(self, cache, da=None, db=None):
        """Gradients for the parameters and for the (unscaled) input."""
        c_trunk, c_a, c_b = cache
        grads = {k: np.zeros_like(v) for k, v in self.params().items()}
        dh = 0.0
        if da is not None:
            dh_a, g = self.head_a.backward(c_a, da)
            grads.update({f"D.a.{k}": v for k, v in g.items()})
            dh = dh + dh_a
        if db is not None:
            dh_b, g = self.head_b.backward(c_b, np.asarray(db)[:, None])
            grads.update({f"D.b.{k}": v for k, v in g.items()})
            dh = dh + dh_b
        dxs, g = self.trunk.backward(c_trunk, dh)
        grads.update({f"D.trunk.{k}": v for k, v in g.items()})
        return grads, dxs / self.in_std

    def placement_probs(self, x):
        a, _, _ = self.forward(x)
        return sigmoid(a)

    def fake_prob(self, x):
        _, b, _ = self.forward(x)
        return sigmoid(b)


# --------------------------------------------------------------------------
# losses


def _softplus(z):
    return np.logaddexp(0.0, z)


def supervised_loss(a_logits, y):
    """Mean over samples of the summed per-region cross-entropy; returns (loss, d/dlogits)."""
    a_logits = np.asarray(a_logits, float)
    y = np.asarray(y, float)
    n = len(a_logits)
    if n == 0:
        raise ValidationError("supervised loss needs a nonempty labeled batch")
    loss = -(y * log_sigmoid(a_logits) + (1 - y) * log_sigmoid(-a_logits)).sum() / n
    return float(loss), (sigmoid(a_logits) - y) / n


def unsupervised_loss(b_real, b_fake):
    """-(mean log(1 - p_fake(real)) + mean log p_fake(generated)) on head-B logits."""
    b_real = np.asarray(b_real, float)
    b_fake = np.asarray(b_fake, float)
    if len(b_real) == 0 or len(b_fake) == 0:
        raise ValidationError("unsupervised loss needs nonempty real and generated batches")
    loss = _softplus(b_real).mean() + _softplus(-b_fake).mean()
    d_real = sigmoid(b_real) / len(b_real)
    d_fake = -sigmoid(-b_fake) / len(b_fake)
    return float(loss), d_real, d_fake


def d_loss(D, x_lab, y_lab, x_real, x_gen):
    """(L, L_s, L_u) for one discriminator batch; L = L_s + L_u."""
    L_s, _ = supervised_loss(D.forward(x_lab)[0], y_lab)
    L_u, _, _ = unsupervised_loss(D.forward(x_real)[1], D.forward(x_gen)[1])
    return L_s + L_u, L_s, L_u


def _d_grads(D, x_lab, y_lab, x_real, x_gen, unsupervised=True):
    a, _, cache = D.forward(x_lab)
    L_s, da = supervised_loss(a, y_lab)
    grads, _ = D.backward(cache, da=da)
    L_u = 0.0
    if unsupervised:
        _, br, cr = D.forward(x_real)
        _, bf, cf = D.forward(x_gen)
        L_u, dr, df = unsupervised_loss(br, bf)
        for cache, db in ((cr, dr), (cf, df)):
            g, _ = D.backward(cache, db=db)
            for k, v in g.items():
                grads[k] = grads[k] + v
    return L_s + L_u, L_s, L_u, grads


def g_loss(D, x_gen):
    """Non-saturating generator objective -mean log(1 - p_fake(generated))."""
    _, b, _ = D.forward(x_gen)
    if len(b) == 0:
        raise ValidationError("generator loss needs a nonempty batch")
    return float(_softplus(b).mean())


def _g_grads(G, D, z):
    x, c_g = G.forward(z)
    _, b, c_d = D.forward(x)
    loss = float(_softplus(b).mean())
    _, dx = D.backward(c_d, db=sigmoid(b) / len(b))
    return loss, G.backward(c_g, dx)


# --------------------------------------------------------------------------
# training


@dataclass
class GanTrainConfig:
    seed: int = 0
    epochs: int = 150
    lr: float = 1e-3
    g_lr: float = 1e-3
    C: int = 5
    label_mix: float = 0.5  # labeled share of each real batch
    noise_dim: int = 16
    batch_size: int = 64  # labeled samples per step

    def __post_init__(self):
        if not 0.0 < self.label_mix < 1.0:
            raise ConfigError("label_mix must be in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.noise_dim < 1:
            raise ConfigError("epochs, batch_size and noise_dim must be positive")


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    I: np.ndarray
    C: int

    def __post_init__(self):
        if np.asarray(self.I).sum() > self.C:
            raise ValidationError(f"decision opens {int(np.asarray(self.I).sum())} > C={self.C} sites")


def _stack(labeled):
    x = np.array([s.x for s in labeled], float)
    y = np.array([s.I for s in labeled], float)
    return x, y


def train(cfg, labeled, unlabeled=None, history=None, supervised_only=False):
    """Alternate discriminator and generator steps; returns (G, D).

    With ``supervised_only`` the generator is never used and D sees only
    the labeled cross-entropy (the comparison model for sample efficiency).
    """
    if len(labeled) == 0:
        raise ValidationError("training needs at least one labeled sample")
    x_lab, y_lab = _stack(labeled)
    M = x_lab.shape[1]
    x_unl = np.zeros((0, M)) if unlabeled is None or len(unlabeled) == 0 else np.asarray(unlabeled, float)
    G = GeneratorNet(M, cfg.noise_dim, seed=cfg.seed)
    D = DiscriminatorNet(M, seed=cfg.seed)
    D.fit_input_scale(np.vstack([x_lab, x_unl]))
    d_opt = Adam(D.params(), lr=cfg.lr)
    g_opt = Adam(G.params(), lr=cfg.g_lr)
    rng = np.random.default_rng([cfg.seed, 3])
    n_lab = len(x_lab)
    bl = min(cfg.batch_size, n_lab)
    bu = int(round(bl * (1 - cfg.label_mix) / cfg.label_mix))
    log = [] if history is None else history
    for _ in range(cfg.epochs):
        order = rng.permutation(n_lab)
        tot = np.zeros(3)
        steps = 0
        for lo in range(0, n_lab, bl):
            b = order[lo:lo + bl]
            if supervised_only:
                L, L_s, L_u, grads = _d_grads(D, x_lab[b], y_lab[b], None, None, unsupervised=False)
                d_opt.step(grads)
            else:
                real = x_lab[b]
                if len(x_unl) and bu:
                    real = np.vstack([real, x_unl[rng.integers(0, len(x_unl), bu)]])
                fake = G.generate(G.sample_noise(rng, len(real)))
                L, L_s, L_u, grads = _d_grads(D, x_lab[b], y_lab[b], real, fake)
                d_opt.step(grads)
                _, g_grads = _g_grads(G, D, G.sample_noise(rng, len(real)))
                g_opt.step(g_grads)
            tot += (L, L_s, L_u)
            steps += 1
        log.append(tuple(tot / steps))
    return G, D


def heldout_supervised_loss(D, labeled):
    x, y = _stack(labeled)
    return supervised_loss(D.forward(x)[0], y)[0]


# --------------------------------------------------------------------------
# decisions


def infer_placement(D, x, C):
    """Replicas at the C largest head-A probabilities (ties to the lowest region id)."""
    p = D.placement_probs(np.asarray(x, float)[None])[0]
    order = np.lexsort((np.arange(len(p)), -p))  # full ranking, independent of C
    I = np.zeros(len(p), dtype=np.int64)
    I[order[:C]] = 1
    return I


def decide(D, inst, x):
    """Top-C decision, repaired if its capacity cannot cover the demand; returns (I, Assignment)."""
    p = D.placement_probs(np.asarray(x, float)[None])[0]
    I = infer_placement(D, x, inst.C)
    if int(inst.U[I == 1].sum()) < inst.demand:
        I = repair_decision(inst, I, p)
    return I, transport_solve(inst, I)


def solve_labels(instances, xs):
    """LabeledSample per instance from the exact solver."""
    out = []
    for inst, x in zip(instances, xs):
        I, _ = exact_solve(inst)
        out.append(LabeledSample(np.asarray(x, float), I, inst.C))
    return out


# --------------------------------------------------------------------------
# files


def write_labeled_csv(path, samples):
    if not samples:
        raise ValidationError("no labeled samples to write")
    M = len(samples[0].x)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{m + 1}" for m in range(M)] + [f"I_{m + 1}" for m in range(M)] + ["C"])
        for s in samples:
            w.writerow([repr(float(v)) for v in s.x] + [int(v) for v in s.I] + [int(s.C)])


def read_labeled_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty labeled-sample file", 1)
    n = len(rows[0])
    if n < 3 or (n - 1) % 2:
        raise ParseError("header must be x_1..x_M, I_1..I_M, C", 1)
    M = (n - 1) // 2
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != n:
            raise ParseError(f"expected {n} fields, got {len(row)}", lineno)
        try:
            x = np.array([float(v) for v in row[:M]])
            I = np.array([int(v) for v in row[M:2 * M]], dtype=np.int64)
            C = int(row[-1])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        out.append(LabeledSample(x, I, C))
    return out


def model_tensors(G, D):
    t = dict(G.params())
    t.update(D.params())
    t["D.in_mean"], t["D.in_std"] = D.in_mean, D.in_std
    return t


def model_meta(G, D):
    return {"kind": "gan", "n_regions": D.n_regions, "noise_dim": G.noise_dim,
            "g_sizes": list(G.sizes), "d_width": D.width, "d_depth": D.depth}


def save_models(path, G, D):
    save_checkpoint(path, model_tensors(G, D), model_meta(G, D))


def load_models(path):
    tensors, meta = load_checkpoint(path)
    G = GeneratorNet(meta["n_regions"], meta["noise_dim"], tuple(meta["g_sizes"]))
    D = DiscriminatorNet(meta["n_regions"], meta["d_width"], meta["d_depth"])
    assign_params(model_tensors(G, D), tensors)
    return G, D
