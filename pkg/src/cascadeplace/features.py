"""Window features: macro statistics, per-slot micro sequences, region histograms, labels.

Window ``k`` (1-based) covers ``((k-1)T, kT]``; the root event at ``t = 0``
is counted in window 1 and in its first slot. Slot ``s`` of window ``k``
covers ``((k-1)T + (s-1)T/N, (k-1)T + sT/N]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .cascade import DAY, ContentType, EventKind
from .errors import ConfigError, ShapeError

MACRO_NAMES = (
    "view_count", "reshare_count",
    "min_Rlevel", "max_Rlevel", "avg_Rlevel", "var_Rlevel",
    "min_Vlevel", "max_Vlevel", "avg_Vlevel", "var_Vlevel",
)
CTYPE_NAMES = tuple(f"ctype_{c.label}" for c in ContentType)
MICRO_NAMES = ("slot_views", "slot_reshares", "slot_avg_level")
# positions of count-like columns, used for log scaling downstream
MACRO_COUNT_COLUMNS = (0, 1)
MICRO_COUNT_COLUMNS = (0, 1)


@dataclass(frozen=True)
class WindowSpec:
    window_length: int = DAY
    n_slots: int = 24
    max_windows: int = 5

    def __post_init__(self):
        if self.window_length <= 0 or self.n_slots <= 0:
            raise ConfigError("window_length and n_slots must be positive")
        if self.window_length % self.n_slots:
            raise ConfigError("window_length must be divisible by n_slots")
        if self.max_windows < 1:
            raise ConfigError("max_windows must be >= 1")

    @property
    def slot_length(self):
        return self.window_length // self.n_slots


@dataclass(frozen=True)
class MacroFeatures:
    view_count: int
    reshare_count: int
    min_Rlevel: float
    max_Rlevel: float
    avg_Rlevel: float
    var_Rlevel: float
    min_Vlevel: float
    max_Vlevel: float
    avg_Vlevel: float
    var_Vlevel: float
    ctype_onehot: tuple

    def vector(self):
        return np.array([getattr(self, n) for n in MACRO_NAMES], dtype=float)


@dataclass(frozen=True)
class WindowObservation:
    k: int
    macro: MacroFeatures
    micro: np.ndarray  # N x 3
    region_hist: np.ndarray  # M


@dataclass(frozen=True)
class BurstLabel:
    explosive: bool
    final_size: int
    final_geo: np.ndarray


def ctype_onehot(ctype):
    v = np.zeros(len(ContentType))
    v[int(ctype)] = 1.0
    return v


def _level_stats(levels):
    if len(levels) == 0:
        return 0.0, 0.0, 0.0, 0.0
    levels = np.asarray(levels, float)
    mean = levels.mean()
    return float(levels.min()), float(levels.max()), float(mean), float(((levels - mean) ** 2).mean())


def _window_bounds(c, spec, k):
    if not 1 <= k <= spec.max_windows:
        raise ValueError(f"window index {k} outside 1..{spec.max_windows}")
    if c.horizon < k * spec.window_length:
        raise ValueError(f"cascade {c.content_id} horizon {c.horizon} shorter than {k} windows")
    T = spec.window_length
    lo = 0 if k == 1 else int(np.searchsorted(c.t, (k - 1) * T, side="right"))
    hi = int(np.searchsorted(c.t, k * T, side="right"))
    return lo, hi


def _slot_index(t, spec):
    """Global slot index (window-major) of each timestamp; t = 0 maps to slot 0."""
    T, N = spec.window_length, spec.n_slots
    return np.maximum((np.asarray(t, np.int64) * N + T - 1) // T - 1, 0)


def extract_window(c, spec, k, n_regions):
    lo, hi = _window_bounds(c, spec, k)
    kind = c.kind[lo:hi]
    level = c.level[lo:hi]
    rs = kind == EventKind.RESHARE
    r_stats = _level_stats(level[rs])
    v_stats = _level_stats(level[~rs])
    macro = MacroFeatures(int((~rs).sum()), int(rs.sum()), *r_stats, *v_stats,
                          ctype_onehot=tuple(ctype_onehot(c.ctype)))
    N = spec.n_slots
    slot = _slot_index(c.t[lo:hi], spec) - (k - 1) * N
    views = np.bincount(slot[~rs], minlength=N)[:N]
    reshares = np.bincount(slot[rs], minlength=N)[:N]
    count = views + reshares
    lsum = np.bincount(slot, weights=level, minlength=N)[:N]
    avg = np.divide(lsum, count, out=np.zeros(N), where=count > 0)
    micro = np.column_stack([views, reshares, avg]).astype(float)
    region_hist = np.bincount(c.region[:hi], minlength=n_regions).astype(float)
    return WindowObservation(k, macro, micro, region_hist)


def label(c, threshold, n_regions):
    geo = np.bincount(c.region, minlength=n_regions).astype(float)
    total = geo.sum()
    if total > 0:
        geo /= total
    return BurstLabel(bool(c.size >= threshold), int(c.size), geo)


def _normalize_rows(a):
    s = a.sum(axis=-1, keepdims=True)
    return np.divide(a, s, out=np.zeros_like(a, dtype=float), where=s > 0)


def geo_micro_sequence(c, spec, k, n_regions):
    """N x M cumulative regional proportions at the end of each slot of window ``k``."""
    _, hi = _window_bounds(c, spec, k)
    N = spec.n_slots
    slot = _slot_index(c.t[:hi], spec)
    first = (k - 1) * N
    slot = np.clip(slot - first, -1, N - 1) + 1  # 0 collects everything before window k
    counts = np.zeros((N + 1, n_regions))
    np.add.at(counts, (slot, c.region[:hi]), 1.0)
    cum = np.cumsum(counts, axis=0)[1:]
    return _normalize_rows(cum)


# --------------------------------------------------------------------------
# whole-corpus extraction


@dataclass
class FeatureSet:
    """Dense arrays for a corpus, windows 1..Q.

    macro: (C, Q, 10); ctype: (C, 3); micro: (C, Q, N, 3);
    region_hist: (C, Q, M) cumulative counts; geo_seq: (C, Q, N, M);
    explosive: (C,) bool; final_size: (C,); final_geo: (C, M).
    """

    content_id: np.ndarray
    macro: np.ndarray
    ctype: np.ndarray
    micro: np.ndarray
    region_hist: np.ndarray
    geo_seq: np.ndarray
    explosive: np.ndarray
    final_size: np.ndarray
    final_geo: np.ndarray

    def __len__(self):
        return len(self.content_id)

    def subset(self, idx):
        return FeatureSet(**{k: v[idx] for k, v in self.__dict__.items()})

    def window_observation(self, i, k):
        m = self.macro[i, k - 1]
        macro = MacroFeatures(int(m[0]), int(m[1]), *map(float, m[2:]), ctype_onehot=tuple(self.ctype[i]))
        return WindowObservation(k, macro, self.micro[i, k - 1], self.region_hist[i, k - 1])


def _group_stats(group, values, n_groups):
    cnt = np.bincount(group, minlength=n_groups).astype(float)
    s = np.bincount(group, weights=values, minlength=n_groups)
    mean = np.divide(s, cnt, out=np.zeros(n_groups), where=cnt > 0)
    dev = values - mean[group]
    var = np.divide(np.bincount(group, weights=dev * dev, minlength=n_groups), cnt,
                    out=np.zeros(n_groups), where=cnt > 0)
    mn = np.full(n_groups, np.inf)
    mx = np.full(n_groups, -np.inf)
    np.minimum.at(mn, group, values)
    np.maximum.at(mx, group, values)
    empty = cnt == 0
    mn[empty] = 0.0
    mx[empty] = 0.0
    return cnt, mn, mx, mean, var


def cascade_features(c, spec, n_regions, with_geo=True):
    """All Q windows of one cascade at once (vectorized equivalent of extract_window)."""
    Q, N, M = spec.max_windows, spec.n_slots, n_regions
    if c.horizon < Q * spec.window_length:
        raise ValueError(f"cascade {c.content_id} horizon {c.horizon} shorter than {Q} windows")
    hi = int(np.searchsorted(c.t, Q * spec.window_length, side="right"))
    t, kind, level, region = c.t[:hi], c.kind[:hi], c.level[:hi].astype(float), c.region[:hi]
    g = _slot_index(t, spec)
    w = g // N
    rs = kind == EventKind.RESHARE
    macro = np.zeros((Q, 10))
    for sel, off in ((~rs, 6), (rs, 2)):
        cnt, mn, mx, mean, var = _group_stats(w[sel], level[sel], Q)
        macro[:, 0 if off == 6 else 1] = cnt
        macro[:, off:off + 4] = np.column_stack([mn, mx, mean, var])
    n_slots = Q * N
    views = np.bincount(g[~rs], minlength=n_slots)
    reshares = np.bincount(g[rs], minlength=n_slots)
    count = views + reshares
    lsum = np.bincount(g, weights=level, minlength=n_slots)
    avg = np.divide(lsum, count, out=np.zeros(n_slots), where=count > 0)
    micro = np.column_stack([views, reshares, avg]).reshape(Q, N, 3).astype(float)
    per_slot = np.zeros((n_slots, M))
    np.add.at(per_slot, (g, region), 1.0)
    cum = np.cumsum(per_slot, axis=0)
    region_hist = cum[N - 1::N]
    geo = _normalize_rows(cum).reshape(Q, N, M) if with_geo else None
    return macro, micro, region_hist, geo


def extract_all(corpus, spec, n_regions, threshold, with_geo=True):
    C, Q, N, M = len(corpus), spec.max_windows, spec.n_slots, n_regions
    fs = FeatureSet(
        content_id=np.array([c.content_id for c in corpus], dtype=np.int64),
        macro=np.zeros((C, Q, 10)),
        ctype=np.zeros((C, len(ContentType))),
        micro=np.zeros((C, Q, N, 3)),
        region_hist=np.zeros((C, Q, M)),
        geo_seq=np.zeros((C, Q, N, M)) if with_geo else np.zeros((C, 0, N, M)),
        explosive=np.zeros(C, dtype=bool),
        final_size=np.zeros(C, dtype=np.int64),
        final_geo=np.zeros((C, M)),
    )
    for i, c in enumerate(corpus):
        macro, micro, hist, geo = cascade_features(c, spec, M, with_geo)
        fs.macro[i], fs.micro[i], fs.region_hist[i] = macro, micro, hist
        if with_geo:
            fs.geo_seq[i] = geo
        fs.ctype[i] = ctype_onehot(c.ctype)
        lab = label(c, threshold, M)
        fs.explosive[i], fs.final_size[i], fs.final_geo[i] = lab.explosive, lab.final_size, lab.final_geo
    return fs


def feature_columns(spec, n_regions):
    """Column order of the feature CSV (one row per cascade and window)."""
    cols = ["content_id", "window"]
    cols += list(MACRO_NAMES) + list(CTYPE_NAMES)
    cols += [f"{name}_{s + 1}" for s in range(spec.n_slots) for name in MICRO_NAMES]
    cols += [f"region_{m}" for m in range(n_regions)]
    cols += ["explosive", "final_size"] + [f"final_geo_{m}" for m in range(n_regions)]
    return cols


def write_feature_csv(path, fs, spec):
    M = fs.final_geo.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(feature_columns(spec, M))
        for i in range(len(fs)):
            for k in range(spec.max_windows):
                row = [int(fs.content_id[i]), k + 1]
                row += [repr(float(x)) for x in fs.macro[i, k]]
                row += [int(x) for x in fs.ctype[i]]
                row += [repr(float(x)) for x in fs.micro[i, k].reshape(-1)]
                row += [int(x) for x in fs.region_hist[i, k]]
                row += [int(fs.explosive[i]), int(fs.final_size[i])]
                row += [repr(float(x)) for x in fs.final_geo[i]]
                w.writerow(row)


def read_feature_csv(path, spec, n_regions):
    """Inverse of write_feature_csv; geo sequences are not stored and come back empty."""
    cols = feature_columns(spec, n_regions)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(cols):
        raise ShapeError(f"feature CSV has {data.shape[1]} columns, expected {len(cols)}")
    Q, N, M = spec.max_windows, spec.n_slots, n_regions
    C = data.shape[0] // Q
    data = data.reshape(C, Q, -1)
    o = 2
    macro = data[:, :, o:o + 10]; o += 10
    ctype = data[:, 0, o:o + 3]; o += 3
    micro = data[:, :, o:o + 3 * N].reshape(C, Q, N, 3); o += 3 * N
    hist = data[:, :, o:o + M]; o += M
    return FeatureSet(
        content_id=data[:, 0, 0].astype(np.int64), macro=macro, ctype=ctype, micro=micro,
        region_hist=hist, geo_seq=np.zeros((C, 0, N, M)),
        explosive=data[:, 0, o].astype(bool), final_size=data[:, 0, o + 1].astype(np.int64),
        final_geo=data[:, 0, o + 2:o + 2 + M],
    )
