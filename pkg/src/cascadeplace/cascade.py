"""Diffusion cascades, region geometry, and a seeded synthetic corpus generator.

A cascade is stored column-wise (one numpy array per event attribute) so
that corpora of millions of events stay cheap to hold and to featurize.
``Cascade.events()`` yields per-event named tuples when row access is
more convenient.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .config import Settings, format_mapping, parse_mapping
from .errors import ConfigError, ParseError, ValidationError

DAY = 86_400


class ContentType(enum.IntEnum):
    POLITICAL = 0
    ADVERTISING = 1
    OTHER = 2

    @property
    def label(self):
        return self.name.capitalize()

    @classmethod
    def parse(cls, token):
        try:
            return cls[token.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown content type {token!r}") from None


class EventKind(enum.IntEnum):
    VIEW = 0
    RESHARE = 1


PATTERNS = ("star", "split", "chain")


class CascadeEvent(NamedTuple):
    user: int
    parent: int  # -1 for the root
    kind: EventKind
    level: int
    t: int
    region: int


# --------------------------------------------------------------------------
# regions and latency


@dataclass(frozen=True)
class Region:
    id: int
    coord: tuple[float, float]
    capacity: int = 0


@dataclass(frozen=True)
class RegionSet:
    regions: tuple[Region, ...]

    def __post_init__(self):
        ids = [r.id for r in self.regions]
        if ids != list(range(len(ids))):
            raise ValidationError("region ids must be dense 0..M-1 in order")
        if any(r.capacity < 0 for r in self.regions):
            raise ValidationError("region capacity must be nonnegative")

    def __len__(self):
        return len(self.regions)

    @property
    def coords(self):
        return np.array([r.coord for r in self.regions], dtype=float).reshape(-1, 2)

    @property
    def capacities(self):
        return np.array([r.capacity for r in self.regions], dtype=np.int64)


def generate_regions(n_regions, seed=0, capacity_scale=1000):
    """Random planar regions in the unit square.

    ``capacity`` is a relative weight (around ``capacity_scale``); placement
    instances rescale it to the demand of each content item.
    """
    rng = np.random.default_rng([seed, 0xC0DE])
    coords = rng.random((n_regions, 2))
    weights = rng.uniform(0.8, 1.2, n_regions)
    caps = np.rint(weights * capacity_scale).astype(int)
    return RegionSet(tuple(
        Region(i, (float(coords[i, 0]), float(coords[i, 1])), int(caps[i]))
        for i in range(n_regions)
    ))


def pairwise_distances(coords):
    coords = np.asarray(coords, dtype=float)
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


def latency_from_coords(regions, scale):
    """Euclidean distance times ``scale`` (ms per unit); symmetric, zero diagonal."""
    coords = regions.coords if isinstance(regions, RegionSet) else np.asarray(regions, float)
    lat = scale * pairwise_distances(coords)
    lat = 0.5 * (lat + lat.T)
    np.fill_diagonal(lat, 0.0)
    return lat


def calibrated_scale(regions, max_latency=3.3):
    """Scale (ms/unit) making the largest inter-region latency ``max_latency``."""
    coords = regions.coords if isinstance(regions, RegionSet) else np.asarray(regions, float)
    dmax = pairwise_distances(coords).max()
    return max_latency / dmax if dmax > 0 else 1.0


# --------------------------------------------------------------------------
# cascades


_COLUMNS = ("user", "parent", "kind", "level", "t", "region")


@dataclass(frozen=True, eq=False)
class Cascade:
    content_id: int
    ctype: ContentType
    horizon: int
    user: np.ndarray
    parent: np.ndarray
    kind: np.ndarray
    level: np.ndarray
    t: np.ndarray
    region: np.ndarray

    def __post_init__(self):
        for name in _COLUMNS:
            dtype = np.int8 if name == "kind" else np.int64
            arr = np.array(getattr(self, name), dtype=dtype, copy=True).reshape(-1)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "ctype", ContentType(self.ctype))
        n = len(self.user)
        if any(len(getattr(self, c)) != n for c in _COLUMNS):
            raise ValidationError("event columns differ in length")

    @classmethod
    def from_events(cls, content_id, ctype, horizon, events):
        events = list(events)
        cols = {c: [getattr(e, c) for e in events] for c in _COLUMNS}
        return cls(content_id, ctype, horizon, **cols)

    @property
    def size(self):
        return len(self.user)

    def __len__(self):
        return self.size

    def events(self) -> Iterator[CascadeEvent]:
        for row in zip(*(getattr(self, c).tolist() for c in _COLUMNS)):
            yield CascadeEvent(row[0], row[1], EventKind(row[2]), *row[3:])

    def __eq__(self, other):
        if not isinstance(other, Cascade):
            return NotImplemented
        return (self.content_id == other.content_id and self.ctype == other.ctype
                and self.horizon == other.horizon
                and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in _COLUMNS))

    __hash__ = None

    def validate(self, n_regions=None):
        """Raise ValidationError if the tree invariants do not hold."""
        where = f"cascade {self.content_id}"
        n = self.size
        if n == 0:
            raise ValidationError(f"{where}: no events")
        if np.any(np.diff(self.t) < 0):
            raise ValidationError(f"{where}: events not sorted by time")
        if np.any(self.t < 0):
            raise ValidationError(f"{where}: negative timestamp")
        roots = np.flatnonzero(self.level == 0)
        if len(roots) != 1:
            raise ValidationError(f"{where}: expected exactly one level-0 event, found {len(roots)}")
        r = roots[0]
        if self.parent[r] != -1 or self.kind[r] != EventKind.RESHARE:
            raise ValidationError(f"{where}: root must be a reshare with parent -1")
        order = np.argsort(self.user, kind="stable")
        su = self.user[order]
        if np.any(su[1:] == su[:-1]):
            raise ValidationError(f"{where}: duplicate user id")
        if np.any((self.kind != EventKind.VIEW) & (self.kind != EventKind.RESHARE)):
            raise ValidationError(f"{where}: unknown event kind")
        if n_regions is not None and np.any((self.region < 0) | (self.region >= n_regions)):
            raise ValidationError(f"{where}: region id out of range")
        if np.any(self.region < 0):
            raise ValidationError(f"{where}: negative region id")
        child = np.flatnonzero(np.arange(n) != r)
        pos = np.searchsorted(su, self.parent[child])
        pos = np.minimum(pos, n - 1)
        found = su[pos] == self.parent[child]
        if not found.all():
            bad = self.user[child[~found][0]]
            raise ValidationError(f"{where}: user {bad} has unknown parent")
        pidx = order[pos]
        if np.any(self.kind[pidx] != EventKind.RESHARE):
            bad = self.user[child[self.kind[pidx] != EventKind.RESHARE][0]]
            raise ValidationError(f"{where}: user {bad} has a view as parent")
        if np.any(self.level[child] != self.level[pidx] + 1):
            raise ValidationError(f"{where}: level is not parent level + 1")
        if np.any(self.t[child] < self.t[pidx]):
            raise ValidationError(f"{where}: event precedes its parent")
        return self


# --------------------------------------------------------------------------
# generator


def _default_pattern_mix():
    return {"star": 0.25, "split": 0.55, "chain": 0.20}


def _default_ctype_mix():
    return {"Political": 0.15, "Advertising": 0.45, "Other": 0.40}


def _default_burst_prob():
    return {"Political": 0.494, "Advertising": 0.186, "Other": 0.21}


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    n_regions: int = 34
    pattern_mix: dict = field(default_factory=_default_pattern_mix)
    ctype_mix: dict = field(default_factory=_default_ctype_mix)
    ctype_burst_prob: dict = field(default_factory=_default_burst_prob)
    region_popularity_concentration: float = 2.0
    # log-normal sigma of the shared per-region popularity base (0 = uniform)
    population_skew: float = 1.0
    mean_branching: float = 8.0
    view_to_reshare_ratio: float = 3.0
    horizon: int = 30 * DAY
    burst_threshold: int = 2000
    # non-explosive sizes are log-uniform on [floor * threshold, threshold)
    size_floor: float = 0.2
    # explosive sizes are threshold * (1 + Exp(burst_tail)), capped at 10x
    burst_tail: float = 0.5
    decay_days: float = 2.0
    decay_spread: float = 0.3
    daily_noise: float = 0.35
    local_prob: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "pattern_mix", {str(k).lower(): float(v) for k, v in self.pattern_mix.items()})
        for name in ("ctype_mix", "ctype_burst_prob"):
            raw = getattr(self, name)
            try:
                norm = {ContentType.parse(k) if isinstance(k, str) else ContentType(k): float(v)
                        for k, v in raw.items()}
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None
            object.__setattr__(self, name, norm)
        self.validate()

    def validate(self):
        for name, mix, keys in (("pattern_mix", self.pattern_mix, PATTERNS),
                                ("ctype_mix", self.ctype_mix, tuple(ContentType))):
            unknown = set(mix) - set(keys)
            if unknown:
                raise ConfigError(f"{name}: unknown keys {sorted(map(str, unknown))}")
            vals = np.array(list(mix.values()), float)
            if np.any(vals < 0) or np.any(vals > 1) or not math.isclose(vals.sum(), 1.0, abs_tol=1e-9):
                raise ConfigError(f"{name} must be a probability vector summing to 1, got {mix}")
        for ct, p in self.ctype_burst_prob.items():
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"ctype_burst_prob[{ct.label}] = {p} outside [0, 1]")
        if self.n_regions < 1:
            raise ConfigError("n_regions must be >= 1")
        for name in ("region_popularity_concentration", "mean_branching", "view_to_reshare_ratio",
                     "decay_days", "burst_tail"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.burst_threshold < 2:
            raise ConfigError("burst_threshold must be >= 2")
        if not 0 < self.size_floor < 1:
            raise ConfigError("size_floor must be in (0, 1)")
        if self.population_skew < 0:
            raise ConfigError("population_skew must be >= 0")
        if not 0 <= self.local_prob <= 1:
            raise ConfigError("local_prob must be in [0, 1]")
        if self.horizon < 1:
            raise ConfigError("horizon must be positive")

    def burst_rate(self):
        """Corpus-level explosive fraction implied by the mixes."""
        return sum(self.ctype_mix.get(c, 0.0) * self.ctype_burst_prob.get(c, 0.0) for c in ContentType)

    def to_settings(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, dict):
                v = format_mapping({(k.label if isinstance(k, ContentType) else k): x for k, x in v.items()})
            out[f.name] = str(v)
        return out

    @classmethod
    def from_settings(cls, settings, **overrides):
        if not isinstance(settings, Settings):
            settings = Settings(settings)
        kwargs = {}
        for f in fields(cls):
            if f.name not in settings:
                continue
            raw = settings.values[f.name]
            if f.name in ("pattern_mix", "ctype_mix", "ctype_burst_prob"):
                kwargs[f.name] = parse_mapping(raw)
            elif f.type in ("int",) or isinstance(f.default, int):
                kwargs[f.name] = settings.int(f.name, f.default)
            else:
                kwargs[f.name] = settings.float(f.name, f.default)
        kwargs.update(overrides)
        return cls(**kwargs)


def region_popularity(cfg):
    """Shared popularity base over regions (sums to 1); a pure function of (seed, M, skew)."""
    rng = np.random.default_rng([cfg.seed, 0xB45E])
    base = rng.lognormal(0.0, cfg.population_skew, cfg.n_regions) if cfg.population_skew > 0 \
        else np.ones(cfg.n_regions)
    return base / base.sum()


def sample_region_weights(cfg, rng, base=None):
    """Per-cascade regional weights ~ Dirichlet(concentration * M * base)."""
    base = region_popularity(cfg) if base is None else base
    alpha = cfg.region_popularity_concentration * cfg.n_regions * base
    w = np.maximum(rng.dirichlet(alpha), 0.0)
    if w.sum() <= 0:  # every component underflowed; fall back to the base
        return base.copy()
    return w / w.sum()


def _pick(rng, mix, keys):
    p = np.array([mix.get(k, 0.0) for k in keys], float)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


def _fanout(pattern, cfg):
    """(root mean fan-out, per-reshare mean fan-out)."""
    r = 1.0 / (1.0 + cfg.view_to_reshare_ratio)
    b = cfg.mean_branching
    if pattern == "star":
        return b, max(b, 1.6 / r)
    if pattern == "split":
        return max(b / 2, 1.0), 1.6 / r
    return 2.0, 1.1 / r


def _grow_tree(rng, n, pattern, cfg, weights):
    """Branching process truncated to exactly ``n`` nodes.

    Returns parent index, kind, level, region and an ordering key per node
    (node 0 is the root). A child's key exceeds its parent's, so sorting by
    key gives a topological order.
    """
    r = 1.0 / (1.0 + cfg.view_to_reshare_ratio)
    root_fan, node_fan = _fanout(pattern, cfg)
    M = len(weights)
    parents = [np.array([-1])]
    kinds = [np.array([EventKind.RESHARE], dtype=np.int8)]
    levels = [np.array([0])]
    regions = [rng.choice(M, size=1, p=weights)]
    keys = [np.zeros(1)]
    total = 1
    root_region = regions[0]
    frontier = None  # (indices, levels, regions, keys) of current reshare frontier
    while total < n:
        if frontier is None or len(frontier[0]) == 0:
            # fresh broadcast from the root
            k = max(1, rng.poisson(root_fan))
            f_idx, f_lvl, f_reg, f_key = np.array([0]), np.array([0]), root_region, np.zeros(1)
            counts = np.array([k])
        else:
            f_idx, f_lvl, f_reg, f_key = frontier
            counts = rng.poisson(node_fan, len(f_idx))
        m = int(counts.sum())
        if m == 0:
            frontier = None
            continue
        par = np.repeat(f_idx, counts)
        lvl = np.repeat(f_lvl, counts) + 1
        preg = np.repeat(f_reg, counts)
        pkey = np.repeat(f_key, counts)
        if total + m > n:
            keep = np.sort(rng.choice(m, size=n - total, replace=False))
            par, lvl, preg, pkey = par[keep], lvl[keep], preg[keep], pkey[keep]
            m = len(keep)
        kind = (rng.random(m) < r).astype(np.int8)
        local = rng.random(m) < cfg.local_prob
        reg = np.where(local, preg, rng.choice(M, size=m, p=weights))
        key = pkey + rng.exponential(1.0, m)
        idx = np.arange(total, total + m)
        parents.append(par)
        kinds.append(kind)
        levels.append(lvl)
        regions.append(reg)
        keys.append(key)
        total += m
        rs = kind == EventKind.RESHARE
        frontier = (idx[rs], lvl[rs], reg[rs], key[rs])
    return (np.concatenate(parents), np.concatenate(kinds), np.concatenate(levels),
            np.concatenate(regions), np.concatenate(keys))


def _event_times(rng, n_events, cfg):
    """Sorted integer timestamps in [1, horizon] from a noisy daily decay profile."""
    n_days = max(1, math.ceil(cfg.horizon / DAY))
    tau = cfg.decay_days * math.exp(cfg.decay_spread * rng.standard_normal())
    days = np.arange(n_days)
    w = np.exp(-days / tau + cfg.daily_noise * rng.standard_normal(n_days))
    per_day = rng.multinomial(n_events, w / w.sum())
    day_of = np.repeat(days, per_day)
    lo = day_of * DAY + 1
    hi = np.minimum((day_of + 1) * DAY, cfg.horizon)
    t = lo + np.floor(rng.random(n_events) * (hi - lo + 1)).astype(np.int64)
    return np.sort(t)


def _cascade_size(rng, explosive, cfg):
    th = cfg.burst_threshold
    if explosive:
        size = th * (1.0 + rng.exponential(cfg.burst_tail))
        return int(min(math.floor(size), 10 * th))
    lo = math.log(max(2.0, cfg.size_floor * th))
    size = int(math.floor(math.exp(rng.uniform(lo, math.log(th)))))
    return min(max(size, 2), th - 1)


def generate_cascade(cfg, index, base=None):
    """Cascade ``index`` of the corpus; depends only on (cfg, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    ctype = _pick(rng, cfg.ctype_mix, list(ContentType))
    pattern = _pick(rng, cfg.pattern_mix, list(PATTERNS))
    explosive = rng.random() < cfg.ctype_burst_prob.get(ctype, 0.0)
    n = _cascade_size(rng, explosive, cfg)
    weights = sample_region_weights(cfg, rng, base)
    parent, kind, level, region, key = _grow_tree(rng, n, pattern, cfg, weights)
    order = np.argsort(key, kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    t = np.concatenate([[0], _event_times(rng, n - 1, cfg)])
    par = parent[order]
    par = np.where(par < 0, -1, rank[np.maximum(par, 0)])
    return Cascade(
        content_id=index, ctype=ctype, horizon=cfg.horizon,
        user=np.arange(n), parent=par, kind=kind[order], level=level[order],
        t=t, region=region[order],
    )


def generate_corpus(cfg, n_cascades):
    if n_cascades < 1:
        raise ConfigError("n_cascades must be >= 1")
    cfg.validate()
    base = region_popularity(cfg)
    return [generate_cascade(cfg, i, base) for i in range(n_cascades)]


# --------------------------------------------------------------------------
# corpus file codec


_KIND_TOKEN = {EventKind.VIEW: "V", EventKind.RESHARE: "R"}
_TOKEN_KIND = {"V": EventKind.VIEW, "R": EventKind.RESHARE}


def format_corpus(corpus):
    parts = []
    for c in corpus:
        parts.append(f"#cascade {c.content_id} {c.ctype.label} {c.horizon}\n")
        if c.size:
            kinds = np.where(c.kind == EventKind.RESHARE, "R", "V")
            rows = zip(c.user.tolist(), c.parent.tolist(), kinds.tolist(),
                       c.level.tolist(), c.t.tolist(), c.region.tolist())
            parts.append("".join(f"{u} {p} {k} {lv} {t} {r}\n" for u, p, k, lv, t, r in rows))
    return "".join(parts)


def write_corpus(path, corpus):
    Path(path).write_text(format_corpus(corpus), encoding="utf-8")


def parse_corpus(lines, n_regions=None):
    corpus = []
    header = None
    rows = []

    def flush():
        if header is None:
            return
        cid, ctype, horizon = header
        cols = np.array(rows, dtype=np.int64).reshape(-1, 6)
        c = Cascade(cid, ctype, horizon, *cols.T)
        c.validate(n_regions)
        corpus.append(c)

    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        if text.startswith("#cascade"):
            flush()
            parts = text.split()
            if len(parts) != 4:
                raise ParseError("header needs '#cascade <content_id> <ctype> <horizon>'", lineno)
            try:
                header = (int(parts[1]), ContentType.parse(parts[2]), int(parts[3]))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            rows = []
            continue
        if text.startswith("#"):
            continue
        if header is None:
            raise ParseError("event line before any #cascade header", lineno)
        parts = text.split()
        if len(parts) != 6:
            raise ParseError(f"expected 6 fields, got {len(parts)}", lineno)
        kind = _TOKEN_KIND.get(parts[2])
        if kind is None:
            raise ParseError(f"event kind must be V or R, got {parts[2]!r}", lineno)
        try:
            rows.append((int(parts[0]), int(parts[1]), int(kind), int(parts[3]), int(parts[4]), int(parts[5])))
        except ValueError:
            raise ParseError("non-integer field", lineno) from None
    flush()
    return corpus


def read_corpus(path, n_regions=None):
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh, n_regions)
