"""Replica placement: minimize total access latency under capacity and replica-count limits.

Latencies are given in milliseconds and converted once to integer
microseconds (``round(l * 1000)``) so every solver compares exact integer
costs. ``Assignment.total_latency`` reports the fixed-point cost back in ms.

Tie-breaking between equal-cost decisions uses the sorted tuple of open
region ids (so ``(0, 5) < (1, 2)`` and ``(0,) < (0, 1)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InfeasibleError, ParseError, ValidationError

US_PER_MS = 1000


def to_fixed_point(latency_ms):
    return np.rint(np.asarray(latency_ms, float) * US_PER_MS).astype(np.int64)


@dataclass(frozen=True, eq=False)
class PlacementInstance:
    S: np.ndarray
    U: np.ndarray
    l: np.ndarray
    C: int
    l_us: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        S = np.asarray(self.S)
        U = np.asarray(self.U)
        for name, arr in (("S", S), ("U", U)):
            if arr.ndim != 1 or np.any(arr < 0) or np.any(np.asarray(arr, float) != np.rint(arr)):
                raise ValidationError(f"{name} must be a vector of nonnegative integers")
        S = S.astype(np.int64)
        U = U.astype(np.int64)
        M = len(S)
        l = np.asarray(self.l, float)
        if len(U) != M or l.shape != (M, M):
            raise ValidationError(f"inconsistent sizes: S {S.shape}, U {U.shape}, l {l.shape}")
        if np.any(l < 0) or not np.all(np.isfinite(l)):
            raise ValidationError("latencies must be finite and nonnegative")
        if not 1 <= int(self.C) <= M:
            raise ValidationError(f"C={self.C} outside 1..{M}")
        for name, v in (("S", S), ("U", U), ("l", l)):
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        object.__setattr__(self, "C", int(self.C))
        lus = to_fixed_point(l)
        lus.flags.writeable = False
        object.__setattr__(self, "l_us", lus)

    @property
    def M(self):
        return len(self.S)

    @property
    def demand(self):
        return int(self.S.sum())

    def with_demand(self, S):
        return PlacementInstance(np.asarray(S), self.U, self.l, self.C)

    def with_capacity(self, U):
        return PlacementInstance(self.S, np.asarray(U), self.l, self.C)


@dataclass(frozen=True, eq=False)
class Assignment:
    v: np.ndarray
    cost_us: int

    @property
    def total_latency(self):
        return self.cost_us / US_PER_MS

    @property
    def served(self):
        return self.v.sum(0)


def decision_from_sites(sites, M):
    I = np.zeros(M, dtype=np.int64)
    I[list(sites)] = 1
    return I


def open_sites(I):
    return tuple(int(j) for j in np.flatnonzero(np.asarray(I)))


def check_assignment(inst, I, a):
    """List of violated constraints (empty when the solution is valid)."""
    problems = []
    I = np.asarray(I)
    if not np.all((I == 0) | (I == 1)):
        problems.append("I not binary")
    if I.sum() > inst.C:
        problems.append(f"{int(I.sum())} replicas exceed C={inst.C}")
    v = np.asarray(a.v)
    if v.shape != (inst.M, inst.M) or np.any(v < 0) or v.dtype.kind not in "iu":
        problems.append("flows must be a nonnegative integer M x M matrix")
        return problems
    if np.any(v.sum(1) != inst.S):
        problems.append("demand not exactly served")
    if np.any(v.sum(0) > I * inst.U):
        problems.append("capacity or closed-site violation")
    if int((v * inst.l_us).sum()) != a.cost_us:
        problems.append("reported cost does not match flows")
    return problems


# --------------------------------------------------------------------------
# transportation oracle


def _ssp(supply, cap, cost, penalty=None):
    """Min-cost transportation by successive shortest augmenting paths.

    supply: (n,) ints, cap: (k,) ints, cost: (n, k) ints. With ``penalty``,
    an extra uncapacitated column of that unit cost absorbs unserved
    supply. Returns the (n, k[+1]) integer flow. Shortest paths in the
    residual graph (which has negative reverse arcs) come from a vectorized
    Bellman-Ford over the bipartite structure.
    """
    supply = supply.astype(np.int64).copy()
    cap = cap.astype(np.int64).copy()
    cost = cost.astype(np.int64)
    if penalty is not None:
        cost = np.column_stack([cost, np.full(len(supply), penalty, np.int64)])
        cap = np.append(cap, supply.sum())
    n, k = cost.shape
    flow = np.zeros((n, k), dtype=np.int64)
    fcost = cost.astype(float)
    inf = np.inf
    while supply.sum() > 0:
        dist_d = np.where(supply > 0, 0.0, inf)
        pred_d = np.full(n, -1)
        dist_s = np.full(k, inf)
        pred_s = np.full(k, -1)
        for _ in range(n + k + 1):
            cand = dist_d[:, None] + fcost
            best_i = np.argmin(cand, axis=0)
            best = cand[best_i, np.arange(k)]
            upd = best < dist_s
            dist_s[upd] = best[upd]
            pred_s[upd] = best_i[upd]
            back = np.where(flow > 0, dist_s[None, :] - fcost, inf)
            best_j = np.argmin(back, axis=1)
            bval = back[np.arange(n), best_j]
            upd_d = bval < dist_d
            if not upd_d.any():
                break
            dist_d[upd_d] = bval[upd_d]
            pred_d[upd_d] = best_j[upd_d]
        else:  # pragma: no cover - would indicate a negative cycle
            raise RuntimeError("residual graph did not converge")
        reach = np.where(cap > 0, dist_s, inf)
        j = int(np.argmin(reach))
        if not np.isfinite(reach[j]):
            raise InfeasibleError("no augmenting path", shortfall=int(supply.sum()))
        # walk back to a source, collecting the alternating path
        path = []
        jj = j
        while True:
            i = int(pred_s[jj])
            path.append((i, jj, +1))
            jb = int(pred_d[i])
            if jb < 0:
                break
            path.append((i, jb, -1))
            jj = jb
        delta = min(int(supply[i]), int(cap[j]))
        for a, b, sign in path:
            if sign < 0:
                delta = min(delta, int(flow[a, b]))
        for a, b, sign in path:
            flow[a, b] += sign * delta
        supply[i] -= delta
        cap[j] -= delta
    return flow


def _nearest(L_open):
    """Index (into the open columns) of the cheapest site per row, lowest on ties."""
    return np.argmin(L_open, axis=1)


def transport_flow(S, U_open, L_open):
    """Optimal integer flow for fixed open sites; (n, k) matrix."""
    near = _nearest(L_open)
    load = np.bincount(near, weights=S, minlength=L_open.shape[1])
    if np.all(load <= U_open):
        flow = np.zeros(L_open.shape, dtype=np.int64)
        flow[np.arange(len(S)), near] = S
        return flow
    return _ssp(S, U_open, L_open)


def transport_solve(inst, I):
    sites = np.flatnonzero(np.asarray(I))
    total = inst.demand
    capacity = int(inst.U[sites].sum())
    if capacity < total:
        raise InfeasibleError(
            f"open capacity {capacity} below demand {total} (shortfall {total - capacity})",
            shortfall=total - capacity)
    v = np.zeros((inst.M, inst.M), dtype=np.int64)
    if total and len(sites):
        v[:, sites] = transport_flow(inst.S, inst.U[sites], inst.l_us[:, sites])
    return Assignment(v, int((v * inst.l_us).sum()))


def _penalty(inst):
    return int(inst.l_us.max()) * inst.M + 1


def penalized_cost(inst, sites):
    """Transport cost where unserved users pay a penalty above any real route."""
    sites = list(sites)
    P = _penalty(inst)
    if inst.demand == 0:
        return 0
    if not sites:
        return P * inst.demand
    flow = _ssp_or_nearest(inst, sites, P)
    costs = np.column_stack([inst.l_us[:, sites], np.full(inst.M, P)])
    return int((flow * costs).sum())


def _ssp_or_nearest(inst, sites, P):
    L = inst.l_us[:, sites]
    U = inst.U[sites]
    near = _nearest(L)
    load = np.bincount(near, weights=inst.S, minlength=len(sites))
    if np.all(load <= U):
        flow = np.zeros((inst.M, len(sites) + 1), dtype=np.int64)
        flow[np.arange(inst.M), near] = inst.S
        return flow
    return _ssp(inst.S, U, L, penalty=P)


# --------------------------------------------------------------------------
# exact solver


def _cost_of(inst, sites):
    sites = list(sites)
    flow = transport_flow(inst.S, inst.U[sites], inst.l_us[:, sites])
    return int((flow * inst.l_us[:, sites]).sum())


def _better(cost, sites, best_cost, best_sites):
    return cost < best_cost or (cost == best_cost and tuple(sites) < best_sites)


def _capped_savings(gain, S, cap):
    """Best saving site k can deliver serving at most cap[k] users (fractional knapsack).

    gain: (M, J, K) per-user saving of region i moving to site k given child j.
    """
    order = np.argsort(-gain, axis=0, kind="stable")
    g = np.take_along_axis(gain, order, axis=0)
    s = S[order]
    before = np.cumsum(s, axis=0) - s
    take = np.clip(cap[None, None, :] - before, 0.0, s)
    return (take * g).sum(0)


def _site_values(lam, S, U, L):
    """Most negative reduced cost each site can collect within its capacity.

    rho_j = min over 0 <= v_ij <= S_i, sum_i v_ij <= U_j of sum_i (L_ij - lam_i) v_ij,
    a fractional knapsack solved by taking the cheapest rows first. Also
    returns the maximizing flows (M, M).
    """
    R = L - lam[:, None]
    order = np.argsort(R, axis=0, kind="stable")
    r = np.take_along_axis(R, order, axis=0)
    s = np.where(r < 0, S[order], 0.0)
    before = np.cumsum(s, axis=0) - s
    take = np.clip(U[None, :] - before, 0.0, s)
    v = np.zeros_like(R)
    np.put_along_axis(v, order, take, axis=0)
    return (take * r).sum(0), v


def _lagrangian_prices(S, U, L, C, upper, iters=150):
    """Subgradient ascent on the bound sum(S*lam) + (C most negative site values).

    Relaxes the "serve every user" rows with prices lam; any lam gives a
    valid lower bound, so the search only needs to be good, not exact.
    """
    M = len(S)
    lam = np.sort(L, axis=1)[:, min(C, M - 1)].astype(float)
    best_val, best_lam = -np.inf, lam.copy()
    theta = 2.0
    stall = 0
    for _ in range(iters):
        rho, v = _site_values(lam, S, U, L)
        pick = np.argsort(rho, kind="stable")[:C]
        pick = pick[rho[pick] < 0]
        val = float(S @ lam + rho[pick].sum())
        if val > best_val + 1e-9:
            best_val, best_lam, stall = val, lam.copy(), 0
        else:
            stall += 1
            if stall >= 10:
                theta *= 0.5
                stall = 0
        g = S - v[:, pick].sum(1)
        gg = float(g @ g)
        if gg == 0 or theta < 1e-4 or upper - val <= 1e-9:
            break
        lam = lam + theta * (upper - val) / gg * g
    return best_lam


def exact_solve(inst, incumbent=None):
    """Globally optimal decision by depth-first branch and bound.

    Subsets are visited in increasing order of their sorted id tuples.
    A subtree (fixed open set O plus up to r sites with larger ids) is
    bounded below by the larger of two capacity-free relaxations: every
    remaining site open, and the cost with O open minus the r largest
    single-site savings (savings of a set never exceed the sum of its
    members' savings). Leaves are priced with the transportation oracle.
    """
    M, C = inst.M, inst.C
    S, U, L = inst.S, inst.U, inst.l_us
    total = inst.demand
    if total == 0:
        return np.zeros(M, dtype=np.int64), Assignment(np.zeros((M, M), dtype=np.int64), 0)
    top_cap = int(np.sort(U)[::-1][:C].sum())
    if top_cap < total:
        raise InfeasibleError(
            f"best {C} capacities sum to {top_cap} < demand {total}", shortfall=total - top_cap)

    best_cost = math.inf
    best_sites = (M,)
    if incumbent is None:
        try:
            incumbent = open_sites(greedy_place(inst)[0])
        except InfeasibleError:
            incumbent = None
    if incumbent:
        best_cost, best_sites = _cost_of(inst, incumbent), tuple(incumbent)

    big = float(L.max())
    Sf = S.astype(float)
    Lf = L.astype(float)
    Uf = U.astype(float)
    upper = best_cost if np.isfinite(best_cost) else float(Sf.sum() * big)
    lam = _lagrangian_prices(Sf, Uf, Lf, C, upper)
    rho, _ = _site_values(lam, Sf, Uf, Lf)
    base_lam = float(Sf @ lam)
    # float bounds on integer costs: shave a little so rounding never prunes a tie
    slack = 1e-9 * max(1.0, upper) + 1e-6

    def visit(sites, last, d_open, rho_open):
        nonlocal best_cost, best_sites
        if sites and int(U[list(sites)].sum()) >= total:
            lb = float(Sf @ d_open)
            if _better(lb, sites, best_cost, best_sites):
                c = _cost_of(inst, sites)
                if _better(c, sites, best_cost, best_sites):
                    best_cost, best_sites = c, tuple(sites)
        r = C - len(sites)
        if r == 0 or last >= M - 1:
            return
        F = np.arange(last + 1, M)
        nF = len(F)
        LF = Lf[:, F]
        d_child = np.minimum(d_open[:, None], LF)  # (M, nF): open set plus child j
        later = np.triu(np.ones((nF, nF), dtype=bool), 1)  # later[j, k]: k > j
        if r > 1:
            gain = np.maximum(d_child[:, :, None] - LF[:, None, :], 0.0)
            sav = _capped_savings(gain, Sf, U[F].astype(float)) * later
            top = -np.sort(-sav, axis=1)[:, :r - 1].sum(1)
            suf = np.minimum.accumulate(LF[:, ::-1], axis=1)[:, ::-1]
            suf_after = np.concatenate([suf[:, 1:], np.full((M, 1), np.inf)], axis=1)
            lb2 = Sf @ np.minimum(d_child, suf_after)
            capm = np.where(later, U[F][None, :], 0)
            cap_top = -np.sort(-capm, axis=1)[:, :r - 1].sum(1)
        else:
            top = np.zeros(nF)
            lb2 = Sf @ d_child
            cap_top = np.zeros(nF)
        lb = np.maximum(Sf @ d_child - top, lb2)
        # Lagrangian bound: fixed sites' values plus the r-1 most negative later ones
        rF = rho[F]
        neg = np.where(later, np.minimum(rF, 0.0)[None, :], 0.0)
        best_rest = np.sort(neg, axis=1)[:, :r - 1].sum(1) if r > 1 else np.zeros(nF)
        lb3 = base_lam + rho_open + rF + best_rest
        lb = np.maximum(lb, lb3) - slack
        base_cap = int(U[list(sites)].sum()) if sites else 0
        cap_ok = base_cap + U[F] + cap_top >= total
        for idx in range(nF):
            if not cap_ok[idx]:
                continue
            child = sites + (int(F[idx]),)
            if not _better(lb[idx], child, best_cost, best_sites):
                continue
            visit(child, int(F[idx]), d_child[:, idx], rho_open + rF[idx])

    visit((), -1, np.full(M, big), 0.0)
    if not np.isfinite(best_cost):  # pragma: no cover - guarded by the capacity check
        raise InfeasibleError("no feasible decision found")
    I = decision_from_sites(best_sites, M)
    return I, transport_solve(inst, I)


def brute_force_solve(inst):
    """Enumerate every subset of size <= C; reference for exact_solve on small M."""
    from itertools import combinations

    best = (math.inf, (inst.M,))
    if inst.demand == 0:
        best = (0, ())
    for k in range(1, inst.C + 1):
        for sites in combinations(range(inst.M), k):
            if inst.U[list(sites)].sum() < inst.demand:
                continue
            a = transport_solve(inst, decision_from_sites(sites, inst.M))
            if (a.cost_us, sites) < best:
                best = (a.cost_us, sites)
    if not np.isfinite(best[0]):
        raise InfeasibleError("no feasible subset")
    return decision_from_sites(best[1], inst.M), best[0]


# --------------------------------------------------------------------------
# baselines


def greedy_place(inst):
    """Add, one at a time, the site whose opening most lowers the penalized cost."""
    M, C = inst.M, inst.C
    sites, order = [], []
    current = penalized_cost(inst, sites)
    for _ in range(C):
        best_j, best_c = None, current
        for j in range(M):
            if j in sites:
                continue
            c = penalized_cost(inst, sorted(sites + [j]))
            if c < best_c:
                best_j, best_c = j, c
        if best_j is None:
            break
        order.append(best_j)
        sites = sorted(sites + [best_j])
        current = best_c
    I = decision_from_sites(sites, M)
    if int(inst.U[I == 1].sum()) < inst.demand:
        # myopic picks ran out of capacity; earlier picks are kept preferentially
        score = np.zeros(M)
        score[order] = np.arange(len(order), 0, -1)
        I = repair_decision(inst, I, score)
    return I, transport_solve(inst, I)


def largest_remainder(total, weights):
    """Integer apportionment of ``total`` proportional to ``weights``; ties to lowest index."""
    w = np.asarray(weights, float)
    if w.sum() <= 0:
        raise ValidationError("weights must have positive sum")
    quota = total * w / w.sum()
    base = np.floor(quota).astype(np.int64)
    rest = int(total - base.sum())
    frac = quota - base
    order = np.lexsort((np.arange(len(w)), -frac))
    base[order[:rest]] += 1
    return base


def distance_aware_place(inst):
    uniform = largest_remainder(inst.demand, np.ones(inst.M))
    I, _ = exact_solve(inst.with_demand(uniform))
    return I


def statistics_place(history, inst):
    history = [np.asarray(h, float) for h in history]
    if not history:
        raise ConfigError("statistics placement needs a nonempty history")
    mean = np.mean(history, axis=0)
    I, _ = exact_solve(inst.with_demand(largest_remainder(inst.demand, mean)))
    return I


def repair_decision(inst, I, score):
    """Swap low-scored replicas for the largest closed capacity until feasible.

    Each step strictly raises the open capacity, so this stops; it only
    gives up once the open sites already hold the C largest capacities.
    """
    I = np.asarray(I, dtype=np.int64).copy()
    score = np.asarray(score, float)
    total = inst.demand
    while int(inst.U[I == 1].sum()) < total:
        closed = np.flatnonzero(I == 0)
        if not len(closed):
            raise InfeasibleError("cannot repair decision to meet demand",
                                  shortfall=total - int(inst.U[I == 1].sum()))
        add = int(closed[np.lexsort((closed, -inst.U[closed]))[0]])
        if I.sum() < inst.C:
            I[add] = 1
            continue
        smaller = [j for j in np.flatnonzero(I) if inst.U[j] < inst.U[add]]
        if not smaller:
            raise InfeasibleError("no capacity-increasing swap left",
                                  shortfall=total - int(inst.U[I == 1].sum()))
        drop = min(smaller, key=lambda j: (score[j], -j))
        I[drop], I[add] = 0, 1
    return I


def top_c(score, C):
    """Indicator of the C largest scores; ties go to the lowest region id."""
    score = np.asarray(score, float)
    order = np.lexsort((np.arange(len(score)), -score))
    I = np.zeros(len(score), dtype=np.int64)
    I[order[:C]] = 1
    return I


def _water_fill(amount, cap):
    """Round-robin split of ``amount`` units over ``cap`` (lowest index first)."""
    cap = np.asarray(cap, np.int64)
    if amount <= 0:
        return np.zeros_like(cap)
    lo, hi = 0, int(cap.max())
    while lo < hi:  # largest h with sum(min(cap, h)) <= amount
        mid = (lo + hi + 1) // 2
        if np.minimum(cap, mid).sum() <= amount:
            lo = mid
        else:
            hi = mid - 1
    give = np.minimum(cap, lo)
    rest = amount - int(give.sum())
    extra = np.flatnonzero(cap > lo)[:rest]
    give[extra] += 1
    return give


def heuristic_route(inst, I):
    """Serve locally where a replica has room; spread overflow evenly over remaining capacity."""
    I = np.asarray(I)
    M = inst.M
    v = np.zeros((M, M), dtype=np.int64)
    remaining = inst.U * (I == 1)
    over = inst.S.copy()
    for j in np.flatnonzero(I):
        take = min(int(over[j]), int(remaining[j]))
        v[j, j] = take
        over[j] -= take
        remaining[j] -= take
    if over.sum() > remaining.sum():
        raise InfeasibleError("replica capacity below demand",
                              shortfall=int(over.sum() - remaining.sum()))
    for i in range(M):
        if over[i] == 0:
            continue
        give = _water_fill(int(over[i]), remaining)
        v[i] += give
        remaining -= give
    return Assignment(v, int((v * inst.l_us).sum()))


def heuristic_place(inst, predicted_geo):
    I = top_c(predicted_geo, inst.C)
    if int(inst.U[I == 1].sum()) < inst.demand:
        I = repair_decision(inst, I, predicted_geo)
    return I, heuristic_route(inst, I)


def no_replication_cost(inst, origin):
    """Latency (ms) when everybody fetches from ``origin``; capacity ignored."""
    return int(inst.S @ inst.l_us[:, origin]) / US_PER_MS


# --------------------------------------------------------------------------
# instance construction and files


def make_instance(S, latency, C, capacity_weights=None, factor=1.5):
    """Capacities sized so that any C sites hold about ``factor`` times the demand."""
    S = np.asarray(S, np.int64)
    M = len(S)
    w = np.ones(M) if capacity_weights is None else np.asarray(capacity_weights, float)
    w = w / w.mean()
    U = np.ceil(factor * S.sum() / C * w).astype(np.int64)
    return PlacementInstance(S, U, latency, C)


def format_instance(inst):
    lines = [f"{inst.M} {inst.C}", " ".join(map(str, inst.S.tolist())), " ".join(map(str, inst.U.tolist()))]
    lines += [" ".join(repr(float(x)) for x in row) for row in inst.l]
    return "\n".join(lines) + "\n"


def parse_instance(text):
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows or len(rows[0]) != 2:
        raise ParseError("first line must be 'M C'", 1)
    try:
        M, C = int(rows[0][0]), int(rows[0][1])
        if len(rows) != M + 3:
            raise ParseError(f"expected {M + 3} non-empty lines, got {len(rows)}")
        S = np.array([int(x) for x in rows[1]])
        U = np.array([int(x) for x in rows[2]])
        l = np.array([[float(x) for x in r] for r in rows[3:]])
    except ValueError as exc:
        raise ParseError(f"bad number: {exc}") from None
    if l.shape != (M, M) or len(S) != M or len(U) != M:
        raise ParseError("row lengths do not match M")
    return PlacementInstance(S, U, l, C)


def read_instance(path):
    with open(path, encoding="utf-8") as fh:
        return parse_instance(fh.read())


def write_instance(path, inst):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_instance(inst))


def format_decision(I, a):
    lines = ["I," + ",".join(str(int(x)) for x in I), f"total_latency,{a.total_latency!r}", "i,j,flow"]
    for i, j in zip(*np.nonzero(a.v)):
        lines.append(f"{i},{j},{int(a.v[i, j])}")
    return "\n".join(lines) + "\n"
