"""Replica placement for one bursting cascade: the exact solver next to the
cheaper baselines, and what the difference means for users.

    python demos/02_placement_solvers.py
"""
# %%
import numpy as np

from cascadeplace.cascade import GeneratorConfig, calibrated_scale, generate_corpus, generate_regions
from cascadeplace.cascade import latency_from_coords
from cascadeplace.evaluation import satisfaction_curve, server_load_ratio, GAMMA_GRID
from cascadeplace.placement import (distance_aware_place, exact_solve, greedy_place, heuristic_place,
                                    make_instance, no_replication_cost, transport_solve, format_decision)

M = 12
regions = generate_regions(M, seed=1)
lat = latency_from_coords(regions, calibrated_scale(regions, 3.3))  # worst pair = 3.3 ms
corpus = generate_corpus(GeneratorConfig(seed=1, n_regions=M), 300)
c = max(corpus, key=len)
S = np.bincount(c.region, minlength=M)
print(f"{c.size} users, origin region {c.region[0]}, demand by region {S.tolist()}")

# %% the same instance for three replica budgets
# per-site capacity is sized as demand / C, so more replicas also means smaller ones
for C in (2, 4, 6):
    inst = make_instance(S, lat, C, regions.capacities)
    res = {
        "exact": exact_solve(inst),
        "greedy": greedy_place(inst),
        "heuristic": heuristic_place(inst, S / S.sum()),
    }
    I = distance_aware_place(inst)
    res["distance-aware"] = (I, transport_solve(inst, I))
    print(f"\nC={C}  no replication: {no_replication_cost(inst, int(c.region[0])):.1f} ms total")
    for name, (I, a) in res.items():
        sat = dict(zip(GAMMA_GRID, satisfaction_curve(inst, a)))
        print(f"  {name:15s} sites {np.flatnonzero(I).tolist()!s:22s} {a.total_latency:9.1f} ms"
              f"   within 1 ms: {sat[1.0]:.2f}")

# %% the exact answer in the solve-command output format
inst = make_instance(S, lat, 4, regions.capacities)
I, a = exact_solve(inst)
print(format_decision(I, a).splitlines()[:3])
print("load share per open site:", np.round(server_load_ratio(a)[I == 1], 3))
