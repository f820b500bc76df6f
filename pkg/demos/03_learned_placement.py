"""Learn placements from exact-solver labels and check how close the learned
model gets on cascades it has not seen.

    python demos/03_learned_placement.py
"""
# %%
import time

import numpy as np

from cascadeplace import gan
from cascadeplace.cascade import GeneratorConfig, calibrated_scale, generate_corpus, generate_regions
from cascadeplace.cascade import latency_from_coords
from cascadeplace.placement import distance_aware_place, exact_solve, make_instance, transport_solve

M, C = 10, 3
regions = generate_regions(M, seed=2)
lat = latency_from_coords(regions, calibrated_scale(regions))
insts, xs = [], []
for c in generate_corpus(GeneratorConfig(seed=2, n_regions=M), 400):
    S = np.bincount(c.region, minlength=M)
    insts.append(make_instance(S, lat, C, regions.capacities))
    xs.append(S / S.sum())

# %% labels from the exact solver (the expensive part)
t0 = time.perf_counter()
labeled = gan.solve_labels(insts[:300], xs[:300])
print(f"300 labels in {time.perf_counter() - t0:.1f}s")

# %% semi-supervised training: labeled pairs plus unlabeled distributions
hist = []
G, D = gan.train(gan.GanTrainConfig(seed=0, epochs=80, C=C), labeled[:200], xs[200:300], hist)
print("epoch  L      L_s    L_u")
for e in (0, 19, 39, 79):
    print(f"{e + 1:5d}  " + "  ".join(f"{v:.3f}" for v in hist[e]))

# %% held-out comparison
test = range(300, 400)
opt = sum(exact_solve(insts[i])[1].cost_us for i in test)
learned = sum(gan.decide(D, insts[i], xs[i])[1].cost_us for i in test)
da = sum(transport_solve(insts[i], distance_aware_place(insts[i])).cost_us for i in test)
print(f"learned / optimal  {learned / opt:.3f}")
print(f"distance-aware / optimal  {da / opt:.3f}")

# %% decisions are cheap once trained
t0 = time.perf_counter()
for i in test:
    gan.infer_placement(D, xs[i], C)
print(f"{(time.perf_counter() - t0) / len(test) * 1e6:.0f} us per decision")
