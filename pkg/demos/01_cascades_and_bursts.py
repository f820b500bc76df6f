"""Walk through a synthetic corpus: what a cascade looks like, which ones explode,
and how well a small recurrent model calls bursts window by window.

    python demos/01_cascades_and_bursts.py
"""
# %%
import numpy as np

from cascadeplace.cascade import GeneratorConfig, generate_corpus
from cascadeplace.features import WindowSpec, extract_all
from cascadeplace.predictor import BurstTrainConfig, chained_probabilities, burst_windows, train_burst, window_accuracy
from cascadeplace import baselines

cfg = GeneratorConfig(seed=0, n_regions=8, burst_threshold=500)
corpus = generate_corpus(cfg, 1500)

# %% one cascade, up close
c = max(corpus[:50], key=len)
print(f"content {c.content_id} ({c.ctype.name}): {c.size} events, deepest level {c.level.max()}")
print("events per level:", np.bincount(c.level))
print("users per region:", np.bincount(c.region, minlength=cfg.n_regions))

# %% the corpus as a whole
sizes = np.array([len(x) for x in corpus])
print(f"median size {np.median(sizes):.0f}, largest {sizes.max()}, "
      f"explosive share {(sizes >= cfg.burst_threshold).mean():.3f}")

# %% features: 5 daily windows of macro statistics plus hourly micro sequences
spec = WindowSpec()
fs = extract_all(corpus, spec, cfg.n_regions, cfg.burst_threshold)
print("macro", fs.macro.shape, "micro", fs.micro.shape, "geo", fs.geo_seq.shape)

rng = np.random.default_rng(0)
order = rng.permutation(len(fs))
tr, te = fs.subset(np.sort(order[:1200])), fs.subset(np.sort(order[1200:]))

# %% recurrent model against two flat baselines
m = train_burst(tr, BurstTrainConfig(seed=0, epochs=6, hidden=16))
probs = chained_probabilities(m, te)
print("recurrent   ", np.round(window_accuracy(probs, te.explosive), 3))
lr = baselines.lr_train(tr)
print("logistic    ", np.round(window_accuracy(baselines.lr_predict(lr, te), te.explosive), 3))
ff = baselines.ffnn_train(tr, baselines.FfnnTrainConfig(seed=0, epochs=6))
print("feedforward ", np.round(window_accuracy(baselines.ffnn_predict(ff, te), te.explosive), 3))

# %% how early are bursts flagged?
bw = burst_windows(probs)
hit = bw[te.explosive]
print("explosive test cascades flagged in window:", np.bincount(hit, minlength=6)[1:], "missed:", (hit == 0).sum())
