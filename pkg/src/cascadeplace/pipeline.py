"""Staged end-to-end run: corpus -> features -> predictors -> labels -> placement model -> reports.

Every stage reads its inputs from the output directory and writes its
artifacts there, so any suffix of the stage list can be rerun on its own.
All report files are pure functions of the settings; wall-clock numbers go
to ``timing.json`` and ``bench.csv``, which are kept out of the reports.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, gan
from .cascade import GeneratorConfig, calibrated_scale, generate_corpus, generate_regions
from .cascade import latency_from_coords, read_corpus, write_corpus
from .config import Settings
from .errors import CascadePlaceError, ConfigError, StageError
from .evaluation import (C_GRID, GAMMA_GRID, EvalReport, MethodResult, bench_decision_time,
                         latency_reduction, satisfaction_curve, server_load_ratio, single_thread)
from .features import WindowSpec, extract_all, write_feature_csv
from .placement import (Assignment, distance_aware_place, exact_solve, greedy_place, heuristic_place,
                        heuristic_route, largest_remainder, make_instance, statistics_place,
                        transport_solve)
from .predictor import (BurstTrainConfig, GeoPredictor, GeoTrainConfig, BurstModel, burst_windows,
                        chained_probabilities, geo_mse, geo_windows, train_burst, train_geo,
                        window_accuracy)

STAGES = ("generate", "extract", "train-burst", "train-geo", "solve-labels", "train-gan", "evaluate")

DEFAULTS = {
    "n_cascades": 5000,
    "train_fraction": 0.8,
    "window_length": 86400,
    "n_slots": 24,
    "max_windows": 5,
    "decision_threshold": 0.5,
    "burst_epochs": 8,
    "burst_lr": 3e-3,
    "burst_batch": 256,
    "burst_hidden": 64,
    "geo_epochs": 40,
    "geo_lr": 3e-3,
    "geo_hidden": 64,
    "c_grid": "3, 5, 10, 15",
    "gamma_grid": " ".join(str(g) for g in GAMMA_GRID),
    "n_labels": 500,
    "gan_epochs": 150,
    "gan_lr": 1e-3,
    "gan_batch": 64,
    "label_mix": 0.5,
    "noise_dim": 16,
    "capacity_factor": 1.5,
    "max_latency_ms": 3.3,
    "n_eval": 100,
    "bench_instances": 20,
    "bench_repetitions": 5,
}


def _resolve(settings):
    s = settings if isinstance(settings, Settings) else Settings(settings)
    vals = {k: str(v) for k, v in DEFAULTS.items()}
    vals.update(s.values)
    return Settings(vals)


@dataclass
class Context:
    settings: Settings
    out: Path
    cache: dict = field(default_factory=dict)

    # ---- derived configuration

    @property
    def seed(self):
        return self.settings.int("seed", 0)

    @property
    def gen_cfg(self):
        return GeneratorConfig.from_settings(self.settings)

    @property
    def M(self):
        return self.gen_cfg.n_regions

    @property
    def spec(self):
        s = self.settings
        return WindowSpec(s.int("window_length", DAY_DEFAULT), s.int("n_slots", 24), s.int("max_windows", 5))

    @property
    def c_grid(self):
        grid = [int(c) for c in self.settings.list("c_grid", C_GRID, int) if 1 <= int(c) <= self.M]
        if not grid:
            raise ConfigError(f"no value of c_grid fits n_regions={self.M}")
        return grid

    @property
    def gammas(self):
        return tuple(self.settings.list("gamma_grid", GAMMA_GRID))

    def path(self, name):
        return self.out / name

    # ---- cached artifacts

    def corpus(self):
        if "corpus" not in self.cache:
            self.cache["corpus"] = read_corpus(self.path("corpus.txt"), self.M)
        return self.cache["corpus"]

    def regions(self):
        if "regions" not in self.cache:
            reg = generate_regions(self.M, self.seed)
            lat = latency_from_coords(reg, calibrated_scale(reg, self.settings.float("max_latency_ms", 3.3)))
            self.cache["regions"] = (reg, lat)
        return self.cache["regions"]

    def features(self):
        if "features" not in self.cache:
            self.cache["features"] = extract_all(self.corpus(), self.spec, self.M, self.gen_cfg.burst_threshold)
        return self.cache["features"]

    def split(self):
        if "split" not in self.cache:
            data = json.loads(self.path("split.json").read_text(encoding="utf-8"))
            self.cache["split"] = (np.array(data["train"], dtype=int), np.array(data["test"], dtype=int))
        return self.cache["split"]

    def burst_model(self):
        if "burst" not in self.cache:
            self.cache["burst"] = BurstModel.load(self.path("burst.ckpt"))
        return self.cache["burst"]

    def geo_model(self):
        if "geo" not in self.cache:
            self.cache["geo"] = GeoPredictor.load(self.path("geo.ckpt"))
        return self.cache["geo"]

    def verdicts(self, idx):
        """(probabilities (n, Q), burst windows (n,), geo windows (n,)) for cascades ``idx``."""
        fs = self.features().subset(idx)
        probs = chained_probabilities(self.burst_model(), fs)
        tau = self.settings.float("decision_threshold", 0.5)
        bw = burst_windows(probs, tau)
        return probs, bw, geo_windows(bw, self.spec.max_windows)

    def predicted_geo(self, idx, gw):
        fs = self.features()
        seqs = fs.geo_seq[idx, gw - 1]
        return self.geo_model().predict(seqs) if len(idx) else np.zeros((0, self.M))

    def instance(self, cascade, C):
        reg, lat = self.regions()
        S = np.bincount(cascade.region, minlength=self.M)
        return make_instance(S, lat, C, reg.capacities, self.settings.float("capacity_factor", 1.5))


DAY_DEFAULT = 86400


# --------------------------------------------------------------------------
# stages


def stage_generate(ctx):
    corpus = generate_corpus(ctx.gen_cfg, ctx.settings.int("n_cascades", 5000))
    write_corpus(ctx.path("corpus.txt"), corpus)
    reg, lat = ctx.regions()
    lines = ["region,x,y,capacity_weight"]
    lines += [f"{r.id},{r.coord[0]!r},{r.coord[1]!r},{r.capacity}" for r in reg.regions]
    ctx.path("regions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    ctx.cache["corpus"] = corpus


def stage_extract(ctx):
    fs = ctx.features()
    write_feature_csv(ctx.path("features.csv"), fs, ctx.spec)
    n = len(fs)
    order = np.random.default_rng([ctx.seed, 0x5EED]).permutation(n)
    n_train = int(round(ctx.settings.float("train_fraction", 0.8) * n))
    if not 0 < n_train < n:
        raise ConfigError("train_fraction leaves an empty train or test split")
    split = {"train": sorted(order[:n_train].tolist()), "test": sorted(order[n_train:].tolist())}
    ctx.path("split.json").write_text(json.dumps(split, sort_keys=True) + "\n", encoding="utf-8")
    ctx.cache.pop("split", None)


def _burst_cfg(ctx, **kw):
    s = ctx.settings
    return BurstTrainConfig(seed=ctx.seed, epochs=s.int("burst_epochs", 8), lr=s.float("burst_lr", 3e-3),
                            batch_size=s.int("burst_batch", 256), hidden=s.int("burst_hidden", 64), **kw)


def stage_train_burst(ctx):
    train, _ = ctx.split()
    m = train_burst(ctx.features().subset(train), _burst_cfg(ctx))
    m.save(ctx.path("burst.ckpt"))
    ctx.cache["burst"] = m


def stage_train_geo(ctx):
    train, _ = ctx.split()
    fs = ctx.features()
    _, _, gw = ctx.verdicts(train)
    pos = np.flatnonzero(fs.explosive[train])
    if len(pos) == 0:  # no explosive training cascade: fall back to all of them
        pos = np.arange(len(train))
    idx = train[pos]
    s = ctx.settings
    cfg = GeoTrainConfig(seed=ctx.seed, epochs=s.int("geo_epochs", 40), lr=s.float("geo_lr", 3e-3),
                         hidden=s.int("geo_hidden", 64))
    g = train_geo(fs.geo_seq[idx, gw[pos] - 1], fs.final_geo[idx], cfg)
    g.save(ctx.path("geo.ckpt"))
    ctx.cache["geo"] = g


def _label_indices(ctx):
    train, _ = ctx.split()
    return train[:min(ctx.settings.int("n_labels", 500), len(train))]


def stage_solve_labels(ctx):
    corpus = ctx.corpus()
    idx = _label_indices(ctx)
    for C in ctx.c_grid:
        insts = [ctx.instance(corpus[i], C) for i in idx]
        xs = [inst.S / inst.S.sum() for inst in insts]
        gan.write_labeled_csv(ctx.path(f"labeled_C{C}.csv"), gan.solve_labels(insts, xs))


def _gan_cfg(ctx, C):
    s = ctx.settings
    return gan.GanTrainConfig(seed=ctx.seed, epochs=s.int("gan_epochs", 150), lr=s.float("gan_lr", 1e-3),
                              g_lr=s.float("gan_lr", 1e-3), C=C, label_mix=s.float("label_mix", 0.5),
                              noise_dim=s.int("noise_dim", 16), batch_size=s.int("gan_batch", 64))


def _unlabeled(ctx):
    train, _ = ctx.split()
    rest = np.setdiff1d(train, _label_indices(ctx))
    if len(rest) == 0:
        rest = train
    _, _, gw = ctx.verdicts(rest)
    return ctx.predicted_geo(rest, gw)


def stage_train_gan(ctx):
    unl = _unlabeled(ctx)
    for C in ctx.c_grid:
        labeled = gan.read_labeled_csv(ctx.path(f"labeled_C{C}.csv"))
        G, D = gan.train(_gan_cfg(ctx, C), labeled, unl)
        gan.save_models(ctx.path(f"gan_C{C}.ckpt"), G, D)


def _evaluation_set(ctx):
    _, test = ctx.split()
    probs, bw, gw = ctx.verdicts(test)
    chosen = np.flatnonzero(bw > 0)
    label = "predicted_burst"
    if len(chosen) == 0:
        chosen = np.arange(len(test))
        label = "all_test"
    chosen = chosen[:ctx.settings.int("n_eval", 100)]
    return test[chosen], gw[chosen], label


def _origin_assignment(inst, origin):
    v = np.zeros((inst.M, inst.M), dtype=np.int64)
    v[:, origin] = inst.S
    return Assignment(v, int((v * inst.l_us).sum()))


def placement_methods(ctx, C, D, history):
    """name -> f(true instance, predicted distribution, origin) -> Assignment."""

    def planned(inst, x):
        return inst.with_demand(largest_remainder(inst.demand, x))

    return {
        "optimal": lambda inst, x, o: exact_solve(inst)[1],
        "learned": lambda inst, x, o: gan.decide(D, inst, x)[1],
        "greedy": lambda inst, x, o: transport_solve(inst, greedy_place(planned(inst, x))[0]),
        "heuristic": lambda inst, x, o: heuristic_route(inst, heuristic_place(planned(inst, x), x)[0]),
        "distance_aware": lambda inst, x, o: transport_solve(inst, distance_aware_place(inst)),
        "statistics": lambda inst, x, o: transport_solve(inst, statistics_place(history, inst)),
        "no_replication": lambda inst, x, o: _origin_assignment(inst, o),
    }


def stage_evaluate(ctx):
    corpus = ctx.corpus()
    fs = ctx.features()
    train, test = ctx.split()
    idx, gw, label = _evaluation_set(ctx)
    xhat = ctx.predicted_geo(idx, gw)
    _, _, gw_train = ctx.verdicts(train)
    history = list(ctx.predicted_geo(train, gw_train))
    report = EvalReport(gammas=ctx.gammas)
    for C in ctx.c_grid:
        _, D = gan.load_models(ctx.path(f"gan_C{C}.ckpt"))
        methods = placement_methods(ctx, C, D, history)
        insts = [ctx.instance(corpus[i], C) for i in idx]
        origins = [int(corpus[i].region[0]) for i in idx]
        base = sum(inst.S @ inst.l_us[:, o] for inst, o in zip(insts, origins)) / 1000.0
        for name, f in methods.items():
            total, sat, load = 0.0, np.zeros(len(ctx.gammas)), np.zeros(ctx.M)
            for inst, x, o in zip(insts, xhat, origins):
                a = f(inst, x, o)
                total += a.total_latency
                w = inst.demand
                sat += w * satisfaction_curve(inst, a, ctx.gammas)
                load += server_load_ratio(a)
            users = sum(inst.demand for inst in insts)
            n = len(insts)
            red = latency_reduction(total, base) + 0.0 if base > 0 else 0.0
            report.add(MethodResult(name, C, total, red, list(sat / max(users, 1)),
                                    list(load / max(n, 1)), n))
    report.extras["evaluation_set"] = label
    report.write_csv(ctx.path("report_placement.csv"))
    report.write_loads_csv(ctx.path("report_loads.csv"))
    report.write_jsonl(ctx.path("report_placement.jsonl"))
    _burst_report(ctx, fs, train, test)
    _geo_report(ctx, fs, test)
    write_predictions(ctx, ctx.path("predictions.csv"), test)


def _burst_report(ctx, fs, train, test):
    tr, te = fs.subset(train), fs.subset(test)
    Q = ctx.spec.max_windows
    tau = ctx.settings.float("decision_threshold", 0.5)
    rows = {"recurrent": window_accuracy(chained_probabilities(ctx.burst_model(), te), te.explosive, tau)}
    if tr.explosive.any() and not tr.explosive.all():
        lr = baselines.lr_train(tr)
        rows["logistic"] = window_accuracy(baselines.lr_predict(lr, te), te.explosive, tau)
        ff = baselines.ffnn_train(tr, baselines.FfnnTrainConfig(seed=ctx.seed,
                                                                epochs=ctx.settings.int("burst_epochs", 8)))
        rows["feedforward"] = window_accuracy(baselines.ffnn_predict(ff, te), te.explosive, tau)
    horizon_windows = ctx.gen_cfg.horizon // ctx.spec.window_length
    holt = [float("nan")]
    for k in range(2, Q + 1):
        hm = baselines.holt_train(baselines.cumulative_sizes(tr, k), tr.final_size, horizon_windows - k,
                                  ctx.gen_cfg.burst_threshold)
        pred = hm.predict(baselines.cumulative_sizes(te, k), horizon_windows - k)
        holt.append(float((pred == te.explosive).mean()))
    rows["holt"] = np.array(holt)
    lines = ["method," + ",".join(f"acc_window_{k}" for k in range(1, Q + 1))]
    for name, acc in rows.items():
        lines.append(name + "," + ",".join("" if np.isnan(a) else f"{a:.6f}" for a in acc))
    ctx.path("report_burst.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _geo_report(ctx, fs, test):
    pos = test[fs.explosive[test]]
    out = {"n": int(len(pos))}
    if len(pos):
        _, _, gw = ctx.verdicts(pos)
        pred = ctx.predicted_geo(pos, gw)
        out["mse"] = round(geo_mse(pred, fs.final_geo[pos]), 15)
    ctx.path("report_geo.json").write_text(json.dumps(out, sort_keys=True) + "\n", encoding="utf-8")


def write_predictions(ctx, path, idx):
    """One verdict line per cascade: content_id, burst_window, p_1..p_Q, x_1..x_M."""
    fs = ctx.features()
    probs, bw, gw = ctx.verdicts(idx)
    Q, M = probs.shape[1], ctx.M
    geo = ctx.predicted_geo(idx, gw)
    head = ["content_id", "burst_window"] + [f"p_{k}" for k in range(1, Q + 1)]
    head += [f"x_{m}" for m in range(1, M + 1)]
    lines = [",".join(head)]
    for r, i in enumerate(idx):
        k = int(bw[r])
        ps = [f"{p:.9f}" if (k == 0 or j < k) else "" for j, p in enumerate(probs[r])]
        xs = [f"{v:.9f}" for v in geo[r]] if k else [""] * M
        lines.append(",".join([str(int(fs.content_id[i])), str(k) if k else ""] + ps + xs))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def stage_bench(ctx):
    """Decision wall time of greedy and the learned model over the C grid (not part of the reports)."""
    corpus = ctx.corpus()
    n = ctx.settings.int("bench_instances", 20)
    reps = ctx.settings.int("bench_repetitions", 5)
    picks = [c for c in corpus if c.size > 0][:n]
    lines = ["method,C,median_s,mad_s"]
    for C in ctx.c_grid:
        insts = [ctx.instance(c, C) for c in picks]
        ck = ctx.path(f"gan_C{C}.ckpt")
        D = gan.load_models(ck)[1] if ck.exists() else gan.DiscriminatorNet(ctx.M, seed=ctx.seed)
        for name, f in (("greedy", greedy_place),
                        ("learned", lambda inst: gan.infer_placement(D, inst.S / inst.S.sum(), inst.C))):
            st = bench_decision_time(f, insts, reps)
            lines.append(f"{name},{C},{st.median:.9f},{st.mad:.9f}")
    ctx.path("bench.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


STAGE_FUNCS = {
    "generate": stage_generate,
    "extract": stage_extract,
    "train-burst": stage_train_burst,
    "train-geo": stage_train_geo,
    "solve-labels": stage_solve_labels,
    "train-gan": stage_train_gan,
    "evaluate": stage_evaluate,
    "bench": stage_bench,
}


def run_stage(ctx, name):
    try:
        STAGE_FUNCS[name](ctx)
    except (CascadePlaceError, OSError, ValueError, KeyError) as exc:
        if isinstance(exc, (ConfigError, StageError)):
            raise
        raise StageError(name, exc) from exc


def run_pipeline(settings, out_dir, stages=STAGES):
    """Run ``stages`` in order; returns per-stage wall times (also written to timing.json)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(_resolve(settings), out)
    timing = {}
    with single_thread():
        for name in stages:
            if name not in STAGE_FUNCS:
                raise ConfigError(f"unknown stage {name!r}")
            t0 = time.perf_counter()
            run_stage(ctx, name)
            timing[name] = time.perf_counter() - t0
    tpath = out / "timing.json"
    old = json.loads(tpath.read_text(encoding="utf-8")) if tpath.exists() else {}
    old.update({k: round(v, 3) for k, v in timing.items()})
    tpath.write_text(json.dumps(old, sort_keys=True) + "\n", encoding="utf-8")
    return timing


def make_context(settings, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return Context(_resolve(settings), out)
