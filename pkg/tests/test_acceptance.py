"""Acceptance benchmarks: one test per criterion, each printing a PASS/FAIL line.

The burst, geo and placement-model benchmarks share trained models through
module fixtures; the whole module takes roughly half an hour single-threaded.
"""

import time

import numpy as np
import pytest

from cascadeplace import baselines, gan
from cascadeplace.cascade import GeneratorConfig, calibrated_scale, generate_corpus, generate_regions
from cascadeplace.cascade import latency_from_coords
from cascadeplace.errors import InfeasibleError
from cascadeplace.evaluation import bench_decision_time, satisfaction_ratio, server_load_ratio, single_thread
from cascadeplace.features import WindowSpec, extract_all
from cascadeplace.gan import DiscriminatorNet, GeneratorNet
from cascadeplace.neural import LSTM, MLP, Attention
from cascadeplace.placement import (check_assignment, distance_aware_place, exact_solve, greedy_place,
                                    heuristic_place, heuristic_route, make_instance, statistics_place,
                                    transport_solve)
from cascadeplace.predictor import (BurstTrainConfig, GeoTrainConfig, burst_windows, chained_probabilities,
                                    geo_mse, geo_windows, train_burst, train_geo, window_accuracy)

from conftest import numerical_grad
from oracles import enumerate_optimum, per_user_latencies, per_user_servers, random_instance

SEEDS = range(5)
GAN_SEEDS = range(3)


def grad_ok(analytic, numeric, abs_tol=1e-4, rel_tol=1e-3):
    err = np.abs(analytic - numeric)
    return bool(np.all(err <= np.maximum(abs_tol, rel_tol * np.maximum(np.abs(analytic), np.abs(numeric)))))


# --------------------------------------------------------------------------
# 1. gradients


def _layer_case(layer, x, up, fwd):
    def f():
        return float((fwd(x)[0] * up).sum())
    y, cache = fwd(x)
    dx, g = layer.backward(cache, up)
    ok = all(grad_ok(g[k], numerical_grad(f, p)) for k, p in layer.params().items())
    return ok and grad_ok(dx, numerical_grad(f, x))


def gradient_cases(seed):
    r = np.random.default_rng(seed)
    out = {}
    mlp = MLP([5, 4, 3], hidden="tanh", output="sigmoid", rng=r)
    out["dense"] = _layer_case(mlp, r.normal(size=(3, 5)), r.normal(size=(3, 3)), mlp.forward)
    lstm = LSTM(3, 4, rng=r)
    lstm.b[:] += r.normal(size=lstm.b.shape) * 0.5
    out["lstm"] = _layer_case(lstm, r.normal(size=(2, 5, 3)), r.normal(size=(2, 5, 4)), lstm.forward)
    att = Attention(4, rng=r)
    out["attention"] = _layer_case(att, r.normal(size=(3, 6, 4)), r.normal(size=(3, 4)), att.forward)

    D = DiscriminatorNet(4, width=6, seed=seed)
    D.fit_input_scale(r.dirichlet(np.ones(4), 20))
    x = r.dirichlet(np.ones(4), 9)
    y = (r.random((3, 4)) < 0.5).astype(float)
    _, _, _, g = gan._d_grads(D, x[:3], y, x[3:6], x[6:])
    # head A alone through the supervised term, head B alone through the unsupervised term
    _, _, _, g_sup = gan._d_grads(D, x[:3], y, x[3:6], x[6:], unsupervised=False)
    ok_a = all(grad_ok(g_sup[k], numerical_grad(lambda: gan.supervised_loss(D.forward(x[:3])[0], y)[0], p))
               for k, p in D.params().items())
    ok_b = all(grad_ok(g[k], numerical_grad(lambda: gan.d_loss(D, x[:3], y, x[3:6], x[6:])[0], p))
               for k, p in D.params().items())
    G = GeneratorNet(4, noise_dim=3, sizes=(5, 6, 7), seed=seed)
    z = r.standard_normal((5, 3))
    _, gg = gan._g_grads(G, D, z)
    ok_g = all(grad_ok(gg[k], numerical_grad(lambda: gan.g_loss(D, G.generate(z)), p))
               for k, p in G.params().items())
    out["gan_head_a"] = ok_a
    out["gan_heads_ab"] = ok_b
    out["generator"] = ok_g
    return out


def test_c01_gradients(criterion):
    t0 = time.perf_counter()
    fails = []
    for seed in range(10):
        fails += [f"{k}@{seed}" for k, ok in gradient_cases(seed).items() if not ok]
    dt = time.perf_counter() - t0
    ok = not fails and dt < 60
    criterion(1, ok, f"dense/LSTM/attention/GAN heads x 10 seeds, failures={fails or 'none'}, {dt:.1f}s")
    assert ok


# --------------------------------------------------------------------------
# 2-4, 11. placement fuzz suite


def test_c02_exact_vs_enumeration(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    n = mismatches = 0
    while n < 100:
        p = random_instance(rng, max_m=6)
        ref = enumerate_optimum(p)
        try:
            got = exact_solve(p)[1].cost_us
        except InfeasibleError:
            got = None
        if ref is None:
            mismatches += got is not None
            continue
        n += 1
        mismatches += got != ref[0]
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 60
    criterion(2, ok, f"{n} feasible instances M<=6, mismatches={mismatches}, {dt:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def fuzz_suite():
    """1000 random instances with every method's output (None where the method reports infeasible)."""
    rng = np.random.default_rng(7)
    D_by_m = {}
    suite = []
    for _ in range(1000):
        p = random_instance(rng, max_m=8)
        origin = int(rng.integers(p.M))
        x = p.S / max(p.demand, 1)
        history = list(rng.dirichlet(np.ones(p.M), 5))
        if p.M not in D_by_m:
            D_by_m[p.M] = DiscriminatorNet(p.M, seed=p.M)
        runs = {}
        for name, f in {
            "exact": lambda: exact_solve(p),
            "greedy": lambda: greedy_place(p),
            "heuristic": lambda: heuristic_place(p, x),
            "distance_aware": lambda: (lambda I: (I, transport_solve(p, I)))(distance_aware_place(p)),
            "statistics": lambda: (lambda I: (I, transport_solve(p, I)))(statistics_place(history, p)),
            "learned": lambda: gan.decide(D_by_m[p.M], p, x),
        }.items():
            try:
                runs[name] = f()
            except InfeasibleError:
                runs[name] = None
        suite.append((p, origin, runs))
    return suite


def _top_c_capacity(p):
    return int(np.sort(p.U)[::-1][:p.C].sum())


def test_c03_constraints(criterion, fuzz_suite):
    violations, outputs, wrong_refusals = 0, 0, 0
    for p, _, runs in fuzz_suite:
        feasible = _top_c_capacity(p) >= p.demand
        for name, r in runs.items():
            if r is None:
                wrong_refusals += feasible
                continue
            outputs += 1
            violations += bool(check_assignment(p, *r))
    ok = violations == 0 and wrong_refusals == 0
    criterion(3, ok, f"{len(fuzz_suite)} instances, {outputs} outputs, violations={violations}, "
                     f"refusals on feasible instances={wrong_refusals}")
    assert ok


def test_c04_dominance(criterion, fuzz_suite):
    counts = {"exact<=greedy": [0, 0], "exact<=heuristic": [0, 0], "heuristic<=no_replication": [0, 0]}
    for p, origin, runs in fuzz_suite:
        if runs["exact"] is None:
            continue
        e = runs["exact"][1].cost_us
        for key, a, b in (("exact<=greedy", e, runs["greedy"][1].cost_us),
                          ("exact<=heuristic", e, runs["heuristic"][1].cost_us)):
            counts[key][0] += 1
            counts[key][1] += a > b
        # the origin can only stand in for a placement if it can hold every user
        if p.U[origin] >= p.demand:
            counts["heuristic<=no_replication"][0] += 1
            counts["heuristic<=no_replication"][1] += runs["heuristic"][1].cost_us > int(p.S @ p.l_us[:, origin])
    ok = all(bad == 0 for _, bad in counts.values())
    criterion(4, ok, ", ".join(f"{k}: {bad}/{n} violated" for k, (n, bad) in counts.items()))
    assert ok


def test_c11_metrics_vs_enumeration(criterion, fuzz_suite):
    checked = bad = 0
    for p, _, runs in fuzz_suite:
        if p.demand == 0 or p.demand > 50:
            continue
        for r in runs.values():
            if r is None:
                continue
            a = r[1]
            users = per_user_latencies(p, a.v)
            for g in (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5):
                want = sum(round(u * 1000) <= round(g * 1000) for u in users) / len(users)
                bad += satisfaction_ratio(p, a, g) != want
            want_load = np.bincount(per_user_servers(a.v), minlength=p.M) / p.demand
            bad += not np.array_equal(server_load_ratio(a), want_load)
            checked += 1
    ok = bad == 0 and checked > 0
    criterion(11, ok, f"{checked} assignments with demand<=50, mismatches={bad}")
    assert ok


# --------------------------------------------------------------------------
# 5-7. burst and geo prediction on the default corpus


@pytest.fixture(scope="module")
def burst_runs():
    runs = []
    with single_thread():
        for seed in SEEDS:
            r = {"seed": seed}
            t0 = time.perf_counter()
            cfg = GeneratorConfig(seed=seed)
            fs = extract_all(generate_corpus(cfg, 5000), WindowSpec(), cfg.n_regions, cfg.burst_threshold)
            order = np.random.default_rng([seed, 0x5EED]).permutation(len(fs))
            train, test = np.sort(order[:4000]), np.sort(order[4000:])
            tr, te = fs.subset(train), fs.subset(test)
            r["explosive"] = fs.explosive.mean()
            full = train_burst(tr, BurstTrainConfig(seed=seed, epochs=8))
            r["full"] = window_accuracy(chained_probabilities(full, te), te.explosive)
            ff = baselines.ffnn_train(tr, baselines.FfnnTrainConfig(seed=seed, epochs=8))
            r["ffnn"] = window_accuracy(baselines.ffnn_predict(ff, te), te.explosive)
            r["t5"] = time.perf_counter() - t0

            t0 = time.perf_counter()
            for name, kw in (("no_type", dict(use_ctype=False)),
                             ("no_type_no_prior", dict(use_ctype=False, use_prior=False))):
                m = train_burst(tr, BurstTrainConfig(seed=seed, epochs=8, **kw))
                r[name] = window_accuracy(chained_probabilities(m, te), te.explosive)
            r["t6"] = time.perf_counter() - t0

            t0 = time.perf_counter()
            gw = geo_windows(burst_windows(chained_probabilities(full, tr)), 5)
            pos = np.flatnonzero(tr.explosive)
            g = train_geo(tr.geo_seq[pos, gw[pos] - 1], tr.final_geo[pos], GeoTrainConfig(seed=seed))
            tpos = np.flatnonzero(te.explosive)
            tgw = geo_windows(burst_windows(chained_probabilities(full, te.subset(tpos))), 5)
            r["geo_mse"] = geo_mse(g.predict(te.geo_seq[tpos, tgw - 1]), te.final_geo[tpos])
            r["t7"] = time.perf_counter() - t0
            runs.append(r)
    return runs


def test_c05_burst_accuracy(criterion, burst_runs):
    full = np.mean([r["full"] for r in burst_runs], axis=0)
    ffnn = np.mean([r["ffnn"] for r in burst_runs], axis=0)
    dt = sum(r["t5"] for r in burst_runs)
    rate = np.mean([r["explosive"] for r in burst_runs])
    ok = full[0] >= 0.80 and full[4] >= full[0] and full[4] >= ffnn[4] and dt < 20 * 60
    criterion(5, ok, f"explosive rate {rate:.3f}; recurrent by window {np.round(full, 3).tolist()}; "
                     f"feedforward {np.round(ffnn, 3).tolist()}; {dt / 60:.1f} min")
    assert ok


def test_c06_ablations(criterion, burst_runs):
    full = np.mean([r["full"][2] for r in burst_runs])
    nt = np.mean([r["no_type"][2] for r in burst_runs])
    ntp = np.mean([r["no_type_no_prior"][2] for r in burst_runs])
    ok = full >= nt and full >= ntp
    criterion(6, ok, f"window-3 accuracy full={full:.4f}, no type={nt:.4f}, no type and prior={ntp:.4f}")
    assert ok


def test_c07_geo(criterion, burst_runs):
    mse = np.mean([r["geo_mse"] for r in burst_runs])
    dt = max(r["t7"] for r in burst_runs)
    ok = mse <= 0.005 and dt < 600
    criterion(7, ok, f"held-out MSE {mse:.5f} (per seed {[round(r['geo_mse'], 5) for r in burst_runs]}), "
                     f"{dt:.0f}s per seed")
    assert ok


# --------------------------------------------------------------------------
# 8-9. learned placement at M=15, C=5


@pytest.fixture(scope="module")
def placement_bench():
    """Per seed: 700 exact-labelled instances (first 500 for training, last 200 held out)."""
    out = {}
    M, C = 15, 5
    for seed in GAN_SEEDS:
        cfg = GeneratorConfig(seed=seed, n_regions=M)
        reg = generate_regions(M, seed)
        lat = latency_from_coords(reg, calibrated_scale(reg))
        insts, xs = [], []
        for c in generate_corpus(cfg, 700):
            S = np.bincount(c.region, minlength=M)
            insts.append(make_instance(S, lat, C, reg.capacities))
            xs.append(S / S.sum())
        out[seed] = (insts, xs, gan.solve_labels(insts, xs))
    return out


def test_c08_learned_quality(criterion, placement_bench):
    ratios, da_ratios, wins = [], [], []
    for seed, (insts, xs, labeled) in placement_bench.items():
        _, D = gan.train(gan.GanTrainConfig(seed=seed, epochs=150, C=5), labeled[:500], xs[:500])
        held = range(500, 700)
        opt = sum(transport_solve(insts[i], labeled[i].I).cost_us for i in held)
        learned = sum(gan.decide(D, insts[i], xs[i])[1].cost_us for i in held)
        da = sum(transport_solve(insts[i], distance_aware_place(insts[i])).cost_us for i in held)
        ratios.append(learned / opt)
        da_ratios.append(da / opt)
        wins.append(learned < da)
    ok = all(r <= 1.10 for r in ratios) and all(wins)
    criterion(8, ok, f"learned/optimal {np.round(ratios, 3).tolist()} (limit 1.10), "
                     f"distance-aware/optimal {np.round(da_ratios, 3).tolist()}")
    assert ok


def test_c09_sample_efficiency(criterion, placement_bench):
    rows = []
    for seed, (_, xs, labeled) in placement_bench.items():
        cfg = gan.GanTrainConfig(seed=seed, epochs=100, C=5)
        held = labeled[500:]
        _, semi = gan.train(cfg, labeled[:50], xs[50:500])
        # same data and input standardization, supervised objective only: isolates the unlabeled term
        _, sup = gan.train(cfg, labeled[:50], xs[50:500], supervised_only=True)
        # reported alongside: standardization fit on the 50 labeled points alone
        _, sup_lab = gan.train(cfg, labeled[:50], None, supervised_only=True)
        rows.append([gan.heldout_supervised_loss(D, held) for D in (semi, sup, sup_lab)])
    ok = all(a <= b for a, b, _ in rows)
    criterion(9, ok, "held-out L_s semi/supervised-only per seed "
                     + ", ".join(f"{a:.3f}/{b:.3f}" for a, b, _ in rows)
                     + "; labels-only standardization " + ", ".join(f"{c:.3f}" for *_, c in rows))
    assert ok


# --------------------------------------------------------------------------
# 10. decision time at M=34


def test_c10_decision_time(criterion):
    M = 34
    cfg = GeneratorConfig(seed=0)
    reg = generate_regions(M, 0)
    lat = latency_from_coords(reg, calibrated_scale(reg))
    picks = [c for c in generate_corpus(cfg, 200) if c.size >= 200][:8]
    D = DiscriminatorNet(M, seed=0)
    grid = (3, 5, 10, 15)
    by_c = {C: [make_instance(np.bincount(c.region, minlength=M), lat, C, reg.capacities) for c in picks]
            for C in grid}
    learned = lambda p: gan.infer_placement(D, p.S / p.S.sum(), p.C)
    greedy_t = []
    samples = {C: [] for C in grid}
    with single_thread():
        for C in grid:
            greedy_t.append(bench_decision_time(greedy_place, by_c[C], repetitions=3).median)
        # a learned decision takes microseconds: time whole 200-call passes, interleave the C values
        # so that slow stretches of the machine fall on every C alike, and take enough rounds
        # for the median to settle
        for _ in range(60):
            for C in grid:
                batch = by_c[C] * 25
                t0 = time.perf_counter()
                for p in batch:
                    learned(p)
                samples[C].append((time.perf_counter() - t0) / len(batch))
    learned_t = [float(np.median(samples[C])) for C in grid]
    increasing = all(b > a for a, b in zip(greedy_t, greedy_t[1:]))
    spread = (max(learned_t) - min(learned_t)) / min(learned_t)
    ok = increasing and spread < 0.20
    criterion(10, ok, f"greedy median s {[f'{t:.4f}' for t in greedy_t]}, "
                      f"learned median s {[f'{t:.6f}' for t in learned_t]} (spread {spread:.1%})")
    assert ok


# --------------------------------------------------------------------------
# 12. reproducibility


def test_c12_reproducible_pipeline(criterion, tmp_path):
    from pathlib import Path

    from cascadeplace import cli
    smoke = Path(__file__).resolve().parents[1] / "configs" / "smoke.cfg"
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["--config", str(smoke), "--out", str(out), "pipeline"]) == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "timing.json"})
    differ = sorted(k for k in runs[0] if runs[0][k] != runs[1].get(k))
    ok = not differ and runs[0].keys() == runs[1].keys()
    criterion(12, ok, f"{len(runs[0])} artifacts compared, differing={differ or 'none'}")
    assert ok
