import json

import numpy as np
import pytest

from cascadeplace.errors import InfeasibleError, ValidationError
from cascadeplace.evaluation import (GAMMA_GRID, EvalReport, MethodResult, bench_decision_time, latency_reduction,
                                     satisfaction_curve, satisfaction_ratio, server_load_ratio)
from cascadeplace.placement import Assignment, PlacementInstance, exact_solve, greedy_place, transport_solve

from oracles import per_user_latencies, per_user_servers, random_instance


def line_instance():
    # users in regions 1..3 all fetch from region 0 at 1, 2, 3 ms
    l = np.array([[0, 1, 2, 3], [1, 0, 1, 2], [2, 1, 0, 1], [3, 2, 1, 0]], float)
    return PlacementInstance(np.array([0, 1, 1, 1]), np.array([10, 0, 0, 0]), l, 1)


class TestReduction:
    def test_same_as_baseline(self):
        assert latency_reduction(5.0, 5.0) == 0.0

    def test_zero_cost(self):
        assert latency_reduction(0.0, 5.0) == 1.0

    def test_bad_baseline(self):
        with pytest.raises(ValidationError):
            latency_reduction(1.0, 0.0)

    def test_exact_reduces_at_least_as_much_as_greedy(self):
        rng = np.random.default_rng(0)
        for _ in range(40):
            p = random_instance(rng)
            if p.demand == 0:
                continue
            try:
                g = greedy_place(p)[1].cost_us
            except InfeasibleError:
                continue
            base = float(p.S @ p.l_us[:, 0]) + 1.0
            assert latency_reduction(exact_solve(p)[1].cost_us, base) >= latency_reduction(g, base)


class TestSatisfaction:
    def test_one_two_three(self):
        p = line_instance()
        a = transport_solve(p, [1, 0, 0, 0])
        assert satisfaction_ratio(p, a, 2.0) == pytest.approx(2 / 3)

    def test_gamma_above_max(self):
        p = line_instance()
        assert satisfaction_ratio(p, transport_solve(p, [1, 0, 0, 0]), 3.0) == 1.0

    def test_all_remote_below_min(self):
        p = line_instance()
        assert satisfaction_ratio(p, transport_solve(p, [1, 0, 0, 0]), 0.5) == 0.0

    def test_matches_per_user_enumeration(self):
        rng = np.random.default_rng(1)
        n = 0
        while n < 150:
            p = random_instance(rng, max_m=6, max_s=10)
            if p.demand == 0 or p.demand > 50:
                continue
            try:
                I, a = exact_solve(p)
            except InfeasibleError:
                continue
            users = per_user_latencies(p, a.v)
            assert len(users) == p.demand
            for g in GAMMA_GRID:
                # users at exactly gamma count as satisfied; compare in whole microseconds
                want = sum(round(u * 1000) <= round(g * 1000) for u in users) / len(users)
                assert satisfaction_ratio(p, a, g) == want
            servers = per_user_servers(a.v)
            want_load = np.bincount(servers, minlength=p.M) / len(servers)
            assert np.array_equal(server_load_ratio(a), want_load)
            n += 1

    def test_curve_nondecreasing(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            p = random_instance(rng)
            try:
                a = greedy_place(p)[1]
            except InfeasibleError:
                continue
            assert np.all(np.diff(satisfaction_curve(p, a)) >= 0)


class TestLoad:
    def test_single_replica(self):
        p = line_instance()
        assert server_load_ratio(transport_solve(p, [1, 0, 0, 0])).tolist() == [1, 0, 0, 0]

    def test_local_serve(self):
        p = PlacementInstance(np.array([2, 6, 2]), np.array([9, 9, 9]), np.ones((3, 3)) - np.eye(3), 3)
        a = transport_solve(p, [1, 1, 1])
        assert np.allclose(server_load_ratio(a), p.S / p.demand)

    def test_sums_to_one(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            p = random_instance(rng)
            if p.demand == 0:
                continue
            try:
                a = greedy_place(p)[1]
            except InfeasibleError:
                continue
            assert server_load_ratio(a).sum() == pytest.approx(1.0)

    def test_empty(self):
        assert server_load_ratio(Assignment(np.zeros((2, 2), int), 0)).tolist() == [0, 0]


class TestBench:
    def test_reports_median_and_mad(self):
        calls = []
        st = bench_decision_time(lambda x: calls.append(x), [1, 2, 3], repetitions=4, warmup=2)
        assert len(calls) == 3 * 6
        assert len(st.samples) == 4 and st.median >= 0 and st.mad >= 0

    def test_validation(self):
        with pytest.raises(ValidationError):
            bench_decision_time(lambda x: x, [], 3)

    def test_stable_repeats(self):
        rng = np.random.default_rng(0)
        insts = [random_instance(rng, max_m=8) for _ in range(30)]
        insts = [p for p in insts if p.U.sum() >= p.demand]
        st = bench_decision_time(lambda p: transport_solve(p, np.ones(p.M, int)), insts, repetitions=7)
        assert st.relative_mad < 0.3


class TestReport:
    def make(self):
        r = EvalReport(gammas=(1.0, 2.0))
        r.add(MethodResult("optimal", 3, 12.5, 0.25, [0.5, 1.0], [0.5, 0.5, 0.0], 2))
        r.add(MethodResult("greedy", 3, 13.0, 0.2, [0.4, 1.0], [1.0, 0.0, 0.0], 2))
        r.extras["evaluation_set"] = "all_test"
        return r

    def test_csv(self, tmp_path):
        self.make().write_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "method,C,n_contents,total_latency_ms,reduction,satisfaction_1ms,satisfaction_2ms"
        assert lines[1] == "optimal,3,2,12.500000,0.250000,0.500000,1.000000"

    def test_loads_csv(self, tmp_path):
        self.make().write_loads_csv(tmp_path / "l.csv")
        assert (tmp_path / "l.csv").read_text().splitlines()[0] == "method,C,load_0,load_1,load_2"

    def test_jsonl(self, tmp_path):
        self.make().write_jsonl(tmp_path / "r.jsonl")
        recs = [json.loads(x) for x in (tmp_path / "r.jsonl").read_text().splitlines()]
        assert recs[0]["method"] == "optimal" and recs[0]["satisfaction"] == {"1": 0.5, "2": 1.0}
        assert recs[-1] == {"extras": {"evaluation_set": "all_test"}}
