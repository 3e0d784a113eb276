#!/usr/bin/env python3
"""
Test suite for the workload-recursion simulator (core/simulator.py).

The concordance tests simulate several million arrivals; expect them to take
a minute or so.
"""
import dataclasses
import heapq
import math
import os
import shutil
import sys
import tempfile
from collections import deque
from functools import lru_cache
sys.path.insert(0, '.')

import numpy as np
from numpy.testing import assert_allclose

from core.load_solver import solve
from core.phase_type import load_model_json, make_model, ph_sample_batch
from core.simulator import (SimConfig, compare, estimate_from_distribution,
                            read_estimate_csv, run_sim, workload_trace, write_estimate_csv)
from core.waiting import virtual_wait_distribution

MM1 = make_model([1.0], [[-0.5]], 1, 1.0, 2.0)


def _load(name):
    return load_model_json(os.path.join("models", f"{name}.json"))


@lru_cache(maxsize=None)
def _long_run(name):
    """Four replications of 10^6 measured arrivals, shared across tests."""
    model = MM1 if name == "mm1" else _load(name)
    cfg = SimConfig(seed=20150601, measured_arrivals=10**6, replications=4, workers=4)
    return model, run_sim(model, cfg)


def _event_calendar(c, tau, interarrivals, services):
    """
    Reference FCFS simulation with an explicit event list: arrivals, service
    completions and abandonments at arrival + τ.
    """
    n = len(interarrivals)
    arrive = np.cumsum(interarrivals)
    events = [(arrive[j], 0, j) for j in range(n)]
    heapq.heapify(events)
    busy = [False] * c
    queue = deque()
    started = [False] * n
    wait = np.full(n, np.nan)
    server = np.full(n, -1)

    def start(j, i, now):
        busy[i] = True
        started[j] = True
        wait[j] = now - arrive[j]
        server[j] = i
        heapq.heappush(events, (now + services[j], 1, i))

    while events:
        now, kind, who = heapq.heappop(events)
        if kind == 0:
            idle = [i for i in range(c) if not busy[i]]
            if idle:
                start(who, idle[0], now)
            else:
                queue.append(who)
                heapq.heappush(events, (arrive[who] + tau, 2, who))
        elif kind == 1:
            busy[who] = False
            while queue:
                j = queue.popleft()
                if not started[j] and now - arrive[j] < tau:
                    start(j, who, now)
                    break
        else:
            if not started[who] and who in queue:
                queue.remove(who)
    return wait, server


def test_recursion_matches_event_calendar():
    """Same draws through the recursion and an event list: same admissions, waits, servers."""
    for model in (_load("erlang2"), _load("hyperexp"), make_model([1.0], [[-4.0]], 3, 1.0, 0.5)):
        rng = np.random.Generator(np.random.PCG64(99))
        ia = ph_sample_batch(model.ph, rng, 1000)
        sv = rng.exponential(1.0 / model.mu, 1000)
        trace = workload_trace(model.c, model.tau, ia, sv)
        wait, server = _event_calendar(model.c, model.tau, ia, sv)
        admitted = server >= 0
        assert np.array_equal(trace["admitted"], admitted)
        assert np.array_equal(trace["server"], server)
        assert np.abs(trace["offered"][admitted] - wait[admitted]).max() <= 1e-9
        assert np.all(trace["offered"][~admitted] >= model.tau)
        assert 0 < admitted.sum() < 1000
    print("✅ test_recursion_matches_event_calendar passed")


def test_trace_single_server_by_hand():
    trace = workload_trace(1, 1.0, [1.0, 0.5, 0.2, 3.0], [2.0, 1.0, 5.0, 1.0])
    # offered waits 0, 1.5 (lost), 1.3 (lost), 0
    assert_allclose(trace["offered"], [0.0, 1.5, 1.3, 0.0])
    assert trace["admitted"].tolist() == [True, False, False, True]
    assert_allclose(trace["start_loads"][:, 0], [0.0, 2.0, 1.5, 1.3])
    print("✅ test_trace_single_server_by_hand passed")


def test_config_validation():
    for kwargs in ({"measured_arrivals": 999}, {"replications": 0}, {"seed": -1},
                   {"batches": 1}, {"workers": 0}, {"warmup_arrivals": -5}):
        try:
            SimConfig(**kwargs)
            assert False, f"Should have rejected {kwargs}"
        except ValueError:
            pass
    cfg = SimConfig()
    assert cfg.resolve_warmup(MM1) == 10**5
    assert cfg.resolve_grid(2.0).shape == (1001,)
    try:
        SimConfig(grid=(0.0, 3.0)).resolve_grid(2.0)
        assert False, "Should have rejected a grid beyond tau"
    except ValueError:
        pass
    print("✅ test_config_validation passed")


def test_deterministic():
    cfg = SimConfig(seed=7, measured_arrivals=20000, warmup_arrivals=1000)
    a, b = run_sim(MM1, cfg), run_sim(MM1, cfg)
    assert a.atom0_hat == b.atom0_hat and a.loss_hat == b.loss_hat
    assert np.array_equal(a.ecdf, b.ecdf)
    c = run_sim(MM1, dataclasses.replace(cfg, seed=8))
    assert c.atom0_hat != a.atom0_hat
    print("✅ test_deterministic passed")


def test_worker_count_independence():
    cfg = SimConfig(seed=3, measured_arrivals=20000, warmup_arrivals=1000, replications=3)
    serial = run_sim(_load("erlang2"), cfg)
    pooled = run_sim(_load("erlang2"), dataclasses.replace(cfg, workers=3))
    for name in ("atom0_hat", "atom0_se", "loss_hat", "loss_se", "mean_wait_hat"):
        assert getattr(serial, name) == getattr(pooled, name), name
    assert np.array_equal(serial.ecdf, pooled.ecdf)
    assert np.array_equal(serial.mean_load, pooled.mean_load)
    print("✅ test_worker_count_independence passed")


def test_ecdf_shape():
    est = run_sim(MM1, SimConfig(seed=1, measured_arrivals=20000, warmup_arrivals=1000))
    assert np.all(np.diff(est.ecdf) >= 0)
    assert 0 <= est.ecdf[0] and est.ecdf[-1] <= 1
    assert_allclose(est.ecdf[0], est.atom0_hat, atol=1e-12)
    assert est.atom0_hat + est.loss_hat <= 1
    print("✅ test_ecdf_shape passed")


def test_mm1_concordance():
    """λ=0.5, μ=1, c=1, τ=2: atom, tail, mean and conditional CDF agree with the analysis."""
    model, est = _long_run("mm1")
    dist = virtual_wait_distribution(solve(model))
    assert abs(est.atom0_hat - 0.550643) <= 4 * est.atom0_se, f"{est.atom0_hat} ± {est.atom0_se}"
    assert abs(est.loss_hat - dist.tail) <= 4 * est.loss_se
    assert abs(est.mean_wait_hat - dist.mean()) <= 4 * est.mean_wait_se
    # Poisson arrivals see time averages
    se = math.hypot(est.arrival_atom0_se, est.atom0_se)
    assert abs(est.arrival_atom0_hat - dist.atom0) <= 4 * se
    report = compare(dist, est)
    assert report["passed"], report
    print(f"✅ test_mm1_concordance passed (KS = {report['ks']:.4f})")


def test_phase_type_concordance():
    for name in ("erlang2", "hyperexp"):
        model, est = _long_run(name)
        report = compare(virtual_wait_distribution(solve(model)), est)
        assert report["ks"] <= 0.005, f"{name}: KS {report['ks']:.4f}"
        assert report["passed"], f"{name}: {report['checks']}"
    print("✅ test_phase_type_concordance passed")


def test_long_patience_limit():
    """τ = 50 is effectively no impatience: P(V = 0) = 1 − ρ and nothing is lost."""
    model = make_model([1.0], [[-0.5]], 1, 1.0, 50.0)
    est = run_sim(model, SimConfig(seed=11, measured_arrivals=200000, warmup_arrivals=10000))
    assert abs(est.atom0_hat - 0.5) <= 4 * est.atom0_se
    assert est.loss_hat < 1e-6
    assert est.arrival_loss_hat == 0.0
    print("✅ test_long_patience_limit passed")


def test_standard_error_scaling():
    """Doubling the measured arrivals shrinks the atom's SE by about 1/√2."""
    base = SimConfig(seed=5, measured_arrivals=100000, warmup_arrivals=10000, replications=4)
    se1 = run_sim(MM1, base).atom0_se
    se2 = run_sim(MM1, dataclasses.replace(base, measured_arrivals=200000)).atom0_se
    ratio = se2 / se1
    assert abs(ratio / (1 / math.sqrt(2)) - 1) <= 0.2, f"SE ratio {ratio:.3f}"
    print(f"✅ test_standard_error_scaling passed (ratio = {ratio:.3f})")


def test_compare_exact_estimate():
    """A noise-free estimate of the analytic law has KS 0 and passes."""
    dist = virtual_wait_distribution(solve(_load("hyperexp")))
    est = estimate_from_distribution(dist, np.linspace(0, dist.tau, 201))
    report = compare(dist, est)
    assert report["ks"] <= 1e-12
    assert report["passed"]
    print("✅ test_compare_exact_estimate passed")


def test_compare_detects_perturbation():
    """Scaling δ (and δ' with it) by 1.05 breaks the match with the simulated estimate."""
    model, est = _long_run("mm1")
    sol = solve(model)
    bad = dataclasses.replace(sol, delta=sol.delta * 1.05, delta_tau=sol.delta_tau * 1.05)
    report = compare(virtual_wait_distribution(bad), est)
    assert not report["passed"]
    assert not report["checks"]["atom0"]
    print("✅ test_compare_detects_perturbation passed")


def test_compare_grid_mismatch():
    dist = virtual_wait_distribution(solve(MM1))
    other = virtual_wait_distribution(solve(make_model([1.0], [[-0.5]], 1, 1.0, 3.0)))
    est = estimate_from_distribution(other, np.linspace(0, 3.0, 31))
    try:
        compare(dist, est)
        assert False, "Should have raised ValueError"
    except ValueError as e:
        assert "grid mismatch" in str(e)
        print("✅ test_compare_grid_mismatch passed (correctly raised ValueError)")


def test_estimate_csv():
    tmp = tempfile.mkdtemp(prefix="test_estimate_csv_")
    try:
        est = run_sim(_load("erlang2"), SimConfig(seed=2, measured_arrivals=20000,
                                                  warmup_arrivals=1000, grid=(0.0, 0.5, 1.0)))
        back = read_estimate_csv(write_estimate_csv(est, os.path.join(tmp, "simulation.csv")))
        for name in ("tau", "atom0_hat", "atom0_se", "loss_hat", "loss_se", "arrival_atom0_hat",
                     "arrival_loss_hat", "mean_wait_hat", "mean_wait_se", "seed",
                     "measured_arrivals", "replications", "batches"):
            assert getattr(back, name) == getattr(est, name), name
        assert np.array_equal(back.ecdf_v, est.ecdf_v)
        assert np.array_equal(back.ecdf, est.ecdf)
        assert np.array_equal(back.mean_load, est.mean_load)
        print("✅ test_estimate_csv passed")
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


if __name__ == "__main__":
    print("=== Simulator Tests ===\n")
    test_recursion_matches_event_calendar()
    test_trace_single_server_by_hand()
    test_config_validation()
    test_deterministic()
    test_worker_count_independence()
    test_ecdf_shape()
    test_mm1_concordance()
    test_phase_type_concordance()
    test_long_patience_limit()
    test_standard_error_scaling()
    test_compare_exact_estimate()
    test_compare_detects_perturbation()
    test_compare_grid_mismatch()
    test_estimate_csv()
    print("\n🎉 All tests passed!")
