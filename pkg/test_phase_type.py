#!/usr/bin/env python3
"""
Test suite for PhaseType / QueueModel construction, sampling and model JSON.
"""
import json
import math
import os
import shutil
import sys
import tempfile
sys.path.insert(0, '.')

import numpy as np
from numpy.testing import assert_allclose
from scipy import stats

from core.errors import ModelError
from core.phase_type import (QueueModel, load_model_json, make_coxian, make_model,
                             make_phase_type, model_from_dict, ph_mean, ph_sample,
                             ph_sample_batch)


def test_exponential():
    """gamma=(1), T=(-2) is exponential(2) with exit rate 2."""
    ph = make_phase_type([1.0], [[-2.0]])
    assert_allclose(ph.exit, [2.0])
    assert ph.m == 1
    assert_allclose(ph.rates, [2.0])
    assert_allclose(ph.exit_probs, [1.0])
    print("✅ test_exponential passed")


def test_erlang2():
    """Erlang-2 with phase rate 4: exit = (0, 4); accessors derived from T."""
    ph = make_phase_type([1.0, 0.0], [[-4.0, 4.0], [0.0, -4.0]])
    assert_allclose(ph.exit, [0.0, 4.0])
    assert_allclose(ph.rates, [4.0, 4.0])
    assert_allclose(ph.jump_probs, [[0.0, 1.0], [0.0, 0.0]])
    assert_allclose(ph.exit_probs, [0.0, 1.0])
    # exit + T·e = 0 componentwise
    assert np.abs(ph.exit + ph.T @ np.ones(2)).max() <= 1e-14
    print("✅ test_erlang2 passed")


def test_rejections():
    """Sign pattern, probability vector, dimension and singularity violations."""
    cases = [
        ([1.0], [[2.0]], "T"),                                   # positive diagonal
        ([0.6, 0.6], [[-1.0, 0.0], [0.0, -1.0]], "gamma"),        # sum != 1
        ([1.0 + 1e-11], [[-1.0]], "gamma"),                      # outside 1e-12
        ([1.0, 0.0], [[-1.0]], "T"),                             # dimension mismatch
        ([1.0, 0.0], [[-1.0, -0.5], [0.0, -1.0]], "T"),          # negative off-diagonal
        ([1.0, 0.0], [[-1.0, 1.0], [1.0, -1.0]], "T"),           # no exit, singular
        ([-0.1, 1.1], [[-1.0, 0.0], [0.0, -1.0]], "gamma"),      # negative probability
    ]
    for gamma, T, field in cases:
        try:
            make_phase_type(gamma, T)
            assert False, f"Should have rejected gamma={gamma}, T={T}"
        except ModelError as e:
            assert e.field == field, f"Expected field {field}, got {e.field} ({e})"
    print("✅ test_rejections passed")


def test_small_negatives_clamped():
    """Entries within -1e-14 are absorbed as 0."""
    ph = make_phase_type([1.0, -1e-15], [[-2.0, 1.0], [-1e-15, -3.0]])
    assert ph.gamma[1] == 0.0
    assert ph.T[1, 0] == 0.0
    print("✅ test_small_negatives_clamped passed")


def test_coxian():
    """Coxian examples, including the Erlang-2 special case."""
    erl = make_coxian([4.0, 4.0], [1.0])
    assert_allclose(erl.T, [[-4.0, 4.0], [0.0, -4.0]])
    assert_allclose(erl.gamma, [1.0, 0.0])

    expo = make_coxian([2.0], [])
    assert_allclose(expo.T, [[-2.0]])
    assert_allclose(expo.exit, [2.0])

    cox = make_coxian([3.0, 1.0], [0.5])
    assert_allclose(cox.T, [[-3.0, 1.5], [0.0, -1.0]])
    assert_allclose(cox.exit, [1.5, 1.0])

    for rates, probs in (([1.0, 2.0], [1.5]), ([0.0, 1.0], [0.5]), ([1.0, 2.0], [])):
        try:
            make_coxian(rates, probs)
            assert False, f"Should have rejected rates={rates}, probs={probs}"
        except ModelError:
            pass
    print("✅ test_coxian passed")


def test_ph_mean():
    assert math.isclose(ph_mean(make_phase_type([1.0], [[-2.0]])), 0.5, rel_tol=1e-14)
    assert math.isclose(ph_mean(make_coxian([4.0, 4.0], [1.0])), 0.5, rel_tol=1e-14)
    hyper = make_phase_type([0.3, 0.7], [[-1.0, 0.0], [0.0, -3.0]])
    assert math.isclose(ph_mean(hyper), 0.3 + 0.7 / 3, rel_tol=1e-14)
    print("✅ test_ph_mean passed")


def test_sample_exponential_inversion():
    """m=1 reduces to -ln(u)/λ for the stream's first uniform."""
    ph = make_phase_type([1.0], [[-2.0]])
    x = ph_sample(ph, np.random.Generator(np.random.PCG64(12345)))
    u = np.random.Generator(np.random.PCG64(12345)).random()
    assert math.isclose(x, -math.log(u) / 2.0, rel_tol=1e-15), f"{x} vs {-math.log(u) / 2}"

    class ZeroDraw:
        def random(self):
            return 0.0

    x = ph_sample(ph, ZeroDraw())
    assert math.isfinite(x) and x > 0
    print("✅ test_sample_exponential_inversion passed")


def test_sample_deterministic():
    ph = make_phase_type([0.3, 0.7], [[-1.0, 0.5], [0.0, -3.0]])
    rng_a = np.random.Generator(np.random.PCG64(9))
    rng_b = np.random.Generator(np.random.PCG64(9))
    a = [ph_sample(ph, rng_a) for _ in range(50)]
    b = [ph_sample(ph, rng_b) for _ in range(50)]
    assert a == b
    c1 = ph_sample_batch(ph, np.random.Generator(np.random.PCG64(9)), 1000)
    c2 = ph_sample_batch(ph, np.random.Generator(np.random.PCG64(9)), 1000)
    assert np.array_equal(c1, c2)
    print("✅ test_sample_deterministic passed")


def test_scalar_sampler_mean():
    """The chain walk matches ph_mean for a Coxian with early exit."""
    ph = make_coxian([3.0, 1.0], [0.5])
    rng = np.random.Generator(np.random.PCG64(2024))
    xs = np.array([ph_sample(ph, rng) for _ in range(20000)])
    se = xs.std(ddof=1) / math.sqrt(xs.shape[0])
    assert abs(xs.mean() - ph_mean(ph)) <= 4 * se, f"mean {xs.mean()} vs {ph_mean(ph)} (se {se})"
    print("✅ test_scalar_sampler_mean passed")


def test_erlang_batch_mean():
    """Erlang-2 sample mean over 10^6 draws within 4 standard errors of 0.5."""
    ph = make_coxian([4.0, 4.0], [1.0])
    xs = ph_sample_batch(ph, np.random.Generator(np.random.PCG64(77)), 10**6)
    se = xs.std(ddof=1) / math.sqrt(xs.shape[0])
    assert abs(xs.mean() - 0.5) <= 4 * se, f"mean {xs.mean()} (se {se})"
    print("✅ test_erlang_batch_mean passed")


def test_hyperexponential_ks():
    """Empirical CDF of 10^6 draws within KS 0.002 of the mixture CDF."""
    ph = make_phase_type([0.3, 0.7], [[-1.0, 0.0], [0.0, -3.0]])
    xs = ph_sample_batch(ph, np.random.Generator(np.random.PCG64(31)), 10**6)

    def cdf(t):
        return 0.3 * (1 - np.exp(-t)) + 0.7 * (1 - np.exp(-3 * t))

    ks = stats.kstest(xs, cdf).statistic
    assert ks <= 0.002, f"KS = {ks}"
    print(f"✅ test_hyperexponential_ks passed (KS = {ks:.5f})")


def test_queue_model_validation():
    ph = make_phase_type([1.0], [[-0.5]])
    for c, mu, tau, field in ((0, 1.0, 1.0, "c"), (1.5, 1.0, 1.0, "c"), (1, 0.0, 1.0, "mu"),
                              (1, 1.0, -1.0, "tau"), (1, 1.0, float("inf"), "tau")):
        try:
            QueueModel(ph=ph, c=c, mu=mu, tau=tau)
            assert False, f"Should have rejected c={c}, mu={mu}, tau={tau}"
        except ModelError as e:
            assert e.field == field, f"Expected {field}, got {e.field}"
    model = make_model([1.0], [[-0.5]], 1, 1.0, 2.0)
    assert math.isclose(model.arrival_rate, 0.5)
    assert math.isclose(model.offered_load, 0.5)
    print("✅ test_queue_model_validation passed")


def test_model_json():
    """Valid file loads; syntax errors carry line/column; field errors name the field."""
    tmp = tempfile.mkdtemp(prefix="test_model_json_")
    try:
        good = os.path.join(tmp, "good.json")
        with open(good, "w") as f:
            json.dump({"gamma": [0.3, 0.7], "T": [[-1, 0], [0, -3]], "c": 2, "mu": 1, "tau": 1}, f)
        model = load_model_json(good)
        assert model.c == 2 and model.m == 2 and model.tau == 1.0

        bad = os.path.join(tmp, "bad.json")
        with open(bad, "w") as f:
            f.write('{\n  "gamma": [1.0],\n  "T": [[-1.0]]\n  "c": 1\n}')
        try:
            load_model_json(bad)
            assert False, "Should have raised ModelError"
        except ModelError as e:
            assert e.line == 4, f"Expected line 4, got {e.line}"

        try:
            load_model_json(os.path.join(tmp, "missing.json"))
            assert False, "Should have raised FileNotFoundError"
        except FileNotFoundError:
            pass
        print("✅ test_model_json passed")
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def test_model_fields():
    base = {"gamma": [1.0], "T": [[-1.0]], "c": 1, "mu": 1.0, "tau": 2.0}
    for key, value in (("c", 1.0), ("c", True), ("mu", "fast"), ("gamma", "x"),
                       ("T", [[-1.0, 0.0]]), ("extra", 1)):
        data = dict(base)
        data[key] = value
        try:
            model_from_dict(data)
            assert False, f"Should have rejected {key}={value!r}"
        except ModelError as e:
            assert e.field == key, f"Expected field {key}, got {e.field}"
    data = dict(base)
    del data["tau"]
    try:
        model_from_dict(data)
        assert False, "Should have rejected missing tau"
    except ModelError as e:
        assert e.field == "tau"
    print("✅ test_model_fields passed")


def test_shipped_models_load():
    for name in ("mm1_impatient", "erlang2", "hyperexp", "erlang3", "reducible", "near_degenerate"):
        model = load_model_json(os.path.join("models", f"{name}.json"))
        assert model.m >= 1
    print("✅ test_shipped_models_load passed")


if __name__ == "__main__":
    print("=== PhaseType Tests ===\n")
    test_exponential()
    test_erlang2()
    test_rejections()
    test_small_negatives_clamped()
    test_coxian()
    test_ph_mean()
    test_sample_exponential_inversion()
    test_sample_deterministic()
    test_scalar_sampler_mean()
    test_erlang_batch_mean()
    test_hyperexponential_ks()
    test_queue_model_validation()
    test_model_json()
    test_model_fields()
    test_shipped_models_load()
    print("\n🎉 All tests passed!")
