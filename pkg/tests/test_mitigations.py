import math

import numpy as np
import pytest

from streamfp.mitigations import (
    BatchingParams,
    DatasetStats,
    InjectionParams,
    PaddingParams,
    apply_batching,
    apply_injection,
    apply_padding,
    apply_strategy,
    compute_injection_stats,
    merge_simultaneous,
)
from streamfp.seeding import rng_from
from streamfp.traces import Dataset, NetworkEvent, NOISE, Trace


def trace_of(pairs, tid="t", label=NOISE):
    return Trace(id=tid, label=label, prompt_id=tid,
                 events=tuple(NetworkEvent(dt=d, size=s) for d, s in pairs))


def pairs(trace):
    return [(e.dt, e.size) for e in trace.events]


# --- merge --------------------------------------------------------------------


def test_merge_zero_epsilon():
    t = trace_of([(0, 10), (0, 20), (0.5, 30)])
    assert pairs(merge_simultaneous(t, 0.0)) == [(0.0, 30), (0.5, 30)]


def test_merge_identity_when_all_gaps_positive():
    t = trace_of([(0, 10), (0.2, 20), (0.5, 30)])
    assert pairs(merge_simultaneous(t, 0.0)) == pairs(t)


def test_merge_cascade():
    t = trace_of([(0, 5), (0.004, 5), (0.004, 5)])
    assert pairs(merge_simultaneous(t, 0.005)) == [(0.0, 15)]


# --- batching -----------------------------------------------------------------


def test_batching_sums_runs():
    t = trace_of([(0, 100), (0.2, 40), (0.3, 60), (0.1, 10)])
    out = pairs(apply_batching(t, BatchingParams(batch_size=2)))
    assert [s for _, s in out] == [140, 70]
    assert out[0][0] == pytest.approx(0.2)
    assert out[1][0] == pytest.approx(0.4)


def test_batching_partial_final_run():
    t = trace_of([(0, 1), (0.1, 2), (0.1, 3)])
    out = pairs(apply_batching(t, BatchingParams(batch_size=2)))
    assert len(out) == 2
    assert out[1] == (0.1, 3)


def test_batching_n1_equals_merge():
    t = trace_of([(0, 10), (0, 20), (0.5, 30)])
    assert pairs(apply_batching(t, BatchingParams(batch_size=1))) == \
        pairs(merge_simultaneous(t, 0.0))


def test_batching_conserves_totals_and_length():
    rng = rng_from(0)
    for _ in range(300):
        n = int(rng.integers(1, 25))
        dts = [0.0] + [float(d) for d in rng.uniform(0, 0.2, size=n - 1)]
        if n > 1 and rng.random() < 0.5:
            dts[int(rng.integers(1, n))] = 0.0  # force a merge
        sizes = [int(s) for s in rng.integers(1, 2000, size=n)]
        t = trace_of(list(zip(dts, sizes)))
        merged = merge_simultaneous(t, 0.0)
        N = int(rng.integers(1, 8))
        out = apply_batching(t, BatchingParams(batch_size=N))
        assert len(out.events) == math.ceil(len(merged.events) / N)
        assert out.total_bytes() == t.total_bytes()
        assert out.duration() == pytest.approx(t.duration(), abs=1e-9)


# --- padding ------------------------------------------------------------------


def test_padding_constant():
    t = trace_of([(0, 10), (0.1, 20)])
    out = apply_padding(t, PaddingParams(pad_min=1, pad_max=1, seed=3))
    assert [s for _, s in pairs(out)] == [11, 21]
    assert [d for d, _ in pairs(out)] == [0.0, 0.1]


def test_padding_bounds():
    t = trace_of([(0.0, 50)] + [(0.01, 50)] * 99, tid="p")
    out = apply_padding(t, PaddingParams(pad_min=10, pad_max=500, seed=1))
    for before, after in zip(t.events, out.events):
        assert before.size + 10 <= after.size <= before.size + 500


def test_padding_mean_monte_carlo():
    t = trace_of([(0.0, 100)] + [(0.01, 100)] * (100_000 - 1), tid="mc")
    out = apply_padding(t, PaddingParams(pad_min=10, pad_max=500, seed=7))
    added = np.array([a.size - b.size for a, b in zip(out.events, t.events)])
    assert abs(added.mean() - 255.0) / 255.0 < 0.01


def test_padding_deterministic():
    t = trace_of([(0, 10), (0.1, 20), (0.2, 30)])
    p = PaddingParams(pad_min=5, pad_max=50, seed=11)
    assert pairs(apply_padding(t, p)) == pairs(apply_padding(t, p))


# --- injection ----------------------------------------------------------------


def stats_for_tests():
    return DatasetStats(mu_dt=0.05, mu_size=100.0, sigma_size=15.0,
                        mu_increase=8.0, sigma_increase=3.0)


def test_injection_no_fit_when_rate_tiny():
    t = trace_of([(0, 10), (0.01, 20)])
    params = InjectionParams(stats=stats_for_tests(), injections_per_mean=1e-9, seed=5)
    out = apply_injection(t, params)
    assert [s for _, s in pairs(out)] == [10, 20]


def test_injection_deterministic():
    t = trace_of([(0, 10)] + [(0.05, 100 + i) for i in range(30)])
    params = InjectionParams(stats=stats_for_tests(), seed=9)
    assert pairs(apply_injection(t, params)) == pairs(apply_injection(t, params))


def test_injection_output_invariants():
    rng = rng_from(4)
    t = trace_of([(0.0, 120)] + [(float(d), int(s)) for d, s in
                  zip(rng.uniform(0.01, 0.1, 60), rng.integers(50, 300, 60))])
    params = InjectionParams(stats=stats_for_tests(), seed=2)
    out = apply_injection(t, params)
    merged = merge_simultaneous(t, params.merge_epsilon)
    assert len(out.events) >= len(merged.events)
    assert all(e.size >= 1 for e in out.events)
    assert all(e.dt >= 0 for e in out.events)
    assert out.total_bytes() >= t.total_bytes()


def test_injection_rate_matches_renewal_formula():
    # 2,000 traces of duration D with known mean gap; realized injection
    # count per trace must track D * k / mu_dt
    k = 2.0
    mu = 0.05
    n_events = 81
    stats = DatasetStats(mu_dt=mu, mu_size=100.0, sigma_size=10.0,
                         mu_increase=5.0, sigma_increase=2.0)
    params = InjectionParams(stats=stats, injections_per_mean=k, seed=0)
    t = trace_of([(0.0, 100)] + [(mu, 100)] * (n_events - 1), tid="rate")
    duration = mu * (n_events - 1)
    expected = duration * k / mu
    counts = []
    for i in range(2000):
        out = apply_injection(t, params, rng=rng_from(1234, i))
        counts.append(len(out.events) - n_events)
    realized = float(np.mean(counts))
    assert abs(realized - expected) / expected < 0.05


def test_injection_monotonic_rule_uses_increase_stats():
    # zero-variance stats and jitter make the outcome exact: one injection
    # lands at t=0.2 right after a strictly increasing window ending in 50,
    # so the adaptive rule must emit 50 + mu_increase
    stats = DatasetStats(mu_dt=0.05, mu_size=999.0, sigma_size=0.0,
                         mu_increase=7.0, sigma_increase=0.0)
    params = InjectionParams(stats=stats, injections_per_mean=0.25,
                             stddev_multiplier=0.0, seed=3)
    t = trace_of([(0.0, 10), (0.05, 20), (0.05, 30), (0.05, 40), (0.05, 50),
                  (0.05, 60), (0.05, 70)])
    out = apply_injection(t, params)
    assert [e.size for e in out.events] == [10, 20, 30, 40, 50, 57, 60, 70]


def test_injection_base_rule_when_not_monotonic():
    stats = DatasetStats(mu_dt=0.05, mu_size=999.0, sigma_size=0.0,
                         mu_increase=7.0, sigma_increase=0.0)
    params = InjectionParams(stats=stats, injections_per_mean=0.25,
                             stddev_multiplier=0.0, seed=3)
    t = trace_of([(0.0, 10), (0.05, 20), (0.05, 5), (0.05, 40), (0.05, 50),
                  (0.05, 60), (0.05, 70)])
    out = apply_injection(t, params)
    # window before the injection is [20, 5, 40, 50]: not monotone
    assert [e.size for e in out.events] == [10, 20, 5, 40, 50, 999, 60, 70]


# --- stats --------------------------------------------------------------------


def test_stats_mean_dt():
    ds = Dataset(traces=(trace_of([(0, 10), (0.1, 20), (0.1, 30)], tid="a"),
                         trace_of([(0, 10), (0.1, 20)], tid="b")))
    stats = compute_injection_stats(ds, merge_epsilon=0.0)
    assert stats.mu_dt == pytest.approx(0.1)
    assert stats.mu_increase == pytest.approx(10.0)


def test_stats_constant_sizes_fallback():
    ds = Dataset(traces=(trace_of([(0, 50), (0.1, 50), (0.2, 50)], tid="a"),))
    with pytest.warns(UserWarning, match="no positive size deltas"):
        stats = compute_injection_stats(ds, merge_epsilon=0.0)
    assert stats.sigma_size == 0.0
    assert stats.mu_increase == stats.mu_size == 50.0


def test_stats_lognormal_monte_carlo():
    rng = rng_from(17)
    mu_log, sigma_log = math.log(0.05), 0.4
    traces = []
    for i in range(500):
        dts = [0.0] + list(rng.lognormal(mu_log, sigma_log, size=200))
        traces.append(trace_of([(d, 100) for d in dts], tid=f"t{i}"))
    stats = compute_injection_stats(Dataset(traces=tuple(traces)), merge_epsilon=0.0)
    analytic = math.exp(mu_log + sigma_log ** 2 / 2)
    assert abs(stats.mu_dt - analytic) / analytic < 0.02


def test_stats_empty_and_single_event():
    with pytest.raises(ValueError):
        compute_injection_stats(Dataset(traces=()))
    ds = Dataset(traces=(trace_of([(0, 10)], tid="solo"),))
    with pytest.raises(ValueError, match="single-event"):
        compute_injection_stats(ds)


# --- dataset-level strategies ---------------------------------------------------


def test_apply_strategy_tags_meta_and_provenance():
    ds = Dataset(traces=(trace_of([(0, 10), (0.1, 20)], tid="a"),),
                 provenance={"source": "synthetic"})
    out = apply_strategy(ds, {"strategy": "batching", "batch_size": 2})
    assert out.provenance["source"] == "transformed"
    assert out.traces[0].meta["mitigation"].startswith("batching")


def test_apply_strategy_unknown():
    ds = Dataset(traces=(trace_of([(0, 10)], tid="a"),))
    with pytest.raises(ValueError, match="unknown mitigation"):
        apply_strategy(ds, {"strategy": "teleport"})


def test_apply_strategy_injection_uses_training_ids_only():
    fast = [trace_of([(0, 10)] + [(0.001, 10)] * 20, tid=f"f{i}") for i in range(5)]
    slow = [trace_of([(0, 10)] + [(1.0, 10)] * 20, tid=f"s{i}") for i in range(5)]
    ds = Dataset(traces=tuple(fast + slow))
    spec = {"strategy": "injection", "merge_epsilon": 0.0, "seed": 1}
    out_slow_stats = apply_strategy(ds, spec, stats_ids=[t.id for t in slow])
    out_fast_stats = apply_strategy(ds, spec, stats_ids=[t.id for t in fast])
    # rate scales with 1/mu_dt, so fast-derived stats inject far more
    n_slow = sum(len(t.events) for t in out_slow_stats.traces)
    n_fast = sum(len(t.events) for t in out_fast_stats.traces)
    assert n_fast > n_slow
