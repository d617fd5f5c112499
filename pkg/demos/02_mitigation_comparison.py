#!/usr/bin/env python3
"""How much does each traffic-shaping defense hurt the attack?

Compares the undefended baseline against token batching (N=5), packet
injection (2 synthetic events per mean gap, 2x jitter), and uniform
random padding, all on the same synthetic benchmark slice.
"""
from streamfp.evaluation import run_trials
from streamfp.gbdt import TrainParams
from streamfp.synth import bundled_scenario, generate

dataset = generate(bundled_scenario("benchmark"), n_target=400, n_noise=1600)
params = TrainParams(max_trees=150)

settings = [
    ("baseline", None),
    ("batching N=5", {"strategy": "batching", "batch_size": 5}),
    ("injection k=2", {"strategy": "injection", "injections_per_mean": 2.0,
                       "stddev_multiplier": 2.0}),
    ("padding 10-500B", {"strategy": "padding", "pad_min": 10, "pad_max": 500}),
]

print(f"{'setting':<18} {'median AUPRC (size features)':>30}")
baseline = None
for name, spec in settings:
    result = run_trials(dataset, params, "size", n_trials=3, base_seed=21,
                        mitigation=spec)
    med = result.median_auprc()
    if baseline is None:
        baseline = med
        print(f"{name:<18} {med:>30.4f}")
    else:
        print(f"{name:<18} {med:>24.4f} ({(med - baseline) * 100:+.1f}pp)")

print("\nbatch-size sweep (both features):")
for n in (1, 2, 3, 5, 8):
    result = run_trials(dataset, params, "both", n_trials=3, base_seed=21,
                        mitigation={"strategy": "batching", "batch_size": n})
    print(f"  N={n}: median AUPRC {result.median_auprc():.4f}")
