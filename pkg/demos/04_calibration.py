#!/usr/bin/env python3
"""Calibrating the generator to observed traffic.

Fits a scenario to a dataset by moment matching (event payloads to token
lengths, gap log-moments to the timing model) and shows that regenerated
traffic reproduces the source's aggregate statistics.
"""
import numpy as np

from streamfp.synth import (
    bundled_scenario,
    estimate_scenario_from_dataset,
    generate,
)

source = generate(bundled_scenario("benchmark"), n_target=300, n_noise=300)


def describe(ds, label):
    sizes = np.concatenate([t.sizes() for t in ds])
    gaps = np.concatenate([t.dts()[1:] for t in ds if len(t.events) > 1])
    lengths = [len(t.events) for t in ds]
    print(f"{label:<12} mean size {sizes.mean():7.2f} B   "
          f"mean gap {gaps.mean() * 1000:6.2f} ms   "
          f"mean length {np.mean(lengths):6.1f} events")


describe(source, "observed")

fitted = estimate_scenario_from_dataset(source)
regenerated = generate(fitted, n_target=300, n_noise=300)
describe(regenerated, "regenerated")

target = next(t for t in fitted.topics if t.role == "target")
print(f"\nfitted target token-length support: "
      f"{[int(v) for v in target.token_lengths.values][:12]}")
print(f"fitted timing mu_log={fitted.timing.mu_log:.3f} "
      f"sigma_log={fitted.timing.sigma_log:.3f}")
