#!/usr/bin/env python3
"""Quantile bucket tokens: the sequence encoding for neural attackers.

Fits 50-bucket quantile encoders on training traffic, shows the token-id
serialization, and writes the manifest JSON that any other consumer can
use to reproduce the encoding bit for bit.
"""
import tempfile
from pathlib import Path

from streamfp.features import encode, fit_bucket_encoder, load_encoder, save_encoder
from streamfp.synth import bundled_scenario, generate

dataset = generate(bundled_scenario("benchmark"), n_target=100, n_noise=100)
train = list(dataset)[:150]

encoder = fit_bucket_encoder(train, modality="both")
print(f"size boundaries (first 5): "
      f"{[round(float(b), 1) for b in encoder.size_bounds[:5]]}")
print(f"time boundaries (first 5): "
      f"{[round(float(b), 5) for b in encoder.time_bounds[:5]]}")

trace = dataset.traces[0]
ids = encode(trace, encoder)
print(f"\ntrace {trace.id}: {len(trace.events)} events -> {len(ids)} tokens")
print(f"token ids: {ids[:12]} ... {ids[-6:]}")
print("layout: [CLS]=0, size buckets 2..51, [SEP]=1, time buckets 52..101, [SEP]")

with tempfile.TemporaryDirectory() as tmp:
    manifest = Path(tmp) / "encoder.json"
    save_encoder(encoder, manifest)
    again = load_encoder(manifest)
    print(f"\nmanifest round-trip reproduces tokens: "
          f"{encode(trace, again) == ids}")
    print(f"manifest bytes: {manifest.stat().st_size}")
