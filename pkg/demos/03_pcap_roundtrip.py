#!/usr/bin/env python3
"""Capture-file ingestion demonstrated against the bundled fixture writer.

Builds a small synthetic dataset, renders it as a classic pcap (one TCP
flow per trace, TLS records split across segments at random points),
re-ingests the capture, and verifies the metadata survives the trip.
"""
import tempfile
from pathlib import Path

from streamfp.pcap import dataset_to_pcap, ingest_pcap_detailed
from streamfp.seeding import rng_from
from streamfp.synth import bundled_scenario, generate

dataset = generate(bundled_scenario("disjoint"), n_target=5, n_noise=5)
rng = rng_from(12)


def ragged_segmenter(record):
    """Split each TLS record into 1-3 TCP segments."""
    if len(record) < 16:
        return [len(record)]
    cuts = sorted(rng.integers(1, len(record), size=int(rng.integers(0, 3))))
    out, prev = [], 0
    for c in dict.fromkeys(cuts):
        out.append(int(c) - prev)
        prev = int(c)
    out.append(len(record) - prev)
    return [c for c in out if c > 0]


with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "capture.pcap"
    dataset_to_pcap(dataset, path, server_port=443, segmenter=ragged_segmenter)
    print(f"wrote {path.stat().st_size} bytes of pcap for {len(dataset)} flows")

    ingested, diag = ingest_pcap_detailed(path, server_port=443)
    print(f"diagnostics: {diag.to_dict()}")

    original = {i: t for i, t in enumerate(dataset)}
    for trace in ingested.traces[:3]:
        print(f"\nflow {trace.meta['flow']}")
        print(f"  sizes: {[e.size for e in trace.events][:8]} ...")
        print(f"  gaps:  {[round(e.dt, 4) for e in trace.events][:8]} ...")

    got = sorted(tuple(e.size for e in t.events) for t in ingested)
    want = sorted(tuple(e.size for e in t.events) for t in dataset)
    print(f"\nrecord lengths identical across the round trip: {got == want}")
