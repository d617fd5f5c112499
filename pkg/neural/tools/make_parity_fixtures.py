#!/usr/bin/env python3
"""Regenerate the encoding-parity fixtures.

Writes 1,000 randomized traces plus, for each modality, the fitted encoder
manifest and the reference token ids produced by the primary encoder. The
TypeScript encoder must reproduce these ids bit for bit.

Usage: python3 tools/make_parity_fixtures.py  (from the neural/ directory)
"""
import json
from pathlib import Path

from streamfp.features import BOTH, SIZE_ONLY, TIME_ONLY, encode, fit_bucket_encoder, save_encoder
from streamfp.seeding import rng_from
from streamfp.traces import Dataset, NetworkEvent, NOISE, TARGET, Trace, write_dataset

OUT = Path(__file__).resolve().parent.parent / "test" / "fixtures"


def random_traces(n=1000, seed=20_240_601):
    traces = []
    for i in range(n):
        rng = rng_from(seed, i)
        # cover truncation: lengths well past the 255 and 510 caps
        # mostly short traces, with a tail population past the 255/510
        # truncation caps
        if i % 10 == 0:
            n_events = int(rng.integers(256, 700))
        else:
            n_events = int(rng.integers(1, 61))
        sizes = rng.integers(1, 20_000, size=n_events)
        dts = [0.0] + [round(float(d), 6)
                       for d in rng.lognormal(-3.5, 1.2, size=n_events - 1)]
        events = tuple(NetworkEvent(dt=d, size=int(s)) for d, s in zip(dts, sizes))
        traces.append(Trace(id=f"parity-{i:04d}",
                            label=TARGET if i % 2 else NOISE,
                            prompt_id=f"p{i:04d}", events=events))
    return Dataset(traces=tuple(traces), provenance={"source": "synthetic"})


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    ds = random_traces()
    write_dataset(ds, OUT / "parity_traces.jsonl")
    for modality, tag in ((BOTH, "both"), (SIZE_ONLY, "size"), (TIME_ONLY, "time")):
        encoder = fit_bucket_encoder(list(ds)[:400], modality=modality)
        save_encoder(encoder, OUT / f"encoder_{tag}.json")
        tokens = {t.id: encode(t, encoder) for t in ds}
        (OUT / f"tokens_{tag}.json").write_text(
            json.dumps(tokens, sort_keys=True, separators=(",", ":")))
    print(f"fixtures written to {OUT}")


if __name__ == "__main__":
    main()
