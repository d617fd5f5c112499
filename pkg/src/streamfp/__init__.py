"""streamfp: metadata fingerprinting of encrypted streaming traffic.

Library layout:

- ``traces``      core data model, JSONL persistence, prompt-grouped splits
- ``pcap``        classic-pcap ingestion (TCP reassembly, TLS record framing)
- ``synth``       calibrated synthetic traffic generator
- ``features``    padded flat vectors and quantile bucket-token encodings
- ``gbdt``        histogram gradient-boosted tree classifier (from scratch)
- ``evaluation``  average precision, imbalance projection, trial harness
- ``mitigations`` batching, injection and padding traffic transforms
- ``cli``         command-line orchestration
"""

from .traces import (  # noqa: F401
    TARGET,
    NOISE,
    NetworkEvent,
    Trace,
    Dataset,
    SplitResult,
    read_dataset,
    write_dataset,
    split_dataset,
    perturb_prompt,
)

__version__ = "0.1.0"
