"""Feature preparation: padded flat vectors and quantile bucket tokens.

Two encodings are produced from traces. The tree attacker consumes raw,
unnormalized size/time sequences zero-padded to a fixed length and
flattened. Sequence attackers consume discrete token ids from per-stream
50-bucket quantile encoders; that serialization is pinned here so any
other consumer can reproduce it bit for bit from the manifest JSON.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .traces import Trace, TARGET, ceil_frac

SIZE_ONLY = "size"
TIME_ONLY = "time"
BOTH = "both"
MODALITIES = (SIZE_ONLY, TIME_ONLY, BOTH)

N_BUCKETS = 50

# Fixed token-id layout for the bucket vocabulary. Consumers of the manifest
# must use the same ids: [CLS]=0, [SEP]=1, size bucket b -> 2+b,
# time bucket b -> 52+b.
CLS_ID = 0
SEP_ID = 1
SIZE_TOKEN_BASE = 2
TIME_TOKEN_BASE = 2 + N_BUCKETS
VOCAB_SIZE = 2 + 2 * N_BUCKETS

MAX_STREAM_TOKENS_BOTH = 255
MAX_STREAM_TOKENS_SINGLE = 510

ENCODER_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FeatureConfig:
    """Flat-vector layout: modality and the fixed padded sequence length."""

    modality: str
    pad_len: int

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.pad_len < 1:
            raise ValueError(f"pad_len must be >= 1, got {self.pad_len}")

    @property
    def width(self) -> int:
        return self.pad_len * (2 if self.modality == BOTH else 1)


@dataclass(frozen=True)
class FeatureMatrix:
    """Rectangular feature rows with aligned labels (1=target) and trace ids."""

    features: np.ndarray
    labels: np.ndarray
    trace_ids: tuple[str, ...]

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int8)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if len(labels) != feats.shape[0] or len(self.trace_ids) != feats.shape[0]:
            raise ValueError("labels/ids must match the feature row count")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite values")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def fit_pad_len(traces: Sequence[Trace]) -> int:
    """Nearest-rank 95th percentile of event-sequence lengths.

    Returns the value at (1-based) index ceil(0.95 * n) of the sorted
    lengths.
    """
    lengths = sorted(len(t.events) for t in traces)
    if not lengths:
        raise ValueError("cannot fit pad_len on an empty trace list")
    rank = max(1, ceil_frac(0.95, len(lengths)))
    return int(lengths[rank - 1])


def _padded(values: np.ndarray, pad_len: int) -> np.ndarray:
    out = np.zeros(pad_len, dtype=np.float64)
    k = min(len(values), pad_len)
    out[:k] = values[:k]
    return out


def vectorize(traces: Sequence[Trace], config: FeatureConfig) -> FeatureMatrix:
    """Flatten traces into fixed-width rows.

    Sequences are truncated to ``pad_len`` or zero-padded at the tail; the
    ``both`` modality concatenates the size block followed by the time
    block. Values are raw and unnormalized.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("cannot vectorize an empty trace list")
    rows = np.zeros((len(traces), config.width), dtype=np.float64)
    for i, t in enumerate(traces):
        if config.modality == SIZE_ONLY:
            rows[i] = _padded(t.sizes(), config.pad_len)
        elif config.modality == TIME_ONLY:
            rows[i] = _padded(t.dts(), config.pad_len)
        else:
            rows[i, :config.pad_len] = _padded(t.sizes(), config.pad_len)
            rows[i, config.pad_len:] = _padded(t.dts(), config.pad_len)
    labels = np.array([1 if t.label == TARGET else 0 for t in traces], dtype=np.int8)
    return FeatureMatrix(features=rows, labels=labels,
                         trace_ids=tuple(t.id for t in traces))


def write_matrix_csv(matrix: FeatureMatrix, config: FeatureConfig, path) -> None:
    """Export a feature matrix as CSV with a header row."""
    if config.modality == BOTH:
        names = [f"s{i}" for i in range(config.pad_len)] + \
                [f"t{i}" for i in range(config.pad_len)]
    else:
        prefix = "s" if config.modality == SIZE_ONLY else "t"
        names = [f"{prefix}{i}" for i in range(config.pad_len)]
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("trace_id,label," + ",".join(names) + "\n")
        for tid, label, row in zip(matrix.trace_ids, matrix.labels, matrix.features):
            fh.write(f"{tid},{int(label)}," + ",".join(repr(float(v)) for v in row) + "\n")


# --- bucket-token encoding ----------------------------------------------------


@dataclass(frozen=True)
class BucketEncoder:
    """Per-stream quantile bucket boundaries plus the token-sequence layout.

    ``size_bounds``/``time_bounds`` hold the 49 internal quantile boundaries
    of the training distributions. A value maps to the count of boundaries
    strictly below it, with ties resolving to the lower bucket, clamping
    out-of-range values to buckets 0/49.
    """

    size_bounds: np.ndarray
    time_bounds: np.ndarray
    modality: str
    max_len: int

    def __post_init__(self):
        sb = np.asarray(self.size_bounds, dtype=np.float64)
        tb = np.asarray(self.time_bounds, dtype=np.float64)
        object.__setattr__(self, "size_bounds", sb)
        object.__setattr__(self, "time_bounds", tb)
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        for name, b in (("size_bounds", sb), ("time_bounds", tb)):
            if b.shape != (N_BUCKETS - 1,):
                raise ValueError(f"encoder not fitted: {name} must have "
                                 f"{N_BUCKETS - 1} entries, got {b.shape}")
            if np.any(np.diff(b) < 0):
                raise ValueError(f"{name} must be non-decreasing")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")

    @property
    def layout(self) -> str:
        return "both" if self.modality == BOTH else "single"

    def size_bucket(self, values) -> np.ndarray:
        return np.searchsorted(self.size_bounds, np.asarray(values, dtype=np.float64),
                               side="left").astype(np.int64)

    def time_bucket(self, values) -> np.ndarray:
        return np.searchsorted(self.time_bounds, np.asarray(values, dtype=np.float64),
                               side="left").astype(np.int64)

    def fitted_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.size_bounds.tobytes())
        h.update(self.time_bounds.tobytes())
        return h.hexdigest()[:16]


def fit_bucket_encoder(traces: Sequence[Trace], modality: str = BOTH,
                       max_len: int | None = None) -> BucketEncoder:
    """Fit 50-bucket quantile boundaries for both streams on training traces."""
    traces = list(traces)
    if not traces:
        raise ValueError("cannot fit a bucket encoder on an empty trace list")
    sizes = np.concatenate([t.sizes() for t in traces])
    dts = np.concatenate([t.dts() for t in traces])
    qs = np.arange(1, N_BUCKETS) / N_BUCKETS
    size_bounds = np.quantile(sizes, qs)
    time_bounds = np.quantile(dts, qs)
    if max_len is None:
        max_len = MAX_STREAM_TOKENS_BOTH if modality == BOTH else MAX_STREAM_TOKENS_SINGLE
    return BucketEncoder(size_bounds=size_bounds, time_bounds=time_bounds,
                         modality=modality, max_len=int(max_len))


def encode(trace: Trace, encoder: BucketEncoder, max_len: int | None = None) -> list[int]:
    """Token-id sequence for one trace under the pinned serialization.

    ``both`` layout: [CLS] + up to ``max_len`` size tokens + [SEP] + up to
    ``max_len`` time tokens + [SEP]. Single-stream layout: [CLS] + up to
    ``max_len`` tokens of that stream + [SEP].
    """
    if not isinstance(encoder, BucketEncoder):
        raise ValueError("encode requires a fitted BucketEncoder")
    cap = int(max_len) if max_len is not None else encoder.max_len
    if cap < 1:
        raise ValueError("max_len must be >= 1")
    if encoder.modality == BOTH:
        sb = encoder.size_bucket(trace.sizes()[:cap])
        tb = encoder.time_bucket(trace.dts()[:cap])
        ids = [CLS_ID]
        ids += [SIZE_TOKEN_BASE + int(b) for b in sb]
        ids.append(SEP_ID)
        ids += [TIME_TOKEN_BASE + int(b) for b in tb]
        ids.append(SEP_ID)
        return ids
    if encoder.modality == SIZE_ONLY:
        body = [SIZE_TOKEN_BASE + int(b) for b in encoder.size_bucket(trace.sizes()[:cap])]
    else:
        body = [TIME_TOKEN_BASE + int(b) for b in encoder.time_bucket(trace.dts()[:cap])]
    return [CLS_ID] + body + [SEP_ID]


def save_encoder(encoder: BucketEncoder, path) -> None:
    """Write the encoder manifest JSON consumed by downstream attackers."""
    doc = {
        "version": ENCODER_SCHEMA_VERSION,
        "layout": encoder.layout,
        "modality": encoder.modality,
        "max_len": encoder.max_len,
        "n_buckets": N_BUCKETS,
        "size_bounds": [float(v) for v in encoder.size_bounds],
        "time_bounds": [float(v) for v in encoder.time_bounds],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def load_encoder(path) -> BucketEncoder:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != ENCODER_SCHEMA_VERSION:
        raise ValueError(f"unsupported encoder manifest version: {doc.get('version')!r}")
    return BucketEncoder(
        size_bounds=np.array(doc["size_bounds"], dtype=np.float64),
        time_bounds=np.array(doc["time_bounds"], dtype=np.float64),
        modality=doc["modality"],
        max_len=int(doc["max_len"]),
    )
