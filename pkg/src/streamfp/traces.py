"""Trace data model, JSONL persistence and prompt-grouped splitting.

A Trace is one streamed response reduced to what an on-path observer sees:
the ordered sequence of TLS application-data record sizes and the gaps
between them. Datasets bundle traces with provenance; splits hold out whole
prompt groups so a classifier is always tested on unseen phrasings.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .seeding import rng_from

TARGET = "target"
NOISE = "noise"
LABELS = (TARGET, NOISE)


def ceil_frac(fraction: float, n: int) -> int:
    """Float-robust ceil(fraction * n): 0.2 * 100 must give 20, not 21."""
    return max(0, math.ceil(fraction * n - 1e-9))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class NetworkEvent:
    """One application-data record: gap to the previous record, size in bytes."""

    dt: float
    size: int

    def __post_init__(self):
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "size", int(self.size))
        if not math.isfinite(self.dt) or self.dt < 0:
            raise ValueError(f"event dt must be finite and >= 0, got {self.dt!r}")
        if self.size < 1:
            raise ValueError(f"event size must be >= 1, got {self.size!r}")


@dataclass(frozen=True)
class Trace:
    """One captured or synthesized response stream.

    By convention freshly captured/generated traces have ``events[0].dt == 0``
    (time to first byte is out of band). Traffic transforms that sum gaps may
    legitimately produce a positive leading dt, so it is not enforced here.
    """

    id: str
    label: str
    prompt_id: str
    events: tuple[NetworkEvent, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if not self.events:
            raise ValueError(f"trace {self.id!r} has no events")
        if not self.prompt_id:
            raise ValueError(f"trace {self.id!r} has an empty prompt_id")
        for k, v in self.meta.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise ValueError(f"trace {self.id!r} meta must map str to str")

    def sizes(self) -> np.ndarray:
        return np.array([e.size for e in self.events], dtype=np.float64)

    def dts(self) -> np.ndarray:
        return np.array([e.dt for e in self.events], dtype=np.float64)

    def duration(self) -> float:
        return float(sum(e.dt for e in self.events))

    def total_bytes(self) -> int:
        return sum(e.size for e in self.events)


@dataclass(frozen=True)
class Dataset:
    """A labelled trace collection plus provenance of how it was produced."""

    traces: tuple[Trace, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))
        seen = set()
        for t in self.traces:
            if t.id in seen:
                raise ValueError(f"duplicate trace id {t.id!r}")
            seen.add(t.id)

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self) -> Iterator[Trace]:
        return iter(self.traces)

    def id_index(self) -> dict[str, Trace]:
        return {t.id: t for t in self.traces}

    def subset(self, ids: Iterable[str]) -> tuple[Trace, ...]:
        """Traces with the given ids, in dataset order."""
        wanted = set(ids)
        return tuple(t for t in self.traces if t.id in wanted)

    def count(self, label: str) -> int:
        return sum(1 for t in self.traces if t.label == label)


@dataclass(frozen=True)
class SplitResult:
    """Disjoint trace-id partition. Test holds complete target prompt groups."""

    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def to_dict(self) -> dict:
        return {
            "train": list(self.train),
            "val": list(self.val),
            "test": list(self.test),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitResult":
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), int(d["seed"]))


def _trace_to_json(trace: Trace) -> str:
    obj = {
        "id": trace.id,
        "label": trace.label,
        "prompt_id": trace.prompt_id,
        "events": [{"dt": e.dt, "size": e.size} for e in trace.events],
        "meta": dict(trace.meta),
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def write_dataset(dataset: Dataset, path) -> None:
    """Write the dataset as JSONL, one trace per line.

    The first line is a ``#``-prefixed provenance header. Keys are emitted in
    a fixed order so identical datasets serialize to identical bytes.
    """
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            if dataset.provenance:
                fh.write("# " + json.dumps(dataset.provenance, ensure_ascii=False,
                                           sort_keys=True, separators=(",", ":")) + "\n")
            for trace in dataset.traces:
                fh.write(_trace_to_json(trace) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


def read_dataset(path) -> Dataset:
    """Read and validate a JSONL trace file written by :func:`write_dataset`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    traces: list[Trace] = []
    seen_ids: dict[str, int] = {}
    provenance: dict = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                header = line.lstrip("#").strip()
                if header:
                    try:
                        provenance = json.loads(header)
                    except json.JSONDecodeError:
                        pass  # opaque comment header
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from exc
            try:
                events = tuple(NetworkEvent(dt=e["dt"], size=e["size"]) for e in obj["events"])
                trace = Trace(
                    id=str(obj["id"]),
                    label=str(obj["label"]),
                    prompt_id=str(obj["prompt_id"]),
                    events=events,
                    meta={str(k): str(v) for k, v in obj.get("meta", {}).items()},
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: invalid trace: {exc}") from exc
            if trace.id in seen_ids:
                raise ValueError(
                    f"{path}: line {lineno}: duplicate trace id {trace.id!r} "
                    f"(first seen on line {seen_ids[trace.id]})"
                )
            seen_ids[trace.id] = lineno
            traces.append(trace)
    return Dataset(traces=tuple(traces), provenance=provenance)


def split_dataset(dataset: Dataset, holdout_fraction: float, val_fraction: float,
                  seed: int) -> SplitResult:
    """Prompt-grouped split.

    ``ceil(holdout_fraction * n_target_prompts)`` target prompt groups are
    drawn uniformly at random; every trace of those prompts goes to test.
    All remaining traces (leftover target plus all noise) are split per
    trace into train/val, with ``round(val_fraction * n)`` samples in val.
    Deterministic for a given seed.
    """
    if not (0.0 < holdout_fraction < 1.0):
        raise ValueError(f"holdout_fraction must be in (0,1), got {holdout_fraction}")
    if not (0.0 < val_fraction < 1.0):
        raise ValueError(f"val_fraction must be in (0,1), got {val_fraction}")

    target_pids = sorted({t.prompt_id for t in dataset.traces if t.label == TARGET})
    if len(target_pids) < 2:
        raise ValueError(
            f"need >= 2 distinct target prompt_ids to split, got {len(target_pids)}"
        )

    rng = rng_from(seed)
    n_holdout = ceil_frac(holdout_fraction, len(target_pids))
    order = rng.permutation(len(target_pids))
    holdout_pids = {target_pids[i] for i in order[:n_holdout]}

    test_ids = [t.id for t in dataset.traces
                if t.label == TARGET and t.prompt_id in holdout_pids]
    test_set = set(test_ids)
    remaining = [t.id for t in dataset.traces if t.id not in test_set]

    n_val = round_half_up(val_fraction * len(remaining))
    perm = rng.permutation(len(remaining))
    val_positions = set(int(i) for i in perm[:n_val])
    val_ids = [tid for i, tid in enumerate(remaining) if i in val_positions]
    train_ids = [tid for i, tid in enumerate(remaining) if i not in val_positions]

    return SplitResult(train=tuple(train_ids), val=tuple(val_ids),
                       test=tuple(test_ids), seed=int(seed))


def perturb_prompt(prompt: str, n_variants: int, seed: int) -> list[str]:
    """Produce ``n_variants`` distinct copies of ``prompt`` with extra spaces.

    Extra space characters are inserted at randomly chosen existing
    whitespace positions, so collapsing whitespace runs recovers the
    original words. Deterministic per seed.
    """
    if n_variants < 1:
        raise ValueError(f"n_variants must be >= 1, got {n_variants}")
    gaps = [i for i, ch in enumerate(prompt) if ch.isspace()]
    if not gaps:
        raise ValueError("prompt has no whitespace gaps; cannot build distinct variants")

    rng = rng_from(seed)
    variants: list[str] = []
    seen: set[str] = set()
    extra = 1
    misses = 0
    while len(variants) < n_variants:
        picks = rng.integers(0, len(gaps), size=extra)
        positions = sorted((gaps[int(p)] for p in picks), reverse=True)
        out = prompt
        for pos in positions:
            out = out[:pos] + " " + out[pos:]
        if out in seen:
            misses += 1
            if misses >= 25:
                extra += 1
                misses = 0
            continue
        seen.add(out)
        variants.append(out)
    return variants
