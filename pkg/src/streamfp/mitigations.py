"""Traffic-shaping defenses: token batching, packet injection, random padding.

Each transform is a pure per-trace function of (trace, params, rng); the
dataset-level helpers derive one generator per trace from (seed, index) so
results do not depend on iteration order. Statistics feeding the injection
sampler must come from training traffic only; see
:func:`compute_injection_stats`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .seeding import rng_from
from .traces import Dataset, NetworkEvent, Trace

DEFAULT_MERGE_EPSILON = 0.005


@dataclass(frozen=True)
class BatchingParams:
    """Group events into fixed runs of ``batch_size``; size 1 merges only."""

    batch_size: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class PaddingParams:
    """Uniform random byte padding added to every event size.

    The default 10..500 byte range is a placeholder; deployed paddings are
    not publicly specified, and reports carry these bounds verbatim.
    """

    pad_min: int = 10
    pad_max: int = 500
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.pad_min <= self.pad_max):
            raise ValueError(f"need 0 <= pad_min <= pad_max, got "
                             f"({self.pad_min}, {self.pad_max})")


@dataclass(frozen=True)
class DatasetStats:
    """Timing/size moments of merged training traffic driving injection."""

    mu_dt: float
    mu_size: float
    sigma_size: float
    mu_increase: float
    sigma_increase: float

    def __post_init__(self):
        for name in ("mu_dt", "mu_size", "sigma_size", "mu_increase", "sigma_increase"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"injection stats {name} must be finite, got {v!r}")

    def to_dict(self) -> dict:
        return {"mu_dt": self.mu_dt, "mu_size": self.mu_size,
                "sigma_size": self.sigma_size, "mu_increase": self.mu_increase,
                "sigma_increase": self.sigma_increase}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetStats":
        return cls(**{k: float(d[k]) for k in
                      ("mu_dt", "mu_size", "sigma_size", "mu_increase", "sigma_increase")})


@dataclass(frozen=True)
class InjectionParams:
    stats: DatasetStats
    injections_per_mean: float = 2.0
    stddev_multiplier: float = 2.0
    merge_epsilon: float = DEFAULT_MERGE_EPSILON
    monotonic_window: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.injections_per_mean <= 0:
            raise ValueError("injections_per_mean must be > 0")
        if self.merge_epsilon < 0:
            raise ValueError("merge_epsilon must be >= 0")
        if self.monotonic_window < 2:
            raise ValueError("monotonic_window must be >= 2")


def _with_events(trace: Trace, events, tag: str | None = None) -> Trace:
    meta = dict(trace.meta)
    if tag is not None:
        meta["mitigation"] = tag
    return Trace(id=trace.id, label=trace.label, prompt_id=trace.prompt_id,
                 events=tuple(events), meta=meta)


def merge_simultaneous(trace: Trace, epsilon: float = 0.0) -> Trace:
    """Fold consecutive events arriving within ``epsilon`` into their
    predecessor, summing sizes; the fold cascades left to right."""
    events = trace.events
    merged = [[events[0].dt, events[0].size]]
    for ev in events[1:]:
        if ev.dt <= epsilon:
            merged[-1][1] += ev.size
        else:
            merged.append([ev.dt, ev.size])
    return _with_events(trace, (NetworkEvent(dt=d, size=s) for d, s in merged))


def apply_batching(trace: Trace, params: BatchingParams) -> Trace:
    """Merge simultaneous events, then sum gaps and sizes over runs of N.

    A final partial run emits normally; N=1 is the plain zero-gap merge.
    """
    merged = merge_simultaneous(trace, epsilon=0.0)
    n = params.batch_size
    out = []
    evs = merged.events
    for start in range(0, len(evs), n):
        chunk = evs[start:start + n]
        out.append(NetworkEvent(dt=sum(e.dt for e in chunk),
                                size=sum(e.size for e in chunk)))
    return _with_events(trace, out, tag=f"batching:N={n}")


def apply_padding(trace: Trace, params: PaddingParams,
                  rng: np.random.Generator | None = None) -> Trace:
    """Add an independent uniform integer in [pad_min, pad_max] to each size."""
    rng = rng if rng is not None else rng_from(params.seed)
    pads = rng.integers(params.pad_min, params.pad_max + 1, size=len(trace.events))
    out = [NetworkEvent(dt=e.dt, size=e.size + int(p))
           for e, p in zip(trace.events, pads)]
    return _with_events(trace, out, tag=f"padding:{params.pad_min}-{params.pad_max}")


def apply_injection(trace: Trace, params: InjectionParams,
                    rng: np.random.Generator | None = None) -> Trace:
    """Intersperse synthetic events with realistic sizes and timings.

    After the epsilon merge, synthetic arrival times advance from the trace
    start by gaps ~ Normal(mu_dt/k, stddev_multiplier * mu_dt/k) until the
    trace end is passed; sampling the gaps unclamped keeps the realized
    injection rate at k events per mean gap (a positive-truncated normal
    would inflate the mean gap by ~40% at the default multiplier), and the
    final sort restores time order. Each synthetic size follows the
    adaptive rule: when the last ``monotonic_window`` observed sizes are
    strictly increasing, size_last + Normal(mu_increase, sigma_increase),
    otherwise Normal(mu_size, sigma_size); rounded and clamped to >= 1.
    """
    merged = merge_simultaneous(trace, params.merge_epsilon)
    rng = rng if rng is not None else rng_from(params.seed)
    s = params.stats

    times = np.cumsum([e.dt for e in merged.events])
    t_start, t_end = float(times[0]), float(times[-1])
    span = t_end - t_start
    if span <= 0:
        return _with_events(trace, merged.events, tag="injection")

    mean_gap = s.mu_dt / params.injections_per_mean
    sigma_gap = params.stddev_multiplier * mean_gap
    inj_times: list[float] = []
    t = t_start
    steps = 0
    while True:
        t += float(rng.normal(mean_gap, sigma_gap))
        if t > t_end:
            break
        if t > t_start:  # early negative excursions fall outside the trace
            inj_times.append(t)
        steps += 1
        if steps > 1000 + int(20 * span / mean_gap):
            break  # pathological negative-drift guard

    if not inj_times:
        return _with_events(trace, merged.events, tag="injection")

    # single chronological sweep assigning synthetic sizes from the sizes
    # observed so far (real and injected alike)
    real = [(float(tm), int(e.size), 0) for tm, e in zip(times, merged.events)]
    synth = [(tm, -1, 1) for tm in inj_times]
    combined = sorted(real + synth, key=lambda item: (item[0], item[2]))

    window = params.monotonic_window
    recent: list[int] = []
    out_events: list[tuple[float, int]] = []
    for tm, size, is_synth in combined:
        if is_synth:
            if len(recent) >= window and all(
                    recent[i] < recent[i + 1] for i in range(-window, -1)):
                raw = recent[-1] + rng.normal(s.mu_increase, s.sigma_increase)
            else:
                raw = rng.normal(s.mu_size, s.sigma_size)
            size = max(1, int(round(raw)))
        recent.append(size)
        out_events.append((tm, size))

    events = [NetworkEvent(dt=max(0.0, out_events[0][0]), size=out_events[0][1])]
    for (prev_t, _), (cur_t, cur_s) in zip(out_events, out_events[1:]):
        events.append(NetworkEvent(dt=max(0.0, cur_t - prev_t), size=cur_s))
    return _with_events(trace, events, tag="injection")


def compute_injection_stats(dataset: Dataset | list[Trace],
                            merge_epsilon: float = DEFAULT_MERGE_EPSILON) -> DatasetStats:
    """Timing and size moments over epsilon-merged traces.

    ``mu_dt`` averages gaps excluding each trace's first event;
    ``mu_increase``/``sigma_increase`` cover positive consecutive size
    deltas, falling back to the size moments (with a warning) when no
    positive delta exists.
    """
    traces = list(dataset)
    if not traces:
        raise ValueError("cannot compute injection stats on an empty dataset")
    dts: list[float] = []
    sizes: list[int] = []
    increases: list[int] = []
    for trace in traces:
        merged = merge_simultaneous(trace, merge_epsilon)
        evs = merged.events
        sizes.extend(e.size for e in evs)
        dts.extend(e.dt for e in evs[1:])
        for a, b in zip(evs, evs[1:]):
            if b.size > a.size:
                increases.append(b.size - a.size)
    if not dts:
        raise ValueError("no inter-arrival gaps in dataset (single-event traces only)")
    mu_size = float(np.mean(sizes))
    sigma_size = float(np.std(sizes))
    if increases:
        mu_inc = float(np.mean(increases))
        sigma_inc = float(np.std(increases))
    else:
        warnings.warn("no positive size deltas; mu_increase falls back to size moments")
        mu_inc, sigma_inc = mu_size, sigma_size
    return DatasetStats(mu_dt=float(np.mean(dts)), mu_size=mu_size,
                        sigma_size=sigma_size, mu_increase=mu_inc,
                        sigma_increase=sigma_inc)


def apply_strategy(dataset: Dataset, spec: dict, stats_ids=None,
                   seed: int | None = None) -> Dataset:
    """Apply a mitigation described by a strategy dict to a whole dataset.

    ``spec`` follows the CLI JSON convention: {"strategy": "batching",
    "batch_size": N} or {"strategy": "padding", "pad_min": a, "pad_max": b}
    or {"strategy": "injection", "injections_per_mean": k, ...}. Injection
    statistics are computed over ``stats_ids`` (pass the training split) or
    the whole dataset when omitted. Per-trace generators derive from
    (seed, trace index) so application parallelizes deterministically.
    """
    kind = spec.get("strategy")
    seed = int(spec.get("seed", 0) if seed is None else seed)
    traces = list(dataset.traces)

    if kind == "batching":
        params = BatchingParams(batch_size=int(spec.get("batch_size", 1)))
        out = [apply_batching(t, params) for t in traces]
    elif kind == "padding":
        params = PaddingParams(pad_min=int(spec.get("pad_min", 10)),
                               pad_max=int(spec.get("pad_max", 500)), seed=seed)
        out = [apply_padding(t, params, rng=rng_from(seed, i))
               for i, t in enumerate(traces)]
    elif kind == "injection":
        source = dataset.subset(stats_ids) if stats_ids is not None else traces
        merge_epsilon = float(spec.get("merge_epsilon", DEFAULT_MERGE_EPSILON))
        if "stats" in spec:
            stats = DatasetStats.from_dict(spec["stats"])
        else:
            stats = compute_injection_stats(source, merge_epsilon)
        params = InjectionParams(
            stats=stats,
            injections_per_mean=float(spec.get("injections_per_mean", 2.0)),
            stddev_multiplier=float(spec.get("stddev_multiplier", 2.0)),
            merge_epsilon=merge_epsilon,
            monotonic_window=int(spec.get("monotonic_window", 4)),
            seed=seed,
        )
        out = [apply_injection(t, params, rng=rng_from(seed, i))
               for i, t in enumerate(traces)]
    else:
        raise ValueError(f"unknown mitigation strategy: {kind!r}")

    provenance = dict(dataset.provenance)
    provenance["source"] = "transformed"
    provenance["mitigation"] = kind
    return Dataset(traces=tuple(out), provenance=provenance)
