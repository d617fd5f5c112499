"""Calibrated synthetic streaming traffic with the on-wire size relation.

Each generated trace simulates one streamed response: a response length in
tokens is drawn from the topic's distribution, per-token plaintext lengths
are drawn from the topic's categorical model, tokens are grouped into
events of ``provider_batch`` tokens, and every event's wire size is the
batched plaintext length plus the per-event envelope plus the constant
encryption overhead. Inter-event gaps follow a two-mode log-normal timing
model (a slow mode plus occasional flush bursts).
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .seeding import rng_from
from .traces import Dataset, NetworkEvent, NOISE, TARGET, Trace

# Constant added to every record by encryption framing; provider-dependent,
# default models a 16-byte auth tag + content-type byte + 5-byte header.
DEFAULT_TLS_OVERHEAD = 22
# Serialization wrapper around each streamed chunk (JSON/SSE envelope).
DEFAULT_ENVELOPE_BYTES = 120

SCENARIO_SCHEMA_VERSION = 1

_DEFAULT_TIMING = dict(mu_log=math.log(0.04), sigma_log=0.5, burst_prob=0.0,
                       burst_mu_log=math.log(0.004), burst_sigma_log=0.35)


@dataclass(frozen=True)
class Categorical:
    """Empirical distribution over a finite value grid."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "probs", probs)
        if len(vals) != len(probs) or not vals:
            raise ValueError("values and probs must be non-empty and aligned")
        if any(p < 0 or not math.isfinite(p) for p in probs):
            raise ValueError("probs must be finite and non-negative")
        total = sum(probs)
        if not math.isclose(total, 1.0, rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError(f"probs must sum to 1, got {total}")
        if any(not math.isfinite(v) for v in vals):
            raise ValueError("values must be finite")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(np.array(self.values), size=size, p=np.array(self.probs))

    def mean(self) -> float:
        return float(sum(v * p for v, p in zip(self.values, self.probs)))

    @classmethod
    def from_observations(cls, observations) -> "Categorical":
        vals, counts = np.unique(np.asarray(observations, dtype=np.float64),
                                 return_counts=True)
        return cls(values=tuple(vals), probs=tuple(counts / counts.sum()))


@dataclass(frozen=True)
class TopicSpec:
    """Per-topic token-length and response-length models."""

    name: str
    role: str  # "target" | "noise"
    token_lengths: Categorical
    response_lengths: Categorical

    def __post_init__(self):
        if self.role not in (TARGET, NOISE):
            raise ValueError(f"topic role must be target or noise, got {self.role!r}")
        if any(v < 1 or v != int(v) for v in self.token_lengths.values):
            raise ValueError("token lengths must be integers >= 1")
        if any(v < 1 or v != int(v) for v in self.response_lengths.values):
            raise ValueError("response lengths must be integers >= 1")


@dataclass(frozen=True)
class TimingModel:
    """Log-normal inter-event gaps with an optional fast burst mode."""

    mu_log: float = _DEFAULT_TIMING["mu_log"]
    sigma_log: float = _DEFAULT_TIMING["sigma_log"]
    burst_prob: float = 0.0
    burst_mu_log: float = _DEFAULT_TIMING["burst_mu_log"]
    burst_sigma_log: float = _DEFAULT_TIMING["burst_sigma_log"]

    def __post_init__(self):
        for name in ("mu_log", "sigma_log", "burst_mu_log", "burst_sigma_log"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"timing parameter {name} must be finite")
        if not (0.0 <= self.burst_prob <= 1.0):
            raise ValueError("burst_prob must be in [0, 1]")

    def sample_gaps(self, rng: np.random.Generator, size: int) -> np.ndarray:
        gaps = rng.lognormal(self.mu_log, self.sigma_log, size=size)
        if self.burst_prob > 0 and size:
            burst = rng.random(size) < self.burst_prob
            gaps = np.where(burst,
                            rng.lognormal(self.burst_mu_log, self.burst_sigma_log,
                                          size=size),
                            gaps)
        return gaps


@dataclass(frozen=True)
class ScenarioConfig:
    topics: tuple[TopicSpec, ...]
    envelope_bytes: int = DEFAULT_ENVELOPE_BYTES
    tls_overhead: int = DEFAULT_TLS_OVERHEAD
    provider_batch: int = 1
    timing: TimingModel = field(default_factory=TimingModel)
    n_target_prompts: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.envelope_bytes < 0 or self.tls_overhead < 0:
            raise ValueError("envelope_bytes and tls_overhead must be >= 0")
        if self.provider_batch < 1:
            raise ValueError("provider_batch must be >= 1")
        if self.n_target_prompts < 1:
            raise ValueError("n_target_prompts must be >= 1")
        targets = [t for t in self.topics if t.role == TARGET]
        noises = [t for t in self.topics if t.role == NOISE]
        if len(targets) != 1 or not noises:
            raise ValueError("scenario needs exactly one target topic and >= 1 noise topics")

    @property
    def target_topic(self) -> TopicSpec:
        return next(t for t in self.topics if t.role == TARGET)

    @property
    def noise_topics(self) -> tuple[TopicSpec, ...]:
        return tuple(t for t in self.topics if t.role == NOISE)

    def to_dict(self) -> dict:
        return {
            "version": SCENARIO_SCHEMA_VERSION,
            "seed": self.seed,
            "envelope_bytes": self.envelope_bytes,
            "tls_overhead": self.tls_overhead,
            "provider_batch": self.provider_batch,
            "n_target_prompts": self.n_target_prompts,
            "timing": {
                "mu_log": self.timing.mu_log,
                "sigma_log": self.timing.sigma_log,
                "burst_prob": self.timing.burst_prob,
                "burst_mu_log": self.timing.burst_mu_log,
                "burst_sigma_log": self.timing.burst_sigma_log,
            },
            "topics": [
                {
                    "name": t.name,
                    "role": t.role,
                    "token_lengths": {"values": list(t.token_lengths.values),
                                      "probs": list(t.token_lengths.probs)},
                    "response_lengths": {"values": list(t.response_lengths.values),
                                         "probs": list(t.response_lengths.probs)},
                }
                for t in self.topics
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        if doc.get("version", SCENARIO_SCHEMA_VERSION) != SCENARIO_SCHEMA_VERSION:
            raise ValueError(f"unsupported scenario version: {doc.get('version')!r}")
        topics = tuple(
            TopicSpec(
                name=t["name"],
                role=t["role"],
                token_lengths=Categorical(tuple(t["token_lengths"]["values"]),
                                          tuple(t["token_lengths"]["probs"])),
                response_lengths=Categorical(tuple(t["response_lengths"]["values"]),
                                             tuple(t["response_lengths"]["probs"])),
            )
            for t in doc["topics"]
        )
        timing = TimingModel(**doc.get("timing", {}))
        return cls(topics=topics,
                   envelope_bytes=int(doc.get("envelope_bytes", DEFAULT_ENVELOPE_BYTES)),
                   tls_overhead=int(doc.get("tls_overhead", DEFAULT_TLS_OVERHEAD)),
                   provider_batch=int(doc.get("provider_batch", 1)),
                   timing=timing,
                   n_target_prompts=int(doc.get("n_target_prompts", 100)),
                   seed=int(doc.get("seed", 0)))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def save_scenario(config: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_scenario(path) -> ScenarioConfig:
    return ScenarioConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def bundled_scenario(name: str) -> ScenarioConfig:
    """Load a scenario shipped with the package (``benchmark``, ``disjoint``)."""
    text = resources.files("streamfp.data").joinpath(f"scenario_{name}.json").read_text()
    return ScenarioConfig.from_dict(json.loads(text))


def bundled_target_prompts() -> list[str]:
    """The 100 bundled sensitive-topic questions used for prompt naming."""
    text = resources.files("streamfp.data").joinpath("target_prompts.txt").read_text()
    return [line for line in text.splitlines() if line.strip()]


@dataclass(frozen=True)
class GenerationReport:
    n_target: int
    n_noise: int
    mean_tokens_per_event: float
    mean_event_size: float

    def to_dict(self) -> dict:
        return {"n_target": self.n_target, "n_noise": self.n_noise,
                "mean_tokens_per_event": self.mean_tokens_per_event,
                "mean_event_size": self.mean_event_size}


def _simulate_trace(config: ScenarioConfig, topic: TopicSpec,
                    rng: np.random.Generator) -> tuple[list[NetworkEvent], int]:
    batch = config.provider_batch
    n_tokens = int(topic.response_lengths.sample(rng, 1)[0])
    # round up to whole batches so grouping is exact
    n_events = max(1, math.ceil(n_tokens / batch))
    n_tokens = n_events * batch
    token_lens = topic.token_lengths.sample(rng, n_tokens).astype(np.int64)
    payloads = token_lens.reshape(n_events, batch).sum(axis=1)
    sizes = payloads + config.envelope_bytes + config.tls_overhead
    dts = np.zeros(n_events)
    if n_events > 1:
        dts[1:] = config.timing.sample_gaps(rng, n_events - 1)
    events = [NetworkEvent(dt=float(d), size=int(s)) for d, s in zip(dts, sizes)]
    return events, int(n_tokens)


def generate(config: ScenarioConfig, n_target: int, n_noise: int) -> Dataset:
    """Generate a labeled synthetic dataset; deterministic per config seed.

    Target traces cluster into ``config.n_target_prompts`` prompt groups,
    named after the bundled question list when it is long enough; every
    noise trace is its own prompt. Per-trace generators derive from
    (seed, trace index) so parallel generation would match sequential.
    """
    if n_target <= 0 or n_noise <= 0:
        raise ValueError("n_target and n_noise must be > 0")
    prompts = bundled_target_prompts()
    target_topic = config.target_topic
    noise_topics = config.noise_topics
    traces: list[Trace] = []

    for i in range(n_target):
        rng = rng_from(config.seed, i)
        events, n_tokens = _simulate_trace(config, target_topic, rng)
        p = i % config.n_target_prompts
        meta = {"topic": target_topic.name, "tokens": str(n_tokens)}
        if p < len(prompts):
            meta["prompt_text"] = prompts[p]
        traces.append(Trace(id=f"syn-t-{i:06d}", label=TARGET,
                            prompt_id=f"target-q{p + 1:03d}",
                            events=tuple(events), meta=meta))

    for j in range(n_noise):
        rng = rng_from(config.seed, n_target + j)
        topic = noise_topics[int(rng.integers(0, len(noise_topics)))]
        events, n_tokens = _simulate_trace(config, topic, rng)
        traces.append(Trace(id=f"syn-n-{j:06d}", label=NOISE,
                            prompt_id=f"noise-{j:06d}",
                            events=tuple(events),
                            meta={"topic": topic.name, "tokens": str(n_tokens)}))

    provenance = {"source": "synthetic", "config_digest": config.digest(),
                  "seed": str(config.seed)}
    return Dataset(traces=tuple(traces), provenance=provenance)


def generation_report(dataset: Dataset) -> GenerationReport:
    """Summarize realized volumes; requires per-trace token counts in meta."""
    n_target = dataset.count(TARGET)
    n_noise = dataset.count(NOISE)
    total_tokens = 0
    total_events = 0
    total_bytes = 0
    for t in dataset:
        if "tokens" not in t.meta:
            raise ValueError(f"trace {t.id!r} lacks a tokens meta entry")
        total_tokens += int(t.meta["tokens"])
        total_events += len(t.events)
        total_bytes += t.total_bytes()
    return GenerationReport(n_target=n_target, n_noise=n_noise,
                            mean_tokens_per_event=total_tokens / total_events,
                            mean_event_size=total_bytes / total_events)


def estimate_scenario_from_dataset(dataset: Dataset,
                                   envelope_bytes: int = DEFAULT_ENVELOPE_BYTES,
                                   tls_overhead: int = DEFAULT_TLS_OVERHEAD,
                                   provider_batch: int = 1,
                                   n_target_prompts: int = 100,
                                   seed: int = 0) -> ScenarioConfig:
    """Moment-match a scenario to observed traffic.

    Event payloads (size minus envelope minus overhead) become the
    per-label empirical token-length distribution given ``provider_batch``;
    per-trace event counts become the response-length distribution; gap
    log-moments become a single-mode timing model. Datasets of single-event
    traces fall back to default timing with a warning; a dataset missing
    one label reuses the other label's distributions (also warned).
    """
    traces = list(dataset)
    if not traces:
        raise ValueError("cannot estimate a scenario from an empty dataset")

    def topic_from(label: str, group: list[Trace]) -> TopicSpec:
        payloads = []
        lengths = []
        for t in group:
            payloads.extend(max(1.0, e.size - envelope_bytes - tls_overhead)
                            for e in t.events)
            lengths.append(len(t.events) * provider_batch)
        per_token = np.maximum(1, np.round(np.array(payloads) / provider_batch))
        name = f"estimated-{label}"
        return TopicSpec(name=name, role=label,
                         token_lengths=Categorical.from_observations(per_token),
                         response_lengths=Categorical.from_observations(lengths))

    groups = {TARGET: [t for t in traces if t.label == TARGET],
              NOISE: [t for t in traces if t.label == NOISE]}
    topics = []
    for label in (TARGET, NOISE):
        if groups[label]:
            topics.append(topic_from(label, groups[label]))
        else:
            other = TARGET if label == NOISE else NOISE
            warnings.warn(f"dataset has no {label} traces; reusing the "
                          f"{other} distributions for the {label} topic")
            topics.append(replace(topic_from(other, groups[other]), role=label,
                                  name=f"estimated-{label}"))

    gaps = np.array([e.dt for t in traces for e in t.events[1:] if e.dt > 0])
    if gaps.size:
        timing = TimingModel(mu_log=float(np.mean(np.log(gaps))),
                             sigma_log=float(max(np.std(np.log(gaps)), 1e-9)),
                             burst_prob=0.0)
    else:
        warnings.warn("no positive inter-arrival gaps; timing model uses defaults")
        timing = TimingModel(burst_prob=0.0)

    return ScenarioConfig(topics=tuple(topics), envelope_bytes=envelope_bytes,
                          tls_overhead=tls_overhead, provider_batch=provider_batch,
                          timing=timing, n_target_prompts=n_target_prompts, seed=seed)
