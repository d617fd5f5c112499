"""Command-line orchestration.

Thin adapters over the library: every subcommand parses arguments, moves
files, and calls into the modules; no analysis logic lives here. All
experiment runs write ``manifest.json`` before any result so partial runs
are diagnosable, and outputs are written atomically (temp file + rename).

Exit codes: 0 success, 2 usage, 3 missing input file, 4 invalid JSON or
config, 5 component error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

from . import __version__, evaluation, features, gbdt, mitigations, pcap, synth
from .traces import read_dataset, split_dataset, write_dataset

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_CONFIG = 4
EXIT_COMPONENT = 5

MODEL_FEATURES_KEY = "feature_config"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail_missing(path) -> CliError:
    return CliError(EXIT_MISSING_FILE, f"missing input file: {path}")


def _read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise _fail_missing(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_BAD_CONFIG, f"invalid JSON in {path}: {exc.msg}") from exc


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_dataset_checked(path):
    path = Path(path)
    if not path.exists():
        raise _fail_missing(path)
    try:
        return read_dataset(path)
    except ValueError as exc:
        raise CliError(EXIT_BAD_CONFIG, str(exc)) from exc


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


# --- subcommands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    config = synth.ScenarioConfig.from_dict(_read_json(args.scenario))
    if args.seed is not None:
        config = synth.ScenarioConfig.from_dict(
            {**config.to_dict(), "seed": args.seed})
    dataset = synth.generate(config, args.n_target, args.n_noise)
    write_dataset(dataset, args.out)
    report = synth.generation_report(dataset)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_ingest(args) -> int:
    path = Path(args.pcap)
    if not path.exists():
        raise _fail_missing(path)
    paths = sorted(path.glob("*.pcap")) if path.is_dir() else [path]
    if not paths:
        raise _fail_missing(f"{path}/*.pcap")
    traces = []
    totals = pcap.IngestReport()
    provenance = None
    for p in paths:
        ds, rep = pcap.ingest_pcap_detailed(p, server_port=args.port)
        traces.extend(ds.traces)
        provenance = provenance or ds.provenance
        totals.flows += rep.flows
        totals.abandoned += rep.abandoned
        totals.truncated_records += rep.truncated_records
        totals.skipped_packets += rep.skipped_packets
    from .traces import Dataset
    merged = Dataset(traces=tuple(traces), provenance=provenance or {"source": "pcap"})
    write_dataset(merged, args.out)
    if args.report:
        _atomic_write_text(args.report,
                           json.dumps(totals.to_dict(), sort_keys=True) + "\n")
    print(json.dumps(totals.to_dict(), sort_keys=True))
    return EXIT_OK


def _train_params(overrides: dict | None) -> gbdt.TrainParams:
    try:
        return gbdt.TrainParams(**(overrides or {}))
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_BAD_CONFIG, f"invalid training params: {exc}") from exc


def cmd_train(args) -> int:
    train_ds = _read_dataset_checked(args.train)
    val_ds = _read_dataset_checked(args.val)
    params = _train_params(_read_json(args.params) if args.params else None)
    pad_len = args.pad_len or features.fit_pad_len(train_ds.traces)
    config = features.FeatureConfig(args.modality, pad_len)
    fm_train = features.vectorize(train_ds.traces, config)
    fm_val = features.vectorize(val_ds.traces, config)
    model = gbdt.fit(fm_train, fm_val, params)
    gbdt.save_model(model, args.out)
    # record the feature layout next to the trees so eval can reproduce it
    doc = json.loads(Path(args.out).read_text(encoding="utf-8"))
    doc[MODEL_FEATURES_KEY] = {"modality": args.modality, "pad_len": pad_len}
    _atomic_write_text(args.out, json.dumps(doc, sort_keys=True,
                                            separators=(",", ":")) + "\n")
    print(json.dumps({"trees": len(model.trees), "pad_len": pad_len,
                      "n_features": model.n_features}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = gbdt.load_model(args.model)
    doc = _read_json(args.model)
    fc = doc.get(MODEL_FEATURES_KEY)
    if fc is None and (args.modality is None or args.pad_len is None):
        raise CliError(EXIT_BAD_CONFIG,
                       "model file lacks feature_config; pass --modality and --pad-len")
    modality = args.modality or fc["modality"]
    pad_len = args.pad_len or fc["pad_len"]
    test_ds = _read_dataset_checked(args.test)
    config = features.FeatureConfig(modality, pad_len)
    fm = features.vectorize(test_ds.traces, config)
    probs = gbdt.predict_proba(model, fm)
    pos = probs[fm.labels == 1]
    neg = probs[fm.labels == 0]
    scored = evaluation.ScoredSet(pos, neg)
    result = {
        "auprc": evaluation.auprc(scored),
        "precision_at_recall": {
            f"{r:g}": evaluation.precision_at_recall_projected(scored, r, args.ratio)
            for r in evaluation.DEFAULT_RECALLS},
        "ratio": args.ratio,
        "n_pos": int(len(pos)),
        "n_neg": int(len(neg)),
    }
    text = json.dumps(result, sort_keys=True, indent=2) + "\n"
    if args.out:
        _atomic_write_text(args.out, text)
    print(text, end="")
    return EXIT_OK


def cmd_mitigate(args) -> int:
    dataset = _read_dataset_checked(args.input)
    spec = _read_json(args.strategy)
    stats_ids = None
    if args.stats_dataset:
        stats_ds = _read_dataset_checked(args.stats_dataset)
        spec = dict(spec)
        spec["stats"] = mitigations.compute_injection_stats(
            stats_ds, float(spec.get("merge_epsilon",
                                     mitigations.DEFAULT_MERGE_EPSILON))).to_dict()
    try:
        out = mitigations.apply_strategy(dataset, spec, stats_ids=stats_ids)
    except ValueError as exc:
        raise CliError(EXIT_BAD_CONFIG, str(exc)) from exc
    write_dataset(out, args.out)
    print(json.dumps({"traces": len(out), "strategy": spec.get("strategy")},
                     sort_keys=True))
    return EXIT_OK


# --- experiments -----------------------------------------------------------------


def _experiment_dataset(config: dict) -> "object":
    if "dataset" in config:
        return _read_dataset_checked(config["dataset"])
    if "scenario" in config:
        scenario = synth.ScenarioConfig.from_dict(_read_json(config["scenario"]))
        return synth.generate(scenario, int(config.get("n_target", 2000)),
                              int(config.get("n_noise", 8000)))
    raise CliError(EXIT_BAD_CONFIG, "experiment config needs 'dataset' or 'scenario'")


def _write_manifest(out_dir: Path, kind: str, config: dict) -> None:
    manifest = {
        "kind": kind,
        "config": config,
        "tool_version": __version__,
        "inputs": {
            key: _sha256_file(config[key])
            for key in ("dataset", "scenario") if key in config
            and Path(config[key]).exists()
        },
    }
    _atomic_write_text(out_dir / "manifest.json",
                       json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def cmd_experiment(args) -> int:
    config = _read_json(args.config)
    out_dir = Path(os.environ.get("STREAMFP_OUT", args.out or "experiment-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir, args.kind, config)

    dataset = _experiment_dataset(config)
    params = _train_params(config.get("attacker"))
    n_trials = int(config.get("n_trials", 5))
    base_seed = int(config.get("base_seed", 0))
    ratio = float(config.get("ratio", evaluation.DEFAULT_RATIO))
    modality = config.get("modality", features.BOTH)

    def run(tag: str, **kwargs) -> evaluation.EvalReport:
        report = evaluation.run_trials(dataset, params, modality=modality,
                                       n_trials=n_trials, base_seed=base_seed,
                                       ratio=ratio, **kwargs)
        evaluation.write_report_json(report, out_dir / f"report_{tag}.json")
        evaluation.write_report_csv(report, out_dir / f"trials_{tag}.csv")
        return report

    if args.kind == "baseline":
        report = run("baseline")
        print(json.dumps({"median_auprc": report.median_auprc()}, sort_keys=True))
    elif args.kind == "batch-sweep":
        sizes = [int(n) for n in config.get("batch_sizes", range(1, 9))]
        rows = ["batch_size,median_auprc"]
        for n in sizes:
            report = run(f"batch{n}",
                         mitigation={"strategy": "batching", "batch_size": n})
            rows.append(f"{n},{report.median_auprc()!r}")
        _atomic_write_text(out_dir / "batch_sweep.csv", "\n".join(rows) + "\n")
    elif args.kind == "volume-sweep":
        fractions = [float(f) for f in config.get("fractions", (0.25, 0.5, 1.0))]
        rows = ["fraction,median_auprc"]
        for frac in fractions:
            report = run(f"vol{int(round(frac * 100))}", train_fraction=frac)
            rows.append(f"{frac:g},{report.median_auprc()!r}")
        _atomic_write_text(out_dir / "volume_sweep.csv", "\n".join(rows) + "\n")
    elif args.kind == "mitigation-compare":
        rows = ["setting,median_auprc"]
        base = run("baseline")
        rows.append(f"baseline,{base.median_auprc()!r}")
        for spec in config.get("mitigations", []):
            name = spec.get("name") or spec["strategy"]
            report = run(name, mitigation=spec)
            rows.append(f"{name},{report.median_auprc()!r}")
        _atomic_write_text(out_dir / "mitigation_compare.csv", "\n".join(rows) + "\n")
    else:
        raise CliError(EXIT_USAGE, f"unknown experiment kind: {args.kind}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamfp",
        description="Fingerprint encrypted streaming traffic and evaluate defenses")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--scenario", required=True)
    p.add_argument("--n-target", type=int, required=True)
    p.add_argument("--n-noise", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse pcap captures into a dataset")
    p.add_argument("--pcap", required=True, help="capture file or directory")
    p.add_argument("--port", type=int, default=443)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="diagnostics JSON path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train the tree attacker")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--modality", choices=features.MODALITIES, default=features.BOTH)
    p.add_argument("--pad-len", type=int, default=None)
    p.add_argument("--params", default=None, help="JSON file of TrainParams overrides")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model on a labeled dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--ratio", type=float, default=evaluation.DEFAULT_RATIO)
    p.add_argument("--modality", choices=features.MODALITIES, default=None)
    p.add_argument("--pad-len", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mitigate", help="apply a traffic transform to a dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--strategy", required=True, help="strategy JSON file")
    p.add_argument("--stats-dataset", default=None,
                   help="dataset to derive injection statistics from")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mitigate)

    p = sub.add_parser("experiment", help="run a multi-trial experiment")
    p.add_argument("kind", choices=("baseline", "batch-sweep", "volume-sweep",
                                    "mitigation-compare"))
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory "
                   "(STREAMFP_OUT overrides)")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {EXIT_MISSING_FILE}: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ValueError, OSError) as exc:
        print(f"error: {EXIT_COMPONENT}: {exc}", file=sys.stderr)
        return EXIT_COMPONENT


if __name__ == "__main__":
    sys.exit(main())
