"""Command-line entry point: ingest, featurize, run, synth, report."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from typing import Dict, List, Optional

from . import __version__
from .evaluation import EvaluationReport, SplitError
from .experiments import ConfigError, ExperimentConfig, Level, load_config, load_table, run
from .features import FeatureError, FeatureTable, build_matrix
from .models import ModelError
from .tables import build_tables, write_tables
from .telemetry import TelemetryError, clean_dataset, load_dataset, save_dataset

log = logging.getLogger("xrprofile")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


def sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def write_manifest(out: str, config: Dict, inputs: List[str], artifacts: List[str], seeds: Dict,
                   timings: Dict[str, float]) -> str:
    path = os.path.join(out, "manifest.json")
    write_json(path, {
        "code_version": __version__,
        "config": config,
        "seeds": seeds,
        "inputs": {os.path.abspath(p): sha256(p) for p in inputs if p and os.path.isfile(p)},
        "artifacts": {os.path.relpath(p, out): sha256(p) for p in sorted(artifacts)},
        "timings_s": {k: round(v, 3) for k, v in timings.items()},
    })
    return path


def _bundle_paths(args) -> Dict[str, str]:
    bundle = getattr(args, "bundle", None)
    if bundle:
        return {"schema": os.path.join(bundle, "schema.json"), "data": os.path.join(bundle, "telemetry.csv"),
                "profiles": os.path.join(bundle, "profiles.csv")}
    missing = [f"--{k}" for k in ("schema", "data", "profiles") if not getattr(args, k)]
    if missing:
        raise ConfigError(f"missing {', '.join(missing)} (or --bundle)")
    return {"schema": args.schema, "data": args.data, "profiles": args.profiles}


def cmd_ingest(args) -> int:
    t0 = time.perf_counter()
    os.makedirs(args.out, exist_ok=True)
    paths = _bundle_paths(args)
    report_path = os.path.join(args.out, "validation_report.json")
    try:
        dataset = clean_dataset(load_dataset(paths["schema"], paths["data"], paths["profiles"]))
    except TelemetryError as exc:
        write_json(report_path, {"errors": 1, "message": str(exc), "row": exc.row, "column": exc.column})
        print(f"1 error: {exc}", file=sys.stderr)
        return EXIT_DATA
    written = save_dataset(dataset, args.out)
    counts = [{"device": k[0], "task": k[1], "action": k[2], "user_id": k[3], "recordings": n}
              for k, n in dataset.counts().items()]
    write_json(report_path, {"errors": 0, "recordings": len(dataset.recordings),
                             "users": len(dataset.profiles), "counts": counts})
    write_manifest(args.out, {"command": "ingest"}, list(paths.values()),
                   list(written.values()) + [report_path], {}, {"ingest": time.perf_counter() - t0})
    print(f"0 errors; {len(dataset.recordings)} recordings, {len(dataset.profiles)} users -> {args.out}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    t0 = time.perf_counter()
    paths = _bundle_paths(args)
    dataset = clean_dataset(load_dataset(paths["schema"], paths["data"], paths["profiles"]))
    table = build_matrix(dataset, args.lag, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    out = os.path.join(args.out, "features.csv")
    table.to_csv(out)
    write_manifest(args.out, {"command": "featurize", "lag": args.lag}, list(paths.values()), [out], {},
                   {"featurize": time.perf_counter() - t0})
    print(f"{len(table)} rows x {len(table.feature_ids)} features -> {out}")
    return EXIT_OK


def _reports_doc(config: ExperimentConfig, reports: List[EvaluationReport]) -> Dict:
    return {"device": config.device.value, "level": config.level.value,
            "ablation": config.ablation is not None, "reports": [r.to_dict() for r in reports]}


def _emit(out: str, doc: Dict, reports: List[EvaluationReport], config: ExperimentConfig) -> List[str]:
    report_path = os.path.join(out, "report.json")
    write_json(report_path, doc)
    tables = write_tables(build_tables(reports, config.device, config.level.value), os.path.join(out, "tables"))
    return [report_path] + tables


def cmd_run(args) -> int:
    t0 = time.perf_counter()
    config = load_config(args.config)
    for flag, attr in (("seed", "base_seed"), ("repetitions", "repetitions"), ("fdr", "fdr_level"),
                       ("lag", "lag")):
        v = getattr(args, flag)
        if v is not None:
            setattr(config, attr, v)
    if args.ablate and config.ablation is None:
        # an empty list means one subset per available family group
        config = ExperimentConfig(**dict(config.__dict__, ablation=[], models=None))
    config = ExperimentConfig(**config.__dict__)  # re-validate overrides
    table, dataset = load_table(config, args.jobs)
    t1 = time.perf_counter()
    reports = run(config, table, args.jobs)
    t2 = time.perf_counter()
    os.makedirs(args.out, exist_ok=True)
    artifacts = _emit(args.out, _reports_doc(config, reports), reports, config)
    seeds = {"base_seed": config.base_seed,
             "repetition_seeds": [config.base_seed + r for r in range(config.repetitions)]}
    cfg = config.to_dict()
    if dataset is not None:
        cfg["trials_per_class"] = _trials_per_class(dataset)
    write_manifest(args.out, cfg, [args.config, config.schema, config.data, config.profiles, config.features],
                   artifacts, seeds, {"load": t1 - t0, "experiments": t2 - t1})
    print(f"{len(reports)} reports -> {args.out}")
    return EXIT_OK


def _trials_per_class(dataset) -> Dict[str, Dict[str, int]]:
    out: Dict[str, Dict[str, int]] = {}
    trials = {(r.user_id, r.trial_id) for r in dataset.recordings}
    for uid, _ in trials:
        p = dataset.profiles[uid]
        for name, value in (("age_class", p.age_class), ("gender", p.gender)):
            if value is None:
                continue
            d = out.setdefault(name, {})
            d[value.value] = d.get(value.value, 0) + 1
    return {k: dict(sorted(v.items())) for k, v in sorted(out.items())}


def cmd_synth(args) -> int:
    from .synthgen import generate, spec_from_dict, write_bundle

    t0 = time.perf_counter()
    doc = {}
    if args.spec:
        with open(args.spec, encoding="utf-8") as f:
            doc = json.load(f)
    if args.seed is not None:
        doc.setdefault("population", {})["seed"] = args.seed
    if args.device:
        doc.setdefault("scenario", {})["device"] = args.device
    spec, scenario = spec_from_dict(doc)
    dataset, manifest = generate(spec, scenario)
    paths = write_bundle(dataset, manifest, args.out)
    # the ground-truth manifest doubles as the run manifest for this directory
    with open(paths["manifest"], encoding="utf-8") as f:
        man = json.load(f)
    man["code_version"] = __version__
    man["artifacts"] = {os.path.basename(p): sha256(p) for k, p in sorted(paths.items()) if k != "manifest"}
    man["timings_s"] = {"synth": round(time.perf_counter() - t0, 3)}
    write_json(paths["manifest"], man)
    print(f"{len(dataset.recordings)} recordings for {spec.n_users} users -> {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    with open(os.path.join(args.run, "report.json"), encoding="utf-8") as f:
        doc = json.load(f)
    reports = [EvaluationReport.from_dict(d) for d in doc["reports"]]
    from .telemetry import Device

    paths = write_tables(build_tables(reports, Device(doc["device"]), doc["level"]),
                         os.path.join(args.run, "tables"))
    for p in paths:
        if p.endswith(".md"):
            with open(p, encoding="utf-8") as f:
                print(f.read())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xrprofile", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        if data:
            sp.add_argument("--schema")
            sp.add_argument("--data")
            sp.add_argument("--profiles")
            sp.add_argument("--bundle", help="directory holding schema.json, telemetry.csv, profiles.csv")
        sp.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("ingest", help="validate and normalize raw telemetry")
    common(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("featurize", help="de-bias and aggregate recordings into a feature table")
    common(sp)
    sp.add_argument("--lag", type=int, default=5)
    sp.set_defaults(func=cmd_featurize)

    sp = sub.add_parser("run", help="run the experiments of a configuration")
    common(sp, data=False)
    sp.add_argument("--config", required=True)
    sp.add_argument("--lag", type=int)
    sp.add_argument("--fdr", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--repetitions", type=int)
    sp.add_argument("--ablate", action="store_true", help="run the sensor ablation study")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--spec", help="JSON with 'population' and 'scenario' sections")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--device", choices=["AR", "VR"])
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("report", help="re-render tables from a run directory")
    sp.add_argument("--run", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    level = os.environ.get("PROFILER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TelemetryError, FeatureError, SplitError, ModelError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AssertionError as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
