"""Command-line driver.

    vectune tune <manifest.json>
    vectune report <history.jsonl> [--sacrifice-list 0.85,0.9]
    vectune export-plots <history.jsonl> <outdir>

Exit codes: 0 success, 1 usage or invalid input, 2 failure during the run.
Log verbosity comes from ``VECTUNE_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from . import space as sp
from .acquisition import AcquisitionContext, ConstraintSpec
from .backends import CommandBackend, SimSpec, SimulatedBackend
from .history import (DEFAULT_SACRIFICE, HistoryError, HistoryWriter, hv_over_iterations,
                      read_history, sacrifice_table, score_rows)
from .tuner import ObjectiveSpec, PollingTuner, TunerConfig

log = logging.getLogger("vectune")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
LOG_ENV = "VECTUNE_LOG_LEVEL"

MANIFEST_KEYS = {"space", "backend", "objective", "tuner", "output_dir"}
TUNER_KEYS = {"max_iterations", "eval_timeout", "window", "acquisition", "constraint", "bootstrap_history",
              "rng_seed", "gp_restarts", "gp_maxiter", "wall_clock_budget", "constraint_anchor"}


class ManifestError(ValueError):
    pass


@dataclass
class RunManifest:
    space: sp.ConfigSpace
    backend: Any
    tuner: TunerConfig
    output_dir: Path


def _path(base: Path, value, what: str, must_exist: bool = True) -> Path:
    if not isinstance(value, str) or not value:
        raise ManifestError(f"{what} must be a non-empty path string")
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise ManifestError(f"{what} does not exist: {p}")
    return p


def _only(d, allowed: set[str], what: str) -> dict:
    if not isinstance(d, Mapping):
        raise ManifestError(f"{what} must be an object")
    extra = set(d) - allowed
    if extra:
        raise ManifestError(f"{what}: unknown keys {sorted(extra)}")
    return dict(d)


def parse_manifest(path: str | Path) -> RunManifest:
    """Read and validate a JSON run manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    doc = _only(doc, MANIFEST_KEYS, "manifest")
    base = path.parent
    for key in ("space", "backend", "output_dir"):
        if key not in doc:
            raise ManifestError(f"manifest is missing {key!r}")

    try:
        if doc["space"] == "demo":
            space = sp.demo_space()
        else:
            space = sp.load_space(_path(base, doc["space"], "space"))

        b = _only(doc["backend"], {"type", "sim", "command"}, "backend")
        kind = b.get("type")
        if kind == "simulated":
            backend = SimulatedBackend(space, SimSpec.from_dict(b.get("sim", {})))
        elif kind == "command":
            cmd = b.get("command")
            argv = [cmd] if isinstance(cmd, str) else cmd
            if not argv or not all(isinstance(a, str) for a in argv):
                raise ManifestError("backend.command must be a path or a list of strings")
            exe = _path(base, argv[0], "backend.command")
            if not os.access(exe, os.X_OK):
                raise ManifestError(f"backend.command is not executable: {exe}")
            backend = CommandBackend([str(exe)] + list(argv[1:]))
        else:
            raise ManifestError("backend.type must be 'simulated' or 'command'")

        objective = ObjectiveSpec(**_only(doc.get("objective", {}), {"speed_objective", "eta"}, "objective"))
        t = _only(doc.get("tuner", {}), TUNER_KEYS, "tuner")
        if "acquisition" in t:
            allowed = {f.name for f in fields(AcquisitionContext)}
            t["acquisition"] = AcquisitionContext(**_only(t["acquisition"], allowed, "tuner.acquisition"))
        if t.get("constraint") is not None:
            t["constraint"] = ConstraintSpec(**_only(t["constraint"], {"rlim"}, "tuner.constraint"))
        if t.get("bootstrap_history") is not None:
            t["bootstrap_history"] = str(_path(base, t["bootstrap_history"], "tuner.bootstrap_history"))
        cfg = TunerConfig(objective=objective, **t)
        PollingTuner(space, backend, cfg)  # budget vs. space checks
    except ManifestError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ManifestError(f"invalid manifest: {exc}") from exc

    out = _path(base, doc["output_dir"], "output_dir", must_exist=False)
    return RunManifest(space, backend, cfg, out)


# -- subcommands -----------------------------------------------------------------------


def cmd_tune(args) -> int:
    try:
        m = parse_manifest(args.manifest)
        m.output_dir.mkdir(parents=True, exist_ok=True)
    except (ManifestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    history_path = m.output_dir / "history.jsonl"
    try:
        with HistoryWriter(history_path, m.space) as writer:
            tuner = PollingTuner(m.space, m.backend, m.tuner, sink=writer)
            tuner.run()
        summary = tuner.report()
    except Exception as exc:  # the run started; anything now is a runtime failure
        log.debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    summary["history"] = str(history_path)
    (m.output_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{summary['evaluations']} evaluations; history in {history_path}; summary in {m.output_dir / 'summary.json'}")
    return EXIT_OK


def _thresholds(text: str | None) -> tuple[float, ...]:
    if text is None:
        return DEFAULT_SACRIFICE
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ManifestError(f"--sacrifice-list must be comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ManifestError("--sacrifice-list is empty")
    return vals


def cmd_report(args) -> int:
    try:
        thresholds = _thresholds(args.sacrifice_list)
        data = read_history(args.history)
    except (ManifestError, HistoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not data.records:
        print(f"error: {args.history} holds no observations", file=sys.stderr)
        return EXIT_USAGE
    doc = {
        "sacrifice": sacrifice_table(data.records, thresholds),
        "hypervolume": hv_over_iterations(data.records),
        "scores": score_rows(data.scores),
        "abandoned": [{"index_type": t, "iteration": i} for t, i in data.abandoned],
    }
    json.dump(doc, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        w.writerows(rows)


def cmd_export_plots(args) -> int:
    try:
        data = read_history(args.history)
    except HistoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "hypervolume.csv", ["iteration", "hypervolume"], hv_over_iterations(data.records))
        _write_csv(out / "scores.csv", ["iteration", "index_type", "score"], score_rows(data.scores))
        _write_csv(out / "sacrifice.csv", ["recall_threshold", "best_speed"], sacrifice_table(data.records))
        obs = [{"iteration": r.iteration, "index_type": r.config.index_type, "status": r.status,
                "source": r.source, "imputed": r.imputed, "speed": r.transformed[0], "recall": r.transformed[1],
                "memory": "" if r.raw is None or r.raw[2] is None else r.raw[2]} for r in data.records]
        _write_csv(out / "observations.csv",
                   ["iteration", "index_type", "status", "source", "imputed", "speed", "recall", "memory"], obs)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote plot data to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vectune", description="Auto-tune vector database index and system knobs.")
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("tune", help="run the tuner from a JSON manifest")
    t.add_argument("manifest")
    t.set_defaults(func=cmd_tune)
    r = sub.add_parser("report", help="summarize a history file")
    r.add_argument("history")
    r.add_argument("--sacrifice-list", default=None,
                   help="comma-separated recall thresholds (default 0.85 to 0.975 by 0.025)")
    r.set_defaults(func=cmd_report)
    e = sub.add_parser("export-plots", help="write plot-ready CSV tables")
    e.add_argument("history")
    e.add_argument("outdir")
    e.set_defaults(func=cmd_export_plots)
    return p


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
