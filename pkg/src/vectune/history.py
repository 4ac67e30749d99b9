"""Append-only history files: one JSON document per line.

Line 1 is a header naming the format, its version and the space signature.
Every later line is an ``observation``, a ``scores`` round or an
``abandon`` event. Wall-clock measurements live under a ``volatile`` key so
the rest of each line (the deterministic section) can be compared byte for
byte across runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

from . import space as sp
from .backends import CRASH, OK, TIMEOUT
from .pareto import ObjectiveVector, hypervolume_2d, nondominated_front
from .tuner import BOOTSTRAP, LIVE, ObservationRecord

FORMAT = "vectune-history"
VERSION = 1

OBSERVATION = "observation"
SCORES = "scores"
ABANDON = "abandon"
VOLATILE = "volatile"


class HistoryError(ValueError):
    pass


def _dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _vec(v: ObjectiveVector | None):
    return None if v is None else [v[0], v[1], v[2] if len(v) > 2 else None]


def record_to_doc(rec: ObservationRecord) -> dict:
    return {
        "kind": OBSERVATION,
        "iteration": rec.iteration,
        "config": rec.config.to_dict(),
        "raw": _vec(rec.raw),
        "transformed": _vec(rec.transformed),
        "status": rec.status,
        "imputed": rec.imputed,
        "source": rec.source,
        VOLATILE: {"eval_duration": rec.eval_duration},
    }


def _objective(v, what: str) -> ObjectiveVector | None:
    if v is None:
        return None
    if not isinstance(v, list) or len(v) != 3:
        raise ValueError(f"{what} must be a [speed, recall, memory] list")
    speed, recall, memory = v
    for x in (speed, recall) + ((memory,) if memory is not None else ()):
        if not isinstance(x, (int, float)) or isinstance(x, bool) or not math.isfinite(x):
            raise ValueError(f"{what} holds a non-numeric value")
    return ObjectiveVector(float(speed), float(recall), None if memory is None else float(memory))


def doc_to_record(doc: dict) -> ObservationRecord:
    status = doc["status"]
    if status not in (OK, TIMEOUT, CRASH):
        raise ValueError(f"unknown status {status!r}")
    source = doc.get("source", LIVE)
    if source not in (LIVE, BOOTSTRAP):
        raise ValueError(f"unknown source {source!r}")
    transformed = _objective(doc["transformed"], "transformed")
    if transformed is None:
        raise ValueError("transformed objectives missing")
    if not isinstance(doc["iteration"], int):
        raise ValueError("iteration must be an integer")
    return ObservationRecord(
        iteration=doc["iteration"],
        config=sp.Configuration.from_dict(doc["config"]),
        raw=_objective(doc["raw"], "raw"),
        transformed=transformed,
        status=status,
        eval_duration=float(doc.get(VOLATILE, {}).get("eval_duration", 0.0)),
        imputed=bool(doc["imputed"]),
        source=source,
    )


@dataclass
class HistoryData:
    header: dict
    records: list[ObservationRecord] = field(default_factory=list)
    scores: list[dict] = field(default_factory=list)      # {"iteration": i, "scores": {type: score}}
    abandoned: list[tuple[str, int]] = field(default_factory=list)


def read_history(path: str | Path, space: sp.ConfigSpace | None = None) -> HistoryData:
    """Parse a whole history file; any bad line raises :class:`HistoryError` naming it."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise HistoryError(f"{path}: cannot read history ({exc.strerror or exc})") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    elif lines:
        # Every line we write ends in a newline; a missing one means a torn write.
        raise HistoryError(f"{path}: line {len(lines)}: truncated record (no trailing newline)")
    if not lines:
        raise HistoryError(f"{path}: empty history file")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise HistoryError(f"{path}: line 1: unreadable header ({exc.msg})") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise HistoryError(f"{path}: line 1: not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise HistoryError(f"{path}: line 1: unsupported version {header.get('version')!r} (expected {VERSION})")
    if space is not None and header.get("space") != space.signature():
        raise HistoryError(f"{path}: space mismatch between history and the configured space")

    data = HistoryData(header=header)
    last_iteration = 0
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            doc = json.loads(line)
            kind = doc["kind"]
            if kind == OBSERVATION:
                rec = doc_to_record(doc)
                if rec.iteration <= last_iteration:
                    raise ValueError(f"iteration {rec.iteration} out of order")
                last_iteration = rec.iteration
                if space is not None:
                    problems = sp.validate(space, rec.config)
                    if problems:
                        raise ValueError("invalid configuration: " + "; ".join(problems))
                data.records.append(rec)
            elif kind == SCORES:
                data.scores.append({"iteration": int(doc["iteration"]),
                                    "scores": {str(k): float(v) for k, v in doc["scores"].items()}})
            elif kind == ABANDON:
                data.abandoned.append((str(doc["index_type"]), int(doc["iteration"])))
            else:
                raise ValueError(f"unknown record kind {kind!r}")
        except json.JSONDecodeError as exc:
            raise HistoryError(f"{path}: line {lineno}: corrupt record ({exc.msg})") from exc
        except (KeyError, TypeError, AttributeError) as exc:
            raise HistoryError(f"{path}: line {lineno}: malformed record ({exc!r})") from exc
        except (ValueError, sp.SpaceError) as exc:
            raise HistoryError(f"{path}: line {lineno}: {exc}") from exc
    return data


def load_history(path: str | Path, space: sp.ConfigSpace | None = None) -> list[ObservationRecord]:
    return read_history(path, space).records


def deterministic_section(path: str | Path) -> str:
    """The file with every ``volatile`` field dropped, one canonical line per record."""
    out = []
    for line in Path(path).read_text().splitlines():
        doc = json.loads(line)
        doc.pop(VOLATILE, None)
        out.append(_dumps(doc))
    return "\n".join(out) + "\n"


class HistoryWriter:
    """Appends records as the tuner produces them; usable as the tuner's sink."""

    def __init__(self, path: str | Path, space: sp.ConfigSpace):
        self.path = Path(path)
        self._fh: IO[str] = open(self.path, "w")
        self._write({"format": FORMAT, "version": VERSION, "space": space.signature()})

    def _write(self, doc: dict) -> None:
        self._fh.write(_dumps(doc) + "\n")
        self._fh.flush()

    def record(self, rec: ObservationRecord) -> None:
        self._write(record_to_doc(rec))

    def scores(self, iteration: int, scores: dict[str, float]) -> None:
        self._write({"kind": SCORES, "iteration": iteration, "scores": scores})

    def abandon(self, iteration: int, index_type: str) -> None:
        self._write({"kind": ABANDON, "iteration": iteration, "index_type": index_type})

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def save_history(path: str | Path, space: sp.ConfigSpace, records, scores=(), abandoned=()) -> None:
    """Write a complete file in iteration order (scores before the evaluation they precede)."""
    events = [(r.iteration, 1, "r", r) for r in records]
    events += [(s["iteration"], 0, "s", s) for s in scores]
    events += [(i, 0, "a", t) for t, i in abandoned]
    events.sort(key=lambda e: (e[0], e[1], e[2] == "a"))
    with HistoryWriter(path, space) as w:
        for it, _, kind, payload in events:
            if kind == "r":
                w.record(payload)
            elif kind == "s":
                w.scores(it, payload["scores"])
            else:
                w.abandon(it, payload)


# -- reports ---------------------------------------------------------------------------

DEFAULT_SACRIFICE = (0.85, 0.875, 0.9, 0.925, 0.95, 0.975)


def sacrifice_table(records, thresholds=DEFAULT_SACRIFICE) -> list[dict]:
    """Best observed speed among successful records with recall >= each threshold."""
    ok = [r for r in records if r.ok]
    rows = []
    for th in thresholds:
        speeds = [r.transformed[0] for r in ok if r.transformed[1] >= th]
        rows.append({"recall_threshold": th, "best_speed": max(speeds) if speeds else "none"})
    return rows


def hv_over_iterations(records, ref=(0.0, 0.0)) -> list[dict]:
    """Hypervolume of the front of all records up to each iteration."""
    rows, front = [], []
    for r in records:
        front = nondominated_front(front + [(r.transformed[0], r.transformed[1])])
        rows.append({"iteration": r.iteration, "hypervolume": hypervolume_2d(front, ref)})
    return rows


def score_rows(scores) -> list[dict]:
    return [{"iteration": s["iteration"], "index_type": t, "score": v}
            for s in scores for t, v in s["scores"].items()]
