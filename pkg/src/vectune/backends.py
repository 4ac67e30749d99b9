"""Evaluation backends.

``SimulatedBackend`` is a deterministic stand-in for a vector database: three
index families with closed-form speed/recall/memory surfaces that reproduce the
qualitative behaviour a tuner has to cope with (a speed/recall conflict, an
interaction between the two segment knobs, and families whose fronts cross).

``CommandBackend`` drives a user-supplied benchmark script over a one-line JSON
protocol on stdin/stdout.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import os
import signal
import subprocess
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import space as sp
from .pareto import ObjectiveVector, as_points, nondominated_mask

log = logging.getLogger(__name__)

OK = "ok"
TIMEOUT = "timeout"
CRASH = "crash"

MAX_GRID_EVALUATIONS = 10**7


@dataclass(frozen=True)
class EvaluationResult:
    status: str
    speed: float = float("nan")
    recall: float = float("nan")
    memory: float | None = None
    duration: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == OK

    def objectives(self) -> ObjectiveVector:
        return ObjectiveVector(self.speed, self.recall, self.memory)


# Family roles -> parameter names in the shipped demo space.
DEMO_BINDINGS = {
    "HNSW": ("A", {"M": "M", "ef": "ef"}),
    "IVF": ("B", {"nlist": "nlist", "nprobe": "nprobe"}),
    "IVF_PQ": ("C", {"m": "m", "nbits": "nbits", "nprobe": "pq_nprobe"}),
}
DEMO_SHARED = {"seg": "segment_maxSize", "seal": "segment_sealProportion"}
FAMILY_ROLES = {"A": ("M", "ef"), "B": ("nlist", "nprobe"), "C": ("m", "nbits", "nprobe")}


@dataclass(frozen=True)
class SimSpec:
    """Simulator settings.

    ``speed_scale`` / ``recall_scale`` multiply a family's speed / recall and
    exist to build variants (e.g. a family whose whole front is dominated).
    """

    noise_sigma: float = 0.0
    seed: int = 0
    bindings: Mapping[str, tuple] = field(default_factory=lambda: dict(DEMO_BINDINGS))
    shared: Mapping[str, str] = field(default_factory=lambda: dict(DEMO_SHARED))
    speed_scale: Mapping[str, float] = field(default_factory=dict)
    recall_scale: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimSpec":
        kw = dict(d)
        if "bindings" in kw:
            kw["bindings"] = {k: (v[0], dict(v[1])) for k, v in kw["bindings"].items()}
        return cls(**kw)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def system_factor(u_seg, u_seal):
    """Between 0.5 and 1; crosses 0.75 where ``u_seal = 0.95 - 0.8 * u_seg``."""
    return 0.5 + 0.5 * _sigmoid(8.0 * (u_seal - (0.95 - 0.8 * u_seg)))


def family_objectives(family: str, u: Mapping[str, np.ndarray], u_seg, u_seal):
    """Closed-form (speed, recall, memory) for one family; arrays broadcast."""
    sys = system_factor(u_seg, u_seal)
    if family == "A":
        M, ef = u["M"], u["ef"]
        recall = 1.0 - 0.95 * np.exp(-(3.0 * ef + 1.2 * M))
        speed = 1200.0 * (1.0 - 0.55 * ef) * (1.0 - 0.25 * M) * sys
        memory = 2.0 + 6.0 * u_seg + 1.5 * M
    elif family == "B":
        nlist, nprobe = u["nlist"], u["nprobe"]
        recall = np.minimum(1.0, (0.05 + 0.95 * nprobe) ** 0.4 * (0.8 + 0.2 * nlist))
        speed = 1500.0 * (1.0 - 0.7 * nprobe) * (0.6 + 0.4 * nlist) * sys
        memory = 2.0 + 6.0 * u_seg + 0.8 * nlist
    elif family == "C":
        m, nbits, nprobe = u["m"], u["nbits"], u["nprobe"]
        recall = (0.5 + 0.5 * nbits) * (0.05 + 0.95 * nprobe) ** 0.5 * (0.7 + 0.3 * m)
        speed = 2000.0 * (1.0 - 0.6 * nprobe) * (1.0 - 0.3 * nbits) * (1.0 - 0.2 * m) * sys
        memory = 2.0 + 6.0 * u_seg + 0.5 * m
    else:
        raise ValueError(f"unknown simulator family {family!r}")
    return speed, recall, memory


def _unit(p: sp.ParameterDef, value) -> float:
    return (float(value) - p.lo) / (p.hi - p.lo)


class SimulatedBackend:
    def __init__(self, space: sp.ConfigSpace, spec: SimSpec | None = None):
        self.space = space
        self.spec = spec or SimSpec()
        for t, (family, roles) in self.spec.bindings.items():
            if family not in FAMILY_ROLES or set(roles) != set(FAMILY_ROLES[family]):
                raise ValueError(f"binding for {t!r} must map roles {FAMILY_ROLES.get(family)}")
            for pname in roles.values():
                space.param(pname)
        for pname in self.spec.shared.values():
            space.param(pname)

    def _check(self, config: sp.Configuration) -> None:
        if config.index_type not in self.spec.bindings:
            raise ValueError(f"index type {config.index_type!r} is not simulated")
        problems = sp.validate(self.space, config)
        if problems:
            raise ValueError("configuration does not belong to the simulated space: " + "; ".join(problems))

    def true_objectives(self, config: sp.Configuration) -> ObjectiveVector:
        """Noise-free objectives."""
        self._check(config)
        family, roles = self.spec.bindings[config.index_type]
        u = {role: _unit(self.space.param(p), config.values[p]) for role, p in roles.items()}
        u_seg = _unit(self.space.param(self.spec.shared["seg"]), config.values[self.spec.shared["seg"]])
        u_seal = _unit(self.space.param(self.spec.shared["seal"]), config.values[self.spec.shared["seal"]])
        s, r, m = family_objectives(family, u, u_seg, u_seal)
        s *= self.spec.speed_scale.get(family, 1.0)
        r *= self.spec.recall_scale.get(family, 1.0)
        return ObjectiveVector(float(s), float(r), float(m))

    def evaluate(self, config: sp.Configuration, timeout: float | None = None) -> EvaluationResult:
        start = time.perf_counter()
        s, r, m = self.true_objectives(config)
        if self.spec.noise_sigma > 0:
            digest = hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode()).digest()
            rng = np.random.default_rng([int.from_bytes(digest[:8], "little"), self.spec.seed])
            e_s, e_r = rng.normal(0.0, self.spec.noise_sigma, size=2)
            s = max(s * (1.0 + e_s), 0.0)
            r = min(max(r * (1.0 + e_r), 0.0), 1.0)
        return EvaluationResult(OK, s, r, m, time.perf_counter() - start)

    # -- oracle ---------------------------------------------------------------------

    def _grid_axis(self, pname: str, grid_per_dim: int) -> np.ndarray:
        """Grid over a parameter's unit interval, snapped to what a configuration can hold."""
        p = self.space.param(pname)
        u = np.linspace(0.0, 1.0, grid_per_dim)
        if p.kind == sp.INTEGER:
            u = (np.round(p.lo + u * (p.hi - p.lo)) - p.lo) / (p.hi - p.lo)
        return u

    def grid_objectives(self, index_type: str, grid_per_dim: int) -> np.ndarray:
        """Objectives (speed, recall, memory) over the full grid of one type's active knobs."""
        family, roles = self.spec.bindings[index_type]
        names = list(roles) + ["seg", "seal"]
        pnames = list(roles.values()) + [self.spec.shared["seg"], self.spec.shared["seal"]]
        axes = [self._grid_axis(p, grid_per_dim) for p in pnames]
        mesh = np.meshgrid(*axes, indexing="ij")
        u = {n: g.ravel() for n, g in zip(names, mesh)}
        s, r, m = family_objectives(family, u, u["seg"], u["seal"])
        s = s * self.spec.speed_scale.get(family, 1.0)
        r = r * self.spec.recall_scale.get(family, 1.0)
        return np.column_stack([s, r, m])

    def true_pareto_grid(self, grid_per_dim: int, index_types: Sequence[str] | None = None) -> list[ObjectiveVector]:
        if self.spec.noise_sigma != 0:
            raise ValueError("the grid oracle needs a noise-free simulator")
        types = list(index_types or self.spec.bindings)
        total = sum(grid_per_dim ** (len(self.spec.bindings[t][1]) + 2) for t in types)
        if total > MAX_GRID_EVALUATIONS:
            raise ValueError(f"grid needs {total} evaluations (> {MAX_GRID_EVALUATIONS}); use a smaller grid_per_dim")
        fronts = []
        for t in types:
            G = self.grid_objectives(t, grid_per_dim)
            fronts.append(G[nondominated_mask(G)])
        allpts = np.vstack(fronts)
        front = allpts[nondominated_mask(allpts)]
        front = front[np.argsort(-front[:, 0], kind="stable")]
        return [ObjectiveVector(float(s), float(r), float(m)) for s, r, m in front]


def true_pareto_grid(spec: SimSpec, grid_per_dim: int, space: sp.ConfigSpace | None = None) -> list[ObjectiveVector]:
    return SimulatedBackend(space or sp.demo_space(), spec).true_pareto_grid(grid_per_dim)


def simulated_evaluate(config: sp.Configuration, spec: SimSpec | None = None,
                       space: sp.ConfigSpace | None = None) -> EvaluationResult:
    return SimulatedBackend(space or sp.demo_space(), spec).evaluate(config)


# -- external command ----------------------------------------------------------------


def _parse_result(line: str) -> EvaluationResult | None:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError:
        return None
    if not isinstance(doc, dict):
        return None
    status = doc.get("status", OK)
    if status not in (OK, TIMEOUT, CRASH):
        return None
    if status != OK:
        return EvaluationResult(status)
    try:
        speed = float(doc["speed"])
        recall = float(doc["recall"])
        memory = doc.get("memory")
        memory = None if memory is None else float(memory)
    except (KeyError, TypeError, ValueError):
        return None
    if not (math.isfinite(speed) and math.isfinite(recall) and 0.0 <= recall <= 1.0 and speed >= 0.0):
        return None
    if memory is not None and not (math.isfinite(memory) and memory >= 0):
        return None
    return EvaluationResult(OK, speed, recall, memory)


class CommandBackend:
    """Runs ``command`` once per evaluation.

    The child reads one JSON line ``{"index_type": ..., "values": {...}}`` on
    stdin and must print one JSON line ``{"speed", "recall", "memory", "status"}``
    on stdout and exit 0. Anything else is a crash; overrunning the timeout
    kills the child and reports a timeout.
    """

    def __init__(self, command: str | Sequence[str], default_timeout: float = 900.0):
        self.command = [command] if isinstance(command, str) else list(command)
        self.default_timeout = default_timeout

    def evaluate(self, config: sp.Configuration, timeout: float | None = None) -> EvaluationResult:
        timeout = self.default_timeout if timeout is None else timeout
        payload = json.dumps(config.to_dict(), sort_keys=True) + "\n"
        start = time.perf_counter()
        try:
            proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                    stderr=subprocess.PIPE, text=True, start_new_session=True)
        except OSError as exc:
            log.warning("failed to start %s: %s", self.command[0], exc)
            return EvaluationResult(CRASH, duration=time.perf_counter() - start)
        try:
            out, err = proc.communicate(payload, timeout=timeout)
        except subprocess.TimeoutExpired:
            # Kill the whole group: grandchildren may hold the pipes open.
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            proc.communicate()
            return EvaluationResult(TIMEOUT, duration=time.perf_counter() - start)
        duration = time.perf_counter() - start
        if proc.returncode != 0:
            log.warning("evaluation command exited with %d: %s", proc.returncode, err.strip()[-500:])
            return EvaluationResult(CRASH, duration=duration)
        lines = [ln for ln in out.splitlines() if ln.strip()]
        result = _parse_result(lines[0]) if len(lines) == 1 else None
        if result is None:
            log.warning("malformed evaluation output: %r", out[-500:])
            return EvaluationResult(CRASH, duration=duration)
        return EvaluationResult(result.status, result.speed, result.recall, result.memory, duration)


def external_command_evaluate(config: sp.Configuration, command, timeout: float = 900.0) -> EvaluationResult:
    return CommandBackend(command).evaluate(config, timeout)
