"""Candidate evaluation behind a pluggable contract.

Two implementations: a deterministic synthetic oracle (structure-driven
closed-form time/accuracy, for verification and desk-scale runs) and a bridge
that drives an external trainer worker over newline-delimited JSON on its
stdin/stdout. The engine issues at most one bridge evaluation at a time.
"""

from __future__ import annotations

import hashlib
import json
import math
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Any, Protocol

from .cellspace import CellSpec, canonical_form, dag_views
from .errors import EvaluationTimeout, ProtocolError, WorkerError
from .macroarch import MacroConfig, count_params, effective_cell_count, estimate_flops


@dataclass(frozen=True)
class EvaluationRequest:
    cell: CellSpec
    macro: MacroConfig
    training: dict[str, Any] = field(default_factory=dict)
    dataset: str = ""

    def __post_init__(self):
        epochs = self.training.get("epochs", 1)
        if epochs < 1:
            raise ValueError("training epochs must be >= 1")


@dataclass(frozen=True)
class EvaluationResult:
    accuracy: float
    training_time: float
    params: int
    flops: int | None = None

    def __post_init__(self):
        if not 0 <= self.accuracy <= 1:
            raise ValueError(f"accuracy out of range: {self.accuracy}")
        if self.training_time <= 0:
            raise ValueError(f"training time must be positive: {self.training_time}")


class Evaluator(Protocol):
    def evaluate(self, request: EvaluationRequest) -> EvaluationResult: ...

    def close(self) -> None: ...


# ---------------------------------------------------------------------------
# Synthetic oracle
# ---------------------------------------------------------------------------


def _stable_unit(seed: int, *parts: str) -> float:
    """Deterministic hash-derived value in [0, 1)."""
    h = hashlib.sha256(("\x1f".join(map(str, (seed,) + parts))).encode()).digest()
    return int.from_bytes(h[:8], "big") / 2 ** 64


@dataclass(frozen=True)
class OracleParams:
    """Closed-form evaluation constants.

    Per-operator cost (> 0) and gain (>= 0) default to stable hash-derived
    spreads so different operators behave differently without configuration.
    """

    t_base: float = 10.0
    a_base: float = 0.3
    noise: float = 0.002
    time_scale: float = 0.05
    concat_penalty: float = 0.5
    cost: dict[str, float] = field(default_factory=dict)
    gain: dict[str, float] = field(default_factory=dict)

    def op_cost(self, token: str) -> float:
        if token in self.cost:
            return self.cost[token]
        return 0.5 + 2.5 * _stable_unit(0, "cost", token)

    def op_gain(self, token: str) -> float:
        # default spread keeps multi-block sums below the saturation plateau
        if token in self.gain:
            return self.gain[token]
        return 0.02 + 0.18 * _stable_unit(0, "gain", token)


class SyntheticEvaluator:
    """Pure function of (seed, canonical cell form, macro, params): reruns and
    isomorphic cells receive identical results."""

    def __init__(self, params: OracleParams | None = None, seed: int = 0):
        self.params = params or OracleParams()
        self.seed = seed

    def evaluate(self, request: EvaluationRequest) -> EvaluationResult:
        p = self.params
        cell = request.cell
        macro = request.macro
        pcount = count_params(cell, macro)
        flops = estimate_flops(cell, macro)
        if cell.is_empty:
            return EvaluationResult(
                accuracy=p.a_base, training_time=p.t_base, params=pcount,
                flops=flops)

        views = dag_views(cell)
        tokens = sorted(cell.operator_tokens())  # canonical order: isomorphs sum identically
        cost = sum(p.op_cost(t) for t in tokens)
        gain = sum(p.op_gain(t) for t in tokens)
        cells = effective_cell_count(cell, macro)
        time_s = (p.t_base + p.time_scale * cells * cost
                  + p.concat_penalty * max(0, len(views.unused) - 1))
        noise = (2.0 * _stable_unit(self.seed, "noise", canonical_form(cell)) - 1.0) * p.noise
        accuracy = p.a_base + (1 - p.a_base) * (
            1 - math.exp(-gain * (1 + 0.1 * views.depth))) + noise
        accuracy = min(1.0, max(0.0, accuracy))
        return EvaluationResult(accuracy=accuracy, training_time=time_s,
                                params=pcount, flops=flops)

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# External worker bridge
# ---------------------------------------------------------------------------


def format_float(x: float) -> str:
    """Decimal text with 9 significant digits, the wire convention."""
    return format(float(x), ".9g")


class BridgeEvaluator:
    """Drives a worker process over newline-delimited JSON frames.

    One in-flight request at a time; the worker owns the training device
    exclusively. A dead or misbehaving worker surfaces as EvaluationFailed
    (ProtocolError / WorkerError / EvaluationTimeout).
    """

    def __init__(self, cmd: list[str], timeout: float = 24 * 3600.0,
                 dataset: str = ""):
        self.cmd = list(cmd)
        self.timeout = timeout
        self.dataset = dataset
        self._lock = threading.Lock()
        self._next_id = 0
        self._proc: subprocess.Popen | None = None
        self.worker_name = ""

    def _ensure_started(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
            reply = self._roundtrip({"cmd": "hello", "protocol": 1})
            if not reply.get("ok"):
                raise ProtocolError(f"handshake refused: {reply}")
            self.worker_name = str(reply.get("worker", ""))
        return self._proc

    def _roundtrip(self, frame: dict[str, Any]) -> dict[str, Any]:
        proc = self._proc
        assert proc is not None and proc.stdin and proc.stdout
        self._next_id += 1
        frame = {"id": self._next_id, **frame}
        try:
            proc.stdin.write(json.dumps(frame) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise WorkerError(f"worker pipe closed: {e}") from e

        timer = threading.Timer(self.timeout, proc.kill)
        timer.start()
        try:
            raw = proc.stdout.readline()
        finally:
            timed_out = not timer.is_alive()
            timer.cancel()
        if not raw:
            if timed_out:
                raise EvaluationTimeout(f"no reply within {self.timeout}s")
            raise WorkerError("worker exited mid-request")
        try:
            reply = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"malformed frame: {raw!r}") from e
        if not isinstance(reply, dict):
            raise ProtocolError(f"frame is not an object: {raw!r}")
        if "error" in reply:
            err = reply["error"]
            raise WorkerError(f"{err.get('code', 'error')}: {err.get('message', '')}")
        if reply.get("id") != frame["id"]:
            raise ProtocolError(
                f"reply id {reply.get('id')} does not match request {frame['id']}")
        return reply

    def evaluate(self, request: EvaluationRequest) -> EvaluationResult:
        with self._lock:
            self._ensure_started()
            macro = request.macro
            reply = self._roundtrip({
                "cmd": "evaluate",
                "cell": request.cell.serialize(),
                "macro": {
                    "M": macro.motifs, "N": macro.normals_per_motif,
                    "F": macro.filters, "lookback": macro.max_lookback,
                    "residual": macro.residual_cells,
                    "input_shape": list(macro.input_shape),
                    "num_classes": macro.num_classes,
                },
                "training": request.training,
                "dataset": request.dataset or self.dataset,
            })
            try:
                return EvaluationResult(
                    accuracy=float(reply["accuracy"]),
                    training_time=float(reply["time_s"]),
                    params=int(reply["params"]),
                    flops=int(reply["flops"]) if "flops" in reply else None,
                )
            except (KeyError, TypeError, ValueError) as e:
                raise ProtocolError(f"bad evaluate reply: {reply}") from e

    def fit_accuracy(self, rows: list[tuple[str, float]]) -> None:
        """Hand training rows to the worker's exact accuracy model."""
        with self._lock:
            self._ensure_started()
            reply = self._roundtrip({
                "cmd": "fit_acc",
                "rows": [[cell, acc] for cell, acc in rows],
            })
            if not reply.get("ok"):
                raise WorkerError(f"fit_acc refused: {reply}")

    def predict_accuracy(self, cells: list[str]) -> list[float]:
        with self._lock:
            self._ensure_started()
            reply = self._roundtrip({"cmd": "predict_acc", "cells": cells})
            try:
                return [float(v) for v in reply["preds"]]
            except (KeyError, TypeError, ValueError) as e:
                raise ProtocolError(f"bad predict_acc reply: {reply}") from e

    def close(self) -> None:
        with self._lock:
            proc = self._proc
            if proc is None:
                return
            self._proc = None
            try:
                if proc.poll() is None and proc.stdin:
                    self._next_id += 1
                    proc.stdin.write(json.dumps(
                        {"id": self._next_id, "cmd": "shutdown"}) + "\n")
                    proc.stdin.flush()
                    proc.wait(timeout=10)
            except (OSError, subprocess.TimeoutExpired):
                proc.kill()
            finally:
                if proc.poll() is None:
                    proc.kill()


def make_evaluator(spec: dict[str, Any], seed: int = 0,
                   dataset: str = "") -> Evaluator:
    """Build an evaluator from its config section."""
    kind = spec.get("type", "synthetic")
    if kind == "synthetic":
        oracle = spec.get("oracle", {})
        params = OracleParams(
            t_base=float(oracle.get("t_base", 10.0)),
            a_base=float(oracle.get("a_base", 0.3)),
            noise=float(oracle.get("noise", 0.002)),
            time_scale=float(oracle.get("time_scale", 0.05)),
            concat_penalty=float(oracle.get("concat_penalty", 0.5)),
            cost=dict(oracle.get("cost", {})),
            gain=dict(oracle.get("gain", {})),
        )
        return SyntheticEvaluator(params, seed=seed)
    if kind == "external":
        cmd = spec.get("cmd")
        if not cmd:
            raise ValueError("external evaluator needs a 'cmd' list")
        return BridgeEvaluator(cmd, timeout=float(spec.get("timeout", 24 * 3600.0)),
                               dataset=dataset)
    raise ValueError(f"unknown evaluator type: {kind!r}")
