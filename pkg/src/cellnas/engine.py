"""Search orchestration: bootstrap, per-step predictor fitting, expansion,
Pareto + exploration selection, evaluation, logging and resume.

A run lives in a directory:

    config.json        frozen configuration + its hash
    state.json         step progress, for resume
    evaluations.jsonl  append-only journal, one line per evaluation
    steps/b<k>.csv     per-step results (written when the step completes)
    predictors/        model dumps per step
    reindex.json       the dynamic reindex map

Two runs with the same config and seed produce byte-identical CSVs; an
interrupted run resumed from its directory re-derives the in-flight step's
plan deterministically and skips journaled evaluations.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .cellspace import (
    BlockSpec, CellSpec, EMPTY_CELL, canonical_form, expand_cell, parse_cell,
    parse_operator,
)
from .errors import CorruptState, DegenerateInput, EvaluationFailed
from .evaluator import EvaluationRequest, Evaluator, make_evaluator
from .macroarch import MacroConfig
from .pareto import ScoredCandidate, build_exploration_sets, exploration_front, pareto_front
from .surrogate import (
    PredictionRecord, SearchRanges, compute_dynamic_reindex, encode_cell,
    extract_time_features, fit_accuracy_default, fit_regressor, score_predictions,
)

MODES = ("popnas", "pnas")

STEP_CSV_HEADER = [
    "cell", "blocks", "pred_accuracy", "pred_time_s", "accuracy", "time_s",
    "params", "exploration",
]

_TIME_FLOOR = 1e-9


@dataclass(frozen=True)
class SearchConfig:
    """Everything a search run needs; hashable into a frozen config."""

    operators: tuple[str, ...]
    macro: MacroConfig = MacroConfig()
    max_blocks: int = 5
    beam: int = 128
    exploration_beam: int = 16
    max_lookback: int = 2
    mode: str = "popnas"
    seed: int = 0
    training: dict[str, Any] = field(default_factory=dict)
    evaluator: dict[str, Any] = field(default_factory=lambda: {"type": "synthetic"})
    dataset: str = ""
    exploration_min_hits: int | None = None  # None: 2 when both sets hit, else 1
    predictor_trials: int = 8
    predictor_iterations: int = 2500
    predictor_patience: int = 50
    predictor_folds: int = 5
    defer_isomorphism_to_front: bool = False
    failure_streak_limit: int = 5

    def __post_init__(self):
        if self.max_blocks < 1 or self.beam < 1 or self.exploration_beam < 0:
            raise ValueError("max_blocks/beam/exploration_beam out of range")
        if self.max_lookback < 1:
            raise ValueError("max_lookback must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.operators:
            raise ValueError("operator set is empty")
        for tok in self.operators:
            parse_operator(tok)

    @property
    def effective_macro(self) -> MacroConfig:
        """The macro actually built: residual outputs are disabled in pnas mode."""
        if self.mode == "pnas" and self.macro.residual_cells:
            return dataclasses.replace(self.macro, residual_cells=False)
        return self.macro

    def search_ranges(self) -> SearchRanges:
        return SearchRanges(
            iterations=self.predictor_iterations,
            early_stop_patience=self.predictor_patience,
            folds=self.predictor_folds,
        )


def config_to_dict(config: SearchConfig) -> dict[str, Any]:
    d = dataclasses.asdict(config)
    d["operators"] = list(config.operators)
    d["macro"]["input_shape"] = list(config.macro.input_shape)
    return d


def config_from_dict(d: dict[str, Any]) -> SearchConfig:
    macro = dict(d["macro"])
    macro["input_shape"] = tuple(macro["input_shape"])
    args = dict(d)
    args["operators"] = tuple(d["operators"])
    args["macro"] = MacroConfig(**macro)
    return SearchConfig(**args)


def config_hash(config: SearchConfig) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _derived_seed(seed: int, *parts) -> int:
    blob = ":".join(str(p) for p in (seed,) + parts)
    return int.from_bytes(hashlib.sha256(blob.encode()).digest()[:4], "big")


@dataclass
class CandidateRecord:
    cell: CellSpec
    step: int
    exploration: bool = False
    pred_accuracy: float | None = None
    pred_time: float | None = None
    accuracy: float | None = None
    time_s: float | None = None
    params: int | None = None

    def csv_row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else repr(float(v))

        return [
            self.cell.serialize(), str(len(self.cell)),
            fmt(self.pred_accuracy), fmt(self.pred_time),
            fmt(self.accuracy), fmt(self.time_s),
            "" if self.params is None else str(self.params),
            "1" if self.exploration else "0",
        ]


class SearchState:
    """In-memory view of a run directory."""

    def __init__(self, run_dir: Path, config: SearchConfig):
        self.run_dir = run_dir
        self.config = config
        self.records: dict[int, list[CandidateRecord]] = {}
        self.evaluated_forms: set[str] = set()
        self.journal: dict[tuple[int, str], dict[str, Any]] = {}
        self.last_completed_step = -1
        self.reindex = None

    @property
    def steps_dir(self) -> Path:
        return self.run_dir / "steps"

    @property
    def predictors_dir(self) -> Path:
        return self.run_dir / "predictors"

    def successful(self, upto_step: int) -> list[CandidateRecord]:
        out = []
        for b in sorted(self.records):
            if b < upto_step:
                out.extend(r for r in self.records[b] if r.accuracy is not None)
        return out

    def journal_path(self) -> Path:
        return self.run_dir / "evaluations.jsonl"

    def append_journal(self, entry: dict[str, Any]) -> None:
        with self.journal_path().open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")
        if not entry.get("failed"):
            self.journal[(entry["step"], entry["cell"])] = entry

    def load_journal(self) -> None:
        path = self.journal_path()
        if not path.exists():
            return
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            if not entry.get("failed"):
                self.journal[(entry["step"], entry["cell"])] = entry

    def write_state(self, status: str) -> None:
        (self.run_dir / "state.json").write_text(json.dumps({
            "status": status,
            "last_completed_step": self.last_completed_step,
            "config_hash": config_hash(self.config),
            "evaluations": sum(len(v) for v in self.records.values()),
        }, indent=1), encoding="utf-8")

    def write_step_csv(self, step: int) -> None:
        self.steps_dir.mkdir(exist_ok=True)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(STEP_CSV_HEADER)
        for rec in self.records.get(step, []):
            writer.writerow(rec.csv_row())
        (self.steps_dir / f"b{step}.csv").write_text(buf.getvalue(), encoding="utf-8")


class _Engine:
    def __init__(self, config: SearchConfig, run_dir: Path,
                 evaluator: Evaluator | None = None):
        self.config = config
        self.state = SearchState(run_dir, config)
        self._evaluator = evaluator
        self._failure_streak = 0

    # -- evaluation with journal reuse -------------------------------------

    def _evaluator_or_start(self) -> Evaluator:
        if self._evaluator is None:
            self._evaluator = make_evaluator(
                self.config.evaluator, seed=self.config.seed,
                dataset=self.config.dataset)
        return self._evaluator

    def _evaluate_plan(self, step: int, plan: list[tuple[CellSpec, bool, float | None, float | None]]):
        """plan rows: (cell, exploration, pred_accuracy, pred_time)."""
        records = []
        for cell, exploration, pred_a, pred_t in plan:
            text = cell.serialize()
            rec = CandidateRecord(cell=cell, step=step, exploration=exploration,
                                  pred_accuracy=pred_a, pred_time=pred_t)
            cached = self.state.journal.get((step, text))
            if cached is not None:
                rec.accuracy = cached["accuracy"]
                rec.time_s = cached["time_s"]
                rec.params = cached["params"]
            else:
                form = canonical_form(cell)
                if form in self.state.evaluated_forms:
                    continue  # safety net; fronts are iso-disjoint already
                try:
                    result = self._evaluator_or_start().evaluate(EvaluationRequest(
                        cell=cell, macro=self.config.effective_macro,
                        training=self.config.training, dataset=self.config.dataset))
                except EvaluationFailed as err:
                    self._failure_streak += 1
                    self.state.append_journal({
                        "step": step, "cell": text, "failed": True,
                        "error": str(err)})
                    if self._failure_streak > self.config.failure_streak_limit:
                        self.state.write_state("aborted")
                        raise
                    continue
                self._failure_streak = 0
                rec.accuracy = result.accuracy
                rec.time_s = result.training_time
                rec.params = result.params
                self.state.append_journal({
                    "step": step, "cell": text, "exploration": exploration,
                    "pred_accuracy": pred_a, "pred_time_s": pred_t,
                    "accuracy": rec.accuracy, "time_s": rec.time_s,
                    "params": rec.params})
            self.state.evaluated_forms.add(canonical_form(cell))
            records.append(rec)
        self.state.records[step] = records
        self.state.write_step_csv(step)
        self.state.last_completed_step = step
        self.state.write_state("running")

    # -- per-step plans ------------------------------------------------------

    def _operators(self):
        return [parse_operator(t) for t in self.config.operators]

    def _bootstrap_plans(self, step: int):
        if step == 0:
            return [(EMPTY_CELL, False, None, None)]
        ops = self._operators()
        cells = expand_cell(EMPTY_CELL, ops, self.config.max_lookback)
        return [(c, False, None, None) for c in cells]

    def _write_reindex(self) -> None:
        t0 = None
        mono = {}
        symmetric = {}
        for tok in self.config.operators:
            op = parse_operator(tok)
            symmetric[CellSpec((BlockSpec(-1, op, -1, op),)).serialize()] = op.token
        for rec in self.state.records.get(0, []):
            t0 = rec.time_s
        for rec in self.state.records.get(1, []):
            tok = symmetric.get(rec.cell.serialize())
            if tok is not None and rec.time_s is not None:
                mono[tok] = rec.time_s
        if t0 is None or len(mono) < len(self.config.operators):
            raise EvaluationFailed("bootstrap incomplete: missing reindex anchors")
        self.state.reindex = compute_dynamic_reindex(t0, mono)
        (self.state.run_dir / "reindex.json").write_text(json.dumps({
            "bias_time_s": t0,
            "max_time_s": self.state.reindex.max_time,
            "values": dict(sorted(self.state.reindex.values.items())),
        }, indent=1), encoding="utf-8")

    def _fit_predictors(self, step: int):
        cfg = self.config
        rows = self.state.successful(step)
        ranges = cfg.search_ranges()
        acc_model = fit_accuracy_default(
            [(r.cell, r.accuracy) for r in rows],
            vocabulary=list(cfg.operators), max_blocks=cfg.max_blocks,
            max_lookback=cfg.max_lookback, search_space=ranges,
            trials=cfg.predictor_trials, seed=_derived_seed(cfg.seed, step, "acc"))
        self.state.predictors_dir.mkdir(exist_ok=True)
        acc_model.dump(self.state.predictors_dir / f"acc_b{step}.json")
        time_model = None
        if cfg.mode == "popnas":
            trows = [
                (extract_time_features(r.cell, cfg.effective_macro,
                                       self.state.reindex).to_vector(), r.time_s)
                for r in rows
            ]
            time_model = fit_regressor(
                trows, ranges, trials=cfg.predictor_trials,
                seed=_derived_seed(cfg.seed, step, "time"), clip=(0.0, None))
            time_model.dump(self.state.predictors_dir / f"time_b{step}.json")
        return acc_model, time_model

    def _expansions(self, step: int) -> list[CellSpec]:
        cfg = self.config
        ops = self._operators()
        parents = [r.cell for r in self.state.records.get(step - 1, [])
                   if r.accuracy is not None]
        seen: set[str] = set()
        out: list[CellSpec] = []
        for parent in parents:
            for child in expand_cell(parent, ops, cfg.max_lookback,
                                     max_blocks=cfg.max_blocks):
                key = (child.serialize() if cfg.defer_isomorphism_to_front
                       else canonical_form(child))
                if key in seen:
                    continue
                seen.add(key)
                out.append(child)
        return out

    def _step_plan(self, step: int):
        cfg = self.config
        acc_model, time_model = self._fit_predictors(step)
        candidates = self._expansions(step)
        if not candidates:
            return []
        enc = np.asarray([
            encode_cell(c, list(cfg.operators), cfg.max_blocks, cfg.max_lookback)
            for c in candidates])
        pred_acc = acc_model.predict(enc)

        if cfg.mode == "pnas":
            order = sorted(range(len(candidates)),
                           key=lambda i: (-pred_acc[i], i))[:cfg.beam]
            return [(candidates[i], False, float(pred_acc[i]), None) for i in order]

        feats = np.asarray([
            extract_time_features(c, cfg.effective_macro, self.state.reindex).to_vector()
            for c in candidates])
        pred_time = np.maximum(time_model.predict(feats), _TIME_FLOOR)

        scored = [ScoredCandidate(c, float(a), float(t))
                  for c, a, t in zip(candidates, pred_acc, pred_time)]
        front = pareto_front(scored, cfg.beam)
        legal_inputs = list(range(-cfg.max_lookback, 0)) + list(range(step - 1))
        sets = build_exploration_sets(front, self._operators(), legal_inputs)
        explore = []
        if sets and cfg.exploration_beam > 0:
            explore = exploration_front(scored, front, sets, cfg.exploration_beam,
                                        min_hits=cfg.exploration_min_hits)
        plan = [(c.cell, False, c.predicted_accuracy, c.predicted_time)
                for c in front]
        plan += [(c.cell, True, c.predicted_accuracy, c.predicted_time)
                 for c in explore]
        return plan

    # -- main loop -----------------------------------------------------------

    def run(self) -> Path:
        cfg = self.config
        state = self.state
        state.run_dir.mkdir(parents=True, exist_ok=True)
        cfg_path = state.run_dir / "config.json"
        if not cfg_path.exists():
            doc = {"config": config_to_dict(cfg), "hash": config_hash(cfg)}
            cfg_path.write_text(json.dumps(doc, indent=1, sort_keys=True),
                                encoding="utf-8")
            state.write_state("running")
        state.load_journal()
        try:
            for step in range(0, cfg.max_blocks + 1):
                if step <= state.last_completed_step:
                    continue
                if step <= 1:
                    plan = self._bootstrap_plans(step)
                else:
                    plan = self._step_plan(step)
                self._evaluate_plan(step, plan)
                if step == 1:
                    self._write_reindex()
            state.write_state("finished")
        finally:
            if self._evaluator is not None:
                self._evaluator.close()
                self._evaluator = None
        return state.run_dir


def run_search(config: SearchConfig, out_dir: str | Path,
               evaluator: Evaluator | None = None) -> Path:
    """Execute a full search into a fresh run directory."""
    run_dir = Path(out_dir)
    if (run_dir / "state.json").exists():
        raise CorruptState(
            f"{run_dir} already holds a run; use resume_search to continue it")
    return _Engine(config, run_dir, evaluator).run()


def load_run_config(run_dir: str | Path) -> SearchConfig:
    path = Path(run_dir) / "config.json"
    if not path.exists():
        raise CorruptState(f"missing config.json in {run_dir}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        config = config_from_dict(doc["config"])
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise CorruptState(f"unreadable config.json: {e}") from e
    if config_hash(config) != doc.get("hash"):
        raise CorruptState("config hash mismatch; run directory was modified")
    return config


def resume_search(run_dir: str | Path, evaluator: Evaluator | None = None) -> Path:
    """Continue an interrupted run; a finished run is a no-op.

    Completed evaluations are never re-run: the in-flight step's plan is
    re-derived (deterministic) and journaled results are reused.
    """
    run_dir = Path(run_dir)
    config = load_run_config(run_dir)
    state_path = run_dir / "state.json"
    if not state_path.exists():
        raise CorruptState(f"missing state.json in {run_dir}")
    try:
        status = json.loads(state_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorruptState(f"unreadable state.json: {e}") from e
    if status.get("config_hash") != config_hash(config):
        raise CorruptState("state/config hash mismatch")

    engine = _Engine(config, run_dir, evaluator)
    if status.get("status") == "finished":
        return run_dir
    engine.state.last_completed_step = -1
    engine.state.load_journal()
    # rebuild in-memory records for completed steps from their CSVs
    steps_dir = run_dir / "steps"
    step = 0
    while (steps_dir / f"b{step}.csv").exists():
        engine.state.records[step] = read_step_csv(steps_dir / f"b{step}.csv")
        for rec in engine.state.records[step]:
            engine.state.evaluated_forms.add(canonical_form(rec.cell))
        engine.state.last_completed_step = step
        if step == 1:
            engine._write_reindex()
        step += 1
    return engine.run()


def read_step_csv(path: str | Path) -> list[CandidateRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            def opt_float(key):
                return float(row[key]) if row[key] else None

            records.append(CandidateRecord(
                cell=parse_cell(row["cell"]),
                step=len(parse_cell(row["cell"]).blocks),
                exploration=row["exploration"] == "1",
                pred_accuracy=opt_float("pred_accuracy"),
                pred_time=opt_float("pred_time_s"),
                accuracy=opt_float("accuracy"),
                time_s=opt_float("time_s"),
                params=int(row["params"]) if row["params"] else None,
            ))
    return records


def report_predictor_quality(run_dir: str | Path) -> dict[int, dict[str, dict | None]]:
    """Per-step MAPE/Spearman of both predictors against measured results.

    A step whose metric is undefined (fewer than two measured rows, constant
    values) reports None for that predictor.
    """
    run_dir = Path(run_dir)
    steps_dir = run_dir / "steps"
    out: dict[int, dict[str, dict | None]] = {}
    step = 2
    while (steps_dir / f"b{step}.csv").exists():
        records = read_step_csv(steps_dir / f"b{step}.csv")
        report: dict[str, dict | None] = {}
        for name, pred_key, meas_key in (
                ("accuracy", "pred_accuracy", "accuracy"),
                ("time", "pred_time", "time_s")):
            recs = [
                PredictionRecord(r.cell.serialize(), getattr(r, pred_key),
                                 getattr(r, meas_key))
                for r in records
                if getattr(r, pred_key) is not None and getattr(r, meas_key) is not None
            ]
            try:
                report[name] = score_predictions(recs)
            except DegenerateInput:
                report[name] = None
        out[step] = report
        step += 1
    return out
