"""Post-search model selection and final training.

Model selection takes the top-k cells by measured search accuracy, re-trains
each at its original macro shape, then grid-searches (motif, normal-cell)
modifiers, picking for each pair the largest filter multiplier whose
parameter count fits the configured range. The best tuple is then re-trained
on all available data (no validation split) for the final artifact.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .cellspace import CellSpec, canonical_form
from .engine import load_run_config, read_step_csv
from .errors import CorruptState, EvaluationFailed, NoFeasibleConfig
from .evaluator import EvaluationRequest, Evaluator, make_evaluator
from .macroarch import MacroConfig, count_params

SELECTION_CSV_HEADER = ["cell", "M", "N", "F", "params", "accuracy", "time_s"]


@dataclass(frozen=True)
class SelectionConfig:
    top_k: int = 5
    params_min: float = 1e6
    params_max: float = 3e6
    motif_modifiers: tuple[int, ...] = (0, 1)
    normal_modifiers: tuple[int, ...] = (0, 1, 2)
    filter_multipliers: tuple[float, ...] = (0.85, 1.0, 1.5, 1.75, 2.0)
    training_overrides: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.params_min >= self.params_max:
            raise ValueError("params_min must be below params_max")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not (self.motif_modifiers and self.normal_modifiers
                and self.filter_multipliers):
            raise ValueError("modifier lists must be non-empty")


@dataclass(frozen=True)
class SelectionResult:
    cell: CellSpec
    motifs: int
    normals_per_motif: int
    filters: int
    params: int
    accuracy: float
    time_s: float


def _prolonged_training(base: dict[str, Any], macro: MacroConfig,
                        overrides: dict[str, Any]) -> dict[str, Any]:
    """Model-selection defaults: longer schedule plus the regularizers that
    only pay off on long trainings."""
    series = len(macro.input_shape) == 2
    merged = dict(base)
    merged.update({
        "epochs": 100 if series else 200,
        "schedule": "cosine",
        "drop_path": 0.6 if series else 0.4,
        "label_smoothing": 0.1,
        "secondary_exit": True,
    })
    if not series:
        merged.setdefault("cutout", [8, 8])
    merged.update(overrides)
    return merged


def top_cells(run_dir: str | Path, k: int) -> list[tuple[CellSpec, float, float]]:
    """Distinct cells ranked by measured accuracy (ties: lower time, then
    discovery order)."""
    steps_dir = Path(run_dir) / "steps"
    rows = []
    b = 0
    while (steps_dir / f"b{b}.csv").exists():
        for rec in read_step_csv(steps_dir / f"b{b}.csv"):
            if rec.accuracy is not None and not rec.cell.is_empty:
                rows.append((rec.cell, rec.accuracy, rec.time_s))
        b += 1
    if not rows:
        raise CorruptState(f"{run_dir} holds no evaluated cells")
    order = sorted(range(len(rows)), key=lambda i: (-rows[i][1], rows[i][2], i))
    seen: set[str] = set()
    out = []
    for i in order:
        form = canonical_form(rows[i][0])
        if form in seen:
            continue
        seen.add(form)
        out.append(rows[i])
        if len(out) == k:
            break
    return out


def max_feasible_filters(cell: CellSpec, macro: MacroConfig,
                         base_filters: int, config: SelectionConfig) -> int | None:
    """Largest floor(F * multiplier) whose parameter count falls strictly
    inside (params_min, params_max); None when no multiplier fits."""
    feasible = []
    for mult in config.filter_multipliers:
        f = int(base_filters * mult)
        if f < 1:
            continue
        params = count_params(cell, dataclasses.replace(macro, filters=f))
        if config.params_min < params < config.params_max:
            feasible.append(f)
    return max(feasible) if feasible else None


def run_model_selection(
    run_dir: str | Path,
    config: SelectionConfig,
    evaluator: Evaluator | None = None,
) -> SelectionResult:
    """Grid-search macro shapes for the run's best cells; returns the
    argmax-accuracy tuple and writes selection.csv."""
    run_dir = Path(run_dir)
    search_config = load_run_config(run_dir)
    macro = search_config.effective_macro
    base_m, base_n, base_f = (macro.motifs, macro.normals_per_motif, macro.filters)
    training = _prolonged_training(search_config.training, macro,
                                   config.training_overrides)

    owns_evaluator = evaluator is None
    if evaluator is None:
        evaluator = make_evaluator(search_config.evaluator,
                                   seed=search_config.seed,
                                   dataset=search_config.dataset)

    results: list[SelectionResult] = []
    try:
        for cell, _, _ in top_cells(run_dir, config.top_k):
            grid: list[tuple[int, int, int]] = [(base_m, base_n, base_f)]
            for m_mod in config.motif_modifiers:
                for n_mod in config.normal_modifiers:
                    m, n = base_m + m_mod, base_n + n_mod
                    shaped = dataclasses.replace(
                        macro, motifs=m, normals_per_motif=n)
                    f = max_feasible_filters(cell, shaped, base_f, config)
                    if f is None or (m, n, f) == (base_m, base_n, base_f):
                        continue
                    grid.append((m, n, f))
            for m, n, f in grid:
                shaped = dataclasses.replace(
                    macro, motifs=m, normals_per_motif=n, filters=f)
                try:
                    res = evaluator.evaluate(EvaluationRequest(
                        cell=cell, macro=shaped, training=training,
                        dataset=search_config.dataset))
                except EvaluationFailed:
                    continue
                results.append(SelectionResult(
                    cell=cell, motifs=m, normals_per_motif=n, filters=f,
                    params=res.params, accuracy=res.accuracy,
                    time_s=res.training_time))
    finally:
        if owns_evaluator:
            evaluator.close()

    if not results:
        raise NoFeasibleConfig("no macro configuration could be evaluated")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SELECTION_CSV_HEADER)
    for r in results:
        writer.writerow([r.cell.serialize(), r.motifs, r.normals_per_motif,
                         r.filters, r.params, repr(r.accuracy), repr(r.time_s)])
    (run_dir / "selection.csv").write_text(buf.getvalue(), encoding="utf-8")

    best = max(range(len(results)),
               key=lambda i: (results[i].accuracy, -results[i].time_s, -i))
    return results[best]


def read_selection_csv(run_dir: str | Path) -> list[SelectionResult]:
    path = Path(run_dir) / "selection.csv"
    if not path.exists():
        raise CorruptState(f"no selection.csv in {run_dir}; run model selection first")
    from .cellspace import parse_cell

    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(SelectionResult(
                cell=parse_cell(row["cell"]), motifs=int(row["M"]),
                normals_per_motif=int(row["N"]), filters=int(row["F"]),
                params=int(row["params"]), accuracy=float(row["accuracy"]),
                time_s=float(row["time_s"])))
    return out


def run_final_training(
    run_dir: str | Path,
    best: SelectionResult | None = None,
    training_overrides: dict[str, Any] | None = None,
    evaluator: Evaluator | None = None,
) -> SelectionResult:
    """One training of the selected tuple on all available data (validation
    disabled), recorded as the run's final artifact."""
    run_dir = Path(run_dir)
    search_config = load_run_config(run_dir)
    macro = search_config.effective_macro

    if best is None:
        rows = read_selection_csv(run_dir)
        idx = max(range(len(rows)),
                  key=lambda i: (rows[i].accuracy, -rows[i].time_s, -i))
        best = rows[idx]

    series = len(macro.input_shape) == 2
    training = _prolonged_training(search_config.training, macro, {})
    training.update({
        "epochs": 200 if series else 600,
        "use_validation": False,
    })
    training.update(training_overrides or {})

    shaped = dataclasses.replace(macro, motifs=best.motifs,
                                 normals_per_motif=best.normals_per_motif,
                                 filters=best.filters)
    owns_evaluator = evaluator is None
    if evaluator is None:
        evaluator = make_evaluator(search_config.evaluator,
                                   seed=search_config.seed,
                                   dataset=search_config.dataset)
    try:
        res = evaluator.evaluate(EvaluationRequest(
            cell=best.cell, macro=shaped, training=training,
            dataset=search_config.dataset))
    finally:
        if owns_evaluator:
            evaluator.close()

    final = SelectionResult(
        cell=best.cell, motifs=best.motifs,
        normals_per_motif=best.normals_per_motif, filters=best.filters,
        params=res.params, accuracy=res.accuracy, time_s=res.training_time)
    (run_dir / "final.json").write_text(json.dumps({
        "cell": final.cell.serialize(),
        "M": final.motifs, "N": final.normals_per_motif, "F": final.filters,
        "params": final.params, "accuracy": final.accuracy,
        "time_s": final.time_s, "training": training,
    }, indent=1, sort_keys=True), encoding="utf-8")
    return final
