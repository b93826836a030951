"""Command-line surface: search, select, final, inspect, export-dot,
score-predictors.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any

from .cellspace import dag_views, parse_cell, parse_operator
from .engine import (
    SearchConfig, read_step_csv, report_predictor_quality, resume_search,
    run_search,
)
from .errors import CellNasError, SchemaError, UnknownOperator
from .macroarch import MacroConfig
from .modelselect import SelectionConfig, run_final_training, run_model_selection

IC_OPERATOR_SET = (
    "identity", "3x3 dconv", "5x5 dconv", "7x7 dconv", "1x3-3x1 conv",
    "1x5-5x1 conv", "1x7-7x1 conv", "1x1 conv", "3x3 conv", "5x5 conv",
    "2x2 maxpool", "2x2 avgpool",
)
TSC_OPERATOR_SET = (
    "identity", "7 dconv", "13 dconv", "21 dconv", "7 conv", "13 conv",
    "21 conv", "7:2dr conv", "7:4dr conv", "2 maxpool", "2 avgpool",
    "lstm", "gru",
)


def _expect(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise SchemaError(path, message)


def _get(section: dict, key: str, default, path: str, kind) -> Any:
    value = section.get(key, default)
    if value is None:
        return None
    if kind is float and isinstance(value, int):
        value = float(value)
    _expect(isinstance(value, kind) and not isinstance(value, bool) or kind is bool,
            f"{path}.{key}", f"expected {kind.__name__}, got {value!r}")
    return value


def load_config(path: str | Path) -> SearchConfig:
    """Parse and validate a search configuration file."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(str(path), "configuration file not found")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(str(path), f"invalid JSON: {e}") from e
    _expect(isinstance(doc, dict), str(path), "top level must be an object")

    search = doc.get("search", {})
    macro_sec = doc.get("macro", {})
    _expect(isinstance(search, dict), "search", "must be an object")
    _expect(isinstance(macro_sec, dict), "macro", "must be an object")

    input_shape = macro_sec.get("input_shape", [32, 32, 3])
    _expect(isinstance(input_shape, list) and len(input_shape) in (2, 3)
            and all(isinstance(v, int) and v > 0 for v in input_shape),
            "macro.input_shape", "expected 2 or 3 positive integers")
    series = len(input_shape) == 2

    operators = search.get("operators")
    if operators is None:
        operators = list(TSC_OPERATOR_SET if series else IC_OPERATOR_SET)
    _expect(isinstance(operators, list) and operators
            and all(isinstance(t, str) for t in operators),
            "search.operators", "expected a non-empty list of tokens")
    for tok in operators:
        parse_operator(tok)  # UnknownOperator names the bad token

    b = _get(search, "B", 5, "search", int)
    k = _get(search, "K", 128, "search", int)
    j = _get(search, "J", 16, "search", int)
    lookback = _get(search, "max_lookback", 2, "search", int)
    seed = _get(search, "seed", 0, "search", int)
    mode = _get(search, "mode", "popnas", "search", str)
    _expect(b >= 1, "search.B", f"must be >= 1, got {b}")
    _expect(k >= 1, "search.K", f"must be >= 1, got {k}")
    _expect(j >= 0, "search.J", f"must be >= 0, got {j}")
    _expect(lookback >= 1, "search.max_lookback", f"must be >= 1, got {lookback}")
    _expect(mode in ("popnas", "pnas"), "search.mode",
            f"must be popnas or pnas, got {mode!r}")
    min_hits = search.get("exploration_min_hits")
    if min_hits is not None:
        _expect(isinstance(min_hits, int) and min_hits >= 1,
                "search.exploration_min_hits", f"must be >= 1, got {min_hits!r}")

    macro = MacroConfig(
        motifs=_get(macro_sec, "M", 3, "macro", int),
        normals_per_motif=_get(macro_sec, "N", 2, "macro", int),
        filters=_get(macro_sec, "F", 24, "macro", int),
        max_lookback=lookback,
        residual_cells=bool(search.get("residual_cells", True)),
        input_shape=tuple(input_shape),
        num_classes=_get(macro_sec, "num_classes", 10, "macro", int),
    )

    training = dict(doc.get("training", {}))
    training.setdefault("epochs", 21)
    training.setdefault("lr", 0.01)
    training.setdefault("wd", 1e-3 if series else 5e-4)
    training.setdefault("optimizer", "adamw")
    training.setdefault("schedule", "cosine_restarts")
    _expect(isinstance(training["epochs"], int) and training["epochs"] >= 1,
            "training.epochs", f"must be >= 1, got {training['epochs']!r}")

    evaluator = doc.get("evaluator", {"type": "synthetic"})
    _expect(isinstance(evaluator, dict), "evaluator", "must be an object")

    try:
        return SearchConfig(
            operators=tuple(operators),
            macro=macro,
            max_blocks=b, beam=k, exploration_beam=j, max_lookback=lookback,
            mode=mode, seed=seed, training=training, evaluator=evaluator,
            dataset=str(doc.get("dataset", "")),
            exploration_min_hits=min_hits,
            predictor_trials=_get(search, "predictor_trials", 8, "search", int),
            predictor_iterations=_get(search, "predictor_iterations", 2500,
                                      "search", int),
            predictor_patience=_get(search, "predictor_patience", 50,
                                    "search", int),
            defer_isomorphism_to_front=bool(
                search.get("defer_isomorphism_to_front", False)),
        )
    except ValueError as e:
        raise SchemaError("search", str(e)) from e


def export_dot(cell_text: str, macro_label: str | None = None) -> str:
    """DOT digraph of a cell DAG: lookbacks, operators, add joins, output."""
    cell = parse_cell(cell_text)
    views = dag_views(cell)
    lines = ["digraph cell {", "  rankdir=LR;", '  node [shape=box];']
    if macro_label:
        lines.append(f'  label="{macro_label}";')
    for lb in sorted(views.lookbacks_used):
        lines.append(f'  lb{lb} [label="{lb}", shape=ellipse];')
    for j, blk in enumerate(cell.blocks):
        lines.append(f'  b{j}op1 [label="{blk.op1.token}"];')
        lines.append(f'  b{j}op2 [label="{blk.op2.token}"];')
        lines.append(f'  b{j}add [label="add", shape=circle];')
        for slot, ref in (("op1", blk.in1), ("op2", blk.in2)):
            src = f"lb{ref}" if ref < 0 else f"b{ref}add"
            lines.append(f"  {src} -> b{j}{slot};")
        lines.append(f"  b{j}op1 -> b{j}add;")
        lines.append(f"  b{j}op2 -> b{j}add;")
    lines.append('  out [label="cell output", shape=ellipse];')
    unused = sorted(views.unused)
    if len(unused) > 1:
        lines.append('  concat [label="concat", shape=circle];')
        for j in unused:
            lines.append(f"  b{j}add -> concat;")
        lines.append("  concat -> out;")
    elif unused:
        lines.append(f"  b{unused[0]}add -> out;")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _format_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in header]
    for row in rows:
        widths = [max(w, len(c)) for w, c in zip(widths, row)]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for row in rows:
        out.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(out) + "\n"


def _cmd_search(args) -> int:
    config = load_config(args.config)
    out = Path(args.out) if args.out else Path("runs") / f"search-{config.seed}"
    if args.resume:
        resume_search(out)
    else:
        run_search(config, out)
    print(f"run directory: {out}")
    return 0


def _cmd_select(args) -> int:
    overrides = {}
    config = SelectionConfig(
        top_k=args.k,
        params_min=args.params_min,
        params_max=args.params_max,
        training_overrides=overrides,
    )
    best = run_model_selection(args.run, config)
    print(f"best: cell={best.cell.serialize()} M={best.motifs} "
          f"N={best.normals_per_motif} F={best.filters} "
          f"accuracy={best.accuracy:.4f} params={best.params}")
    return 0


def _cmd_final(args) -> int:
    final = run_final_training(args.run)
    print(f"final: cell={final.cell.serialize()} M={final.motifs} "
          f"N={final.normals_per_motif} F={final.filters} "
          f"accuracy={final.accuracy:.4f} time_s={final.time_s:.3f}")
    return 0


def _cmd_inspect(args) -> int:
    steps_dir = Path(args.run) / "steps"
    if not steps_dir.exists():
        raise SchemaError(str(steps_dir), "no steps directory in run")
    names = sorted(steps_dir.glob("b*.csv"),
                   key=lambda p: int(p.stem[1:]))
    if args.step is not None:
        names = [p for p in names if int(p.stem[1:]) == args.step]
        if not names:
            raise SchemaError("--step", f"step {args.step} not found")
    for path in names:
        records = read_step_csv(path)
        print(f"== step {path.stem[1:]} ({len(records)} networks) ==")
        rows = []
        for r in records:
            rows.append([
                r.cell.serialize(), str(len(r.cell)),
                "" if r.pred_accuracy is None else f"{r.pred_accuracy:.4f}",
                "" if r.pred_time is None else f"{r.pred_time:.3f}",
                f"{r.accuracy:.4f}" if r.accuracy is not None else "",
                f"{r.time_s:.3f}" if r.time_s is not None else "",
                str(r.params or ""), "1" if r.exploration else "0",
            ])
        print(_format_table(
            ["cell", "b", "pred_acc", "pred_time", "acc", "time_s", "params",
             "exp"], rows))
    return 0


def _cmd_export_dot(args) -> int:
    label = None
    if args.macro:
        try:
            m, n, f = (int(v) for v in args.macro.split(","))
        except ValueError:
            raise SchemaError("--macro", f"expected M,N,F got {args.macro!r}")
        label = f"M={m} N={n} F={f}"
    sys.stdout.write(export_dot(args.cell, label))
    return 0


def _cmd_score_predictors(args) -> int:
    report = report_predictor_quality(args.run)
    if not report:
        print("no predicted steps in run")
        return 0
    rows = []
    for b in sorted(report):
        def cell(metrics, key):
            return "n/a" if metrics is None else f"{metrics[key]:.3f}"

        acc, time = report[b]["accuracy"], report[b]["time"]
        rows.append([str(b), cell(acc, "mape"), cell(acc, "spearman"),
                     cell(time, "mape"), cell(time, "spearman")])
    print(_format_table(
        ["b", "acc MAPE(%)", "acc rho", "time MAPE(%)", "time rho"], rows))
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cellnas",
                     description="Progressive cell search with time-accuracy "
                                 "Pareto selection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run a search", parents=[])
    p.add_argument("--config", required=True, help="configuration JSON path")
    p.add_argument("--out", default=None, help="run directory")
    p.add_argument("--resume", action="store_true",
                   help="continue an interrupted run in --out")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("select", help="post-search model selection")
    p.add_argument("--run", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--params-min", type=float, default=1e6)
    p.add_argument("--params-max", type=float, default=3e6)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("final", help="final training of the selected model")
    p.add_argument("--run", required=True)
    p.set_defaults(func=_cmd_final)

    p = sub.add_parser("inspect", help="print step results as tables")
    p.add_argument("--run", required=True)
    p.add_argument("--step", type=int, default=None)
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("export-dot", help="emit a DOT graph of a cell")
    p.add_argument("--cell", required=True, help="cell in the text format")
    p.add_argument("--macro", default=None, help="M,N,F annotation")
    p.set_defaults(func=_cmd_export_dot)

    p = sub.add_parser("score-predictors",
                       help="per-step MAPE/Spearman of both predictors")
    p.add_argument("--run", required=True)
    p.set_defaults(func=_cmd_score_predictors)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (SchemaError, UnknownOperator, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except CellNasError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
