"""End-to-end: the engine driving the reference trainer worker over the wire.

Skipped unless the worker has been built (worker/dist/main.js exists) and a
node runtime is available.
"""

import shutil
from pathlib import Path

import pytest

from cellnas.engine import SearchConfig, read_step_csv, run_search
from cellnas.evaluator import BridgeEvaluator, EvaluationRequest
from cellnas.macroarch import MacroConfig

WORKER_MAIN = Path(__file__).resolve().parents[1] / "worker" / "dist" / "main.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not WORKER_MAIN.exists(),
    reason="worker not built or node unavailable",
)


def worker_cmd(*extra):
    return ["node", str(WORKER_MAIN), "--deterministic", *extra]


class TestBridgeToWorker:
    def test_single_evaluation(self):
        ev = BridgeEvaluator(worker_cmd(), timeout=300)
        try:
            from cellnas.cellspace import parse_cell
            res = ev.evaluate(EvaluationRequest(
                cell=parse_cell("[(-1, '3 conv', -1, '2 maxpool')]"),
                macro=MacroConfig(motifs=1, normals_per_motif=0, filters=8,
                                  input_shape=(24, 2), num_classes=3),
                training={"epochs": 2, "lr": 0.01, "wd": 5e-4, "batch_size": 16},
                dataset="synthetic:48"))
            assert 0 <= res.accuracy <= 1
            assert res.training_time > 0
            assert res.params == 379  # matches the analytic estimate exactly
        finally:
            ev.close()

    def test_exact_predictor_contract(self):
        ev = BridgeEvaluator(worker_cmd("--predictor-epochs", "6"), timeout=300)
        try:
            rows = [
                ("[(-1, '3 conv', -1, '2 maxpool')]", 0.5),
                ("[(-2, 'gru', -1, '3 conv')]", 0.7),
                ("[(-1, 'identity', -1, 'identity')]", 0.4),
                ("[(-2, '3 conv', -1, '3 conv')]", 0.65),
            ]
            ev.fit_accuracy(rows)
            preds = ev.predict_accuracy(["[(-2, 'gru', -2, '3 conv')]",
                                         "[(-1, 'identity', -1, '2 maxpool')]"])
            assert len(preds) == 2
            assert all(0 <= p <= 1 for p in preds)
        finally:
            ev.close()

    def test_small_search_through_worker(self, tmp_path):
        cfg = SearchConfig(
            operators=("identity", "3 conv", "2 maxpool"),
            macro=MacroConfig(motifs=1, normals_per_motif=0, filters=8,
                              input_shape=(24, 2), num_classes=3),
            max_blocks=2, beam=4, exploration_beam=0, max_lookback=2, seed=0,
            training={"epochs": 1, "lr": 0.01, "wd": 5e-4, "batch_size": 16},
            evaluator={"type": "external", "cmd": worker_cmd(), "timeout": 300},
            dataset="synthetic:48",
            predictor_trials=1, predictor_iterations=60, predictor_patience=10,
        )
        run_dir = run_search(cfg, tmp_path / "run")
        steps1 = read_step_csv(run_dir / "steps" / "b1.csv")
        assert len(steps1) == 21  # p(p+1)/2 with p = 2 lookbacks * 3 operators
        steps2 = read_step_csv(run_dir / "steps" / "b2.csv")
        assert 1 <= len(steps2) <= 4
        assert (run_dir / "reindex.json").exists()
        for rec in steps2:
            assert rec.accuracy is not None and rec.time_s is not None
