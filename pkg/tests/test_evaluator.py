"""Synthetic oracle determinism and the external-worker bridge."""

import random
import sys
from pathlib import Path

import pytest

from cellnas.cellspace import BlockSpec, CellSpec, EMPTY_CELL, parse_cell, parse_operator
from cellnas.errors import EvaluationFailed, WorkerError
from cellnas.evaluator import (
    BridgeEvaluator, EvaluationRequest, EvaluationResult, OracleParams,
    SyntheticEvaluator, format_float, make_evaluator,
)
from cellnas.macroarch import MacroConfig, count_params

MACRO = MacroConfig(motifs=2, normals_per_motif=1, filters=16)
WORKER = [sys.executable, str(Path(__file__).parent / "helpers" / "echo_worker.py")]

OPS = ["identity", "3x3 conv", "5x5 conv", "2x2 maxpool"]


def cell_of(*blocks):
    return CellSpec(tuple(
        BlockSpec(i1, parse_operator(o1), i2, parse_operator(o2))
        for i1, o1, i2, o2 in blocks))


class TestSyntheticOracle:
    def test_empty_cell_hits_base_values(self):
        ev = SyntheticEvaluator(OracleParams(t_base=12.5, a_base=0.25), seed=3)
        res = ev.evaluate(EvaluationRequest(EMPTY_CELL, MACRO))
        assert res.training_time == 12.5
        assert res.accuracy == 0.25
        assert res.params == count_params(EMPTY_CELL, MACRO)

    def test_block_strictly_increases_time(self):
        ev = SyntheticEvaluator(seed=0)
        base = ev.evaluate(EvaluationRequest(EMPTY_CELL, MACRO)).training_time
        rng = random.Random(1)
        cell = EMPTY_CELL
        prev = base
        for j in range(4):
            refs = [-2, -1] + list(range(j))
            cell = CellSpec(cell.blocks + (BlockSpec(
                rng.choice(refs), parse_operator(rng.choice(OPS)),
                rng.choice(refs), parse_operator(rng.choice(OPS))),))
            t = ev.evaluate(EvaluationRequest(cell, MACRO)).training_time
            assert t > prev
            prev = t

    def test_repeat_calls_agree_exactly(self):
        ev = SyntheticEvaluator(seed=7)
        cell = cell_of((-2, "3x3 conv", -1, "identity"))
        a = ev.evaluate(EvaluationRequest(cell, MACRO))
        b = ev.evaluate(EvaluationRequest(cell, MACRO))
        assert a == b

    def test_isomorphic_cells_identical(self):
        ev = SyntheticEvaluator(seed=5)
        rng = random.Random(9)
        for _ in range(40):
            blocks = []
            b = rng.randint(1, 3)
            for j in range(b):
                refs = [-2, -1] + list(range(j))
                blocks.append((rng.choice(refs), rng.choice(OPS),
                               rng.choice(refs), rng.choice(OPS)))
            cell = cell_of(*blocks)
            swapped = CellSpec(tuple(
                BlockSpec(blk.in2, blk.op2, blk.in1, blk.op1)
                for blk in cell.blocks))
            ra = ev.evaluate(EvaluationRequest(cell, MACRO))
            rb = ev.evaluate(EvaluationRequest(swapped, MACRO))
            assert ra == rb

    def test_seed_changes_noise_only(self):
        cell = cell_of((-1, "3x3 conv", -1, "5x5 conv"))
        r0 = SyntheticEvaluator(seed=0).evaluate(EvaluationRequest(cell, MACRO))
        r1 = SyntheticEvaluator(seed=1).evaluate(EvaluationRequest(cell, MACRO))
        assert r0.training_time == r1.training_time
        assert abs(r0.accuracy - r1.accuracy) <= 2 * OracleParams().noise

    def test_result_validation(self):
        with pytest.raises(ValueError):
            EvaluationResult(accuracy=1.2, training_time=1.0, params=10)
        with pytest.raises(ValueError):
            EvaluationResult(accuracy=0.5, training_time=0.0, params=10)


class TestBridge:
    def test_round_trip(self):
        ev = BridgeEvaluator(WORKER, timeout=30)
        try:
            cell = cell_of((-2, "3x3 conv", -1, "identity"))
            res = ev.evaluate(EvaluationRequest(cell, MACRO, {"epochs": 2}, "toy"))
            assert 0 <= res.accuracy <= 1
            assert res.training_time > 0
            assert res.params > 0
            assert ev.worker_name == "echo"
            again = ev.evaluate(EvaluationRequest(cell, MACRO, {"epochs": 2}, "toy"))
            assert res == again
        finally:
            ev.close()

    def test_nine_digit_decimal_round_trip(self):
        # values the worker emits re-format to the same 9-significant-digit text
        ev = BridgeEvaluator(WORKER, timeout=30)
        try:
            res = ev.evaluate(EvaluationRequest(
                cell_of((-1, "5x5 conv", -1, "identity")), MACRO))
            for v in (res.accuracy, res.training_time):
                assert float(format_float(v)) == v
        finally:
            ev.close()

    def test_worker_error_frame(self):
        bad = cell_of((-1, "identity", -1, "identity"))
        ev = BridgeEvaluator(WORKER + ["--error-on", bad.serialize()], timeout=30)
        try:
            with pytest.raises(WorkerError):
                ev.evaluate(EvaluationRequest(bad, MACRO))
            # the worker stays usable for other cells
            ok = ev.evaluate(EvaluationRequest(
                cell_of((-1, "3x3 conv", -1, "identity")), MACRO))
            assert ok.training_time > 0
        finally:
            ev.close()

    def test_worker_death_mid_request(self):
        ev = BridgeEvaluator(WORKER + ["--fail-after", "0"], timeout=30)
        try:
            with pytest.raises(EvaluationFailed):
                ev.evaluate(EvaluationRequest(
                    cell_of((-1, "3x3 conv", -1, "identity")), MACRO))
        finally:
            ev.close()

    def test_fit_and_predict_accuracy(self):
        ev = BridgeEvaluator(WORKER, timeout=30)
        try:
            ev.fit_accuracy([("[(-1, 'identity', -1, 'identity')]", 0.4),
                             ("[(-1, '3x3 conv', -1, 'identity')]", 0.6)])
            preds = ev.predict_accuracy(["[(-2, '3x3 conv', -1, 'identity')]"])
            assert preds == [0.5]
        finally:
            ev.close()


class TestFactory:
    def test_synthetic_from_config(self):
        ev = make_evaluator({"type": "synthetic", "oracle": {"t_base": 3.0,
                                                             "a_base": 0.4}})
        res = ev.evaluate(EvaluationRequest(EMPTY_CELL, MACRO))
        assert res.training_time == 3.0 and res.accuracy == 0.4

    def test_external_requires_cmd(self):
        with pytest.raises(ValueError):
            make_evaluator({"type": "external"})

    def test_unknown_type(self):
        with pytest.raises(ValueError):
            make_evaluator({"type": "quantum"})

    def test_oracle_accuracy_saturates_with_gain(self):
        params = OracleParams(noise=0.0, gain={t: 0.4 for t in OPS})
        ev = SyntheticEvaluator(params, seed=0)
        cell1 = cell_of((-1, "3x3 conv", -1, "5x5 conv"))
        cell2 = parse_cell(
            "[(-1, '3x3 conv', -1, '5x5 conv');(-1, '3x3 conv', 0, '5x5 conv')]")
        a1 = ev.evaluate(EvaluationRequest(cell1, MACRO)).accuracy
        a2 = ev.evaluate(EvaluationRequest(cell2, MACRO)).accuracy
        assert a2 > a1
        assert a2 < 1.0
