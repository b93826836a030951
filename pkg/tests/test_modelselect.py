"""Model-selection grid, parameter-range feasibility and final training."""

import dataclasses
import itertools
import json

import pytest

from cellnas.engine import SearchConfig, load_run_config, run_search
from cellnas.errors import CorruptState, NoFeasibleConfig
from cellnas.evaluator import EvaluationRequest, SyntheticEvaluator
from cellnas.macroarch import MacroConfig, count_params
from cellnas.modelselect import (
    SelectionConfig, max_feasible_filters, read_selection_csv,
    run_final_training, run_model_selection, top_cells,
)

OPS = ("identity", "3x3 conv", "5x5 conv", "2x2 maxpool")


class CountingEvaluator:
    def __init__(self, seed=0):
        self.inner = SyntheticEvaluator(seed=seed)
        self.calls = 0
        self.requests = []

    def evaluate(self, request):
        self.calls += 1
        self.requests.append(request)
        return self.inner.evaluate(request)

    def close(self):
        pass


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    cfg = SearchConfig(
        operators=OPS,
        macro=MacroConfig(motifs=2, normals_per_motif=1, filters=16),
        max_blocks=3, beam=8, exploration_beam=2, seed=0,
        predictor_trials=2, predictor_iterations=150, predictor_patience=20,
    )
    run_dir = tmp_path_factory.mktemp("ms") / "run"
    run_search(cfg, run_dir)
    return run_dir


def default_selection(**overrides):
    base = dict(top_k=3, params_min=5e4, params_max=5e6)
    base.update(overrides)
    return SelectionConfig(**base)


class TestFilterCandidates:
    def test_default_multipliers_for_f24(self):
        mults = SelectionConfig(params_min=1, params_max=2).filter_multipliers
        values = sorted({int(24 * m) for m in mults})
        assert values == [20, 24, 36, 42, 48]

    def test_max_feasible_respects_range(self, finished_run):
        cells = top_cells(finished_run, 1)
        cell = cells[0][0]
        macro = load_run_config(finished_run).macro
        cfg = default_selection()
        f = max_feasible_filters(cell, macro, macro.filters, cfg)
        assert f is not None
        params = count_params(cell, dataclasses.replace(macro, filters=f))
        assert cfg.params_min < params < cfg.params_max
        # nothing larger in the multiplier set fits
        for mult in cfg.filter_multipliers:
            bigger = int(macro.filters * mult)
            if bigger > f:
                p = count_params(cell, dataclasses.replace(macro, filters=bigger))
                assert not (cfg.params_min < p < cfg.params_max)

    def test_infeasible_pair_returns_none(self, finished_run):
        cells = top_cells(finished_run, 1)
        macro = load_run_config(finished_run).macro
        cfg = default_selection(params_min=1.0, params_max=2.0)
        assert max_feasible_filters(cells[0][0], macro, macro.filters, cfg) is None


class TestModelSelection:
    def test_grid_feasibility_and_maximality_by_replay(self, finished_run):
        cfg = default_selection()
        best = run_model_selection(finished_run, cfg)
        rows = read_selection_csv(finished_run)
        search_cfg = load_run_config(finished_run)
        base = (search_cfg.macro.motifs, search_cfg.macro.normals_per_motif,
                search_cfg.macro.filters)
        assert rows, "selection.csv is empty"
        for r in rows:
            macro = dataclasses.replace(
                search_cfg.macro, motifs=r.motifs,
                normals_per_motif=r.normals_per_motif, filters=r.filters)
            assert r.params == count_params(r.cell, macro)
            if (r.motifs, r.normals_per_motif, r.filters) != base:
                assert cfg.params_min < r.params < cfg.params_max
                shaped = dataclasses.replace(
                    search_cfg.macro, motifs=r.motifs,
                    normals_per_motif=r.normals_per_motif)
                assert r.filters == max_feasible_filters(
                    r.cell, shaped, base[2], cfg)
        # returned tuple is the replayed argmax
        idx = max(range(len(rows)),
                  key=lambda i: (rows[i].accuracy, -rows[i].time_s, -i))
        assert best == rows[idx]

    def test_infeasible_pairs_issue_no_evaluation(self, finished_run):
        # a range nothing fits: only the top_k original evaluations happen
        ev = CountingEvaluator(seed=0)
        cfg = default_selection(params_min=1.0, params_max=2.0, top_k=2)
        run_model_selection(finished_run, cfg, evaluator=ev)
        assert ev.calls == 2

    def test_evaluation_count_bound(self, finished_run):
        ev = CountingEvaluator(seed=0)
        cfg = default_selection(top_k=3)
        run_model_selection(finished_run, cfg, evaluator=ev)
        bound = cfg.top_k * (1 + len(cfg.motif_modifiers) * len(cfg.normal_modifiers))
        assert ev.calls <= bound

    def test_top_cells_ranked_by_accuracy(self, finished_run):
        cells = top_cells(finished_run, 5)
        accs = [a for _, a, _ in cells]
        assert accs == sorted(accs, reverse=True)
        forms = {c.serialize() for c, _, _ in cells}
        assert len(forms) == len(cells)

    def test_oracle_argmax_matches_exhaustive_reevaluation(self, finished_run):
        cfg = default_selection()
        best = run_model_selection(finished_run, cfg)
        rows = read_selection_csv(finished_run)
        oracle = SyntheticEvaluator(seed=load_run_config(finished_run).seed)
        search_cfg = load_run_config(finished_run)
        replayed = []
        for r in rows:
            macro = dataclasses.replace(
                search_cfg.macro, motifs=r.motifs,
                normals_per_motif=r.normals_per_motif, filters=r.filters)
            res = oracle.evaluate(EvaluationRequest(r.cell, macro))
            replayed.append((res.accuracy, -res.training_time))
        top = max(range(len(replayed)), key=lambda i: (*replayed[i], -i))
        assert rows[top] == best


class TestFinalTraining:
    def test_final_record_byte_stable(self, finished_run):
        run_model_selection(finished_run, default_selection())
        run_final_training(finished_run)
        first = (finished_run / "final.json").read_bytes()
        run_final_training(finished_run)
        assert (finished_run / "final.json").read_bytes() == first

    def test_final_training_map(self, finished_run):
        run_model_selection(finished_run, default_selection())
        ev = CountingEvaluator(seed=0)
        run_final_training(finished_run, evaluator=ev)
        req = ev.requests[-1]
        assert req.training["use_validation"] is False
        assert req.training["epochs"] == 600  # image input
        doc = json.loads((finished_run / "final.json").read_text())
        assert doc["training"]["epochs"] == 600

    def test_series_final_epochs(self, tmp_path):
        cfg = SearchConfig(
            operators=("identity", "7 conv", "2 maxpool"),
            macro=MacroConfig(motifs=2, normals_per_motif=1, filters=16,
                              input_shape=(36, 6), num_classes=14),
            max_blocks=2, beam=4, exploration_beam=0, seed=0,
            predictor_trials=1, predictor_iterations=80, predictor_patience=15,
        )
        run_dir = run_search(cfg, tmp_path / "run")
        run_model_selection(run_dir, default_selection(params_min=1e3,
                                                       params_max=5e6))
        ev = CountingEvaluator(seed=0)
        run_final_training(run_dir, evaluator=ev)
        assert ev.requests[-1].training["epochs"] == 200

    def test_missing_selection_is_an_error(self, tmp_path):
        cfg = SearchConfig(
            operators=OPS,
            macro=MacroConfig(motifs=2, normals_per_motif=1, filters=16),
            max_blocks=1, beam=4, seed=0,
        )
        run_dir = run_search(cfg, tmp_path / "run")
        with pytest.raises(CorruptState):
            run_final_training(run_dir)


class TestNoFeasible:
    def test_every_evaluation_failing_raises(self, finished_run):
        class FailingEvaluator:
            def evaluate(self, request):
                from cellnas.errors import EvaluationFailed
                raise EvaluationFailed("down")

            def close(self):
                pass

        with pytest.raises(NoFeasibleConfig):
            run_model_selection(finished_run, default_selection(),
                                evaluator=FailingEvaluator())
