"""Gradient-boosted regression trees with K-fold ensembling and runtime
random-search over the boosting hyperparameters.

Trees are depth-limited least-squares regressors with an L2 leaf penalty,
grown greedily with exact split search. Each boosting iteration fits a tree
to the current residuals on a row subsample and early-stops on a held-out
fold. The fitted model is the mean of the fold models.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..cellspace import dag_views
from ..errors import InsufficientData
from . import _kernels

_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class RegressorConfig:
    """One boosting configuration."""

    learning_rate: float = 0.1
    depth: int = 5
    l2_leaf_reg: float = 3.0
    subsample: float = 0.8
    iterations: int = 2500
    early_stop_patience: int = 50
    folds: int = 5

    def __post_init__(self):
        if self.learning_rate <= 0 or self.depth < 1 or self.l2_leaf_reg < 0:
            raise ValueError("invalid boosting configuration")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")
        if self.iterations < 1 or self.folds < 2 or self.early_stop_patience < 1:
            raise ValueError("invalid boosting configuration")


@dataclass(frozen=True)
class SearchRanges:
    """Random-search space for the boosting hyperparameters."""

    learning_rate: tuple[float, float] = (0.02, 0.2)
    depth: tuple[int, int] = (3, 7)  # half-open, like numpy integers()
    l2_leaf_reg: tuple[float, float] = (0.1, 5.0)
    subsample: tuple[float, float] = (0.5, 1.0)
    iterations: int = 2500
    early_stop_patience: int = 50
    folds: int = 5

    def sample(self, rng: np.random.Generator) -> RegressorConfig:
        return RegressorConfig(
            learning_rate=float(rng.uniform(*self.learning_rate)),
            depth=int(rng.integers(self.depth[0], self.depth[1])),
            l2_leaf_reg=float(rng.uniform(*self.l2_leaf_reg)),
            subsample=float(rng.uniform(*self.subsample)),
            iterations=self.iterations,
            early_stop_patience=self.early_stop_patience,
            folds=self.folds,
        )


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _kernels.predict_tree(
            self.feature, self.threshold, self.left, self.right, self.value, X
        )


def _grow_tree(X: np.ndarray, r: np.ndarray, depth: int, lam: float) -> Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def leaf_value(idx):
        return float(r[idx].sum() / (idx.size + lam))

    def add_node(idx, level):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(leaf_value(idx))
        if level >= depth or idx.size < 2:
            return node
        gain, f, thr = _kernels.best_split_node(
            np.ascontiguousarray(X[idx]), np.ascontiguousarray(r[idx]), lam
        )
        if gain <= _MIN_GAIN or f < 0:
            return node
        mask = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = add_node(idx[mask], level + 1)
        right[node] = add_node(idx[~mask], level + 1)
        return node

    add_node(np.arange(X.shape[0]), 0)
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
    )


@dataclass
class FoldModel:
    base: float
    learning_rate: float
    trees: list[Tree] = field(default_factory=list)
    coef: np.ndarray | None = None  # ridge-linear base; trees boost its residual

    def base_prediction(self, X: np.ndarray) -> np.ndarray:
        pred = np.full(X.shape[0], self.base, dtype=np.float64)
        if self.coef is not None:
            pred = pred + X @ self.coef
        return pred

    def predict(self, X: np.ndarray) -> np.ndarray:
        pred = self.base_prediction(X)
        for t in self.trees:
            pred += self.learning_rate * t.predict(X)
        return pred


_RIDGE_PENALTY = 1e-2


def _ridge_base(X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Least squares with a small L2 penalty on the slopes (intercept free).

    Gives the boosted trees an extrapolating starting point: tree leaves can
    only replay target values seen in training, while cells grown past the
    training population move along the linear trend."""
    n, d = X.shape
    mean_x = X.mean(axis=0)
    mean_y = float(np.mean(y))
    Xc = X - mean_x
    yc = y - mean_y
    coef = np.linalg.solve(Xc.T @ Xc + _RIDGE_PENALTY * np.eye(d), Xc.T @ yc)
    return mean_y - float(mean_x @ coef), coef


def _fit_fold(X_tr, y_tr, X_val, y_val, cfg: RegressorConfig,
              rng: np.random.Generator, linear_base: bool) -> tuple[FoldModel, float]:
    """Boost on (X_tr, y_tr), early-stopping on the held-out fold.

    Returns the model truncated at its best iteration and the best RMSE."""
    if linear_base and len(y_tr) > 2:
        intercept, coef = _ridge_base(X_tr, y_tr)
        model = FoldModel(base=intercept, learning_rate=cfg.learning_rate,
                          coef=coef)
    else:
        model = FoldModel(base=float(np.mean(y_tr)), learning_rate=cfg.learning_rate)
    pred_tr = model.base_prediction(X_tr)
    pred_val = model.base_prediction(X_val)
    best_rmse = float(np.sqrt(np.mean((y_val - pred_val) ** 2)))
    best_iter = -1
    n = y_tr.size
    n_sub = max(2, int(round(cfg.subsample * n)))
    for it in range(cfg.iterations):
        rows = (rng.permutation(n)[:n_sub] if n_sub < n
                else np.arange(n))
        resid = y_tr - pred_tr
        tree = _grow_tree(X_tr[rows], resid[rows], cfg.depth, cfg.l2_leaf_reg)
        model.trees.append(tree)
        pred_tr += cfg.learning_rate * tree.predict(X_tr)
        pred_val += cfg.learning_rate * tree.predict(X_val)
        rmse = float(np.sqrt(np.mean((y_val - pred_val) ** 2)))
        if rmse < best_rmse:
            best_rmse = rmse
            best_iter = it
        elif it - best_iter >= cfg.early_stop_patience:
            break
    del model.trees[best_iter + 1:]
    return model, best_rmse


def link_apply(link: str, y: np.ndarray) -> np.ndarray:
    """Target transform fitted by the trees. 'neglog1m' spreads targets that
    saturate toward 1 so the top of the range keeps resolution."""
    if link == "neglog1m":
        return -np.log(np.clip(1.0 - y, 1e-9, None))
    return y


def link_invert(link: str, z: np.ndarray) -> np.ndarray:
    if link == "neglog1m":
        return 1.0 - np.exp(-z)
    return z


class EnsembleModel:
    """Mean of per-fold boosted models (in link space), with an optional
    inverse link and output clipping on the way out."""

    def __init__(self, folds: Sequence[FoldModel], config: RegressorConfig,
                 clip: tuple[float | None, float | None] = (None, None),
                 link: str = "identity"):
        self.folds = list(folds)
        self.config = config
        self.clip = clip
        self.link = link

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        pred = link_invert(self.link, np.mean(self.fold_predictions(X), axis=0))
        lo, hi = self.clip
        if lo is not None or hi is not None:
            pred = np.clip(pred, lo if lo is not None else -np.inf,
                           hi if hi is not None else np.inf)
        return pred

    def fold_predictions(self, X: np.ndarray) -> np.ndarray:
        """Raw per-fold outputs, in link space; predict() is their mean
        through the inverse link and clip."""
        X = np.asarray(X, dtype=np.float64)
        return np.stack([m.predict(X) for m in self.folds])

    # -- persistence: a self-describing tree-list document, reloaded bit-exactly

    def dump(self, path: str | Path) -> None:
        doc = {
            "format": "cellnas-gbdt/1",
            "clip": list(self.clip),
            "link": self.link,
            "config": self.config.__dict__,
            "folds": [
                {
                    "base": m.base,
                    "learning_rate": m.learning_rate,
                    "coef": None if m.coef is None else m.coef.tolist(),
                    "trees": [
                        {
                            "feature": t.feature.tolist(),
                            "threshold": t.threshold.tolist(),
                            "left": t.left.tolist(),
                            "right": t.right.tolist(),
                            "value": t.value.tolist(),
                        }
                        for t in m.trees
                    ],
                }
                for m in self.folds
            ],
        }
        Path(path).write_text(json.dumps(doc), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EnsembleModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != "cellnas-gbdt/1":
            raise ValueError(f"not a model dump: {path}")
        folds = []
        for m in doc["folds"]:
            trees = [
                Tree(
                    feature=np.asarray(t["feature"], dtype=np.int64),
                    threshold=np.asarray(t["threshold"], dtype=np.float64),
                    left=np.asarray(t["left"], dtype=np.int64),
                    right=np.asarray(t["right"], dtype=np.int64),
                    value=np.asarray(t["value"], dtype=np.float64),
                )
                for t in m["trees"]
            ]
            coef = m.get("coef")
            folds.append(FoldModel(
                base=m["base"], learning_rate=m["learning_rate"], trees=trees,
                coef=None if coef is None else np.asarray(coef, dtype=np.float64)))
        clip = tuple(None if v is None else float(v) for v in doc["clip"])
        return cls(folds, RegressorConfig(**doc["config"]), clip,
                   link=doc.get("link", "identity"))


def _fold_slices(n: int, folds: int, rng: np.random.Generator):
    """Shuffled contiguous folds; collapses to leave-one-out when n < folds."""
    k = min(folds, n)
    perm = rng.permutation(n)
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [(np.setdiff1d(perm, perm[a:b]), perm[a:b])
            for a, b in zip(bounds[:-1], bounds[1:])]


def fit_regressor(
    rows: Sequence[tuple[Sequence[float], float]],
    search_space: SearchRanges | None = None,
    trials: int = 8,
    seed: int = 0,
    clip: tuple[float | None, float | None] = (None, None),
    link: str = "identity",
    linear_base: bool = False,
) -> EnsembleModel:
    """Random-search `trials` configurations with K-fold validation and keep
    the one with the best mean held-out RMSE. Deterministic given seed."""
    if len(rows) < 2:
        raise InsufficientData(f"need at least 2 rows, got {len(rows)}")
    X = np.asarray([list(f) for f, _ in rows], dtype=np.float64)
    y = np.asarray([t for _, t in rows], dtype=np.float64)
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise InsufficientData("non-finite features or targets")
    y = link_apply(link, y)
    space = search_space or SearchRanges()

    seed_root = np.random.SeedSequence(seed)
    sampler = np.random.default_rng(seed_root.spawn(1)[0])
    split_rng = np.random.default_rng(seed_root.spawn(1)[0])
    splits = _fold_slices(len(rows), space.folds, split_rng)

    best: tuple[float, int, list[FoldModel], RegressorConfig] | None = None
    for trial in range(max(1, trials)):
        cfg = space.sample(sampler)
        fold_models = []
        fold_rmse = []
        for fi, (tr, val) in enumerate(splits):
            rng = np.random.default_rng(
                np.random.SeedSequence((seed, trial, fi)))
            model, rmse = _fit_fold(X[tr], y[tr], X[val], y[val], cfg, rng,
                                    linear_base)
            fold_models.append(model)
            fold_rmse.append(rmse)
        score = float(np.mean(fold_rmse))
        if best is None or score < best[0]:
            best = (score, trial, fold_models, cfg)
    assert best is not None
    return EnsembleModel(best[2], best[3], clip=clip, link=link)


# ---------------------------------------------------------------------------
# Cell encoding for the default accuracy predictor
# ---------------------------------------------------------------------------


def encode_cell(cell, vocabulary: Sequence[str], max_blocks: int,
                max_lookback: int) -> list[float]:
    """Fixed-length encoding: per slot a one-hot operator plus a positive
    input index, zero-padded to max_blocks blocks (empty slots are all-zero),
    followed by position-free per-operator totals.

    Input refs map to 1..: lookback -L becomes 1, -1 becomes L, block j
    becomes L + 1 + j; 0 is reserved for padding. The trailing totals
    (operator counts, lookback counts, edge count, depth, block count) let a
    tree model trained on shallow cells rank deeper ones: the slots of a
    never-seen block position are constant in its training data, while
    aggregate counts extrapolate.
    """
    index = {tok: i for i, tok in enumerate(vocabulary)}
    width = len(vocabulary) + 1
    vec = [0.0] * (max_blocks * 2 * width)
    counts = [0.0] * len(vocabulary)
    ref_counts = [0.0] * max_lookback
    for bi, blk in enumerate(cell.blocks):
        for si, (ref, op) in enumerate(zip(blk.inputs(), blk.operators())):
            off = (bi * 2 + si) * width
            vec[off + index[op.token]] = 1.0
            vec[off + len(vocabulary)] = float(ref + max_lookback + 1)
            counts[index[op.token]] += 1.0
            if ref < 0:
                ref_counts[-ref - 1] += 1.0
    views = dag_views(cell)
    return (vec + counts + ref_counts
            + [float(views.edges), float(views.depth), float(len(cell.blocks))])


def fit_accuracy_default(
    cells_with_accuracy,
    vocabulary: Sequence[str],
    max_blocks: int,
    max_lookback: int,
    search_space: SearchRanges | None = None,
    trials: int = 8,
    seed: int = 0,
) -> EnsembleModel:
    """Default accuracy model: the K-fold GBDT over padded one-hot encodings,
    fitted through the saturation-spreading link, predictions clamped to
    [0, 1]."""
    rows = []
    for cell, acc in cells_with_accuracy:
        if not 0 <= acc <= 1:
            raise ValueError(f"accuracy out of range: {acc}")
        rows.append((encode_cell(cell, vocabulary, max_blocks, max_lookback), acc))
    return fit_regressor(rows, search_space, trials, seed, clip=(0.0, 1.0),
                         link="neglog1m", linear_base=True)
