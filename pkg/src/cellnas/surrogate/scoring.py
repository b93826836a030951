"""Prediction quality metrics: MAPE and Spearman rank correlation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ..errors import DegenerateInput


@dataclass(frozen=True)
class PredictionRecord:
    cell_id: str
    predicted: float
    measured: float | None = None


def score_predictions(records) -> dict[str, float]:
    """MAPE (percent) and Spearman rho over records carrying measurements.

    Raises DegenerateInput when fewer than two measured records exist or when
    either side is constant (rank correlation undefined) or a measurement is
    zero (MAPE undefined).
    """
    pairs = [(r.predicted, r.measured) for r in records if r.measured is not None]
    if len(pairs) < 2:
        raise DegenerateInput(f"need >= 2 measured records, got {len(pairs)}")
    pred = np.asarray([p for p, _ in pairs], dtype=np.float64)
    meas = np.asarray([m for _, m in pairs], dtype=np.float64)
    if np.any(meas == 0):
        raise DegenerateInput("zero measured value; MAPE undefined")
    if np.all(meas == meas[0]) or np.all(pred == pred[0]):
        raise DegenerateInput("constant values; rank correlation undefined")

    mape = float(np.mean(np.abs(pred - meas) / np.abs(meas)) * 100.0)
    rp = rankdata(pred)  # average ranks on ties
    rm = rankdata(meas)
    spearman = float(np.corrcoef(rp, rm)[0, 1])
    return {"mape": mape, "spearman": spearman}
