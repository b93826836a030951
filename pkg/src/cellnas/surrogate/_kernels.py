"""Hot kernels for tree fitting and prediction.

Two interchangeable implementations live here: numba-compiled loops and a
pure-numpy fallback. Both follow the exact same arithmetic order, so they
produce bit-identical trees. Selection:

  * default: numba when importable,
  * ``CELLNAS_NO_NUMBA=1`` forces the numpy path.

``benchmarks/bench_gbdt.py`` times one against the other.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("CELLNAS_NO_NUMBA", "").lower() in ("1", "true", "yes")

HAVE_NUMBA = False
if not _DISABLED:
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:
        HAVE_NUMBA = False


def best_split_node_numpy(X, r, lam):
    """Best axis-aligned split of one tree node.

    X is (n, d) float64, r the residuals at the node. Returns
    (gain, feature, threshold); gain of -inf means no valid split. A row goes
    left when x[feature] <= threshold; the threshold is the largest left
    value, so partitions are exact. Gain ties break on smaller threshold,
    then smaller left count: the winner never depends on feature order.
    """
    n, d = X.shape
    best_gain = -np.inf
    best_f = -1
    best_thr = np.inf
    best_nl = n + 1
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        rs = r[order]
        cum = np.cumsum(rs)
        total = cum[-1]
        parent = total * total / (n + lam)
        nl = np.arange(1, n, dtype=np.float64)
        sl = cum[:-1]
        sr = total - sl
        gain = sl * sl / (nl + lam) + sr * sr / ((n - nl) + lam) - parent
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        g, thr, count_l = float(gain[i]), float(xs[i]), i + 1
        if (g > best_gain
                or (g == best_gain and thr < best_thr)
                or (g == best_gain and thr == best_thr and count_l < best_nl)):
            best_gain, best_f, best_thr, best_nl = g, f, thr, count_l
    return best_gain, best_f, best_thr


def predict_tree_numpy(feature, threshold, left, right, value, X):
    """Route every row of X down one tree; leaves have left == -1."""
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = left[node] >= 0
    while active.any():
        idx = np.nonzero(active)[0]
        cur = node[idx]
        go_left = X[idx, feature[cur]] <= threshold[cur]
        node[idx] = np.where(go_left, left[cur], right[cur])
        active = left[node] >= 0
    return value[node]


if HAVE_NUMBA:

    @njit(cache=True)
    def best_split_node_numba(X, r, lam):  # pragma: no cover - jitted
        n, d = X.shape
        best_gain = -np.inf
        best_f = -1
        best_thr = np.inf
        best_nl = n + 1
        for f in range(d):
            order = np.argsort(X[:, f], kind="mergesort")
            s = 0.0
            for i in range(n):
                s += r[order[i]]
            total = s
            parent = total * total / (n + lam)
            f_gain = -np.inf
            f_thr = np.inf
            f_nl = n + 1
            acc = 0.0
            for i in range(1, n):
                acc += r[order[i - 1]]
                if X[order[i], f] <= X[order[i - 1], f]:
                    continue
                sl = acc
                sr = total - acc
                gain = sl * sl / (i + lam) + sr * sr / ((n - i) + lam) - parent
                if gain > f_gain:
                    f_gain = gain
                    f_thr = X[order[i - 1], f]
                    f_nl = i
            if f_gain == -np.inf:
                continue
            if (f_gain > best_gain
                    or (f_gain == best_gain and f_thr < best_thr)
                    or (f_gain == best_gain and f_thr == best_thr and f_nl < best_nl)):
                best_gain = f_gain
                best_f = f
                best_thr = f_thr
                best_nl = f_nl
        return best_gain, best_f, best_thr

    @njit(cache=True)
    def predict_tree_numba(feature, threshold, left, right, value, X):  # pragma: no cover
        n = X.shape[0]
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            node = 0
            while left[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] = value[node]
        return out

    best_split_node = best_split_node_numba
    predict_tree = predict_tree_numba
else:
    best_split_node = best_split_node_numpy
    predict_tree = predict_tree_numpy
