"""Hot integer/float loops shared by the codec, the linker and the scorer.

Every kernel is written once as plain Python over numpy arrays.  When numba
is importable and ``CORPIPE_KERNELS`` is not set to ``numpy``, the same
source is compiled with ``numba.njit``; otherwise the interpreter runs it
directly.  Both paths must return identical results (see
``tests/test_kernels.py`` and ``benchmarks/bench_kernels.py``).
"""

import os

import numpy as np

BACKEND_ENV = "CORPIPE_KERNELS"


def _want_numba():
    choice = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if choice == "numpy":
        return False
    if choice != "numba":
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {choice!r}")
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = _want_numba()
BACKEND = "numba" if USE_NUMBA else "numpy"


def _maybe_jit(func):
    if not USE_NUMBA:
        return func
    from numba import njit

    return njit(cache=True, nogil=True)(func)


def decode_actions_py(pushes, pops):
    """Replay per-token PUSH/POP counts against a stack of open span starts.

    Returns ``(starts, ends, count, repairs)``; only the first ``count``
    entries of ``starts``/``ends`` are valid.  Spans are emitted in closing
    order.  A POP on an empty stack is skipped; spans still open after the
    last token are closed there.  Each such fix counts as one repair.
    """
    n = pushes.shape[0]
    total = 0
    for t in range(n):
        total += pushes[t]
    starts = np.empty(total, dtype=np.int64)
    ends = np.empty(total, dtype=np.int64)
    stack = np.empty(total, dtype=np.int64)
    depth = 0
    count = 0
    repairs = 0
    for t in range(n):
        for _ in range(pushes[t]):
            stack[depth] = t
            depth += 1
        for _ in range(pops[t]):
            if depth == 0:
                repairs += 1
                continue
            depth -= 1
            starts[count] = stack[depth]
            ends[count] = t
            count += 1
    while depth > 0:
        depth -= 1
        starts[count] = stack[depth]
        ends[count] = n - 1
        count += 1
        repairs += 1
    return starts, ends, count, repairs


def causal_argmax_py(scores):
    """Row-wise argmax over the lower triangle (``j <= i``); ties go left."""
    n = scores.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = 0
        best_val = scores[i, 0]
        for j in range(1, i + 1):
            v = scores[i, j]
            if v > best_val or (best_val != best_val and v == v):
                best_val = v
                best = j
        out[i] = best
    return out


def union_find_labels_py(antecedents):
    """Cluster labels for mentions linked by ``i -> antecedents[i]``.

    Labels are numbered 0, 1, ... in order of each cluster's first mention.
    """
    n = antecedents.shape[0]
    parent = np.arange(n)
    for i in range(n):
        ra = antecedents[i]
        while parent[ra] != ra:
            ra = parent[ra]
        ri = i
        while parent[ri] != ri:
            ri = parent[ri]
        if ra < ri:
            parent[ri] = ra
        elif ri < ra:
            parent[ra] = ri
    labels = np.empty(n, dtype=np.int64)
    remap = np.full(n, -1, dtype=np.int64)
    next_label = 0
    for i in range(n):
        r = i
        while parent[r] != r:
            r = parent[r]
        parent[i] = r
        if remap[r] < 0:
            remap[r] = next_label
            next_label += 1
        labels[i] = remap[r]
    return labels


def contingency_py(key_labels, response_labels, n_key, n_response):
    """Counts ``c[i, j]`` of mentions in key entity i and response entity j.

    A label of -1 marks a mention absent from that side.
    """
    c = np.zeros((n_key, n_response), dtype=np.int64)
    for m in range(key_labels.shape[0]):
        k = key_labels[m]
        r = response_labels[m]
        if k >= 0 and r >= 0:
            c[k, r] += 1
    return c


def min_cost_assignment_py(cost):
    """Optimal assignment for an ``n x m`` cost matrix with ``n <= m``.

    Shortest-augmenting-path Hungarian method with potentials, O(n^2 m).
    Returns ``col_of_row`` (length n).
    """
    n = cost.shape[0]
    m = cost.shape[1]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j] != 0:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


decode_actions = _maybe_jit(decode_actions_py)
causal_argmax = _maybe_jit(causal_argmax_py)
union_find_labels = _maybe_jit(union_find_labels_py)
contingency = _maybe_jit(contingency_py)
min_cost_assignment = _maybe_jit(min_cost_assignment_py)


def max_weight_assignment(weights):
    """Row->column assignment maximizing total weight of a rectangular matrix.

    Returns ``(rows, cols, total)`` with one pair per min(n, m).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, 0.0
    transposed = w.shape[0] > w.shape[1]
    if transposed:
        w = w.T
    cols = min_cost_assignment(np.ascontiguousarray(-w))
    rows = np.arange(w.shape[0], dtype=np.int64)
    total = float(w[rows, cols].sum())
    if transposed:
        rows, cols = cols, rows
        order = np.argsort(rows)
        rows, cols = rows[order], cols[order]
    return rows, cols, total
