"""Minimum-cost injective assignment (Hungarian) with deterministic ties.

The solver is the shortest-augmenting-path formulation with row/column
potentials. Among equally cheap assignments it returns the lexicographically
smallest assignment vector: row 0 gets the lowest usable column, then row 1,
and so on. Tie resolution works on the tight (zero-reduced-cost) subgraph;
a candidate column is kept only if the remaining rows can still be perfectly
matched, which is exactly membership in some optimal assignment.
"""

from __future__ import annotations

import numpy as np

from ovdet.errors import ConfigError


def _solve_potentials(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest-augmenting-path LSAP. Returns (row_to_col, u, v)."""
    n, m = cost.shape
    inf = np.inf
    u = np.zeros(n)
    v = np.zeros(m)
    col_row = np.full(m, -1, dtype=np.int64)  # column -> matched row
    for i in range(n):
        # Dijkstra over columns, starting from row i
        minv = np.full(m, inf)
        way = np.full(m, -1, dtype=np.int64)  # predecessor column on the path
        used = np.zeros(m, dtype=bool)
        cur_row = i
        j0 = -1  # previous column on the path (-1 = the virtual start)
        while True:
            reduced = cost[cur_row] - u[cur_row] - v
            better = ~used & (reduced < minv)
            minv[better] = reduced[better]
            way[better] = j0
            cand = np.where(used, inf, minv)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            # grow potentials along the explored region
            explored_cols = used
            u[i] += delta
            if explored_cols.any():
                rows = col_row[explored_cols]
                u[rows] += delta
                v[explored_cols] -= delta
            minv[~used] -= delta
            used[j1] = True
            if col_row[j1] == -1:
                # augment: flip the alternating path back to the start
                j = j1
                while j != -1:
                    prev = way[j]
                    col_row[j] = col_row[prev] if prev != -1 else i
                    j = prev
                break
            cur_row = col_row[j1]
            j0 = j1
    row_to_col = np.full(n, -1, dtype=np.int64)
    matched = col_row >= 0
    row_to_col[col_row[matched]] = np.nonzero(matched)[0]
    return row_to_col, u, v


def _rows_matchable(adj: np.ndarray, rows: list[int], avail: np.ndarray) -> bool:
    """Can every row in ``rows`` be matched into distinct available columns?"""
    m = adj.shape[1]
    col_owner = np.full(m, -1, dtype=np.int64)

    def augment(r: int, visited: np.ndarray) -> bool:
        for j in np.nonzero(adj[r] & avail & ~visited)[0]:
            visited[j] = True
            if col_owner[j] == -1 or augment(col_owner[j], visited):
                col_owner[j] = r
                return True
        return False

    for r in rows:
        if not augment(r, np.zeros(m, dtype=bool)):
            return False
    return True


def _lexicographic_on_tight_graph(cost, row_to_col, u, v):
    n, m = cost.shape
    tol = 1e-9 * max(1.0, float(np.abs(cost).max(initial=0.0)))
    tight = (cost - u[:, None] - v[None, :]) <= tol
    avail = np.ones(m, dtype=bool)
    assign = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        remaining = list(range(i + 1, n))
        for j in np.nonzero(tight[i] & avail)[0]:
            avail[j] = False
            if _rows_matchable(tight, remaining, avail):
                assign[i] = j
                break
            avail[j] = True
        if assign[i] == -1:
            return None  # tie structure not resolvable on this tight graph
    return assign


def _lexicographic_by_resolving(cost, best_total):
    """Exact fallback: force each row/column pair and re-solve the remainder."""
    n, m = cost.shape
    tol = 1e-9 * max(1.0, float(np.abs(cost).max(initial=0.0)))
    assign = np.full(n, -1, dtype=np.int64)
    row_ids = np.arange(n)
    col_ids = np.arange(m)
    fixed_cost = 0.0
    for i in range(n):
        rest_rows = row_ids[i + 1:]
        for j in col_ids:
            if j in assign[:i]:
                continue
            trial = fixed_cost + cost[i, j]
            if len(rest_rows):
                sub_cols = np.array([c for c in col_ids if c != j and c not in assign[:i]])
                sub = cost[np.ix_(rest_rows, sub_cols)]
                sub_assign, _, _ = _solve_potentials(sub)
                trial += cost[np.ix_(rest_rows, sub_cols)][np.arange(len(rest_rows)), sub_assign].sum()
            if trial <= best_total + tol:
                assign[i] = j
                fixed_cost += cost[i, j]
                break
        if assign[i] == -1:
            raise RuntimeError("assignment refinement failed to reproduce the optimum")
    return assign


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Optimal injective row->column assignment for an [N, M] cost matrix.

    Requires N <= M and finite costs. Returns the column index per row; the
    total cost is minimal and ties break to the lexicographically smallest
    assignment vector.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ConfigError("cost must be a 2-D matrix")
    n, m = cost.shape
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if n > m:
        raise ConfigError(f"cannot assign {n} rows into {m} columns")
    if not np.isfinite(cost).all():
        raise ConfigError("cost matrix contains non-finite entries")

    row_to_col, u, v = _solve_potentials(cost)
    best_total = float(cost[np.arange(n), row_to_col].sum())

    assign = _lexicographic_on_tight_graph(cost, row_to_col, u, v)
    if assign is not None:
        total = float(cost[np.arange(n), assign].sum())
        tol = 1e-9 * max(1.0, float(np.abs(cost).max(initial=0.0)))
        if total <= best_total + tol:
            return assign
    return _lexicographic_by_resolving(cost, best_total)


def assignment_cost(cost: np.ndarray, assign: np.ndarray) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(cost[np.arange(len(assign)), assign].sum())
