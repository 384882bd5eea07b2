"""Exact discrete optimal transport between histograms, and its one-hot closed form.

The general path solves the transportation linear program

    minimize  sum_ij D[i, j] * T[i, j]
    over      T >= 0,  row sums = s,  column sums = t

with a primal transportation simplex.  When the target is a one-hot
histogram the feasible set collapses to a single plan (all source mass moves
into the target column), so the loss reduces to the O(N) weighted sum
``sum_i s[i] * D[i, j*]`` and its gradient with respect to the prediction is
the cost column itself.  Both routes are kept: the simplex is the
regularization-free oracle the closed form is verified against.

Cross-entropy and nearest-cost regression baselines for the same one-hot
setting live here too.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError
from .ground import GroundMatrix

__all__ = [
    "TransportPlan",
    "one_hot",
    "softmax",
    "solve_exact_ot",
    "one_hot_loss",
    "one_hot_loss_grad_probs",
    "one_hot_loss_grad_logits",
    "ce_loss",
    "regression_loss",
    "validate_plan",
    "validate_histogram",
]

BALANCE_TOL = 1e-8
CE_CLAMP = 1e-12


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """A coupling between two histograms.

    ``source`` and ``target`` are the (balanced) histograms the plan couples;
    row sums of ``plan`` match ``source`` and column sums match ``target``.
    """

    plan: np.ndarray
    source: np.ndarray
    target: np.ndarray


def _cost_array(cost) -> np.ndarray:
    if isinstance(cost, GroundMatrix):
        return cost.entries
    arr = np.asarray(cost, dtype=float)
    if arr.ndim != 2:
        raise DataError(f"cost matrix must be 2-D, got shape {arr.shape}")
    return arr


def validate_histogram(values, *, name: str = "histogram", unit_sum: bool = False) -> np.ndarray:
    """Check nonnegativity (and optionally unit mass) of a histogram vector."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise DataError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} has non-finite entries")
    if np.any(arr < 0):
        bad = int(np.argmax(arr < 0))
        raise DataError(f"{name} has a negative entry at index {bad}: {arr[bad]!r}")
    if unit_sum and abs(float(arr.sum()) - 1.0) > BALANCE_TOL:
        raise DataError(f"{name} mass {arr.sum()!r} is not 1 within {BALANCE_TOL}")
    return arr


def one_hot(index: int, size: int) -> np.ndarray:
    if not 0 <= index < size:
        raise DataError(f"one-hot index {index} out of range for size {size}")
    out = np.zeros(size)
    out[index] = 1.0
    return out


def softmax(logits) -> np.ndarray:
    """Max-subtracted softmax; stable for arbitrarily large logits."""
    z = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DataError("logits must be finite")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# exact solver
# ---------------------------------------------------------------------------


def solve_exact_ot(source, target, cost) -> tuple[float, TransportPlan]:
    """Exact optimal transport loss and an optimal plan.

    The target is rescaled to the source mass (masses must already agree
    within 1e-8), the balanced program is solved with a transportation
    simplex, and the loss is ``sum(D * T)`` at the optimal vertex.
    """
    D = _cost_array(cost)
    s = validate_histogram(source, name="source histogram")
    t = validate_histogram(target, name="target histogram")
    m, n = D.shape
    if len(s) != m or len(t) != n:
        raise DataError(
            f"dimension mismatch: source {len(s)}, target {len(t)}, cost {m}x{n}"
        )
    if np.any(D < 0):
        raise DataError("cost matrix has negative entries")
    s_mass = float(s.sum())
    t_mass = float(t.sum())
    if s_mass <= 0 or t_mass <= 0:
        raise DataError("histograms must carry positive mass")
    if abs(s_mass - t_mass) > BALANCE_TOL:
        raise DataError(
            f"unbalanced histograms: source mass {s_mass!r} vs target mass {t_mass!r}"
        )
    t_balanced = t * (s_mass / t_mass)
    flow = _transportation_simplex(D, s, t_balanced)
    loss = float(np.sum(D * flow))
    return loss, TransportPlan(plan=flow, source=s.copy(), target=t_balanced)


def _northwest_corner(supply: np.ndarray, demand: np.ndarray):
    """Initial basic feasible solution; returns (flow, basis cell list).

    The staircase visits exactly m + n - 1 cells (degenerate zero allocations
    included), which is a spanning tree of the bipartite row/column graph.
    """
    m, n = len(supply), len(demand)
    flow = np.zeros((m, n))
    basis = []
    rem_s = supply.astype(float).copy()
    rem_d = demand.astype(float).copy()
    i = j = 0
    while True:
        q = min(rem_s[i], rem_d[j])
        flow[i, j] = q
        basis.append((i, j))
        rem_s[i] -= q
        rem_d[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if j == n - 1 or (rem_s[i] <= rem_d[j] and i < m - 1):
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(cost, row_adj, col_adj, m, n):
    """Dual variables with u[0] = 0, solved along the spanning-tree basis."""
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    stack = [(True, 0)]
    while stack:
        is_row, idx = stack.pop()
        if is_row:
            for j in row_adj[idx]:
                if np.isnan(v[j]):
                    v[j] = cost[idx, j] - u[idx]
                    stack.append((False, j))
        else:
            for i in col_adj[idx]:
                if np.isnan(u[i]):
                    u[i] = cost[i, idx] - v[idx]
                    stack.append((True, i))
    if np.isnan(u).any() or np.isnan(v).any():
        raise NumericError("transportation basis is not a spanning tree (defect)")
    return u, v


def _basis_cycle(entering, row_adj, col_adj):
    """Cells of the unique cycle the entering cell closes in the basis tree.

    Returned in cycle order starting at the entering cell, so even positions
    gain flow and odd positions lose flow.
    """
    i0, j0 = entering
    start = (True, i0)
    goal = (False, j0)
    parent = {start: None}
    queue = [start]
    while queue:
        node = queue.pop()
        if node == goal:
            break
        is_row, idx = node
        neighbors = row_adj[idx] if is_row else col_adj[idx]
        for other in neighbors:
            nxt = (not is_row, other)
            if nxt not in parent:
                parent[nxt] = node
                queue.append(nxt)
    else:  # pragma: no cover - spanning tree always connects row i0 to col j0
        raise NumericError("basis graph disconnected (defect)")

    path_nodes = [goal]
    while parent[path_nodes[-1]] is not None:
        path_nodes.append(parent[path_nodes[-1]])
    path_nodes.reverse()  # row i0 ... col j0
    path_cells = []
    for a, b in zip(path_nodes, path_nodes[1:]):
        (a_row, ai), (_, bi) = a, b
        path_cells.append((ai, bi) if a_row else (bi, ai))
    return [entering] + list(reversed(path_cells))


def _transportation_simplex(cost, supply, demand) -> np.ndarray:
    """Primal simplex on the balanced transportation polytope.

    Entering variable: most negative reduced cost, ties broken row-major.
    Leaving variable: smallest flow on the cycle's losing positions, ties
    broken row-major (a lexicographic rule).  If degeneracy stalls progress
    the pivot choice switches to the first-negative (Bland) rule, which
    cannot cycle.  Non-termination past a generous cap is treated as a
    defect, not an expected outcome.
    """
    m, n = cost.shape
    flow, basis_cells = _northwest_corner(supply, demand)
    basis = set(basis_cells)
    row_adj = {i: set() for i in range(m)}
    col_adj = {j: set() for j in range(n)}
    for i, j in basis:
        row_adj[i].add(j)
        col_adj[j].add(i)
    basis_mask = np.zeros((m, n), dtype=bool)
    for i, j in basis:
        basis_mask[i, j] = True

    tol = 1e-10 * max(1.0, float(np.abs(cost).max()))
    bland_after = 20 * (m + n)
    max_pivots = 1000 + 200 * (m + n)

    for pivot_count in range(max_pivots):
        u, v = _potentials(cost, row_adj, col_adj, m, n)
        reduced = cost - u[:, None] - v[None, :]
        reduced[basis_mask] = 0.0
        if pivot_count < bland_after:
            flat = int(np.argmin(reduced))  # argmin returns the first (row-major) minimum
            if reduced.flat[flat] >= -tol:
                return flow
            entering = divmod(flat, n)
        else:
            candidates = np.argwhere(reduced < -tol)
            if len(candidates) == 0:
                return flow
            entering = tuple(int(x) for x in candidates[0])

        cycle = _basis_cycle(entering, row_adj, col_adj)
        losing = cycle[1::2]
        theta = min(flow[c] for c in losing)
        leaving = min(c for c in losing if flow[c] == theta)

        for pos, (ci, cj) in enumerate(cycle):
            if pos % 2 == 0:
                flow[ci, cj] += theta
            else:
                flow[ci, cj] -= theta
        flow[leaving] = 0.0

        basis.remove(leaving)
        basis.add(entering)
        basis_mask[leaving] = False
        basis_mask[entering] = True
        row_adj[leaving[0]].discard(leaving[1])
        col_adj[leaving[1]].discard(leaving[0])
        row_adj[entering[0]].add(entering[1])
        col_adj[entering[1]].add(entering[0])

    raise NumericError("transportation simplex did not converge (defect)")


# ---------------------------------------------------------------------------
# one-hot closed form and baselines
# ---------------------------------------------------------------------------


def _check_index(index: int, size: int) -> int:
    index = int(index)
    if not 0 <= index < size:
        raise DataError(f"class index {index} out of range for {size} classes")
    return index


def one_hot_loss(prediction, target_index: int, cost) -> float:
    """Transport loss against a one-hot target: ``sum_i s[i] * D[i, j*]``.

    Single O(N) pass; equals the exact solver's optimum because the one-hot
    marginal admits exactly one feasible plan.
    """
    D = _cost_array(cost)
    s = validate_histogram(prediction, name="prediction")
    if len(s) != D.shape[0]:
        raise DataError(f"prediction length {len(s)} does not match cost {D.shape}")
    j = _check_index(target_index, D.shape[1])
    return float(s @ D[:, j])


def one_hot_loss_grad_probs(prediction, target_index: int, cost) -> np.ndarray:
    """Gradient of the one-hot loss in the prediction probabilities: the cost
    column ``D[:, j*]``."""
    D = _cost_array(cost)
    s = validate_histogram(prediction, name="prediction")
    if len(s) != D.shape[0]:
        raise DataError(f"prediction length {len(s)} does not match cost {D.shape}")
    j = _check_index(target_index, D.shape[1])
    return D[:, j].copy()


def one_hot_loss_grad_logits(logits, target_index: int, cost) -> np.ndarray:
    """Gradient of ``one_hot_loss(softmax(z), j*)`` in the logits ``z``.

    Chain rule through the softmax Jacobian gives
    ``g[k] = s[k] * (D[k, j*] - loss)``; the components sum to zero.
    """
    D = _cost_array(cost)
    z = np.asarray(logits, dtype=float)
    if z.ndim != 1 or len(z) != D.shape[0]:
        raise DataError(f"logits shape {z.shape} does not match cost {D.shape}")
    j = _check_index(target_index, D.shape[1])
    s = softmax(z)
    column = D[:, j]
    loss = float(s @ column)
    return s * (column - loss)


def ce_loss(prediction, target_index: int) -> float:
    """Cross-entropy against a one-hot target: ``-log s[j*]``.

    Probabilities below 1e-12 are clamped (with a warning) instead of
    erroring; the loss is undefined at exactly zero.
    """
    s = validate_histogram(prediction, name="prediction")
    j = _check_index(target_index, len(s))
    p = float(s[j])
    if p < CE_CLAMP:
        warnings.warn(
            f"cross-entropy: probability {p!r} at target clamped to {CE_CLAMP}",
            RuntimeWarning,
            stacklevel=2,
        )
        p = CE_CLAMP
    return -float(np.log(p))


def regression_loss(prediction, target_index: int, cost) -> float:
    """Hard-prediction baseline: cost of the argmax class against the target
    (ties broken toward the lowest index)."""
    D = _cost_array(cost)
    s = validate_histogram(prediction, name="prediction")
    if len(s) != D.shape[0]:
        raise DataError(f"prediction length {len(s)} does not match cost {D.shape}")
    j = _check_index(target_index, D.shape[1])
    i_star = int(np.argmax(s))
    return float(D[i_star, j])


def validate_plan(plan: TransportPlan, tol: float = 1e-8) -> list[str]:
    """Check the four coupling constraints; returns violation messages
    (empty list means the plan is valid).

    Constraints: entrywise nonnegativity, row sums at most the source masses,
    column sums at most the target masses, and total mass equal to the
    smaller histogram mass.
    """
    T = np.asarray(plan.plan, dtype=float)
    s = np.asarray(plan.source, dtype=float)
    t = np.asarray(plan.target, dtype=float)
    if T.shape != (len(s), len(t)):
        raise DataError(f"plan shape {T.shape} does not match histograms ({len(s)}, {len(t)})")
    violations = []

    negatives = np.argwhere(T < -tol)
    if len(negatives):
        i, j = (int(x) for x in negatives[0])
        violations.append(
            f"nonnegativity violated at ({i}, {j}): {T[i, j]!r} ({len(negatives)} entries)"
        )
    row_excess = T.sum(axis=1) - s
    bad_rows = np.nonzero(row_excess > tol)[0]
    if len(bad_rows):
        i = int(bad_rows[0])
        violations.append(
            f"row sum exceeds source mass at row {i}: {T[i].sum()!r} > {s[i]!r} "
            f"({len(bad_rows)} rows)"
        )
    col_excess = T.sum(axis=0) - t
    bad_cols = np.nonzero(col_excess > tol)[0]
    if len(bad_cols):
        j = int(bad_cols[0])
        violations.append(
            f"column sum exceeds target mass at column {j}: {T[:, j].sum()!r} > {t[j]!r} "
            f"({len(bad_cols)} columns)"
        )
    total = float(T.sum())
    expected = min(float(s.sum()), float(t.sum()))
    if abs(total - expected) > tol:
        violations.append(f"total mass {total!r} differs from min marginal mass {expected!r}")
    return violations
