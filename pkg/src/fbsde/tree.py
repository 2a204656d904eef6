"""Event-tree model of a discrete-time, finite-state driving process.

The driving process takes one of N states per step; observing it up to a
horizon T generates an N-ary tree whose depth-t nodes are the possible
histories.  Nodes are stored level by level in lexicographic path order, so
relationship lookups are index arithmetic: the children of node i at depth t
are nodes i*N+k at depth t+1, its parent is node i // N.  The root state is
fixed by convention (state 1); nothing downstream depends on it.

Trees and adapted processes are immutable after construction and safe to
share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BranchOutOfRange,
    LeafNodeError,
    MissingValue,
    NonPositiveProbability,
    RowSumMismatch,
    ShapeMismatch,
)

#: Absolute tolerance for probability-row sums.  Rows further from one are
#: rejected outright; silent renormalization would hide input bugs.
ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class NodeId:
    """Address of a node: its depth and the 1-based branch path from the root."""

    depth: int
    path: tuple[int, ...]

    def __post_init__(self):
        if len(self.path) != self.depth:
            raise ShapeMismatch(f"path length {len(self.path)} != depth {self.depth}")

    def __str__(self):
        return "root" if not self.path else "-".join(str(b) for b in self.path)


def _as_depth_index(tree, node):
    """Normalize a NodeId or (depth, index) pair to (depth, index)."""
    if isinstance(node, NodeId):
        if any(b < 1 or b > tree.N for b in node.path):
            raise BranchOutOfRange(f"path entries must lie in 1..{tree.N}: {node.path}")
        idx = 0
        for b in node.path:
            idx = idx * tree.N + (b - 1)
        t = node.depth
    else:
        t, idx = node
    if not 0 <= t <= tree.T:
        raise MissingValue(f"depth {t} outside 0..{tree.T}")
    if not 0 <= idx < tree.num_nodes(t):
        raise MissingValue(f"node index {idx} outside level {t} (size {tree.num_nodes(t)})")
    return int(t), int(idx)


class ScenarioTree:
    """N-ary scenario tree with per-node transition probabilities.

    ``transition[t]`` has shape ``(N**t, N)``; row ``(t, i)`` is the
    conditional law of the next state at node i of depth t.  Every entry is
    strictly positive and every row sums to one within ``ROW_SUM_TOL``.
    """

    def __init__(self, N, T, transition):
        N = int(N)
        T = int(T)
        if N < 2:
            raise ValueError("branching factor must be at least 2")
        if T < 1:
            raise ValueError("horizon must be at least 1")
        if len(transition) != T:
            raise ShapeMismatch(f"expected {T} transition levels, got {len(transition)}")
        levels = []
        for t, rows in enumerate(transition):
            rows = np.asarray(rows, dtype=float)
            if rows.shape != (N**t, N):
                raise ShapeMismatch(
                    f"transition level {t} has shape {rows.shape}, expected {(N**t, N)}"
                )
            if not np.isfinite(rows).all():
                raise NonPositiveProbability(f"non-finite probability at level {t}")
            if (rows <= 0.0).any():
                bad = int(np.argwhere(rows <= 0.0)[0][0])
                raise NonPositiveProbability(
                    f"transition row (t={t}, node={bad}) has a non-positive entry"
                )
            sums = rows.sum(axis=1)
            off = np.abs(sums - 1.0)
            if (off > ROW_SUM_TOL).any():
                bad = int(np.argmax(off))
                raise RowSumMismatch(
                    f"transition row (t={t}, node={bad}) sums to {sums[bad]!r}"
                )
            rows = rows.copy()
            rows.flags.writeable = False
            levels.append(rows)
        self.N = N
        self.T = T
        self.transition = tuple(levels)
        probs = [np.ones(1)]
        for t in range(T):
            nxt = (probs[t][:, None] * self.transition[t]).reshape(-1)
            nxt.flags.writeable = False
            probs.append(nxt)
        probs[0].flags.writeable = False
        self._level_probs = tuple(probs)

    def num_nodes(self, t):
        return self.N**t

    def level_probs(self, t):
        """Unconditional probabilities of the depth-t nodes (sums to one)."""
        if not 0 <= t <= self.T:
            raise MissingValue(f"depth {t} outside 0..{self.T}")
        return self._level_probs[t]

    def row(self, node):
        """Transition row at a non-leaf node."""
        t, idx = _as_depth_index(self, node)
        if t >= self.T:
            raise LeafNodeError(f"node at depth {t} is a leaf")
        return self.transition[t][idx]

    def children(self, node):
        """Depth and index range of a non-leaf node's children."""
        t, idx = _as_depth_index(self, node)
        if t >= self.T:
            raise LeafNodeError(f"node at depth {t} is a leaf")
        return t + 1, idx * self.N, (idx + 1) * self.N

    def node_id(self, t, index):
        """NodeId of the index-th node at depth t (lexicographic order)."""
        if not 0 <= t <= self.T:
            raise MissingValue(f"depth {t} outside 0..{self.T}")
        if not 0 <= index < self.num_nodes(t):
            raise MissingValue(f"node index {index} outside level {t}")
        digits = []
        i = index
        for _ in range(t):
            digits.append(i % self.N + 1)
            i //= self.N
        return NodeId(t, tuple(reversed(digits)))

    def __repr__(self):
        return f"ScenarioTree(N={self.N}, T={self.T})"


def build_tree(N, T, transition="uniform"):
    """Build a validated tree from a transition specification.

    ``transition`` is ``"uniform"``, a single probability row applied at
    every node, or a flat table with one row per non-leaf node ordered level
    by level (lexicographic by path within a level).
    """
    N = int(N)
    T = int(T)
    if N < 2:
        raise ValueError("branching factor must be at least 2")
    if T < 1:
        raise ValueError("horizon must be at least 1")
    if isinstance(transition, str):
        if transition != "uniform":
            raise ValueError(f"unknown transition spec {transition!r}")
        row = np.full(N, 1.0 / N)
        levels = [np.tile(row, (N**t, 1)) for t in range(T)]
        return ScenarioTree(N, T, levels)
    table = np.asarray(transition, dtype=float)
    if table.ndim == 1:
        if table.shape != (N,):
            raise ShapeMismatch(f"transition row has length {table.shape[0]}, expected {N}")
        levels = [np.tile(table, (N**t, 1)) for t in range(T)]
        return ScenarioTree(N, T, levels)
    if table.ndim != 2 or table.shape[1] != N:
        raise ShapeMismatch(f"transition table has shape {table.shape}, expected (*, {N})")
    total = sum(N**t for t in range(T))
    if table.shape[0] != total:
        raise ShapeMismatch(
            f"transition table has {table.shape[0]} rows, expected {total} for T={T}"
        )
    levels = []
    start = 0
    for t in range(T):
        n = N**t
        levels.append(table[start : start + n])
        start += n
    return ScenarioTree(N, T, levels)


class AdaptedProcess:
    """One value per node for each time in a contiguous range.

    ``levels[k]`` holds the depth-``(start + k)`` values with shape
    ``(N**(start+k), *value_shape)``; the trailing shape is homogeneous
    across times (scalar, row, or matrix values).
    """

    def __init__(self, tree, start, levels):
        if not 0 <= start <= tree.T:
            raise MissingValue(f"start {start} outside 0..{tree.T}")
        if not levels:
            raise MissingValue("a process needs at least one level")
        if start + len(levels) - 1 > tree.T:
            raise MissingValue("process extends past the horizon")
        arrays = []
        shape = None
        for k, lev in enumerate(levels):
            arr = np.asarray(lev, dtype=float)
            n = tree.num_nodes(start + k)
            if arr.ndim == 0:
                arr = np.full(n, float(arr))
            if arr.shape[0] != n:
                raise ShapeMismatch(
                    f"level {start + k} has {arr.shape[0]} values, expected {n}"
                )
            if shape is None:
                shape = arr.shape[1:]
            elif arr.shape[1:] != shape:
                raise ShapeMismatch(
                    f"level {start + k} value shape {arr.shape[1:]} != {shape}"
                )
            arr = arr.copy()
            arr.flags.writeable = False
            arrays.append(arr)
        self.tree = tree
        self.start = int(start)
        self.levels = tuple(arrays)
        self.value_shape = shape

    @property
    def end(self):
        return self.start + len(self.levels) - 1

    @property
    def times(self):
        return range(self.start, self.end + 1)

    def level(self, t):
        if not self.start <= t <= self.end:
            raise MissingValue(f"process defined on {self.start}..{self.end}, not {t}")
        return self.levels[t - self.start]

    def at(self, node):
        t, idx = _as_depth_index(self.tree, node)
        return self.level(t)[idx]


def _level_values(tree, process, t):
    """Values of a process at depth t as an array, from a process or array."""
    if isinstance(process, AdaptedProcess):
        return process.level(t)
    arr = np.asarray(process, dtype=float)
    if arr.shape[:1] != (tree.num_nodes(t),):
        raise MissingValue(
            f"expected {tree.num_nodes(t)} values at depth {t}, got {arr.shape[:1]}"
        )
    return arr


def cond_exp_level(tree, values_next, t):
    """Conditional expectation one step back, for the whole depth-t level.

    ``values_next`` holds the depth-(t+1) values; returns the depth-t array
    of transition-weighted child averages.
    """
    if t >= tree.T:
        raise LeafNodeError(f"depth {t} nodes are leaves")
    vals = _level_values(tree, values_next, t + 1)
    n = tree.num_nodes(t)
    grouped = vals.reshape((n, tree.N) + vals.shape[1:])
    return np.einsum("ni,ni...->n...", tree.transition[t], grouped)


def cond_exp(tree, values_next, node):
    """Conditional expectation of next-step values at one non-leaf node."""
    t, idx = _as_depth_index(tree, node)
    if t >= tree.T:
        raise LeafNodeError(f"node at depth {t} is a leaf")
    vals = _level_values(tree, values_next, t + 1)
    child = vals[idx * tree.N : (idx + 1) * tree.N]
    return np.einsum("i,i...->...", tree.transition[t][idx], child)


def expectation(tree, values, t):
    """Unconditional expectation of depth-t values.

    Equals cond_exp iterated down to the root.
    """
    vals = _level_values(tree, values, t)
    return np.einsum("n,n...->...", tree.level_probs(t), vals)
