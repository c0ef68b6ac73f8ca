"""Directional connectivity closures over a binary ink plane.

Forward steps are (x+1, y-1), (x+1, y), (x+1, y+1), (x, y-1), (x, y+1);
backward steps mirror the x offset. Both step sets move freely up and down a
column, so every maximal vertical run of ink is reached as a whole. The
closure is therefore reachability in a small DAG whose nodes are vertical
runs and whose edges join runs in neighbouring columns that touch
diagonally or horizontally.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order

FORWARD = "forward"
BACKWARD = "backward"

FORWARD_STEPS = ((1, -1), (1, 0), (1, 1), (0, -1), (0, 1))
BACKWARD_STEPS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1))


def check_direction(direction: str) -> bool:
    if direction not in (FORWARD, BACKWARD):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    return direction == FORWARD


class RunGraph:
    """Vertical-run adjacency graph of a boolean (rows, cols) plane."""

    def __init__(self, ink: np.ndarray):
        ink = np.asarray(ink, dtype=bool)
        self.shape = ink.shape
        h, _ = ink.shape
        # column-major linear keys, sorted because flatnonzero walks ink.T in order
        keys = np.flatnonzero(ink.T)
        col = keys // h
        row = keys % h
        starts = np.ones(keys.size, dtype=bool)
        starts[1:] = keys[1:] != keys[:-1] + 1
        starts[1:] |= col[1:] != col[:-1]
        run = np.cumsum(starts) - 1
        self.keys, self.col, self.row, self.run = keys, col, row, run
        self.n_runs = int(run[-1]) + 1 if keys.size else 0

        src, dst = [], []
        has_right = col < ink.shape[1] - 1
        for dy in ((-1, 0, 1) if keys.size else ()):
            r = row + dy
            ok = has_right & (r >= 0) & (r < h)
            nk = (col[ok] + 1) * h + r[ok]
            pos = np.searchsorted(keys, nk)
            pos = np.minimum(pos, keys.size - 1)
            hit = keys[pos] == nk
            src.append(run[ok][hit])
            dst.append(run[pos[hit]])
        self.src = np.concatenate(src) if src else np.empty(0, np.int64)
        self.dst = np.concatenate(dst) if dst else np.empty(0, np.int64)

    def run_of(self, x: int, y: int) -> int:
        """Run id of pixel (x, y), or -1 when it is not ink."""
        return int(self.runs_of(np.array([x]), np.array([y]))[0])

    def runs_of(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Vectorized run_of."""
        h, w = self.shape
        xs, ys = np.asarray(xs, dtype=np.int64), np.asarray(ys, dtype=np.int64)
        out = np.full(xs.shape, -1, dtype=np.int64)
        if self.keys.size == 0:
            return out
        inside = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        k = xs[inside] * h + ys[inside]
        pos = np.minimum(np.searchsorted(self.keys, k), self.keys.size - 1)
        out[inside] = np.where(self.keys[pos] == k, self.run[pos], -1)
        return out

    def closure(self, seeds, forward: bool = True) -> np.ndarray:
        """Boolean plane of every pixel reachable from any seed (x, y)."""
        out = np.zeros(self.shape, dtype=bool)
        seeds = np.asarray(seeds, dtype=np.int64).reshape(-1, 2)
        seed_runs = np.unique(self.runs_of(seeds[:, 0], seeds[:, 1]))
        seed_runs = seed_runs[seed_runs >= 0]
        if seed_runs.size == 0:
            return out
        n = self.n_runs
        a, b = (self.src, self.dst) if forward else (self.dst, self.src)
        rows = np.concatenate([a, np.full(seed_runs.size, n)])
        cols = np.concatenate([b, seed_runs])
        g = csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n + 1, n + 1))
        order = breadth_first_order(g, n, directed=True, return_predecessors=False)
        reached = np.zeros(n + 1, dtype=bool)
        reached[order] = True
        px = reached[self.run]
        out[self.row[px], self.col[px]] = True
        return out


def closure(ink: np.ndarray, seeds, direction: str = FORWARD) -> np.ndarray:
    return RunGraph(ink).closure(seeds, check_direction(direction))

