"""Sum-tree over non-negative priorities.

Leaves hold one priority per buffer slot, every internal node holds the sum of
its two children, so the root is the total mass. Updates and prefix searches
both walk a single root-to-leaf path.
"""

from __future__ import annotations

import math

import numpy as np


class EmptyTreeError(RuntimeError):
    """Raised when sampling from a tree whose total priority is zero."""


class SumTree:
    """Binary sum-tree stored in a flat array (node 1 is the root).

    Capacity is rounded up to a power of two; padding leaves stay at zero and
    are never returned by a search.
    """

    def __init__(self, capacity: int):
        if int(capacity) != capacity or capacity < 1:
            raise ValueError(f"capacity must be a positive integer, got {capacity!r}")
        self.capacity = int(capacity)
        self._leaves = 1 << max(0, math.ceil(math.log2(self.capacity)))
        self._depth = int(math.log2(self._leaves))
        self._nodes = np.zeros(2 * self._leaves, dtype=np.float64)
        self.last_write_count = 0

    def __len__(self) -> int:
        return self.capacity

    def total(self) -> float:
        return float(self._nodes[1])

    def get(self, index: int) -> float:
        self._check_index(index)
        return float(self._nodes[self._leaves + index])

    def leaves(self) -> np.ndarray:
        """Copy of the leaf priorities (length ``capacity``)."""
        return self._nodes[self._leaves : self._leaves + self.capacity].copy()

    def _check_index(self, index) -> None:
        if not 0 <= index < self.capacity:
            raise IndexError(f"slot {index} out of range for capacity {self.capacity}")

    @staticmethod
    def _check_priority(priority: float) -> None:
        if not math.isfinite(priority) or priority < 0:
            raise ValueError(f"priority must be finite and >= 0, got {priority!r}")

    def set(self, index: int, priority: float) -> None:
        self._check_index(index)
        priority = float(priority)
        self._check_priority(priority)
        node = self._leaves + index
        nodes = self._nodes
        nodes[node] = priority
        writes = 1
        node >>= 1
        while node >= 1:
            # recompute from children so rounding never accumulates
            nodes[node] = nodes[2 * node] + nodes[2 * node + 1]
            writes += 1
            node >>= 1
        self.last_write_count = writes

    def set_many(self, indices, priorities) -> None:
        """Vectorised ``set``; with repeated indices the last value wins."""
        idx = np.asarray(indices, dtype=np.int64).ravel()
        pri = np.asarray(priorities, dtype=np.float64).ravel()
        if idx.shape != pri.shape:
            raise ValueError("indices and priorities differ in length")
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() >= self.capacity:
            raise IndexError(f"slot out of range for capacity {self.capacity}")
        if not np.all(np.isfinite(pri)) or np.any(pri < 0):
            raise ValueError("priorities must be finite and >= 0")
        nodes = self._nodes
        nodes[self._leaves + idx] = pri
        parents = np.unique((self._leaves + idx) >> 1)
        while parents.size and parents[0] >= 1:
            nodes[parents] = nodes[2 * parents] + nodes[2 * parents + 1]
            if parents[0] == 1:
                break
            parents = np.unique(parents >> 1)

    def sample_prefix(self, u: float) -> int:
        """Return the slot whose cumulative-priority interval contains ``u``.

        Intervals are half-open, so a value landing exactly on a boundary
        resolves to the right-hand leaf.
        """
        total = self.total()
        if total <= 0:
            raise EmptyTreeError("cannot sample from a tree with zero total priority")
        if not 0 <= u < total:
            raise ValueError(f"u={u!r} outside [0, {total!r})")
        nodes = self._nodes
        node = 1
        while node < self._leaves:
            left = 2 * node
            if u >= nodes[left] and nodes[left + 1] > 0:
                u -= nodes[left]
                node = left + 1
            else:
                node = left
        return node - self._leaves

    def sample_prefix_many(self, us) -> np.ndarray:
        """Vectorised ``sample_prefix`` over an array of prefix values."""
        total = self.total()
        if total <= 0:
            raise EmptyTreeError("cannot sample from a tree with zero total priority")
        u = np.array(us, dtype=np.float64, copy=True).ravel()
        if np.any(u < 0) or np.any(u >= total):
            raise ValueError(f"prefix values must lie in [0, {total!r})")
        nodes = self._nodes
        node = np.ones(u.shape, dtype=np.int64)
        for _ in range(self._depth):
            left = 2 * node
            left_sum = nodes[left]
            go_right = (u >= left_sum) & (nodes[left + 1] > 0)
            u = np.where(go_right, u - left_sum, u)
            node = left + go_right
        return node - self._leaves
