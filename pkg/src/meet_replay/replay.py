"""Replay buffer with visit counts and three sampling strategies.

``meet`` scores transitions by head disagreement and visit count, ``per``
by TD error, ``uniform`` ignores priorities altogether. Storage is a ring of
column arrays; priorities live in a :class:`SumTree` indexed by slot.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .critic import HeadMask
from .sum_tree import SumTree

STRATEGIES = ("meet", "per", "uniform")
PRIORITY_FLOOR = 1e-6


class EmptyBufferError(RuntimeError):
    pass


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    visit_count: int = 0
    priority: float = 0.0
    head_mask: HeadMask | None = None


def meet_priority_raw(mu_n, var_n, n_visits):
    """``var * (mu + (1 - mu) / N)`` without the floor."""
    n = np.asarray(n_visits)
    if np.any(n < 1):
        raise ValueError("visit count must be >= 1")
    return var_n * (mu_n + (1.0 - mu_n) / n)


def meet_priority_terms(mu_n, var_n, n_visits):
    """The same score split as (exploitation, exploration)."""
    n = np.asarray(n_visits)
    if np.any(n < 1):
        raise ValueError("visit count must be >= 1")
    inv = 1.0 / n
    return (1.0 - inv) * mu_n * var_n, inv * var_n


def meet_priority(mu_n, var_n, n_visits, eps: float = PRIORITY_FLOOR):
    """Exploration/exploitation priority, floored at ``eps``.

    Works elementwise on arrays; scalars in, float out.
    """
    p = np.maximum(eps, meet_priority_raw(mu_n, var_n, n_visits))
    return float(p) if np.ndim(p) == 0 else p


def normalize_batch_stats(raw_mus, raw_vars) -> tuple[np.ndarray, np.ndarray]:
    """Min-max scale means into [0, 1] and max-scale variances into [0, 1].

    A batch with no spread in the means maps to 0.5; an all-zero variance
    batch stays zero.
    """
    mus = np.asarray(raw_mus, dtype=np.float64).ravel()
    var = np.asarray(raw_vars, dtype=np.float64).ravel()
    if mus.size == 0 or mus.shape != var.shape:
        raise ValueError("need two non-empty lists of equal length")
    if not (np.all(np.isfinite(mus)) and np.all(np.isfinite(var))):
        raise ValueError("statistics must be finite")
    lo, hi = mus.min(), mus.max()
    mu_n = np.full_like(mus, 0.5) if hi == lo else (mus - lo) / (hi - lo)
    vmax = var.max()
    var_n = np.zeros_like(var) if vmax <= 0 else var / vmax
    return mu_n, var_n


def per_priority(td_error, alpha: float = 0.6, eps: float = PRIORITY_FLOOR):
    p = (np.abs(td_error) + eps) ** alpha
    return float(p) if np.ndim(p) == 0 else p


class ReplayBuffer:
    """FIFO ring of transitions with a priority sum-tree over the slots."""

    def __init__(
        self,
        capacity: int,
        state_dim: int,
        action_dim: int,
        strategy: str = "meet",
        num_heads: int = 0,
        eps: float = PRIORITY_FLOOR,
        alpha: float = 0.6,
        beta: float = 0.4,
        initial_priority: float = 1.0,
    ):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.strategy = strategy
        self.eps = eps
        self.alpha = alpha
        self.beta = beta
        self.initial_priority = initial_priority
        self.tree = SumTree(self.capacity)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.visits = np.zeros(capacity, dtype=np.int64)
        self.priorities = np.zeros(capacity)
        self.masks = np.zeros((capacity, max(num_heads, 0)), dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def max_priority(self) -> float:
        return float(self.priorities[: self.size].max()) if self.size else self.initial_priority

    def store(self, transition: Transition) -> int:
        """Insert at the cursor with the current maximum priority; returns the slot."""
        priority = self.max_priority()
        slot = self.cursor
        self.states[slot] = transition.state
        self.actions[slot] = transition.action
        self.rewards[slot] = transition.reward
        self.next_states[slot] = transition.next_state
        self.dones[slot] = transition.done
        self.visits[slot] = 0
        if transition.head_mask is not None and self.masks.shape[1]:
            self.masks[slot] = transition.head_mask.bits
        self.priorities[slot] = priority
        self.tree.set(slot, priority)
        self.cursor = (slot + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return slot

    def get(self, slot: int) -> Transition:
        if not 0 <= slot < self.size:
            raise IndexError(f"slot {slot} not filled")
        mask = HeadMask(self.masks[slot].copy(), 1.0) if self.masks.shape[1] else None
        return Transition(
            self.states[slot].copy(),
            self.actions[slot].copy(),
            float(self.rewards[slot]),
            self.next_states[slot].copy(),
            bool(self.dones[slot]),
            int(self.visits[slot]),
            float(self.priorities[slot]),
            mask,
        )

    def probabilities(self) -> np.ndarray:
        """Per-slot sampling probability over the filled slots."""
        if self.strategy == "uniform":
            return np.full(self.size, 1.0 / self.size)
        p = self.priorities[: self.size]
        return p / p.sum()

    def sample_batch(self, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``k`` slots with replacement and bump their visit counts.

        Returns ``(slots, importance_weights)``; weights are all one except
        under ``per``.
        """
        if self.size == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        if k < 1:
            raise ValueError("batch size must be >= 1")
        if self.strategy == "uniform":
            slots = rng.integers(0, self.size, size=k)
        else:
            total = self.tree.total()
            us = rng.random(k) * total
            slots = self.tree.sample_prefix_many(np.minimum(us, np.nextafter(total, 0.0)))
        np.add.at(self.visits, slots, 1)
        weights = np.ones(k)
        if self.strategy == "per":
            probs = self.priorities[slots] / self.tree.total()
            weights = (self.size * probs) ** (-self.beta)
            weights /= weights.max()
        return slots, weights

    def update_priorities(self, slots, priorities) -> None:
        slots = np.asarray(slots, dtype=np.int64).ravel()
        if slots.size and (slots.min() < 0 or slots.max() >= self.size):
            raise IndexError("priority update for an unfilled slot")
        p = np.asarray(priorities, dtype=np.float64).ravel()
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("priorities must be finite and >= 0")
        p = np.maximum(p, self.eps)
        self.priorities[slots] = p
        self.tree.set_many(slots, p)

    def dump(self, path) -> None:
        """Debug dump: ``MEETBUF1`` header, then row-major little-endian doubles."""
        n = self.size
        cols = [
            self.states[:n],
            self.actions[:n],
            self.rewards[:n, None],
            self.next_states[:n],
            self.dones[:n, None],
            self.visits[:n, None],
            self.priorities[:n, None],
        ]
        table = np.concatenate([np.asarray(c, dtype="<f8") for c in cols], axis=1)
        header = b"MEETBUF1" + struct.pack("<III", n, self.states.shape[1], self.actions.shape[1])
        Path(path).write_bytes(header + np.ascontiguousarray(table).tobytes())
