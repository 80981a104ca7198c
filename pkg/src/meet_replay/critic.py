"""Bootstrapped multi-head critic: a shared trunk feeding L scalar Q heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (
    Gradients,
    MlpParameters,
    ShapeError,
    backward,
    backward_stacked,
    forward,
    forward_stacked,
    mlp_init,
    polyak_update,
    predict,
)


class InvalidMaskError(ValueError):
    pass


@dataclass(frozen=True)
class HeadMask:
    bits: np.ndarray
    m_p: float

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @classmethod
    def from_bits(cls, bits, m_p: float = 1.0) -> HeadMask:
        return cls(np.asarray(bits, dtype=bool), m_p)


def sample_mask(num_heads: int, m_p: float, rng: np.random.Generator) -> HeadMask:
    """Bernoulli(m_p) bit per head, redrawn until at least one head is active."""
    if num_heads < 2:
        raise ValueError("need at least two heads")
    if not 0.0 < m_p <= 1.0:
        raise ValueError(f"mask probability must lie in (0, 1], got {m_p}")
    while True:
        bits = rng.random(num_heads) < m_p
        if bits.any():
            return HeadMask(bits, m_p)


def head_stats(q_values, mask: HeadMask) -> tuple[float, float]:
    """Mean and population variance over the active heads."""
    q = np.asarray(q_values, dtype=np.float64)
    if mask.count == 0:
        raise InvalidMaskError("mask has no active heads")
    active = q[mask.bits]
    mu = active.mean()
    return float(mu), float(np.mean((active - mu) ** 2))


def batch_head_stats(q_values: np.ndarray, mask: HeadMask) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise :func:`head_stats` for a ``(batch, L)`` array."""
    if mask.count == 0:
        raise InvalidMaskError("mask has no active heads")
    active = np.asarray(q_values)[:, mask.bits]
    return active.mean(axis=1), active.var(axis=1)


@dataclass
class CriticGradients:
    trunk: Gradients
    heads: list[Gradients]
    q_active: np.ndarray  # (batch, M) online predictions of the active heads

    def flat(self) -> np.ndarray:
        return np.concatenate([self.trunk.flat()] + [g.flat() for g in self.heads])


class EnsembleCritic:
    """Shared trunk over ``concat(state, action)`` plus ``L`` head networks.

    Online and target copies are kept side by side; targets only move through
    :meth:`update_targets`.
    """

    def __init__(self, trunk: MlpParameters, heads: list[MlpParameters], gamma: float, state_dim: int):
        if len(heads) < 2:
            raise ValueError("an ensemble critic needs at least two heads")
        if not 0.0 <= gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        feat = trunk.dims[-1]
        for h in heads:
            if h.dims[0] != feat or h.dims[-1] != 1:
                raise ShapeError("every head must map trunk features to one value")
        self.trunk = trunk
        self.heads = heads
        self.gamma = gamma
        self.state_dim = state_dim
        self.action_dim = trunk.dims[0] - state_dim
        self.target_trunk = trunk.copy()
        self.target_heads = [h.copy() for h in heads]

    @classmethod
    def create(
        cls,
        state_dim: int,
        action_dim: int,
        num_heads: int = 10,
        gamma: float = 0.99,
        trunk_hidden: int = 64,
        head_hidden: int = 32,
        seed: int = 0,
    ) -> EnsembleCritic:
        seeds = np.random.SeedSequence(seed).generate_state(num_heads + 1)
        trunk = mlp_init([state_dim + action_dim, trunk_hidden], ["relu"], int(seeds[0]))
        heads = [mlp_init([trunk_hidden, head_hidden, 1], ["relu", "identity"], int(s)) for s in seeds[1:]]
        return cls(trunk, heads, gamma, state_dim)

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    def _inputs(self, state, action) -> np.ndarray:
        s = np.atleast_2d(np.asarray(state, dtype=np.float64))
        a = np.atleast_2d(np.asarray(action, dtype=np.float64))
        if s.shape[1] != self.state_dim or a.shape[1] != self.action_dim or s.shape[0] != a.shape[0]:
            raise ShapeError(f"state {s.shape} / action {a.shape} do not match critic input")
        return np.concatenate([s, a], axis=1)

    def update_targets(self, tau: float) -> None:
        polyak_update(self.target_trunk, self.trunk, tau)
        for t, o in zip(self.target_heads, self.heads):
            polyak_update(t, o, tau)


def q_all_heads(critic: EnsembleCritic, state, action, use_target: bool = False, heads=None) -> np.ndarray:
    """Q-values of every head (or of the listed head indices).

    A single state/action pair yields a vector of length L, a batch yields
    an array of shape ``(batch, L)``.
    """
    single = np.asarray(state).ndim == 1
    x = critic._inputs(state, action)
    trunk = critic.target_trunk if use_target else critic.trunk
    nets = critic.target_heads if use_target else critic.heads
    idx = range(len(nets)) if heads is None else heads
    feats = predict(trunk, x)
    q = forward_stacked([nets[i] for i in idx], feats)[0][:, :, 0].T
    return q[0] if single else q


def td_targets(critic: EnsembleCritic, rewards, next_states, dones, next_actions, mask: HeadMask) -> np.ndarray:
    """``r + gamma * Q_target_m(s', a')`` per active head, ``r`` on terminal rows.

    Returns shape ``(batch, M)`` with columns in active-head order.
    """
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    d = np.asarray(dones, dtype=bool).reshape(-1)
    q_next = q_all_heads(critic, next_states, next_actions, use_target=True, heads=mask.active)
    q_next = np.atleast_2d(q_next)
    if q_next.shape[0] != r.shape[0] or d.shape != r.shape:
        raise ShapeError("reward, done and next-state batches differ in length")
    bootstrap = np.where(d, 0.0, critic.gamma)[:, None]
    return r[:, None] + bootstrap * q_next


def critic_loss_and_grads(
    critic: EnsembleCritic,
    states,
    actions,
    targets,
    mask: HeadMask,
    visit_counts=None,
    sample_weights=None,
) -> tuple[float, CriticGradients]:
    """Squared TD loss averaged over active heads and batch.

    The returned loss is the plain average. The gradients are those of the
    per-sample weighted loss ``sum_j w_j / (M k) * sum_m (Q_m - y_m)^2`` where
    ``w_j = sample_weights_j / N(v_j)``; omitted factors default to one.
    Inactive heads receive zero gradient.
    """
    x = critic._inputs(states, actions)
    k = x.shape[0]
    active = mask.active
    m = len(active)
    if m == 0:
        raise InvalidMaskError("mask has no active heads")
    y = np.asarray(targets, dtype=np.float64).reshape(k, m)
    w = np.ones(k) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64).reshape(k)
    if visit_counts is not None:
        n = np.asarray(visit_counts, dtype=np.float64).reshape(k)
        if np.any(n < 1):
            raise ValueError("visit counts must be >= 1 when scaling gradients")
        w = w / n

    feats, trunk_tape = forward(critic.trunk, x)
    q, tape = forward_stacked([critic.heads[i] for i in active], feats)
    q_active = q[:, :, 0].T
    coef = 2.0 * w / (m * k)
    active_grads, feat_grad = backward_stacked(tape, (coef[:, None] * (q_active - y)).T[:, :, None])
    head_grads = [Gradients.zeros_like(h) for h in critic.heads]
    for i, g in zip(active, active_grads):
        head_grads[i] = g
    trunk_grad = backward(critic.trunk, trunk_tape, feat_grad)
    loss = float(np.mean((q_active - y) ** 2))
    return loss, CriticGradients(trunk_grad, head_grads, q_active)


def action_gradient(critic: EnsembleCritic, states, actions, mask: HeadMask) -> tuple[float, np.ndarray]:
    """Mean active-head Q over the batch and its gradient w.r.t. the actions."""
    x = critic._inputs(states, actions)
    k = x.shape[0]
    active = mask.active
    feats, trunk_tape = forward(critic.trunk, x)
    q, tape = forward_stacked([critic.heads[i] for i in active], feats)
    _, feat_grad = backward_stacked(tape, np.full(q.shape, 1.0 / (len(active) * k)), param_grads=False)
    grads = backward(critic.trunk, trunk_tape, feat_grad, param_grads=False)
    return float(q.mean()), grads.inputs[:, critic.state_dim :]
