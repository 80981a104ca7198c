"""Off-policy actor-critic training loop around the replay strategies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import nn
from .critic import (
    EnsembleCritic,
    HeadMask,
    action_gradient,
    batch_head_stats,
    critic_loss_and_grads,
    sample_mask,
    td_targets,
)
from .replay import STRATEGIES, ReplayBuffer, Transition, meet_priority, normalize_batch_stats, per_priority


@dataclass
class AgentConfig:
    steps: int = 30_000
    heads: int = 10
    mask_prob: float = 0.5
    gamma: float = 0.99
    replay_period: int = 1
    batch: int = 256
    actor_lr: float = 1e-3
    critic_lr: float = 1e-2
    momentum: float = 0.9
    max_grad_norm: float | None = 10.0
    tau: float = 0.005
    noise: float = 0.1
    capacity: int = 100_000
    strategy: str = "meet"
    seed: int = 0
    actor_hidden: int = 64
    trunk_hidden: int = 64
    head_hidden: int = 32
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    priority_floor: float = 0.05
    per_eps: float = 1e-6
    visit_scaling: str = "sample"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("steps",):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("heads", "replay_period", "batch", "capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.heads < 2:
            raise ValueError("heads must be >= 2")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if not 0.0 < self.mask_prob <= 1.0:
            raise ValueError("mask_prob must lie in (0, 1]")
        if self.visit_scaling not in ("sample", "batch", "none"):
            raise ValueError("visit_scaling must be one of sample, batch, none")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class Actor:
    params: nn.MlpParameters
    action_bound: float
    noise_scale: float = 0.0

    @classmethod
    def create(cls, obs_dim: int, action_dim: int, action_bound: float, hidden: int, noise: float, seed: int) -> Actor:
        params = nn.mlp_init([obs_dim, hidden, hidden, action_dim], ["relu", "relu", "tanh"], seed)
        # small output layer keeps the initial policy near zero torque
        params.weights[-1] *= 0.1
        params.biases[-1] *= 0.1
        return cls(params, action_bound, noise * 2.0 * action_bound)

    def policy(self, states) -> np.ndarray:
        return self.action_bound * nn.predict(self.params, states)


def select_action(actor: Actor, state, explore: bool, rng: np.random.Generator) -> np.ndarray:
    """Deterministic policy output, plus clipped Gaussian noise when exploring."""
    s = np.asarray(state, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] != actor.params.dims[0]:
        raise nn.ShapeError(f"state shape {s.shape} does not match policy input {actor.params.dims[0]}")
    a = actor.policy(s[None, :])[0]
    if explore and actor.noise_scale > 0:
        a = a + actor.noise_scale * rng.standard_normal(a.shape)
    return np.clip(a, -actor.action_bound, actor.action_bound)


@dataclass
class StepDiagnostics:
    t: int
    reward: float
    learned: bool = False
    loss: float = math.nan
    mean_priority: float = math.nan
    mean_visits: float = math.nan
    extra: dict = field(default_factory=dict)


class Agent:
    """Actor, ensemble critic and replay buffer for one seeded run."""

    def __init__(self, config: AgentConfig, obs_dim: int, action_dim: int, action_bound: float):
        self.config = config
        c = config
        streams = np.random.SeedSequence(c.seed).spawn(5)
        init_seeds = streams[0].generate_state(2)
        self.noise_rng = np.random.default_rng(streams[1])
        self.mask_rng = np.random.default_rng(streams[2])
        self.sample_rng = np.random.default_rng(streams[3])
        self.env_rng = np.random.default_rng(streams[4])
        self.actor = Actor.create(obs_dim, action_dim, action_bound, c.actor_hidden, c.noise, int(init_seeds[0]))
        self.critic = EnsembleCritic.create(
            obs_dim, action_dim, c.heads, c.gamma, c.trunk_hidden, c.head_hidden, int(init_seeds[1])
        )
        floor = c.priority_floor if c.strategy == "meet" else c.per_eps
        self.buffer = ReplayBuffer(c.capacity, obs_dim, action_dim, c.strategy, c.heads, floor, c.per_alpha, c.per_beta0)
        self.critic_opt = nn.SGD(c.critic_lr, c.momentum, c.max_grad_norm)
        self.actor_opt = nn.SGD(c.actor_lr, c.momentum, c.max_grad_norm)
        self.learning_phases = 0
        self.state: np.ndarray | None = None
        self.action: np.ndarray | None = None

    # -- learning ---------------------------------------------------------

    def learn(self, mask: HeadMask, rng: np.random.Generator | None = None, t: int | None = None) -> dict:
        """One replay phase: sample, rescore, update critic, actor and targets."""
        c = self.config
        buf = self.buffer
        rng = self.sample_rng if rng is None else rng
        if buf.strategy == "per":
            frac = 1.0 if t is None or c.steps == 0 else min(1.0, t / c.steps)
            buf.beta = c.per_beta0 + (1.0 - c.per_beta0) * frac

        slots, weights = buf.sample_batch(c.batch, rng)
        s, a = buf.states[slots], buf.actions[slots]
        r, s2, d = buf.rewards[slots], buf.next_states[slots], buf.dones[slots]
        visits = buf.visits[slots].copy()

        next_actions = self.actor.policy(s2)
        targets = td_targets(self.critic, r, s2, d, next_actions, mask)
        if buf.strategy == "meet" and c.visit_scaling == "sample":
            loss, grads = critic_loss_and_grads(self.critic, s, a, targets, mask, visit_counts=visits)
        elif buf.strategy == "meet" and c.visit_scaling == "batch":
            batch_scale = np.full(len(slots), np.mean(1.0 / visits))
            loss, grads = critic_loss_and_grads(self.critic, s, a, targets, mask, sample_weights=batch_scale)
        elif buf.strategy == "per":
            loss, grads = critic_loss_and_grads(self.critic, s, a, targets, mask, sample_weights=weights)
        else:
            loss, grads = critic_loss_and_grads(self.critic, s, a, targets, mask)
        if not math.isfinite(loss):
            raise nn.NonFiniteError(f"critic loss became {loss}")

        info: dict = {"slots": slots, "visits": visits, "targets": targets, "loss": loss}
        if buf.strategy == "meet":
            mus, var = batch_head_stats(grads.q_active, HeadMask(np.ones(mask.count, bool), mask.m_p))
            mu_n, var_n = normalize_batch_stats(mus, var)
            new_p = meet_priority(mu_n, var_n, visits, c.priority_floor)
            buf.update_priorities(slots, new_p)
            info.update(mu=mus, var=var, mu_n=mu_n, var_n=var_n, priorities=np.atleast_1d(new_p))
        elif buf.strategy == "per":
            td = (targets - grads.q_active).mean(axis=1)
            new_p = per_priority(td, c.per_alpha, c.per_eps)
            buf.update_priorities(slots, new_p)
            info.update(td=td, priorities=np.atleast_1d(new_p))

        scale = self.critic_opt.clip_scale(grads.trunk, *grads.heads)
        self.critic_opt.descend(self.critic.trunk, grads.trunk, scale)
        for i in mask.active:
            self.critic_opt.descend(self.critic.heads[i], grads.heads[i], scale)

        # deterministic policy gradient through the active heads
        out, tape = nn.forward(self.actor.params, s)
        q_mean, dq_da = action_gradient(self.critic, s, self.actor.action_bound * out, mask)
        actor_grads = nn.backward(self.actor.params, tape, -self.actor.action_bound * dq_da)
        self.actor_opt.descend(self.actor.params, actor_grads, self.actor_opt.clip_scale(actor_grads))

        self.critic.update_targets(c.tau)
        self.learning_phases += 1
        info["actor_q"] = q_mean
        return info

    # -- interaction ------------------------------------------------------

    def begin(self, env) -> None:
        self.state = env.reset(int(self.env_rng.integers(2**31)))
        self.action = select_action(self.actor, self.state, True, self.noise_rng)

    def train_iteration(self, env, t: int) -> StepDiagnostics:
        """Environment step ``t`` (1-based) in the store / mask / learn / act order."""
        c = self.config
        if self.state is None:
            self.begin(env)
        next_state, reward, done = env.step(self.action)
        self.buffer.store(Transition(self.state, self.action, reward, next_state, done))
        mask = sample_mask(c.heads, c.mask_prob, self.mask_rng)
        self.buffer.masks[(self.buffer.cursor - 1) % self.buffer.capacity] = mask.bits
        diag = StepDiagnostics(t, reward)
        if t % c.replay_period == 0 and len(self.buffer) >= c.batch:
            info = self.learn(mask, t=t)
            diag.learned = True
            diag.loss = info["loss"]
            n = self.buffer.size
            diag.mean_priority = float(self.buffer.priorities[:n].mean())
            diag.mean_visits = float(self.buffer.visits[:n].mean())
        if done:
            self.state = env.reset(int(self.env_rng.integers(2**31)))
        else:
            self.state = next_state
        self.action = select_action(self.actor, self.state, True, self.noise_rng)
        return diag


def evaluate(actor: Actor, env, episodes: int, seed: int) -> float:
    """Mean undiscounted return of noise-free episodes."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    seeds = np.random.default_rng(seed).integers(2**31, size=episodes)
    returns = []
    for ep_seed in seeds:
        obs = env.reset(int(ep_seed))
        total, done = 0.0, False
        while not done:
            obs, reward, done = env.step(actor.policy(obs[None, :])[0])
            total += reward
        returns.append(total)
    return float(np.mean(returns))

