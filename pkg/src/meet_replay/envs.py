"""Deterministic dense-reward control tasks with fixed horizons."""

from __future__ import annotations

import math

import numpy as np


class EpisodeFinishedError(RuntimeError):
    pass


def angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2 * math.pi)) - math.pi


class PendulumEnv:
    """Torque-limited swing-up; angle 0 is upright.

    Observation is ``(cos theta, sin theta, theta_dot)``, torque in [-2, 2].
    """

    obs_dim = 3
    action_dim = 1
    action_bound = 2.0

    def __init__(self, horizon: int = 200, dt: float = 0.05, g: float = 10.0, mass: float = 1.0, length: float = 1.0):
        self.horizon = horizon
        self.dt = dt
        self.g = g
        self.mass = mass
        self.length = length
        self.max_speed = 8.0
        self.theta = 0.0
        self.theta_dot = 0.0
        self.t = 0
        self._done = True

    def reset(self, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.theta = float(rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(rng.uniform(-1.0, 1.0))
        self.t = 0
        self._done = False
        return self.observation()

    def set_state(self, theta: float, theta_dot: float) -> np.ndarray:
        self.theta, self.theta_dot = float(theta), float(theta_dot)
        self.t = 0
        self._done = False
        return self.observation()

    def observation(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])

    def energy(self) -> float:
        """Conserved quantity of the unforced dynamics (per unit inertia)."""
        return 0.5 * self.theta_dot**2 + 1.5 * self.g / self.length * math.cos(self.theta)

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise EpisodeFinishedError("step() called on a finished episode; call reset()")
        u = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -self.action_bound, self.action_bound))
        th, thdot = self.theta, self.theta_dot
        reward = -(angle_normalize(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2)
        g, m, l, dt = self.g, self.mass, self.length, self.dt
        thdot = thdot + (3.0 * g / (2.0 * l) * math.sin(th) + 3.0 / (m * l**2) * u) * dt
        thdot = min(max(thdot, -self.max_speed), self.max_speed)
        self.theta = th + thdot * dt
        self.theta_dot = thdot
        self.t += 1
        self._done = self.t >= self.horizon
        return self.observation(), reward, self._done


class PointMassEnv:
    """Damped 2-D point mass pushed toward the origin.

    Observation is ``(px, py, vx, vy)``, force in [-1, 1]^2.
    """

    obs_dim = 4
    action_dim = 2
    action_bound = 1.0

    def __init__(self, horizon: int = 150, dt: float = 0.05, damping: float = 0.95):
        self.horizon = horizon
        self.dt = dt
        self.damping = damping
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.t = 0
        self._done = True

    def reset(self, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        # uniform over the band 0.5 <= max(|px|, |py|) <= 1
        while True:
            pos = rng.uniform(-1.0, 1.0, size=2)
            if np.max(np.abs(pos)) >= 0.5:
                break
        self.pos = pos
        self.vel = np.zeros(2)
        self.t = 0
        self._done = False
        return self.observation()

    def observation(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise EpisodeFinishedError("step() called on a finished episode; call reset()")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -self.action_bound, self.action_bound)
        reward = -float(np.linalg.norm(self.pos)) - 0.01 * float(a @ a)
        self.vel = self.damping * self.vel + a * self.dt
        self.pos = np.clip(self.pos + self.vel * self.dt, -1.0, 1.0)
        self.t += 1
        self._done = self.t >= self.horizon
        return self.observation(), reward, self._done


ENVS = {"pendulum": PendulumEnv, "pointmass": PointMassEnv}


def make_env(name: str):
    try:
        return ENVS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; expected one of {sorted(ENVS)}") from None
