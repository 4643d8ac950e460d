"""Desk-scale episodic environments, scripted oracles, and trace collection.

Both environments are small deterministic stand-ins: a three-lane highway
driving task and a one-dimensional lander.  Their observation layouts are
documented and fixed because the policy dialect indexes observations by
position.

MiniHighway observation layout (dim 12), rows of (x, y, vx, vy):

    o[0]  own x            always 0 (ego-centric)
    o[1]  own lane y       0 / 4 / 8, left to right; transitional in between
    o[2]  own speed        forward units per step
    o[3]  own y-velocity   nonzero only while changing lanes
    o[4]  nearest car:   x-distance ahead (1000 when absent)
    o[5]  nearest car:   lane y          (-4 when absent)
    o[6]  nearest car:   forward speed
    o[7]  nearest car:   y-velocity      always 0
    o[8]  second car:    x-distance ahead
    o[9]  second car:    lane y
    o[10] second car:    forward speed
    o[11] second car:    y-velocity

MiniLander observation layout (dim 3): altitude, vertical velocity
(negative = falling), remaining fuel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .evaluation import Dataset, IOExample, episodic_score
from .interp import DEFAULT_LIMITS, CompiledProgram, RuntimeLimits
from .program import Program

LANE_Y = (0.0, 4.0, 8.0)
ABSENT_X = 1000.0
ABSENT_Y = -4.0

A_LEFT, A_IDLE, A_RIGHT, A_FASTER, A_SLOWER = range(5)


class MiniHighway:
    """Three lanes, constant-speed traffic, rightmost-lane and speed rewards.

    Per-step reward is 0.1 + 0.25 * (speed level / 3) + 0.35 when settled in
    the rightmost lane, so it lies in [0.1, 0.7]; a collision ends the
    episode with an extra -1.
    """

    obs_dim = 12
    n_actions = 5
    max_steps = 100

    N_CARS = 10
    CAR_GAP = 26.0
    SPEEDS = (2.0, 3.0, 4.0, 5.0)  # indexed by speed level
    LANE_STEP = 2.0                 # y movement per step while changing lanes
    COLLIDE_X = 4.5
    COLLIDE_Y = 2.0
    REWARD_MIN = -1.0
    REWARD_MAX = 0.7

    def __init__(self):
        self._live = False

    def reset(self, seed: int) -> tuple:
        rng = np.random.default_rng(seed)
        self.x = 0.0
        self.y = LANE_Y[1]
        self.target_y = self.y
        self.level = 1
        self.vy = 0.0
        xs, lanes, speeds = [], [], []
        pos = 18.0
        for _ in range(self.N_CARS):
            pos += self.CAR_GAP + rng.uniform(-8.0, 8.0)
            xs.append(pos)
            lanes.append(int(rng.integers(0, 3)))
            speeds.append(float(rng.uniform(1.0, 2.0)))
        self.car_x = xs
        self.car_y = [LANE_Y[k] for k in lanes]
        self.car_v = speeds
        self.steps = 0
        self.collided = False
        self.done = False
        self._live = True
        return self._obs()

    def _ahead(self) -> list[tuple[float, float, float]]:
        cars = [(cx - self.x, cy, cv)
                for cx, cy, cv in zip(self.car_x, self.car_y, self.car_v)
                if cx - self.x > -6.0]
        cars.sort(key=lambda c: c[0])
        while len(cars) < 2:
            cars.append((ABSENT_X, ABSENT_Y, 0.0))
        return cars[:2]

    def _obs(self) -> tuple:
        (d1, y1, v1), (d2, y2, v2) = self._ahead()
        return (0.0, self.y, self.SPEEDS[self.level], self.vy,
                d1, y1, v1, 0.0, d2, y2, v2, 0.0)

    def step(self, action: int) -> tuple[tuple, float, bool]:
        if self.done or not self._live:
            raise RuntimeError("step() after episode end; call reset() first")
        action = int(action)
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} out of range")
        if action == A_LEFT:
            self.target_y = max(0.0, self.target_y - 4.0)
        elif action == A_RIGHT:
            self.target_y = min(8.0, self.target_y + 4.0)
        elif action == A_FASTER:
            self.level = min(3, self.level + 1)
        elif action == A_SLOWER:
            self.level = max(0, self.level - 1)
        # lateral motion toward the target lane
        if self.y < self.target_y:
            self.vy = min(self.LANE_STEP, self.target_y - self.y)
        elif self.y > self.target_y:
            self.vy = -min(self.LANE_STEP, self.y - self.target_y)
        else:
            self.vy = 0.0
        self.y += self.vy
        self.x += self.SPEEDS[self.level]
        for i in range(len(self.car_x)):
            self.car_x[i] += self.car_v[i]
        self.steps += 1
        reward = 0.1 + 0.25 * (self.level / 3.0) + (0.35 if self.y == 8.0 else 0.0)
        for cx, cy in zip(self.car_x, self.car_y):
            if abs(cx - self.x) < self.COLLIDE_X and abs(cy - self.y) < self.COLLIDE_Y:
                self.collided = True
                self.done = True
                reward = -1.0
                break
        if self.steps >= self.max_steps:
            self.done = True
        return self._obs(), reward, self.done


class MiniLander:
    """1-D descent: reach the ground gently without wasting thruster fuel.

    Per-step reward is -0.01, minus 0.05 when thrusting; touchdown adds +100
    when |velocity| is within the safe landing speed and -100 otherwise.
    """

    obs_dim = 3
    n_actions = 2
    max_steps = 400

    GRAVITY = 0.08
    THRUST = 0.18
    SAFE_SPEED = 2.0
    REWARD_MIN = -100.06
    REWARD_MAX = 100.0

    def __init__(self):
        self._live = False

    def reset(self, seed: int) -> tuple:
        rng = np.random.default_rng(seed)
        self.h = float(50.0 + rng.uniform(0.0, 20.0))
        self.v = float(-rng.uniform(0.0, 1.0))
        self.fuel = 150.0
        self.steps = 0
        self.done = False
        self.landed_gently = False
        self._live = True
        return self._obs()

    def _obs(self) -> tuple:
        return (self.h, self.v, self.fuel)

    def step(self, action: int) -> tuple[tuple, float, bool]:
        if self.done or not self._live:
            raise RuntimeError("step() after episode end; call reset() first")
        action = int(action)
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} out of range")
        thrust = action == 1 and self.fuel > 0.0
        self.v += -self.GRAVITY + (self.THRUST if thrust else 0.0)
        if thrust:
            self.fuel -= 1.0
        self.h += self.v
        self.steps += 1
        reward = -0.01 - (0.05 if thrust else 0.0)
        if self.h <= 0.0:
            self.done = True
            if abs(self.v) <= self.SAFE_SPEED:
                reward += 100.0
                self.landed_gently = True
            else:
                reward -= 100.0
        elif self.steps >= self.max_steps:
            self.done = True
        return self._obs(), reward, self.done


ENVIRONMENTS: dict[str, Callable[[], object]] = {
    "minihighway": MiniHighway,
    "minilander": MiniLander,
}


# ---------------------------------------------------------------------------
# Scripted oracles
# ---------------------------------------------------------------------------

class HighwayOracle:
    """Reference highway policy over the documented observation layout.

    Action preference scores double as the oracle's action values: each
    action is scored by the speed and rightmost-lane reward it leads to,
    minus a large penalty when it steers into a close car.
    """

    DANGER_X = 30.0
    name = "highway"

    def _lane_blocked(self, obs, lane_y: float, horizon: float) -> bool:
        for base in (4, 8):
            dx, cy = obs[base], obs[base + 1]
            if abs(cy - lane_y) < 2.0 and dx < horizon:
                return True
        return False

    def scores(self, obs: Sequence[float]) -> tuple:
        y = obs[1]
        speed_level = {2.0: 0, 3.0: 1, 4.0: 2, 5.0: 3}.get(obs[2], 1)
        qs = []
        for action in range(5):
            ty = y
            lvl = speed_level
            if action == A_LEFT:
                ty = max(0.0, y - 4.0)
            elif action == A_RIGHT:
                ty = min(8.0, y + 4.0)
            elif action == A_FASTER:
                lvl = min(3, speed_level + 1)
            elif action == A_SLOWER:
                lvl = max(0, speed_level - 1)
            horizon = self.DANGER_X * (0.6 + 0.2 * lvl)
            q = 0.25 * (lvl / 3.0) + 0.35 * (1.0 if ty == 8.0 else 0.0)
            if action in (A_LEFT, A_RIGHT) and ty == y:
                q -= 0.2  # bumping the wall
            if self._lane_blocked(obs, ty, horizon):
                q -= 3.0
            qs.append(round(q, 6))
        return tuple(qs)

    def act(self, obs: Sequence[float]) -> tuple[int, tuple]:
        qs = self.scores(obs)
        best = max(range(5), key=lambda a: (qs[a], -a))
        return best, qs


class LanderOracle:
    """Thrust when the projected landing would be too fast."""

    name = "lander"

    def scores(self, obs: Sequence[float]) -> tuple:
        h, v, fuel = obs
        # speed margin: how much faster than safe we would land if we coast
        margin = -(v) - (1.6 + 0.02 * h)
        q_noop = round(-margin, 6)
        q_thrust = round(margin - 0.05 if fuel > 0 else -10.0, 6)
        return (q_noop, q_thrust)

    def act(self, obs: Sequence[float]) -> tuple[int, tuple]:
        qs = self.scores(obs)
        return (1, qs) if qs[1] > qs[0] else (0, qs)


ORACLES: dict[str, Callable[[], object]] = {
    "highway": HighwayOracle,
    "lander": LanderOracle,
}

DEFAULT_ORACLE_FOR_ENV = {
    "minihighway": "highway",
    "minilander": "lander",
}


def collect_traces(env, oracle, steps: int, seed: int) -> Dataset:
    """Follow the oracle in the environment until ``steps`` observation-action
    records (with action values) are collected, resetting on episode end."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    examples = []
    episode = 0
    obs = env.reset(seed)
    while len(examples) < steps:
        action, qs = oracle.act(obs)
        examples.append(IOExample(input=tuple(obs), output=int(action),
                                  q_values=tuple(qs)))
        obs, _, done = env.step(action)
        if done and len(examples) < steps:
            episode += 1
            obs = env.reset(seed + 1000 * episode)
    return Dataset(examples=tuple(examples), task="action",
                   provenance="oracle-trace", seed=seed)


def collision_count(program: Program, env_factory: Callable[[], MiniHighway],
                    episodes: int, seeds: Sequence[int],
                    limits: RuntimeLimits = DEFAULT_LIMITS) -> float:
    """Mean collisions per episode (an episode ends on its first collision)."""
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    if len(seeds) != episodes:
        raise ValueError("need exactly one seed per episode")
    compiled = CompiledProgram(program)
    hits = 0
    for seed in seeds:
        env = env_factory()
        obs = env.reset(seed)
        for _ in range(env.max_steps):
            outcome = compiled.run_policy(obs, limits)
            if not outcome.ok:
                break
            obs, _, done = env.step(outcome.result)
            if done:
                break
        if getattr(env, "collided", False):
            hits += 1
    return hits / episodes
