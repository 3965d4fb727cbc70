"""Delayed-reward environments.

``PointReachEnv`` is a continuous 2-D reaching task on an ``L x L`` square.
The agent starts at the bottom-left corner and must reach an ``L/10 x L/10``
target on the middle of the right edge. Every ``interval`` steps it receives
the best vertical-band index it stood in during the interval, minus 10
unless the target was reached.

``DelayedRewardWrapper`` turns any per-step-reward environment into a
delayed-reward stream with sum, max or square aggregation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import IntervalLaw, RewardKind, square_shape

N_BANDS = 10
GRID_CELLS = 10


@dataclass(frozen=True)
class PointReachConfig:
    size: float = 20.0
    interval: int = 8
    step_limit: int = 120
    bonus: float = 10.0

    def __post_init__(self):
        if self.size <= 0 or self.interval < 1 or self.step_limit < 1:
            raise ValueError("size, interval and step_limit must be positive")

    @classmethod
    def full_scale(cls) -> "PointReachConfig":
        return cls(size=100.0, interval=20, step_limit=500)

    @property
    def cell(self) -> float:
        return self.size / GRID_CELLS

    @property
    def target_box(self) -> tuple[float, float, float, float]:
        """(x_lo, x_hi, y_lo, y_hi)."""
        L = self.size
        return (L - L / 10.0, L, L / 2.0 - L / 20.0, L / 2.0 + L / 20.0)

    @property
    def target_center(self) -> tuple[float, float]:
        L = self.size
        return (L - L / 20.0, L / 2.0)


def band(config: PointReachConfig, x: float) -> int:
    """Index of the vertical band containing ``x``; nondecreasing in ``x``."""
    return min(int(x // (config.size / N_BANDS)), N_BANDS - 1)


def in_target(config: PointReachConfig, pos) -> bool:
    x0, x1, y0, y1 = config.target_box
    return x0 <= pos[0] <= x1 and y0 <= pos[1] <= y1


def interval_reward(config: PointReachConfig, xs: Sequence[float], reached: bool) -> float:
    """Max band over the interval's step states plus the reach adjustment."""
    return float(max(band(config, x) for x in xs)) + config.bonus * (float(reached) - 1.0)


@dataclass(frozen=True)
class PointReachState:
    pos: tuple[float, float] = (0.0, 0.0)
    t: int = 0
    phase: int = 0
    best_band: int = -1
    done: bool = False


@dataclass(frozen=True)
class PointReachStep:
    state: PointReachState
    reward: float
    done: bool
    terminated: bool  # reached the target
    truncated: bool  # hit the step limit
    interval_end: bool
    phase: int  # phase of the step just taken
    clipped: bool


def point_reach_step(config: PointReachConfig, state: PointReachState, action) -> PointReachStep:
    """Advance one step. Actions are clipped to [-1, 1]^2, positions to [0, L]^2."""
    if state.done:
        raise RuntimeError("episode is over; reset first")
    a = np.asarray(action, dtype=float)
    clipped_a = np.clip(a, -1.0, 1.0)
    clipped = bool(np.any(clipped_a != a))
    x, y = state.pos
    best = max(state.best_band, band(config, x))
    nx = float(np.clip(x + clipped_a[0], 0.0, config.size))
    ny = float(np.clip(y + clipped_a[1], 0.0, config.size))
    t = state.t + 1
    reached = in_target(config, (nx, ny))
    limit = t >= config.step_limit
    end = reached or limit or state.phase + 1 == config.interval
    reward = 0.0
    if end:
        reward = float(best) + config.bonus * (float(reached) - 1.0)
    done = reached or limit
    nxt = PointReachState(
        pos=(nx, ny),
        t=t,
        phase=0 if end else state.phase + 1,
        best_band=-1 if end else best,
        done=done,
    )
    return PointReachStep(nxt, reward, done, reached, limit and not reached, end, state.phase, clipped)


class PointReachEnv:
    """Stateful wrapper around :func:`point_reach_step`."""

    def __init__(self, config: PointReachConfig | None = None):
        self.config = config or PointReachConfig()
        self.state = PointReachState(done=True)

    def reset(self) -> np.ndarray:
        self.state = PointReachState()
        return np.array(self.state.pos)

    @property
    def phase(self) -> int:
        return self.state.phase

    def step(self, action) -> PointReachStep:
        out = point_reach_step(self.config, self.state, action)
        self.state = out.state
        return out


def shortest_path_steps(config: PointReachConfig, start=(0.0, 0.0)) -> int:
    """Fewest steps from ``start`` to the target under per-axis speed limits of 1.

    Each axis moves at most 1 per step, so the count is the Chebyshev
    distance to the nearest target point, rounded up.
    """
    x0, x1, y0, y1 = config.target_box
    dx = max(x0 - start[0], 0.0, start[0] - x1)
    dy = max(y0 - start[1], 0.0, start[1] - y1)
    return int(math.ceil(max(dx, dy) - 1e-12))


def euclidean_path_steps(config: PointReachConfig, start=(0.0, 0.0)) -> int:
    """Straight-line distance to the nearest target point at unit speed, rounded up."""
    x0, x1, y0, y1 = config.target_box
    dx = max(x0 - start[0], 0.0, start[0] - x1)
    dy = max(y0 - start[1], 0.0, start[1] - y1)
    return int(math.ceil(math.hypot(dx, dy) - 1e-12))


# ---------------------------------------------------------------------------
# features and heatmap


def step_features(config: PointReachConfig, pos, action, rel_phase) -> np.ndarray:
    """(x/L, y/L, a_x, a_y, rel_phase / interval) with broadcasting over leading axes."""
    pos = np.asarray(pos, dtype=float)
    action = np.asarray(action, dtype=float)
    rel = np.asarray(rel_phase, dtype=float)[..., None] / config.interval
    rel = np.broadcast_to(rel, pos.shape[:-1] + (1,))
    return np.concatenate([pos / config.size, action, rel], axis=-1)


def cell_centers(config: PointReachConfig) -> np.ndarray:
    """(10, 10, 2) array; [row j, column i] holds the centre of cell (x index i, y index j)."""
    c = (np.arange(GRID_CELLS) + 0.5) * config.cell
    xx, yy = np.meshgrid(c, c)
    return np.stack([xx, yy], axis=-1)


def export_heatmap(b, config: PointReachConfig, policy: Callable[[np.ndarray, np.ndarray], np.ndarray],
                   path=None) -> np.ndarray:
    """Evaluate a one-step network ``b`` at every cell centre with the policy's phase-0 action.

    ``policy(positions (N, 2), phases (N,)) -> actions (N, 2)``. Row j of the
    result is the j-th cell from the bottom, column i the i-th from the left.
    """
    centres = cell_centers(config).reshape(-1, 2)
    phases = np.zeros(len(centres))
    actions = policy(centres, phases)
    feats = step_features(config, centres, actions, phases)
    grid = np.asarray(b.forward(feats)).reshape(GRID_CELLS, GRID_CELLS)
    if path is not None:
        write_grid_csv(grid, path)
    return grid


def write_grid_csv(grid: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in grid:
            w.writerow([repr(float(v)) for v in row])


def read_grid_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])


def line_mask(config: PointReachConfig, width: float | None = None) -> np.ndarray:
    """Cells whose centre lies within ``width`` (default one cell) of the start-to-target segment."""
    width = config.cell if width is None else width
    p = cell_centers(config)
    a = np.zeros(2)
    b = np.array(config.target_center)
    d = b - a
    u = np.clip(((p - a) @ d) / (d @ d), 0.0, 1.0)
    dist = np.linalg.norm(p - (a + u[..., None] * d), axis=-1)
    return dist <= width


def line_contrast(grid: np.ndarray, config: PointReachConfig) -> tuple[float, float]:
    """(mean over cells near the start-to-target line, mean over the rest)."""
    m = line_mask(config)
    return float(grid[m].mean()), float(grid[~m].mean())


# ---------------------------------------------------------------------------
# episode export


@dataclass(frozen=True)
class TraceRow:
    t: int
    x: float
    y: float
    a_x: float
    a_y: float
    phase: int
    reward: float
    done: bool


TRACE_HEADER = ("t", "x", "y", "a_x", "a_y", "phase", "R_t", "done")


def write_trace_csv(rows: Sequence[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for r in rows:
            w.writerow([r.t, repr(r.x), repr(r.y), repr(r.a_x), repr(r.a_y), r.phase, repr(r.reward), int(r.done)])


def rollout_point_reach(config: PointReachConfig, policy, max_steps: int | None = None) -> tuple[list[TraceRow], bool]:
    """Deterministic rollout; ``policy(pos (2,), phase) -> action (2,)``. Returns (rows, reached)."""
    env = PointReachEnv(config)
    pos = env.reset()
    rows = []
    for _ in range(max_steps or config.step_limit):
        phase = env.phase
        a = np.asarray(policy(pos, phase), dtype=float)
        out = env.step(a)
        rows.append(TraceRow(out.state.t - 1, float(pos[0]), float(pos[1]), float(a[0]), float(a[1]), phase,
                             out.reward, out.done))
        pos = np.array(out.state.pos)
        if out.done:
            return rows, out.terminated
    return rows, False


# ---------------------------------------------------------------------------
# generic delayed-reward wrapper


class StepEnv(Protocol):
    def reset(self): ...

    def step(self, action) -> tuple[object, float, bool]: ...


@dataclass(frozen=True)
class DelayedStep:
    state: object
    action: object
    reward: float  # R_t, zero except at interval ends
    next_state: object
    phase: int
    interval_end: bool
    done: bool


@dataclass
class EpisodeLedger:
    """Running totals for one wrapped episode."""

    step_rewards: list[float] = field(default_factory=list)
    emitted: list[float] = field(default_factory=list)
    interval_rewards: list[float] = field(default_factory=list)
    dropped_tail: int = 0


class DelayedRewardWrapper:
    """Delays an inner environment's per-step reward to signal-interval ends.

    Sum with overlap ``c`` pays, at the end of interval i, the per-step
    rewards of steps [t_i - c, t_{i+1} - c); steps before the episode start
    count as 0. When the episode ends, the last ``c`` per-step rewards are
    never paid; their count is kept in ``ledger.dropped_tail``.
    """

    def __init__(self, inner: StepEnv, kind: str | RewardKind, interval_law: IntervalLaw, c: int = 0,
                 seed: int | np.random.Generator = 0):
        kind = RewardKind(kind)
        if kind not in (RewardKind.SUM, RewardKind.MAX, RewardKind.SQUARE):
            raise ValueError(f"wrapper supports sum, max and square, not {kind.value}")
        if c < 0 or (c > 0 and kind is not RewardKind.SUM):
            raise ValueError("overlap c > 0 is only defined for the sum form")
        self.inner = inner
        self.kind = kind
        self.law = interval_law
        self.c = c
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.ledger = EpisodeLedger()
        self._state = None

    def reset(self):
        self._state = self.inner.reset()
        self.ledger = EpisodeLedger()
        self._start = 0
        self._length = self.law.sample(self.rng)
        return self._state

    def _aggregate(self, start: int, stop: int) -> float:
        r = self.ledger.step_rewards
        if self.kind is RewardKind.SUM:
            return float(sum(r[j] for j in range(start - self.c, stop - self.c) if j >= 0))
        body = r[start:stop]
        if self.kind is RewardKind.MAX:
            return 10.0 * max(body)
        return square_shape(sum(body) / len(body))

    def step(self, action) -> DelayedStep:
        s = self._state
        s2, r_hat, done = self.inner.step(action)
        self.ledger.step_rewards.append(float(r_hat))
        t = len(self.ledger.step_rewards) - 1
        phase = t - self._start
        end = done or phase + 1 == self._length
        R = 0.0
        if end:
            R = self._aggregate(self._start, t + 1)
            self.ledger.interval_rewards.append(R)
            self._start = t + 1
            self._length = self.law.sample(self.rng)
        if done and self.kind is RewardKind.SUM:
            self.ledger.dropped_tail = min(self.c, t + 1)
        self.ledger.emitted.append(R)
        self._state = s2
        return DelayedStep(s, action, R, s2, phase, end, done)


def wrap_delayed(inner: StepEnv, kind, interval_law: IntervalLaw, c: int = 0, seed=0) -> DelayedRewardWrapper:
    return DelayedRewardWrapper(inner, kind, interval_law, c, seed)


class ScriptedRewardEnv:
    """Inner environment replaying a fixed per-step reward sequence; state is the step index."""

    def __init__(self, rewards: Sequence[float]):
        self.rewards = list(rewards)
        self.t = 0

    def reset(self):
        self.t = 0
        return 0

    def step(self, action):
        r = self.rewards[self.t]
        self.t += 1
        return self.t, r, self.t >= len(self.rewards)


class PointReachStepReward:
    """Point Reach dynamics with a dense per-step reward: the band index of the current x."""

    def __init__(self, config: PointReachConfig | None = None):
        self.config = replace(config or PointReachConfig(), interval=1)
        self.env = PointReachEnv(self.config)

    def reset(self):
        return self.env.reset()

    def step(self, action):
        x = self.env.state.pos[0]
        out = self.env.step(action)
        return np.array(out.state.pos), float(band(self.config, x)), out.done


__all__ = [
    "DelayedRewardWrapper",
    "DelayedStep",
    "PointReachConfig",
    "PointReachEnv",
    "PointReachState",
    "PointReachStep",
    "PointReachStepReward",
    "ScriptedRewardEnv",
    "TraceRow",
    "band",
    "cell_centers",
    "euclidean_path_steps",
    "export_heatmap",
    "in_target",
    "interval_reward",
    "line_contrast",
    "line_mask",
    "point_reach_step",
    "read_grid_csv",
    "rollout_point_reach",
    "shortest_path_steps",
    "step_features",
    "wrap_delayed",
    "write_grid_csv",
    "write_trace_csv",
]
