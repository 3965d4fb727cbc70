"""Preallocated FIFO replay buffer in slot layout.

A record holds the key tau_{t_i-c:t+1} as ``W = c + max_n`` step slots
(slot ``c + phase`` is the current step) with a validity mask. The history
that precedes s_{t+1} is rebuilt at sampling time: within an interval it is
the key itself, after an interval end it is the key's last ``c`` steps moved
to the overlap slots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hc import SegmentBatch, StepLayout


class RecordError(ValueError):
    """A record is missing or contradicts its interval bookkeeping."""


@dataclass(frozen=True)
class ReplayRecord:
    window: np.ndarray  # (W, F) step features
    window_mask: np.ndarray  # (W,)
    phase: int
    reward: float
    state: np.ndarray
    next_state: np.ndarray
    next_phase: int
    interval_end: bool
    terminal: bool
    behavior_id: int = 0
    episode: int = 0
    step: int = 0
    guidance: float = float("nan")

    def validate(self, layout: StepLayout) -> None:
        c, W = layout.overlap_c, layout.width
        if self.window.shape != (W, layout.step_dim) or self.window_mask.shape != (W,):
            raise RecordError(f"window shape {self.window.shape} does not match layout width {W}")
        if not 0 <= self.phase < layout.max_n:
            raise RecordError(f"phase {self.phase} outside [0, {layout.max_n})")
        body = self.window_mask[c:]
        if not (np.all(body[: self.phase + 1] == 1.0) and np.all(body[self.phase + 1:] == 0.0)):
            raise RecordError("mask does not match phase")
        if not self.interval_end and self.reward != 0.0:
            raise RecordError("nonzero reward inside an interval")
        if self.interval_end != (self.next_phase == 0):
            raise RecordError("interval end must reset the next phase to 0")
        if not self.interval_end and self.next_phase != self.phase + 1:
            raise RecordError("next phase must advance by one inside an interval")
        rel = self.window[:, -1] * layout.max_n
        want = (np.arange(W) - c) * self.window_mask
        if not np.allclose(rel * self.window_mask, want):
            raise RecordError("slot phase features do not match slot positions")


class ReplayBuffer:
    """Ring buffer with strict FIFO eviction once ``capacity`` is reached."""

    def __init__(self, capacity: int, layout: StepLayout):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.layout = layout
        W, F, D = layout.width, layout.step_dim, layout.state_dim
        n = self.capacity
        self.window = np.zeros((n, W, F))
        self.window_mask = np.zeros((n, W))
        self.phase = np.zeros(n, dtype=np.int64)
        self.reward = np.zeros(n)
        self.state = np.zeros((n, D))
        self.next_state = np.zeros((n, D))
        self.next_phase = np.zeros(n, dtype=np.int64)
        self.interval_end = np.zeros(n, dtype=bool)
        self.terminal = np.zeros(n, dtype=bool)
        self.behavior_id = np.zeros(n, dtype=np.int64)
        self.episode = np.zeros(n, dtype=np.int64)
        self.step = np.zeros(n, dtype=np.int64)
        self.guidance = np.full(n, np.nan)
        self.size = 0
        self.head = 0  # next write slot
        self.added = 0

    def __len__(self) -> int:
        return self.size

    def add(self, rec: ReplayRecord) -> None:
        i = self.head
        self.window[i] = rec.window
        self.window_mask[i] = rec.window_mask
        self.phase[i] = rec.phase
        self.reward[i] = rec.reward
        self.state[i] = rec.state
        self.next_state[i] = rec.next_state
        self.next_phase[i] = rec.next_phase
        self.interval_end[i] = rec.interval_end
        self.terminal[i] = rec.terminal
        self.behavior_id[i] = rec.behavior_id
        self.episode[i] = rec.episode
        self.step[i] = rec.step
        self.guidance[i] = rec.guidance
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.added += 1

    def order(self) -> np.ndarray:
        """Buffer indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.head) % self.capacity

    def record(self, i: int) -> ReplayRecord:
        return ReplayRecord(
            self.window[i].copy(), self.window_mask[i].copy(), int(self.phase[i]), float(self.reward[i]),
            self.state[i].copy(), self.next_state[i].copy(), int(self.next_phase[i]), bool(self.interval_end[i]),
            bool(self.terminal[i]), int(self.behavior_id[i]), int(self.episode[i]), int(self.step[i]),
            float(self.guidance[i]),
        )

    def records(self) -> list[ReplayRecord]:
        return [self.record(int(i)) for i in self.order()]

    def sample_indices(self, rng: np.random.Generator, batch_size: int) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, rng: np.random.Generator, batch_size: int) -> SegmentBatch:
        return self.batch(self.sample_indices(rng, batch_size))

    def batch(self, idx: np.ndarray) -> SegmentBatch:
        lay = self.layout
        c, W, M = lay.overlap_c, lay.width, lay.max_n
        idx = np.asarray(idx)
        B = len(idx)
        window = self.window[idx]
        wmask = self.window_mask[idx]
        phase = self.phase[idx]
        rows = np.arange(B)
        cur_slot = c + phase
        cur = window[rows, cur_slot]
        hist_mask = wmask.copy()
        hist_mask[rows, cur_slot] = 0.0
        ends = self.interval_end[idx]
        next_hist = window.copy()
        next_mask = wmask.copy()
        if ends.any():
            e = np.flatnonzero(ends)
            next_hist[e] = 0.0
            next_mask[e] = 0.0
            if c > 0:
                # last c steps of the key: slots phase+1 .. phase+c
                src = phase[e, None] + 1 + np.arange(c)[None, :]
                moved = window[e[:, None], src]
                moved[..., -1] = (np.arange(c) - c)[None, :] / M
                next_hist[e, :c] = moved
                next_mask[e, :c] = wmask[e[:, None], src]
                next_hist[e, :c] *= next_mask[e, :c, None]
        return SegmentBatch(
            hist=window,
            hist_mask=hist_mask,
            cur=cur,
            window=window,
            window_mask=wmask,
            reward=self.reward[idx],
            state=self.state[idx],
            phase=phase,
            next_state=self.next_state[idx],
            next_phase=self.next_phase[idx],
            next_hist=next_hist,
            next_hist_mask=next_mask,
            interval_end=ends,
            terminal=self.terminal[idx],
            guidance=self.guidance[idx],
        )


__all__ = ["RecordError", "ReplayBuffer", "ReplayRecord"]
