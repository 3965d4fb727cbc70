"""Delayed-reward MDPs: dynamics, signal intervals, reward functionals, policies.

A trajectory is cut into consecutive signal intervals whose lengths are drawn
i.i.d. from an interval law. Each interval pays one reward, revealed at its
last step, that may depend on the whole interval plus up to ``c`` steps that
precede it (the overlap). Steps before the episode start are represented by
the ``PAD`` sentinel, which carries per-step reward 0.

States and actions are integer ids. Every state has its own tuple of
available action ids; terminal states are absorbing and end the episode on
entry.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

PAD = (-1, -1)
PROB_ATOL = 1e-12
TIE_ATOL = 1e-12

Step = tuple[int, int]


class SpecError(ValueError):
    """A structural invariant of a spec, law, or policy is violated."""


class IntervalLengthError(ValueError):
    """A reward was requested for a segment whose length is not in the law's support."""


class CoverageError(KeyError):
    """A tabulated reward has no entry for the requested segment."""


class EnumerationCapError(RuntimeError):
    """Exhaustive enumeration would exceed the configured cap."""


# ---------------------------------------------------------------------------
# interval law


@dataclass(frozen=True)
class IntervalLaw:
    """Distribution q_n of signal-interval lengths over a finite support."""

    support: tuple[int, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        support = tuple(int(n) for n in self.support)
        probs = tuple(float(p) for p in self.probs)
        if not support or len(support) != len(probs):
            raise SpecError("interval law needs a nonempty support with matching probabilities")
        if any(n < 1 for n in support) or len(set(support)) != len(support):
            raise SpecError(f"interval lengths must be distinct positive integers: {support}")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > PROB_ATOL:
            raise SpecError(f"interval probabilities must sum to 1, got {sum(probs)!r}")
        order = sorted(range(len(support)), key=support.__getitem__)
        object.__setattr__(self, "support", tuple(support[i] for i in order))
        object.__setattr__(self, "probs", tuple(probs[i] for i in order))

    @classmethod
    def fixed(cls, n: int) -> "IntervalLaw":
        return cls((n,), (1.0,))

    @classmethod
    def uniform(cls, lo: int, hi: int) -> "IntervalLaw":
        k = hi - lo + 1
        return cls(tuple(range(lo, hi + 1)), (1.0 / k,) * k)

    @property
    def max_length(self) -> int:
        return self.support[-1]

    def prob(self, n: int) -> float:
        try:
            return self.probs[self.support.index(n)]
        except ValueError:
            return 0.0

    def hazard(self, k: int) -> float:
        """Probability that an interval which reached relative step ``k`` ends there.

        This is q_n(n = k | n >= k); it is 1 at the largest supported length.
        """
        if k >= self.max_length:
            return 1.0
        tail = sum(p for n, p in zip(self.support, self.probs) if n >= k)
        if tail <= 0.0:
            return 1.0
        return min(1.0, self.prob(k) / tail)

    def hazards(self) -> np.ndarray:
        return np.array([self.hazard(k) for k in range(1, self.max_length + 1)])

    def sample(self, rng: np.random.Generator) -> int:
        return int(self.support[rng.choice(len(self.support), p=np.asarray(self.probs))])


def probs_from_hazards(hazards: Sequence[float]) -> np.ndarray:
    """Rebuild q_n(1..len) from hazard values h(1..len)."""
    out = np.zeros(len(hazards))
    alive = 1.0
    for i, h in enumerate(hazards):
        out[i] = alive * h
        alive *= 1.0 - h
    return out


# ---------------------------------------------------------------------------
# segments


@dataclass(frozen=True)
class TrajectorySegment:
    """Ordered (state, action) steps of one interval prefix.

    The first ``prefix_len`` steps belong to earlier intervals (the overlap
    window); leading ``PAD`` steps stand for time before the episode start.
    """

    steps: tuple[Step, ...]
    prefix_len: int = 0

    @property
    def body(self) -> tuple[Step, ...]:
        return self.steps[self.prefix_len:]

    @property
    def body_len(self) -> int:
        return len(self.steps) - self.prefix_len

    @property
    def padding(self) -> int:
        n = 0
        for step in self.steps:
            if step != PAD:
                break
            n += 1
        return n

    @property
    def last(self) -> Step:
        return self.steps[-1]

    def extend(self, step: Step) -> "TrajectorySegment":
        return TrajectorySegment(self.steps + (tuple(step),), self.prefix_len)

    def history(self) -> "TrajectorySegment":
        """The segment without its final step."""
        return TrajectorySegment(self.steps[:-1], self.prefix_len)

    def overlap_tail(self, c: int) -> "TrajectorySegment":
        """Last ``c`` steps, to be carried as the prefix of the next interval."""
        return TrajectorySegment(self.steps[len(self.steps) - c:] if c else (), c)

    def __len__(self) -> int:
        return len(self.steps)


def initial_prefix(c: int) -> TrajectorySegment:
    return TrajectorySegment((PAD,) * c, c)


# ---------------------------------------------------------------------------
# reward functionals


class RewardKind(str, enum.Enum):
    SUM = "sum"
    MAX = "max"
    SQUARE = "square"
    WEIGHTED_SUM = "weighted_sum"
    TABULATED = "tabulated"


def square_shape(avg: float) -> float:
    """4 * avg inside (-1, 1), 4 * sign(avg) * avg**2 outside."""
    if abs(avg) < 1.0:
        return 4.0 * avg
    return 4.0 * math.copysign(avg * avg, avg)


@dataclass(frozen=True, eq=False)
class RewardFunctional:
    """Maps an interval window (prefix + body) to its delayed reward.

    ``step_reward`` is an (S, A) table used by the derived kinds. ``weights``
    indexes window positions, starting at the first prefix step.
    ``table`` maps a tuple of steps (including any ``PAD``) to a value.
    """

    kind: RewardKind
    step_reward: np.ndarray | None = None
    weights: tuple[float, ...] | None = None
    table: Mapping[tuple[Step, ...], float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RewardKind(self.kind))
        if self.kind is RewardKind.TABULATED:
            if self.table is None:
                raise SpecError("tabulated reward needs a table")
            object.__setattr__(
                self, "table", {tuple(tuple(s) for s in k): float(v) for k, v in self.table.items()}
            )
            return
        if self.step_reward is None:
            raise SpecError(f"{self.kind.value} reward needs a per-step reward table")
        object.__setattr__(self, "step_reward", np.asarray(self.step_reward, dtype=float))
        if self.kind is RewardKind.WEIGHTED_SUM:
            if self.weights is None:
                raise SpecError("weighted-sum reward needs weights")
            w = tuple(float(x) for x in self.weights)
            if any(x < 0.0 or x > 1.0 for x in w):
                raise SpecError(f"weights must lie in [0, 1]: {w}")
            object.__setattr__(self, "weights", w)

    def per_step(self, step: Step) -> float:
        if step == PAD:
            return 0.0
        return float(self.step_reward[step[0], step[1]])

    def __call__(self, segment: TrajectorySegment) -> float:
        steps = segment.steps
        kind = self.kind
        if kind is RewardKind.TABULATED:
            try:
                return self.table[steps]
            except KeyError:
                raise CoverageError(steps) from None
        if kind is RewardKind.SUM:
            # overlapped sum: window positions [0, body_len) i.e. steps t_i-c .. t_i+n_i-c-1
            return float(sum(self.per_step(s) for s in steps[: segment.body_len]))
        body = [self.per_step(s) for s in segment.body]
        if kind is RewardKind.MAX:
            return 10.0 * max(body)
        if kind is RewardKind.SQUARE:
            return square_shape(sum(body) / len(body))
        if len(steps) > len(self.weights):
            raise IntervalLengthError(f"window of {len(steps)} steps exceeds {len(self.weights)} weights")
        return float(sum(w * self.per_step(s) for w, s in zip(self.weights, steps)))

    def defines_truncated(self, segment: TrajectorySegment) -> bool:
        if self.kind is RewardKind.TABULATED:
            return segment.steps in self.table
        return True


# ---------------------------------------------------------------------------
# the process


@dataclass(frozen=True, eq=False)
class DrmdpSpec:
    """Finite delayed-reward MDP with overlap ``overlap_c``.

    Args:
        actions: per state, the tuple of available action ids.
        transition: (S, A, S) array; rows of unavailable pairs are ignored.
        initial: (S,) initial state distribution.
        terminal: absorbing states; entering one ends the episode.
    """

    actions: tuple[tuple[int, ...], ...]
    transition: np.ndarray
    initial: np.ndarray
    interval_law: IntervalLaw
    reward: RewardFunctional
    gamma: float
    overlap_c: int = 0
    terminal: frozenset[int] = frozenset()
    state_names: tuple[str, ...] | None = None
    action_names: tuple[str, ...] | None = None

    def __post_init__(self):
        actions = tuple(tuple(sorted(int(a) for a in acts)) for acts in self.actions)
        object.__setattr__(self, "actions", actions)
        P = np.asarray(self.transition, dtype=float)
        mu = np.asarray(self.initial, dtype=float)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "initial", mu)
        object.__setattr__(self, "terminal", frozenset(int(s) for s in self.terminal))
        S = len(actions)
        if P.ndim != 3 or P.shape[0] != S or P.shape[2] != S:
            raise SpecError(f"transition must be (S, A, S) with S={S}, got {P.shape}")
        if mu.shape != (S,) or np.any(mu < 0) or abs(mu.sum() - 1.0) > PROB_ATOL:
            raise SpecError("initial distribution must be a probability vector over states")
        if not 0.0 < self.gamma < 1.0:
            raise SpecError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.overlap_c < 0:
            raise SpecError("overlap_c must be nonnegative")
        for s, acts in enumerate(actions):
            if not acts:
                raise SpecError(f"state {s} has no available action")
            for a in acts:
                if not 0 <= a < P.shape[1]:
                    raise SpecError(f"action id {a} out of range at state {s}")
                row = P[s, a]
                if np.any(row < 0) or abs(row.sum() - 1.0) > PROB_ATOL:
                    raise SpecError(f"transition row ({s}, {a}) does not sum to 1")
        if any(mu[s] > 0 for s in self.terminal):
            raise SpecError("initial distribution puts mass on a terminal state")

    @property
    def n_states(self) -> int:
        return len(self.actions)

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def max_phase(self) -> int:
        return self.interval_law.max_length

    def successors(self, s: int, a: int) -> list[tuple[int, float]]:
        row = self.transition[s, a]
        return [(int(t), float(row[t])) for t in np.flatnonzero(row > 0.0)]

    def start_states(self) -> list[int]:
        return [int(s) for s in np.flatnonzero(self.initial > 0.0)]

    def state_name(self, s: int) -> str:
        if s < 0:
            return "<pad>"
        return self.state_names[s] if self.state_names else str(s)

    def action_name(self, a: int) -> str:
        if a < 0:
            return "<pad>"
        return self.action_names[a] if self.action_names else str(a)

    def format_segment(self, steps: Sequence[Step]) -> str:
        return " ".join(f"({self.state_name(s)},{self.action_name(a)})" for s, a in steps)


def evaluate_reward(spec: DrmdpSpec, segment: TrajectorySegment, *, allow_truncated: bool = False) -> float:
    """Delayed reward of an interval window.

    Raises IntervalLengthError when the body length is outside the interval
    law's support (unless ``allow_truncated``) and CoverageError when a
    tabulated reward has no entry.
    """
    if segment.body_len < 1:
        raise IntervalLengthError("empty interval")
    if not allow_truncated and segment.body_len not in spec.interval_law.support:
        raise IntervalLengthError(
            f"interval length {segment.body_len} not in support {spec.interval_law.support}"
        )
    return spec.reward(segment)


def truncated_reward(spec: DrmdpSpec, segment: TrajectorySegment) -> tuple[float, bool]:
    """Reward of an interval cut short by absorption: (value, paid)."""
    if segment.body_len in spec.interval_law.support or spec.reward.defines_truncated(segment):
        return spec.reward(segment), True
    return 0.0, False


# ---------------------------------------------------------------------------
# reachable segments


def enumerate_segments(spec: DrmdpSpec, cap: int = 200_000) -> list[TrajectorySegment]:
    """All segments tau_{t_i-c:t+1} that occur with positive probability.

    Reachability is taken over every available action, so the set does not
    depend on a policy. Returned in lexicographic order (``PAD`` sorts first).
    """
    c = spec.overlap_c
    law = spec.interval_law
    start = initial_prefix(c)
    frontier = deque(start.extend((s, a)) for s in spec.start_states() for a in spec.actions[s])
    seen = set(frontier)
    while frontier:
        key = frontier.popleft()
        s, a = key.last
        h = law.hazard(key.body_len)
        for s2, _ in spec.successors(s, a):
            if s2 in spec.terminal:
                continue
            nexts = []
            if h > 0.0:
                tail = key.overlap_tail(c)
                nexts.extend(tail.extend((s2, a2)) for a2 in spec.actions[s2])
            if h < 1.0:
                nexts.extend(key.extend((s2, a2)) for a2 in spec.actions[s2])
            for nk in nexts:
                if nk not in seen:
                    seen.add(nk)
                    if len(seen) > cap:
                        raise EnumerationCapError(f"more than {cap} reachable segments")
                    frontier.append(nk)
    return sorted(seen, key=lambda k: k.steps)


def interval_windows(spec: DrmdpSpec, max_len: int | None = None, cap: int = 200_000) -> list[TrajectorySegment]:
    """Reachable complete-interval windows (body length in the law's support)."""
    support = set(spec.interval_law.support)
    return [
        k
        for k in enumerate_segments(spec, cap)
        if k.body_len in support and (max_len is None or len(k.steps) <= max_len)
    ]


# ---------------------------------------------------------------------------
# past-invariance checks


@dataclass(frozen=True)
class PiReport:
    holds: bool
    witness: tuple[tuple[Step, ...], tuple[Step, ...], tuple[Step, ...], tuple[Step, ...]] | None = None
    comparisons: int = 0

    def describe(self, spec: DrmdpSpec) -> str:
        if self.holds:
            return f"holds ({self.comparisons} comparisons)"
        t1, t2, u1, u2 = (spec.format_segment(x) for x in self.witness)
        return f"violated: tau1={t1} tau2={t2} tau1'={u1} tau2'={u2}"


def _sign(x: np.ndarray, atol: float) -> np.ndarray:
    return np.where(np.abs(x) <= atol, 0, np.sign(x)).astype(int)


def _pi_scan(spec: DrmdpSpec, max_len: int | None, cap: int, strong: bool, atol: float) -> PiReport:
    windows = interval_windows(spec, max_len, cap)
    values = {w.steps: spec.reward(w) for w in windows}
    by_length: dict[int, list[tuple[Step, ...]]] = {}
    for steps in values:
        by_length.setdefault(len(steps), []).append(steps)
    comparisons = 0
    for total in sorted(by_length):
        group = by_length[total]
        for split in range(max(spec.overlap_c, 1), total):
            tails: dict[tuple, dict[tuple, float]] = {}
            for steps in group:
                tails.setdefault(steps[:split], {})[steps[split:]] = values[steps]
            heads = sorted(tails)
            for i, h1 in enumerate(heads):
                for h2 in heads[i + 1:]:
                    common = sorted(tails[h1].keys() & tails[h2].keys())
                    if len(common) < 2:
                        continue
                    v1 = np.array([tails[h1][u] for u in common])
                    v2 = np.array([tails[h2][u] for u in common])
                    d1 = v1[:, None] - v1[None, :]
                    d2 = v2[:, None] - v2[None, :]
                    if strong:
                        bad = np.abs(d1 - d2) > atol
                    else:
                        bad = _sign(d1, atol) != _sign(d2, atol)
                    comparisons += len(common) * (len(common) - 1) // 2
                    if bad.any():
                        p, q = min((p, q) for p, q in zip(*np.nonzero(bad)) if p < q)
                        return PiReport(False, (h1, h2, common[p], common[q]), comparisons)
    return PiReport(True, None, comparisons)


def check_pi_condition(spec: DrmdpSpec, max_len: int | None = None, cap: int = 200_000) -> PiReport:
    """Exhaustively test the past-invariance condition on reachable windows.

    For every split of equal-length windows into (tau, tau'), the order of
    r(tau1 + tau1') vs r(tau1 + tau2') must match that of r(tau2 + tau1') vs
    r(tau2 + tau2'); differences within 1e-12 count as ties on both sides.
    """
    return _pi_scan(spec, max_len, cap, strong=False, atol=TIE_ATOL)


def check_strong_pi_condition(spec: DrmdpSpec, max_len: int | None = None, cap: int = 200_000) -> PiReport:
    """Like :func:`check_pi_condition` but reward differences must match within 1e-9."""
    return _pi_scan(spec, max_len, cap, strong=True, atol=1e-9)


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True, eq=False)
class PolicyS:
    """Phase-indexed policy pi(a | s, t - t_i); ``table`` has shape (S, max_phase, A)."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.ndim != 3:
            raise SpecError("PolicyS table must be (S, phases, A)")
        if np.any(t < 0) or np.any(np.abs(t.sum(axis=2) - 1.0) > PROB_ATOL):
            raise SpecError("PolicyS rows must be probability vectors")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @classmethod
    def uniform(cls, spec: DrmdpSpec) -> "PolicyS":
        t = np.zeros((spec.n_states, spec.max_phase, spec.n_actions))
        for s, acts in enumerate(spec.actions):
            t[s, :, list(acts)] = 1.0 / len(acts)
        return cls(t)

    @classmethod
    def deterministic(cls, spec: DrmdpSpec, choice: np.ndarray) -> "PolicyS":
        """``choice[s, phase]`` is the action taken; must be available at s."""
        choice = np.asarray(choice, dtype=int)
        t = np.zeros((spec.n_states, spec.max_phase, spec.n_actions))
        for s in range(spec.n_states):
            for k in range(spec.max_phase):
                a = int(choice[s, k])
                if a not in spec.actions[s]:
                    raise SpecError(f"action {a} unavailable at state {s}")
                t[s, k, a] = 1.0
        return cls(t)

    @classmethod
    def from_state_probs(cls, spec: DrmdpSpec, probs: Mapping[int, Sequence[float]]) -> "PolicyS":
        """Phase-independent policy; states missing from ``probs`` act uniformly."""
        t = PolicyS.uniform(spec).table.copy()
        for s, p in probs.items():
            t[s, :, :] = np.asarray(p, dtype=float)
        return cls(t)

    def probs(self, s: int, phase: int) -> np.ndarray:
        return self.table[s, phase]

    def greedy_actions(self) -> np.ndarray:
        return self.table.argmax(axis=2)

    def same_as(self, other: "PolicyS") -> bool:
        return self.table.shape == other.table.shape and np.array_equal(self.table, other.table)


@dataclass(frozen=True, eq=False)
class PolicyTau:
    """History-conditioned policy pi(a | tau_{t_i-c:t} + s_t).

    ``table`` maps (history segment, state) to a probability vector over all
    action ids. Missing contexts fall back to uniform over available actions.
    """

    table: Mapping[tuple[TrajectorySegment, int], np.ndarray]
    n_actions: int
    fallback: Mapping[int, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        fixed = {}
        for ctx, p in self.table.items():
            p = np.asarray(p, dtype=float)
            if p.shape != (self.n_actions,) or np.any(p < 0) or abs(p.sum() - 1.0) > PROB_ATOL:
                raise SpecError(f"PolicyTau row for {ctx} is not a probability vector")
            fixed[ctx] = p
        object.__setattr__(self, "table", fixed)

    def probs(self, history: TrajectorySegment, s: int) -> np.ndarray:
        try:
            return self.table[(history, s)]
        except KeyError:
            acts = self.fallback.get(s)
            if not acts:
                raise KeyError((history, s)) from None
            p = np.zeros(self.n_actions)
            p[list(acts)] = 1.0 / len(acts)
            return p


AnyPolicy = Union[PolicyS, PolicyTau]


def action_probs(policy: AnyPolicy, history: TrajectorySegment, s: int) -> np.ndarray:
    """Action distribution for the next step given the current interval history."""
    if isinstance(policy, PolicyS):
        return policy.probs(s, history.body_len)
    return policy.probs(history, s)


# ---------------------------------------------------------------------------
# episodes


@dataclass(frozen=True)
class IntervalRecord:
    segment: TrajectorySegment
    length: int
    reward: float
    truncated: bool = False
    paid: bool = True


@dataclass(frozen=True)
class EpisodeTrace:
    intervals: tuple[IntervalRecord, ...]
    terminated: bool = False
    truncated: bool = False

    @property
    def offsets(self) -> list[int]:
        """Start step t_i of every interval (t_1 = 0)."""
        out, t = [], 0
        for rec in self.intervals:
            out.append(t)
            t += rec.length
        return out

    @property
    def n_steps(self) -> int:
        return sum(rec.length for rec in self.intervals)

    @property
    def unpaid(self) -> bool:
        return any(not rec.paid for rec in self.intervals)

    def steps(self) -> list[Step]:
        return [s for rec in self.intervals for s in rec.segment.body]


def discounted_return(trace: EpisodeTrace, gamma: float) -> float:
    """R(tau, n) = sum_i gamma^(t_{i+1} - 1) r_i, each reward landing on its interval's last step."""
    total, t = 0.0, 0
    for rec in trace.intervals:
        t += rec.length
        total += gamma ** (t - 1) * rec.reward
    return total


def sample_episode(spec: DrmdpSpec, policy: AnyPolicy, rng_seed: int, horizon: int) -> EpisodeTrace:
    """Roll out one episode; deterministic given ``rng_seed``.

    Interval lengths are drawn when an interval starts. An interval cut by
    absorption or by the horizon pays the reward of its truncated segment
    when the reward kind defines one; otherwise it pays 0 and is flagged.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(rng_seed)
    c = spec.overlap_c
    s = int(rng.choice(spec.n_states, p=spec.initial))
    window = initial_prefix(c)
    target_len = spec.interval_law.sample(rng)
    intervals: list[IntervalRecord] = []
    t = 0
    while True:
        p = action_probs(policy, window, s)
        a = int(rng.choice(spec.n_actions, p=p))
        window = window.extend((s, a))
        s_next = int(rng.choice(spec.n_states, p=spec.transition[s, a]))
        t += 1
        absorbed = s_next in spec.terminal
        cut = t >= horizon
        if window.body_len == target_len:
            intervals.append(IntervalRecord(window, target_len, evaluate_reward(spec, window)))
            window = window.overlap_tail(c)
            target_len = spec.interval_law.sample(rng)
        elif absorbed or cut:
            value, paid = truncated_reward(spec, window)
            intervals.append(IntervalRecord(window, window.body_len, value, truncated=True, paid=paid))
        if absorbed or cut:
            return EpisodeTrace(tuple(intervals), terminated=absorbed, truncated=cut and not absorbed)
        s = s_next


